import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dispersal_lab.linalg import (
    FactoredTridiagonal,
    cyclic_matvec,
    solve_cyclic_tridiagonal,
    solve_tridiagonal,
    tridiagonal_matvec,
)


def dense(lower, diag, upper):
    return np.diag(diag) + np.diag(lower, -1) + np.diag(upper, 1)


def dominant(r, n):
    lower, upper = r.normal(size=n - 1), r.normal(size=n - 1)
    diag = 4.0 + np.abs(r.normal(size=n))
    return lower, diag, upper


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 40))
def test_tridiagonal_matches_dense(seed, n):
    r = np.random.default_rng(seed)
    lower, diag, upper = dominant(r, n)
    b = r.normal(size=n)
    x = solve_tridiagonal(lower, diag, upper, b)
    np.testing.assert_allclose(dense(lower, diag, upper) @ x, b, atol=1e-10)
    np.testing.assert_allclose(FactoredTridiagonal(lower, diag, upper).solve(b), x, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 40))
def test_cyclic_matches_dense(seed, n):
    r = np.random.default_rng(seed)
    lower, diag, upper = dominant(r, n)
    cl, cu = r.normal(), r.normal()
    A = dense(lower, diag, upper)
    A[-1, 0], A[0, -1] = cl, cu
    b = r.normal(size=n)
    x = solve_cyclic_tridiagonal(lower, diag, upper, cl, cu, b)
    np.testing.assert_allclose(A @ x, b, atol=1e-10)
    np.testing.assert_allclose(cyclic_matvec(lower, diag, upper, cl, cu, x), A @ x, atol=1e-12)


def test_matvec(rng):
    lower, diag, upper = dominant(rng, 9)
    x = rng.normal(size=9)
    np.testing.assert_allclose(tridiagonal_matvec(lower, diag, upper, x), dense(lower, diag, upper) @ x)


def test_multiple_right_hand_sides(rng):
    lower, diag, upper = dominant(rng, 12)
    B = rng.normal(size=(12, 3))
    X = solve_tridiagonal(lower, diag, upper, B)
    np.testing.assert_allclose(dense(lower, diag, upper) @ X, B, atol=1e-10)
