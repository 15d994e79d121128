"""Stationary problems in x: the Fisher-KPP weight, the effective Hamiltonian
H(theta, rho) as a principal eigenvalue, and the trait eigenproblem for W_eps.

The spatial operators are tridiagonal. With Neumann ghosts the discrete
Laplacian is self-adjoint in the trapezoid inner product, so the
eigenproblem is symmetrized by the square root of the quadrature weights and
all integrals below are exact discrete identities.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh, eigvalsh_tridiagonal

from .core import ModelConfig, SpatialGrid, TraitGrid
from .errors import SolverError
from .linalg import (
    cyclic_matvec,
    solve_cyclic_tridiagonal,
    solve_tridiagonal,
    tridiagonal_matvec,
)

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass
class EigenPair:
    eigenfunction: np.ndarray
    eigenvalue: float
    residual: float
    iterations: int


@dataclass
class HamiltonianCurve:
    """H(theta_j, rho) over the trait grid, with the data needed to check its bounds."""

    values: np.ndarray
    trait: TraitGrid
    rho_mean: float
    k_max: float
    eigenfunctions: np.ndarray | None = field(default=None, repr=False)

    @property
    def argmin_index(self) -> int:
        return int(np.argmin(self.values))

    @property
    def theta(self) -> np.ndarray:
        return self.trait.nodes

    def bound_violation(self) -> float:
        """Largest amount by which -K_M <= H <= mean(rho) is violated (<= 0 when it holds)."""
        low = np.max(-self.k_max - self.values)
        high = np.max(self.values - self.rho_mean)
        return float(max(low, high))

    def shifted(self, offset: float) -> "HamiltonianCurve":
        return HamiltonianCurve(
            self.values + offset, self.trait, self.rho_mean, self.k_max, self.eigenfunctions
        )


@dataclass
class TraitEigenPair:
    eigenfunction: np.ndarray
    eigenvalue: float
    residual: float
    iterations: int

    def log_potential(self, epsilon: float) -> np.ndarray:
        """w_eps = eps ln W_eps, with max w_eps = 0 by the max-normalization."""
        return epsilon * np.log(self.eigenfunction)


def _symmetrized(grid: SpatialGrid, D_value: float, potential: np.ndarray):
    """Bands of S A S^{-1} for A = -D Lap - diag(potential), S = sqrt(weights)."""
    lo, di, up = grid.neg_laplacian_bands()
    s = np.sqrt(grid.weights[grid.active])
    diag = D_value * di - potential
    off_up = D_value * up * s[:-1] / s[1:]
    off_lo = D_value * lo * s[1:] / s[:-1]
    off = 0.5 * (off_up + off_lo)
    return diag, off, s


def _lower_shift(diag: np.ndarray, off: np.ndarray) -> float:
    """A shift just below the smallest eigenvalue of a symmetric tridiagonal matrix.

    The eigenvalue is located by LAPACK bisection; the margin keeps the
    shifted matrix positive definite without slowing inverse iteration.
    """
    low = float(eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0])
    scale = float(np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off), initial=0.0))
    return low - 1e-8 * (1.0 + scale)


def _inverse_iteration(solve, matvec, diag, off_norm, y, tol, max_iter, what, sigma):
    """Inverse iteration with a fixed shift just below the smallest eigenvalue.

    The shifted matrix stays an M-matrix, so a positive iterate stays positive
    even where the eigenvector is exponentially small. Rayleigh-quotient shifts
    can land above the eigenvalue and flip the sign of those tails.
    """
    scale = float(np.max(np.abs(diag) + off_norm))
    floor = 256.0 * _EPS * scale
    y = y / np.linalg.norm(y)
    mu = float(y @ matvec(y))
    res = np.inf
    best = (np.inf, y, mu)
    for it in range(1, max_iter + 1):
        try:
            z = solve(sigma, y)
        except (np.linalg.LinAlgError, ValueError):
            z = None
        if z is None or not np.all(np.isfinite(z)):
            sigma -= 1e3 * _EPS * (1.0 + abs(sigma))
            continue
        y = z / np.linalg.norm(z)
        Ay = matvec(y)
        mu = float(y @ Ay)
        res = float(np.max(np.abs(Ay - mu * y)))
        if res < best[0]:
            best = (res, y, mu)
        if res < max(tol, floor):
            return y, mu, res, it
    res, y, mu = best
    if res < max(tol, floor) * 10.0:
        return y, mu, res, max_iter
    raise SolverError(f"{what}: inverse iteration did not converge in {max_iter} iterations", res)


def principal_eigenpair(
    theta_index: int,
    rho: np.ndarray,
    D_samples: np.ndarray,
    K: np.ndarray,
    grid: SpatialGrid,
    tol: float = 1e-10,
    max_iter: int = 500,
    warm_start: np.ndarray | None = None,
) -> EigenPair:
    """Principal eigenpair (N, H) of -D(theta) N'' = N (K - rho) + N H.

    The eigenfunction is positive, satisfies the grid's boundary condition and
    is normalized by the discrete int N^2 dx = 1.
    """
    D_value = float(np.asarray(D_samples)[theta_index])
    return _principal(D_value, np.asarray(rho, float), np.asarray(K, float), grid, tol, max_iter, warm_start)


def _principal(D_value, rho, K, grid, tol, max_iter, warm_start=None) -> EigenPair:
    act = grid.active
    potential = (K - rho)[act]
    diag, off, s = _symmetrized(grid, D_value, potential)
    off_norm = np.zeros_like(diag)
    off_norm[:-1] += np.abs(off)
    off_norm[1:] += np.abs(off)

    def matvec(y):
        return tridiagonal_matvec(off, diag, off, y)

    def solve(sigma, y):
        return solve_tridiagonal(off, diag - sigma, off, y)

    if warm_start is not None:
        y0 = np.abs(np.asarray(warm_start, float)[act]) * s + 1e-12
    else:
        y0 = s.copy()
    y, mu, res_y, iters = _inverse_iteration(
        solve,
        matvec,
        diag,
        off_norm,
        y0,
        tol,
        max_iter,
        f"principal eigenpair (D={D_value:.6g})",
        sigma=_lower_shift(diag, off),
    )
    N_act = y / s
    if np.sum(N_act) < 0:
        N_act = -N_act
    if np.min(N_act) <= 0.0:
        raise SolverError(f"principal eigenpair (D={D_value:.6g}): eigenfunction not positive")
    N = np.zeros(grid.n_x)
    N[act] = N_act
    # residual of the unsymmetrized equation, in the eigenfunction's own scaling
    lo, di, up = grid.neg_laplacian_bands()
    AN = D_value * tridiagonal_matvec(lo, di, up, N_act) - potential * N_act
    residual = float(np.max(np.abs(AN - mu * N_act)))
    return EigenPair(N, mu, residual, iters)


def _neumann(grid: SpatialGrid) -> SpatialGrid:
    """H is defined by the no-flux eigenproblem whatever the simulation's x boundary."""
    return grid if grid.bc == "neumann" else replace(grid, bc="neumann")


def hamiltonian_curve(
    rho: np.ndarray,
    config: ModelConfig,
    warm_start: bool = True,
    keep_eigenfunctions: bool = True,
    workers: int | None = None,
) -> HamiltonianCurve:
    """Principal eigenvalue H(theta_j, rho) at every trait node.

    The eigenproblem always has no-flux ends in x, also for a Dirichlet
    ``config.spatial``, so -max K <= H <= mean(rho) holds. Sequential evaluation warm-starts each node from its neighbour; with
    ``workers > 1`` nodes are solved independently from cold starts. Trait
    nodes where D <= 0 (the pinned ends of a Dirichlet trait grid) are filled
    by linear extrapolation.
    """
    grid = _neumann(config.spatial)
    rho = np.asarray(rho, float)
    K = config.K_samples
    D = config.D_samples
    tr = config.trait
    solv = config.solver
    n = tr.n_theta
    values = np.full(n, np.nan)
    eigf = np.zeros((n, grid.n_x)) if keep_eigenfunctions else None
    good = np.flatnonzero(D > 0.0)

    def one(j, guess):
        try:
            return _principal(D[j], rho, K, grid, solv.eig_tol, solv.eig_max_iter, guess)
        except SolverError as exc:
            raise SolverError(f"trait node {j} (theta={tr.nodes[j]:.6g}): {exc}") from exc

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(lambda j: one(j, None), good))
    else:
        pairs = []
        prev = None
        for j in good:
            pair = one(j, prev if warm_start else None)
            prev = pair.eigenfunction
            pairs.append(pair)
    for j, pair in zip(good, pairs):
        values[j] = pair.eigenvalue
        if eigf is not None:
            eigf[j] = pair.eigenfunction
    bad = np.flatnonzero(~(D > 0.0))
    for j in bad:
        # only reachable at the ends of a Dirichlet trait grid
        k1, k2 = (j + 1, j + 2) if j == 0 else (j - 1, j - 2)
        values[j] = 2.0 * values[k1] - values[k2]
        if eigf is not None:
            eigf[j] = eigf[k1]
    return HamiltonianCurve(
        values=values,
        trait=tr,
        rho_mean=float(grid.integrate(rho) / grid.length),
        k_max=float(np.max(K)),
        eigenfunctions=eigf,
    )


@dataclass(frozen=True)
class SlopeIdentity:
    lhs: float
    rhs: float

    @property
    def relative_error(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), 1e-8)


def hamiltonian_slope_identity(
    theta_index: int,
    rho: np.ndarray,
    config: ModelConfig,
    curve: HamiltonianCurve | None = None,
) -> SlopeIdentity:
    """Both sides of D'(theta) int |N_x|^2 dx = dH/dtheta at a trait node.

    lhs uses the eigenfunction at theta; rhs is the centered difference of H.
    """
    tr = config.trait
    j = int(theta_index)
    D = config.D_samples
    if not config.D.has_derivative:
        left, right = D[(j - 1) % tr.n_theta], D[(j + 1) % tr.n_theta]
        if (left - D[j]) * (right - D[j]) >= 0.0:
            raise ValueError(
                f"trait node {j} is not inside a monotone segment of the sampled D"
            )
    if not tr.periodic and not 0 < j < tr.n_theta - 1:
        raise ValueError("slope identity needs an interior trait node")
    dprime = float(config.D_derivative_samples()[j])
    solv = config.solver
    K = config.K_samples
    grid = _neumann(config.spatial)
    idx = [(j - 1) % tr.n_theta, j, (j + 1) % tr.n_theta]
    if curve is not None and curve.eigenfunctions is not None:
        H = curve.values[idx]
        N = curve.eigenfunctions[j]
    else:
        pairs = [_principal(D[k], rho, K, grid, solv.eig_tol, solv.eig_max_iter) for k in idx]
        H = np.array([p.eigenvalue for p in pairs])
        N = pairs[1].eigenfunction
    lhs = dprime * grid.grad_sq_integral(N)
    rhs = (H[2] - H[0]) / (2.0 * tr.spacing)
    return SlopeIdentity(float(lhs), float(rhs))


def rayleigh_quotient(N: np.ndarray, D_value: float, rho: np.ndarray, K: np.ndarray, grid: SpatialGrid) -> float:
    """D int |N'|^2 - int N^2 (K - rho), divided by int N^2."""
    num = D_value * grid.grad_sq_integral(N) - grid.integrate(N**2 * (K - rho))
    return float(num / grid.integrate(N**2))


def fisher_kpp_residual(N: np.ndarray, D_value: float, K: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """-D N'' - N (K - N) on the active nodes."""
    act = grid.active
    lo, di, up = grid.neg_laplacian_bands()
    Na = N[act]
    return D_value * tridiagonal_matvec(lo, di, up, Na) - Na * (K[act] - Na)


def solve_fisher_kpp(
    D_value: float,
    K: np.ndarray,
    grid: SpatialGrid,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> np.ndarray:
    """Positive solution of -D N'' = N (K - N) by damped Newton from N = K.

    Falls back to semi-implicit pseudo-time marching when a Newton step cannot
    reduce the residual within 30 halvings. ``tol`` is raised to the rounding
    floor of the residual when D / h^2 is very large.
    """
    K = np.asarray(K, float)
    if not D_value > 0:
        raise ValueError(f"D_value must be positive, got {D_value}")
    act = grid.active
    lo, di, up = grid.neg_laplacian_bands()
    N = K.copy()
    if grid.bc == "dirichlet":
        N[0] = N[-1] = 0.0
    Ka = K[act]

    def resid(Na):
        return D_value * tridiagonal_matvec(lo, di, up, Na) - Na * (Ka - Na)

    # rounding floor of the residual evaluation for stiff (large D / h^2) problems
    k_max = float(np.max(np.abs(Ka)))
    tol = max(tol, 8.0 * _EPS * (D_value * float(np.max(di)) + k_max) * k_max)
    Na = N[act].copy()
    F = resid(Na)
    rnorm = float(np.max(np.abs(F)))
    marched = 0
    for _ in range(max_iter):
        if rnorm < tol:
            break
        delta = solve_tridiagonal(D_value * lo, D_value * di - Ka + 2.0 * Na, D_value * up, -F)
        lam = 1.0
        for _halving in range(31):
            trial = Na + lam * delta
            Ft = resid(trial)
            tnorm = float(np.max(np.abs(Ft)))
            if tnorm < rnorm and np.all(trial > 0.0):
                break
            lam *= 0.5
        else:
            if marched > 20:
                raise SolverError("Fisher-KPP solve stagnated", rnorm)
            Na = _pseudo_time(Na, Ka, D_value, lo, di, up)
            marched += 1
            F = resid(Na)
            rnorm = float(np.max(np.abs(F)))
            continue
        Na, F, rnorm = trial, Ft, tnorm
    if rnorm >= tol:
        raise SolverError("Fisher-KPP Newton did not converge", rnorm)
    N[act] = Na
    return N


def _pseudo_time(Na, Ka, D_value, lo, di, up, steps: int = 200):
    """Linearly implicit relaxation (N+ - N)/tau = D N+'' + K N - N N+; keeps N > 0."""
    tau = 1.0 / max(float(np.max(Ka)), 1.0)
    for _ in range(steps):
        Na = solve_tridiagonal(D_value * lo, 1.0 / tau + D_value * di + Na, D_value * up, Na / tau + Ka * Na)
    return Na


def trait_eigenpair(
    H: HamiltonianCurve | np.ndarray,
    epsilon: float,
    trait: TraitGrid | None = None,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> TraitEigenPair:
    """Principal eigenpair of -eps^2 W'' + H W = lambda W on the periodic trait grid.

    W is positive and normalized to max W = 1.
    """
    if isinstance(H, HamiltonianCurve):
        trait = H.trait
        values = H.values
    else:
        values = np.asarray(H, float)
        if trait is None:
            trait = TraitGrid(len(values), "periodic")
    if not trait.periodic:
        raise ValueError("trait eigenproblem is posed on the periodic trait grid")
    if not np.all(np.isfinite(values)):
        raise ValueError("H must be finite")
    n = trait.n_theta
    c = epsilon**2 / trait.spacing**2
    diag = 2.0 * c + values
    off = np.full(n - 1, -c)
    off_norm = np.full(n, 2.0 * c)

    def matvec(y):
        return cyclic_matvec(off, diag, off, -c, -c, y)

    def solve(sigma, y):
        return solve_cyclic_tridiagonal(off, diag - sigma, off, -c, -c, y)

    # the cyclic matrix is not tridiagonal; locate its lowest eigenvalue densely
    dense = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    dense[0, -1] += -c
    dense[-1, 0] += -c
    low = float(eigh(dense, eigvals_only=True, subset_by_index=[0, 0])[0])
    sigma = low - 1e-8 * (1.0 + float(np.max(np.abs(diag) + off_norm)))
    y, mu, _res, iters = _inverse_iteration(
        solve, matvec, diag, off_norm, np.ones(n), tol, max_iter, "trait eigenpair", sigma
    )
    if np.sum(y) < 0:
        y = -y
    W = y / np.max(y)
    if np.min(W) <= 0.0:
        raise SolverError("trait eigenpair: eigenfunction not positive")
    residual = float(np.max(np.abs(matvec(W) - mu * W)))
    return TraitEigenPair(W, mu, residual, iters)
