"""Diagnostics for the small-eps limit of the steady model.

Measures how far a computed steady state is from its limit
N_m(x) delta(theta - theta_m): log-scale potential u_eps = eps ln n, the
integrated steady identity, the eps-convergence table and the corrector
factorization n ~ rho_bar N(x, theta) W_eps(theta).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ModelConfig, integrate_trait, trait_moments
from .elliptic import hamiltonian_curve, solve_fisher_kpp, trait_eigenpair
from .errors import DispersalLabError, SolverError
from .hj import solve_constrained_hj
from .parabolic import SimState, run_to_steady

logger = logging.getLogger(__name__)

THREADS_ENV = "DISPERSAL_LAB_THREADS"


def u_eps(n: np.ndarray, epsilon: float) -> np.ndarray:
    """eps * ln n, nodewise."""
    return epsilon * np.log(np.asarray(n, dtype=float))


def env_workers() -> int | None:
    """Worker cap from DISPERSAL_LAB_THREADS; None (serial) when unset or invalid."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    try:
        count = int(raw)
    except ValueError:
        return None
    return count if count > 1 else None


@dataclass(frozen=True)
class RhoReport:
    min_rho: float
    max_rho: float
    ceiling: float
    identity_defect: float
    rho_sq_integral: float
    mass: float

    @property
    def relative_defect(self) -> float:
        return self.identity_defect / self.rho_sq_integral if self.rho_sq_integral > 0 else math.inf

    @property
    def nonnegative(self) -> bool:
        return self.min_rho >= 0.0

    @property
    def below_ceiling(self) -> bool:
        return self.max_rho <= self.ceiling

    @property
    def positive_mass(self) -> bool:
        return self.mass > 0.0


def check_rho_identities(steady: SimState, config: ModelConfig, margin: float = 0.01) -> RhoReport:
    """min rho, max rho against max K (1 + margin), |int rho K - int rho^2| and int rho."""
    sp = config.spatial
    rho = integrate_trait(steady.n, config.trait)
    K = config.K_samples
    return RhoReport(
        min_rho=float(np.min(rho)),
        max_rho=float(np.max(rho)),
        ceiling=float(np.max(K)) * (1.0 + margin),
        identity_defect=float(abs(sp.integrate(rho * K) - sp.integrate(rho**2))),
        rho_sq_integral=float(sp.integrate(rho**2)),
        mass=float(sp.integrate(rho)),
    )


@dataclass
class AsymptoticReport:
    epsilon: float
    max_u_eps: float
    lipschitz_theta: float
    lipschitz_x_scaled: float
    rho_error: float
    u_error: float
    trait_mean: float
    trait_stddev: float
    x_oscillation: float
    argmax_index: int
    state: SimState | None = field(default=None, repr=False, compare=False)

    COLUMNS = (
        "epsilon",
        "max_u_eps",
        "lipschitz_theta",
        "lipschitz_x_scaled",
        "rho_error",
        "u_error",
        "trait_mean",
        "trait_stddev",
        "x_oscillation",
        "argmax_index",
    )

    def row(self) -> list[float]:
        return [float(getattr(self, c)) for c in self.COLUMNS]


class StudyError(SolverError):
    """A case of a convergence study failed; ``partial`` holds the finished rows."""

    def __init__(self, message: str, partial: list[AsymptoticReport]):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class LimitReference:
    """The eps -> 0 objects every case is compared against."""

    N_m: np.ndarray
    D_m: float
    u: np.ndarray


def limit_reference(config: ModelConfig) -> LimitReference:
    """N_m at D_m = min sampled D, and u solving the constrained HJ with H(., N_m)."""
    solv = config.solver
    D_m = float(np.min(config.D_samples))
    N_m = solve_fisher_kpp(D_m, config.K_samples, config.spatial, solv.newton_tol, solv.newton_max_iter)
    curve = hamiltonian_curve(N_m, config, keep_eigenfunctions=False)
    u = solve_constrained_hj(curve, tol_ess=solv.tol_ess)
    return LimitReference(N_m, D_m, u.values)


def asymptotic_report(state: SimState, config: ModelConfig, reference: LimitReference) -> AsymptoticReport:
    eps = config.epsilon
    sp, tr = config.spatial, config.trait
    u = u_eps(state.n, eps)
    u_bar = sp.integrate(u, axis=0) / sp.length
    rho = integrate_trait(state.n, tr)
    back = (u - np.roll(u, 1, axis=1)) / tr.spacing
    grad_x = np.diff(u, axis=0) / sp.spacing
    moments = trait_moments(state.n, sp, tr)
    return AsymptoticReport(
        epsilon=eps,
        max_u_eps=float(np.max(u_bar)),
        lipschitz_theta=float(np.max(np.abs(back))),
        lipschitz_x_scaled=float(np.max(np.abs(grad_x)) / math.sqrt(eps)),
        rho_error=float(np.max(np.abs(rho - reference.N_m))),
        u_error=float(np.max(np.abs(u_bar - reference.u))),
        trait_mean=moments.mean_trait,
        trait_stddev=moments.trait_stddev,
        x_oscillation=float(np.max(np.ptp(u, axis=0))),
        argmax_index=int(np.argmax(u_bar)),
        state=state,
    )


def convergence_study(
    config: ModelConfig,
    epsilons=None,
    workers: int | None = None,
    keep_states: bool = False,
) -> list[AsymptoticReport]:
    """Steady state and limit diagnostics for each eps, in the order given.

    ``workers`` defaults to the DISPERSAL_LAB_THREADS cap. When a case fails,
    ``StudyError`` is raised with the rows computed before it.
    """
    epsilons = tuple(config.run.epsilons if epsilons is None else epsilons)
    if len(epsilons) < 3:
        raise ValueError("a convergence study needs at least three eps values")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError(f"eps values must be strictly decreasing, got {epsilons}")
    reference = limit_reference(config)
    workers = env_workers() if workers is None else workers

    def one(eps):
        cfg = config.with_epsilon(eps)
        state = run_to_steady(cfg)
        rep = asymptotic_report(state, cfg, reference)
        logger.info("eps=%g rho_error=%.4g stddev=%.4g", eps, rep.rho_error, rep.trait_stddev)
        if not keep_states:
            rep.state = None
        return rep

    reports: list[AsymptoticReport] = []
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, eps) for eps in epsilons]
            for eps, fut in zip(epsilons, futures):
                try:
                    reports.append(fut.result())
                except DispersalLabError as exc:
                    raise StudyError(f"eps={eps:g}: {exc}", reports) from exc
        return reports
    for eps in epsilons:
        try:
            reports.append(one(eps))
        except DispersalLabError as exc:
            raise StudyError(f"eps={eps:g}: {exc}", reports) from exc
    return reports


@dataclass(frozen=True)
class CorrectorReport:
    window_nodes: int
    v_max: float
    v_min: float
    rho_bar: float
    fit_residual: float
    trait_eigenvalue: float

    @property
    def ratio(self) -> float:
        return self.v_max / self.v_min


def corrector_check(
    steady: SimState,
    config: ModelConfig,
    half_width: float = 0.1,
) -> CorrectorReport:
    """Boundedness of v = n / W_eps near theta_m and its fit by rho_bar * N(x, theta).

    W_eps is the max-normalized trait eigenfunction for H(., rho_eps) and N the
    spatial eigenfunctions of that same curve. The fit residual is relative,
    ||v - rho_bar N|| / ||v|| in the quadrature norm over the window.
    """
    tr, sp = config.trait, config.spatial
    window = np.flatnonzero(tr.distance(tr.nodes, config.theta_m) <= half_width + 1e-12)
    if window.size == 0:
        raise ValueError("corrector window around theta_m contains no trait nodes")
    rho = integrate_trait(steady.n, tr)
    curve = hamiltonian_curve(rho, config)
    pair = trait_eigenpair(curve, config.epsilon)
    v = steady.n[:, window] / pair.eigenfunction[window]
    N = curve.eigenfunctions[window].T
    w = np.outer(sp.weights, tr.weights[window])
    rho_bar = float(np.sum(w * v * N) / np.sum(w * N * N))
    misfit = v - rho_bar * N
    resid = math.sqrt(float(np.sum(w * misfit**2)) / float(np.sum(w * v**2)))
    return CorrectorReport(
        window_nodes=int(window.size),
        v_max=float(np.max(v)),
        v_min=float(np.min(v)),
        rho_bar=rho_bar,
        fit_residual=resid,
        trait_eigenvalue=pair.eigenvalue,
    )
