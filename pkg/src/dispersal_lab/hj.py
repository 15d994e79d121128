"""Constrained Hamilton-Jacobi equations in the trait variable.

Stationary problem: |u'|^2 = H, max u = 0. On the circle its viscosity
solution is minus the sqrt(H)-weighted geodesic distance to the minimizer of
H, which we evaluate by quadrature along the two arcs.

Transient problem: u_t - G(theta)|u'|^2 = -H with max u = 0, G = D or 1,
advanced by an explicit Godunov scheme and renormalized by its maximum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelConfig, TraitGrid
from .elliptic import HamiltonianCurve, hamiltonian_curve, solve_fisher_kpp
from .errors import ESSViolation, SolverError

logger = logging.getLogger(__name__)


@dataclass
class PotentialFunction:
    values: np.ndarray
    trait: TraitGrid

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.values))

    def fittest_trait(self) -> float:
        """Argmax refined by the vertex of the parabola through the top three nodes."""
        j = self.argmax_index
        u = self.values
        n = self.trait.n_theta
        h = self.trait.spacing
        if self.trait.periodic:
            um, u0, up = u[(j - 1) % n], u[j], u[(j + 1) % n]
        elif 0 < j < n - 1:
            um, u0, up = u[j - 1], u[j], u[j + 1]
        else:
            return float(self.trait.nodes[j])
        denom = um - 2.0 * u0 + up
        shift = 0.0 if denom >= 0.0 else 0.5 * (um - up) / denom
        shift = min(max(shift, -0.5), 0.5)
        theta = self.trait.nodes[j] + shift * h
        return float(theta % 1.0) if self.trait.periodic else float(theta)


def _curve_values(H) -> tuple[np.ndarray, TraitGrid | None]:
    if isinstance(H, HamiltonianCurve):
        return np.asarray(H.values, float), H.trait
    return np.asarray(H, float), None


def solve_constrained_hj(
    H: HamiltonianCurve | np.ndarray,
    trait: TraitGrid | None = None,
    tol_ess: float = 1e-6,
) -> PotentialFunction:
    """Viscosity solution of |u'|^2 = H with max u = u(theta_m) = 0.

    ``H`` is shifted by its minimum when that minimum is within ``tol_ess`` of
    zero; otherwise the constraint cannot hold and ``ESSViolation`` is raised.
    """
    values, tr = _curve_values(H)
    trait = tr or trait or TraitGrid(len(values), "periodic")
    hmin = float(np.min(values))
    if abs(hmin) > tol_ess:
        raise ESSViolation(f"ESS constraint violated: min H = {hmin:.6g}")
    m = int(np.argmin(values))
    root = np.sqrt(np.maximum(values - hmin, 0.0))
    h = trait.spacing
    n = trait.n_theta
    if trait.periodic:
        order = (m + np.arange(n + 1)) % n
        f = root[order]
        forward = np.concatenate([[0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))])
        # forward[k]: arc length from theta_m to theta_{m+k} going up
        up = forward[:n]
        down = forward[n] - forward[n::-1][:n]
        # down[k]: arc length from theta_m to theta_{m-k} going down
        dist = np.empty(n)
        idx_up = order[:n]
        dist[idx_up] = up
        dist_down = np.empty(n)
        dist_down[(m - np.arange(n)) % n] = down
        dist = np.minimum(dist, dist_down)
        dist[m] = 0.0
    else:
        seg = 0.5 * h * (root[1:] + root[:-1])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        dist = np.abs(cum - cum[m])
    return PotentialFunction(-dist, trait)


def arc_integrals(H: HamiltonianCurve | np.ndarray, trait: TraitGrid | None = None) -> tuple[float, float]:
    """Total sqrt(H) integral around the circle taken upward and downward from theta_m."""
    values, tr = _curve_values(H)
    trait = tr or trait or TraitGrid(len(values), "periodic")
    root = np.sqrt(np.maximum(values - np.min(values), 0.0))
    m = int(np.argmin(values))
    n, h = trait.n_theta, trait.spacing
    up = (m + np.arange(n + 1)) % n
    down = (m - np.arange(n + 1)) % n
    fu, fd = root[up], root[down]
    return (
        float(np.sum(0.5 * h * (fu[1:] + fu[:-1]))),
        float(np.sum(0.5 * h * (fd[1:] + fd[:-1]))),
    )


@dataclass(frozen=True)
class ESSReport:
    min_value: float
    argmin_index: int
    declared_index: int
    value_at_declared: float
    slope_at_declared: float
    tol: float

    @property
    def argmin_matches(self) -> bool:
        return self.argmin_index == self.declared_index

    @property
    def violated(self) -> bool:
        return (
            abs(self.min_value) > self.tol
            or abs(self.value_at_declared) > self.tol
            or abs(self.slope_at_declared) > self.tol
            or not self.argmin_matches
        )


def check_ess(H: HamiltonianCurve, theta_m: float, tol: float = 1e-6) -> ESSReport:
    """How closely min H = 0 = H(theta_m) = H'(theta_m) holds on the grid."""
    values = np.asarray(H.values, float)
    tr = H.trait
    jm = tr.nearest_index(theta_m)
    slope = tr.centered_difference(values)[jm]
    return ESSReport(
        min_value=float(np.min(values)),
        argmin_index=int(np.argmin(values)),
        declared_index=jm,
        value_at_declared=float(values[jm]),
        slope_at_declared=float(slope),
        tol=tol,
    )


def _one_sided(u: np.ndarray, trait: TraitGrid) -> tuple[np.ndarray, np.ndarray]:
    h = trait.spacing
    if trait.periodic:
        back = (u - np.roll(u, 1)) / h
        fwd = (np.roll(u, -1) - u) / h
    else:
        d = np.diff(u) / h
        back = np.concatenate([[0.0], d])
        fwd = np.concatenate([d, [0.0]])
    return back, fwd


def godunov_gradient_sq(u: np.ndarray, trait: TraitGrid) -> np.ndarray:
    """Godunov approximation of |u'|^2 for the concave flux -|p|^2."""
    back, fwd = _one_sided(u, trait)
    return np.maximum(np.minimum(back, 0.0) ** 2, np.maximum(fwd, 0.0) ** 2)


def hj_cfl_limit(u: np.ndarray, trait: TraitGrid, factor: np.ndarray, floor: float = 1e-12) -> float:
    back, fwd = _one_sided(u, trait)
    slope = float(max(np.max(np.abs(back)), np.max(np.abs(fwd))))
    return trait.spacing / (2.0 * float(np.max(np.abs(factor))) * slope + floor)


def step_transient_hj(
    u: PotentialFunction,
    H: HamiltonianCurve | np.ndarray,
    D_samples: np.ndarray | None,
    dt: float,
    renormalize: bool = True,
) -> PotentialFunction:
    """One explicit monotone step of u_t - G|u'|^2 = -H followed by max-subtraction.

    ``D_samples=None`` selects G = 1; otherwise G = D(theta).
    """
    h_values, _ = _curve_values(H)
    trait = u.trait
    G = np.ones(trait.n_theta) if D_samples is None else np.asarray(D_samples, float)
    limit = hj_cfl_limit(u.values, trait, G)
    if dt > limit:
        raise SolverError(f"CFL violated: dt={dt:.3e} exceeds {limit:.3e}")
    new = u.values + dt * (G * godunov_gradient_sq(u.values, trait) - h_values)
    if not trait.periodic:
        new[0], new[-1] = new[1], new[-2]
    if renormalize:
        new = new - np.max(new)
    return PotentialFunction(new, trait)


def canonical_rhs(
    theta_bar: float,
    u: PotentialFunction,
    H: HamiltonianCurve | np.ndarray,
    curvature_floor: float = 1e-2,
) -> float:
    """-(max(-u'', floor))^{-1} H'(theta_bar), differences taken at the nearest node."""
    h_values, _ = _curve_values(H)
    tr = u.trait
    j = tr.nearest_index(theta_bar)
    upp = tr.second_difference(u.values)[j]
    h_theta = tr.centered_difference(h_values)[j]
    return float(-h_theta / max(-upp, curvature_floor))


@dataclass
class TraitTrajectory:
    times: list[float] = field(default_factory=list)
    fittest_trait: list[float] = field(default_factory=list)
    hamiltonian_at_fittest: list[float] = field(default_factory=list)
    slope_at_fittest: list[float] = field(default_factory=list)
    canonical: list[float] = field(default_factory=list)
    weight_profiles: list[np.ndarray] | None = None

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            "t": np.asarray(self.times),
            "theta_bar": np.asarray(self.fittest_trait),
            "H_at_theta_bar": np.asarray(self.hamiltonian_at_fittest),
            "H_theta_at_theta_bar": np.asarray(self.slope_at_fittest),
            "canonical_rhs": np.asarray(self.canonical),
        }


def initial_potential(trait: TraitGrid, theta_0: float, curvature: float) -> PotentialFunction:
    d = trait.distance(trait.nodes, theta_0)
    return PotentialFunction(-0.5 * curvature * d**2, trait)


def quasistatic_dynamics(
    theta_0: float,
    T: float,
    dt: float | None,
    config: ModelConfig,
    keep_profiles: bool = False,
    stall_tol: float = 1e-10,
    stall_steps: int = 100,
) -> TraitTrajectory:
    """Fittest-trait dynamics of the eps -> 0 limit.

    Each step solves the Fisher-KPP weight at D(theta_bar), builds the
    Hamiltonian curve with rho equal to that weight, advances u by one
    transient HJ step and moves theta_bar to the new argmax of u.
    """
    if not 0.0 <= theta_0 < 1.0:
        raise ValueError(f"theta_0 must lie in [0, 1), got {theta_0}")
    tr = config.trait
    solv = config.solver
    grid = config.spatial
    K = config.K_samples
    D = config.D_samples
    G = D if solv.gradient_factor == "D" else None
    u = initial_potential(tr, theta_0, config.run.hj_curvature)
    theta_bar = float(theta_0)
    t = 0.0
    traj = TraitTrajectory(weight_profiles=[] if keep_profiles else None)
    stalled = 0
    cache: dict[float, tuple[np.ndarray, HamiltonianCurve]] = {}
    while True:
        key = round(theta_bar, 14)
        if key not in cache:
            try:
                D_bar = float(config.D(np.array([theta_bar]))[0])
                N_bar = solve_fisher_kpp(D_bar, K, grid, solv.newton_tol, solv.newton_max_iter)
                curve = hamiltonian_curve(N_bar, config, keep_eigenfunctions=False)
            except SolverError as exc:
                raise SolverError(f"quasistatic dynamics at t={t:.6g}: {exc}") from exc
            cache = {key: (N_bar, curve)}
        N_bar, curve = cache[key]
        period = 1.0 if tr.periodic else None
        H_bar = float(np.interp(theta_bar, tr.nodes, curve.values, period=period))
        slope = float(np.interp(theta_bar, tr.nodes, tr.centered_difference(curve.values), period=period))
        traj.times.append(t)
        traj.fittest_trait.append(theta_bar)
        traj.hamiltonian_at_fittest.append(H_bar)
        traj.slope_at_fittest.append(slope)
        traj.canonical.append(canonical_rhs(theta_bar, u, curve, solv.curvature_floor))
        if keep_profiles:
            traj.weight_profiles.append(N_bar.copy())
        if t >= T - 1e-12 or stalled >= stall_steps:
            break
        factor = np.ones(tr.n_theta) if G is None else G
        step = dt if dt is not None else 0.5 * hj_cfl_limit(u.values, tr, factor)
        step = min(step, T - t)
        try:
            u = step_transient_hj(u, curve, G, step)
        except SolverError as exc:
            raise SolverError(f"quasistatic dynamics at t={t:.6g}: {exc}") from exc
        t += step
        new_theta = u.fittest_trait()
        moved = abs(tr.distance(new_theta, theta_bar))
        stalled = stalled + 1 if moved < stall_tol else 0
        theta_bar = new_theta
    return traj


def upwind_residual(u: PotentialFunction, H: HamiltonianCurve | np.ndarray) -> np.ndarray:
    """|u'|^2 - H with one-sided differences taken from the side of theta_m (upwind)."""
    values, _ = _curve_values(H)
    back, fwd = _one_sided(u.values, u.trait)
    grad = np.where(back > 0.0, back, np.where(fwd < 0.0, fwd, 0.0))
    return grad**2 - (values - np.min(values))


def distance_sweep(root: np.ndarray, start: int, trait: TraitGrid, max_sweeps: int = 10000) -> np.ndarray:
    """First-order eikonal solve |T'| = root, T(start) = 0, by alternating Gauss-Seidel sweeps.

    Used as an independent check of the arc-integral formula.
    """
    n, h = trait.n_theta, trait.spacing
    T = np.full(n, math.inf)
    T[start] = 0.0
    for _ in range(max_sweeps):
        old = T.copy()
        for order in (range(n), range(n - 1, -1, -1)):
            for j in order:
                if j == start:
                    continue
                if trait.periodic:
                    nb = min(T[(j - 1) % n], T[(j + 1) % n])
                else:
                    left = T[j - 1] if j > 0 else math.inf
                    right = T[j + 1] if j < n - 1 else math.inf
                    nb = min(left, right)
                T[j] = min(T[j], nb + h * root[j])
        if np.array_equal(old, T):
            break
    return T
