"""Time-dependent model eps n_t = D(theta) n_xx + eps^2 n_thth + n (K - rho).

Each step treats theta-diffusion and reaction explicitly at the old time
level, then solves a backward-Euler problem in x for every trait column.
All columns share one banded system, factored once per (config, dt).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelConfig, TraitMoments, integrate_trait, trait_marginal, trait_moments
from .errors import PositivityError, SolverError
from .linalg import FactoredTridiagonal, solve_tridiagonal

logger = logging.getLogger(__name__)

SAFETY = 0.9


@dataclass
class SimState:
    n: np.ndarray
    t: float = 0.0
    step_count: int = 0

    def copy(self) -> "SimState":
        return SimState(self.n.copy(), self.t, self.step_count)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    reaction_treatment: str = "semi_implicit"

    def __post_init__(self):
        if self.reaction_treatment not in ("explicit", "semi_implicit"):
            raise ValueError(f"unknown reaction treatment {self.reaction_treatment!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def stable_dt(config: ModelConfig) -> float:
    """0.9 * min(dtheta^2 / (2 eps), eps / (2 max K))."""
    eps = config.epsilon
    h = config.trait.spacing
    return SAFETY * min(h * h / (2.0 * eps), eps / (2.0 * float(np.max(config.K_samples))))


def default_stepper(config: ModelConfig) -> StepperConfig:
    dt = config.solver.dt if config.solver.dt is not None else stable_dt(config)
    return StepperConfig(dt, config.solver.reaction)


def _interior(config: ModelConfig) -> tuple[slice, slice]:
    return config.spatial.active, config.trait.active


def _column_bands(config: ModelConfig, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bands of I - (dt D_j / eps) Lap_x for every trait column, stacked end to end."""
    sp, tr = config.spatial, config.trait
    nx, nt = sp.n_x, tr.n_theta
    lo, di, up = sp.neg_laplacian_bands()
    c = dt * np.clip(config.D_samples, 0.0, None) / config.epsilon
    if sp.bc == "dirichlet":
        # full-length column with identity rows at the pinned ends
        h2 = sp.spacing**2
        di = np.concatenate([[0.0], di, [0.0]])
        lo = np.full(nx - 1, -1.0 / h2)
        up = np.full(nx - 1, -1.0 / h2)
        lo[-1] = 0.0
        up[0] = 0.0
    diag = (1.0 + np.outer(c, di)).ravel()
    lower = np.zeros(nt * nx - 1)
    upper = np.zeros(nt * nx - 1)
    for j in range(nt):
        base = j * nx
        lower[base : base + nx - 1] = c[j] * lo
        upper[base : base + nx - 1] = c[j] * up
    return lower, diag, upper


class Stepper:
    """One time step for a fixed config and dt.

    ``explicit`` reuses a single factorization of the x-operator.
    ``semi_implicit`` moves the destruction term n*rho (rho at the old level)
    into the x-solve, a Patankar-type weighting that keeps the solve an
    M-matrix, so positivity needs only the theta-diffusion bound and the
    discrete steady equation is an exact fixed point.
    """

    def __init__(self, config: ModelConfig, stepper: StepperConfig):
        self.config = config
        self.settings = stepper
        self.K = config.K_samples[:, None]
        self._lower, self._diag, self._upper = _column_bands(config, stepper.dt)
        self._pinned_x = config.spatial.bc == "dirichlet"
        if stepper.reaction_treatment == "explicit":
            self._factored = FactoredTridiagonal(self._lower, self._diag, self._upper)
        else:
            self._factored = None

    def __call__(self, state: SimState) -> SimState:
        cfg = self.config
        eps = cfg.epsilon
        dt = self.settings.dt
        n = state.n
        rho = integrate_trait(n, cfg.trait)
        mutation = eps * eps * cfg.trait.laplacian(n, axis=1)
        if self._factored is not None:
            star = n + (dt / eps) * (mutation + n * (self.K - rho[:, None]))
        else:
            star = n + (dt / eps) * (mutation + n * self.K)
        if cfg.trait.bc == "dirichlet":
            star[:, 0] = star[:, -1] = 0.0
        if self._pinned_x:
            star[0, :] = star[-1, :] = 0.0
        rhs = star.T.ravel()
        if self._factored is not None:
            flat = self._factored.solve(rhs)
        else:
            sink = (dt / eps) * rho
            if self._pinned_x:
                sink = sink.copy()
                sink[0] = sink[-1] = 0.0
            diag = self._diag + np.tile(sink, cfg.trait.n_theta)
            flat = solve_tridiagonal(self._lower, diag, self._upper, rhs)
        new = flat.reshape(n.shape[1], n.shape[0]).T
        if self._pinned_x:
            new[0, :] = new[-1, :] = 0.0
        ix, it = _interior(cfg)
        inner = new[ix, it]
        if not np.all(inner > 0.0) or not np.all(np.isfinite(inner)):
            raise PositivityError(
                f"positivity lost at t={state.t + dt:.6g} (min {np.min(inner):.3e}); "
                f"reduce dt (dt={dt:.3e})"
            )
        return SimState(new, state.t + dt, state.step_count + 1)


def step(state: SimState, config: ModelConfig, stepper: StepperConfig) -> SimState:
    """One time step. Builds the x-factorization each call; use ``Stepper`` in loops."""
    return Stepper(config, stepper)(state)


def initial_density(config: ModelConfig, center: float | None = None, width: float | None = None) -> np.ndarray:
    """n0(x, theta) = K(x) G(theta), G a unit-mass bump centered at ``center``."""
    tr, sp = config.trait, config.spatial
    center = config.run.theta_0 if center is None else center
    width = config.run.bump_width if width is None else width
    d = tr.distance(tr.nodes, center)
    G = np.exp(-0.5 * (d / width) ** 2)
    if not tr.periodic:
        G[0] = G[-1] = 0.0
    G = G / float(np.sum(G * tr.weights))
    n0 = np.outer(config.K_samples, G)
    if sp.bc == "dirichlet":
        n0[0, :] = n0[-1, :] = 0.0
    return n0


@dataclass
class Snapshot:
    t: float
    step_count: int
    n: np.ndarray
    rho: np.ndarray
    marginal: np.ndarray
    moments: TraitMoments


def snapshot(state: SimState, config: ModelConfig) -> Snapshot:
    return Snapshot(
        t=state.t,
        step_count=state.step_count,
        n=state.n.copy(),
        rho=integrate_trait(state.n, config.trait),
        marginal=trait_marginal(state.n, config.spatial),
        moments=trait_moments(state.n, config.spatial, config.trait),
    )


def run_transient(
    config: ModelConfig,
    n0: np.ndarray,
    T: float,
    sample_every: int | None = None,
    sample_times: tuple[float, ...] = (),
    stepper: StepperConfig | None = None,
) -> list[Snapshot]:
    """Integrate to time T, recording snapshots every ``sample_every`` steps
    and at the first step reaching each of ``sample_times``.
    The initial and final states are always recorded.
    """
    stepper = stepper or default_stepper(config)
    advance = Stepper(config, stepper)
    state = SimState(np.array(n0, dtype=float))
    out = [snapshot(state, config)]
    pending = sorted(t for t in sample_times if 0.0 < t < T)
    nsteps = int(math.ceil(T / stepper.dt - 1e-9))
    for k in range(1, nsteps + 1):
        try:
            state = advance(state)
        except SolverError as exc:
            raise SolverError(f"transient run failed at t={state.t:.6g}: {exc}") from exc
        hit = False
        while pending and state.t >= pending[0] - 1e-12:
            pending.pop(0)
            hit = True
        if k == nsteps or hit or (sample_every and k % sample_every == 0):
            out.append(snapshot(state, config))
    return out


def steady_residual(n: np.ndarray, config: ModelConfig) -> float:
    """max |D n_xx + eps^2 n_thth + n (K - rho)| / (eps max n) on the unknown nodes."""
    eps = config.epsilon
    rho = integrate_trait(n, config.trait)[:, None]
    lap_x = config.spatial.laplacian(n) * config.D_samples[None, :]
    r = lap_x + eps * eps * config.trait.laplacian(n, axis=1) + n * (config.K_samples[:, None] - rho)
    ix, it = _interior(config)
    return float(np.max(np.abs(r[ix, it])) / (eps * np.max(n)))


def run_to_steady(
    config: ModelConfig,
    n0: np.ndarray | None = None,
    residual_tol: float | None = None,
    stepper: StepperConfig | None = None,
    max_time: float | None = None,
) -> SimState:
    """Integrate until max |n_new - n_old| / (dt max n) < residual_tol."""
    if config.spatial.bc != "neumann" or not config.trait.periodic:
        raise ValueError("run_to_steady is posed with Neumann x and periodic theta")
    tol = config.solver.steady_tol if residual_tol is None else residual_tol
    max_time = config.solver.max_time if max_time is None else max_time
    stepper = stepper or default_stepper(config)
    advance = Stepper(config, stepper)
    state = SimState(initial_density(config) if n0 is None else np.array(n0, dtype=float))
    dt = stepper.dt
    change = math.inf
    while state.t < max_time:
        new = advance(state)
        change = float(np.max(np.abs(new.n - state.n)) / (dt * np.max(new.n)))
        state = new
        if change < tol:
            logger.info("steady after t=%.4g (%d steps)", state.t, state.step_count)
            return state
    raise SolverError(f"no steady state by t={max_time:g}", change)
