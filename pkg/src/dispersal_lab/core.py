"""Grids, model configuration, validation and trait-space quadrature.

Densities are plain arrays of shape ``(n_x, n_theta)`` indexed by
(spatial node, trait node). Spatial profiles (rho, N_m, eigenfunctions) are
arrays of shape ``(n_x,)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import DegenerateDensityError
from .profiles import Preset, Sampled

Profile = Union[Preset, Sampled]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform nodes on [0, length], both endpoints included."""

    length: float = 1.0
    n_x: int = 100
    bc: str = "neumann"

    def __post_init__(self):
        if self.bc not in ("neumann", "dirichlet"):
            raise ValueError(f"spatial bc must be 'neumann' or 'dirichlet', got {self.bc!r}")

    @property
    def spacing(self) -> float:
        return self.length / (self.n_x - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_x)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights; the Neumann Laplacian is self-adjoint in this inner product."""
        w = np.full(self.n_x, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    @property
    def active(self) -> slice:
        """Nodes carrying unknowns (all for Neumann, interior for Dirichlet)."""
        return slice(None) if self.bc == "neumann" else slice(1, -1)

    def integrate(self, values: np.ndarray, axis: int = 0) -> np.ndarray | float:
        w = self.weights
        shape = [1] * np.ndim(values)
        shape[axis] = -1
        return np.sum(values * w.reshape(shape), axis=axis)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """Second difference along axis 0 with mirrored ghosts (Neumann) or zero rows (Dirichlet)."""
        v = np.asarray(values, dtype=float)
        h2 = self.spacing**2
        out = np.empty_like(v)
        out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
        if self.bc == "neumann":
            out[0] = 2.0 * (v[1] - v[0]) / h2
            out[-1] = 2.0 * (v[-2] - v[-1]) / h2
        else:
            out[0] = 0.0
            out[-1] = 0.0
        return out

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Edge differences (v[i+1]-v[i])/h along axis 0; shape n_x - 1."""
        return np.diff(values, axis=0) / self.spacing

    def grad_sq_integral(self, values: np.ndarray) -> float:
        """Discrete int |v'|^2 dx, the edge sum matching the Laplacian stencil."""
        g = self.gradient(values)
        return float(np.sum(g**2, axis=0) * self.spacing)

    def neg_laplacian_bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(lower, diag, upper) of -Laplacian restricted to the active nodes."""
        h2 = self.spacing**2
        m = self.n_x if self.bc == "neumann" else self.n_x - 2
        diag = np.full(m, 2.0 / h2)
        lower = np.full(m - 1, -1.0 / h2)
        upper = np.full(m - 1, -1.0 / h2)
        if self.bc == "neumann":
            upper[0] = -2.0 / h2
            lower[-1] = -2.0 / h2
        return lower, diag, upper


@dataclass(frozen=True)
class TraitGrid:
    """Trait nodes on [0, 1). Periodic grids do not store theta = 1."""

    n_theta: int = 100
    bc: str = "periodic"

    def __post_init__(self):
        if self.bc not in ("periodic", "dirichlet"):
            raise ValueError(f"trait bc must be 'periodic' or 'dirichlet', got {self.bc!r}")

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_theta if self.periodic else 1.0 / (self.n_theta - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.spacing

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_theta, self.spacing)
        if not self.periodic:
            w[0] = w[-1] = 0.5 * self.spacing
        return w

    @property
    def active(self) -> slice:
        return slice(None) if self.periodic else slice(1, -1)

    def distance(self, a, b) -> np.ndarray:
        """Circle distance for periodic grids, plain distance otherwise."""
        d = np.abs(np.asarray(a, dtype=float) - b)
        if self.periodic:
            d = np.minimum(d % 1.0, 1.0 - d % 1.0)
        return d

    def nearest_index(self, theta: float) -> int:
        return int(np.argmin(self.distance(self.nodes, theta)))

    def laplacian(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Three-point second difference in theta; Dirichlet rows at the ends are zero."""
        v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
        h2 = self.spacing**2
        if self.periodic:
            out = (np.roll(v, 1, axis=-1) - 2.0 * v + np.roll(v, -1, axis=-1)) / h2
        else:
            out = np.zeros_like(v)
            out[..., 1:-1] = (v[..., :-2] - 2.0 * v[..., 1:-1] + v[..., 2:]) / h2
        return np.moveaxis(out, -1, axis)

    def centered_difference(self, values: np.ndarray) -> np.ndarray:
        """First derivative by centered differences (one-sided at Dirichlet ends)."""
        v = np.asarray(values, dtype=float)
        h = self.spacing
        if self.periodic:
            return (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * h)
        return np.gradient(v, h)

    def second_difference(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        h2 = self.spacing**2
        if self.periodic:
            return (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / h2
        out = np.empty_like(v)
        out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
        out[0], out[-1] = out[1], out[-2]
        return out


@dataclass(frozen=True)
class SolverSettings:
    eig_tol: float = 1e-10
    eig_max_iter: int = 500
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    dt: float | None = None
    reaction: str = "semi_implicit"
    steady_tol: float = 1e-8
    max_time: float = 1000.0
    tol_ess: float = 1e-6
    tol_mono: float = 1e-9
    curvature_floor: float = 1e-2
    gradient_factor: str = "D"


@dataclass(frozen=True)
class RunSettings:
    """Experiment-level parameters that are not part of the model itself."""

    T: float = 1.0
    snapshot_times: tuple[float, ...] = ()
    theta_0: float = 0.7
    bump_width: float = 0.1
    epsilons: tuple[float, ...] = (0.1, 0.05, 0.025)
    hj_dt: float | None = None
    hj_T: float = 1.0
    hj_curvature: float = 50.0
    hj_theta_0: float = 0.7
    hamiltonian_rho: str = "fisher_kpp"
    hamiltonian_file: str | None = None


@dataclass(frozen=True)
class ModelConfig:
    spatial: SpatialGrid
    trait: TraitGrid
    D: Profile
    K: Profile
    epsilon: float
    theta_m: float
    solver: SolverSettings = field(default_factory=SolverSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def D_samples(self) -> np.ndarray:
        return np.asarray(self.D(self.trait.nodes), dtype=float)

    @property
    def K_samples(self) -> np.ndarray:
        return np.asarray(self.K(self.spatial.nodes), dtype=float)

    def D_derivative_samples(self) -> np.ndarray:
        """Analytic D' for presets, centered differences for sampled D."""
        d = self.D.derivative(self.trait.nodes)
        if d is None:
            return self.trait.centered_difference(self.D_samples)
        return np.asarray(d, dtype=float)

    @property
    def theta_m_index(self) -> int:
        return self.trait.nearest_index(self.theta_m)

    def with_epsilon(self, epsilon: float) -> "ModelConfig":
        return replace(self, epsilon=float(epsilon))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


def _local_minima(values: np.ndarray, circular: bool, rtol: float = 1e-12) -> list[int]:
    """Indices of strict local minima; plateaus count once (first index)."""
    v = np.asarray(values, dtype=float)
    scale = max(float(np.max(np.abs(v))), 1e-300)
    # collapse runs of equal values
    starts = [0]
    for i in range(1, len(v)):
        if abs(v[i] - v[starts[-1]]) > rtol * scale:
            starts.append(i)
    if circular and len(starts) > 1 and abs(v[starts[-1]] - v[0]) <= rtol * scale:
        starts.pop()
    vals = v[starts]
    m = len(vals)
    if m == 1:
        # fully flat: every node is a minimizer
        return [starts[0], starts[0]]
    minima = []
    for k in range(m):
        if circular:
            left, right = vals[(k - 1) % m], vals[(k + 1) % m]
        else:
            left = vals[k - 1] if k > 0 else math.inf
            right = vals[k + 1] if k < m - 1 else math.inf
        if vals[k] < left and vals[k] < right:
            minima.append(starts[k])
    return minima


def validate_config(config: ModelConfig) -> list[Violation]:
    """Check the standing assumptions on K, D and the grids.

    Returns an empty list when the configuration is usable. A constant K is
    reported through ``warnings.warn`` rather than as a violation.
    """
    out: list[Violation] = []
    sp, tr = config.spatial, config.trait
    if not sp.length > 0:
        out.append(Violation("grid", f"domain length must be positive, got {sp.length}"))
    if sp.n_x < 3:
        out.append(Violation("grid", f"n_x must be >= 3, got {sp.n_x}"))
    if tr.n_theta < 3:
        out.append(Violation("grid", f"n_theta must be >= 3, got {tr.n_theta}"))
    if not config.epsilon > 0:
        out.append(Violation("epsilon", f"epsilon must be positive, got {config.epsilon}"))
    if not 0.0 <= config.theta_m < 1.0:
        out.append(Violation("theta_m", f"theta_m must lie in [0, 1), got {config.theta_m}"))
    if out:
        return out

    K = config.K_samples
    if not np.all(np.isfinite(K)) or np.min(K) <= 0.0:
        out.append(
            Violation("K", f"K not bounded below by positive K_m (min sample {np.min(K):.6g})")
        )
    elif np.ptp(K) == 0.0:
        warnings.warn("K is constant; the selection mechanism degenerates", stacklevel=2)

    D = config.D_samples
    D_act = D[tr.active]
    if not np.all(np.isfinite(D_act)):
        out.append(Violation("D", "D samples must be finite"))
        return out
    if np.min(D_act) <= 0.0:
        out.append(Violation("D", f"D must be positive (min sample {np.min(D_act):.6g})"))
    minima = _local_minima(D_act, circular=tr.periodic)
    if len(minima) != 1:
        out.append(
            Violation("D", f"non-unique minimizer: D has {len(minima)} local minima on the trait grid")
        )
        return out
    offset = 0 if tr.periodic else 1
    theta_min = tr.nodes[minima[0] + offset]
    if tr.distance(theta_min, config.theta_m) > tr.spacing * (1.0 + 1e-9):
        out.append(
            Violation(
                "theta_m",
                f"declared theta_m={config.theta_m} is not within one cell of the sampled "
                f"minimizer {theta_min:.6g}",
            )
        )
    return out


def integrate_trait(n: np.ndarray, trait: TraitGrid) -> np.ndarray:
    """rho(x) = int n(x, theta) dtheta; rectangle rule (periodic) or trapezoid (Dirichlet)."""
    return np.asarray(n, dtype=float) @ trait.weights


@dataclass(frozen=True)
class TraitMoments:
    mass: float
    mean_trait: float
    trait_stddev: float
    mean_reliable: bool = True


# resultant length below which the circular mean is reported as unreliable
MIN_RESULTANT = 1e-8


def trait_marginal(n: np.ndarray, spatial: SpatialGrid) -> np.ndarray:
    """The theta-marginal int n dx, one value per trait node."""
    return spatial.integrate(np.asarray(n, dtype=float), axis=0)


def trait_moments(n: np.ndarray, spatial: SpatialGrid, trait: TraitGrid) -> TraitMoments:
    """Mass, mean and spread of the trait marginal.

    Periodic grids use the circular mean and the wrapped-normal standard
    deviation sqrt(-2 ln R)/(2 pi), R the mean resultant length. For a
    rotation-invariant marginal (R below 1e-8) the spread is reported at its
    ceiling and the mean is flagged unreliable.
    """
    marg = trait_marginal(n, spatial)
    w = trait.weights
    mass = float(np.sum(marg * w))
    if not mass > 0.0:
        raise DegenerateDensityError("degenerate density: total mass is not positive")
    p = marg * w / mass
    theta = trait.nodes
    if trait.periodic:
        z = np.sum(p * np.exp(2j * math.pi * theta))
        R = float(min(abs(z), 1.0))
        reliable = R >= MIN_RESULTANT
        R = max(R, MIN_RESULTANT)
        mean = (math.atan2(z.imag, z.real) / (2.0 * math.pi)) % 1.0 if reliable else 0.0
        std = math.sqrt(max(-2.0 * math.log(R), 0.0)) / (2.0 * math.pi)
        return TraitMoments(mass, mean, std, mean_reliable=reliable)
    mean = float(np.sum(p * theta))
    std = math.sqrt(max(float(np.sum(p * (theta - mean) ** 2)), 0.0))
    return TraitMoments(mass, mean, std)
