"""Numerical laboratory for a reaction-diffusion model structured by a dispersal trait.

The density n(x, theta) solves eps n_t = D(theta) n_xx + eps^2 n_thth + n (K(x) - rho),
rho = int n dtheta. Modules:

- ``core``: grids, configuration, validation, trait quadrature and moments
- ``elliptic``: Fisher-KPP weight, effective Hamiltonian, trait eigenproblem
- ``hj``: constrained Hamilton-Jacobi solvers and fittest-trait dynamics
- ``parabolic``: time stepping and steady states
- ``verify``: small-eps diagnostics
- ``config``: configuration files and presets
- ``cli``: the ``dispersal-lab`` command
"""

from .config import config_digest, load_config
from .core import (
    ModelConfig,
    RunSettings,
    SolverSettings,
    SpatialGrid,
    TraitGrid,
    TraitMoments,
    Violation,
    integrate_trait,
    trait_marginal,
    trait_moments,
    validate_config,
)
from .elliptic import (
    EigenPair,
    HamiltonianCurve,
    TraitEigenPair,
    hamiltonian_curve,
    hamiltonian_slope_identity,
    principal_eigenpair,
    solve_fisher_kpp,
    trait_eigenpair,
)
from .errors import (
    ConfigError,
    DegenerateDensityError,
    DispersalLabError,
    ESSViolation,
    PositivityError,
    PostconditionError,
    SolverError,
    ValidationError,
)
from .hj import (
    PotentialFunction,
    TraitTrajectory,
    canonical_rhs,
    check_ess,
    quasistatic_dynamics,
    solve_constrained_hj,
    step_transient_hj,
)
from .parabolic import SimState, StepperConfig, run_to_steady, run_transient, step
from .profiles import Preset, Sampled
from .verify import AsymptoticReport, check_rho_identities, convergence_study, corrector_check, u_eps

__version__ = "0.1.0"
