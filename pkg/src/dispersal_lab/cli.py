"""Command-line driver: ``dispersal-lab <command> [--config PATH] [--out DIR] [--set k=v ...]``.

Every command validates the resolved configuration first and writes
comma-separated files whose first lines are ``#`` comments naming the
command, the config digest and the columns, plus a ``manifest.json``.

Exit codes: 0 ok, 2 validation, 3 config parse, 4 solver, 5 postcondition.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .config import config_digest, load_config
from .core import ModelConfig, TraitGrid, integrate_trait, trait_marginal, trait_moments, validate_config
from .elliptic import HamiltonianCurve, hamiltonian_curve, solve_fisher_kpp
from .errors import (
    ConfigError,
    DispersalLabError,
    PostconditionError,
    SolverError,
    ValidationError,
)
from .hj import check_ess, quasistatic_dynamics, solve_constrained_hj
from .parabolic import initial_density, run_to_steady, run_transient, steady_residual
from .verify import AsymptoticReport, StudyError, check_rho_identities, convergence_study, env_workers

logger = logging.getLogger("dispersal_lab")

EXIT_OK, EXIT_VALIDATION, EXIT_PARSE, EXIT_SOLVER, EXIT_POSTCONDITION = 0, 2, 3, 4, 5

BOUND_TOL = 1e-6
IDENTITY_TOL = 1e-6


def format_table(columns, data) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(np.column_stack(data)), fmt="%.17g", delimiter=",")
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_table(path: str) -> np.ndarray:
    """Numeric columns of a file written by this tool (``#`` lines skipped)."""
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


@dataclass
class RunManifest:
    command: str
    config_digest: str
    output_paths: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    exit_status: int = EXIT_OK
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "command": self.command,
            "config_digest": self.config_digest,
            "output_paths": self.output_paths,
            "wall_time": self.wall_time,
            "exit_status": self.exit_status,
            **self.extra,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


class Outputs:
    """Writes CSV files for one command and keeps the manifest."""

    def __init__(self, out_dir: str, command: str, digest: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.manifest = RunManifest(command, digest)

    def csv(self, name: str, columns: list[str], data) -> str:
        path = os.path.join(self.out_dir, name)
        header = (
            f"# command: {self.manifest.command}\n"
            f"# config_digest: {self.manifest.config_digest}\n"
            f"# columns: {','.join(columns)}\n"
        )
        atomic_write(path, header + format_table(columns, data))
        self.manifest.output_paths.append(path)
        return path

    def finish(self, exit_status: int, wall_time: float) -> str:
        self.manifest.exit_status = exit_status
        self.manifest.wall_time = wall_time
        path = os.path.join(self.out_dir, "manifest.json")
        atomic_write(path, self.manifest.to_json())
        return path


def reference_rho(config: ModelConfig, choice: str) -> np.ndarray:
    """rho used to build a Hamiltonian curve: N_m, the steady rho_eps, or zero."""
    if choice == "zero":
        return np.zeros(config.spatial.n_x)
    if choice == "steady":
        state = run_to_steady(config)
        return integrate_trait(state.n, config.trait)
    solv = config.solver
    D_m = float(np.min(config.D_samples[config.trait.active]))
    return solve_fisher_kpp(D_m, config.K_samples, config.spatial, solv.newton_tol, solv.newton_max_iter)


def checked_curve(config: ModelConfig, rho: np.ndarray) -> HamiltonianCurve:
    curve = hamiltonian_curve(rho, config, keep_eigenfunctions=False, workers=env_workers())
    excess = curve.bound_violation()
    if excess > BOUND_TOL:
        raise PostconditionError(
            f"Hamiltonian outside [-max K, mean rho] by {excess:.3e} (tolerance {BOUND_TOL:g})"
        )
    return curve


def cmd_validate(config: ModelConfig, out: Outputs | None) -> int:
    print("configuration is valid")
    return EXIT_OK


def cmd_figure1(config: ModelConfig, out: Outputs) -> int:
    run = config.run
    n0 = initial_density(config)
    snaps = run_transient(config, n0, run.T, sample_every=10, sample_times=run.snapshot_times)
    times = np.array([s.t for s in snaps])
    means = np.array([s.moments.mean_trait for s in snaps])
    spreads = np.array([s.moments.trait_stddev for s in snaps])
    masses = np.array([s.moments.mass for s in snaps])
    out.csv("mean_trait.csv", ["t", "mean_trait", "trait_stddev", "mass"], [times, means, spreads, masses])
    picked = []
    for k, target in enumerate(sorted(run.snapshot_times), start=1):
        idx = int(np.argmax(times >= target - 1e-12)) if np.any(times >= target - 1e-12) else len(snaps) - 1
        s = snaps[idx]
        picked.append(s.t)
        out.csv(f"snapshot_{k}_rho.csv", ["x", "rho"], [config.spatial.nodes, s.rho])
        out.csv(f"snapshot_{k}_marginal.csv", ["theta", "trait_marginal"], [config.trait.nodes, s.marginal])
    out.csv("K.csv", ["x", "K"], [config.spatial.nodes, config.K_samples])
    out.manifest.extra["snapshot_times"] = picked
    print(f"initial mean trait: {means[0]:.6f}")
    print(f"final mean trait:   {means[-1]:.6f} at t={times[-1]:.6g}")
    return EXIT_OK


def cmd_steady(config: ModelConfig, out: Outputs) -> int:
    state = run_to_steady(config)
    rho = integrate_trait(state.n, config.trait)
    moments = trait_moments(state.n, config.spatial, config.trait)
    report = check_rho_identities(state, config)
    out.csv("steady_rho.csv", ["x", "rho", "K"], [config.spatial.nodes, rho, config.K_samples])
    out.csv(
        "steady_marginal.csv",
        ["theta", "trait_marginal"],
        [config.trait.nodes, trait_marginal(state.n, config.spatial)],
    )
    out.manifest.extra.update(
        steady_time=state.t,
        steps=state.step_count,
        residual=steady_residual(state.n, config),
        identity_defect=report.relative_defect,
    )
    print(f"steady after t={state.t:.6g} ({state.step_count} steps)")
    print(f"mean trait {moments.mean_trait:.6f}, stddev {moments.trait_stddev:.6f}")
    print(f"|int rho K - int rho^2| / int rho^2 = {report.relative_defect:.3e}")
    if report.relative_defect > IDENTITY_TOL:
        raise PostconditionError(
            f"steady identity defect {report.relative_defect:.3e} exceeds {IDENTITY_TOL:g}"
        )
    return EXIT_OK


def cmd_hamiltonian(config: ModelConfig, out: Outputs) -> int:
    rho = reference_rho(config, config.run.hamiltonian_rho)
    curve = checked_curve(config, rho)
    out.csv("hamiltonian.csv", ["theta", "H", "D"], [curve.theta, curve.values, config.D_samples])
    ess = check_ess(curve, config.theta_m, config.solver.tol_ess)
    print(f"argmin H at theta={curve.theta[curve.argmin_index]:.6g}, min H = {ess.min_value:.3e}")
    return EXIT_OK


def _curve_from_file(path: str, config: ModelConfig) -> HamiltonianCurve:
    try:
        table = read_table(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read Hamiltonian file {path}: {exc}") from exc
    if table.shape[1] < 2:
        raise ConfigError(f"Hamiltonian file {path} needs columns theta,H")
    trait = TraitGrid(len(table), config.trait.bc)
    if not np.allclose(table[:, 0], trait.nodes, atol=1e-9):
        raise ConfigError(f"Hamiltonian file {path}: theta column is not a uniform trait grid")
    K = config.K_samples
    return HamiltonianCurve(table[:, 1].copy(), trait, rho_mean=np.nan, k_max=float(np.max(K)))


def cmd_hj(config: ModelConfig, out: Outputs) -> int:
    if config.run.hamiltonian_file:
        curve = _curve_from_file(config.run.hamiltonian_file, config)
    else:
        curve = checked_curve(config, reference_rho(config, config.run.hamiltonian_rho))
    ess = check_ess(curve, config.theta_m, config.solver.tol_ess)
    u = solve_constrained_hj(curve, tol_ess=config.solver.tol_ess)
    out.csv("potential.csv", ["theta", "u", "H"], [curve.theta, u.values, curve.values])
    out.manifest.extra.update(
        min_H=ess.min_value, H_at_theta_m=ess.value_at_declared, H_theta_at_theta_m=ess.slope_at_declared
    )
    print(f"argmax u at theta={u.trait.nodes[u.argmax_index]:.6g}")
    print(
        f"min H = {ess.min_value:.3e}, H(theta_m) = {ess.value_at_declared:.3e}, "
        f"H'(theta_m) = {ess.slope_at_declared:.3e}"
    )
    return EXIT_OK


def cmd_canonical(config: ModelConfig, out: Outputs) -> int:
    run = config.run
    traj = quasistatic_dynamics(run.hj_theta_0, run.hj_T, run.hj_dt, config)
    arrays = traj.as_arrays()
    cols = ["t", "theta_bar", "H_at_theta_bar", "H_theta_at_theta_bar", "canonical_rhs"]
    out.csv("trajectory.csv", cols, [arrays[c] for c in cols])
    print(f"theta_bar: {arrays['theta_bar'][0]:.6f} -> {arrays['theta_bar'][-1]:.6f} over {len(traj.times) - 1} steps")
    return EXIT_OK


def cmd_converge(config: ModelConfig, out: Outputs) -> int:
    try:
        reports = convergence_study(config)
    except StudyError as exc:
        if exc.partial:
            _write_reports(out, exc.partial)
        raise
    _write_reports(out, reports)
    for rep in reports:
        print(
            f"eps={rep.epsilon:<8g} rho_error={rep.rho_error:.4e} u_error={rep.u_error:.4e} "
            f"stddev={rep.trait_stddev:.4e} max_u/eps={rep.max_u_eps / rep.epsilon:.4f}"
        )
    return EXIT_OK


def _write_reports(out: Outputs, reports: list[AsymptoticReport]) -> None:
    cols = list(AsymptoticReport.COLUMNS)
    data = np.array([r.row() for r in reports])
    out.csv("convergence.csv", cols, [data[:, k] for k in range(len(cols))])


COMMANDS = {
    "validate": (cmd_validate, "check the configuration against the model assumptions"),
    "figure1": (cmd_figure1, "transient run with Dirichlet ends: snapshots and mean-trait series"),
    "steady": (cmd_steady, "long-time steady state (Neumann x, periodic theta)"),
    "hamiltonian": (cmd_hamiltonian, "effective Hamiltonian H(theta, rho) over the trait grid"),
    "hj": (cmd_hj, "constrained Hamilton-Jacobi potential u(theta)"),
    "canonical": (cmd_canonical, "quasi-static fittest-trait trajectory"),
    "converge": (cmd_converge, "small-eps convergence table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispersal-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI-style configuration file")
        p.add_argument(
            "--preset",
            help="compiled-in base configuration (figure1, smooth_periodic); "
            "default figure1 for the figure1 command, smooth_periodic otherwise, none with --config",
        )
        p.add_argument("--out", help="output directory (default: output.dir or ./out)")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override one config entry; repeatable",
        )
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    preset = args.preset
    if preset is None and args.config is None:
        preset = "figure1" if args.command == "figure1" else "smooth_periodic"
    fn = COMMANDS[args.command][0]
    start = time.perf_counter()
    out = None
    try:
        config, output = load_config(args.config, preset, args.overrides)
        violations = validate_config(config)
        if violations:
            raise ValidationError(violations)
        if args.command != "validate":
            out = Outputs(args.out or output.get("dir", "out"), args.command, config_digest(config))
        status = fn(config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = EXIT_PARSE
    except ValidationError as exc:
        for v in exc.violations:
            print(f"violation: {v}", file=sys.stderr)
        status = EXIT_VALIDATION
    except PostconditionError as exc:
        print(f"postcondition failed: {exc}", file=sys.stderr)
        status = EXIT_POSTCONDITION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    except DispersalLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    if out is not None:
        out.finish(status, time.perf_counter() - start)
    return status


if __name__ == "__main__":
    sys.exit(main())
