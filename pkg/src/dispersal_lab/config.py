"""Configuration files, presets and overrides.

The file format is INI-style ``key = value`` lines grouped in sections::

    [domain]   length, n_x, bc (neumann | dirichlet)
    [trait]    n_theta, bc (periodic | dirichlet)
    [model]    D, K, epsilon, theta_m
    [solver]   eig_tol, eig_max_iter, newton_tol, newton_max_iter, dt,
               reaction (explicit | semi_implicit), steady_tol, max_time,
               tol_ess, tol_mono
    [hj]       gradient_factor (D | one), curvature_floor, dt, T, curvature,
               theta_0, rho (fisher_kpp | steady | zero), hamiltonian_file
    [run]      T, snapshot_times, theta_0, bump_width, epsilons
    [output]   dir

``D`` and ``K`` are either a profile family call such as
``cosine(mean=0.5, amplitude=0.4)`` or a comma-separated array with one value
per grid node. ``model.epsilon`` is required unless a preset supplies it.
``#`` starts a comment, at the start of a line or after whitespace.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .core import ModelConfig, RunSettings, SolverSettings, SpatialGrid, TraitGrid
from .errors import ConfigError
from .profiles import parse_profile

# (section, key) -> (target, field, converter); target is one of
# domain / trait / model / solver / run / output
_FLOAT, _INT, _STR, _FLOATS, _OPT_FLOAT, _OPT_STR = "float", "int", "str", "floats", "opt_float", "opt_str"

SCHEMA: dict[str, dict[str, tuple[str, str, str]]] = {
    "domain": {
        "length": ("domain", "length", _FLOAT),
        "n_x": ("domain", "n_x", _INT),
        "bc": ("domain", "bc", _STR),
    },
    "trait": {
        "n_theta": ("trait", "n_theta", _INT),
        "bc": ("trait", "bc", _STR),
    },
    "model": {
        "D": ("model", "D", _STR),
        "K": ("model", "K", _STR),
        "epsilon": ("model", "epsilon", _FLOAT),
        "theta_m": ("model", "theta_m", _FLOAT),
    },
    "solver": {
        "eig_tol": ("solver", "eig_tol", _FLOAT),
        "eig_max_iter": ("solver", "eig_max_iter", _INT),
        "newton_tol": ("solver", "newton_tol", _FLOAT),
        "newton_max_iter": ("solver", "newton_max_iter", _INT),
        "dt": ("solver", "dt", _OPT_FLOAT),
        "reaction": ("solver", "reaction", _STR),
        "steady_tol": ("solver", "steady_tol", _FLOAT),
        "max_time": ("solver", "max_time", _FLOAT),
        "tol_ess": ("solver", "tol_ess", _FLOAT),
        "tol_mono": ("solver", "tol_mono", _FLOAT),
    },
    "hj": {
        "gradient_factor": ("solver", "gradient_factor", _STR),
        "curvature_floor": ("solver", "curvature_floor", _FLOAT),
        "dt": ("run", "hj_dt", _OPT_FLOAT),
        "T": ("run", "hj_T", _FLOAT),
        "curvature": ("run", "hj_curvature", _FLOAT),
        "theta_0": ("run", "hj_theta_0", _FLOAT),
        "rho": ("run", "hamiltonian_rho", _STR),
        "hamiltonian_file": ("run", "hamiltonian_file", _OPT_STR),
    },
    "run": {
        "T": ("run", "T", _FLOAT),
        "snapshot_times": ("run", "snapshot_times", _FLOATS),
        "theta_0": ("run", "theta_0", _FLOAT),
        "bump_width": ("run", "bump_width", _FLOAT),
        "epsilons": ("run", "epsilons", _FLOATS),
    },
    "output": {
        "dir": ("output", "dir", _STR),
    },
}

REQUIRED = (("model", "D"), ("model", "K"), ("model", "epsilon"))

_CHOICES = {
    ("domain", "bc"): ("neumann", "dirichlet"),
    ("trait", "bc"): ("periodic", "dirichlet"),
    ("solver", "reaction"): ("explicit", "semi_implicit"),
    ("hj", "gradient_factor"): ("D", "one"),
    ("hj", "rho"): ("fisher_kpp", "steady", "zero"),
}

PRESETS: dict[str, str] = {
    # D(theta) = 1.5 theta and the bell-shaped K with Dirichlet ends in x and theta.
    "figure1": """
[domain]
length = 1.0
n_x = 200
bc = dirichlet

[trait]
n_theta = 200
bc = dirichlet

[model]
D = linear(offset=0.0, slope=1.5)
K = figure1(base=1.0, height=20.0, power=8.0, center=0.5, half_width=0.5)
epsilon = 0.01
theta_m = 0.0

[run]
T = 0.15
snapshot_times = 0.015, 0.0474, 0.15
theta_0 = 0.7
bump_width = 0.05
""",
    # Smooth periodic data for the small-eps study; theta_m = 0.5 is a grid node.
    "smooth_periodic": """
[domain]
length = 1.0
n_x = 100
bc = neumann

[trait]
n_theta = 100
bc = periodic

[model]
D = cosine(mean=0.2, amplitude=0.1)
K = cosine(mean=4.0, amplitude=0.6)
epsilon = 0.05
theta_m = 0.5

[run]
theta_0 = 0.0
bump_width = 0.1
epsilons = 0.1, 0.05, 0.025
""",
}


@dataclass(frozen=True)
class Entry:
    value: str
    lineno: int | None
    source: str


Resolved = dict[tuple[str, str], Entry]


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    """Line of each (section, key) assignment; configparser does not keep them."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            continue
        if section is not None and "=" in stripped and not line[:1].isspace():
            key = stripped.split("=", 1)[0].strip()
            where[(section, key)] = i
    return where


def parse_text(text: str, source: str = "<config>") -> Resolved:
    """Parse config text into (section, key) -> Entry, checking names only."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: key outside of any section", exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}: duplicate key {exc.section}.{exc.option}", exc.lineno) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}: duplicate section [{exc.section}]", exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}: cannot parse {line.strip()!r}", lineno) from exc
    lines = _line_numbers(text)
    out: Resolved = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{source}: unknown section [{section}]", _section_line(text, section)
            )
        for key, value in parser.items(section):
            lineno = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}", lineno)
            out[(section, key)] = Entry(value.strip(), lineno, source)
    return out


def _section_line(text: str, section: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{section}]":
            return i
    return None


def parse_override(item: str) -> tuple[tuple[str, str], Entry]:
    """``section.key=value`` from the command line."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    name, value = item.split("=", 1)
    if "." not in name:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    section, key = (part.strip() for part in name.split(".", 1))
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key} in override {item!r}")
    return (section, key), Entry(value.strip(), None, "--set")


def _convert(entry: Entry, kind: str, name: str):
    text = entry.value
    try:
        if kind == _FLOAT:
            return float(text)
        if kind == _INT:
            return int(text)
        if kind == _STR:
            return text
        if kind == _OPT_STR:
            return None if text.lower() in ("", "none") else text
        if kind == _OPT_FLOAT:
            return None if text.lower() in ("", "none", "auto") else float(text)
        if kind == _FLOATS:
            return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{entry.source}: bad value for {name}: {text!r}", entry.lineno) from exc
    raise AssertionError(kind)


def resolve(
    path: str | None = None,
    preset: str | None = None,
    overrides=(),
) -> Resolved:
    """Preset, then file, then ``--set`` overrides, later ones winning."""
    merged: Resolved = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        merged.update(parse_text(PRESETS[preset], f"preset {preset}"))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        merged.update(parse_text(text, path))
    for item in overrides:
        key, entry = parse_override(item)
        merged[key] = entry
    return merged


def build_config(resolved: Resolved) -> tuple[ModelConfig, dict]:
    """Turn resolved entries into a ModelConfig plus output settings."""
    for section, key in REQUIRED:
        if (section, key) not in resolved:
            raise ConfigError(f"missing required key {section}.{key}")
    groups: dict[str, dict] = {"domain": {}, "trait": {}, "model": {}, "solver": {}, "run": {}, "output": {}}
    for (section, key), entry in sorted(resolved.items()):
        target, fld, kind = SCHEMA[section][key]
        name = f"{section}.{key}"
        value = _convert(entry, kind, name)
        choices = _CHOICES.get((section, key))
        if choices and value not in choices:
            raise ConfigError(
                f"{entry.source}: {name} must be one of {', '.join(choices)}, got {value!r}", entry.lineno
            )
        groups[target][fld] = (value, entry)

    def plain(group):
        return {k: v for k, (v, _e) in groups[group].items()}

    try:
        spatial = SpatialGrid(**plain("domain"))
        trait = TraitGrid(**plain("trait"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    model = groups["model"]
    profiles = {}
    for name, grid_nodes, period in (
        ("D", trait.nodes, 1.0 if trait.periodic else None),
        ("K", spatial.nodes, None),
    ):
        text, entry = model[name]
        try:
            profiles[name] = parse_profile(text, grid_nodes, period)
        except ValueError as exc:
            raise ConfigError(f"{entry.source}: model.{name}: {exc}", entry.lineno) from exc
    if "theta_m" in model:
        theta_m = model["theta_m"][0]
    else:
        # default to the sampled minimizer of D
        D = np.asarray(profiles["D"](trait.nodes), float)
        act = np.arange(trait.n_theta)[trait.active]
        theta_m = float(trait.nodes[act[int(np.argmin(D[act]))]])
    config = ModelConfig(
        spatial=spatial,
        trait=trait,
        D=profiles["D"],
        K=profiles["K"],
        epsilon=model["epsilon"][0],
        theta_m=theta_m,
        solver=SolverSettings(**plain("solver")),
        run=RunSettings(**plain("run")),
    )
    return config, plain("output")


def load_config(path=None, preset=None, overrides=()) -> tuple[ModelConfig, dict]:
    return build_config(resolve(path, preset, overrides))


def canonical(config: ModelConfig) -> dict:
    """A JSON-ready description of every setting that affects results."""
    def enc(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, tuple):
            return [enc(x) for x in v]
        return v

    def fields(obj):
        return {k: enc(v) for k, v in sorted(vars(obj).items())}

    return {
        "domain": fields(config.spatial),
        "trait": fields(config.trait),
        "model": {
            "D": config.D.describe(),
            "K": config.K.describe(),
            "epsilon": repr(config.epsilon),
            "theta_m": repr(config.theta_m),
        },
        "solver": fields(config.solver),
        "run": fields(config.run),
    }


def config_digest(config: ModelConfig) -> str:
    """sha256 of the canonical resolved configuration."""
    text = json.dumps(canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
