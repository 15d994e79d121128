"""Closed-form and sampled coefficient profiles for D(theta) and K(x).

A profile is a callable ``f(points) -> values``. Closed-form families carry
an analytic derivative; sampled profiles do not, and callers fall back to
finite differences on the grid.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi


def _constant(s, value=1.0):
    return np.full_like(s, value, dtype=float)


def _constant_d(s, value=1.0):
    return np.zeros_like(s, dtype=float)


def _linear(s, offset=0.0, slope=1.0):
    return offset + slope * s


def _linear_d(s, offset=0.0, slope=1.0):
    return np.full_like(s, slope, dtype=float)


def _cosine(s, mean=1.0, amplitude=0.5, phase=0.0, freq=1.0):
    return mean + amplitude * np.cos(TWO_PI * freq * (s - phase))


def _cosine_d(s, mean=1.0, amplitude=0.5, phase=0.0, freq=1.0):
    return -TWO_PI * freq * amplitude * np.sin(TWO_PI * freq * (s - phase))


def _figure1(s, base=1.0, height=20.0, power=8.0, center=0.5, half_width=0.5):
    core = np.clip(1.0 - ((s - center) / half_width) ** 2, 0.0, None)
    return base + height * core**power


def _figure1_d(s, base=1.0, height=20.0, power=8.0, center=0.5, half_width=0.5):
    z = (s - center) / half_width
    core = np.clip(1.0 - z**2, 0.0, None)
    return height * power * core ** (power - 1.0) * (-2.0 * z / half_width)


# name -> (function, derivative, default parameters)
FAMILIES: dict[str, tuple[Callable, Callable, dict[str, float]]] = {
    "constant": (_constant, _constant_d, {"value": 1.0}),
    "linear": (_linear, _linear_d, {"offset": 0.0, "slope": 1.0}),
    "cosine": (_cosine, _cosine_d, {"mean": 1.0, "amplitude": 0.5, "phase": 0.0, "freq": 1.0}),
    "figure1": (
        _figure1,
        _figure1_d,
        {"base": 1.0, "height": 20.0, "power": 8.0, "center": 0.5, "half_width": 0.5},
    ),
}


@dataclass(frozen=True)
class Preset:
    """A named closed-form family with fixed parameters."""

    name: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown profile family {self.name!r}; known: {sorted(FAMILIES)}")
        defaults = FAMILIES[self.name][2]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"profile {self.name!r} got unknown parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {**defaults, **{k: float(v) for k, v in self.params.items()}})

    def __call__(self, points) -> np.ndarray:
        s = np.asarray(points, dtype=float)
        return FAMILIES[self.name][0](s, **self.params)

    def derivative(self, points) -> np.ndarray:
        s = np.asarray(points, dtype=float)
        return FAMILIES[self.name][1](s, **self.params)

    @property
    def has_derivative(self) -> bool:
        return True

    def describe(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.name}({args})"


@dataclass(frozen=True)
class Sampled:
    """Values given at grid nodes; evaluated elsewhere by linear interpolation.

    ``period`` is 1.0 for trait profiles on the periodic grid and ``None``
    for profiles on a bounded interval.
    """

    values: tuple[float, ...]
    nodes: tuple[float, ...]
    period: float | None = None

    def __call__(self, points) -> np.ndarray:
        s = np.asarray(points, dtype=float)
        xp = np.asarray(self.nodes)
        fp = np.asarray(self.values)
        if np.array_equal(np.ravel(s), xp) and s.ndim == 1:
            return fp.copy()
        if self.period is not None:
            return np.interp(s, xp, fp, period=self.period)
        return np.interp(s, xp, fp)

    def derivative(self, points):
        return None

    @property
    def has_derivative(self) -> bool:
        return False

    def describe(self) -> str:
        return ", ".join(repr(float(v)) for v in self.values)


_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_profile(text: str, nodes: np.ndarray, period: float | None):
    """Parse ``name(k=v, ...)``, a bare family name, or a comma-separated array.

    Arrays must have one entry per grid node.
    """
    text = text.strip()
    m = _CALL_RE.match(text)
    if m:
        name, argtext = m.group(1), m.group(2)
        params: dict[str, float] = {}
        if argtext and argtext.strip():
            for item in argtext.split(","):
                if "=" not in item:
                    raise ValueError(f"expected key=value in {text!r}, got {item.strip()!r}")
                k, v = item.split("=", 1)
                params[k.strip()] = float(v)
        return Preset(name, params)
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"cannot parse profile {text!r}") from exc
    if len(values) != len(nodes):
        raise ValueError(f"array has {len(values)} entries, grid has {len(nodes)} nodes")
    return Sampled(tuple(values), tuple(float(x) for x in nodes), period)
