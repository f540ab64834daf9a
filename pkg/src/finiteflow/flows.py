"""Continuous-time optimization vector fields.

Three velocity fields over a gradient g = grad f(x):

  gf    plain steepest descent, -g
  rgf   rescaled descent, -c * g / ||g||_2^((q-2)/(q-1))
  sgf   signed descent, -c * ||g||_1^(1/(q-1)) * sign(g)

For q in (1, inf) both rescaled fields are continuous but not Lipschitz at
stationary points; q = inf gives the unit-speed normalized field (rgf) and
the pure sign field (sgf). Below ``grad_threshold`` the velocity is defined
as exactly zero, which keeps trajectories stationary at minimizers instead
of dividing by a vanishing norm or chattering on the sign field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FLOW_KINDS = ("gf", "rgf", "sgf")

# outside this range the power ||g||^e is evaluated in log space
_POW_LO = 1e-100
_POW_HI = 1e100


@dataclass(frozen=True)
class FlowSpec:
    """Which flow to evaluate, with its exponent q, scale c, and cutoff."""

    kind: str
    q: float = math.inf
    c: float = 1.0
    grad_threshold: float = 1e-12
    # norm exponent of the configured kind, precomputed for the hot path
    _exponent: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self) -> None:
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}, expected one of {FLOW_KINDS}")
        if self.kind != "gf" and not (self.q > 1):
            raise ValueError(f"q must lie in (1, inf], got {self.q}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.kind == "gf" and self.c != 1.0:
            raise ValueError("plain gradient flow has no scale; c must be 1")
        if self.grad_threshold < 0:
            raise ValueError("grad_threshold must be non-negative")
        exponent = self.rgf_exponent() if self.kind == "rgf" else self.sgf_exponent()
        object.__setattr__(self, "_exponent", exponent)

    def rgf_exponent(self) -> float:
        """Exponent (q-2)/(q-1) on the Euclidean norm; 1 in the q = inf limit."""
        return 1.0 if math.isinf(self.q) else (self.q - 2.0) / (self.q - 1.0)

    def sgf_exponent(self) -> float:
        """Exponent 1/(q-1) on the l1 norm; 0 in the q = inf limit."""
        return 0.0 if math.isinf(self.q) else 1.0 / (self.q - 1.0)


def _power(base: float, exponent: float) -> float:
    # base > 0; log-space keeps extreme norms from over/underflowing
    if exponent == 0.0:
        return 1.0
    if _POW_LO <= base <= _POW_HI:
        return base ** exponent
    return math.exp(exponent * math.log(base))


def _norm2(g: np.ndarray, spec: FlowSpec) -> float:
    sq = float(g @ g)
    if math.isfinite(sq):
        return math.sqrt(sq)
    if np.all(np.isfinite(g)):
        # components finite but the squared sum overflowed; rescale
        peak = float(np.max(np.abs(g)))
        scaled = g / peak
        return peak * math.sqrt(float(scaled @ scaled))
    raise ValueError(f"non-finite gradient passed to {spec.kind} flow: {g!r}")


def flow_eval(spec: FlowSpec, grad: np.ndarray) -> np.ndarray:
    """Velocity of the configured flow at a point with gradient ``grad``."""
    g = grad if isinstance(grad, np.ndarray) and grad.dtype == np.float64 \
        else np.asarray(grad, dtype=float)
    norm2 = _norm2(g, spec)
    if norm2 <= spec.grad_threshold:
        # stationary point: zero velocity is an admissible solution there
        return np.zeros_like(g)
    if spec.kind == "gf":
        return -g
    if spec.kind == "rgf":
        base = g * _power(norm2, -spec._exponent)
        return -spec.c * base
    norm1 = float(np.abs(g).sum())
    base = _power(norm1, spec._exponent) * np.sign(g)
    return -spec.c * base


def flow_speed(spec: FlowSpec, grad: np.ndarray) -> float:
    """Euclidean norm of the flow velocity.

    For the rescaled flow this equals c * ||g||_2^(1/(q-1)), which is why
    trajectories reach the minimizer in finite time when q is large enough.
    """
    return float(np.linalg.norm(flow_eval(spec, grad)))
