"""Objective functions: analytic test problems and a small MLP regression task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Vector = np.ndarray


@dataclass(frozen=True)
class OptimumInfo:
    """Known-minimizer metadata attached to an objective.

    ``p`` and ``mu`` describe how strongly the gradient norm controls the
    suboptimality gap near ``x_star``:

        ((p-1)/p) * ||grad f(x)||^(p/(p-1)) >= mu^(1/(p-1)) * (f(x) - f_star)

    inside the ball of radius ``neighborhood_radius`` around ``x_star``.
    ``mu`` may be left unset when only the order is known.
    """

    x_star: Vector
    f_star: float
    p: float
    mu: float | None = None
    neighborhood_radius: float = math.inf

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "x_star", np.atleast_1d(np.asarray(self.x_star, dtype=float))
        )
        if not self.p > 1:
            raise ValueError(f"dominance order p must exceed 1, got {self.p}")
        if self.mu is not None and not self.mu > 0:
            raise ValueError(f"dominance constant mu must be positive, got {self.mu}")
        if not self.neighborhood_radius > 0:
            raise ValueError("neighborhood_radius must be positive")


@dataclass(frozen=True)
class BatchContext:
    """Deterministic mini-batch sampling plan for stochastic runs.

    Each step draws its own generator from (rng_seed, step index), so a run
    is reproducible regardless of how many runs execute concurrently.
    """

    rng_seed: int
    batch_size: int
    dataset_size: int

    def __post_init__(self) -> None:
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")
        if not 0 < self.batch_size <= self.dataset_size:
            raise ValueError(
                f"batch_size must lie in [1, dataset_size], got {self.batch_size} "
                f"with dataset_size={self.dataset_size}"
            )

    def indices(self, step: int) -> np.ndarray:
        """Sorted sample without replacement for one optimization step."""
        rng = np.random.default_rng([self.rng_seed, step])
        idx = rng.choice(self.dataset_size, size=self.batch_size, replace=False)
        idx.sort()
        return idx


@dataclass(frozen=True)
class Objective:
    """Differentiable cost with optional known-optimum metadata.

    Immutable after construction; ``value`` and ``gradient`` are pure and may
    be called concurrently. ``batch_gradient(x, indices)`` is only present
    when ``batch_support`` is true.
    """

    dimension: int
    value: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    metadata: OptimumInfo | None = None
    batch_support: bool = False
    batch_gradient: Callable[[Vector, np.ndarray], Vector] | None = None
    name: str = ""
    aux: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if self.batch_support and self.batch_gradient is None:
            raise ValueError("batch_support requires a batch_gradient callable")


def make_quadratic(mu: float, dimension: int) -> Objective:
    """Isotropic quadratic bowl f(x) = (mu/2) * ||x||^2 with minimum at 0."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if dimension < 1:
        raise ValueError("dimension must be a positive integer")
    mu = float(mu)

    def value(x: Vector) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * mu * float(np.sum(x * x))

    def gradient(x: Vector) -> Vector:
        return mu * np.asarray(x, dtype=float)

    meta = OptimumInfo(x_star=np.zeros(dimension), f_star=0.0, p=2.0, mu=mu)
    return Objective(dimension=dimension, value=value, gradient=gradient,
                     metadata=meta, name="quadratic")


def make_rosenbrock(a: float = 1.0, b: float = 100.0,
                    neighborhood_radius: float = 0.5) -> Objective:
    """Two-dimensional banana valley f(x1,x2) = (a-x1)^2 + b*(x2-x1^2)^2.

    The unique stationary point sits at (a, a^2) for b >= 0. The function is
    locally strongly convex there, so the dominance order is 2; the constant
    is left unset and can be estimated with check_gradient_dominance.
    """
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    a = float(a)
    b = float(b)

    def value(x: Vector) -> float:
        x1, x2 = float(x[0]), float(x[1])
        return (a - x1) ** 2 + b * (x2 - x1 ** 2) ** 2

    def gradient(x: Vector) -> Vector:
        x1, x2 = float(x[0]), float(x[1])
        g1 = -2.0 * (a - x1) - 4.0 * b * x1 * (x2 - x1 ** 2)
        g2 = 2.0 * b * (x2 - x1 ** 2)
        return np.array([g1, g2])

    meta = OptimumInfo(x_star=np.array([a, a ** 2]), f_star=0.0, p=2.0, mu=None,
                       neighborhood_radius=neighborhood_radius)
    return Objective(dimension=2, value=value, gradient=gradient,
                     metadata=meta, name="rosenbrock")


def _pth_power_mu(p: float, dimension: int) -> float:
    # Largest constant for which the dominance inequality holds everywhere.
    # The value/gradient ratio is scale invariant, so it suffices to compare
    # the l_{2(p-1)} and l_p norms over directions; the worst direction is the
    # uniform one for p >= 2 and a coordinate axis for p < 2.
    if p >= 2:
        return (p - 1) ** (p - 1) * dimension ** (p / 2 - (p - 1))
    return (p - 1) ** (p - 1)


def make_pth_power(p: float, dimension: int) -> Objective:
    """Separable power cost f(x) = (1/p) * sum_i |x_i|^p with exact order p."""
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if dimension < 1:
        raise ValueError("dimension must be a positive integer")
    p = float(p)

    def value(x: Vector) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(np.abs(x) ** p)) / p

    def gradient(x: Vector) -> Vector:
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.abs(x) ** (p - 1.0)

    meta = OptimumInfo(x_star=np.zeros(dimension), f_star=0.0, p=p,
                       mu=_pth_power_mu(p, dimension))
    return Objective(dimension=dimension, value=value, gradient=gradient,
                     metadata=meta, name="pth_power")


def _mlp_shapes(widths: list[int]) -> list[tuple[int, int]]:
    return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


def _mlp_param_count(widths: list[int]) -> int:
    return sum(o * i + o for o, i in _mlp_shapes(widths))


def _mlp_unpack(theta: Vector, widths: list[int]) -> list[tuple[Vector, Vector]]:
    layers = []
    pos = 0
    for out_w, in_w in _mlp_shapes(widths):
        w = theta[pos:pos + out_w * in_w].reshape(out_w, in_w)
        pos += out_w * in_w
        b = theta[pos:pos + out_w]
        pos += out_w
        layers.append((w, b))
    return layers


def _mlp_forward(layers: list[tuple[Vector, Vector]], inputs: Vector) -> Vector:
    act = inputs
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        pre = act @ w.T + b
        act = np.tanh(pre) if i < last else pre
    return act


def _mlp_value_grad(theta: Vector, widths: list[int], inputs: Vector,
                    targets: Vector) -> tuple[float, Vector]:
    layers = _mlp_unpack(theta, widths)
    acts = [inputs]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        pre = acts[-1] @ w.T + b
        acts.append(np.tanh(pre) if i < last else pre)
    resid = acts[-1] - targets
    value = float(np.mean(resid * resid))

    # mean over all output entries, so the loss is linear in per-sample terms
    delta = 2.0 * resid / resid.size
    grads: list[tuple[Vector, Vector]] = []
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ w) * (1.0 - acts[i] * acts[i])
    grads.reverse()
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return value, flat


def make_mlp(layer_widths: list[int], dataset_size: int, noise_std: float = 0.0,
             seed: int = 0) -> Objective:
    """Mean-squared-error objective over the parameters of a small tanh MLP.

    The dataset is synthetic and fully reproducible: inputs are uniform in
    [-1, 1]^d drawn from ``seed``, targets come from a teacher network whose
    weights are standard normal drawn from ``seed + 1``, plus Gaussian noise
    drawn from ``seed + 2``. Gradients use manual backpropagation, and
    mini-batch gradients average over a seeded subset of the rows.
    """
    widths = [int(w) for w in layer_widths]
    if len(widths) < 3:
        raise ValueError("layer_widths must be [input, hidden..., output] "
                         "with at least one hidden layer")
    if any(w < 1 for w in widths):
        raise ValueError("all layer widths must be positive")
    if dataset_size < 1:
        raise ValueError("dataset_size must be a positive integer")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")

    inputs = np.random.default_rng(seed).uniform(
        -1.0, 1.0, size=(dataset_size, widths[0]))
    teacher = np.random.default_rng(seed + 1).standard_normal(
        _mlp_param_count(widths))
    targets = _mlp_forward(_mlp_unpack(teacher, widths), inputs)
    if noise_std > 0:
        targets = targets + noise_std * np.random.default_rng(
            seed + 2).standard_normal(targets.shape)

    def value(theta: Vector) -> float:
        pred = _mlp_forward(_mlp_unpack(np.asarray(theta, dtype=float), widths),
                            inputs)
        resid = pred - targets
        return float(np.mean(resid * resid))

    def gradient(theta: Vector) -> Vector:
        return _mlp_value_grad(np.asarray(theta, dtype=float), widths,
                               inputs, targets)[1]

    def batch_gradient(theta: Vector, idx: np.ndarray) -> Vector:
        return _mlp_value_grad(np.asarray(theta, dtype=float), widths,
                               inputs[idx], targets[idx])[1]

    return Objective(
        dimension=_mlp_param_count(widths),
        value=value,
        gradient=gradient,
        metadata=None,
        batch_support=True,
        batch_gradient=batch_gradient,
        name="mlp",
        aux={
            "layer_widths": tuple(widths),
            "teacher_params": teacher,
            "dataset_size": int(dataset_size),
            "noise_std": float(noise_std),
        },
    )


def finite_difference_check(obj: Objective, x: Vector, h: float) -> float:
    """Max relative disagreement between the gradient and central differences.

    Returns max_i |g_i - d_i| / max(1, |d_i|) where d is the central
    difference with step h. Raises if a perturbed value is non-finite,
    naming the offending coordinate.
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(obj.gradient(x), dtype=float)
    worst = 0.0
    for i in range(obj.dimension):
        step = np.zeros_like(x)
        step[i] = h
        f_plus = float(obj.value(x + step))
        f_minus = float(obj.value(x - step))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(
                f"non-finite objective value while differencing coordinate {i}")
        diff = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, abs(grad[i] - diff) / max(1.0, abs(diff)))
    return worst
