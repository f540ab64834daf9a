"""Discrete-time steppers, the run loop, and a fixed-step reference integrator."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .flows import FlowSpec, flow_eval
from .objectives import BatchContext, Objective

SCHEMES = ("euler", "rk", "nesterov", "gd", "nagd", "adam")
_FLOW_SCHEMES = ("euler", "rk", "nesterov")

TERMINAL_GRAD_TOL = "grad_tol"
TERMINAL_F_TOL = "f_tol"
TERMINAL_MAX_ITERS = "max_iters"
TERMINAL_WALL_LIMIT = "wall_limit"
TERMINAL_NUMERICAL_FAILURE = "numerical_failure"


class NumericalFailure(RuntimeError):
    """A stepper produced a non-finite iterate."""


def _fast_norm2(v: np.ndarray) -> float:
    sq = float(v @ v)
    if math.isfinite(sq):
        return math.sqrt(sq)
    a = np.abs(v)
    if np.all(np.isfinite(a)):
        peak = float(a.max())
        scaled = v / peak
        return peak * math.sqrt(float(scaled @ scaled))
    return math.nan if np.isnan(a).any() else math.inf


@dataclass(frozen=True)
class DiscretizerConfig:
    """One discrete optimization scheme plus its hyperparameters.

    ``flow`` is required for the flow-driven schemes (euler, rk, nesterov)
    and must be absent for the baselines (gd, nagd, adam). Runge-Kutta
    stage weights must satisfy the consistency condition sum(alphas) = 1;
    violations are rejected here, never at step time.
    """

    scheme: str
    eta: float
    beta: float = 0.0
    flow: FlowSpec | None = None
    stages: int = 1
    alphas: tuple[float, ...] = (1.0,)
    betas: tuple[float, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.eta < 0:
            raise ValueError(f"step size eta must be non-negative, got {self.eta}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"momentum beta must lie in [0, 1), got {self.beta}")
        if self.scheme in _FLOW_SCHEMES:
            if self.flow is None:
                raise ValueError(f"scheme {self.scheme!r} requires a flow")
        elif self.flow is not None:
            raise ValueError(f"scheme {self.scheme!r} does not take a flow")
        if self.scheme == "rk":
            object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
            if self.stages < 1:
                raise ValueError("stage count must be at least 1")
            if len(self.alphas) != self.stages:
                raise ValueError(f"expected {self.stages} stage weights, got {len(self.alphas)}")
            if len(self.betas) != self.stages - 1:
                raise ValueError(f"expected {self.stages - 1} stage offsets, got {len(self.betas)}")
            if abs(math.fsum(self.alphas) - 1.0) > 1e-12:
                raise ValueError(
                    f"stage weights must sum to 1 (consistency condition), got {math.fsum(self.alphas)!r}")
        if self.scheme == "adam":
            if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
                raise ValueError("adam moment coefficients must lie in [0, 1)")
            if not self.epsilon > 0:
                raise ValueError("adam epsilon must be positive")


@dataclass(frozen=True)
class StopCriteria:
    """Run termination rules; checked in the order grad_tol, f_tol, max_iters.

    A tolerance of zero disables that rule. ``f_tol`` applies to f - f_star
    and is only active when the objective carries optimum metadata.
    """

    max_iters: int
    grad_tol: float = 0.0
    f_tol: float = 0.0
    wall_limit: float | None = None

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.grad_tol < 0 or self.f_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.wall_limit is not None and not self.wall_limit > 0:
            raise ValueError("wall_limit must be positive when set")


@dataclass
class StepperState:
    """Mutable per-run state: iterate, momentum memory, Adam moments, counter."""

    x: np.ndarray
    y: np.ndarray
    m: np.ndarray
    v: np.ndarray
    k: int = 0


def init_state(x0: np.ndarray) -> StepperState:
    x0 = np.asarray(x0, dtype=float).copy()
    zeros = np.zeros_like(x0)
    return StepperState(x=x0, y=zeros.copy(), m=zeros.copy(), v=zeros.copy(), k=0)


def _ensure_finite(x: np.ndarray, scheme: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"{scheme} step produced a non-finite iterate")


def step_euler(cfg: DiscretizerConfig, obj: Objective, state: StepperState,
               grad: np.ndarray | None = None) -> StepperState:
    """x <- x + eta * F(x) for the configured flow.

    ``grad``, when given, must be the gradient at the current iterate; it
    saves a re-evaluation when the caller already observed it.
    """
    if grad is None:
        grad = obj.gradient(state.x)
    v = flow_eval(cfg.flow, grad)
    x_next = state.x + cfg.eta * v
    _ensure_finite(x_next, "euler")
    return StepperState(x=x_next, y=state.y, m=state.m, v=state.v, k=state.k + 1)


def step_rk(cfg: DiscretizerConfig, obj: Objective, state: StepperState,
            grad: np.ndarray | None = None) -> StepperState:
    """Explicit multi-stage step.

    Stage 1 sits at the current iterate; stage i adds eta times the running
    beta-weighted sum of earlier stage velocities. The update combines all
    stage velocities with the alpha weights.
    """
    x = state.x
    velocities: list[np.ndarray] = []
    offset = np.zeros_like(x)
    point = x
    for i in range(cfg.stages):
        if i > 0:
            offset = offset + cfg.betas[i - 1] * velocities[i - 1]
            point = x + cfg.eta * offset
            stage_grad = obj.gradient(point)
        else:
            stage_grad = obj.gradient(point) if grad is None else grad
        velocities.append(flow_eval(cfg.flow, stage_grad))
        _ensure_finite(velocities[-1], "rk")
    update = velocities[0] * cfg.alphas[0]
    for alpha, vel in zip(cfg.alphas[1:], velocities[1:]):
        update = update + alpha * vel
    x_next = x + cfg.eta * update
    _ensure_finite(x_next, "rk")
    return StepperState(x=x_next, y=state.y, m=state.m, v=state.v, k=state.k + 1)


def step_nesterov_like(cfg: DiscretizerConfig, obj: Objective, state: StepperState) -> StepperState:
    """Momentum step that evaluates the flow at the look-ahead point.

    x_{k+1} = x_k + beta*y_k + eta * F(x_k + beta*y_k), y_{k+1} = x_{k+1} - x_k.
    With the plain gradient flow this reproduces Nesterov-accelerated descent.
    """
    look_ahead = state.x + cfg.beta * state.y
    v = flow_eval(cfg.flow, obj.gradient(look_ahead))
    x_next = look_ahead + cfg.eta * v
    _ensure_finite(x_next, "nesterov")
    return StepperState(x=x_next, y=x_next - state.x, m=state.m, v=state.v, k=state.k + 1)


def step_gd(cfg: DiscretizerConfig, obj: Objective, state: StepperState,
            grad: np.ndarray | None = None) -> StepperState:
    """Plain gradient descent, x <- x - eta * grad f(x)."""
    if grad is None:
        grad = obj.gradient(state.x)
    x_next = state.x - cfg.eta * grad
    _ensure_finite(x_next, "gd")
    return StepperState(x=x_next, y=state.y, m=state.m, v=state.v, k=state.k + 1)


def step_nagd(cfg: DiscretizerConfig, obj: Objective, state: StepperState) -> StepperState:
    """Nesterov-accelerated gradient descent with constant eta and beta."""
    look_ahead = state.x + cfg.beta * state.y
    x_next = look_ahead - cfg.eta * obj.gradient(look_ahead)
    _ensure_finite(x_next, "nagd")
    return StepperState(x=x_next, y=x_next - state.x, m=state.m, v=state.v, k=state.k + 1)


def step_adam(cfg: DiscretizerConfig, obj: Objective, state: StepperState,
              grad: np.ndarray | None = None) -> StepperState:
    """Adam with bias-corrected first and second moment estimates."""
    g = obj.gradient(state.x) if grad is None else grad
    k_next = state.k + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** k_next)
    v_hat = v / (1.0 - cfg.beta2 ** k_next)
    x_next = state.x - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    _ensure_finite(x_next, "adam")
    return StepperState(x=x_next, y=state.y, m=m, v=v, k=k_next)


_STEPPERS = {
    "euler": step_euler,
    "rk": step_rk,
    "nesterov": step_nesterov_like,
    "gd": step_gd,
    "nagd": step_nagd,
    "adam": step_adam,
}


def make_step(cfg: DiscretizerConfig):
    return _STEPPERS[cfg.scheme]


@dataclass
class Trajectory:
    """Column-wise record of one run: per iterate index, time, state, cost,
    gradient norms, and wall seconds, plus why the run stopped."""

    k: np.ndarray
    t: np.ndarray
    x: np.ndarray
    f: np.ndarray
    grad_norm2: np.ndarray
    grad_norm1: np.ndarray
    wall_s: np.ndarray
    terminal_reason: str

    def __len__(self) -> int:
        return len(self.k)

    def records(self) -> Iterator[tuple]:
        for i in range(len(self.k)):
            yield (int(self.k[i]), float(self.t[i]), self.x[i],
                   float(self.f[i]), float(self.grad_norm2[i]),
                   float(self.grad_norm1[i]), float(self.wall_s[i]))

    def f_gap(self, f_star: float | None = None) -> np.ndarray:
        if f_star is None:
            f_star = math.nan
        return self.f - f_star


class _TrajectoryBuilder:
    def __init__(self, dimension: int):
        self.k: list[int] = []
        self.t: list[float] = []
        self.x: list[np.ndarray] = []
        self.f: list[float] = []
        self.gn2: list[float] = []
        self.gn1: list[float] = []
        self.wall: list[float] = []
        self._dim = dimension

    def append(self, k: int, t: float, x: np.ndarray, f: float,
               gn2: float, gn1: float, wall: float) -> None:
        self.k.append(k)
        self.t.append(t)
        self.x.append(np.asarray(x, dtype=float).copy())
        self.f.append(f)
        self.gn2.append(gn2)
        self.gn1.append(gn1)
        self.wall.append(wall)

    def build(self, reason: str) -> Trajectory:
        n = len(self.k)
        x = np.asarray(self.x) if n else np.zeros((0, self._dim))
        return Trajectory(
            k=np.asarray(self.k, dtype=int),
            t=np.asarray(self.t, dtype=float),
            x=x,
            f=np.asarray(self.f, dtype=float),
            grad_norm2=np.asarray(self.gn2, dtype=float),
            grad_norm1=np.asarray(self.gn1, dtype=float),
            wall_s=np.asarray(self.wall, dtype=float),
            terminal_reason=reason,
        )


def _stop_reason(stop: StopCriteria, obj: Objective, k: int, f: float,
                 gn2: float, elapsed: float) -> str | None:
    if stop.grad_tol > 0 and gn2 <= stop.grad_tol:
        return TERMINAL_GRAD_TOL
    if (stop.f_tol > 0 and obj.metadata is not None
            and f - obj.metadata.f_star <= stop.f_tol):
        return TERMINAL_F_TOL
    if k >= stop.max_iters:
        return TERMINAL_MAX_ITERS
    if stop.wall_limit is not None and elapsed >= stop.wall_limit:
        return TERMINAL_WALL_LIMIT
    return None


def run(cfg: DiscretizerConfig, obj: Objective, x0: np.ndarray, stop: StopCriteria,
        batch: BatchContext | None = None) -> Trajectory:
    """Iterate the configured stepper from x0 until a stop criterion fires.

    Every iterate is recorded with the full-objective value and gradient
    norms (also in mini-batch mode, so recorded metrics always refer to the
    true cost). When ``batch`` is given, the stepper sees the mini-batch
    gradient for its step index; the run is then a pure function of
    (cfg, obj, x0, stop, batch.rng_seed).
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (obj.dimension,):
        raise ValueError(f"x0 must have shape ({obj.dimension},), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if batch is not None and not obj.batch_support:
        raise ValueError(f"objective {obj.name!r} does not support mini-batch gradients")

    step_fn = make_step(cfg)
    # these schemes step from the gradient at the current iterate, which the
    # record pass has already computed (full-batch runs only)
    reuse_grad = batch is None and cfg.scheme in ("euler", "rk", "gd", "adam")
    state = init_state(x0)
    builder = _TrajectoryBuilder(obj.dimension)
    t_start = time.perf_counter()

    def observe(x: np.ndarray, k: int) -> tuple[float, float, np.ndarray]:
        g = np.asarray(obj.gradient(x), dtype=float)
        f = float(obj.value(x))
        gn2 = _fast_norm2(g)
        builder.append(k, k * cfg.eta, x, f, gn2,
                       float(np.abs(g).sum()), time.perf_counter() - t_start)
        return f, gn2, g

    f, gn2, g = observe(state.x, 0)
    reason = None
    while True:
        if not (math.isfinite(f) and math.isfinite(gn2)):
            reason = TERMINAL_NUMERICAL_FAILURE
            break
        reason = _stop_reason(stop, obj, state.k, f, gn2,
                              time.perf_counter() - t_start)
        if reason is not None:
            break
        step_obj = obj
        if batch is not None:
            idx = batch.indices(state.k)
            step_obj = replace(
                obj, gradient=lambda z, _i=idx: obj.batch_gradient(z, _i))
        try:
            if reuse_grad:
                state = step_fn(cfg, step_obj, state, grad=g)
            else:
                state = step_fn(cfg, step_obj, state)
        except NumericalFailure:
            reason = TERMINAL_NUMERICAL_FAILURE
            break
        f, gn2, g = observe(state.x, state.k)
    return builder.build(reason)


def integrate_reference(flow: FlowSpec, obj: Objective, x0: np.ndarray,
                        h_ref: float, stop: StopCriteria) -> Trajectory:
    """Classical 4-stage fixed-step integration of dx/dt = F(grad f(x)).

    Intended as the near-exact continuous trajectory against which discrete
    runs are compared, so ``h_ref`` should be much smaller than any discrete
    step size under study. Dense output is recorded every step. Stops at the
    first iterate with gradient norm below ``stop.grad_tol`` (finite-time
    arrival) or after ``stop.max_iters`` steps.

    Near arrival the flows are not Lipschitz; any stage whose speed exceeds
    a thousand times the previous per-step displacement rate is clamped to
    that rate, which keeps a single wild stage from hurling the iterate
    across the equilibrium.
    """
    if not h_ref > 0:
        raise ValueError("h_ref must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (obj.dimension,):
        raise ValueError(f"x0 must have shape ({obj.dimension},), got {x.shape}")

    builder = _TrajectoryBuilder(obj.dimension)
    t_start = time.perf_counter()

    def observe(xv: np.ndarray, k: int) -> tuple[float, float, np.ndarray]:
        g = np.asarray(obj.gradient(xv), dtype=float)
        f = float(obj.value(xv))
        gn2 = _fast_norm2(g)
        builder.append(k, k * h_ref, xv, f, gn2, float(np.abs(g).sum()),
                       time.perf_counter() - t_start)
        return f, gn2, g

    f, gn2, g = observe(x, 0)
    prev_x: np.ndarray | None = None
    k = 0
    reason = None
    while True:
        if not (math.isfinite(f) and math.isfinite(gn2)):
            reason = TERMINAL_NUMERICAL_FAILURE
            break
        if stop.grad_tol > 0 and gn2 <= stop.grad_tol:
            reason = TERMINAL_GRAD_TOL
            break
        if k >= stop.max_iters:
            reason = TERMINAL_MAX_ITERS
            break

        speed_cap = None
        if prev_x is not None:
            speed_cap = _fast_norm2(x - prev_x) / h_ref * 1e3

        def clamp(v: np.ndarray) -> np.ndarray:
            if speed_cap is not None:
                speed = _fast_norm2(v)
                if speed > speed_cap:
                    v = v * (speed_cap / speed) if speed_cap > 0 else np.zeros_like(v)
            return v

        def velocity(z: np.ndarray) -> np.ndarray:
            return clamp(flow_eval(flow, obj.gradient(z)))

        v1 = clamp(flow_eval(flow, g))
        v2 = velocity(x + 0.5 * h_ref * v1)
        v3 = velocity(x + 0.5 * h_ref * v2)
        v4 = velocity(x + h_ref * v3)
        x_next = x + (h_ref / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        if not math.isfinite(float(x_next @ x_next)) and not np.all(np.isfinite(x_next)):
            reason = TERMINAL_NUMERICAL_FAILURE
            break
        prev_x = x
        x = x_next
        k += 1
        f, gn2, g = observe(x, k)
    return builder.build(reason)
