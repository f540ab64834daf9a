import math

import numpy as np
import pytest

from finiteflow import (BatchContext, DiscretizerConfig, FlowSpec,
                        NumericalFailure, Objective, StopCriteria, flow_eval,
                        init_state, integrate_reference, make_mlp,
                        make_quadratic, make_rosenbrock, run, step_adam,
                        step_euler, step_gd, step_nagd, step_nesterov_like,
                        step_rk)
from finiteflow.integrators import make_step

QUAD2 = make_quadratic(1.0, 2)
ROSEN = make_rosenbrock(1.0, 100.0)


def iterate(cfg, obj, x0, n):
    state = init_state(np.asarray(x0, dtype=float))
    step = make_step(cfg)
    xs = [state.x.copy()]
    for _ in range(n):
        state = step(cfg, obj, state)
        xs.append(state.x.copy())
    return np.array(xs)


def linear_objective(slope=1.0):
    return Objective(dimension=1,
                     value=lambda x: slope * float(x[0]),
                     gradient=lambda x: np.array([slope]))


class TestEuler:
    def test_zero_step_size_leaves_iterate(self):
        cfg = DiscretizerConfig(scheme="euler", eta=0.0, flow=FlowSpec("rgf", q=3.0))
        state = init_state(np.array([1.0, 2.0]))
        assert np.array_equal(step_euler(cfg, QUAD2, state).x, [1.0, 2.0])

    def test_gradient_flow_matches_gd_bitwise(self):
        a = iterate(DiscretizerConfig(scheme="euler", eta=0.1, flow=FlowSpec("gf")),
                    QUAD2, [1.0, 0.5], 100)
        b = iterate(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2, [1.0, 0.5], 100)
        assert np.array_equal(a, b)

    def test_rescaled_step_hand_evaluated(self):
        cfg = DiscretizerConfig(scheme="euler", eta=0.1, flow=FlowSpec("rgf", q=3.0))
        state = init_state(np.array([1.0, 0.0]))
        assert np.allclose(step_euler(cfg, QUAD2, state).x, [0.9, 0.0],
                           rtol=0, atol=1e-15)


class TestRungeKutta:
    def test_single_stage_equals_euler(self):
        rk = DiscretizerConfig(scheme="rk", eta=0.01, flow=FlowSpec("rgf", q=3.0),
                               stages=1, alphas=(1.0,), betas=())
        eu = DiscretizerConfig(scheme="euler", eta=0.01, flow=FlowSpec("rgf", q=3.0))
        assert np.array_equal(iterate(rk, ROSEN, [0.2, 0.3], 100),
                              iterate(eu, ROSEN, [0.2, 0.3], 100))

    def test_two_stage_matches_hand_rolled_oracle(self):
        flow = FlowSpec("rgf", q=3.0)
        eta, b1 = 1e-2, 0.09
        cfg = DiscretizerConfig(scheme="rk", eta=eta, flow=flow, stages=2,
                                alphas=(0.5, 0.5), betas=(b1,))
        x = np.array([0.4, -0.8])

        # independent re-implementation of the two-stage scheme
        v1 = flow_eval(flow, QUAD2.gradient(x))
        y2 = x + eta * b1 * v1
        v2 = flow_eval(flow, QUAD2.gradient(y2))
        expected = x + eta * (0.5 * v1 + 0.5 * v2)

        state = init_state(x)
        assert np.allclose(step_rk(cfg, QUAD2, state).x, expected, rtol=0, atol=1e-16)

    def test_zero_offsets_collapse_to_euler(self):
        rk = DiscretizerConfig(scheme="rk", eta=0.01, flow=FlowSpec("sgf", q=4.0),
                               stages=3, alphas=(0.25, 0.5, 0.25), betas=(0.0, 0.0))
        eu = DiscretizerConfig(scheme="euler", eta=0.01, flow=FlowSpec("sgf", q=4.0))
        got = iterate(rk, QUAD2, [1.0, 0.7], 50)
        want = iterate(eu, QUAD2, [1.0, 0.7], 50)
        assert np.allclose(got, want, rtol=0, atol=1e-15)

    def test_inconsistent_weights_rejected_at_construction(self):
        with pytest.raises(ValueError, match="consistency"):
            DiscretizerConfig(scheme="rk", eta=0.01, flow=FlowSpec("rgf", q=3.0),
                              stages=2, alphas=(0.6, 0.6), betas=(0.09,))

    def test_weight_count_must_match_stages(self):
        with pytest.raises(ValueError):
            DiscretizerConfig(scheme="rk", eta=0.01, flow=FlowSpec("rgf", q=3.0),
                              stages=2, alphas=(1.0,), betas=())


class TestNesterovLike:
    def test_first_step_with_zero_memory_equals_euler(self):
        flow = FlowSpec("rgf", q=3.0)
        nes = DiscretizerConfig(scheme="nesterov", eta=0.05, beta=0.9, flow=flow)
        eu = DiscretizerConfig(scheme="euler", eta=0.05, flow=flow)
        s_n = step_nesterov_like(nes, QUAD2, init_state(np.array([1.0, 0.5])))
        s_e = step_euler(eu, QUAD2, init_state(np.array([1.0, 0.5])))
        assert np.array_equal(s_n.x, s_e.x)

    def test_zero_momentum_always_equals_euler(self):
        flow = FlowSpec("sgf", q=3.0)
        nes = DiscretizerConfig(scheme="nesterov", eta=0.01, beta=0.0, flow=flow)
        eu = DiscretizerConfig(scheme="euler", eta=0.01, flow=flow)
        assert np.array_equal(iterate(nes, ROSEN, [0.2, 0.3], 100),
                              iterate(eu, ROSEN, [0.2, 0.3], 100))

    @pytest.mark.parametrize("obj,x0,eta", [(QUAD2, [1.0, 0.5], 0.1),
                                            (ROSEN, [0.2, 0.3], 1e-3)])
    def test_gradient_flow_reproduces_nagd(self, obj, x0, eta):
        nes = DiscretizerConfig(scheme="nesterov", eta=eta, beta=0.9,
                                flow=FlowSpec("gf"))
        nag = DiscretizerConfig(scheme="nagd", eta=eta, beta=0.9)
        a = iterate(nes, obj, x0, 100)
        b = iterate(nag, obj, x0, 100)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_momentum_memory_is_iterate_difference(self):
        cfg = DiscretizerConfig(scheme="nesterov", eta=0.05, beta=0.8,
                                flow=FlowSpec("rgf", q=3.0))
        state = init_state(np.array([1.0, -0.5]))
        for _ in range(20):
            prev_x = state.x.copy()
            state = step_nesterov_like(cfg, QUAD2, state)
            assert np.array_equal(state.y, state.x - prev_x)


class TestNagd:
    def test_zero_momentum_reduces_to_gd(self):
        assert np.array_equal(
            iterate(DiscretizerConfig(scheme="nagd", eta=1e-3, beta=0.0), ROSEN,
                    [0.2, 0.3], 100),
            iterate(DiscretizerConfig(scheme="gd", eta=1e-3), ROSEN,
                    [0.2, 0.3], 100))

    def test_first_step_with_zero_memory_is_gd_step(self):
        cfg = DiscretizerConfig(scheme="nagd", eta=0.1, beta=0.9)
        got = step_nagd(cfg, QUAD2, init_state(np.array([1.0, 0.0])))
        want = step_gd(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                       init_state(np.array([1.0, 0.0])))
        assert np.array_equal(got.x, want.x)

    def test_two_steps_hand_traced(self):
        cfg = DiscretizerConfig(scheme="nagd", eta=0.1, beta=0.9)
        state = init_state(np.array([1.0, 0.0]))
        state = step_nagd(cfg, QUAD2, state)
        assert np.allclose(state.x, [0.9, 0.0], rtol=0, atol=1e-16)
        state = step_nagd(cfg, QUAD2, state)
        assert np.allclose(state.x, [0.729, 0.0], rtol=0, atol=1e-15)


class TestGd:
    def test_step_hand_evaluated(self):
        got = step_gd(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                      init_state(np.array([1.0, 0.0])))
        assert np.allclose(got.x, [0.9, 0.0], rtol=0, atol=1e-16)

    def test_zero_step_size(self):
        got = step_gd(DiscretizerConfig(scheme="gd", eta=0.0), QUAD2,
                      init_state(np.array([1.0, 2.0])))
        assert np.array_equal(got.x, [1.0, 2.0])

    def test_stationary_point_is_fixed(self):
        got = step_gd(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                      init_state(np.zeros(2)))
        assert np.array_equal(got.x, np.zeros(2))


class TestAdam:
    def test_persistent_zero_gradient_leaves_iterate(self):
        obj = make_quadratic(1.0, 2)
        cfg = DiscretizerConfig(scheme="adam", eta=0.1)
        state = init_state(np.zeros(2))
        for _ in range(5):
            state = step_adam(cfg, obj, state)
        assert np.array_equal(state.x, np.zeros(2))

    def test_memoryless_degenerate_case(self):
        cfg = DiscretizerConfig(scheme="adam", eta=0.1, beta1=0.0, beta2=0.0,
                                epsilon=1e-8)
        state = init_state(np.array([2.0, -3.0]))
        got = step_adam(cfg, QUAD2, state)
        g = QUAD2.gradient(np.array([2.0, -3.0]))
        want = np.array([2.0, -3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
        assert np.allclose(got.x, want, rtol=1e-15)

    def test_first_step_bias_correction(self):
        cfg = DiscretizerConfig(scheme="adam", eta=0.1, beta1=0.9, beta2=0.999,
                                epsilon=1e-8)
        state = init_state(np.array([5.0]))
        got = step_adam(cfg, linear_objective(1.0), state)
        # bias-corrected moments both equal the raw gradient on step one
        assert got.x[0] == pytest.approx(5.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)


class TestFixedPoints:
    @pytest.mark.parametrize("cfg", [
        DiscretizerConfig(scheme="euler", eta=0.1, flow=FlowSpec("rgf", q=3.0)),
        DiscretizerConfig(scheme="rk", eta=0.1, flow=FlowSpec("sgf", q=3.0),
                          stages=2, alphas=(0.5, 0.5), betas=(0.09,)),
        DiscretizerConfig(scheme="nesterov", eta=0.1, beta=0.9,
                          flow=FlowSpec("rgf", q=math.inf)),
        DiscretizerConfig(scheme="gd", eta=0.1),
        DiscretizerConfig(scheme="nagd", eta=0.1, beta=0.9),
        DiscretizerConfig(scheme="adam", eta=0.1),
    ])
    def test_zero_gradient_zero_memory_state_is_fixed(self, cfg):
        state = init_state(np.zeros(2))
        new = make_step(cfg)(cfg, QUAD2, state)
        assert np.array_equal(new.x, np.zeros(2))


def descent_guarantee_floor(spec: FlowSpec, eta: float, mu: float, dim: int) -> float:
    """Gradient-norm level above which one Euler step on the quadratic is a
    strict descent step; from the exact quadratic expansion
    f(x + eta*v) - f(x) = eta*<g, v> + eta^2 * mu * ||v||^2 / 2."""
    if spec.kind == "gf":
        return 0.0 if eta < 2.0 / mu else math.inf
    if spec.kind == "rgf":
        if math.isinf(spec.q):
            return eta * mu * spec.c / 2.0
        if spec.q == 2.0:
            return 0.0 if eta * spec.c < 2.0 / mu else math.inf
        return (eta * mu * spec.c / 2.0) ** ((spec.q - 1.0) / (spec.q - 2.0))
    # signed flow: measured in the l1 norm, worst case all components active
    base = eta * mu * spec.c * dim / 2.0
    if math.isinf(spec.q):
        return base
    return base ** ((spec.q - 1.0) / (spec.q - 2.0))


class TestMonotoneDescent:
    @pytest.mark.parametrize("kind", ["gf", "rgf", "sgf"])
    @pytest.mark.parametrize("q", [2.1, 3.0, 6.0, 10.0, math.inf])
    @pytest.mark.parametrize("eta", [0.1, 0.05])
    def test_euler_descends_on_quadratic_above_guarantee_floor(self, kind, q, eta):
        obj = make_quadratic(1.0, 2)
        spec = FlowSpec(kind) if kind == "gf" else FlowSpec(kind, q=q)
        cfg = DiscretizerConfig(scheme="euler", eta=eta, flow=spec)
        floor = descent_guarantee_floor(spec, eta, 1.0, 2)
        state = init_state(np.array([1.0, 0.7]))
        checked = 0
        for _ in range(40):
            g = obj.gradient(state.x)
            level = np.abs(g).sum() if kind == "sgf" else np.linalg.norm(g)
            f_before = obj.value(state.x)
            state = step_euler(cfg, obj, state)
            if level > floor * (1.0 + 1e-9) and level > spec.grad_threshold:
                assert obj.value(state.x) < f_before
                checked += 1
        assert checked >= 5


class TestRun:
    def test_zero_iteration_budget_keeps_initial_record(self):
        traj = run(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                   np.array([1.0, 0.0]), StopCriteria(max_iters=0))
        assert len(traj) == 1
        assert traj.terminal_reason == "max_iters"
        assert np.array_equal(traj.x[0], [1.0, 0.0])

    def test_geometric_decay_reaches_tolerance_in_132_steps(self):
        # closed form: x_k = 0.9^k, so ||g|| <= 1e-6 first at ceil(ln 1e-6 / ln 0.9)
        expected = math.ceil(math.log(1e-6) / math.log(0.9))
        assert expected == 132
        traj = run(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                   np.array([1.0, 0.0]),
                   StopCriteria(max_iters=10 ** 5, grad_tol=1e-6))
        assert traj.terminal_reason == "grad_tol"
        assert traj.k[-1] == expected
        assert len(traj) == expected + 1

    def test_replay_is_bit_identical(self):
        cfg = DiscretizerConfig(scheme="nesterov", eta=1e-3, beta=0.9,
                                flow=FlowSpec("sgf", q=3.0))
        stop = StopCriteria(max_iters=500)
        a = run(cfg, ROSEN, np.array([0.5, 0.5]), stop)
        b = run(cfg, ROSEN, np.array([0.5, 0.5]), stop)
        for field in ("k", "t", "x", "f", "grad_norm2", "grad_norm1"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_stochastic_run_is_pure_function_of_seed(self):
        obj = make_mlp([2, 4, 1], 32, noise_std=0.1, seed=3)
        cfg = DiscretizerConfig(scheme="nagd", eta=0.05, beta=0.9)
        stop = StopCriteria(max_iters=200)
        ctx = BatchContext(rng_seed=17, batch_size=8, dataset_size=32)
        x0 = np.random.default_rng(1).normal(size=obj.dimension)
        a = run(cfg, obj, x0, stop, batch=ctx)
        b = run(cfg, obj, x0, stop, batch=ctx)
        assert np.array_equal(a.x, b.x)
        other = run(cfg, obj, x0, stop,
                    batch=BatchContext(rng_seed=18, batch_size=8, dataset_size=32))
        assert not np.array_equal(a.x, other.x)

    def test_batch_requires_support(self):
        with pytest.raises(ValueError):
            run(DiscretizerConfig(scheme="gd", eta=0.1), QUAD2,
                np.array([1.0, 0.0]), StopCriteria(max_iters=10),
                batch=BatchContext(rng_seed=0, batch_size=1, dataset_size=2))

    def test_record_times_strictly_increase(self):
        traj = run(DiscretizerConfig(scheme="gd", eta=0.05), QUAD2,
                   np.array([1.0, 0.0]), StopCriteria(max_iters=50))
        assert np.all(np.diff(traj.t) > 0)

    def test_wall_limit_stops_the_run(self):
        traj = run(DiscretizerConfig(scheme="gd", eta=0.05), QUAD2,
                   np.array([1.0, 0.0]),
                   StopCriteria(max_iters=10 ** 9, wall_limit=1e-9))
        assert traj.terminal_reason == "wall_limit"
        assert len(traj) >= 1

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_numerical_failure_retains_partial_trajectory(self):
        exploding = Objective(dimension=1,
                              value=lambda x: float(x[0] ** 2),
                              gradient=lambda x: np.array([-x[0] ** 3]))
        traj = run(DiscretizerConfig(scheme="gd", eta=10.0), exploding,
                   np.array([2.0]), StopCriteria(max_iters=10 ** 4))
        assert traj.terminal_reason == "numerical_failure"
        assert 1 <= len(traj) < 200


class TestIntegrateReference:
    def test_arrival_time_matches_closed_form_crossing(self):
        # |x|' = -|x|^(1/2) gives x(t) = (1 - t/2)^2, so |x| first reaches
        # 1e-6 at t = 2 - 2*sqrt(1e-6); the settling instant itself is 2.0
        obj = make_quadratic(1.0, 1)
        traj = integrate_reference(FlowSpec("rgf", q=3.0), obj, np.array([1.0]),
                                   1e-4, StopCriteria(max_iters=40000, grad_tol=1e-6))
        assert traj.terminal_reason == "grad_tol"
        assert abs(traj.t[-1] - (2.0 - 2.0 * math.sqrt(1e-6))) <= 1e-3
        assert abs(traj.t[-1] - 2.0) <= 3e-3

    def test_equilibrium_start_stays_put(self):
        obj = make_quadratic(1.0, 2)
        traj = integrate_reference(FlowSpec("rgf", q=3.0), obj, np.zeros(2),
                                   1e-3, StopCriteria(max_iters=100, grad_tol=1e-8))
        assert np.array_equal(traj.x[-1], np.zeros(2))

    def test_step_halving_barely_moves_arrival(self):
        obj = make_quadratic(1.0, 1)
        stop = StopCriteria(max_iters=90000, grad_tol=1e-6)
        t_a = integrate_reference(FlowSpec("rgf", q=3.0), obj, np.array([1.0]),
                                  1e-4, stop).t[-1]
        t_b = integrate_reference(FlowSpec("rgf", q=3.0), obj, np.array([1.0]),
                                  5e-5, stop).t[-1]
        assert abs(t_a - t_b) < 1e-4

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            integrate_reference(FlowSpec("gf"), QUAD2, np.zeros(2), 0.0,
                                StopCriteria(max_iters=10))


class TestConfigValidation:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            DiscretizerConfig(scheme="sgd", eta=0.1)

    def test_flow_required_for_flow_schemes(self):
        with pytest.raises(ValueError):
            DiscretizerConfig(scheme="euler", eta=0.1)

    def test_flow_forbidden_for_baselines(self):
        with pytest.raises(ValueError):
            DiscretizerConfig(scheme="gd", eta=0.1, flow=FlowSpec("gf"))

    def test_momentum_range(self):
        with pytest.raises(ValueError):
            DiscretizerConfig(scheme="nagd", eta=0.1, beta=1.0)

    def test_stop_criteria_validation(self):
        with pytest.raises(ValueError):
            StopCriteria(max_iters=-1)
        with pytest.raises(ValueError):
            StopCriteria(max_iters=10, grad_tol=-1.0)
        with pytest.raises(ValueError):
            StopCriteria(max_iters=10, wall_limit=0.0)

    def test_nonfinite_stepper_result_raises(self):
        bad = Objective(dimension=1, value=lambda x: float(x[0]),
                        gradient=lambda x: np.array([math.nan]))
        with pytest.raises(NumericalFailure):
            step_gd(DiscretizerConfig(scheme="gd", eta=0.1), bad,
                    init_state(np.array([1.0])))
