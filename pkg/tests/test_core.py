import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradopt.core import (
    Box,
    SfogdState,
    estimate_gradient,
    make_epoch_schedule,
    make_rng,
    project_box,
    run_gradopt,
    sfogd_step,
    smoothed_value,
)
from gradopt.errors import EvaluationFailedError, InvalidArgumentError


def sphere(x):
    return float(np.dot(x, x))


def reference_gradopt(f, lower, upper, budget, num_epochs, seed):
    """Loop-by-loop GradOpt written from the pseudocode with plain floats."""
    rng = make_rng(seed)
    d = len(lower)
    x = [lo + r * (hi - lo) for lo, hi, r in zip(lower, upper, rng.random(d))]
    delta = 0.5 * math.sqrt(sum((hi - lo) ** 2 for lo, hi in zip(lower, upper)))
    iters = budget // 2
    per_epoch = [iters // num_epochs + (1 if m < iters % num_epochs else 0) for m in range(num_epochs)]
    eta = [0.0] * d
    iterates = [list(x)]
    for m in range(num_epochs):
        for _ in range(per_epoch[m]):
            u = rng.standard_normal(d)
            fx = f(np.array(x))
            fp = f(np.array([xi + delta * ui for xi, ui in zip(x, u)]))
            new = []
            for i in range(d):
                g = (d / delta) * (fp - fx) * u[i]
                eta[i] += g * g
                xi = x[i] - g / math.sqrt(eta[i]) if eta[i] > 0 else x[i]
                new.append(min(max(xi, lower[i]), upper[i]))
            x = new
            iterates.append(list(x))
        delta /= 2
    return np.array(iterates)


class TestBox:
    def test_diameter(self):
        assert Box([0, 0], [1, 1]).diameter() == pytest.approx(math.sqrt(2))

    def test_frozen_coordinate_allowed(self):
        b = Box([0, 2], [1, 2])
        assert b.diameter() == 1.0

    @pytest.mark.parametrize("lower,upper", [([1], [0]), ([], []), ([0, 0], [1]), ([0], [np.inf])])
    def test_invalid(self, lower, upper):
        with pytest.raises(InvalidArgumentError):
            Box(lower, upper)

    def test_from_bounds(self):
        b = Box.from_bounds([(-2, 4), (-5, 5)])
        assert b.diameter() == pytest.approx(math.sqrt(136))


class TestProjectBox:
    box = Box([0, 0], [1, 1])

    def test_interior_fixed(self):
        np.testing.assert_array_equal(project_box([0.5, 0.5], self.box), [0.5, 0.5])

    def test_clamp(self):
        np.testing.assert_array_equal(project_box([-2, 3], self.box), [0, 1])

    def test_signed_zero_normalized(self):
        out = project_box([1.0, -0.0], self.box)
        np.testing.assert_array_equal(out, [1.0, 0.0])
        assert not np.signbit(out[1])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            project_box([0.1, 0.2, 0.3], self.box)

    @given(arrays(float, 4, elements=st.floats(-1e6, 1e6)))
    def test_idempotent_and_clamp(self, p):
        box = Box([-1, 0, 2, -3], [1, 0, 5, 3])
        once = project_box(p, box)
        np.testing.assert_array_equal(project_box(once, box), once)
        expected = [min(max(v, lo), hi) for v, lo, hi in zip(p, box.lower, box.upper)]
        np.testing.assert_array_equal(once, expected)
        assert box.contains(once)

    @given(arrays(float, 3, elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(0, 1)))
    def test_is_euclidean_projection(self, p, q_unit):
        # no box point is closer than the projection
        box = Box([-1, -1, -1], [1, 1, 1])
        q = box.lower + q_unit * box.width
        proj = project_box(p, box)
        assert np.linalg.norm(p - proj) <= np.linalg.norm(p - q) + 1e-12


class TestEstimateGradient:
    def test_constant(self):
        g, fx, fp = estimate_gradient(lambda x: 7.0, np.array([0.3, -1.0]), 0.5, np.array([0.2, 1.4]))
        np.testing.assert_array_equal(g, [0, 0])
        assert (fx, fp) == (7.0, 7.0)

    def test_quadratic_arithmetic(self):
        g, fx, fp = estimate_gradient(sphere, np.zeros(2), 1.0, np.ones(2))
        assert (fx, fp) == (0.0, 2.0)
        np.testing.assert_array_equal(g, [4.0, 4.0])

    def test_two_evaluations(self):
        calls = []
        estimate_gradient(lambda x: calls.append(x.copy()) or 0.0, np.zeros(3), 0.1, np.ones(3))
        assert len(calls) == 2
        np.testing.assert_array_equal(calls[1], [0.1, 0.1, 0.1])

    def test_nonfinite_raises_with_point(self):
        def f(x):
            return math.inf if x[0] > 0 else 0.0
        with pytest.raises(EvaluationFailedError) as info:
            estimate_gradient(f, np.zeros(2), 1.0, np.array([1.0, 2.0]))
        np.testing.assert_array_equal(info.value.point, [1.0, 2.0])

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(InvalidArgumentError):
            estimate_gradient(sphere, np.zeros(2), 0.0, np.ones(2))

    def test_expectation_linear_small_sample(self):
        # d * a for a linear function; 2e4 draws, 4 standard errors
        a = np.array([1.0, -2.0])
        rng = np.random.default_rng(5)
        gs = np.array([estimate_gradient(lambda x: float(a @ x), np.zeros(2), 0.1, rng.standard_normal(2))[0]
                       for _ in range(20000)])
        se = gs.std(axis=0, ddof=1) / math.sqrt(len(gs))
        assert np.all(np.abs(gs.mean(axis=0) - 2 * a) <= 4 * se)


class TestSfogdStep:
    def test_first_step(self):
        st_ = SfogdState.zeros(2)
        x = sfogd_step(st_, [0.0, 0.0], [3.0, 4.0])
        np.testing.assert_array_equal(st_.eta, [9, 16])
        np.testing.assert_array_equal(x, [-1, -1])

    def test_zero_learning_rate_coordinate_unchanged(self):
        st_ = SfogdState.zeros(2)
        x = sfogd_step(st_, [0.25, 0.5], [0.0, 5.0])
        np.testing.assert_array_equal(st_.eta, [0, 25])
        np.testing.assert_array_equal(x, [0.25, -0.5])

    def test_accumulation(self):
        st_ = SfogdState.zeros(2)
        x1 = sfogd_step(st_, [0.0, 0.0], [1.0, 0.0])
        x2 = sfogd_step(st_, x1, [1.0, 0.0])
        assert x2[0] - x1[0] == pytest.approx(-1 / math.sqrt(2), abs=1e-15)
        assert x2[1] == 0.0

    def test_nonfinite_leaves_state(self):
        st_ = SfogdState(np.array([1.0, 2.0]))
        with pytest.raises(EvaluationFailedError):
            sfogd_step(st_, [0.0, 0.0], [np.nan, 1.0])
        np.testing.assert_array_equal(st_.eta, [1.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sfogd_step(SfogdState.zeros(2), [0.0], [1.0])

    @given(st.floats(1e-3, 1e3), arrays(float, 3, elements=st.floats(-10, 10)))
    def test_scale_free(self, c, g):
        a, b = SfogdState.zeros(3), SfogdState.zeros(3)
        x = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(sfogd_step(a, x, g), sfogd_step(b, x, c * g), rtol=1e-12, atol=1e-12)


class TestEpochSchedule:
    def test_even_split(self):
        s = make_epoch_schedule(Box([0, 0], [1, 1]), 1000, 5)
        r2 = math.sqrt(2)
        assert s.deltas == pytest.approx([r2 / 2, r2 / 4, r2 / 8, r2 / 16, r2 / 32], rel=1e-15)
        assert s.iterations == [100] * 5

    def test_remainder_to_early_epochs(self):
        assert make_epoch_schedule(Box([0], [1]), 10, 3).iterations == [2, 2, 1]

    def test_paper_domain_first_radius(self):
        s = make_epoch_schedule(Box([-2, -5], [4, 5]), 1000, 1)
        assert s.deltas[0] == pytest.approx(0.5 * math.sqrt(136), rel=1e-15)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            make_epoch_schedule(Box([0], [1]), 5, 3)
        with pytest.raises(InvalidArgumentError):
            make_epoch_schedule(Box([1, 1], [1, 1]), 100, 2)

    @given(st.integers(2, 5000), st.integers(1, 20), st.integers(1, 6))
    def test_invariants(self, budget, m, d):
        if budget < 2 * m:
            return
        box = Box.cube(-1, 2, d)
        s = make_epoch_schedule(box, budget, m)
        assert s.deltas[0] == box.diameter() / 2
        for a, b in zip(s.deltas, s.deltas[1:]):
            assert b == a / 2
        assert 2 * s.total_iterations <= budget
        assert s.total_iterations == budget // 2
        assert max(s.iterations) - min(s.iterations) <= 1
        assert min(s.iterations) >= 1


class TestRunGradopt:
    def test_matches_reference_loop(self):
        lower, upper = [-1.0, 0.0, 2.0], [1.0, 3.0, 2.5]
        f = lambda x: float(np.sum(np.abs(x - 0.3)) + np.sin(3 * x[0]))
        r = run_gradopt(f, Box(lower, upper), budget=61, num_epochs=4, seed=11)
        ref = reference_gradopt(f, lower, upper, 61, 4, 11)
        np.testing.assert_allclose(r.info["iterates"], ref, rtol=0, atol=1e-13)

    def test_converges_1d(self):
        r = run_gradopt(lambda x: float((x[0] - 0.5) ** 2), Box([0], [1]), budget=200, num_epochs=4, seed=0)
        assert r.best_value <= 1e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_converges_1d_any_seed(self, seed):
        r = run_gradopt(lambda x: float((x[0] - 0.5) ** 2), Box([0], [1]), budget=200, num_epochs=4, seed=seed)
        assert r.best_value <= 1e-3

    def test_budget_accounting(self):
        r = run_gradopt(sphere, Box.cube(-1, 1, 3), budget=100, seed=1)
        assert r.evals_used == 100 and len(r.trace) == 100
        r = run_gradopt(sphere, Box.cube(-1, 1, 3), budget=101, seed=1)
        assert r.evals_used == 100

    def test_deterministic(self):
        a = run_gradopt(sphere, Box.cube(-1, 1, 4), budget=300, seed=99)
        b = run_gradopt(sphere, Box.cube(-1, 1, 4), budget=300, seed=99)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.values.tobytes() == b.values.tobytes()

    def test_best_is_min_of_trace(self):
        r = run_gradopt(sphere, Box.cube(-1, 1, 2), budget=200, seed=3)
        assert r.best_value == r.values.min()
        assert sphere(r.best_point) == r.best_value

    def test_trace_structure(self):
        # even entries are the iterates, odd entries the probes
        box = Box.cube(-1, 1, 3)
        r = run_gradopt(sphere, box, budget=200, seed=4)
        its = r.info["iterates"]
        np.testing.assert_array_equal(r.points[0::2], its[:-1])
        for x in its:
            assert box.contains(x)
        deltas = np.repeat(r.info["schedule"].deltas, r.info["schedule"].iterations)
        np.testing.assert_array_equal(r.info["deltas"], deltas)

    def test_eta_monotone_across_epochs(self):
        r = run_gradopt(sphere, Box.cube(-1, 1, 5), budget=400, num_epochs=4, seed=8)
        assert np.all(np.diff(r.info["eta"], axis=0) >= 0)

    @pytest.mark.parametrize("reset", [False, True])
    def test_reset_eta_per_epoch(self, reset):
        box = Box.cube(-1, 1, 2)
        r = run_gradopt(sphere, box, budget=40, num_epochs=2, seed=8, reset_eta_per_epoch=reset)
        # rebuild the first gradient of epoch 2 from its two trace entries
        delta = r.info["deltas"][10]
        x, probe = r.points[20], r.points[21]
        u = (probe - x) / delta
        g = (2 / delta) * (r.values[21] - r.values[20]) * u
        expected = g * g if reset else r.info["eta"][9] + g * g
        np.testing.assert_allclose(r.info["eta"][10], expected, rtol=1e-9)

    def test_init_policies(self):
        box = Box([0, 0], [2, 4])
        r = run_gradopt(sphere, box, budget=10, init="center", seed=0)
        np.testing.assert_array_equal(r.points[0], [1, 2])
        r = run_gradopt(sphere, box, budget=10, init="point", x0=[5, 1], seed=0)
        np.testing.assert_array_equal(r.points[0], [2, 1])
        with pytest.raises(InvalidArgumentError):
            run_gradopt(sphere, box, budget=10, init="point")

    def test_invalid_config(self):
        with pytest.raises(InvalidArgumentError):
            run_gradopt(sphere, Box([0], [1]), budget=5, num_epochs=3)
        with pytest.raises(InvalidArgumentError):
            run_gradopt(sphere, Box([0], [1]), init="nope")

    def test_failure_returns_partial(self):
        calls = {"n": 0}

        def f(x):
            calls["n"] += 1
            return math.nan if calls["n"] > 7 else sphere(x)

        r = run_gradopt(f, Box.cube(-1, 1, 2), budget=100, seed=0)
        assert r.failed and "failed" in r.error
        assert r.evals_used == 6
        assert np.all(np.isfinite(r.values))

    def test_translation_invariance(self):
        box = Box.cube(-1, 1, 3)
        a = run_gradopt(sphere, box, budget=400, seed=5)
        b = run_gradopt(lambda x: sphere(x) + 12.5, box, budget=400, seed=5)
        assert np.max(np.abs(a.info["iterates"] - b.info["iterates"])) <= 1e-9

    @pytest.mark.parametrize("c", [0.37, 3.0, 1e3])
    def test_general_scale_invariance(self, c):
        box = Box.cube(-1, 1, 3)
        a = run_gradopt(sphere, box, budget=400, seed=5)
        b = run_gradopt(lambda x: c * sphere(x), box, budget=400, seed=5)
        np.testing.assert_allclose(b.info["iterates"], a.info["iterates"], rtol=1e-9, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 300), st.integers(1, 5), st.integers(0, 2**64 - 1))
    def test_budget_safety(self, budget, m, seed):
        if budget < 2 * m:
            return
        r = run_gradopt(sphere, Box.cube(-1, 1, 2), budget=budget, num_epochs=m, seed=seed)
        assert r.evals_used == 2 * (budget // 2) <= budget


class TestSmoothing:
    def test_smoothed_quadratic_closed_form(self):
        rng = np.random.default_rng(0)
        x = np.array([0.5, -1.0])
        mean, se = smoothed_value(lambda p: np.sum(p * p, axis=1), x, 0.3, 200000, rng, vectorized=True)
        assert abs(mean - (1.25 + 0.09 * 2)) <= 3 * se

    def test_scalar_and_vectorized_agree(self):
        x = np.array([0.2, 0.1])
        a = smoothed_value(sphere, x, 0.5, 500, np.random.default_rng(1))
        b = smoothed_value(lambda p: np.sum(p * p, axis=1), x, 0.5, 500, np.random.default_rng(1), vectorized=True)
        assert a[0] == pytest.approx(b[0], rel=1e-12)
