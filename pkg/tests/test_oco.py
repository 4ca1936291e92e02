import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dogdlab.distributed import run_distributed
from dogdlab.errors import DimensionMismatch, DomainViolation
from dogdlab.losses import RidgeLoss, RidgeSample, f_rate, gen_ridge_stream
from dogdlab.oco import (
    NO_PROJECTION,
    EwooLearner,
    OgdLearner,
    Projection,
    ewoo_step,
    ogd_step,
    within_task_run,
)
from dogdlab.topology import WeightMatrix


class Quadratic:
    """``a * |x - c|^2`` in any dimension."""

    def __init__(self, c, a=1.0):
        self.c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        self.a = a
        self.dimension = self.c.size

    def eval(self, x):
        d = np.asarray(x, dtype=np.float64).reshape(-1) - self.c
        return float(self.a * d @ d)

    def grad(self, x):
        return 2 * self.a * (np.asarray(x, dtype=np.float64).reshape(-1) - self.c)


def brute_force_play(losses, lo, hi, gamma, points):
    grid = np.linspace(lo, hi, points)
    f = sum(np.array([l.eval(np.array([g])) for g in grid]) for l in losses)
    w = np.exp(-gamma * (f - f.min()))
    return float(np.trapezoid(grid * w, grid) / np.trapezoid(w, grid))


class TestProjection:
    def test_ball(self):
        np.testing.assert_allclose(Projection.l2_ball(1.0)([2.0, 0.0]), [1.0, 0.0])
        np.testing.assert_array_equal(Projection.l2_ball(5.0)([2.0, 0.0]), [2.0, 0.0])

    def test_half_line(self):
        np.testing.assert_array_equal(Projection.half_line(0.5)([0.1, 2.0]), [0.5, 2.0])

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            Projection("box")
        with pytest.raises(ValueError):
            Projection.l2_ball(0.0)

    @settings(max_examples=100, deadline=None)
    @given(
        kind=st.sampled_from(["none", "ball", "half"]),
        seed=st.integers(0, 10_000),
        scale=st.floats(0.01, 100.0),
    )
    def test_idempotent_nonexpansive_feasible(self, kind, seed, scale):
        proj = {"none": NO_PROJECTION, "ball": Projection.l2_ball(1.5), "half": Projection.half_line(0.2)}[kind]
        r = np.random.default_rng(seed)
        a, b = scale * r.standard_normal((2, 4))
        pa, pb = proj(a), proj(b)
        np.testing.assert_allclose(proj(pa), pa, rtol=1e-15, atol=1e-15)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12
        assert proj.contains(pa)


class TestOgd:
    def test_single_step(self):
        l = ogd_step(OgdLearner(np.zeros(2), 0.1), np.array([1.0, 0.0]))
        np.testing.assert_allclose(l.current_point, [-0.1, 0.0])

    def test_pure_projection(self):
        l = ogd_step(OgdLearner(np.array([2.0, 0.0]), 0.1, Projection.l2_ball(1.0)), np.zeros(2))
        np.testing.assert_allclose(l.current_point, [1.0, 0.0])

    def test_initial_point_projected(self):
        l = OgdLearner(np.array([3.0, 4.0]), 0.1, Projection.l2_ball(1.0))
        np.testing.assert_allclose(l.current_point, [0.6, 0.8])

    def test_converges_on_quadratic(self):
        c = np.array([1.5, -2.0])
        f = Quadratic(c)
        l = OgdLearner(np.zeros(2), 0.1)
        for _ in range(50):
            ogd_step(l, f.grad(l.current_point))
        # closed form: x_k - c = (1 - 2 eta)^k (x_0 - c)
        np.testing.assert_allclose(l.current_point - c, 0.8**50 * (0 - c), atol=1e-12)
        assert np.linalg.norm(l.current_point - c) < 1e-3

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ogd_step(OgdLearner(np.zeros(2), 0.1), np.zeros(3))

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            OgdLearner(np.zeros(2), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_monotone_on_random_quadratics(self, seed):
        r = np.random.default_rng(seed)
        a = r.standard_normal((4, 4))
        h = a @ a.T + 0.1 * np.eye(4)  # f = x'Hx/2 - b'x
        b = r.standard_normal(4)
        curv = np.linalg.eigvalsh(h)[-1]
        f = lambda x: 0.5 * x @ h @ x - b @ x
        l = OgdLearner(r.standard_normal(4), 0.99 / (2 * curv))
        vals = []
        for _ in range(30):
            vals.append(f(l.current_point))
            ogd_step(l, h @ l.current_point - b)
        assert np.all(np.diff(vals[1:]) <= 1e-12)

    def test_regret_sublinear(self):
        w = WeightMatrix(np.ones((1, 1)), 0.0)
        T = 500
        ratios = []
        for seed in range(10):
            s = gen_ridge_stream("stochastic", 10, 2 * T, 1, seed)
            r = run_distributed("independent_ogd", s, w, 0.001, "known_optimum")
            ratios.append(r.regret[2 * T - 1] / r.regret[T - 1])
        assert np.mean(ratios) < 1.9


class TestWithinTask:
    def test_single_step_convention(self, rng):
        loss = RidgeLoss(RidgeSample(rng.random(3), 1.0))
        phi = rng.standard_normal(3)
        res = within_task_run(phi, 0.3, [loss])
        assert res.total_loss == loss.eval(phi)
        np.testing.assert_array_equal(res.last_iterate, phi - 0.3 * loss.grad(phi))
        np.testing.assert_array_equal(res.iterates[0], phi)

    def test_frozen_learner(self, rng):
        losses = [RidgeLoss(RidgeSample(rng.random(3), float(v))) for v in rng.standard_normal(5)]
        phi = rng.standard_normal(3)
        res = within_task_run(phi, 0.0, losses)
        assert np.all(res.iterates == phi)
        assert res.total_loss == pytest.approx(sum(l.eval(phi) for l in losses))

    def test_stationary_start(self):
        c = np.array([0.5, -1.0])
        res = within_task_run(c, 0.2, [Quadratic(c, a) for a in (1.0, 2.0, 3.0)])
        assert res.total_loss == 0.0
        np.testing.assert_array_equal(res.last_iterate, c)

    def test_trace_matches_manual_loop(self, rng):
        losses = [RidgeLoss(RidgeSample(rng.random(4), float(v))) for v in rng.standard_normal(6)]
        th = np.zeros(4)
        total = 0.0
        for l in losses:
            total += l.eval(th)
            th = th - 0.05 * l.grad(th)
        res = within_task_run(np.zeros(4), 0.05, losses)
        assert res.total_loss == pytest.approx(total, rel=1e-14)
        np.testing.assert_allclose(res.last_iterate, th, rtol=1e-14)

    def test_projected(self):
        res = within_task_run([0.0], 1.0, [Quadratic([10.0])], Projection.l2_ball(1.0))
        np.testing.assert_allclose(res.last_iterate, [1.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            within_task_run([0.0], 0.1, [])
        with pytest.raises(ValueError):
            within_task_run([0.0], -0.1, [Quadratic([1.0])])


class TestEwoo:
    def test_empty_history_plays_midpoint(self):
        v, _ = ewoo_step(EwooLearner(0.5, 4.0, 1.0), Quadratic([2.0]))
        assert v == 2.25

    def test_sharp_concentration(self):
        l = EwooLearner(0.5, 4.0, exp_param=1e4)
        l.update(Quadratic([2.0]))
        assert abs(l.play() - 2.0) <= (4.0 - 0.5) / 511

    def test_grid_refinement(self):
        def play(points):
            l = EwooLearner(0.5, 4.0, exp_param=0.5, grid_points=points)
            for c in (1.0, 1.5, 2.5):
                l.update(Quadratic([c]))
            return l.play()

        assert abs(play(512) - play(1023)) <= 1e-4

    def test_matches_fine_grid_oracle(self, rng):
        l = EwooLearner(0.1, 5.0, exp_param=0.3, gamma_cap=20.0)
        hist = []
        for _ in range(20):
            q = Quadratic([rng.uniform(1, 4)], a=rng.uniform(0.5, 2))
            gamma = l.gamma
            v, l = ewoo_step(l, q)
            if hist:
                assert abs(v - brute_force_play(hist, 0.1, 5.0, gamma, 5120)) <= 1e-3
            hist.append(q)

    def test_gamma_schedule(self):
        l = EwooLearner.for_rate(0.2, 10.0, g_lip=10.0, m=4)
        base = 1 / (10 * 2 * 9.8)
        assert l.exp_param == pytest.approx(base)
        assert l.gamma == pytest.approx(base)
        for _ in range(3):
            l.update(f_rate(1.0, 10.0, 4, 0.2))
        assert l.gamma == pytest.approx(4 * base)
        l.rounds = 10**6
        assert l.gamma == pytest.approx(50 / 9.8)

    def test_rate_loss_vectorised_and_scalar_agree(self):
        a = EwooLearner(0.2, 5.0, 0.1)
        b = EwooLearner(0.2, 5.0, 0.1)
        loss = f_rate(1.5, 2.0, 3, 0.2)

        class Scalar:
            def eval(self, v):
                return loss.eval(v)

        a.update(loss)
        b.update(Scalar())
        np.testing.assert_allclose(a.cum_loss, b.cum_loss, rtol=1e-14)

    def test_empty_domain(self):
        with pytest.raises(ValueError):
            EwooLearner(1.0, 1.0, 1.0)
        with pytest.raises(DomainViolation):
            EwooLearner.for_rate(2.0, 1.0, 1.0, 1)

    @settings(max_examples=50, deadline=None)
    @given(centers=st.lists(st.floats(-20, 20), min_size=1, max_size=10), gamma=st.floats(1e-3, 1e3))
    def test_play_in_domain(self, centers, gamma):
        l = EwooLearner(0.3, 7.0, gamma)
        for c in centers:
            v, l = ewoo_step(l, Quadratic([c]))
            assert 0.3 <= v <= 7.0
        assert 0.3 <= l.play() <= 7.0
        assert math.isfinite(l.play())
