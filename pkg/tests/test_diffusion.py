import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risdiff.diffusion import (
    DiffusionState,
    GuidanceConfig,
    build_linear_schedule,
    forward_jump,
    forward_step,
    guided_noise,
    posterior_variance,
    reverse_step,
    sample,
)
from risdiff.rng import derive

# Frozen oracle values for the reference T=500, 1e-4 -> 0.02 schedule,
# computed with an independent plain-Python product loop.
ABAR_1 = 0.9999
ABAR_2 = 0.999760134228457
BETA_250 = 0.01003006012024048
ABAR_500 = 0.006352710797015057
POSTVAR_T2 = 5.831584832600667e-05


@pytest.fixture(scope="module")
def ref_schedule():
    return build_linear_schedule(500, 1e-4, 0.02)


@pytest.fixture(scope="module")
def short_schedule():
    return build_linear_schedule(50, 1e-3, 0.05)


class TestSchedule:
    def test_endpoints_exact(self, ref_schedule):
        assert ref_schedule.beta[0] == 1e-4
        assert ref_schedule.beta[-1] == 0.02

    def test_midpoint_value(self, ref_schedule):
        assert ref_schedule.beta[249] == pytest.approx(BETA_250, rel=1e-14)

    def test_alpha_bar_values(self, ref_schedule):
        assert ref_schedule.alpha_bar[0] == pytest.approx(ABAR_1, rel=1e-14)
        assert ref_schedule.alpha_bar[1] == pytest.approx(ABAR_2, rel=1e-13)
        assert ref_schedule.alpha_bar[-1] == pytest.approx(ABAR_500, rel=1e-12)
        assert np.sqrt(ref_schedule.alpha_bar[-1]) == pytest.approx(0.0797, abs=5e-4)

    @pytest.mark.parametrize("args", [(500, 1e-4, 0.02), (50, 1e-3, 0.05)])
    def test_invariants(self, args):
        s = build_linear_schedule(*args)
        assert np.all(s.beta > 0) and np.all(s.beta < 1)
        assert np.all(np.diff(s.beta) >= 0)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.alpha_bar > 0) and np.all(s.alpha_bar < 1)
        assert np.allclose(s.alpha, 1.0 - s.beta)

    def test_recursion_identity(self, ref_schedule):
        # abar_t = abar_{t-1} * alpha_t with abar_0 = 1
        prev = np.concatenate([[1.0], ref_schedule.alpha_bar[:-1]])
        assert np.allclose(ref_schedule.alpha_bar, prev * ref_schedule.alpha,
                           rtol=1e-14)

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            build_linear_schedule(1, 1e-4, 0.02)
        with pytest.raises(ValueError):
            build_linear_schedule(10, 0.0, 0.02)
        with pytest.raises(ValueError):
            build_linear_schedule(10, 0.03, 0.02)
        with pytest.raises(ValueError):
            build_linear_schedule(10, 0.5, 1.0)


class TestForward:
    def test_zero_noise_hook(self, ref_schedule):
        x = np.full(6, 2.0)
        out = forward_step(x, ref_schedule, 10, None, eps=np.zeros(6))
        assert np.allclose(out, np.sqrt(1.0 - ref_schedule.beta[9]) * x, rtol=1e-15)

    def test_step_variance_from_origin(self, short_schedule):
        t = 20
        rng = derive(100, "fstep")
        draws = forward_step(np.zeros(100_000), short_schedule, t, rng)
        b = short_schedule.beta[t - 1]
        se = b * np.sqrt(2.0 / 100_000)  # s.e. of a chi-square mean estimate
        assert abs(np.var(draws) - b) < 3 * se

    def test_jump_zero_noise(self, ref_schedule):
        x0 = np.linspace(-1, 1, 8)
        xt, eps = forward_jump(x0, ref_schedule, 100, None, eps=np.zeros(8))
        assert np.allclose(xt, np.sqrt(ref_schedule.alpha_bar[99]) * x0, rtol=1e-15)
        assert np.array_equal(eps, np.zeros(8))

    def test_jump_from_zero_is_pure_gaussian(self, short_schedule):
        t = 35
        rng = derive(101, "fjump")
        xt, _ = forward_jump(np.zeros(100_000), short_schedule, t, rng)
        target = 1.0 - short_schedule.alpha_bar[t - 1]
        se = target * np.sqrt(2.0 / 100_000)
        assert abs(np.var(xt) - target) < 3 * se

    def test_terminal_attenuation(self, ref_schedule):
        x0 = np.ones(4)
        xt, _ = forward_jump(x0, ref_schedule, 500, None, eps=np.zeros(4))
        assert np.allclose(xt, np.sqrt(ABAR_500), rtol=1e-10)

    def test_iterated_steps_match_marginal(self, short_schedule):
        # Chain t = 1..T one step at a time; the empirical mean and variance
        # must agree with the closed-form marginal at T within 3 s.e.
        n = 100_000
        x0 = 1.7
        rng = derive(102, "chain")
        x = np.full(n, x0)
        for t in range(1, short_schedule.t_max + 1):
            x = forward_step(x, short_schedule, t, rng)
        ab = short_schedule.alpha_bar[-1]
        mean_target = np.sqrt(ab) * x0
        var_target = 1.0 - ab
        assert abs(np.mean(x) - mean_target) < 3 * np.sqrt(var_target / n)
        assert abs(np.var(x) - var_target) < 3 * var_target * np.sqrt(2.0 / n)

    def test_step_bounds(self, short_schedule):
        with pytest.raises(ValueError):
            forward_step(np.zeros(2), short_schedule, 0, derive(0, "a"))
        with pytest.raises(ValueError):
            forward_jump(np.zeros(2), short_schedule, 51, derive(0, "b"))


class TestPosteriorVariance:
    def test_zero_at_first_step(self, ref_schedule):
        assert posterior_variance(ref_schedule, 1) == 0.0

    def test_frozen_value_at_t2(self, ref_schedule):
        assert posterior_variance(ref_schedule, 2) == pytest.approx(POSTVAR_T2, rel=1e-12)

    def test_bounded_by_beta(self, ref_schedule):
        for t in range(1, 501, 7):
            v = posterior_variance(ref_schedule, t)
            assert 0.0 <= v <= ref_schedule.beta[t - 1]


class TestGuidance:
    def test_endpoints(self):
        c = np.array([1.0, 0.0])
        u = np.array([0.0, 1.0])
        assert np.array_equal(guided_noise(c, u, GuidanceConfig(1.0)), c)
        assert np.array_equal(guided_noise(c, u, GuidanceConfig(0.0)), u)

    def test_midpoint(self):
        out = guided_noise([1.0, 0.0], [0.0, 1.0], GuidanceConfig(0.5))
        assert np.array_equal(out, [0.5, 0.5])

    @given(lam=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_betweenness(self, lam, seed):
        rng = derive(seed, "gn")
        c = rng.standard_normal(8)
        u = rng.standard_normal(8)
        out = guided_noise(c, u, GuidanceConfig(lam))
        lo = np.minimum(c, u) - 1e-12
        hi = np.maximum(c, u) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            guided_noise(np.zeros(3), np.zeros(4), GuidanceConfig(0.5))

    def test_lambda_range_enforced(self):
        with pytest.raises(ValueError):
            GuidanceConfig(1.5)
        with pytest.raises(ValueError):
            GuidanceConfig(-0.1)


class TestReverseStep:
    def test_inverts_first_forward_step_exactly(self, ref_schedule):
        # At t=1 the marginal and the single step coincide, so feeding the
        # true noise back must reproduce x0 to rounding.
        rng = derive(110, "inv")
        x0 = rng.standard_normal(64)
        x1, eps = forward_jump(x0, ref_schedule, 1, rng)
        state = reverse_step(DiffusionState(x=x1, step=1), eps, ref_schedule, rng)
        assert state.step == 0
        rel = np.linalg.norm(state.x - x0) / np.linalg.norm(x0)
        assert rel <= 1e-10

    def test_zero_noise_zero_z(self, ref_schedule):
        x = np.full(5, 3.0)
        state = reverse_step(DiffusionState(x=x, step=200), np.zeros(5),
                             ref_schedule, None, z=np.zeros(5))
        assert np.allclose(state.x, x / np.sqrt(ref_schedule.alpha[199]), rtol=1e-15)
        assert state.step == 199

    def test_stochastic_term_variance_default_convention(self, short_schedule):
        t = 30
        rng = derive(111, "rv")
        var = posterior_variance(short_schedule, t)
        x = np.zeros(100_000)
        state = reverse_step(DiffusionState(x=x, step=t), np.zeros(100_000),
                             short_schedule, rng)
        emp = np.var(state.x)
        assert abs(emp - var) < 3 * var * np.sqrt(2.0 / 100_000)

    def test_stochastic_term_variance_literal_convention(self, short_schedule):
        # compatibility flag: additive term var * z has variance var^2
        t = 30
        rng = derive(112, "rvl")
        var = posterior_variance(short_schedule, t)
        state = reverse_step(DiffusionState(x=np.zeros(100_000), step=t),
                             np.zeros(100_000), short_schedule, rng,
                             literal_variance_term=True)
        emp = np.var(state.x)
        assert abs(emp - var**2) < 3 * var**2 * np.sqrt(2.0 / 100_000)

    def test_final_step_is_deterministic(self, ref_schedule):
        x = np.ones(4)
        a = reverse_step(DiffusionState(x=x, step=1), np.zeros(4), ref_schedule,
                         derive(1, "za"))
        b = reverse_step(DiffusionState(x=x, step=1), np.zeros(4), ref_schedule,
                         derive(2, "zb"))
        assert np.array_equal(a.x, b.x)


class TestSample:
    def test_zero_predictor_smoke(self, short_schedule):
        out = sample(lambda x, t, c: np.zeros_like(x), None, short_schedule,
                     GuidanceConfig(0.7), derive(120, "smoke"), (16,))
        assert out.shape == (16,)
        assert np.all(np.isfinite(out))

    def test_fixed_seed_bit_identical(self, short_schedule):
        def predictor(x, t, c):
            return 0.5 * x
        a = sample(predictor, None, short_schedule, GuidanceConfig(0.7),
                   derive(121, "det"), (8,))
        b = sample(predictor, None, short_schedule, GuidanceConfig(0.7),
                   derive(121, "det"), (8,))
        assert np.array_equal(a, b)

    def test_pinned_lambda_skips_other_branch(self, short_schedule):
        calls = []

        def predictor(x, t, c):
            calls.append(c)
            return np.zeros_like(x)

        sample(predictor, "COND", short_schedule, GuidanceConfig(1.0),
               derive(122, "lam1"), (4,))
        assert all(c == "COND" for c in calls)
        calls.clear()
        sample(predictor, "COND", short_schedule, GuidanceConfig(0.0),
               derive(123, "lam0"), (4,))
        assert all(c is None for c in calls)

    def test_batched_chains(self, short_schedule):
        out = sample(lambda x, t, c: np.zeros_like(x), None, short_schedule,
                     GuidanceConfig(0.5), derive(124, "batch"), (7, 10))
        assert out.shape == (7, 10)
        assert np.all(np.isfinite(out))
