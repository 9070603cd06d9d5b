import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cimbi.engine import PathConfig, run_batch_arrays
from cimbi.model import JumpMeasure, ModelSpec, own_jump_means
from cimbi.montecarlo import (Estimate, comparison_domination_rate, config_digest, estimate_hit_probability,
                              extinction_probability, hit_probability_lower_bound, hitting_time_quantiles,
                              modified_diffusion, no_jump_probability, wilson_interval)

from conftest import one_d


# Wilson interval

@given(st.integers(1, 2000), st.data())
@settings(max_examples=200, deadline=None)
def test_wilson_contains_p_hat(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_coverage_on_bernoulli_stream():
    rng = np.random.default_rng(11)
    p, n, reps = 0.3, 400, 1000
    ks = rng.binomial(n, p, reps)
    covered = sum(lo <= p <= hi for lo, hi in (wilson_interval(int(k), n) for k in ks))
    assert 0.93 <= covered / reps <= 0.97


def test_wilson_width_scales_as_inverse_sqrt_n():
    for n in (500, 1000, 4000):
        w1 = np.subtract(*wilson_interval(int(0.3 * n), n)[::-1])
        w2 = np.subtract(*wilson_interval(int(0.3 * 2 * n), 2 * n)[::-1])
        assert w2 / w1 == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_estimate_unreliable_flag():
    assert not Estimate.from_counts(5, 990, 10, "x").unreliable
    assert Estimate.from_counts(5, 980, 20, "x").unreliable


# estimate_hit_probability

def test_hit_estimate_deterministic_and_thread_invariant():
    spec = one_d()
    cfg = PathConfig(dt=1e-2, T=1.0)
    a = estimate_hit_probability(spec, cfg, 400, seed=3)
    b = estimate_hit_probability(spec, cfg, 400, seed=3, threads=4)
    assert a == b
    assert a.ci_low <= a.p_hat <= a.ci_high
    assert a.settings == {"T": 1.0, "dt": 1e-2, "eps_hit": 1e-8}
    assert estimate_hit_probability(spec, cfg, 400, seed=4).config_digest != a.config_digest


def test_hit_estimate_ci_width_halves_with_four_times_n():
    spec = one_d()
    cfg = PathConfig(dt=1e-2, T=1.0)
    small = estimate_hit_probability(spec, cfg, 500, seed=8)
    large = estimate_hit_probability(spec, cfg, 2000, seed=8)
    assert large.width / small.width == pytest.approx(0.5, rel=0.2)


def test_never_hits_benchmark_has_small_p_hat(never_hits_spec):
    est = estimate_hit_probability(never_hits_spec, PathConfig(dt=1e-3, T=2.0), 500, seed=2024)
    assert est.p_hat <= 0.01
    assert est.n_excluded == 0


def test_exploded_paths_are_excluded_and_flagged():
    spec = one_d(eta=1.0, b=3.0, c=-0.01, x0=1.0)
    est = estimate_hit_probability(spec, PathConfig(dt=1e-2, T=2.0, m_trunc=1.5), 300, seed=1)
    assert est.n_excluded > 3
    assert est.n + est.n_excluded == 300
    assert est.unreliable


# hitting_time_quantiles

def test_ode_hit_time_matches_closed_form():
    # sigma = 0 and eta = 0 give the ODE x' = -x, hit at ln(x0 / eps)
    spec = ModelSpec([1.0], [0.0], [0.0], [[-1.0]], [[0.0]], strict_interaction=False)
    eps = math.exp(-3.0)
    ht = hitting_time_quantiles(spec, PathConfig(dt=1e-3, T=10.0, eps_hit=eps), 200, seed=1, qs=[0.5])
    assert ht.hit_fraction == 1.0
    assert ht.quantiles[0][1] == pytest.approx(3.0, abs=5e-3)


def test_quantiles_withheld_when_censored(never_hits_spec):
    ht = hitting_time_quantiles(never_hits_spec, PathConfig(dt=1e-2, T=0.5), 200, seed=1, qs=[0.5])
    assert ht.quantiles is None
    assert "withheld" in ht.note


def test_quantiles_non_decreasing_in_q():
    qs = [0.9, 0.1, 0.5, 0.25, 0.75]
    ht = hitting_time_quantiles(one_d(), PathConfig(dt=1e-2, T=5.0), 1000, seed=6, qs=qs)
    assert [q for q, _ in ht.quantiles] == qs
    by_q = sorted(ht.quantiles)
    assert all(a[1] <= b[1] for a, b in zip(by_q, by_q[1:]))


def test_quantile_levels_validated():
    with pytest.raises(ValueError):
        hitting_time_quantiles(one_d(), PathConfig(), 10, seed=0, qs=[1.5])


# extinction_probability

def test_extinction_rejects_immigration():
    with pytest.raises(ValueError):
        extinction_probability(one_d(eta=0.2), PathConfig(), 10, seed=0)
    spec = one_d(eta=0.0, nu=JumpMeasure.from_atoms([(0.1, [0.5])]))
    with pytest.raises(ValueError):
        extinction_probability(spec, PathConfig(), 10, seed=0)


def test_logistic_extinction_grows_with_T():
    spec = one_d(eta=0.0)
    ps = [extinction_probability(spec, PathConfig(dt=1e-2, T=T), 500, seed=9).p_hat for T in (0.5, 2.0, 8.0)]
    assert ps[0] <= ps[1] <= ps[2]
    assert ps[2] >= 0.9


def test_two_type_extinction(zu_spec):
    spec = zu_spec.with_(eta=np.zeros(2))
    est = extinction_probability(spec, PathConfig(dt=1e-2, T=20.0), 300, seed=4)
    assert est.p_hat >= 0.9


# hit_probability_lower_bound

def test_no_jump_probability_closed_form():
    nu = JumpMeasure.from_atoms([(0.1, [1.0, 0.0])])
    mu = (JumpMeasure.from_atoms([(0.15, [1.0, 0.0])]), JumpMeasure.from_atoms([(0.05, [0.0, 1.0])]))
    spec = ModelSpec([1.0, 1.0], [0.1, 0.1], [1.0, 1.0], -np.eye(2), -np.eye(2), nu=nu, mu=mu)
    assert no_jump_probability(spec, 1.0, 10.0) == pytest.approx(math.exp(-2.1), rel=1e-14)
    assert math.exp(-2.1) == pytest.approx(0.1225, abs=1e-4)


def test_modified_diffusion_shifts_own_drift():
    mu = (JumpMeasure.from_atoms([(0.5, [0.4, 2.0])]), JumpMeasure.empty(2))
    spec = ModelSpec([1.0, 1.0], [0.1, 0.1], [1.0, 1.0], [[0.2, 0.1], [0.0, -1.0]], -np.eye(2), mu=mu)
    mod = modified_diffusion(spec)
    assert not mod.has_jumps
    np.testing.assert_allclose(mod.B, [[0.2 - 0.2, 0.1], [0.0, -1.0]])
    np.testing.assert_allclose(own_jump_means(spec), [0.2, 0.0])


def test_bound_without_jumps_is_the_diffusion_estimate():
    spec = one_d()
    pb = hit_probability_lower_bound(spec, T=1.0, M=2.0, n=500, seed=5, dt=1e-2)
    bound, pA, pB = pb
    assert pB == 1.0
    assert bound == pA.ci_low
    res = run_batch_arrays(spec, PathConfig(dt=1e-2, T=1.0, m_trunc=2.0, stop="horizon"), 500, 5)
    assert pA.k == int((res.hit & ~res.exceeded_m).sum())


def test_bound_positive_on_jump_benchmark():
    spec = ModelSpec([0.5], [0.3], [1.0], [[0.2]], [[-1.0]], nu=JumpMeasure.from_atoms([(0.1, [0.5])]),
                     mu=(JumpMeasure.from_atoms([(1.0, [0.5])]),))
    pb = hit_probability_lower_bound(spec, T=1.0, M=2.0, n=1000, seed=5, dt=1e-3)
    assert pb.pA.ci_low > 0
    assert pb.bound > 0
    assert pb.pB_exact == pytest.approx(math.exp(-(0.1 + 2.0)), rel=1e-12)


def test_bound_underflow_warns():
    spec = one_d(mu=(JumpMeasure.from_atoms([(1.0, [0.5])]),))
    with pytest.warns(RuntimeWarning, match="underflow"):
        pb = hit_probability_lower_bound(spec, T=400.0, M=2.0, n=20, seed=1, dt=0.5)
    assert pb.pB_exact == 0.0 and pb.bound == 0.0


def test_bound_requires_M_above_x0():
    with pytest.raises(ValueError):
        hit_probability_lower_bound(one_d(x0=0.5), T=1.0, M=0.5, n=10, seed=0)


# comparison_domination_rate

def test_decoupled_model_has_zero_violations():
    spec = ModelSpec([1.0, 0.5], [0.1, 0.3], [1.0, 0.5], -np.eye(2), np.diag([-1.0, -0.5]))
    dom = comparison_domination_rate(spec, PathConfig(dt=1e-2, T=2.0), 200, seed=3, tol=0.0)
    assert dom.violation_rate == 0.0
    np.testing.assert_array_equal(dom.mean_x_final, dom.mean_y_final)


def test_competitive_benchmark_rate_small(zu_spec):
    rate, per = comparison_domination_rate(zu_spec, PathConfig(dt=1e-3, T=2.0), 200, seed=5, tol=1e-6)
    assert rate <= 0.01
    assert max(per) <= rate + 1e-15


def test_comparison_rejects_non_competitive_and_jumps(zu_spec):
    with pytest.raises(ValueError, match="competitive"):
        comparison_domination_rate(zu_spec.with_(C=np.array([[-1.0, 0.2], [-0.2, -1.0]])), PathConfig(), 10, 0)
    jumpy = zu_spec.with_(nu=JumpMeasure.from_atoms([(0.1, [0.1, 0.1])]))
    with pytest.raises(ValueError, match="diffusion"):
        comparison_domination_rate(jumpy, PathConfig(), 10, 0)


def test_cross_competition_does_not_raise_mean():
    base = ModelSpec([1.0, 1.0], [0.5, 0.5], [1.0, 1.0], -np.eye(2), -np.eye(2))
    crossed = base.with_(C=np.array([[-1.0, -0.5], [-0.5, -1.0]]))
    cfg = PathConfig(dt=1e-2, T=2.0, stop="horizon")
    a = run_batch_arrays(base, cfg, 2000, 12).final_state[:, 0]
    b = run_batch_arrays(crossed, cfg, 2000, 12).final_state[:, 0]
    diff = b - a
    assert diff.mean() <= 3 * diff.std(ddof=1) / math.sqrt(diff.size)


def test_config_digest_ignores_threads():
    spec = one_d()
    cfg = PathConfig()
    assert config_digest(spec, cfg, n=1) == config_digest(spec, cfg, n=1)
    assert config_digest(spec, cfg, n=1) != config_digest(spec.with_(x0=np.array([0.6])), cfg, n=1)
