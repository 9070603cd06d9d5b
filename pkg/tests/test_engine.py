import math

import numpy as np
import pytest

from cimbi.engine import (PathConfig, compensated_drift, run_batch_arrays, sample_jumps, simulate_batch,
                          simulate_path, step_diffusion)
from cimbi.model import JumpMeasure, ModelSpec
from cimbi.rng import RandomStream

from conftest import one_d


def linear(eta=2.0, sigma=0.5, b=-1.0, x0=1.0):
    return ModelSpec([x0], [eta], [sigma], [[b]], [[0.0]], strict_interaction=False)


# ---------------------------------------------------------------- single steps


def test_step_origin_without_immigration_stays():
    spec = one_d(eta=0.0)
    assert step_diffusion([0.0], spec, 1e-3, [0.0]) == pytest.approx([0.0])
    assert step_diffusion([0.0], spec, 1e-3, [0.7])[0] == 0.0


def test_step_hand_arithmetic():
    spec = ModelSpec([1.0], [0.0], [0.5], [[0.0]], [[0.0]], strict_interaction=False)
    assert step_diffusion([1.0], spec, 0.01, [0.1]) == pytest.approx([1.1])


def test_step_clamps_at_zero():
    spec = one_d(eta=0.0)
    assert step_diffusion([0.01], spec, 1e-3, [-1.0])[0] == 0.0


def test_compensator_drift():
    spec = ModelSpec([1.0], [0.0], [1.0], [[0.0]], [[0.0]], strict_interaction=False,
                     mu=(JumpMeasure.from_atoms([(2.0, [0.5])]),))
    assert compensated_drift(spec, [1.0]) == pytest.approx([-1.0])


def test_sample_jumps_empty_measures():
    stream = RandomStream(1)
    assert sample_jumps([1.0], one_d(), (0.0, 1.0), stream) == []


def test_no_branching_from_empty_type():
    spec = ModelSpec([1, 1], [1, 1], [1, 1], -np.eye(2), -np.eye(2),
                     mu=(JumpMeasure.from_atoms([(5.0, [1.0, 0.0])]), JumpMeasure.empty(2)))
    stream = RandomStream(2)
    for _ in range(200):
        assert sample_jumps([0.0, 1.0], spec, (0.0, 1.0), stream) == []


def test_expected_branching_events():
    spec = ModelSpec([2.0], [2.0], [1.0], [[-1.0]], [[-1.0]], mu=(JumpMeasure.from_atoms([(1.0, [1.0])]),))
    stream = RandomStream(3)
    counts = np.array([len(sample_jumps([2.0], spec, (0.0, 1.0), stream)) for _ in range(100_000)])
    se = counts.std() / math.sqrt(counts.size)
    assert abs(counts.mean() - 2.0) < 3 * se


def test_events_ordered_and_sourced(never_hits_spec):
    stream = RandomStream(4)
    events = sample_jumps([2.0, 2.0], never_hits_spec, (0.0, 5.0), stream)
    times = [e.time for e in events]
    assert times == sorted(times) and all(0 <= t <= 5 for t in times)
    assert {e.source for e in events} <= {"immigration", "branching"}


# ---------------------------------------------------------------- paths


def test_never_hits_short_horizon(never_hits_spec):
    res = run_batch_arrays(never_hits_spec, PathConfig(dt=1e-3, T=1.0), 300, 1)
    assert res.hit.mean() <= 0.02


def test_extinction_model_hits():
    spec = ModelSpec([0.25], [0.0], [1.0], [[-1.0]], [[-0.5]])
    res = run_batch_arrays(spec, PathConfig(dt=1e-3, T=50.0), 500, 2)
    assert res.hit.mean() >= 0.99


def test_zero_noise_linear_ode():
    spec = ModelSpec([1e-6], [1.0], [0.0], [[-1.0]], [[0.0]], strict_interaction=False)
    r = simulate_path(spec, PathConfig(dt=1e-4, T=1.0, eps_hit=1e-9, stop="horizon"), RandomStream(0))
    exact = 1 - (1 - 1e-6) * math.exp(-1)
    assert r.final_state[0] == pytest.approx(exact, abs=1e-4)
    assert not r.hit


def test_batch_of_one_equals_single_path(never_hits_spec):
    cfg = PathConfig(dt=1e-3, T=0.5, record_stride=10)
    a = simulate_batch(never_hits_spec, cfg, 1, 77)[0]
    b = simulate_path(never_hits_spec, cfg, RandomStream(77, 0))
    np.testing.assert_array_equal(a.final_state, b.final_state)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.counters, b.counters)
    assert a.hit == b.hit


def test_batch_paths_match_individual_streams(never_hits_spec):
    cfg = PathConfig(dt=1e-3, T=0.3)
    batch = simulate_batch(never_hits_spec, cfg, 5, 9)
    for p in (0, 3, 4):
        single = simulate_path(never_hits_spec, cfg, RandomStream(9, p))
        np.testing.assert_array_equal(batch[p].final_state, single.final_state)


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_thread_count_does_not_change_results(never_hits_spec, threads):
    cfg = PathConfig(dt=1e-3, T=0.5)
    a = run_batch_arrays(never_hits_spec, cfg, 64, 5, threads=1)
    b = run_batch_arrays(never_hits_spec, cfg, 64, 5, threads=threads)
    np.testing.assert_array_equal(a.final_state, b.final_state)
    np.testing.assert_array_equal(a.hit_time, b.hit_time)


def test_linear_first_moment():
    spec = linear()
    T, b, eta, x0 = 1.0, -1.0, 2.0, 1.0
    res = run_batch_arrays(spec, PathConfig(dt=1e-3, T=T, stop="horizon"), 20_000, 11)
    x = res.final_state[:, 0]
    exact = x0 * math.exp(b * T) + eta * (math.exp(b * T) - 1) / b
    assert abs(x.mean() - exact) < 3 * x.std() / math.sqrt(x.size)


def test_states_never_negative(never_hits_spec):
    spec = one_d(eta=0.1, x0=0.3)
    res = run_batch_arrays(spec, PathConfig(dt=1e-2, T=3.0, record_stride=1, stop="horizon"), 200, 3)
    for p in range(res.n):
        assert np.all(res.samples[p, : res.n_samples[p], 1:] >= 0)


def test_zero_is_absorbing_without_immigration():
    spec = one_d(eta=0.0, x0=0.05)
    res = run_batch_arrays(spec, PathConfig(dt=1e-3, T=5.0, stop="horizon", record_stride=1), 200, 4)
    for p in np.flatnonzero(~np.isnan(res.extinction_time)):
        traj = res.samples[p, : res.n_samples[p]]
        after = traj[traj[:, 0] > res.extinction_time[p]]
        assert np.all(after[:, 1] == 0.0)


def test_jump_compensation_keeps_mean():
    spec = ModelSpec([1.0], [0.0], [0.0], [[0.0]], [[0.0]], strict_interaction=False,
                     mu=(JumpMeasure.from_atoms([(1.0, [0.5])]),))
    res = run_batch_arrays(spec, PathConfig(dt=1e-3, T=2.0, stop="horizon"), 20_000, 8)
    x = res.final_state[:, 0]
    assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(x.size)


def test_weak_convergence_under_step_halving():
    # the two step sizes use different Gaussian draws, so the difference has variance se1^2 + se2^2
    spec = ModelSpec([1.0], [1.0], [0.5], [[-1.0]], [[-0.5]])
    means, ses = [], []
    for dt in (2e-2, 1e-2):
        res = run_batch_arrays(spec, PathConfig(dt=dt, T=1.0, stop="horizon"), 100_000, 21)
        x = res.final_state[:, 0]
        means.append(x.mean())
        ses.append(x.std() / math.sqrt(x.size))
    assert abs(means[0] - means[1]) < 3 * math.hypot(*ses)


def test_infinite_truncation_is_bit_identical(never_hits_spec):
    base = run_batch_arrays(never_hits_spec, PathConfig(dt=1e-3, T=1.0), 50, 6)
    inf = run_batch_arrays(never_hits_spec, PathConfig(dt=1e-3, T=1.0, m_trunc=math.inf), 50, 6)
    big = run_batch_arrays(never_hits_spec, PathConfig(dt=1e-3, T=1.0, m_trunc=1e6), 50, 6)
    for other in (inf, big):
        np.testing.assert_array_equal(base.final_state, other.final_state)
        assert not other.exceeded_m.any()


def test_truncation_flags_exceedance(never_hits_spec):
    res = run_batch_arrays(never_hits_spec, PathConfig(dt=1e-3, T=5.0, m_trunc=2.5), 100, 6)
    assert res.exceeded_m.any()
    assert np.all(res.exploded[res.exceeded_m])
    assert not res.overflow.any()


def test_step_halving_handles_cooperative_blowup():
    spec = ModelSpec([1.0, 1.0], [1.0, 1.0], [0.5, 0.5], -np.eye(2) * 0.1, [[-0.1, 3.0], [3.0, -0.1]])
    res = run_batch_arrays(spec, PathConfig(dt=1e-2, T=5.0), 20, 1)
    assert res.overflow.all()
    assert np.all(np.isfinite(res.final_state) | res.overflow[:, None])


def test_hit_result_invariants():
    res = simulate_batch(one_d(), PathConfig(dt=1e-3, T=5.0, record_stride=5), 100, 12)
    for r in res:
        if r.hit:
            assert r.hit_time <= 5.0 and r.hit_face
        else:
            assert r.samples[:, 1:].min() > 1e-8


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(dt=1.0, T=1.0)
    with pytest.raises(ValueError):
        PathConfig(eps_hit=0)
    with pytest.raises(ValueError):
        PathConfig(stop="never")
    with pytest.raises(ValueError):
        simulate_path(one_d(x0=1e-9), PathConfig(), RandomStream(0))
    assert PathConfig(dt=0.1, T=1.0).n_steps == 10


def test_invalid_spec_rejected():
    bad = ModelSpec([1, 1], [1, 1], [1, 1], [[-1, -1], [0, -1]], -np.eye(2))
    with pytest.raises(ValueError, match="off-diagonal"):
        simulate_batch(bad, PathConfig(), 2, 0)
