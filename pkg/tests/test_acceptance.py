"""Acceptance criteria at their stated tolerances.

Each test prints one ``[criterion N] PASS|FAIL`` line. Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cimbi.cli import main
from cimbi.conditions import Tri, Verdict, classify, is_copositive, is_negative_definite, simplex_grid
from cimbi.config import parse_config
from cimbi.engine import PathConfig
from cimbi.lyapunov import generator_L1, weak_generator_check
from cimbi.model import JumpMeasure, ModelSpec
from cimbi.montecarlo import estimate_hit_probability, extinction_probability, hit_probability_lower_bound
from cimbi.transform import coupled_ZU_rate, lamperti_forward, lamperti_inverse, u_drift, z_drift

from conftest import random_spec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return _report


def load(name):
    return parse_config(CONFIGS / f"{name}.toml")


def test_criterion_01_never_hits(report):
    spec, cfg, exp = load("thm31_never_hits")
    verdict = classify(spec).aggregate
    cfg = PathConfig(dt=1e-3, T=10.0, eps_hit=1e-8)
    t0 = time.perf_counter()
    est = estimate_hit_probability(spec, cfg, 10_000, exp.seed)
    runtime = time.perf_counter() - t0
    ok = verdict is Verdict.NEVER_HITS and est.p_hat <= 0.01 and runtime <= 120
    report(1, ok, f"verdict={verdict.value} p_hat={est.p_hat:.4g} runtime={runtime:.1f}s")


def test_criterion_02_hits_almost_surely(report):
    spec, cfg, exp = load("thm32_hits_as")
    rep = classify(spec)
    via = next(r for r in rep.per_theorem if r.verdict is Verdict.HITS_ALMOST_SURELY).notes
    via_2 = any("condition (2)" in n for n in via)
    t0 = time.perf_counter()
    est = estimate_hit_probability(spec, PathConfig(dt=1e-3, T=30.0, eps_hit=1e-8), 10_000, exp.seed)
    runtime = time.perf_counter() - t0
    ref = json.loads((ROOT / "reference" / "calibration.json").read_text())
    residual = 1.0 - next(r["p_hat"] for r in ref["hits_as"] if r["T"] == 30.0)
    ok = (rep.aggregate is Verdict.HITS_ALMOST_SURELY and via_2 and est.p_hat >= 0.95 and residual < 0.02
          and runtime <= 120)
    report(2, ok, f"verdict={rep.aggregate.value} via (2)={via_2} p_hat={est.p_hat:.4g} "
                  f"reference residual={residual:.3g} runtime={runtime:.1f}s")


def test_criterion_03_sharp_contrast(report):
    lo_spec, cfg, exp = load("thm35_competitive")
    hi_spec, hi_cfg, _ = load("thm31_contrast")
    assert lo_spec.eta[0] == 0.9 and hi_spec.eta[0] == 1.1 and cfg == hi_cfg
    v_lo, v_hi = classify(lo_spec).aggregate, classify(hi_spec).aggregate
    p_lo = estimate_hit_probability(lo_spec, cfg, exp.paths, exp.seed)
    p_hi = estimate_hit_probability(hi_spec, cfg, exp.paths, exp.seed)
    gap = p_lo.p_hat - p_hi.p_hat
    disjoint = p_lo.ci_low > p_hi.ci_high
    ok = v_lo is Verdict.HITS_ALMOST_SURELY and v_hi is Verdict.NEVER_HITS and gap >= 0.5 and disjoint
    report(3, ok, f"verdicts={v_lo.value}/{v_hi.value} p(0.9)={p_lo.p_hat:.4g} "
                  f"[{p_lo.ci_low:.3g},{p_lo.ci_high:.3g}] p(1.1)={p_hi.p_hat:.4g} "
                  f"[{p_hi.ci_low:.3g},{p_hi.ci_high:.3g}] gap={gap:.3g} at T={cfg.T}")


def test_criterion_04_extinction(report):
    spec, cfg, exp = load("cor33_extinction")
    assert classify(spec).aggregate is Verdict.EXTINCT_IN_FINITE_TIME
    ps = [extinction_probability(spec, PathConfig(dt=cfg.dt, T=T, eps_hit=cfg.eps_hit), exp.paths, exp.seed).p_hat
          for T in (10.0, 25.0, 50.0)]
    ok = ps[2] >= 0.9 and ps[0] <= ps[1] <= ps[2]
    report(4, ok, f"extinct fraction at T=10,25,50: {ps}")


def test_criterion_05_jump_bound(report):
    spec, cfg, exp = load("thm34_jumps")
    rep = classify(spec)
    assert rep.aggregate is Verdict.HITS_WITH_POSITIVE_PROBABILITY
    pb = hit_probability_lower_bound(spec, cfg.T, exp.M, exp.paths, exp.seed, cfg.dt, cfg.eps_hit)
    closed = math.exp(-cfg.T * (spec.nu.total_mass + exp.M * sum(m.total_mass for m in spec.mu)))
    rel = abs(pb.pB_exact - closed) / closed
    ok = pb.bound > 0 and pb.pA.ci_low > 0 and rel <= 1e-12
    report(5, ok, f"bound={pb.bound:.4g} pA={pb.pA.p_hat:.4g} [{pb.pA.ci_low:.3g},{pb.pA.ci_high:.3g}] "
                  f"pB={pb.pB_exact:.6g} rel.err={rel:.2g}")


def test_criterion_06_comparison(report):
    spec, cfg, exp = load("thm32_comparison")
    rates = {}
    for dt in (1e-3, 5e-4):
        s = coupled_ZU_rate(spec, PathConfig(dt=dt, T=cfg.T, eps_hit=cfg.eps_hit), 1000, exp.seed, tol=exp.tol)
        rates[dt] = s.violation_rate
    ok = rates[1e-3] <= 0.01 and rates[5e-4] < rates[1e-3]
    report(6, ok, f"violation rate at tol={exp.tol:g}: dt=1e-3 {rates[1e-3]:.4%}, dt=5e-4 {rates[5e-4]:.4%}")


WEAK_POINTS = [
    (ModelSpec([1.0], [2.0], [1.0], [[-1.0]], [[-1.0]]), [1.0]),
    (ModelSpec([2.0], [2.0], [1.0], [[-1.0]], [[-1.0]], mu=(JumpMeasure.from_atoms([(1.0, [0.5])]),),
               nu=JumpMeasure.from_atoms([(0.5, [1.0])])), [2.0]),
    (ModelSpec([1.0, 1.0], [2.0, 1.5], [1.0, 0.5], [[-1.0, 0.2], [0.1, -1.0]], [[-1.0, -0.2], [-0.1, -1.0]]),
     [1.0, 2.0]),
]
WEAK_C = 100.0


def test_criterion_07_generator(report):
    rng = np.random.default_rng(77)
    exact = 0
    for k in range(100):
        spec = random_spec(rng, 1 + k % 4)
        exact += generator_L1(spec, np.ones(spec.d)) == spec.sigma.sum()
    h = 1e-3
    lines, weak_ok = [], True
    for j, (spec, x) in enumerate(WEAK_POINTS):
        w = weak_generator_check(spec, x, h, 1_000_000, 100 + j)
        err = abs(w.estimate - w.exact)
        weak_ok &= err <= WEAK_C * h + 3 * w.se and w.n_rejected == 0
        lines.append(f"x={x}: |err|={err:.3g} bound={WEAK_C * h + 3 * w.se:.3g}")
    ok = exact == 100 and weak_ok
    report(7, ok, f"L1(1)=sum(sigma) exact on {exact}/100 specs; weak check C={WEAK_C:g}: " + "; ".join(lines))


def test_criterion_08_transform(report):
    rng = np.random.default_rng(8)
    x = 10.0 ** rng.uniform(-8, 8, (100_000, 3))
    sigma = rng.uniform(0.01, 10, 3)
    back = lamperti_inverse(lamperti_forward(x, sigma), sigma)
    rt = float(np.max(np.abs(back - x) / x))
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        spec = ModelSpec(np.ones(d), rng.uniform(0, 3, d), rng.uniform(0.1, 2, d), np.diag(rng.uniform(-2, 1, d)),
                         -rng.uniform(0, 1, (d, d)) - np.eye(d) * 0.1)
        z = rng.uniform(0.05, 5, d)
        zd, ud = z_drift(z, spec), u_drift(z, spec)
        expected = spec.eta / (spec.sigma * z) - 1 / (2 * z)
        scale = np.maximum(1.0, np.maximum(np.abs(zd), np.abs(ud)))
        worst = max(worst, float(np.max(np.abs(zd - ud - expected) / scale)))
    ok = rt <= 1e-12 and worst <= 1e-12
    report(8, ok, f"round-trip max rel.err={rt:.2g}; drift difference max err={worst:.2g}")


def brute_min(S, pts):
    return float(np.min(np.einsum("ni,ij,nj->n", pts, S, pts)))


def power_iteration_max_eig(S, rng, iters=5000):
    shift = float(np.abs(S).sum()) + 1.0
    A = S + shift * np.eye(S.shape[0])
    v = rng.normal(size=S.shape[0])
    for _ in range(iters):
        v = A @ v
        v /= np.linalg.norm(v)
    return float(v @ S @ v)


def test_criterion_09_condition_algebra(report):
    rng = np.random.default_rng(9)
    t = np.linspace(0, 1, 10_000)
    grids = {2: np.stack([t, 1 - t], axis=1), 3: simplex_grid(3, 140)}
    assert grids[3].shape[0] >= 10_000
    contradictions, unknown = 0, {2: 0, 3: 0}
    for d in (2, 3):
        for k in range(1000):
            A = rng.uniform(-1, 1, (d, d))
            S = (A + A.T) / 2
            if k % 2:
                S[np.diag_indices(d)] = np.abs(S[np.diag_indices(d)])
            res = is_copositive(S)
            m = brute_min(S, grids[d])
            tol = 1e-12 * np.abs(S).max()
            if res.value is Tri.HOLDS and m < -tol:
                contradictions += 1
            elif res.value is Tri.FAILS:
                y = np.asarray(res.witness, dtype=float)
                if np.any(y < 0) or not y @ S @ y < 0:
                    contradictions += 1
            elif res.value is Tri.UNKNOWN:
                unknown[d] += 1
    nd_mismatch = nd_checked = 0
    for k in range(1000):
        d = int(rng.integers(1, 5))
        M = rng.uniform(-1, 1, (d, d)) - rng.uniform(0, 2) * np.eye(d)
        S = (M + M.T) / 2
        lam = power_iteration_max_eig(S, rng)
        if abs(lam) < 1e-6:
            continue
        nd_checked += 1
        nd_mismatch += (is_negative_definite(M).value is Tri.HOLDS) != (lam < 0)
    ok = contradictions == 0 and unknown[2] == 0 and nd_mismatch == 0
    report(9, ok, f"copositivity contradictions={contradictions} unknown(2x2)={unknown[2]} "
                  f"unknown(3x3)={unknown[3]}; negative definiteness mismatches={nd_mismatch}/{nd_checked}")


def test_criterion_10_determinism(report, tmp_path):
    outs = {}
    for threads in (1, 4, 8):
        out = tmp_path / f"t{threads}"
        code = main(["hitprob", "--config", str(CONFIGS / "thm32_hits_as.toml"), "--paths", "4000", "--seed", "10",
                     "--threads", str(threads), "--out-dir", str(out)])
        assert code == 0
        outs[threads] = (out / "hitprob.csv").read_bytes()
    ok = outs[1] == outs[4] == outs[8]
    report(10, ok, "hitprob CSV byte-identical under threads 1, 4, 8" if ok else "CSV differs across threads")
