"""Fine-step reference runs that fix the horizons used by the acceptance tests.

Run ``python reference/calibrate.py`` to regenerate ``reference/calibration.json``.
The reference scheme resolves the approach to zero: smaller base steps,
boundary refinement and a low hit threshold.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from cimbi.engine import PathConfig
from cimbi.model import ModelSpec
from cimbi.montecarlo import estimate_hit_probability, extinction_probability

OUT = Path(__file__).with_name("calibration.json")
SEED = 90210


def one_d(eta: float) -> ModelSpec:
    return ModelSpec([0.5], [eta], [1.0], [[-1.0]], [[-1.0]])


def curve(fn, spec, base: PathConfig, Ts, n):
    rows = []
    for T in Ts:
        e = fn(spec, PathConfig(dt=base.dt, T=T, eps_hit=base.eps_hit, boundary_refine=base.boundary_refine),
               n, SEED)
        rows.append({"T": T, "p_hat": e.p_hat, "ci_low": e.ci_low, "ci_high": e.ci_high, "n": e.n,
                     "n_excluded": e.n_excluded})
    return rows


def main():
    t0 = time.time()
    fine = PathConfig(dt=2.5e-4, T=1.0, eps_hit=1e-14, boundary_refine=6.0)
    out = {"seed": SEED, "fine_scheme": {"dt": fine.dt, "eps_hit": fine.eps_hit,
                                         "boundary_refine": fine.boundary_refine}}
    # almost-sure attainment benchmark: residual non-hit mass by T
    out["hits_as"] = curve(estimate_hit_probability, one_d(0.2), fine, [1.0, 2.0, 5.0, 10.0, 30.0], 4000)
    # extinction benchmark
    out["extinction"] = curve(extinction_probability, one_d(0.0), fine, [2.0, 5.0, 10.0, 25.0, 50.0], 4000)
    # sharp contrast at the scheme used by the acceptance test, and at half its step
    contrast = {}
    for dt in (1e-3, 5e-4):
        cfg = PathConfig(dt=dt, T=1.0, eps_hit=1e-14, boundary_refine=6.0)
        contrast[str(dt)] = {str(eta): curve(estimate_hit_probability, one_d(eta), cfg, [2.5, 5.0, 10.0, 20.0], 2000)
                             for eta in (0.9, 1.1)}
    out["contrast"] = contrast
    out["runtime_s"] = round(time.time() - t0, 1)
    OUT.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
