"""Monte Carlo experiments that check classified boundary regimes.

Every estimate is a finite-horizon, thresholded proxy: a path "hits" when
``min_i X_i <= eps_hit`` before ``T`` on the ``dt`` grid, and the estimate
carries those settings. Exploded paths are excluded and counted.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np

from . import _kernels as K
from .engine import X_CAP, PathConfig, parallel_map_paths, run_batch_arrays
from .model import JumpMeasure, ModelSpec, interaction_regime, InteractionRegime, own_jump_means, validate
from .rng import split_seed
from .transform import default_tol_cmp

Z95 = NormalDist().inv_cdf(0.975)
UNRELIABLE_EXPLODED_FRACTION = 0.01
MIN_HITS_FOR_QUANTILES = 100
PB_UNDERFLOW = 1e-300


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


def spec_to_dict(spec: ModelSpec) -> dict:
    def meas(m: JumpMeasure):
        return [[float(w), [float(v) for v in z]] for w, z in zip(m.weights, m.atoms)]

    return {
        "x0": spec.x0.tolist(), "eta": spec.eta.tolist(), "sigma": spec.sigma.tolist(),
        "B": spec.B.tolist(), "C": spec.C.tolist(), "nu": meas(spec.nu),
        "mu": [meas(m) for m in spec.mu], "strict_interaction": spec.strict_interaction,
    }


def config_digest(spec: ModelSpec, cfg: PathConfig | None, **extra) -> str:
    """Stable identifier of an experiment (thread count is deliberately not part of it)."""
    payload = {"spec": spec_to_dict(spec), "path": asdict(cfg) if cfg is not None else None, **extra}
    blob = json.dumps(payload, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Estimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n: int
    n_excluded: int
    config_digest: str
    k: int = 0
    unreliable: bool = False
    settings: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, k: int, n_used: int, n_excluded: int, digest: str, **settings) -> "Estimate":
        lo, hi = wilson_interval(k, n_used)
        p = k / n_used if n_used else math.nan
        n_total = n_used + n_excluded
        unreliable = n_total > 0 and n_excluded > UNRELIABLE_EXPLODED_FRACTION * n_total
        return cls(p, lo, hi, n_used, n_excluded, digest, k, unreliable, settings)

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def excludes_zero(self) -> bool:
        return self.ci_low > 0


def _settings(cfg: PathConfig) -> dict:
    return {"T": cfg.T, "dt": cfg.dt, "eps_hit": cfg.eps_hit}


def estimate_hit_probability(spec: ModelSpec, cfg: PathConfig, n: int, seed: int,
                             threads: int = 1) -> Estimate:
    """Fraction of paths reaching the boundary threshold before ``T``."""
    res = run_batch_arrays(spec, cfg, n, seed, threads)
    keep = ~res.exploded
    digest = config_digest(spec, cfg, op="hitprob", n=n, seed=seed)
    return Estimate.from_counts(int(res.hit[keep].sum()), int(keep.sum()), res.n_exploded, digest,
                                **_settings(cfg))


@dataclass
class HittingTimes:
    quantiles: list[tuple[float, float]] | None
    hit_fraction: float
    n_hits: int
    n: int
    note: str = ""


def hitting_time_quantiles(spec: ModelSpec, cfg: PathConfig, n: int, seed: int, qs,
                           threads: int = 1) -> HittingTimes:
    """Empirical quantiles of the hit time among hitting paths; withheld below 100 hits."""
    qs = [float(q) for q in qs]
    if any(not 0 <= q <= 1 for q in qs):
        raise ValueError("quantile levels must be in [0, 1]")
    res = run_batch_arrays(spec, cfg, n, seed, threads)
    times = res.hit_time[res.hit & ~res.exploded]
    frac = times.size / n
    if times.size < MIN_HITS_FOR_QUANTILES:
        return HittingTimes(None, frac, int(times.size), n,
                            f"only {times.size} hitting paths (< {MIN_HITS_FOR_QUANTILES}); quantiles withheld")
    order = np.argsort(qs)
    vals = np.quantile(times, np.array(qs)[order])
    out = [None] * len(qs)
    for j, v in zip(order, np.maximum.accumulate(vals)):
        out[j] = (qs[j], float(v))
    return HittingTimes(out, frac, int(times.size), n)


def extinction_probability(spec: ModelSpec, cfg: PathConfig, n: int, seed: int,
                           threads: int = 1) -> Estimate:
    """Fraction of paths with ``max_i X_i <= eps_hit`` before ``T``; needs zero immigration."""
    if np.any(spec.eta != 0) or not spec.nu.is_empty:
        raise ValueError("extinction needs eta = 0 and no immigration jumps")
    ecfg = PathConfig(**{**asdict(cfg), "stop": "extinction"})
    res = run_batch_arrays(spec, ecfg, n, seed, threads)
    keep = ~res.exploded
    extinct = ~np.isnan(res.extinction_time) & keep
    digest = config_digest(spec, ecfg, op="extinction", n=n, seed=seed)
    return Estimate.from_counts(int(extinct.sum()), int(keep.sum()), res.n_exploded, digest, **_settings(ecfg))


@dataclass
class ProductBound:
    bound: float
    pA: Estimate
    pB_exact: float
    note: str = ""

    def __iter__(self):
        return iter((self.bound, self.pA, self.pB_exact))


def no_jump_probability(spec: ModelSpec, T: float, M: float) -> float:
    """``exp(-T (nu_tot + M sum_j mu_j_tot))``: no immigration jump and no branching mark below M."""
    return math.exp(-T * (spec.nu.total_mass + M * sum(m.total_mass for m in spec.mu)))


def modified_diffusion(spec: ModelSpec) -> ModelSpec:
    """Drop the jumps and replace ``b_ii`` by ``b_ii - int z_i mu_i(dz)``."""
    B = spec.B.copy()
    B[np.diag_indices(spec.d)] -= own_jump_means(spec)
    return ModelSpec(spec.x0, spec.eta, spec.sigma, B, spec.C, strict_interaction=spec.strict_interaction)


def hit_probability_lower_bound(spec: ModelSpec, T: float, M: float, n: int, seed: int,
                                dt: float = 1e-3, eps_hit: float = 1e-8, threads: int = 1,
                                boundary_refine: float = 0.0) -> ProductBound:
    """Lower bound ``P(A).ci_low * P(B)`` for the hit probability of the jump model.

    A is the event that the modified diffusion hits the boundary by ``T``
    while every coordinate stays below ``M`` on ``[0, T]``. B is the event of
    no jumps that could move the state when it stays below ``M``. A depends
    only on the Brownian motion and B only on the Poisson measures, so they
    are independent.
    """
    if not M > float(np.max(spec.x0)):
        raise ValueError("M must exceed max(x0)")
    mod = modified_diffusion(spec)
    cfg = PathConfig(dt=dt, T=T, eps_hit=eps_hit, m_trunc=M, stop="horizon", boundary_refine=boundary_refine)
    res = run_batch_arrays(mod, cfg, n, seed, threads)
    keep = ~res.overflow
    event = res.hit & ~res.exceeded_m & keep
    digest = config_digest(spec, cfg, op="bound34", n=n, seed=seed, M=M)
    pA = Estimate.from_counts(int(event.sum()), int(keep.sum()), int(res.overflow.sum()), digest,
                              **_settings(cfg), M=M)
    pB = no_jump_probability(spec, T, M)
    note = ""
    if pB < PB_UNDERFLOW:
        note = "P(B) underflows; reported as 0"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
        pB = 0.0
    return ProductBound(pA.ci_low * pB, pA, pB, note)


@dataclass
class DominationRate:
    violation_rate: float
    per_coordinate: list[float]
    n_paths: int
    n_excluded: int
    total_steps: int
    tol: float
    mean_x_final: np.ndarray
    mean_y_final: np.ndarray

    def __iter__(self):
        return iter((self.violation_rate, self.per_coordinate))


def comparison_domination_rate(spec: ModelSpec, cfg: PathConfig, n: int, seed: int,
                               tol: float | None = None, threads: int = 1) -> DominationRate:
    """Fraction of base steps with ``X_i > Y_i + tol`` for the shared-noise single-type comparisons.

    ``Y_i`` solves ``dY_i = (eta_i + b_ii Y_i + c_ii Y_i^2) dt + sqrt(2 sigma_i Y_i) dW_i``.
    Both systems run to ``T`` regardless of boundary hits. Only diffusion models
    are supported.
    """
    report = validate(spec)
    if not report.ok:
        raise ValueError("invalid model: " + "; ".join(report.violations))
    if interaction_regime(spec.C) is not InteractionRegime.COMPETITION:
        raise ValueError("the comparison needs competitive interaction (c_ij <= 0 for i != j)")
    if spec.has_jumps:
        raise ValueError("the comparison run supports diffusion models only")
    tol = default_tol_cmp(cfg.dt) if tol is None else tol
    d = spec.d
    n_steps = np.zeros(n, dtype=np.int64)
    coord = np.zeros((n, d), dtype=np.int64)
    anyv = np.zeros(n, dtype=np.int64)
    xf = np.zeros((n, d))
    yf = np.zeros((n, d))
    ovf = np.zeros(n, dtype=np.bool_)
    k0, k1 = split_seed(seed)

    def work(a, b):
        K.run_xy_batch(a, b, spec.x0.copy(), spec.eta.copy(), spec.sigma.copy(), spec.B.copy(), spec.C.copy(),
                       float(cfg.dt), float(cfg.T), float(cfg.eps_hit), float(cfg.substep_cap),
                       float(cfg.boundary_refine), X_CAP, float(tol), k0, k1,
                       n_steps, coord, anyv, xf, yf, ovf)

    parallel_map_paths(work, n, threads)
    keep = ~ovf
    steps = int(n_steps[keep].sum())
    rate = anyv[keep].sum() / steps if steps else 0.0
    per = [float(coord[keep, i].sum() / steps) if steps else 0.0 for i in range(d)]
    return DominationRate(float(rate), per, n, int(ovf.sum()), steps, tol,
                          xf[keep].mean(axis=0), yf[keep].mean(axis=0))
