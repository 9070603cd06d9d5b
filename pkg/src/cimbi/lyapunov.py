"""Generator of the jump SDE applied to the log-Lyapunov function.

``f(x) = 1 + sum_i (x_i - ln x_i)`` blows up at the boundary. Non-attainment
follows once ``Lf <= K_m f`` on every box ``(0, m)^d``. The generator is split
into the diffusion part ``L1`` and the jump part ``L2``. Both are evaluated
exactly for atom measures.

A domination certificate is evidence from a grid scan, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditions import Tri, TriState, Verdict, check_nonattainment
from .engine import PathConfig, run_batch_arrays
from .model import ModelSpec

LOG_GRID_DECADES = 6
MAX_LYAPUNOV_POINTS = 1_000_000


def _interior(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("x must be strictly positive")
    return x


def f_log(x) -> float | np.ndarray:
    """``1 + sum_i (x_i - ln x_i)``; accepts a point or an ``(n, d)`` stack."""
    x = _interior(x)
    return 1.0 + np.sum(x - np.log(x), axis=-1)


def generator_L1(spec: ModelSpec, x) -> float | np.ndarray:
    """Diffusion-and-drift part of the generator applied to :func:`f_log`.

    ``sum_i (eta_i + (sigma_i - eta_i) / x_i) + sum_ij b_ij (x_j - x_j / x_i)
    + sum_ij c_ij x_j (x_i - 1)``.
    """
    x = _interior(x)
    Bx = x @ spec.B.T
    Cx = x @ spec.C.T
    # written so that the value at x = 1 is exactly sum(sigma)
    out = np.sum(spec.eta * (1.0 - 1.0 / x) + spec.sigma / x, axis=-1)
    out = out + np.sum(Bx - Bx / x, axis=-1)
    out = out + np.sum(Cx * (x - 1.0), axis=-1)
    return out


def _log_increment(x, z):
    """``sum_j (z_j + ln(x_j / (x_j + z_j)))`` for points x (..., d) and atoms z (k, d) -> (..., k)."""
    x = x[..., None, :]
    return np.sum(z - np.log1p(z / x), axis=-1)


def generator_L2(spec: ModelSpec, x) -> float | np.ndarray:
    """Jump part of the generator applied to :func:`f_log`.

    Immigration atoms contribute ``w * sum_i (z_i + ln(x_i / (x_i + z_i)))``.
    Type-i branching atoms contribute ``x_i * w * (sum_j (z_j + ln(x_j / (x_j + z_j)))
    - z_i + z_i / x_i)``, the own coordinate being compensated.
    """
    x = _interior(x)
    out = np.zeros(x.shape[:-1])
    if not spec.nu.is_empty:
        out = out + _log_increment(x, spec.nu.atoms) @ spec.nu.weights
    for i, m in enumerate(spec.mu):
        if m.is_empty:
            continue
        xi = x[..., i]
        zi = m.atoms[:, i]
        inner = _log_increment(x, m.atoms) - zi + zi / xi[..., None]
        out = out + xi * (inner @ m.weights)
    return out[()] if out.ndim == 0 else out


def generator(spec: ModelSpec, x):
    return generator_L1(spec, x) + generator_L2(spec, x)


@dataclass
class DominationCertificate:
    m: float
    K_m: float
    grid_points: int
    worst_ratio_point: np.ndarray
    status: TriState
    shell_ratios: tuple[float, ...] = ()


def log_grid_axis(m: float, grid: int, x_min: float | None = None) -> np.ndarray:
    x_min = m * 10.0 ** -LOG_GRID_DECADES if x_min is None else x_min
    return np.geomspace(x_min, m, grid)


def find_domination_constant(spec: ModelSpec, m: float, grid: int = 64,
                             x_min: float | None = None) -> DominationCertificate:
    """Largest ``Lf / f`` over a log-uniform grid of ``(0, m)^d``.

    Status is Holds when the maximum is finite and the per-shell maxima at the
    three shells nearest the boundary do not increase toward it. Shell k holds
    the points whose smallest coordinate sits at axis index k.
    """
    rep = check_nonattainment(spec)
    if rep.verdict is not Verdict.NEVER_HITS:
        raise ValueError("non-attainment hypotheses do not hold; no certificate")
    if not m > float(np.max(spec.x0)):
        raise ValueError("m must exceed max(x0)")
    d = spec.d
    g = int(grid)
    while g > 3 and g ** d > MAX_LYAPUNOV_POINTS:
        g -= 1
    axis = log_grid_axis(m, g, x_min)
    idx = np.stack(np.meshgrid(*([np.arange(g)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = axis[idx]
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = generator(spec, pts) / f_log(pts)
    finite = bool(np.all(np.isfinite(ratio)))
    k = int(np.nanargmax(ratio)) if np.any(~np.isnan(ratio)) else 0
    K_m = float(ratio[k]) if finite else math.inf
    shell = idx.min(axis=1)
    shells = tuple(float(np.max(ratio[shell == s])) for s in range(min(3, g)))
    trend = all(shells[j] <= shells[j + 1] for j in range(len(shells) - 1))
    if finite and trend:
        status = TriState(Tri.HOLDS, note="grid evidence, not a proof")
    else:
        why = "non-finite ratio" if not finite else "ratio grows toward the boundary"
        status = TriState(Tri.UNKNOWN, note=why)
    return DominationCertificate(float(m), K_m, int(pts.shape[0]), pts[k].copy(), status, shells)


@dataclass
class WeakCheck:
    estimate: float
    exact: float
    se: float
    n_used: int
    n_rejected: int
    note: str = ""

    def __iter__(self):
        return iter((self.estimate, self.exact, self.se))


def weak_generator_check(spec: ModelSpec, x, h: float, n: int, seed: int, threads: int = 1,
                         substeps: int = 2, eps_hit: float | None = None) -> WeakCheck:
    """Monte Carlo ``(E f(X_h) - f(x)) / h`` from the simulator against the exact generator.

    Paths started at ``x`` are run over ``[0, h]`` in ``substeps`` base steps.
    Paths that reach ``eps_hit`` are rejected and counted.
    """
    x = _interior(x)
    start = spec.with_(x0=x)
    eps = float(np.min(x)) * 1e-6 if eps_hit is None else eps_hit
    cfg = PathConfig(dt=h / substeps, T=h, eps_hit=eps, stop="horizon")
    res = run_batch_arrays(start, cfg, n, seed, threads)
    keep = ~(res.hit | res.exploded)
    n_used = int(keep.sum())
    if n_used < 2:
        raise ValueError("too few usable paths")
    inc = (f_log(res.final_state[keep]) - f_log(x)) / h
    n_rej = n - n_used
    note = ""
    if n_rej > 0.001 * n:
        note = f"{n_rej} of {n} paths rejected at the boundary; estimate is biased"
    return WeakCheck(float(inc.mean()), float(generator(spec, x)), float(inc.std(ddof=1) / math.sqrt(n_used)),
                     n_used, n_rej, note)
