"""Square-root-to-unit-noise transform and the comparison diffusion U.

For a diffusion with diagonal linear drift, ``Z_i = 2 sqrt(X_i / (2 sigma_i))``
has unit additive noise and drift::

    eta_i / (sigma_i Z_i) - 1 / (2 Z_i) + b_ii Z_i / 2 + sum_j c_ij sigma_j Z_i Z_j^2 / 4

Dropping the singular terms gives the Kolmogorov diffusion U on all of R^d.
When ``eta_i <= sigma_i / 2`` those terms are nonpositive, so ``Z <= U``
before X reaches the boundary. ``f(u) = 1 + |u|^2`` is a Lyapunov function
for U under the attainment conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .conditions import Tri, TriState, is_copositive, symmetrize
from .engine import X_CAP, PathConfig, parallel_map_paths
from .model import ModelSpec, validate
from .rng import GAUSSIAN, RandomStream, split_seed

MAX_DRIFT_GRID_POINTS = 1_000_000


def default_tol_cmp(dt: float) -> float:
    """Comparison slack ``1e-6 + 3 sqrt(dt)`` for the discrete Z <= U test."""
    return 1e-6 + 3.0 * math.sqrt(dt)


def _positive_sigma(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return sigma


def lamperti_forward(x, sigma) -> np.ndarray:
    """``Z_i = 2 sqrt(x_i / (2 sigma_i))``."""
    sigma = _positive_sigma(sigma)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    return 2.0 * np.sqrt(x / (2.0 * sigma))


def lamperti_inverse(z, sigma) -> np.ndarray:
    """``x_i = sigma_i z_i^2 / 2``."""
    sigma = _positive_sigma(sigma)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    return sigma * z * z / 2.0


def _require_diagonal(spec: ModelSpec) -> np.ndarray:
    if not spec.b_diagonal:
        raise ValueError("the transform needs a diagonal B")
    return np.diag(spec.B).copy()


def u_drift(u, spec: ModelSpec) -> np.ndarray:
    """``b_ii u_i / 2 + u_i sum_j c_ij sigma_j u_j^2 / 4``."""
    b = _require_diagonal(spec)
    u = np.asarray(u, dtype=float)
    return 0.5 * b * u + 0.25 * u * (spec.C @ (spec.sigma * u * u))


def z_drift(z, spec: ModelSpec) -> np.ndarray:
    """Drift of the transformed process; singular on the boundary."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    sigma = _positive_sigma(spec.sigma)
    return spec.eta / (sigma * z) - 0.5 / z + u_drift(z, spec)


def kolmogorov_generator_f(u, spec: ModelSpec) -> float:
    """Generator of U applied to ``f(u) = 1 + |u|^2``."""
    b = _require_diagonal(spec)
    s = np.asarray(u, dtype=float) ** 2
    M = spec.C * spec.sigma[None, :]
    return float(spec.d + b @ s + 0.5 * s @ M @ s)


def _certified_radius(spec: ModelSpec) -> tuple[float | None, str]:
    """Radius beyond which the generator bound is provably nonpositive.

    With ``s_i = u_i^2 >= 0`` and ``S = |u|^2`` the generator is
    ``d + b.s + s^T M s / 2`` with ``b.s <= max(b) S``. If ``sym(M)`` has
    largest eigenvalue ``-kappa < 0`` then ``s^T M s <= -kappa S^2 / d``; if
    ``-sym(M)`` is copositive then ``s^T M s <= 0``. Either gives a concave
    quadratic in S whose largest root bounds the positive region.
    """
    d = spec.d
    b_max = float(np.max(np.diag(spec.B)))
    S = symmetrize(spec.C * spec.sigma[None, :])
    lam = float(np.linalg.eigvalsh(S)[-1])
    if lam < 0:
        k2 = -lam / d
        how = "negative definite quartic form"
    elif b_max < 0 and is_copositive(-S).value is Tri.HOLDS:
        k2 = 0.0
        how = "copositive quartic form with negative linear drift"
    else:
        return None, "no sufficient bound available"
    if k2 == 0.0:
        root = d / -b_max
    else:
        # roots of d + b_max S - (k2 / 2) S^2
        root = (b_max + math.sqrt(b_max * b_max + 2.0 * k2 * d)) / k2
    return math.sqrt(root), how


def find_drift_bound(spec: ModelSpec, r: float, grid: int = 201) -> tuple[float, TriState]:
    """``k = max`` of the generator over ``|u| <= r`` and a certificate for ``|u| > r``.

    The generator is even in every coordinate, so the grid covers
    ``[0, r]^d`` with ``grid`` points per axis, restricted to the ball.
    Grids with ``grid = 2^j n + 1`` points are nested, so refining never
    decreases ``k``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    d = spec.d
    g = int(grid)
    while g > 2 and g ** d > MAX_DRIFT_GRID_POINTS:
        g = (g - 1) // 2 + 1
    axis = np.linspace(0.0, r, g)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    mesh = mesh[np.einsum("ni,ni->n", mesh, mesh) <= r * r * (1 + 1e-12)]
    b = _require_diagonal(spec)
    M = spec.C * spec.sigma[None, :]
    s = mesh * mesh
    vals = d + s @ b + 0.5 * np.einsum("ni,ij,nj->n", s, M, s)
    k = float(np.max(vals))
    radius, how = _certified_radius(spec)
    if radius is not None and r >= radius:
        cert = TriState(Tri.HOLDS, note=f"{how}; nonpositive for |u| >= {radius:.6g}")
    elif radius is not None:
        cert = TriState(Tri.UNKNOWN, note=f"{how}; bound only certified for |u| >= {radius:.6g}")
    else:
        cert = TriState(Tri.UNKNOWN, note=how)
    return k, cert


def certified_drift_radius(spec: ModelSpec) -> float | None:
    """Smallest radius for which :func:`find_drift_bound` can certify, or None."""
    _require_diagonal(spec)
    return _certified_radius(spec)[0]


# ---------------------------------------------------------------- coupled Z/U runs


@dataclass
class ComparisonResult:
    n_steps: int
    violations: int
    max_excess: float
    hit_time_X: float | None
    u_blowup: bool = False

    @property
    def rate(self) -> float:
        return self.violations / self.n_steps if self.n_steps else 0.0


@dataclass
class ComparisonSummary:
    """Pooled Z/U comparison over a batch; blown-up paths are excluded and counted."""

    n_paths: int
    n_excluded: int
    total_steps: int
    total_violations: int
    max_excess: float
    tol: float
    dt: float

    @property
    def violation_rate(self) -> float:
        return self.total_violations / self.total_steps if self.total_steps else 0.0


def _check_zu_spec(spec: ModelSpec) -> None:
    report = validate(spec)
    if not report.ok:
        raise ValueError("invalid model: " + "; ".join(report.violations))
    if spec.has_jumps:
        raise ValueError("the Z/U comparison is for diffusion-only models")
    _require_diagonal(spec)
    _positive_sigma(spec.sigma)


def _zu_arrays(n: int):
    return (np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.zeros(n),
            np.zeros(n), np.zeros(n, dtype=np.bool_))


def _zu_call(spec, cfg, tol, k0, k1, p0, p1, base, c_start, out):
    K.run_zu_batch(p0, p1, spec.x0.copy(), spec.eta.copy(), spec.sigma.copy(), spec.B.copy(), spec.C.copy(),
                   float(cfg.dt), float(cfg.T), float(cfg.eps_hit), float(cfg.substep_cap),
                   float(cfg.boundary_refine), X_CAP, float(tol), k0, k1, base, c_start, *out)


def simulate_coupled_ZU(spec: ModelSpec, cfg: PathConfig, stream: RandomStream,
                        tol: float | None = None) -> ComparisonResult:
    """Drive X and U with the same Gaussian draws and count ``Z_i > U_i + tol`` steps before X hits."""
    _check_zu_spec(spec)
    tol = default_tol_cmp(cfg.dt) if tol is None else tol
    out = _zu_arrays(1)
    k0, k1 = stream.key
    pid = int(stream.path_id)
    _zu_call(spec, cfg, tol, k0, k1, pid, pid + 1, pid, int(stream.counters[GAUSSIAN]), out)
    n_steps, viol, mx, ht, blow = out
    return ComparisonResult(int(n_steps[0]), int(viol[0]), float(mx[0]),
                            None if np.isnan(ht[0]) else float(ht[0]), bool(blow[0]))


def coupled_ZU_rate(spec: ModelSpec, cfg: PathConfig, n: int, seed: int, tol: float | None = None,
                    threads: int = 1) -> ComparisonSummary:
    """Pooled violation rate over paths ``0..n-1``."""
    _check_zu_spec(spec)
    tol = default_tol_cmp(cfg.dt) if tol is None else tol
    out = _zu_arrays(n)
    k0, k1 = split_seed(seed)
    parallel_map_paths(lambda a, b: _zu_call(spec, cfg, tol, k0, k1, a, b, 0, 0, out), n, threads)
    n_steps, viol, mx, _, blow = out
    keep = ~blow
    return ComparisonSummary(n, int(blow.sum()), int(n_steps[keep].sum()), int(viol[keep].sum()),
                             float(mx[keep].max()) if keep.any() else math.nan, tol, cfg.dt)
