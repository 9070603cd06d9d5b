"""Positivity-preserving path simulation.

The scheme is full-truncation Euler for the square-root diffusion: drift and
diffusion coefficients are evaluated at ``min(X+, m)`` and the state is
clamped at zero after each step. Jumps are generated per step window by
thinning, with intensities frozen at the window start. A local step is halved
while ``|drift_i| * h > substep_cap * (1 + X_i)``.

Own-type branching jumps are applied uncompensated as events, so the drift
carries the compensator ``-X_i * int z_i mu_i(dz)``. With a finite truncation
level ``m`` the coefficients and jump sizes are truncated at ``m`` and the
drift also carries ``-alpha_i(m) * (X_i ^ m)``, ``alpha_i(m) = int (z_i - z_i ^ m) mu_i(dz)``.

Boundary attainment is declared when ``min_i X_i <= eps_hit`` after a
diffusion step, so reported hit times are threshold proxies.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .model import ModelSpec, validate
from .rng import RandomStream, split_seed

STOP_MODES = {"hit": K.STOP_HIT, "extinction": K.STOP_EXTINCTION, "horizon": K.STOP_HORIZON}
X_CAP = 1e150


class NumericalFailure(RuntimeError):
    """Raised when a computation produces non-finite values or a solver fails."""


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    T: float = 1.0
    eps_hit: float = 1e-8
    m_trunc: float = math.inf
    record_stride: int = 0
    substep_cap: float = 1.0
    stop: str = "hit"
    boundary_refine: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if not self.dt < self.T:
            raise ValueError("dt must be smaller than T")
        if not self.eps_hit > 0:
            raise ValueError("eps_hit must be positive")
        if not self.m_trunc > 0:
            raise ValueError("m_trunc must be positive")
        if not self.substep_cap > 0:
            raise ValueError("substep_cap must be positive")
        if self.record_stride < 0:
            raise ValueError("record_stride must be >= 0")
        if self.boundary_refine < 0:
            raise ValueError("boundary_refine must be >= 0")
        if self.stop not in STOP_MODES:
            raise ValueError(f"stop must be one of {sorted(STOP_MODES)}")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9))

    def check_against(self, spec: ModelSpec) -> None:
        if not self.eps_hit < float(np.min(spec.x0)):
            raise ValueError("eps_hit must be below min(x0)")


@dataclass
class PathResult:
    hit: bool
    hit_time: float | None
    hit_face: frozenset
    final_state: np.ndarray
    exploded: bool
    samples: np.ndarray | None = None
    extinction_time: float | None = None
    exceeded_m: bool = False
    counters: np.ndarray | None = field(default=None, repr=False)

    @property
    def overflow(self) -> bool:
        return self.exploded and not self.exceeded_m


class JumpEvent(NamedTuple):
    time: float
    source: str  # "immigration" or "branching"
    type_index: int | None
    z: np.ndarray


@dataclass(frozen=True)
class _Packed:
    x0: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    B: np.ndarray
    C: np.ndarray
    m1t: np.ndarray
    alpha: np.ndarray
    m: float
    nu_tot: float
    nu_cum: np.ndarray
    nu_z: np.ndarray
    mu_tot: np.ndarray
    mu_cum: np.ndarray
    mu_z: np.ndarray
    mu_k: np.ndarray

    def args(self):
        return (self.x0, self.eta, self.sigma, self.B, self.C, self.m1t, self.alpha, self.m,
                self.nu_tot, self.nu_cum, self.nu_z, self.mu_tot, self.mu_cum, self.mu_z, self.mu_k)


def _cumulative(w: np.ndarray) -> np.ndarray:
    if w.size == 0:
        return np.zeros(0)
    c = np.cumsum(w) / w.sum()
    c[-1] = 1.0
    return c


def pack(spec: ModelSpec, m_trunc: float = math.inf) -> _Packed:
    """Flatten a spec into kernel arrays, truncating jump sizes at ``m_trunc``."""
    d = spec.d
    m = float(m_trunc)
    kmax = max([mm.n_atoms for mm in spec.mu] + [1])
    mu_cum = np.ones((d, kmax))
    mu_z = np.zeros((d, kmax, d))
    mu_k = np.zeros(d, dtype=np.int64)
    mu_tot = np.zeros(d)
    m1t = np.zeros(d)
    alpha = np.zeros(d)
    for i, meas in enumerate(spec.mu):
        k = meas.n_atoms
        if k == 0:
            continue
        zt = np.minimum(meas.atoms, m)
        mu_k[i] = k
        mu_tot[i] = meas.total_mass
        mu_cum[i, :k] = _cumulative(meas.weights)
        mu_z[i, :k] = zt
        m1t[i] = float(np.sum(meas.weights * zt[:, i]))
        alpha[i] = float(np.sum(meas.weights * (meas.atoms[:, i] - zt[:, i])))
    if spec.nu.is_empty:
        nu_z = np.zeros((1, d))
        nu_cum = np.ones(1)
        nu_tot = 0.0
    else:
        nu_z = np.ascontiguousarray(np.minimum(spec.nu.atoms, m))
        nu_cum = _cumulative(spec.nu.weights)
        nu_tot = spec.nu.total_mass
    arr = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
    return _Packed(arr(spec.x0), arr(spec.eta), arr(spec.sigma), arr(spec.B), arr(spec.C),
                   m1t, alpha, m, float(nu_tot), nu_cum, nu_z, mu_tot, mu_cum, mu_z, mu_k)


def compensated_drift(spec: ModelSpec, x, m_trunc: float = math.inf) -> np.ndarray:
    """Drift used by the scheme: ``eta + Bx + gamma(x) - x_i int z_i mu_i(dz)`` at ``min(x+, m)``."""
    p = pack(spec, m_trunc)
    out = np.empty(spec.d)
    K.drift_full(np.asarray(x, dtype=float), p.eta, p.B, p.C, p.m1t, p.alpha, p.m, out)
    return out


def step_diffusion(state, spec: ModelSpec, dt: float, dW, m_trunc: float = math.inf) -> np.ndarray:
    """One full-truncation Euler step with Brownian increment ``dW`` (already scaled by sqrt(dt))."""
    x = np.asarray(state, dtype=float)
    p = pack(spec, m_trunc)
    dr = np.empty(spec.d)
    K.drift_full(x, p.eta, p.B, p.C, p.m1t, p.alpha, p.m, dr)
    out = np.empty(spec.d)
    K.diffusion_step(x, dr, p.sigma, p.m, float(dt), np.asarray(dW, dtype=float), out)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite state after diffusion step")
    return out


def sample_jumps(state, spec: ModelSpec, window: tuple[float, float], stream: RandomStream,
                 m_trunc: float = math.inf) -> list[JumpEvent]:
    """Accepted jump events in ``window = (t, t + dt]``, in time order.

    Advances ``stream``'s counters exactly as the path kernel would.
    """
    t0, t1 = window
    p = pack(spec, m_trunc)
    x = np.asarray(state, dtype=float)
    cap = K.EVENT_CAPACITY
    ev_t = np.empty(cap)
    ev_src = np.empty(cap, dtype=np.int64)
    ev_atom = np.empty(cap, dtype=np.int64)
    ev_u = np.empty(cap)
    k0, k1 = stream.key
    n = K.sample_window(x, float(t0), float(t1 - t0), p.m, p.nu_tot, p.nu_cum, p.mu_tot, p.mu_cum,
                        p.mu_k, k0, k1, stream.path_id, stream.counters, ev_t, ev_src, ev_atom, ev_u)
    if n < 0:
        raise NumericalFailure("jump event buffer overflow")
    accepted = np.zeros(cap, dtype=np.bool_)
    K.apply_events(n, x, p.m, ev_src, ev_atom, ev_u, p.nu_z, p.mu_z, np.zeros(spec.d), accepted,
                    np.empty(spec.d))
    events = []
    for e in range(n):
        if not accepted[e]:
            continue
        src = int(ev_src[e])
        if src == 0:
            events.append(JumpEvent(float(ev_t[e]), "immigration", None, p.nu_z[ev_atom[e]].copy()))
        else:
            events.append(JumpEvent(float(ev_t[e]), "branching", src - 1, p.mu_z[src - 1, ev_atom[e]].copy()))
    return events


@dataclass
class BatchArrays:
    """Columnar results of a batch, indexed by path id."""

    hit: np.ndarray
    hit_time: np.ndarray
    extinction_time: np.ndarray
    exceeded_m: np.ndarray
    overflow: np.ndarray
    final_state: np.ndarray
    faces: np.ndarray
    samples: np.ndarray
    n_samples: np.ndarray
    counters: np.ndarray

    @property
    def n(self) -> int:
        return int(self.hit.shape[0])

    @property
    def exploded(self) -> np.ndarray:
        return self.exceeded_m | self.overflow

    @property
    def n_exploded(self) -> int:
        return int(self.exploded.sum())

    def result(self, p: int) -> PathResult:
        hit = bool(self.hit[p])
        samples = self.samples[p, : self.n_samples[p]].copy() if self.samples.shape[0] else None
        et = self.extinction_time[p]
        return PathResult(
            hit=hit,
            hit_time=float(self.hit_time[p]) if hit else None,
            hit_face=frozenset(int(i) for i in np.flatnonzero(self.faces[p])) if hit else frozenset(),
            final_state=self.final_state[p].copy(),
            exploded=bool(self.exceeded_m[p] or self.overflow[p]),
            samples=samples,
            extinction_time=None if np.isnan(et) else float(et),
            exceeded_m=bool(self.exceeded_m[p]),
            counters=self.counters[p].copy(),
        )

    def results(self) -> list[PathResult]:
        return [self.result(p) for p in range(self.n)]


def _chunks(n: int, threads: int) -> list[tuple[int, int]]:
    n_chunks = max(1, min(n, threads * 4))
    edges = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def parallel_map_paths(fn, n: int, threads: int = 1) -> None:
    """Call ``fn(p0, p1)`` over path ranges; with ``threads > 1`` the calls run in a thread pool."""
    chunks = _chunks(n, threads)
    if threads <= 1:
        for a, b in chunks:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(fn, a, b) for a, b in chunks]:
            f.result()


def run_batch_arrays(spec: ModelSpec, cfg: PathConfig, n_paths: int, seed: int,
                     threads: int = 1, path_offset: int = 0) -> BatchArrays:
    """Simulate paths ``path_offset .. path_offset + n_paths - 1`` into columnar arrays."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    report = validate(spec)
    if not report.ok:
        raise ValueError("invalid model: " + "; ".join(report.violations))
    cfg.check_against(spec)
    p = pack(spec, cfg.m_trunc)
    d = spec.d
    total = path_offset + n_paths
    hit = np.zeros(total, dtype=np.bool_)
    hit_time = np.full(total, np.nan)
    ext_time = np.full(total, np.nan)
    exceeded = np.zeros(total, dtype=np.bool_)
    overflow = np.zeros(total, dtype=np.bool_)
    x_final = np.zeros((total, d))
    faces = np.zeros((total, d), dtype=np.bool_)
    n_rec = cfg.n_steps // cfg.record_stride + 2 if cfg.record_stride > 0 else 0
    samples = np.zeros((total if n_rec else 0, n_rec, d + 1))
    n_samples = np.zeros(total, dtype=np.int64)
    counters = np.zeros((total, 4), dtype=np.int64)
    k0, k1 = split_seed(seed)
    ctr0 = np.zeros(4, dtype=np.int64)
    mode = STOP_MODES[cfg.stop]

    def work(a, b):
        K.run_batch(path_offset + a, path_offset + b, *p.args(), float(cfg.dt), float(cfg.T),
                    float(cfg.eps_hit), float(cfg.substep_cap), float(cfg.boundary_refine), X_CAP, mode, int(cfg.record_stride),
                    k0, k1, ctr0, hit, hit_time, ext_time, exceeded, overflow, x_final, faces,
                    samples, n_samples, counters)

    parallel_map_paths(work, n_paths, threads)
    sl = slice(path_offset, total)
    return BatchArrays(hit[sl], hit_time[sl], ext_time[sl], exceeded[sl], overflow[sl], x_final[sl],
                       faces[sl], samples[sl] if n_rec else samples, n_samples[sl], counters[sl])


def simulate_path(spec: ModelSpec, cfg: PathConfig, stream: RandomStream) -> PathResult:
    """Simulate one path driven by ``stream``; the stream's counters are advanced."""
    report = validate(spec)
    if not report.ok:
        raise ValueError("invalid model: " + "; ".join(report.violations))
    cfg.check_against(spec)
    p = pack(spec, cfg.m_trunc)
    d = spec.d
    n_rec = cfg.n_steps // cfg.record_stride + 2 if cfg.record_stride > 0 else 0
    samples = np.zeros((n_rec, d + 1))
    x_out = np.zeros(d)
    face = np.zeros(d, dtype=np.bool_)
    k0, k1 = stream.key
    hit, ht, et, exc, ovf, ns = K.run_path(
        *p.args(), float(cfg.dt), float(cfg.T), float(cfg.eps_hit), float(cfg.substep_cap),
        float(cfg.boundary_refine), X_CAP,
        STOP_MODES[cfg.stop], int(cfg.record_stride), k0, k1, stream.path_id, stream.counters,
        samples, x_out, face)
    return PathResult(
        hit=bool(hit),
        hit_time=float(ht) if hit else None,
        hit_face=frozenset(int(i) for i in np.flatnonzero(face)) if hit else frozenset(),
        final_state=x_out,
        exploded=bool(exc or ovf),
        samples=samples[:ns].copy() if n_rec else None,
        extinction_time=None if np.isnan(et) else float(et),
        exceeded_m=bool(exc),
        counters=stream.counters.copy(),
    )


def simulate_batch(spec: ModelSpec, cfg: PathConfig, n_paths: int, seed: int,
                   threads: int = 1) -> list[PathResult]:
    """``n_paths`` independent paths with ``path_id = 0..n-1``, ordered by path id."""
    return run_batch_arrays(spec, cfg, n_paths, seed, threads).results()
