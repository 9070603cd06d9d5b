"""Mechanical checks of the boundary-behaviour criteria.

Four sufficient criteria are checked, each producing a :class:`ConditionReport`:

* non-attainment: ``eta_i > sigma_i`` for every i (or ``eta_i = sigma_i`` with
  ``int_{|z|<=1} z_i mu_i(dz) < inf``, always true for atom measures);
* almost-sure attainment for diffusions (no jumps, diagonal B, ``eta_i <= sigma_i / 2``);
* positive-probability attainment with finite jump measures (same shape, with
  ``b_ii`` replaced by ``b_ii - int z_i mu_i(dz)`` in the copositive branch);
* attainment under competitive interaction (``c_ij <= 0`` off the diagonal,
  ``eta_i < sigma_i``).

The two attainment criteria share one structural test on ``M_ij = c_ij sigma_j``:
either every (effective) ``b_ii < 0`` and ``-sym(M)`` is copositive, or
``sym(M)`` is negative definite.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .engine import NumericalFailure
from .model import InteractionRegime, ModelSpec, interaction_regime, measure_moment, own_jump_means

TOL_EIG = 1e-10
SYMMETRY_TOL = 1e-9
DEFAULT_GRID_DEPTH = 40
MAX_GRID_POINTS = 2_000_000
MAX_KAPLAN_DIM = 12
REFUTE_TOL = 1e-12


class Tri(enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class TriState:
    value: Tri
    witness: np.ndarray | None = None
    note: str = ""

    def __post_init__(self):
        if self.value is Tri.FAILS and self.witness is None:
            raise ValueError("a failing check needs a witness")

    @property
    def holds(self) -> bool:
        return self.value is Tri.HOLDS

    @property
    def fails(self) -> bool:
        return self.value is Tri.FAILS

    @property
    def unknown(self) -> bool:
        return self.value is Tri.UNKNOWN

    @classmethod
    def of(cls, ok: bool, witness=None, note: str = "") -> "TriState":
        if ok:
            return cls(Tri.HOLDS, note=note)
        w = np.zeros(1) if witness is None else np.asarray(witness, dtype=float)
        return cls(Tri.FAILS, w, note)

    def __str__(self):
        return self.value.value


class Verdict(enum.Enum):
    NEVER_HITS = "NeverHits"
    HITS_ALMOST_SURELY = "HitsAlmostSurely"
    HITS_WITH_POSITIVE_PROBABILITY = "HitsWithPositiveProbability"
    EXTINCT_IN_FINITE_TIME = "ExtinctInFiniteTime"
    INAPPLICABLE = "Inapplicable"
    INCONCLUSIVE = "Inconclusive"


ATTAINMENT = (Verdict.HITS_ALMOST_SURELY, Verdict.HITS_WITH_POSITIVE_PROBABILITY,
              Verdict.EXTINCT_IN_FINITE_TIME)
_STRENGTH = {Verdict.EXTINCT_IN_FINITE_TIME: 3, Verdict.HITS_ALMOST_SURELY: 2,
             Verdict.HITS_WITH_POSITIVE_PROBABILITY: 1}


class SignMode(enum.Enum):
    PAPER_LITERAL = "PaperLiteral"
    NON_EXPLOSION = "NonExplosion"


@dataclass
class ConditionReport:
    theorem: str
    verdict: Verdict
    checks: list[tuple[str, TriState]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def check(self, name: str) -> TriState:
        for n, s in self.checks:
            if n == name:
                return s
        raise KeyError(name)


class ContradictionError(RuntimeError):
    """Both non-attainment and attainment were derived for one model."""


@dataclass
class RegimeReport:
    per_theorem: list[ConditionReport]
    aggregate: Verdict
    regime: InteractionRegime
    interaction_condition: TriState
    sign_mode: SignMode

    def report(self, theorem: str) -> ConditionReport:
        for r in self.per_theorem:
            if r.theorem == theorem:
                return r
        raise KeyError(theorem)


# ---------------------------------------------------------------- matrix tests


def symmetrize(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (M + M.T)


def _require_symmetric(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    S = symmetrize(M)
    scale = max(1.0, float(np.max(np.abs(S))) if S.size else 1.0)
    if np.max(np.abs(M - S), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric; symmetrize (M + M.T) / 2 first")
    return S


def quad(M, y) -> float:
    y = np.asarray(y, dtype=float)
    return float(y @ np.asarray(M, dtype=float) @ y)


def simplex_grid(d: int, depth: int) -> np.ndarray:
    """All points ``k / depth`` with nonnegative integer ``k`` summing to ``depth``."""
    if d == 1:
        return np.ones((1, 1))
    pts = []
    for bars in itertools.combinations(range(depth + d - 1), d - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(depth + d - 2 - prev)
        pts.append(row)
    return np.array(pts, dtype=float) / depth


def _grid_depth_for(d: int, depth: int) -> int:
    while depth > 1 and math.comb(depth + d - 1, d - 1) > MAX_GRID_POINTS:
        depth -= 1
    return depth


def _positive_in_span(V: np.ndarray) -> np.ndarray | None:
    """A strictly positive vector in the column span of ``V``, if one exists."""
    n, k = V.shape
    if k == 1:
        v = V[:, 0]
        if np.all(v > 0):
            return v
        if np.all(v < 0):
            return -v
        return None
    # find c with V c >= 1 (feasible iff the span meets the open orthant)
    res = linprog(np.zeros(k), A_ub=-V, b_ub=-np.ones(n), bounds=[(None, None)] * k, method="highs")
    if res.status == 0:
        return V @ res.x
    return None


def kaplan_copositive(S: np.ndarray) -> TriState:
    """Exact copositivity via principal submatrices.

    ``S`` is copositive iff no principal submatrix has a strictly positive
    eigenvector with a negative eigenvalue (Kaplan's criterion). Degenerate
    eigenspaces are searched for a positive vector with a small LP.
    """
    d = S.shape[0]
    if d > MAX_KAPLAN_DIM:
        return TriState(Tri.UNKNOWN, note=f"exact test skipped for d > {MAX_KAPLAN_DIM}")
    scale = max(1.0, float(np.max(np.abs(S))))
    tol = 1e-12 * scale
    for size in range(1, d + 1):
        for idx in itertools.combinations(range(d), size):
            sub = S[np.ix_(idx, idx)]
            try:
                w, V = np.linalg.eigh(sub)
            except np.linalg.LinAlgError as exc:  # pragma: no cover
                raise NumericalFailure("eigen-solver did not converge") from exc
            neg = np.flatnonzero(w < -tol)
            if neg.size == 0:
                continue
            # group numerically repeated eigenvalues
            groups: list[list[int]] = []
            for j in neg:
                if groups and abs(w[j] - w[groups[-1][-1]]) <= 1e-9 * scale:
                    groups[-1].append(int(j))
                else:
                    groups.append([int(j)])
            for g in groups:
                v = _positive_in_span(V[:, g])
                if v is not None:
                    y = np.zeros(d)
                    y[list(idx)] = v / v.sum()
                    if quad(S, y) < 0:
                        return TriState.of(False, y, "positive eigenvector with negative eigenvalue")
    return TriState(Tri.HOLDS, note="exact principal-submatrix test")


def is_copositive(M, grid_depth: int = DEFAULT_GRID_DEPTH, exact: bool = True) -> TriState:
    """Whether ``y^T M y >= 0`` for all ``y >= 0``.

    Closed form for ``d <= 2``. For ``d >= 3``: nonnegative entries or positive
    semidefiniteness certify Holds; a simplex grid at ``grid_depth`` looks for a
    negative value; if neither settles it and ``exact`` is set, the question is
    escalated to :func:`kaplan_copositive`, otherwise the answer is Unknown.
    """
    S = _require_symmetric(M)
    d = S.shape[0]
    if d == 1:
        return TriState.of(S[0, 0] >= 0, [1.0])
    if d == 2:
        a, b, c = S[0, 0], S[0, 1], S[1, 1]
        if a < 0:
            return TriState.of(False, [1.0, 0.0])
        if c < 0:
            return TriState.of(False, [0.0, 1.0])
        if b + math.sqrt(a * c) >= 0:
            return TriState.of(True)
        if a > 0 and c > 0:
            w = np.array([math.sqrt(c), math.sqrt(a)])
        elif a == 0 and c > 0:
            w = np.array([c, -b])
        elif c == 0 and a > 0:
            w = np.array([-b, a])
        else:
            w = np.array([1.0, 1.0])
        return TriState.of(False, w)
    if np.all(S >= 0):
        return TriState(Tri.HOLDS, note="nonnegative entries")
    try:
        lam_min = float(np.linalg.eigvalsh(S)[0])
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalFailure("eigen-solver did not converge") from exc
    if lam_min >= 0:
        return TriState(Tri.HOLDS, note="positive semidefinite")
    for i in range(d):
        if S[i, i] < 0:
            e = np.zeros(d)
            e[i] = 1.0
            return TriState.of(False, e)
    depth = _grid_depth_for(d, grid_depth)
    pts = simplex_grid(d, depth)
    vals = np.einsum("ni,ij,nj->n", pts, S, pts)
    k = int(np.argmin(vals))
    # rounding-level negatives on exact zeros of the form are not refutations
    if vals[k] < -REFUTE_TOL * max(1.0, float(np.max(np.abs(S)))):
        return TriState.of(False, pts[k], f"simplex grid depth {depth}")
    if exact:
        return kaplan_copositive(S)
    return TriState(Tri.UNKNOWN, note=f"simplex grid depth {depth} found no negative value")


def is_negative_definite(M) -> TriState:
    """Strict negative definiteness of ``(M + M^T) / 2`` with margin ``TOL_EIG``."""
    S = symmetrize(M)
    try:
        w, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalFailure("eigen-solver did not converge") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("non-finite eigenvalues")
    if w[-1] < -TOL_EIG:
        return TriState.of(True)
    return TriState.of(False, V[:, -1], f"max eigenvalue {w[-1]:.3g}")


# ---------------------------------------------------------------- criteria


def check_interaction_condition(spec: ModelSpec, sign_mode: SignMode = SignMode.NON_EXPLOSION,
                                grid_depth: int = DEFAULT_GRID_DEPTH) -> TriState:
    """Sign condition on ``sum_i gamma_i(x) = x^T C x`` over the nonnegative orthant.

    ``PAPER_LITERAL`` tests ``x^T C x >= 0``; ``NON_EXPLOSION`` tests ``x^T C x <= 0``,
    the direction the moment bound behind well-posedness actually uses.
    """
    S = symmetrize(spec.C)
    M = S if sign_mode is SignMode.PAPER_LITERAL else -S
    res = is_copositive(M, grid_depth)
    return TriState(res.value, res.witness, f"{sign_mode.value}: {res.note}".rstrip(": "))


def max_epsilon(spec: ModelSpec, i: int) -> tuple[float, bool] | None:
    """Largest ``eps in (0, 1]`` with ``eta_i >= sigma_i + 0.5 int_{|z|<=eps} z_i^2 mu_i(dz)``.

    Returns ``(eps, open_)``; ``open_`` means the supremum is not attained
    (feasible for every smaller eps but not at ``eps`` itself, because an atom
    sits exactly there). ``None`` when even ``eps -> 0+`` fails.
    """
    eta, sig = float(spec.eta[i]), float(spec.sigma[i])
    if eta < sig:
        return None
    meas = spec.mu[i]

    def feasible(eps: float) -> bool:
        return eta >= sig + 0.5 * measure_moment(meas, i, 2, eps)

    if feasible(1.0):
        return 1.0, False
    norms = np.linalg.norm(meas.atoms, axis=1)
    radii = np.unique(norms[(norms > 0) & (norms <= 1.0)])
    # the integral is a right-continuous step function jumping at the atom radii
    best = None
    for r in radii:
        if feasible(r):
            best = (float(r), False)
        elif feasible(np.nextafter(r, 0.0)):
            best = (float(r), True)
            break
        else:
            break
    if best is None:
        if radii.size and not feasible(np.nextafter(radii[0], 0.0)):
            return None
        return (float(radii[0]), True) if radii.size else None
    # between a feasible radius and the next atom radius the value stays feasible
    if not best[1]:
        larger = radii[radii > best[0]]
        if larger.size:
            return float(larger[0]), True
        return 1.0, False
    return best


def _copositive_or_definite(M: np.ndarray, b_eff: np.ndarray, grid_depth: int):
    cond1_b = TriState.of(bool(np.all(b_eff < 0)), np.eye(len(b_eff))[int(np.argmax(b_eff))])
    cond1_q = is_copositive(-symmetrize(M), grid_depth)
    cond2 = is_negative_definite(M)
    return cond1_b, cond1_q, cond2


def _interior(spec: ModelSpec) -> TriState:
    return TriState.of(bool(np.all(spec.x0 > 0)), spec.x0)


def _strict_C(spec: ModelSpec) -> TriState:
    diag = np.diag(spec.C)
    return TriState.of(bool(np.all(diag < 0)), np.eye(spec.d)[int(np.argmax(diag))])


def check_nonattainment(spec: ModelSpec) -> ConditionReport:
    """Never hitting the boundary from the interior."""
    d = spec.d
    strict = spec.eta > spec.sigma
    equal = spec.eta == spec.sigma
    small_jump_ok = [measure_moment(spec.mu[i], i, 1, 1.0) < math.inf for i in range(d)]
    per_coord = [bool(strict[i] or (equal[i] and small_jump_ok[i])) for i in range(d)]
    checks = [("x0 interior", _interior(spec)),
              ("c_ii < 0", _strict_C(spec))]
    for i in range(d):
        checks.append((f"eta_{i + 1} > sigma_{i + 1} or (= with finite small-jump mean)",
                       TriState.of(per_coord[i], np.eye(d)[i])))
    notes = []
    verdict = Verdict.NEVER_HITS if all(s.holds for _, s in checks) else Verdict.INAPPLICABLE
    if verdict is Verdict.NEVER_HITS:
        if np.all(strict):
            notes.append("clause eta > sigma")
        elif np.all(equal):
            notes.append("clause eta = sigma with int_{|z|<=1} z_i mu_i(dz) finite (atom measure)")
        else:
            notes.append("clauses mixed across coordinates: extrapolated beyond stated theorem")
        for i in range(d):
            eps = max_epsilon(spec, i)
            if strict[i] and eps is not None:
                notes.append(f"coordinate {i + 1}: largest feasible epsilon {eps[0]:g}{'-' if eps[1] else ''}")
    return ConditionReport("nonattainment", verdict, checks, notes)


def _attainment_shape(spec: ModelSpec, eta_bound: np.ndarray, grid_depth: int, b_eff: np.ndarray,
                      require_no_jumps: bool):
    d = spec.d
    checks = [("x0 interior", _interior(spec)),
              ("c_ii < 0", _strict_C(spec)),
              ("sigma_i > 0", TriState.of(bool(np.all(spec.sigma > 0)), np.eye(d)[int(np.argmin(spec.sigma))])),
              ("B diagonal", TriState.of(spec.b_diagonal, np.ones(d))),
              ("eta_i <= sigma_i / 2", TriState.of(bool(np.all(spec.eta <= eta_bound)),
                                                   np.eye(d)[int(np.argmax(spec.eta - eta_bound))]))]
    if require_no_jumps:
        checks.insert(0, ("no jumps", TriState.of(not spec.has_jumps, np.ones(d))))
    M = spec.C * spec.sigma[None, :]
    c1b, c1q, c2 = _copositive_or_definite(M, b_eff, grid_depth)
    return checks, c1b, c1q, c2


def _attainment_verdict(name, success, checks, c1b, c1q, c2, b_label):
    checks = list(checks)
    notes = []
    if not all(s.holds for _, s in checks):
        return ConditionReport(name, Verdict.INAPPLICABLE, checks + [
            (f"(1) {b_label} < 0", c1b), ("(1) -sym(M) copositive", c1q), ("(2) M negative definite", c2)], notes)
    cond1 = c1b.holds and c1q.holds
    if c2.holds:
        checks += [("(2) M negative definite", c2)]
        notes.append("via condition (2)" + ("; condition (1) also holds" if cond1 else ""))
        return ConditionReport(name, success, checks, notes)
    if cond1:
        checks += [(f"(1) {b_label} < 0", c1b), ("(1) -sym(M) copositive", c1q)]
        notes.append("via condition (1)")
        return ConditionReport(name, success, checks, notes)
    tail = [(f"(1) {b_label} < 0", c1b), ("(1) -sym(M) copositive", c1q), ("(2) M negative definite", c2)]
    if c1b.holds and c1q.unknown:
        notes.append("copositivity undecided at this grid depth")
        return ConditionReport(name, Verdict.INCONCLUSIVE, checks + tail, notes)
    return ConditionReport(name, Verdict.INAPPLICABLE, checks + tail, notes)


def check_attainment_diffusion(spec: ModelSpec, grid_depth: int = DEFAULT_GRID_DEPTH) -> ConditionReport:
    """Almost-sure attainment for the pure diffusion with diagonal linear drift."""
    b = np.diag(spec.B).copy()
    checks, c1b, c1q, c2 = _attainment_shape(spec, spec.sigma / 2, grid_depth, b, require_no_jumps=True)
    return _attainment_verdict("attainment_diffusion", Verdict.HITS_ALMOST_SURELY, checks, c1b, c1q, c2, "b_ii")


def check_attainment_jumps(spec: ModelSpec, grid_depth: int = DEFAULT_GRID_DEPTH) -> ConditionReport:
    """Positive-probability attainment with finite jump measures."""
    b_tilde = np.diag(spec.B) - own_jump_means(spec)
    checks, c1b, c1q, c2 = _attainment_shape(spec, spec.sigma / 2, grid_depth, b_tilde, require_no_jumps=False)
    checks.append(("finite jump measures", TriState.of(True)))
    rep = _attainment_verdict("attainment_jumps", Verdict.HITS_WITH_POSITIVE_PROBABILITY,
                              checks, c1b, c1q, c2, "b_ii - int z_i mu_i")
    rep.notes.append("b_tilde = " + np.array2string(b_tilde, precision=6))
    return rep


def check_attainment_competitive(spec: ModelSpec) -> ConditionReport:
    """Attainment when the interaction is competitive and ``eta_i < sigma_i``."""
    d = spec.d
    off = spec.C[~np.eye(d, dtype=bool)]
    comp = bool(np.all(off <= 0))
    witness = np.ones(d)
    if not comp:
        i, j = np.unravel_index(np.argmax(np.where(np.eye(d, dtype=bool), -np.inf, spec.C)), spec.C.shape)
        witness = np.zeros(d)
        witness[[i, j]] = 1.0
    checks = [("x0 interior", _interior(spec)),
              ("c_ii < 0", _strict_C(spec)),
              ("sigma_i > 0", TriState.of(bool(np.all(spec.sigma > 0)), np.eye(d)[int(np.argmin(spec.sigma))])),
              ("B diagonal", TriState.of(spec.b_diagonal, np.ones(d))),
              ("competitive (c_ij <= 0, i != j)", TriState.of(comp, witness)),
              ("eta_i < sigma_i", TriState.of(bool(np.all(spec.eta < spec.sigma)),
                                              np.eye(d)[int(np.argmax(spec.eta - spec.sigma))]))]
    notes = []
    if not all(s.holds for _, s in checks):
        return ConditionReport("attainment_competitive", Verdict.INAPPLICABLE, checks, notes)
    if spec.has_jumps:
        notes.append("finite jump measures: positive probability only")
        return ConditionReport("attainment_competitive", Verdict.HITS_WITH_POSITIVE_PROBABILITY, checks, notes)
    notes.append("all jump measures zero")
    return ConditionReport("attainment_competitive", Verdict.HITS_ALMOST_SURELY, checks, notes)


def classify(spec: ModelSpec, sign_mode: SignMode = SignMode.NON_EXPLOSION,
             grid_depth: int = DEFAULT_GRID_DEPTH) -> RegimeReport:
    """Run every criterion and aggregate.

    NeverHits wins when it applies; otherwise the strongest attainment verdict
    (extinction > almost sure > positive probability). Extinction is reported
    when an almost-sure criterion applies with ``eta = 0``.
    """
    reports = [check_nonattainment(spec),
               check_attainment_diffusion(spec, grid_depth),
               check_attainment_jumps(spec, grid_depth),
               check_attainment_competitive(spec)]
    verdicts = [r.verdict for r in reports]
    never = Verdict.NEVER_HITS in verdicts
    attain = [v for v in verdicts if v in ATTAINMENT]
    if never and attain:
        raise ContradictionError(f"both NeverHits and {attain[0].value} derived")
    if never:
        aggregate = Verdict.NEVER_HITS
    elif attain:
        aggregate = max(attain, key=_STRENGTH.__getitem__)
        if aggregate is Verdict.HITS_ALMOST_SURELY and np.all(spec.eta == 0) and spec.nu.is_empty:
            # the hypotheses pass to every sub-system left after a type dies out
            aggregate = Verdict.EXTINCT_IN_FINITE_TIME
            for r in reports:
                if r.verdict is Verdict.HITS_ALMOST_SURELY:
                    r.notes.append("eta = 0: extinction in finite time")
    else:
        aggregate = Verdict.INCONCLUSIVE
    return RegimeReport(reports, aggregate, interaction_regime(spec.C),
                        check_interaction_condition(spec, sign_mode, grid_depth), sign_mode)
