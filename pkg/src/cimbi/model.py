"""Model types for continuous-state interacting multi-type branching processes with immigration.

For ``i = 1..d`` the process solves::

    dX_i = (eta_i + sum_j b_ij X_j + gamma_i(X)) dt + sqrt(2 sigma_i X_i) dW_i
           + immigration jumps (nu)
           + own-type branching jumps, compensated (mu_i, intensity X_i)
           + jumps triggered by type j != i branching events (mu_j, intensity X_j)

with ``gamma_i(x) = x_i * sum_j c_ij x_j``. Jump measures are finite weighted
atom lists, and ``|z|`` always means the Euclidean norm.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class JumpMeasure:
    """Finite-activity jump measure given as weighted atoms.

    Parameters
    ----------
    weights : (k,) array
        Positive intensities.
    atoms : (k, d) array
        Nonnegative jump vectors, none identically zero.
    """

    weights: np.ndarray
    atoms: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        z = np.array(self.atoms, dtype=float)
        if z.size == 0:
            z = z.reshape(0, z.shape[-1] if z.ndim == 2 else 0)
        if z.ndim == 1:
            z = z.reshape(len(w), -1) if len(w) else z.reshape(0, 0)
        if z.shape[0] != w.shape[0]:
            raise ValueError("weights and atoms must have the same length")
        w.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "atoms", z)

    @classmethod
    def empty(cls, d: int) -> "JumpMeasure":
        return cls(np.zeros(0), np.zeros((0, d)))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, Sequence[float]]], d: int | None = None) -> "JumpMeasure":
        """Build from ``[(weight, z), ...]``."""
        if not atoms:
            return cls.empty(d if d is not None else 0)
        w = [a[0] for a in atoms]
        z = [list(np.atleast_1d(a[1])) for a in atoms]
        return cls(np.array(w, dtype=float), np.array(z, dtype=float))

    @property
    def n_atoms(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int | None:
        return int(self.atoms.shape[1]) if self.atoms.ndim == 2 and self.atoms.shape[1] else None

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_empty(self) -> bool:
        return self.n_atoms == 0

    # moment conditions are automatic for finite atom lists
    moment_conditions_satisfied = True

    def violations(self, label: str = "measure") -> list[str]:
        out = []
        for k in range(self.n_atoms):
            if not np.isfinite(self.weights[k]) or self.weights[k] <= 0:
                out.append(f"{label} atom {k}: weight must be > 0")
            z = self.atoms[k]
            if np.any(z < 0) or not np.all(np.isfinite(z)):
                out.append(f"{label} atom {k}: jump vector must lie in the nonnegative orthant")
            elif not np.any(z > 0):
                out.append(f"{label} atom {k}: jump vector must be nonzero")
        return out

    def scaled(self, factor: float) -> "JumpMeasure":
        return JumpMeasure(self.weights * factor, self.atoms)

    def permuted(self, perm: Sequence[int]) -> "JumpMeasure":
        if self.is_empty:
            return self
        return JumpMeasure(self.weights, self.atoms[:, list(perm)])

    def __eq__(self, other):
        if not isinstance(other, JumpMeasure):
            return NotImplemented
        return (self.weights.shape == other.weights.shape
                and np.array_equal(self.weights, other.weights)
                and self.atoms.size == other.atoms.size
                and np.array_equal(self.atoms.reshape(-1), other.atoms.reshape(-1)))

    __hash__ = None


def measure_moment(m: JumpMeasure, coord: int, power: int = 1, radius: float = np.inf) -> float:
    """``sum over atoms with |z| <= radius of weight * z[coord]**power``."""
    if m.is_empty:
        return 0.0
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    keep = np.linalg.norm(m.atoms, axis=1) <= radius
    return float(np.sum(m.weights[keep] * m.atoms[keep, coord] ** power))


class InteractionRegime(enum.Enum):
    COMPETITION = "Competition"
    COOPERATION = "Cooperation"
    MIXED = "Mixed"


@dataclass(frozen=True)
class ModelSpec:
    """Full parameterization of the jump SDE.

    ``strict_interaction=False`` admits ``c_ii <= 0`` (and ``c = 0``) so that
    interaction-free reference models can be written down; the theorem
    checkers still demand ``c_ii < 0`` where needed.
    """

    x0: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    B: np.ndarray
    C: np.ndarray
    nu: JumpMeasure | None = None
    mu: tuple[JumpMeasure, ...] | None = None
    strict_interaction: bool = True

    def __post_init__(self):
        x0 = np.atleast_1d(np.array(self.x0, dtype=float))
        d = x0.shape[0]
        arrays = {
            "x0": x0,
            "eta": np.atleast_1d(np.array(self.eta, dtype=float)),
            "sigma": np.atleast_1d(np.array(self.sigma, dtype=float)),
            "B": np.array(self.B, dtype=float).reshape(d, d),
            "C": np.array(self.C, dtype=float).reshape(d, d),
        }
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        nu = self.nu if self.nu is not None else JumpMeasure.empty(d)
        if nu.is_empty:
            nu = JumpMeasure.empty(d)
        mu = tuple(self.mu) if self.mu is not None else tuple(JumpMeasure.empty(d) for _ in range(d))
        mu = tuple(JumpMeasure.empty(d) if m.is_empty else m for m in mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "mu", mu)

    @property
    def d(self) -> int:
        return int(self.x0.shape[0])

    @property
    def has_jumps(self) -> bool:
        return not self.nu.is_empty or any(not m.is_empty for m in self.mu)

    @property
    def b_diagonal(self) -> bool:
        return bool(np.all(self.B[~np.eye(self.d, dtype=bool)] == 0))

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def permuted(self, perm: Sequence[int]) -> "ModelSpec":
        """Relabel coordinates: new coordinate k is old coordinate ``perm[k]``."""
        p = list(perm)
        return ModelSpec(
            x0=self.x0[p], eta=self.eta[p], sigma=self.sigma[p],
            B=self.B[np.ix_(p, p)], C=self.C[np.ix_(p, p)],
            nu=self.nu.permuted(p),
            mu=tuple(self.mu[i].permuted(p) for i in p),
            strict_interaction=self.strict_interaction,
        )

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("x0", "eta", "sigma", "B", "C"))
                and self.nu == other.nu and self.mu == other.mu
                and self.strict_interaction == other.strict_interaction)

    __hash__ = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def validate(spec: ModelSpec) -> ValidationReport:
    """Collect every violated model invariant; an empty report means valid.

    Coordinates in messages are 1-based, matching the usual matrix notation.
    """
    d = spec.d
    out: list[str] = []
    for name in ("eta", "sigma"):
        v = getattr(spec, name)
        if v.shape != (d,):
            out.append(f"{name} must have length {d}, got {v.shape[0]}")
            continue
        for i in np.flatnonzero(~(v >= 0)):
            out.append(f"{name}[{i + 1}] must be >= 0")
    for i in np.flatnonzero(~(spec.x0 > 0)):
        out.append(f"x0[{i + 1}] must be > 0")
    for name in ("B", "C"):
        if not np.all(np.isfinite(getattr(spec, name))):
            out.append(f"{name} has non-finite entries")
    for i in range(d):
        for j in range(d):
            if i != j and spec.B[i, j] < 0:
                out.append(f"off-diagonal B negative at ({i + 1},{j + 1})")
    for i in range(d):
        cii = spec.C[i, i]
        if spec.strict_interaction and not cii < 0:
            out.append(f"c_ii must be < 0 (c_{i + 1}{i + 1} = {cii:g})")
        elif not spec.strict_interaction and not cii <= 0:
            out.append(f"c_ii must be <= 0 (c_{i + 1}{i + 1} = {cii:g})")
    if len(spec.mu) != d:
        out.append(f"expected {d} branching measures, got {len(spec.mu)}")
    measures = [("nu", spec.nu)] + [(f"mu[{i + 1}]", m) for i, m in enumerate(spec.mu)]
    for label, m in measures:
        if not m.is_empty and m.dim != d:
            out.append(f"{label} atoms must have dimension {d}")
            continue
        out.extend(m.violations(label))
    return ValidationReport(tuple(out))


def interaction_regime(C: np.ndarray) -> InteractionRegime:
    C = np.asarray(C, dtype=float)
    off = C[~np.eye(C.shape[0], dtype=bool)]
    if np.all(off <= 0):
        return InteractionRegime.COMPETITION
    if np.all(off >= 0):
        return InteractionRegime.COOPERATION
    return InteractionRegime.MIXED


def gamma(spec: ModelSpec, x) -> np.ndarray:
    """Interaction drift ``gamma_i(x) = x_i * sum_j c_ij x_j``."""
    x = np.asarray(x, dtype=float)
    return x * (spec.C @ x)


def drift(spec: ModelSpec, x) -> np.ndarray:
    """``eta + B x + gamma(x)`` (no jump compensator)."""
    x = np.asarray(x, dtype=float)
    return spec.eta + spec.B @ x + gamma(spec, x)


def own_jump_means(spec: ModelSpec) -> np.ndarray:
    """``int z_i mu_i(dz)`` per type; the compensator rate of own-type jumps."""
    return np.array([measure_moment(spec.mu[i], i, 1) for i in range(spec.d)])
