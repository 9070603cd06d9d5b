"""TOML experiment files.

Layout::

    [model]
    x0 = [1.0, 1.0]
    eta = [2.0, 2.0]
    sigma = [1.0, 1.0]
    B = [[-1.0, 0.0], [0.0, -1.0]]     # row-major
    C = [[-1.0, -0.2], [-0.3, -1.0]]
    strict_interaction = true           # optional

    [[model.nu]]                        # immigration atoms, optional
    weight = 0.5
    z = [0.5, 0.5]

    [[model.mu]]                        # branching atoms, optional
    type = 1                            # 1-based type index
    weight = 0.2
    z = [0.3, 0.1]

    [path]                              # PathConfig fields, all optional
    [experiment]                        # see Experiment

Jump sizes use the Euclidean norm wherever a radius appears.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .engine import PathConfig
from .model import JumpMeasure, ModelSpec, validate


class ConfigError(ValueError):
    """Schema problems; ``errors`` holds one message per problem with a line reference when known."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ModelInvalid(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class Experiment:
    seed: int = 0
    paths: int = 1000
    threads: int = 1
    sign_mode: str = "NonExplosion"
    grid_depth: int = 40
    quantiles: list = field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])
    T_sweep: list = field(default_factory=list)
    eps_sweep: list = field(default_factory=list)
    M: float = 0.0
    tol: float = -1.0
    m: float = 0.0
    grid: int = 64
    x: list = field(default_factory=list)
    h: float = 1e-3
    r: float = 0.0
    drift_grid: int = 201

    @property
    def tol_or_none(self) -> float | None:
        return None if self.tol < 0 else self.tol


_MODEL_KEYS = {"x0", "eta", "sigma", "B", "C", "strict_interaction", "nu", "mu"}
_PATH_KEYS = {f.name for f in fields(PathConfig)}
_EXP_KEYS = {f.name for f in fields(Experiment)}


class _Locator:
    """Best-effort line numbers for keys and array-of-table entries."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def table(self, name: str, index: int | None = None) -> int | None:
        hdr = re.compile(r"^\s*\[\[\s*" + re.escape(name) + r"\s*\]\]" if index is not None
                         else r"^\s*\[\s*" + re.escape(name) + r"\s*\]")
        hits = [i + 1 for i, ln in enumerate(self.lines) if hdr.match(ln)]
        if index is None:
            return hits[0] if hits else None
        return hits[index] if index < len(hits) else None

    def key(self, key: str, start: int | None = None) -> int | None:
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        begin = (start or 1) - 1
        for i in range(begin, len(self.lines)):
            if i > begin and start is not None and self.lines[i].lstrip().startswith("["):
                break
            if pat.match(self.lines[i]):
                return i + 1
        return None

    def ref(self, line: int | None) -> str:
        return f" (line {line})" if line else ""


def _vector(raw, name, errors, loc, start=None):
    line = loc.key(name, start)
    if not isinstance(raw, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        errors.append(f"{name} must be a list of numbers{loc.ref(line)}")
        return None
    return [float(v) for v in raw]


def _matrix(raw, name, d, errors, loc, start=None):
    line = loc.key(name, start)
    ok = (isinstance(raw, list) and len(raw) == d
          and all(isinstance(r, list) and len(r) == d
                  and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in r) for r in raw))
    if not ok:
        errors.append(f"{name} must be a {d}x{d} list of rows{loc.ref(line)}")
        return None
    return [[float(v) for v in r] for r in raw]


def _atoms(raw, table, d, errors, loc, with_type):
    if raw is None:
        return []
    if not isinstance(raw, list):
        errors.append(f"{table} must be an array of tables{loc.ref(loc.key(table.split('.')[-1]))}")
        return []
    out = []
    for k, atom in enumerate(raw):
        line = loc.table(table, k)
        where = f"{table} atom {k}{loc.ref(line)}"
        if not isinstance(atom, dict):
            errors.append(f"{where}: expected a table")
            continue
        extra = set(atom) - ({"weight", "z", "type"} if with_type else {"weight", "z"})
        if extra:
            errors.append(f"{where}: unknown keys {sorted(extra)}")
        w = atom.get("weight")
        z = atom.get("z")
        if not isinstance(w, (int, float)) or isinstance(w, bool) or not math.isfinite(w) or w <= 0:
            errors.append(f"{where}: weight must be a positive number")
            continue
        if (not isinstance(z, list) or len(z) != d
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in z)):
            errors.append(f"{where}: z must be a list of {d} numbers")
            continue
        if any(v < 0 for v in z) or not any(v > 0 for v in z):
            errors.append(f"{where}: z must be nonnegative and nonzero")
            continue
        t = None
        if with_type:
            t = atom.get("type")
            if not isinstance(t, int) or isinstance(t, bool) or not 1 <= t <= d:
                errors.append(f"{where}: type must be an integer in 1..{d}")
                continue
        out.append((t, float(w), [float(v) for v in z]))
    return out


def parse_config_text(text: str, check_model: bool = True) -> tuple[ModelSpec, PathConfig, Experiment]:
    """Parse TOML text; raises ConfigError on schema problems and ModelInvalid on model invariants."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax error: {exc}"]) from exc
    loc = _Locator(text)
    errors: list[str] = []
    unknown = set(data) - {"model", "path", "experiment"}
    for u in sorted(unknown):
        errors.append(f"unknown section [{u}]{loc.ref(loc.table(u))}")
    model = data.get("model")
    if not isinstance(model, dict):
        raise ConfigError(errors + ["missing [model] section"])
    mstart = loc.table("model")
    for u in sorted(set(model) - _MODEL_KEYS):
        errors.append(f"unknown key model.{u}{loc.ref(loc.key(u, mstart))}")
    missing = [f"missing model.{req}{loc.ref(mstart)}" for req in ("x0", "eta", "sigma", "B", "C")
               if req not in model]
    if missing:
        raise ConfigError(errors + missing)
    x0 = _vector(model["x0"], "x0", errors, loc, mstart)
    if x0 is None or not x0:
        raise ConfigError(errors or ["x0 must be nonempty"])
    d = len(x0)
    eta = _vector(model["eta"], "eta", errors, loc, mstart)
    sigma = _vector(model["sigma"], "sigma", errors, loc, mstart)
    for name, v in (("eta", eta), ("sigma", sigma)):
        if v is not None and len(v) != d:
            errors.append(f"{name} must have length {d}{loc.ref(loc.key(name, mstart))}")
    B = _matrix(model["B"], "B", d, errors, loc, mstart)
    C = _matrix(model["C"], "C", d, errors, loc, mstart)
    strict = model.get("strict_interaction", True)
    if not isinstance(strict, bool):
        errors.append(f"strict_interaction must be true or false{loc.ref(loc.key('strict_interaction', mstart))}")
    nu_atoms = _atoms(model.get("nu"), "model.nu", d, errors, loc, with_type=False)
    mu_atoms = _atoms(model.get("mu"), "model.mu", d, errors, loc, with_type=True)

    path = data.get("path", {})
    if not isinstance(path, dict):
        errors.append("[path] must be a table")
        path = {}
    pstart = loc.table("path")
    for u in sorted(set(path) - _PATH_KEYS):
        errors.append(f"unknown key path.{u}{loc.ref(loc.key(u, pstart))}")
    exp = data.get("experiment", {})
    if not isinstance(exp, dict):
        errors.append("[experiment] must be a table")
        exp = {}
    estart = loc.table("experiment")
    for u in sorted(set(exp) - _EXP_KEYS):
        errors.append(f"unknown key experiment.{u}{loc.ref(loc.key(u, estart))}")
    if errors:
        raise ConfigError(errors)

    try:
        cfg = PathConfig(**{k: v for k, v in path.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"[path]: {exc}{loc.ref(pstart)}"]) from exc
    try:
        experiment = Experiment(**exp)
    except TypeError as exc:
        raise ConfigError([f"[experiment]: {exc}{loc.ref(estart)}"]) from exc

    nu = JumpMeasure.from_atoms([(w, z) for _, w, z in nu_atoms], d)
    mu = tuple(JumpMeasure.from_atoms([(w, z) for t, w, z in mu_atoms if t == i + 1], d) for i in range(d))
    spec = ModelSpec(x0, eta, sigma, B, C, nu=nu, mu=mu, strict_interaction=strict)
    if check_model:
        report = validate(spec)
        if not report.ok:
            raise ModelInvalid(report.violations)
        try:
            cfg.check_against(spec)
        except ValueError as exc:
            raise ModelInvalid([str(exc)]) from exc
    return spec, cfg, experiment


def parse_config(path, check_model: bool = True) -> tuple[ModelSpec, PathConfig, Experiment]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file not found: {p}"])
    return parse_config_text(p.read_text(), check_model)


def config_dict(spec: ModelSpec, cfg: PathConfig, experiment: Experiment | None = None) -> dict:
    model = {
        "x0": spec.x0.tolist(), "eta": spec.eta.tolist(), "sigma": spec.sigma.tolist(),
        "B": spec.B.tolist(), "C": spec.C.tolist(), "strict_interaction": spec.strict_interaction,
    }
    if not spec.nu.is_empty:
        model["nu"] = [{"weight": float(w), "z": z.tolist()} for w, z in zip(spec.nu.weights, spec.nu.atoms)]
    mu = [{"type": i + 1, "weight": float(w), "z": z.tolist()}
          for i, m in enumerate(spec.mu) for w, z in zip(m.weights, m.atoms)]
    if mu:
        model["mu"] = mu
    out = {"model": model, "path": asdict(cfg)}
    if experiment is not None:
        out["experiment"] = asdict(experiment)
    return out


def emit_config(spec: ModelSpec, cfg: PathConfig, experiment: Experiment | None = None) -> str:
    """Canonical TOML; parsing the result gives back equal objects."""
    return tomli_w.dumps(config_dict(spec, cfg, experiment))
