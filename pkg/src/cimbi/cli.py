"""Command-line front end.

``cimbi <subcommand> --config FILE [--seed N] [--paths N] [--out-dir DIR]
[--format csv|json] [--threads N]``

Every run writes ``<subcommand>.csv`` (or ``.json``) into the output
directory and appends one line to ``ledger.jsonl`` there. Thread count affects
speed only. Exit codes: 0 success, 1 config error, 2 model-invariant
violation, 3 numerical failure (including more than 1% exploded paths).

CSV column orders are listed in ``COLUMNS`` and are frozen.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import SignMode, Tri, classify as classify_spec
from .config import ConfigError, Experiment, ModelInvalid, emit_config, parse_config
from .engine import NumericalFailure, PathConfig, run_batch_arrays
from .lyapunov import find_domination_constant, weak_generator_check
from .model import ModelSpec, validate
from .montecarlo import (comparison_domination_rate, estimate_hit_probability, extinction_probability,
                         hit_probability_lower_bound, hitting_time_quantiles)
from .transform import certified_drift_radius, coupled_ZU_rate, find_drift_bound

EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3

ESTIMATE_COLUMNS = ["estimator", "p_hat", "ci_low", "ci_high", "n", "n_excluded", "T", "dt", "eps_hit",
                    "unreliable", "config_digest"]
COLUMNS = {
    "validate": ["index", "violation"],
    "classify": ["theorem", "verdict", "check", "value", "witness", "note"],
    "simulate": ["path_id", "hit", "hit_time", "hit_face", "exploded", "final_state"],
    "hitprob": ESTIMATE_COLUMNS,
    "hittimes": ["q", "t_q", "hit_fraction", "n_hits", "n"],
    "extinction": ESTIMATE_COLUMNS,
    "bound34": ["bound", "pA", "pA_ci_low", "pA_ci_high", "pB_exact", "T", "M", "n", "config_digest"],
    "compareZU": ["dt", "tol", "n_paths", "n_excluded", "total_steps", "total_violations",
                  "violation_rate", "max_excess"],
    "compareY": ["dt", "tol", "n_paths", "n_excluded", "total_steps", "violation_rate",
                 "per_coordinate", "mean_x_final", "mean_y_final"],
    "lyapunov": ["m", "K_m", "grid_points", "status", "worst_ratio_point",
                 "weak_x", "weak_estimate", "weak_exact", "weak_se", "weak_rejected"],
    "cd1": ["r", "k", "certified", "certified_radius", "note"],
}
SUBCOMMANDS = tuple(COLUMNS)


class RunFailure(RuntimeError):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray, frozenset, set)):
        items = sorted(v) if isinstance(v, (frozenset, set)) else list(np.asarray(v).tolist())
        return ";".join(_fmt(x) for x in items)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (frozenset, set)):
        return sorted(v)
    return v


# ---------------------------------------------------------------- subcommands


def _estimate_row(name, e):
    s = e.settings
    return [name, e.p_hat, e.ci_low, e.ci_high, e.n, e.n_excluded, s.get("T"), s.get("dt"), s.get("eps_hit"),
            e.unreliable, e.config_digest]


def _check_reliable(*estimates):
    for e in estimates:
        if e.unreliable:
            raise RunFailure(EXIT_NUMERICAL, f"{e.n_excluded} exploded paths exceed 1% of the batch")


def run_validate(spec, cfg, exp, args):
    report = validate(spec)
    rows = [[i, v] for i, v in enumerate(report.violations)]
    return rows, {"valid": report.ok, "violations": list(report.violations)}, {}


def run_classify(spec, cfg, exp, args):
    rep = classify_spec(spec, SignMode(exp.sign_mode), exp.grid_depth)
    rows = []
    for r in rep.per_theorem:
        for name, state in r.checks:
            rows.append([r.theorem, r.verdict.value, name, state.value.value,
                         state.witness if state.witness is not None else None, state.note])
        rows.append([r.theorem, r.verdict.value, "", "", None, " | ".join(r.notes)])
    ic = rep.interaction_condition
    rows.append(["interaction_condition", "", rep.sign_mode.value, ic.value.value, ic.witness, ic.note])
    rows.append(["aggregate", rep.aggregate.value, "", "", None, rep.regime.value])
    summary = {"aggregate": rep.aggregate.value, "regime": rep.regime.value, "sign_mode": rep.sign_mode.value,
               "interaction_condition": ic.value.value,
               "per_theorem": {r.theorem: r.verdict.value for r in rep.per_theorem}}
    return rows, summary, {}


def run_simulate(spec, cfg, exp, args):
    res = run_batch_arrays(spec, cfg, args.paths, args.seed, args.threads)
    rows = []
    for p in range(res.n):
        r = res.result(p)
        rows.append([p, r.hit, r.hit_time, sorted(i + 1 for i in r.hit_face), r.exploded, r.final_state])
    extra = {}
    if cfg.record_stride > 0:
        buf = [["path_id", "t", "state"]]
        for p in range(res.n):
            for s in res.samples[p, : res.n_samples[p]]:
                buf.append([p, s[0], s[1:]])
        extra["simulate_samples.csv"] = buf
    summary = {"n": res.n, "hits": int(res.hit.sum()), "exploded": res.n_exploded}
    if res.n_exploded > 0.01 * res.n:
        raise RunFailure(EXIT_NUMERICAL, f"{res.n_exploded} exploded paths exceed 1% of the batch")
    return rows, summary, extra


def _sweeps(fn, spec, cfg, exp, args, name):
    extra = {}
    if exp.T_sweep:
        lines = [["T", "fraction"]]
        for T in exp.T_sweep:
            e = fn(spec, replace(cfg, T=float(T)), args.paths, args.seed, args.threads)
            lines.append([float(T), e.p_hat])
        extra[f"{name}_T_sweep.dat"] = lines
    if exp.eps_sweep:
        lines = [["eps_hit", "fraction"]]
        for eps in exp.eps_sweep:
            e = fn(spec, replace(cfg, eps_hit=float(eps)), args.paths, args.seed, args.threads)
            lines.append([float(eps), e.p_hat])
        extra[f"{name}_eps_sweep.dat"] = lines
    return extra


def run_hitprob(spec, cfg, exp, args):
    e = estimate_hit_probability(spec, cfg, args.paths, args.seed, args.threads)
    _check_reliable(e)
    extra = _sweeps(estimate_hit_probability, spec, cfg, exp, args, "hitprob")
    return [_estimate_row("hit_probability", e)], _jsonable(asdict(e)), extra


def run_hittimes(spec, cfg, exp, args):
    h = hitting_time_quantiles(spec, cfg, args.paths, args.seed, exp.quantiles, args.threads)
    rows = [[q, t, h.hit_fraction, h.n_hits, h.n] for q, t in (h.quantiles or [])]
    if h.quantiles is None:
        print(h.note, file=sys.stderr)
    return rows, _jsonable(asdict(h)), {}


def run_extinction(spec, cfg, exp, args):
    try:
        e = extinction_probability(spec, cfg, args.paths, args.seed, args.threads)
    except ValueError as exc:
        raise RunFailure(EXIT_INVALID, str(exc)) from exc
    _check_reliable(e)
    extra = _sweeps(extinction_probability, spec, cfg, exp, args, "extinction")
    return [_estimate_row("extinction_probability", e)], _jsonable(asdict(e)), extra


def run_bound34(spec, cfg, exp, args):
    M = exp.M if exp.M > 0 else 2.0 * float(np.max(spec.x0))
    r = hit_probability_lower_bound(spec, cfg.T, M, args.paths, args.seed, cfg.dt, cfg.eps_hit, args.threads,
                                    cfg.boundary_refine)
    _check_reliable(r.pA)
    row = [r.bound, r.pA.p_hat, r.pA.ci_low, r.pA.ci_high, r.pB_exact, cfg.T, M, r.pA.n, r.pA.config_digest]
    summary = {"bound": r.bound, "pA": _jsonable(asdict(r.pA)), "pB_exact": r.pB_exact, "note": r.note}
    return [row], summary, {}


def run_compareZU(spec, cfg, exp, args):
    try:
        s = coupled_ZU_rate(spec, cfg, args.paths, args.seed, exp.tol_or_none, args.threads)
    except ValueError as exc:
        raise RunFailure(EXIT_INVALID, str(exc)) from exc
    row = [s.dt, s.tol, s.n_paths, s.n_excluded, s.total_steps, s.total_violations, s.violation_rate, s.max_excess]
    return [row], _jsonable(asdict(s) | {"violation_rate": s.violation_rate}), {}


def run_compareY(spec, cfg, exp, args):
    try:
        r = comparison_domination_rate(spec, cfg, args.paths, args.seed, exp.tol_or_none, args.threads)
    except ValueError as exc:
        raise RunFailure(EXIT_INVALID, str(exc)) from exc
    row = [cfg.dt, r.tol, r.n_paths, r.n_excluded, r.total_steps, r.violation_rate, r.per_coordinate,
           r.mean_x_final, r.mean_y_final]
    return [row], _jsonable(asdict(r)), {}


def run_lyapunov(spec, cfg, exp, args):
    m = exp.m if exp.m > 0 else 10.0 * float(np.max(spec.x0))
    try:
        c = find_domination_constant(spec, m, exp.grid)
    except ValueError as exc:
        raise RunFailure(EXIT_INVALID, str(exc)) from exc
    row = [c.m, c.K_m, c.grid_points, c.status.value.value, c.worst_ratio_point]
    summary = {"m": c.m, "K_m": c.K_m, "status": c.status.value.value, "note": c.status.note}
    if exp.x:
        w = weak_generator_check(spec, exp.x, exp.h, args.paths, args.seed, args.threads)
        row += [exp.x, w.estimate, w.exact, w.se, w.n_rejected]
        summary["weak"] = _jsonable(asdict(w))
    else:
        row += [None] * 5
    return [row], _jsonable(summary), {}


def run_cd1(spec, cfg, exp, args):
    try:
        radius = certified_drift_radius(spec)
        r = exp.r if exp.r > 0 else (radius if radius is not None else 1.0)
        k, cert = find_drift_bound(spec, r, exp.drift_grid)
    except ValueError as exc:
        raise RunFailure(EXIT_INVALID, str(exc)) from exc
    row = [r, k, cert.value.value, radius, cert.note]
    return [row], {"r": r, "k": k, "certified": cert.value.value, "certified_radius": radius, "note": cert.note}, {}


HANDLERS = {
    "validate": run_validate, "classify": run_classify, "simulate": run_simulate, "hitprob": run_hitprob,
    "hittimes": run_hittimes, "extinction": run_extinction, "bound34": run_bound34,
    "compareZU": run_compareZU, "compareY": run_compareY, "lyapunov": run_lyapunov, "cd1": run_cd1,
}
NEEDS_VALID_MODEL = set(HANDLERS) - {"validate"}


# ---------------------------------------------------------------- output


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _dat_text(lines) -> str:
    head, *body = lines
    out = ["# " + " ".join(head)]
    out += [" ".join(_fmt(v) for v in row) for row in body]
    return "\n".join(out) + "\n"


def _write_atomic(path: Path, text: str, written: list[Path]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    written.append(path)


def _print_table(header, rows, out=sys.stdout):
    cells = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cimbi", description="Boundary-behaviour laboratory for CIMBI jump SDEs.")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
        sp.add_argument("--paths", type=int, default=None, help="overrides experiment.paths")
        sp.add_argument("--out-dir", default="cimbi_out")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
    return p


def summary_digest(summary) -> str:
    return hashlib.sha256(json.dumps(_jsonable(summary), sort_keys=True).encode()).hexdigest()[:16]


def run(subcommand: str, args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    try:
        spec, cfg, exp = parse_config(args.config, check_model=subcommand in NEEDS_VALID_MODEL)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelInvalid as exc:
        for v in exc.violations:
            print(f"model invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    args.seed = exp.seed if args.seed is None else args.seed
    args.paths = exp.paths if args.paths is None else args.paths
    args.threads = exp.threads if args.threads is None else args.threads
    if args.paths < 1 or args.threads < 1:
        print("config error: --paths and --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    canon = emit_config(spec, cfg, replace(exp, seed=args.seed, paths=args.paths, threads=1))
    digest = hashlib.sha256(canon.encode()).hexdigest()[:16]

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    code = EXIT_OK
    try:
        rows, summary, extra = HANDLERS[subcommand](spec, cfg, exp, args)
        header = COLUMNS[subcommand]
        if args.format == "csv":
            _write_atomic(out_dir / f"{subcommand}.csv", _csv_text(header, rows), written)
        else:
            doc = {"subcommand": subcommand, "columns": header, "rows": _jsonable(rows), "summary": summary}
            _write_atomic(out_dir / f"{subcommand}.json", json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n",
                          written)
        for name, lines in extra.items():
            text = _csv_text(lines[0], lines[1:]) if name.endswith(".csv") else _dat_text(lines)
            _write_atomic(out_dir / name, text, written)
        if subcommand == "validate" and not summary["valid"]:
            code = EXIT_INVALID
            for v in summary["violations"]:
                print(f"model invalid: {v}", file=sys.stderr)
        else:
            _print_table(header, rows)
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        code, summary = exc.code, {"error": str(exc)}
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code, summary = EXIT_NUMERICAL, {"error": str(exc)}
    if code not in (EXIT_OK, EXIT_INVALID) or (code == EXIT_INVALID and subcommand != "validate"):
        for p in written:
            p.unlink(missing_ok=True)
    entry = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "subcommand": subcommand,
        "config": str(Path(args.config).resolve()),
        "config_digest": digest,
        "seed": args.seed,
        "paths": args.paths,
        "code_version": __version__,
        "exit_code": code,
        "summary": _jsonable(summary),
        "summary_digest": summary_digest(summary),
        "duration_s": round(time.perf_counter() - t0, 6),
    }
    with open(out_dir / "ledger.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
