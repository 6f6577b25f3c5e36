"""Command-line front end.

Every subcommand reads one JSON config, fills in defaults, runs a pipeline and
writes ``record.json`` plus plot-ready CSV tables into ``--out``.  Records are
byte-identical across reruns with the same config and seed; the wall-clock
timestamp goes to a separate ``timestamp.json``.
"""

import argparse
import copy
import csv
import datetime
import io
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .boundary import (MEASURE_CAVEAT, boundary_criterion, build_slowed_family, certify_many,
                       residence_statistics, smallest_grade)
from .diagnostics import Thresholds, lyapunov_exponents, mather_test, nonuniform_proxy
from .dynamics import evolve, make_rng, model_from_config, pseudo_orbit
from .errors import HypershadowError, UsageError
from .inverse import decay_certificate, fit_column_decay, splitting_inverse
from .operator import (assemble_gamma, induced_norm_estimate, norm_lower, norm_upper,
                       spectral_norms)
from .seqspace import INFINITY, as_grade
from .shadowing import ShadowingConfig, refine, verify_shadowing
from .splitting import compute_splitting

COMMANDS = ("diagnose", "shadow", "boundary", "inverse", "norms")

_GRADE = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                    {"type": "string", "enum": ["inf", "infinity"]}]}
_MODEL = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["cat", "slowed_cat", "standard", "identity"]},
        "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "profile": {"enum": ["smooth", "cubic"]},
        "K_standard": {"type": "number"},
        "d": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_THRESHOLDS = {
    "type": "object",
    "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                   for k in ("bounded_ratio", "degenerate_ratio", "ae_fraction",
                             "exponent_guard")},
    "additionalProperties": False,
}
_COMMON = {"command": {"enum": list(COMMANDS)}, "seed": {"type": "integer", "minimum": 0},
           "workers": {"type": "integer", "minimum": 1}}


def _schema(required, props):
    return {"type": "object", "required": required,
            "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "diagnose": _schema(["model"], {
        "model": _MODEL, "grade": _GRADE, "samples": {"type": "integer", "minimum": 1},
        "points": {"type": "array", "items": _POINT},
        "K_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3},
        "thresholds": _THRESHOLDS, "lyapunov_steps": {"type": "integer",
                           "anyOf": [{"const": 0}, {"minimum": 1000}]},
        "two_grade": {"type": "object", "properties": {
            "n": {"type": "number"}, "m": {"type": "number"}}, "additionalProperties": False},
    }),
    "shadow": _schema(["model"], {
        "model": _MODEL, "x0": _POINT, "k_min": {"type": "integer"},
        "k_max": {"type": "integer"}, "beta": {"type": "number", "exclusiveMinimum": 0},
        "kappa": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "K": {"type": "number", "exclusiveMinimum": 0},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "mode": {"enum": ["precomputed", "solve-each-step"]},
        "max_iter": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
    }),
    "boundary": _schema(["radii", "slowdowns"], {
        "radii": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "slowdowns": {"oneOf": [{"type": "number"},
                                {"type": "array", "items": {"type": "number"}}]},
        "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.25},
        "samples": {"type": "integer", "minimum": 1000},
        "certificate_samples": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "horizon": {"type": "integer", "minimum": 1},
    }),
    "inverse": _schema(["model"], {
        "model": _MODEL, "x0": _POINT, "half_width": {"type": "integer", "minimum": 2},
        "grade": _GRADE,
    }),
    "norms": _schema(["model"], {
        "model": _MODEL, "x0": _POINT, "half_width": {"type": "integer", "minimum": 2},
        "grades": {"type": "array", "items": _GRADE, "minItems": 1},
    }),
}

DEFAULTS = {
    "diagnose": {"grade": "inf", "samples": 100, "K_list": [16, 32, 64],
                 "thresholds": Thresholds().to_dict(), "lyapunov_steps": 10_000,
                 "two_grade": {"n": 4, "m": 2}},
    "shadow": {"x0": [0.1234, 0.5678], "k_min": -100, "k_max": 99, "beta": 1e-6,
               "kappa": 0.5, "mode": "precomputed", "max_iter": 50, "tol": 1e-12},
    "boundary": {"matrix": [[2, 1], [1, 1]], "epsilon": 0.05, "samples": 10_000,
                 "certificate_samples": 100, "n": None, "delta": 0.1, "horizon": 10_000},
    "inverse": {"x0": [0.1234, 0.5678], "half_width": 32, "grade": "inf"},
    "norms": {"x0": [0.1234, 0.5678], "half_width": 32, "grades": [1, 2, 4, "inf"]},
}


def validate_config(command, cfg):
    """Check ``cfg`` against the command's schema; return it with defaults filled in.

    Raises
    ------
    UsageError
        With the offending field path, or the list of required fields.
    """
    if command not in SCHEMAS:
        raise UsageError(f"unknown command {command!r}", choices=list(COMMANDS))
    schema = SCHEMAS[command]
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object", required=schema["required"])
    if cfg.get("command", command) != command:
        raise UsageError(f"config is for {cfg['command']!r}, not {command!r}", path="command")
    missing = [k for k in schema["required"] if k not in cfg]
    if missing:
        raise UsageError(f"missing required fields: {', '.join(missing)}",
                         required=schema["required"], missing=missing)
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise UsageError(f"config field {path}: {e.message}", path=path)
    full = copy.deepcopy(DEFAULTS[command])
    full.update(copy.deepcopy(cfg))
    full["command"] = command
    return full


def _grade(value):
    return INFINITY if value in ("inf", "infinity") else as_grade(value)


def _num(x):
    """JSON-safe float: infinities become strings."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return _num(obj)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# pipelines: each returns (result dict, {filename: csv text})

def run_diagnose(cfg, seed, workers):
    model = model_from_config(cfg["model"])
    th = Thresholds(**cfg["thresholds"])
    grade = _grade(cfg["grade"])
    rng = make_rng(seed)
    pts = cfg.get("points") or rng.random((cfg["samples"], model.d)).tolist()
    report = mather_test(model, pts, grade, tuple(cfg["K_list"]), th, workers=workers)
    result = {"mather": report.to_dict()}
    tables = {"mather.csv": report.to_csv()}
    if cfg["lyapunov_steps"] > 0:
        exps = lyapunov_exponents(model, np.asarray(pts[0]), cfg["lyapunov_steps"])
        result["lyapunov"] = {"x0": pts[0], "steps": cfg["lyapunov_steps"],
                              "exponents": [float(e) for e in exps]}
    tg = cfg["two_grade"]
    if tg:
        nu = nonuniform_proxy(model, n=tg.get("n", 4), m=tg.get("m", 2),
                              K_list=tuple(cfg["K_list"]), points=pts[:min(len(pts), 50)],
                              seed=seed, thresholds=th)
        result["two_grade"] = {"verdict": nu.verdict, "params": nu.params}
    result["verdict"] = report.verdict
    return result, tables


def _shadow_inverse(model, pseudo):
    frames = compute_splitting(model, pseudo)
    gamma = assemble_gamma(model, pseudo)
    return splitting_inverse(gamma, frames, INFINITY), frames


def run_shadow(cfg, seed, workers):
    model = model_from_config(cfg["model"])
    beta = cfg["beta"]
    pseudo = pseudo_orbit(model, np.asarray(cfg["x0"], float), cfg["k_min"], cfg["k_max"],
                          beta, seed)
    inverse, frames = _shadow_inverse(model, pseudo)
    kw = {"max_iter": cfg["max_iter"], "tol": cfg["tol"]}
    if "rho" in cfg or "K" in cfg:
        K = cfg.get("K", inverse.bound)
        rho = cfg.get("rho", K * beta / (1 - cfg["kappa"]))
        config = ShadowingConfig(cfg["kappa"], K, rho, beta, c2=model.c2, alpha=model.alpha,
                                 **kw)
    else:
        config = ShadowingConfig.from_inverse(inverse, beta, cfg["kappa"], model, **kw)
    res = refine(model, pseudo, inverse, config, cfg["mode"])
    ok, vrep = verify_shadowing(model, res.orbit, pseudo, config.rho)
    result = {"config": config.to_dict(), "inverse": inverse.certificate(),
              "splitting": frames.constants(), "certificate": res.certificate(),
              "verify": vrep, "pseudo_defect": pseudo.beta, "passed": ok}
    hist = _csv(["iteration", "defect"], enumerate(res.defect_history))
    orbit = _csv(["k", "x", "y", "offset_x", "offset_y"],
                 [(k, *p, *o) for k, p, o in zip(pseudo.indices, res.orbit.points,
                                                 res.offsets.vectors)])
    return result, {"defect_history.csv": hist, "orbit.csv": orbit}


def run_inverse(cfg, seed, workers):
    model = model_from_config(cfg["model"])
    K = cfg["half_width"]
    grade = _grade(cfg["grade"])
    orbit = evolve(model, np.asarray(cfg["x0"], float), -K, K)
    frames = compute_splitting(model, orbit, seed=seed)
    gamma = assemble_gamma(model, orbit)
    inv = splitting_inverse(gamma, frames, grade)
    fr = frames.constants()
    a = float(np.max(spectral_norms(gamma.sub)))
    b = norm_upper(inv.rep, grade)
    c_dec, l_dec = decay_certificate(inv.rep, a, b, K, grade)
    below, above = fit_column_decay(inv.rep, 0)
    result = {"inverse": inv.certificate(), "splitting": fr,
              "norm_upper": norm_upper(inv.rep, grade),
              "induced_estimate": induced_norm_estimate(inv.rep, grade),
              "decay_certificate": {"a": a, "b": b, "c": c_dec, "lambda": l_dec},
              "decay_fit": {"below": below, "above": above}}
    rows = [(i, float(np.linalg.norm(inv.rep.block(i, 0), 2))) for i in inv.rep.row_indices]
    return result, {"decay.csv": _csv(["row", "block_norm"], rows)}


def run_norms(cfg, seed, workers):
    model = model_from_config(cfg["model"])
    K = cfg["half_width"]
    orbit = evolve(model, np.asarray(cfg["x0"], float), -K, K)
    gamma = assemble_gamma(model, orbit)
    rows, out = [], []
    frames = compute_splitting(model, orbit, seed=seed)
    for g in cfg["grades"]:
        grade = _grade(g)
        entry = {"grade": grade.to_json(),
                 "gamma": {"lower": norm_lower(gamma.rep, grade),
                           "estimate": induced_norm_estimate(gamma.rep, grade),
                           "upper": norm_upper(gamma.rep, grade)}}
        try:
            inv = splitting_inverse(gamma, frames, grade)
            entry["inverse"] = {"lower": norm_lower(inv.rep, grade),
                                "estimate": induced_norm_estimate(inv.rep, grade),
                                "upper": norm_upper(inv.rep, grade),
                                "bound": inv.bound, "bound_name": inv.bound_name}
        except HypershadowError as e:
            entry["inverse"] = e.to_record()
        out.append(entry)
        for op in ("gamma", "inverse"):
            if "upper" in entry[op]:
                rows.append((str(entry["grade"]), op, entry[op]["lower"],
                             entry[op]["estimate"], entry[op]["upper"]))
    return {"norms": out}, {"norms.csv": _csv(["grade", "operator", "lower", "estimate",
                                               "upper"], rows)}


def run_boundary(cfg, seed, workers):
    family = build_slowed_family(cfg["radii"], cfg["slowdowns"], cfg["matrix"], seed=seed)
    crit = boundary_criterion(family)
    res = residence_statistics(family, cfg["epsilon"], cfg["samples"], seed, cfg["horizon"])
    n0 = smallest_grade(family.lam)
    n = cfg["n"] or n0
    pts = make_rng(seed + 1).random((cfg["certificate_samples"], 2))
    chunks = [c for c in np.array_split(pts, max(1, workers)) if len(c)]

    def job(chunk):
        return certify_many(family, chunk, n, cfg["delta"], cfg["epsilon"])

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            certs = [r for part in ex.map(job, chunks) for r in part]
    else:
        certs = [r for c in chunks for r in job(c)]
    rate = sum(p for p, _ in certs) / len(certs)
    result = {"family": family.to_dict(), "criterion": crit.to_dict(),
              "residence": res.to_dict(),
              "certificate": {"n": n, "n0": n0, "delta": cfg["delta"], "pass_rate": rate,
                              "sound_rate": sum(r.get("sound", False) for _, r in certs)
                              / len(certs),
                              "reports": [r for _, r in certs]},
              "caveat": MEASURE_CAVEAT}
    cert_rows = [(i, r["x"][0], r["x"][1], r.get("left_product", ""),
                  r.get("right_product", ""), int(r["passed"])) for i, (_, r) in enumerate(certs)]
    return result, {"criterion.csv": crit.to_csv(),
                    "certificates.csv": _csv(["point", "x", "y", "left_product",
                                              "right_product", "passed"], cert_rows)}


PIPELINES = {"diagnose": run_diagnose, "shadow": run_shadow, "boundary": run_boundary,
             "inverse": run_inverse, "norms": run_norms}


def provenance():
    return {"package": "hypershadow", "version": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def run(command, cfg, seed=None, workers=None, out=None):
    """Validate, execute and write artifacts; return ``(exit_code, record)``."""
    try:
        full = validate_config(command, cfg)
    except UsageError as e:
        record = {"command": command, "status": "usage-error", "error": e.to_record()}
        _write(out, record, {})
        return e.exit_code, record
    seed = full.get("seed", 0) if seed is None else seed
    workers = full.get("workers", 1) if workers is None else workers
    full["seed"], full["workers"] = seed, workers
    record = {"command": command, "config": full, "provenance": provenance()}
    tables = {}
    try:
        result, tables = PIPELINES[command](full, seed, workers)
        record.update({"status": "ok", "result": result})
        code = 0
    except HypershadowError as e:
        record.update({"status": "error", "error": e.to_record()})
        code = e.exit_code
    record = _clean(record)
    _write(out, record, tables)
    return code, record


def _write(out, record, tables):
    if out is None:
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "record.json").write_text(json.dumps(_clean(record), sort_keys=True, indent=1) + "\n")
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    (out / "timestamp.json").write_text(json.dumps({"written_at": stamp}) + "\n")
    for name, text in tables.items():
        (out / name).write_text(text)


def build_parser():
    p = argparse.ArgumentParser(prog="hypershadow",
                                description="Finite-window hyperbolicity and shadowing tools.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=".", help="output directory")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 2
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    code, record = run(args.command, cfg, args.seed, args.workers, args.out)
    if code:
        print(json.dumps(record.get("error", {}), sort_keys=True), file=sys.stderr)
    else:
        summary = record["result"].get("verdict", record["status"])
        print(f"{args.command}: {summary}")
    return code


if __name__ == "__main__":
    sys.exit(main())
