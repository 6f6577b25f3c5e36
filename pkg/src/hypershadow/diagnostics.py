"""Hyperbolicity diagnostics on finite windows.

The bi-infinite statements "Gamma is invertible with bounded inverse" become
statements about how window quantities behave as the half-width ``K`` grows:
a bounded inverse shows up as a proxy that stays flat, a non-invertible one as
a proxy that keeps growing.
"""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import evolve, make_rng, torus_distance
from .errors import DegenerateSplittingError, GradeTooCoarseError, PreconditionError, ValidationError
from .inverse import solve_norm_proxy, splitting_inverse
from .operator import assemble_gamma, norm_upper, spectral_norms
from .seqspace import INFINITY, as_grade
from .splitting import compute_splitting, compute_splitting_many

__all__ = [
    "Thresholds", "HyperbolicityReport", "PesinGrade", "mather_test", "nonuniform_proxy",
    "lyapunov_exponents", "lyapunov_with_check", "grade_pesin_sets", "proxy_verdict",
    "lebesgue_sampler",
]


@dataclass(frozen=True)
class Thresholds:
    """Cutoffs turning finite-window growth into verdicts."""

    bounded_ratio: float = 1.25
    degenerate_ratio: float = 10.0
    ae_fraction: float = 0.99
    exponent_guard: float = 1e-3

    def to_dict(self):
        return {"bounded_ratio": self.bounded_ratio, "degenerate_ratio": self.degenerate_ratio,
                "ae_fraction": self.ae_fraction, "exponent_guard": self.exponent_guard}


@dataclass
class HyperbolicityReport:
    records: list
    verdict: str
    params: dict = field(default_factory=dict)

    def verdict_counts(self):
        out = {}
        for r in self.records:
            out[r["verdict"]] = out.get(r["verdict"], 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self):
        return {"verdict": self.verdict, "params": self.params,
                "verdict_counts": self.verdict_counts(), "records": self.records}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self):
        """One row per (point, K): the proxy-versus-K curves."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "x", "K", "proxy", "verdict"])
        for idx, r in enumerate(self.records):
            xs = " ".join(repr(float(v)) for v in r["x"])
            for K, p in r["proxies"]:
                w.writerow([idx, xs, K, repr(float(p)), r["verdict"]])
        return buf.getvalue()


def lyapunov_exponents(model, x0, steps=10_000, burn_in=0):
    """Exponents from re-orthonormalized cocycle products, sorted descending.

    :func:`lyapunov_with_check` returns the same numbers with the
    ``mean log|det Df|`` cross-check.
    """
    return lyapunov_with_check(model, x0, steps, burn_in)["exponents"]


def lyapunov_with_check(model, x0, steps=10_000, burn_in=0):
    if steps < 1000:
        raise ValidationError("steps must be at least 1000")
    d = model.d
    x = np.asarray(x0, dtype=float)
    for _ in range(burn_in):
        x = model.f(x)
    Q = np.eye(d)
    acc = np.zeros(d)
    logdet = 0.0
    for _ in range(steps):
        D = model.Df(x)
        Q, R = np.linalg.qr(D @ Q)
        acc += np.log(np.abs(np.diag(R)))
        logdet += math.log(abs(np.linalg.det(D)))
        x = model.f(x)
    exps = np.sort(acc / steps)[::-1]
    return {"exponents": [float(e) for e in exps], "sum": float(exps.sum()),
            "mean_log_det": logdet / steps, "steps": steps}


def proxy_verdict(proxies, splitting_ok, thresholds=Thresholds()):
    """Verdict from a proxy-versus-K curve and the splitting outcome."""
    vals = [p for _, p in proxies]
    growth = vals[-1] / vals[0]
    step_ratio = max(b / a for a, b in zip(vals, vals[1:]))
    if not splitting_ok or growth >= thresholds.degenerate_ratio:
        return "degenerate", growth, step_ratio
    if step_ratio <= thresholds.bounded_ratio:
        return "uniform-like", growth, step_ratio
    return "inconclusive", growth, step_ratio


def _finite_time_exponents(mats):
    d = mats.shape[1]
    Q = np.eye(d)
    acc = np.zeros(d)
    for D in mats:
        Q, R = np.linalg.qr(D @ Q)
        acc += np.log(np.abs(np.diag(R)))
    return np.sort(acc / len(mats))[::-1]


def _point_record(model, x, grade, K_list, thresholds, frames=None, split_error=None):
    Kmax = K_list[-1]
    orb = evolve(model, x, -Kmax, Kmax)
    gamma = assemble_gamma(model, orb)
    proxies = solve_norm_proxy(gamma, grade, K_list)
    if frames is None and split_error is None:
        try:
            frames = compute_splitting(model, orb)
        except DegenerateSplittingError as e:
            split_error = str(e)
    verdict, growth, step = proxy_verdict(proxies, frames is not None, thresholds)
    rec = {"x": [float(v) for v in x], "K_list": list(K_list),
           "proxies": [[K, float(p)] for K, p in proxies],
           "growth": float(growth), "max_step_ratio": float(step),
           "spread": float((max(p for _, p in proxies) - min(p for _, p in proxies))
                           / min(p for _, p in proxies)),
           "verdict": verdict}
    if frames is not None:
        rec["splitting"] = {"c": frames.c, "lambda": frames.lam, "a": frames.a}
        rec["exponents"] = [float(e) for e in frames.exponents]
    else:
        rec["splitting"] = {"error": split_error}
        rec["exponents"] = [float(e) for e in
                            _finite_time_exponents(np.array([model.Df(p) for p in orb.points]))]
    return rec


def _frames_for(model, points, Kmax):
    """Batched splittings; falls back to per-point runs when any orbit is degenerate."""
    orbits = [evolve(model, x, -Kmax, Kmax) for x in points]
    try:
        return [(f, None) for f in compute_splitting_many(model, orbits)]
    except DegenerateSplittingError:
        out = []
        for o in orbits:
            try:
                out.append((compute_splitting(model, o), None))
            except DegenerateSplittingError as e:
                out.append((None, str(e)))
        return out


def _check_K_list(K_list, minimum=3):
    K_list = [int(k) for k in K_list]
    if len(K_list) < minimum or any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValidationError(f"K_list must be increasing with at least {minimum} entries")
    return K_list


def mather_test(model, sample_points, grade=INFINITY, K_list=(16, 32, 64),
                thresholds=Thresholds(), workers=1):
    """Classify each sample point by K-stability of the window inverse proxy.

    Per point the verdict is ``degenerate`` when the splitting fails or the
    proxy grows by ``degenerate_ratio`` across ``K_list``, ``uniform-like``
    when every step ratio stays within ``bounded_ratio``, else
    ``inconclusive``.  The report is uniform-like only if every point is.
    """
    K_list = _check_K_list(K_list)
    grade = as_grade(grade)
    pts = [np.asarray(x, dtype=float) for x in sample_points]
    frames = _frames_for(model, pts, K_list[-1])

    def job(args):
        x, (fr, err) = args
        return _point_record(model, x, grade, K_list, thresholds, fr, err)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(job, zip(pts, frames)))
    else:
        records = [job(a) for a in zip(pts, frames)]
    verdicts = {r["verdict"] for r in records}
    if verdicts == {"uniform-like"}:
        verdict = "uniform-like"
    elif verdicts == {"degenerate"}:
        verdict = "degenerate"
    else:
        verdict = "inconclusive"
    return HyperbolicityReport(records, verdict, {
        "test": "mather", "grade": grade.to_json(), "K_list": K_list,
        "thresholds": thresholds.to_dict(), "model": model.config(),
        "max_spread": max(r["spread"] for r in records),
        "max_growth": max(r["growth"] for r in records)})


def lebesgue_sampler(rng, count, d=2):
    return rng.random((count, d))


def nonuniform_proxy(model, sampler=None, n=4, m=2, K_list=(16, 32, 64), samples=200, seed=0,
                     thresholds=Thresholds(), points=None):
    """Two-grade test: is the splitting inverse bounded as an operator X_n -> X_m?

    For every sampled point the splitting inverse on ``[-K, K]`` is measured
    with :func:`norm_upper` at grade pair ``(n, m)`` for each ``K``; the bound
    counts as finite when it does not grow by ``degenerate_ratio`` across
    ``K_list``.  The verdict is ``nonuniform-like`` when at least
    ``ae_fraction`` of the points have a finite two-grade bound.  The flag
    ``strictly_nonuniform`` additionally records whether the single-grade
    sup-norm proxy is unbounded at some point.
    """
    if not n > m >= 1:
        raise PreconditionError(f"need n > m >= 1, got n={n}, m={m}")
    K_list = _check_K_list(K_list)
    rng = make_rng(seed)
    if points is None:
        sampler = sampler or (lambda r, c: lebesgue_sampler(r, c, model.d))
        points = sampler(rng, samples)
    pts = [np.asarray(x, dtype=float) for x in points]
    Kmax = K_list[-1]
    frames = _frames_for(model, pts, Kmax)
    records = []
    for x, (fr, err) in zip(pts, frames):
        rec = {"x": [float(v) for v in x], "two_grade": [], "single_grade": []}
        gamma = assemble_gamma(model, evolve(model, x, -Kmax, Kmax))
        finite = fr is not None
        if fr is None:
            rec["error"] = err
        else:
            try:
                for K in K_list:
                    ups = splitting_inverse(gamma.restrict(-K, K), fr, INFINITY)
                    rec["two_grade"].append([K, norm_upper(ups, n, m)])
                    rec["single_grade"].append([K, norm_upper(ups, INFINITY)])
                tg = [v for _, v in rec["two_grade"]]
                finite = tg[-1] / tg[0] < thresholds.degenerate_ratio
            except GradeTooCoarseError as e:
                finite = False
                rec["error"] = str(e)
        prox = solve_norm_proxy(gamma, INFINITY, K_list)
        rec["sup_proxy"] = [[K, float(p)] for K, p in prox]
        rec["sup_unbounded"] = bool(prox[-1][1] / prox[0][1] >= thresholds.degenerate_ratio)
        rec["finite_two_grade"] = bool(finite)
        rec["verdict"] = "nonuniform-like" if finite else "degenerate"
        records.append(rec)
    frac = sum(r["finite_two_grade"] for r in records) / len(records)
    strict = any(r["sup_unbounded"] for r in records)
    verdict = "nonuniform-like" if frac >= thresholds.ae_fraction else "inconclusive"
    return HyperbolicityReport(records, verdict, {
        "test": "two-grade", "n": n, "m": m, "K_list": K_list, "samples": len(records),
        "seed": seed, "fraction_finite": frac, "strictly_nonuniform": strict,
        "thresholds": thresholds.to_dict(), "model": model.config()})


@dataclass
class PesinGrade:
    """Sample points at level ``m``: measured window inverse norm at most ``m``."""

    level: int
    grade: object
    members: list
    norms: dict
    p: int = 0
    eps: float = 0.0
    delta: dict = field(default_factory=dict)
    refinement: dict = field(default_factory=dict)

    def to_dict(self):
        return {"level": self.level, "grade": as_grade(self.grade).to_json(),
                "members": self.members, "p": self.p, "eps": self.eps,
                "refinement": {str(k): v for k, v in self.refinement.items()}}


def grade_pesin_sets(model, sample_points, n=INFINITY, m_levels=(1, 2, 3, 4, 5), K=32, p=4,
                     eps=1e-2, r_levels=(1, 2, 4, 8, 16)):
    """Assign each point its least level ``m >= ||Ups||_n`` and build the refinement.

    For a member ``z`` of level ``m``, ``delta_z`` is the largest radius such
    that every other member within it has central-row inverse blocks
    ``Ups_{0,j}``, ``|j| <= p``, within ``eps`` of those at ``z``; sub-level
    ``r`` keeps the members with ``delta_z > 1/r``.
    """
    grade = as_grade(n)
    pts = [np.asarray(x, dtype=float) for x in sample_points]
    norms, rows = [], []
    for x in pts:
        orb = evolve(model, x, -K, K)
        try:
            ups = splitting_inverse(assemble_gamma(model, orb), compute_splitting(model, orb), grade)
            norms.append(norm_upper(ups, grade))
            rows.append(np.array([ups.rep.block(0, j) for j in range(-p, p + 1)]))
        except (DegenerateSplittingError, GradeTooCoarseError):
            norms.append(math.inf)
            rows.append(None)
    levels = [math.ceil(v - 1e-12) if math.isfinite(v) else math.inf for v in norms]
    out = []
    for m in sorted(m_levels):
        members = [i for i, lv in enumerate(levels) if lv <= m]
        delta = {}
        for i in members:
            others = sorted((torus_distance(pts[i], pts[j]), j) for j in members if j != i)
            dz = 0.5
            for dist, j in others:
                if float(spectral_norms(rows[i] - rows[j]).max()) >= eps:
                    dz = dist
                    break
            delta[i] = dz
        refinement = {r: [i for i in members if delta[i] > 1.0 / r] for r in r_levels}
        out.append(PesinGrade(m, grade, members, {i: norms[i] for i in members}, p, eps,
                              delta, refinement))
    return out
