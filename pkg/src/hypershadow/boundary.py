"""Slowed Anosov families converging to the cat map and the boundary criterion.

Level ``m`` of a family slows the cat map down on the ball ``B(0, r_m)`` and
leaves it untouched on ``A_m``, the torus minus that ball.  As ``r_m -> 0`` the
maps converge to the base map on ``A = union A_m``.  Hyperbolicity of the limit
follows once ``mu(A_m^c) log(a_m c_m) -> 0``.  This module measures every
ingredient of that statement on finite windows.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import CatMap, SlowedCatMap, evolve, spawn_rngs, torus_diff, torus_distance
from .errors import DegenerateSplittingError, FamilyConstructionError, PreconditionError, ValidationError
from .inverse import splitting_inverse
from .operator import MatrixRep, as_rep, assemble_gamma, norm_upper, spectral_norms
from .seqspace import GradeParam
from .splitting import compute_splitting_many

__all__ = ["FamilyLevel", "AnosovFamily", "build_slowed_family", "boundary_criterion",
           "CriterionReport", "ResidenceStats", "residence_statistics",
           "invertibility_certificate", "certify_many", "certificate_constant", "smallest_grade",
           "MEASURE_CAVEAT"]

MEASURE_CAVEAT = ("mu is Lebesgue measure; it is invariant for the base cat map but the "
                  "invariant measure of the slowed maps is not constructed")


@dataclass(frozen=True)
class FamilyLevel:
    m: int
    r: float
    kappa: float
    model: SlowedCatMap
    a: float
    c: float
    lam: float

    @property
    def complement_measure(self):
        """Lebesgue measure of ``A_m^c = B(0, r_m)``."""
        return math.pi * self.r ** 2

    def in_region(self, x):
        """True iff ``x`` lies in ``A_m``."""
        return float(np.linalg.norm(torus_diff(np.asarray(x, float), 0.0))) >= self.r

    def to_dict(self):
        return {"m": self.m, "r": self.r, "kappa": self.kappa, "a": self.a, "c": self.c,
                "lambda": self.lam, "complement_measure": self.complement_measure}


@dataclass
class AnosovFamily:
    """Slowed cat maps ``f_m`` with measured constants and the shared bounds ``b, lambda``."""

    base: CatMap
    levels: list
    b: float
    lam: float
    checks: dict = field(default_factory=dict)

    def level(self, m):
        for lv in self.levels:
            if lv.m == m:
                return lv
        raise ValidationError(f"no level m = {m}")

    @property
    def deepest(self):
        return self.levels[-1]

    def to_dict(self):
        return {"matrix": self.base.A.astype(int).tolist(), "b": self.b, "lambda": self.lam,
                "levels": [lv.to_dict() for lv in self.levels], "checks": self.checks,
                "caveat": MEASURE_CAVEAT}


def _ball_points(rng, r, count):
    ang = rng.uniform(0.0, 2 * np.pi, count)
    rad = r * np.sqrt(rng.uniform(0.0, 1.0, count))
    return np.c_[rad * np.cos(ang), rad * np.sin(ang)] % 1.0


def _region_points(rng, r, count):
    out = np.empty((0, 2))
    while len(out) < count:
        x = rng.uniform(0.0, 1.0, (2 * count, 2))
        keep = np.linalg.norm(torus_diff(x, 0.0), axis=1) >= r
        out = np.vstack([out, x[keep]])
    return out[:count]


def _measure_level(model, rng, r, samples, half_width):
    # Orbits through the slowed ball carry the nontrivial constants; orbits
    # that stay in A_m see the bare cat map.  Both are sampled.
    pts = np.vstack([np.zeros((1, 2)), _ball_points(rng, r, samples),
                     _region_points(rng, r, max(4, samples // 4))])
    orbits = [evolve(model, p, -half_width, half_width) for p in pts]
    try:
        frames = compute_splitting_many(model, orbits)
    except DegenerateSplittingError as e:
        raise FamilyConstructionError(
            f"f_m is not uniformly hyperbolic at r = {r:.6g}: {e}",
            condition="uniform_hyperbolicity", r=r, kappa=model.kappa) from e
    return (max(f.a for f in frames), max(f.c for f in frames), max(f.lam for f in frames))


def build_slowed_family(radii, slowdowns, matrix=((2, 1), (1, 1)), levels=None,
                        samples=40, half_width=32, seed=0, check_points=1000,
                        profile="smooth"):
    """Construct ``f_m = A o h_{r_m, kappa_m}`` and measure ``(a_m, c_m, lambda_m)``.

    Parameters
    ----------
    radii : sequence of float
        Strictly decreasing slowdown radii in ``(0, 1/2]``.
    slowdowns : sequence of float or float
        ``kappa_m`` in ``(0, 1]``; a scalar is used at every level.
    levels : sequence of int, optional
        Labels ``m``; defaults to ``1, 2, ...``.

    Raises
    ------
    FamilyConstructionError
        Naming the violated family condition.
    """
    radii = [float(r) for r in radii]
    if np.isscalar(slowdowns):
        slowdowns = [float(slowdowns)] * len(radii)
    slowdowns = [float(k) for k in slowdowns]
    if not radii or len(radii) != len(slowdowns):
        raise ValidationError("radii and slowdowns must be nonempty and of equal length")
    if any(r1 <= r2 for r1, r2 in zip(radii, radii[1:])):
        raise ValidationError("radii must be strictly decreasing")
    if any(not 0 < r <= 0.5 for r in radii):
        raise ValidationError("radii must lie in (0, 1/2]")
    if any(not 0 < k <= 1 for k in slowdowns):
        raise ValidationError("slowdowns must lie in (0, 1]")
    levels = list(range(1, len(radii) + 1)) if levels is None else [int(m) for m in levels]
    base = CatMap(matrix)
    rngs = spawn_rngs(seed, 2 * len(radii))
    built = []
    for i, (m, r, kappa) in enumerate(zip(levels, radii, slowdowns)):
        model = SlowedCatMap(matrix, r=r, kappa=kappa, profile=profile)
        a, c, lam = _measure_level(model, rngs[2 * i], r, samples, half_width)
        built.append(FamilyLevel(m, r, kappa, model, a, c, lam))
    b = max(lv.model.c1 for lv in built)
    lam = max(lv.lam for lv in built)
    family = AnosovFamily(base, built, b, lam)
    family.checks = _check_family(family, rngs[1::2], check_points)
    return family


def _check_family(family, rngs, count):
    base = family.base
    checks = {"coincide_on_region": 0.0, "derivative_bound": 0.0, "boundary_continuity": 0.0}
    for lv, rng in zip(family.levels, rngs):
        pts = _region_points(rng, lv.r, count)
        dev = max(torus_distance(lv.model.f(x), base.f(x)) for x in pts)
        checks["coincide_on_region"] = max(checks["coincide_on_region"], dev)
        if dev > 1e-14:
            raise FamilyConstructionError(
                f"condition (i) violated at m = {lv.m}: f_m and f differ by {dev:.3g} on A_m",
                condition="coincide", m=lv.m, deviation=dev)
        inner = _ball_points(rng, lv.r, count)
        dnorm = float(np.max(spectral_norms(np.array([lv.model.Df(x) for x in inner]))))
        checks["derivative_bound"] = max(checks["derivative_bound"], dnorm)
        if dnorm > family.b * (1 + 1e-12):
            raise FamilyConstructionError(
                f"condition (ii) violated at m = {lv.m}: |Df_m| = {dnorm:.6g} > b",
                condition="derivative_bound", m=lv.m, norm=dnorm, b=family.b)
        ang = rng.uniform(0.0, 2 * np.pi, 64)
        rim = (lv.r * np.c_[np.cos(ang), np.sin(ang)]) % 1.0
        cont = max(torus_distance(lv.model.f(x), base.f(x)) for x in rim)
        checks["boundary_continuity"] = max(checks["boundary_continuity"], cont)
        if cont > 1e-12:
            raise FamilyConstructionError(
                f"boundary continuity violated at m = {lv.m}: {cont:.3g}",
                condition="boundary_continuity", m=lv.m, deviation=cont)
    if not family.lam < 1:
        raise FamilyConstructionError(
            f"condition (iii) violated: sup lambda_m = {family.lam:.6g} is not < 1",
            condition="uniform_contraction", lam=family.lam)
    checks["uniform_lambda"] = family.lam
    # nested regions: radii strictly decrease, so A_m grows and A is the torus minus 0
    checks["nested"] = True
    return checks


@dataclass
class CriterionReport:
    values: list
    decreasing_last_half: bool
    ratio: float

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "value"])
        for m, v in self.values:
            w.writerow([m, repr(v)])
        return buf.getvalue()

    def to_dict(self):
        return {"values": [[m, v] for m, v in self.values],
                "decreasing_last_half": self.decreasing_last_half, "last_over_first": self.ratio}


def boundary_criterion(family):
    """``value(m) = mu(A_m^c) log(a_m c_m)`` for every level."""
    values = [(lv.m, lv.complement_measure * math.log(lv.a * lv.c)) for lv in family.levels]
    v = [x for _, x in values]
    tail = v[len(v) // 2:] if len(v) > 1 else v
    decreasing = all(x2 < x1 for x1, x2 in zip(tail, tail[1:]))
    ratio = v[-1] / v[0] if v[0] != 0 else (0.0 if v[-1] == 0 else math.inf)
    return CriterionReport(values, decreasing, ratio)


@dataclass
class ResidenceStats:
    epsilon: float
    levels: list
    estimate: float
    samples: int
    horizon: int
    per_level_rate: list
    skipped_levels: list

    @property
    def lower_bound(self):
        return 1 - 4 * self.epsilon

    def to_dict(self):
        return {"epsilon": self.epsilon, "levels": [list(p) for p in self.levels],
                "estimate": self.estimate, "samples": self.samples, "horizon": self.horizon,
                "per_level_rate": self.per_level_rate, "skipped_levels": self.skipped_levels,
                "lower_bound": self.lower_bound, "caveat": MEASURE_CAVEAT}


def residence_window(epsilon, complement_measure):
    """Smallest integer ``j >= epsilon / mu(A_m^c)``."""
    return max(1, int(math.ceil(epsilon / complement_measure - 1e-12)))


def residence_statistics(family, epsilon, samples=10_000, seed=0, horizon=10_000, points=None):
    """Monte Carlo estimate of the measure of points returning to ``A_m`` windows.

    A point passes level ``m`` when its base-map orbit ``f^{-j}(x), ..., f^j(x)``
    stays in ``A_m`` with ``j = ceil(epsilon / mu(A_m^c))``.  Levels with
    ``j > horizon`` are skipped and listed.  The estimate is the fraction of
    points passing at least two levels.
    """
    if not 0 < epsilon < 0.25:
        raise ValidationError("epsilon must lie in (0, 1/4)")
    if points is None:
        if samples < 1000:
            raise ValidationError("need at least 10^3 samples")
        points = spawn_rngs(seed, 1)[0].uniform(0.0, 1.0, (samples, 2))
    x0 = np.asarray(points, float).reshape(-1, 2)
    radii = np.array([lv.r for lv in family.levels])
    js = np.array([residence_window(epsilon, lv.complement_measure) for lv in family.levels])
    active = js <= horizon
    steps = int(js[active].max()) if active.any() else 0
    S = len(x0)
    # first time |k| at which the orbit enters each ball, in either direction
    hit = np.full((S, len(radii)), np.iinfo(np.int64).max, dtype=np.int64)
    A, Ainv = family.base.A, family.base.Ainv

    def mark(x, k):
        s = np.linalg.norm(torus_diff(x, 0.0), axis=1)
        inside = s[:, None] < radii[None, :]
        np.minimum(hit, np.where(inside, k, hit), out=hit)

    mark(x0, 0)
    fw, bw = x0.copy(), x0.copy()
    for k in range(1, steps + 1):
        fw = (fw @ A.T) % 1.0
        bw = (bw @ Ainv.T) % 1.0
        mark(fw, k)
        mark(bw, k)
    passed = (hit > js[None, :]) & active[None, :]
    estimate = float(np.mean(passed.sum(axis=1) >= 2)) if S else 0.0
    levels = [(lv.m, int(j)) for lv, j in zip(family.levels, js)]
    rates = [float(r) for r in passed.mean(axis=0)]
    skipped = [lv.m for lv, ok in zip(family.levels, active) if not ok]
    return ResidenceStats(epsilon, levels, estimate, S, horizon, rates, skipped)


def smallest_grade(lam):
    """Smallest integer ``n_0`` with ``lam exp(1/n_0) < 1``."""
    if not 0 < lam < 1:
        raise PreconditionError(f"lambda = {lam:.6g} must lie in (0, 1)", lam=lam)
    n0 = max(1, int(math.floor(1.0 / -math.log(lam))) + 1)
    while lam * math.exp(1.0 / n0) >= 1:
        n0 += 1
    return n0


def certificate_constant(b, lam, n0):
    """``c = log 2b + log(4/(1 - lam e^{1/n0})) + 1/(2 n0)``."""
    return math.log(2 * b) + math.log(4.0 / (1 - lam * math.exp(1.0 / n0))) + 0.5 / n0


def _difference_norm(model_f, model_fm, x, n, half_width):
    """``||Gamma - Gamma^(m)||_{2n, n}`` along the two orbits of ``x`` plus a tail bound."""
    ks = np.arange(-half_width, half_width)
    of = evolve(model_f, x, -half_width, half_width).points
    om = evolve(model_fm, x, -half_width, half_width).points
    diff = np.array([model_f.Df(p) - model_fm.Df(q) for p, q in zip(of[:-1], om[:-1])])
    # block (k+1, k) carries weight exp(-|k+1|/n + |k|/(2n))
    w = np.exp(-np.abs(ks + 1) / n + np.abs(ks) / (2 * n))
    window = float(np.max(w * spectral_norms(diff))) if len(diff) else 0.0
    tail = 2 * model_fm.c1 * math.exp(-(half_width + 1) / (2 * n) + 1.0 / n)
    return max(window, tail), window, tail


def invertibility_certificate(family, x, n, delta, epsilon, m=None, inverse_half_width=32,
                              difference_half_width=256, frames=None):
    """Check the sufficient inequality for level ``m`` and confirm it numerically.

    The inequality
    ``mu(A_m^c) log(a_m c_m) + c mu(A_m^c) + mu(A_m^c) log(1/delta) < epsilon/(2n)``
    is evaluated with the family's measured constants.  On pass, the products
    ``||Upsilon^(m)||_{n,n} ||Gamma - Gamma^(m)||_{2n,n}`` and
    ``||Gamma - Gamma^(m)||_{2n,n} ||Upsilon^(m)||_{2n,2n}`` are measured on
    windows through ``x`` and must both be ``< delta``.

    Returns
    -------
    passed : bool
    report : dict
    """
    lv = family.deepest if m is None else family.level(m)
    n0 = smallest_grade(family.lam)
    if n < n0:
        raise PreconditionError(f"grade n = {n} is below n0 = {n0}", n=n, n0=n0)
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    c = certificate_constant(family.b, family.lam, n0)
    mu_c = lv.complement_measure
    lhs = mu_c * math.log(lv.a * lv.c) + c * mu_c + mu_c * math.log(1.0 / delta)
    rhs = epsilon / (2.0 * n)
    report = {"m": lv.m, "n": n, "n0": n0, "delta": delta, "epsilon": epsilon, "c": c,
              "lhs": lhs, "rhs": rhs, "inequality": bool(lhs < rhs),
              "x": [float(v) for v in np.asarray(x, float)]}
    if not lhs < rhs:
        report["passed"] = False
        return False, report
    x = np.asarray(x, float)
    fm = lv.model
    if frames is None:
        orbit = evolve(fm, x, -inverse_half_width, inverse_half_width)
        frames = compute_splitting_many(fm, [orbit])[0]
    else:
        orbit = evolve(fm, x, frames.k_min, frames.k_max)
    gamma_m = assemble_gamma(fm, orbit)
    g_n, g_2n = GradeParam(n), GradeParam(2 * n)
    ups_rep = as_rep(splitting_inverse(gamma_m, frames, g_n))
    ups_n = norm_upper(ups_rep, g_n)
    ups_2n = norm_upper(as_rep(splitting_inverse(gamma_m, frames, g_2n)), g_2n)
    dnorm, dwindow, dtail = _difference_norm(family.base, fm, x, n, difference_half_width)
    left, right = ups_n * dnorm, dnorm * ups_2n
    report.update({"upsilon_norm_n": ups_n, "upsilon_norm_2n": ups_2n,
                   "difference_norm": dnorm, "difference_window": dwindow,
                   "difference_tail_bound": dtail, "left_product": left,
                   "right_product": right})
    passed = bool(left < delta and right < delta)
    report.update(_soundness(family.base, x, gamma_m, ups_rep, g_n, ups_n, delta))
    report["passed"] = passed
    return passed, report


def certify_many(family, points, n, delta, epsilon, m=None, inverse_half_width=32,
                 difference_half_width=256):
    """``invertibility_certificate`` at many points with one batched splitting pass."""
    lv = family.deepest if m is None else family.level(m)
    pts = np.asarray(points, float).reshape(-1, family.base.d)
    orbits = [evolve(lv.model, x, -inverse_half_width, inverse_half_width) for x in pts]
    frames = compute_splitting_many(lv.model, orbits) if len(orbits) else []
    return [invertibility_certificate(family, x, n, delta, epsilon, m=lv.m,
                                      difference_half_width=difference_half_width, frames=fr)
            for x, fr in zip(pts, frames)]


def _soundness(model_f, x, gamma_m, ups_rep, grade, ups_n, delta):
    """Right inverse of the base operator by a Neumann series around ``Upsilon^(m)``.

    On the window, ``B = Upsilon^(m) (I - D Upsilon^(m))^{-1}`` with
    ``D = Gamma^(m) - Gamma`` satisfies ``Gamma B = I`` whenever
    ``q = ||D Upsilon^(m)|| < 1``; its norm is compared with
    ``||Upsilon^(m)|| / (1 - delta)``.
    """
    orbit_f = evolve(model_f, x, gamma_m.k_min, gamma_m.k_max)
    g_f = assemble_gamma(model_f, orbit_f)
    ups = ups_rep.to_dense()
    M = (gamma_m.to_dense() - g_f.to_dense()) @ ups
    d = gamma_m.d
    q = norm_upper(MatrixRep.from_dense(gamma_m.k_min + 1, gamma_m.k_min + 1, M, d), grade)
    estimate = ups_n / (1 - delta)
    if not q < 1:
        return {"window_q": q, "window_proxy": math.inf, "neumann_estimate": estimate,
                "sound": False}
    B = ups @ np.linalg.inv(np.eye(M.shape[0]) - M)
    proxy = norm_upper(MatrixRep.from_dense(gamma_m.k_min, gamma_m.k_min + 1, B, d), grade)
    return {"window_q": q, "window_proxy": proxy, "neumann_estimate": estimate,
            "sound": bool(proxy <= estimate * (1 + 1e-9))}
