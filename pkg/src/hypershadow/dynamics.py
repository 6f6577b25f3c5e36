"""Diffeomorphisms of the flat torus R^d/Z^d, orbits, pseudo-orbits and cocycles.

Torus points are plain float arrays with coordinates in ``[0, 1)``.  All
differences of points go through :func:`torus_diff`, which returns the
representative in ``(-1/2, 1/2]^d``, so no caller ever depends on a chart.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "reduce", "torus_diff", "torus_distance", "make_rng", "spawn_rngs",
    "MapModel", "CatMap", "SlowedCatMap", "StandardMap", "IdentityMap", "UserMap",
    "model_from_config", "OrbitWindow", "evolve", "pseudo_orbit", "defect", "cocycle",
    "check_model",
]


def reduce(x):
    """Reduce coordinates to ``[0, 1)``."""
    y = np.asarray(x, dtype=float)
    y = y - np.floor(y)
    return np.where(y >= 1.0, 0.0, y)


def torus_diff(a, b):
    """Representative of ``a - b`` in ``(-1/2, 1/2]^d``."""
    r = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return r - np.ceil(r - 0.5)


def torus_distance(a, b):
    return float(np.linalg.norm(torus_diff(a, b)))


def make_rng(seed):
    """Counter-based generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_rngs(seed, n):
    return [np.random.Generator(np.random.Philox(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


class MapModel:
    """A torus diffeomorphism with its derivative and regularity constants.

    Subclasses provide ``f``, ``f_inv`` and ``Df`` for a single point, plus
    ``c1`` (bound on ``|Df|``), ``c2`` and ``alpha`` (Hoelder data of ``Df``).
    """

    d = 2
    c1 = math.inf
    c2 = math.inf
    alpha = 1.0
    area_preserving = False
    constants_source = "analytic"

    def f(self, x):
        raise NotImplementedError

    def f_inv(self, x):
        raise NotImplementedError

    def Df(self, x):
        raise NotImplementedError

    def config(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"

    def estimate_constants(self, pairs=100_000, seed=0, scale=1e-3):
        """Sample ``|Df|`` and the Hoelder quotient on random close pairs.

        Pairs are separated by at most ``scale`` so that the quotient probes
        local regularity; the sampling resolution is returned with the values.
        """
        rng = make_rng(seed)
        x = rng.random((pairs, self.d))
        y = reduce(x + scale * (2 * rng.random((pairs, self.d)) - 1))
        c1 = 0.0
        c2 = 0.0
        for a, b in zip(x, y):
            Da = self.Df(a)
            c1 = max(c1, np.linalg.norm(Da, 2))
            dist = torus_distance(a, b)
            if dist > 0:
                c2 = max(c2, np.linalg.norm(Da - self.Df(b), 2) / dist ** self.alpha)
        return {"c1": float(c1), "c2": float(c2), "alpha": self.alpha,
                "pairs": int(pairs), "resolution": float(scale)}


def _integer_matrix(matrix):
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("map matrix must be square")
    if not np.all(A == np.round(A)):
        raise ValidationError("toral automorphism needs an integer matrix")
    if abs(abs(round(np.linalg.det(A))) - 1) > 0 or abs(abs(np.linalg.det(A)) - 1) > 1e-9:
        raise ValidationError("toral automorphism needs determinant +-1")
    Ainv = np.round(np.linalg.inv(A))
    if not np.array_equal(Ainv @ A, np.eye(len(A))):
        raise ValidationError("matrix inverse is not integral")
    return A, Ainv


class CatMap(MapModel):
    """Linear toral automorphism ``x -> A x mod 1``."""

    area_preserving = True

    def __init__(self, matrix=((2, 1), (1, 1))):
        self.A, self.Ainv = _integer_matrix(matrix)
        self.d = self.A.shape[0]
        ev = np.abs(np.linalg.eigvals(self.A))
        if np.any(np.abs(ev - 1) < 1e-12):
            raise ValidationError("matrix has an eigenvalue on the unit circle")
        self.c1 = float(np.linalg.norm(self.A, 2))
        self.c2 = 0.0
        self.alpha = 1.0

    def f(self, x):
        return reduce(self.A @ np.asarray(x, dtype=float))

    def f_inv(self, x):
        return reduce(self.Ainv @ np.asarray(x, dtype=float))

    def Df(self, x):
        return self.A.copy()

    def config(self):
        return {"type": "cat", "matrix": self.A.astype(int).tolist()}


class SlowedCatMap(MapModel):
    """``A o h`` where ``h`` radially slows the ball ``B(0, r)`` down to rate ``kappa``.

    ``h(x) = x * phi(|x|)`` on the ball and the identity outside, with
    ``phi(0) = kappa`` and ``phi(r) = 1``.  Two radial profiles are available:

    ``"smooth"`` (default)
        ``phi = kappa + (1 - kappa)(2 t^2 - t^4)``, ``t = |x|/r``.  ``h`` is C^1
        across the sphere ``|x| = r`` and ``Dh`` is Lipschitz, so the Hoelder
        constants needed by the shadowing engine are finite.
    ``"cubic"``
        ``phi = kappa + (1 - kappa) t^2``.  ``h`` is only continuous across the
        sphere, ``Dh`` jumps there and ``c2`` is infinite.
    """

    def __init__(self, matrix=((2, 1), (1, 1)), r=0.25, kappa=0.5, profile="smooth"):
        self.A, self.Ainv = _integer_matrix(matrix)
        self.d = self.A.shape[0]
        if not 0 < r <= 0.5:
            raise ValidationError("slowdown radius must lie in (0, 1/2]")
        if not 0 < kappa <= 1:
            raise ValidationError("slowdown kappa must lie in (0, 1]")
        if profile not in ("smooth", "cubic"):
            raise ValidationError(f"unknown slowdown profile {profile!r}")
        self.r = float(r)
        self.kappa = float(kappa)
        self.profile = profile
        normA = float(np.linalg.norm(self.A, 2))
        if profile == "smooth":
            gprime_max = kappa + 1.8 * (1 - kappa)
            # |D^2 h| <= 3|phi'| + s|phi''| <= (4.62 + 8)(1 - kappa)/r
            self.c2 = normA * 12.62 * (1 - kappa) / self.r
        else:
            gprime_max = 3 - 2 * kappa
            self.c2 = 0.0 if kappa == 1 else math.inf
        self.c1 = normA * max(1.0, gprime_max)
        self.alpha = 1.0

    def _phi(self, t2):
        k = self.kappa
        if self.profile == "smooth":
            return k + (1 - k) * (2 * t2 - t2 * t2)
        return k + (1 - k) * t2

    def _phi_prime_over_s(self, t2):
        # d(phi)/ds divided by s
        k, r2 = self.kappa, self.r ** 2
        if self.profile == "smooth":
            return (1 - k) * 4.0 / r2 * (1 - t2)
        return (1 - k) * 2.0 / r2

    def _g(self, s):
        return s * self._phi((s / self.r) ** 2)

    def h(self, x):
        y = torus_diff(x, 0.0)
        s2 = float(y @ y)
        if s2 >= self.r ** 2:
            return y
        return y * self._phi(s2 / self.r ** 2)

    def h_inv(self, x):
        y = torus_diff(x, 0.0)
        s = float(np.linalg.norm(y))
        if s >= self.r or s == 0.0:
            return y
        lo, hi = 0.0, self.r
        t = s
        for _ in range(100):
            gt = self._g(t) - s
            if gt > 0:
                hi = t
            else:
                lo = t
            dg = self._phi((t / self.r) ** 2) + t * t * self._phi_prime_over_s((t / self.r) ** 2)
            tn = t - gt / dg if dg > 0 else 0.5 * (lo + hi)
            if not lo < tn < hi:
                tn = 0.5 * (lo + hi)
            if abs(tn - t) <= 1e-17:
                t = tn
                break
            t = tn
        return y * (t / s)

    def Dh(self, x):
        y = torus_diff(x, 0.0)
        t2 = float(y @ y) / self.r ** 2
        if t2 >= 1.0:
            return np.eye(self.d)
        return self._phi(t2) * np.eye(self.d) + self._phi_prime_over_s(t2) * np.outer(y, y)

    def f(self, x):
        return reduce(self.A @ self.h(x))

    def f_inv(self, x):
        return reduce(self.h_inv(self.Ainv @ torus_diff(x, 0.0)))

    def Df(self, x):
        return self.A @ self.Dh(x)

    def in_slowdown(self, x):
        return float(np.linalg.norm(torus_diff(x, 0.0))) < self.r

    def config(self):
        return {"type": "slowed_cat", "matrix": self.A.astype(int).tolist(),
                "r": self.r, "kappa": self.kappa, "profile": self.profile}


class StandardMap(MapModel):
    """Chirikov standard map on coordinates ``(x, p)``.

    ``p' = p + K sin(2 pi x) / (2 pi)``, ``x' = x + p'``.
    """

    area_preserving = True

    def __init__(self, K=1.0):
        self.K = float(K)
        self.d = 2
        cands = [np.array([[1 + self.K * c, 1.0], [self.K * c, 1.0]]) for c in (-1.0, 1.0)]
        self.c1 = float(max(np.linalg.norm(m, 2) for m in cands))
        self.c2 = 2 * math.pi * math.sqrt(2) * abs(self.K)
        self.alpha = 1.0

    def f(self, x):
        x0, p0 = x
        p1 = p0 + self.K * math.sin(2 * math.pi * x0) / (2 * math.pi)
        return reduce(np.array([x0 + p1, p1]))

    def f_inv(self, x):
        x1, p1 = x
        x0 = x1 - p1
        p0 = p1 - self.K * math.sin(2 * math.pi * x0) / (2 * math.pi)
        return reduce(np.array([x0, p0]))

    def Df(self, x):
        c = self.K * math.cos(2 * math.pi * x[0])
        return np.array([[1 + c, 1.0], [c, 1.0]])

    def config(self):
        return {"type": "standard", "K_standard": self.K}


class IdentityMap(MapModel):
    """``f = id``: every point is fixed and every cocycle matrix is ``I``."""

    area_preserving = True

    def __init__(self, d=2):
        self.d = int(d)
        self.c1, self.c2, self.alpha = 1.0, 0.0, 1.0

    def f(self, x):
        return reduce(x)

    def f_inv(self, x):
        return reduce(x)

    def Df(self, x):
        return np.eye(self.d)

    def config(self):
        return {"type": "identity", "d": self.d}


class UserMap(MapModel):
    """Wrap user callables; constants are estimated by sampling unless supplied."""

    constants_source = "sampled"

    def __init__(self, f, f_inv, Df, d, c1=None, c2=None, alpha=1.0, seed=0,
                 pairs=100_000, name="user"):
        self._f, self._f_inv, self._Df = f, f_inv, Df
        self.d = int(d)
        self.alpha = float(alpha)
        self.name = name
        self.sampling = None
        if c1 is None or c2 is None:
            self.sampling = self.estimate_constants(pairs=pairs, seed=seed)
        self.c1 = float(c1) if c1 is not None else self.sampling["c1"]
        self.c2 = float(c2) if c2 is not None else self.sampling["c2"]
        if c1 is not None and c2 is not None:
            self.constants_source = "supplied"

    def f(self, x):
        return reduce(self._f(np.asarray(x, dtype=float)))

    def f_inv(self, x):
        return reduce(self._f_inv(np.asarray(x, dtype=float)))

    def Df(self, x):
        return np.asarray(self._Df(np.asarray(x, dtype=float)), dtype=float)

    def config(self):
        return {"type": "user", "name": self.name, "d": self.d}


def model_from_config(cfg):
    """Build a model from ``{type, matrix, r, kappa, K_standard, profile, d}``."""
    kind = cfg.get("type", "cat")
    matrix = cfg.get("matrix", [[2, 1], [1, 1]])
    if kind == "cat":
        return CatMap(matrix)
    if kind == "slowed_cat":
        return SlowedCatMap(matrix, r=cfg.get("r", 0.25), kappa=cfg.get("kappa", 0.5),
                            profile=cfg.get("profile", "smooth"))
    if kind == "standard":
        return StandardMap(cfg.get("K_standard", 1.0))
    if kind == "identity":
        return IdentityMap(cfg.get("d", 2))
    raise ValidationError(f"unknown model type {kind!r}")


def defect(model, points):
    """``max_k dist(f(y_{k-1}), y_k)`` over consecutive points."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return max(torus_distance(model.f(pts[k - 1]), pts[k]) for k in range(1, len(pts)))


@dataclass(frozen=True)
class OrbitWindow:
    """Points ``y_k`` on ``[k_min, k_max]``; ``beta`` is always recomputed."""

    k_min: int
    points: np.ndarray
    beta: float

    @classmethod
    def from_points(cls, model, k_min, points):
        pts = reduce(np.atleast_2d(np.asarray(points, dtype=float)))
        if pts.shape[1] != model.d:
            raise ValidationError(f"points have dimension {pts.shape[1]}, model has {model.d}")
        pts.flags.writeable = False
        return cls(int(k_min), pts, defect(model, pts))

    @property
    def length(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def k_max(self):
        return self.k_min + self.length - 1

    @property
    def indices(self):
        return np.arange(self.k_min, self.k_max + 1)

    def __getitem__(self, k):
        if not self.k_min <= k <= self.k_max:
            raise IndexError(f"index {k} outside window [{self.k_min}, {self.k_max}]")
        return self.points[k - self.k_min]

    def restrict(self, model, k_lo, k_hi):
        return OrbitWindow.from_points(model, k_lo,
                                       self.points[k_lo - self.k_min:k_hi - self.k_min + 1])

    def is_true_orbit(self, tol=1e-14):
        return self.beta <= tol

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"x_{i + 1}" for i in range(self.d)])
        for k, p in zip(self.indices, self.points):
            w.writerow([int(k)] + [repr(float(v)) for v in p])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, model, text):
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2:
            raise ValidationError("orbit CSV holds no rows")
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        k = body[:, 0].astype(int)
        if np.any(np.diff(k) != 1):
            raise ValidationError("orbit CSV indices must be consecutive and increasing")
        return cls.from_points(model, int(k[0]), body[:, 1:])

    def to_json(self):
        return json.dumps({"k_min": self.k_min, "beta": self.beta,
                           "points": self.points.tolist()})


def _check_finite(x, k):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite iterate at k={k}")


def evolve(model, x0, k_min, k_max):
    """True orbit ``y_k = f^k(x0)`` on ``[k_min, k_max]``."""
    if k_min > k_max:
        raise ValidationError("empty window")
    x0 = reduce(np.asarray(x0, dtype=float))
    fwd = {0: x0}
    x = x0
    for k in range(1, max(k_max, 0) + 1):
        x = model.f(x)
        _check_finite(x, k)
        fwd[k] = x
    x = x0
    for k in range(-1, min(k_min, 0) - 1, -1):
        x = model.f_inv(x)
        _check_finite(x, k)
        fwd[k] = x
    pts = np.array([fwd[k] for k in range(k_min, k_max + 1)])
    return OrbitWindow.from_points(model, k_min, pts)


def _ball_sample(rng, d, radius):
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    # strictly inside the ball so the recorded defect never exceeds the radius
    return v * radius * rng.random() ** (1.0 / d) * (1 - 1e-9)


def pseudo_orbit(model, x0, k_min, k_max, beta_target, seed):
    """Perturbed orbit with per-step kicks uniform in the ball of radius ``beta_target``.

    ``y_0 = x0``; forward ``y_k = f(y_{k-1}) + zeta_k``; backward
    ``y_{k-1} = f^{-1}(y_k - zeta_k)``.
    """
    if beta_target < 0:
        raise ValidationError("beta_target must be nonnegative")
    rng = make_rng(seed)
    d = model.d
    x0 = reduce(np.asarray(x0, dtype=float))
    pts = {0: x0}
    x = x0
    for k in range(1, max(k_max, 0) + 1):
        kick = _ball_sample(rng, d, beta_target) if beta_target > 0 else 0.0
        x = reduce(model.f(x) + kick)
        _check_finite(x, k)
        pts[k] = x
    x = x0
    for k in range(-1, min(k_min, 0) - 1, -1):
        kick = _ball_sample(rng, d, beta_target) if beta_target > 0 else 0.0
        x = model.f_inv(reduce(x - kick)) if beta_target > 0 else model.f_inv(x)
        _check_finite(x, k)
        pts[k] = x
    return OrbitWindow.from_points(model, k_min, np.array([pts[k] for k in range(k_min, k_max + 1)]))


def cocycle(model, orbit):
    """Stack of derivative matrices ``Df(y_k)``, one per orbit point."""
    pts = orbit.points if isinstance(orbit, OrbitWindow) else np.atleast_2d(orbit)
    return np.array([model.Df(p) for p in pts])


def check_model(model, samples=1000, seed=0):
    """Sample the model invariants; returns the worst observed violations."""
    rng = make_rng(seed)
    x = rng.random((samples, model.d))
    y = reduce(x + 1e-3 * (2 * rng.random((samples, model.d)) - 1))
    worst_norm = max(np.linalg.norm(model.Df(p), 2) for p in x)
    roundtrip = max(torus_distance(model.f(model.f_inv(p)), p) for p in x)
    holder = 0.0
    for a, b in zip(x, y):
        dist = torus_distance(a, b)
        if dist > 0:
            holder = max(holder, np.linalg.norm(model.Df(a) - model.Df(b), 2) / dist ** model.alpha)
    return {"max_Df": float(worst_norm), "c1": model.c1, "max_holder_quotient": float(holder),
            "c2": model.c2, "max_roundtrip": float(roundtrip)}
