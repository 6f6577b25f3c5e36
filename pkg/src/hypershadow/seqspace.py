"""Finite windows of tangent sequences and the weighted sup-norms on them.

A sequence lives on an integer window ``[k_min, k_max]`` with absolute
indices, so the weight ``exp(-|k|/n)`` is always evaluated at the true lattice
site and never relative to the window start.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

__all__ = [
    "GradeParam", "INFINITY", "as_grade", "TangentSequence", "WeightSequence",
    "weighted_norm", "validate_weights", "shift",
]


@dataclass(frozen=True)
class GradeParam:
    """Grade ``n`` of the norm ``sup_k exp(-|k|/n)|eta_k|``; ``n = inf`` gives the sup-norm.

    Serialized as the integer ``n`` or the string ``"inf"``.
    """

    n: float

    def __post_init__(self):
        n = float(self.n)
        if math.isnan(n) or n < 1:
            raise ValidationError(f"grade must be >= 1 or infinite, got {self.n!r}")
        if not math.isinf(n) and n != int(n):
            raise ValidationError(f"finite grade must be an integer, got {self.n!r}")
        object.__setattr__(self, "n", n)

    @property
    def is_infinite(self):
        return math.isinf(self.n)

    @property
    def ratio_bound(self):
        """Consecutive-weight ratio ``exp(1/n)``."""
        return 1.0 if self.is_infinite else math.exp(1.0 / self.n)

    def weights(self, indices):
        k = np.abs(np.asarray(indices, dtype=float))
        if self.is_infinite:
            return np.ones_like(k)
        return np.exp(-k / self.n)

    def __str__(self):
        return "inf" if self.is_infinite else str(int(self.n))

    def to_json(self):
        return "inf" if self.is_infinite else int(self.n)


INFINITY = GradeParam(math.inf)


def as_grade(value):
    """Coerce ints, ``inf``, ``"inf"``/``None`` or a GradeParam to a GradeParam."""
    if isinstance(value, GradeParam):
        return value
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity")):
        return INFINITY
    return GradeParam(float(value))


@dataclass(frozen=True)
class TangentSequence:
    """Vectors ``eta_k`` in R^d for ``k = k_min, ..., k_min + L - 1``."""

    k_min: int
    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"vectors must have shape (L, d) with L, d >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("tangent sequence contains non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "k_min", int(self.k_min))
        object.__setattr__(self, "vectors", v)

    @classmethod
    def zeros(cls, k_min, length, d):
        return cls(k_min, np.zeros((length, d)))

    @classmethod
    def delta(cls, k_min, length, at, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        v = np.zeros((length, theta.size))
        v[at - k_min] = theta
        return cls(k_min, v)

    @property
    def length(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    @property
    def k_max(self):
        return self.k_min + self.length - 1

    @property
    def indices(self):
        return np.arange(self.k_min, self.k_max + 1)

    def __getitem__(self, k):
        if not self.k_min <= k <= self.k_max:
            raise IndexError(f"index {k} outside window [{self.k_min}, {self.k_max}]")
        return self.vectors[k - self.k_min]

    def restrict(self, k_lo, k_hi):
        if k_lo < self.k_min or k_hi > self.k_max or k_lo > k_hi:
            raise DimensionError(f"[{k_lo}, {k_hi}] not inside [{self.k_min}, {self.k_max}]")
        return TangentSequence(k_lo, self.vectors[k_lo - self.k_min:k_hi - self.k_min + 1])

    def flat(self):
        return self.vectors.reshape(-1).copy()

    def _check_same_window(self, other):
        if (self.k_min, self.length, self.d) != (other.k_min, other.length, other.d):
            raise DimensionError("sequences live on different windows")

    def __add__(self, other):
        self._check_same_window(other)
        return TangentSequence(self.k_min, self.vectors + other.vectors)

    def __sub__(self, other):
        self._check_same_window(other)
        return TangentSequence(self.k_min, self.vectors - other.vectors)

    def __mul__(self, scalar):
        return TangentSequence(self.k_min, float(scalar) * self.vectors)

    __rmul__ = __mul__

    def __neg__(self):
        return TangentSequence(self.k_min, -self.vectors)

    def allclose(self, other, atol=1e-12):
        return (self.k_min, self.vectors.shape) == (other.k_min, other.vectors.shape) and \
            np.allclose(self.vectors, other.vectors, rtol=0, atol=atol)

    # serialization

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"v_{i + 1}" for i in range(self.d)])
        for k, v in zip(self.indices, self.vectors):
            w.writerow([int(k)] + [repr(float(x)) for x in v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2:
            raise ValidationError("CSV holds no sequence rows")
        body = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        k = body[:, 0].astype(int)
        if np.any(np.diff(k) != 1):
            raise ValidationError("CSV indices must be consecutive and increasing")
        return cls(int(k[0]), body[:, 1:])

    def to_json(self):
        return json.dumps([{"k": int(k), "v": [float(x) for x in v]}
                           for k, v in zip(self.indices, self.vectors)])

    @classmethod
    def from_json(cls, text):
        items = json.loads(text)
        if not items:
            raise ValidationError("JSON holds no sequence entries")
        items = sorted(items, key=lambda e: e["k"])
        k = [int(e["k"]) for e in items]
        if any(b - a != 1 for a, b in zip(k, k[1:])):
            raise ValidationError("JSON indices must be consecutive")
        return cls(k[0], np.array([e["v"] for e in items], dtype=float))


def validate_weights(weights):
    """Smallest ``b`` with ``w_{k-1}/w_k <= b`` and ``w_k/w_{k-1} <= b`` on the window.

    Any strictly larger value is an admissible ratio bound.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValidationError("weights must be finite and strictly positive")
    if w.size == 1:
        return 1.0
    r = w[1:] / w[:-1]
    return float(max(1.0, r.max(), (1.0 / r).max()))


@dataclass(frozen=True)
class WeightSequence:
    k_min: int
    weights: np.ndarray
    ratio_bound: float = field(default=None)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = validate_weights(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "k_min", int(self.k_min))
        if self.ratio_bound is None:
            object.__setattr__(self, "ratio_bound", b)
        elif self.ratio_bound < b:
            raise ValidationError(f"ratio_bound {self.ratio_bound} below measured {b}")

    @classmethod
    def from_grade(cls, grade, k_min, k_max):
        g = as_grade(grade)
        return cls(k_min, g.weights(np.arange(k_min, k_max + 1)))

    @property
    def k_max(self):
        return self.k_min + len(self.weights) - 1

    def at(self, indices):
        idx = np.asarray(indices) - self.k_min
        if np.any(idx < 0) or np.any(idx >= len(self.weights)):
            raise DimensionError("weight window does not cover the sequence window")
        return self.weights[idx]


def _weights_for(grade, indices):
    if isinstance(grade, WeightSequence):
        return grade.at(indices)
    return as_grade(grade).weights(indices)


def weighted_norm(seq, grade):
    """``sup_k weight(k) |eta_k|`` with the Euclidean norm on each vector."""
    w = _weights_for(grade, seq.indices)
    return float(np.max(w * np.linalg.norm(seq.vectors, axis=1)))


def shift(seq, j):
    """``(S^j eta)_k = eta_{k-j}``: the window moves right by ``j``."""
    return TangentSequence(seq.k_min + int(j), seq.vectors)
