"""The transfer operator on finite windows and weighted norms of block matrices.

``(Gamma eta)_k = eta_k - Df(y_{k-1}) eta_{k-1}``.  On the window
``[k_min, k_max]`` the operator is rectangular: it reads ``L`` input blocks and
produces ``L - 1`` output blocks, one for each site that has a predecessor.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import OrbitWindow, cocycle
from .errors import DimensionError, ValidationError
from .seqspace import TangentSequence, as_grade

__all__ = [
    "MatrixRep", "TransferOperator", "assemble_gamma", "apply_gamma", "block_norms",
    "spectral_norms",
    "norm_upper", "norm_lower", "induced_norm_estimate", "shift_conjugate", "conjugate_rep",
    "as_rep",
]

DROP_BELOW = 1e-15


@dataclass(frozen=True)
class MatrixRep:
    """Block matrix ``A_{i,j}`` with rows indexed from ``row_min`` and columns from ``col_min``.

    Blocks are held densely as an ``(R, C, d, d)`` array; serialization emits
    only blocks whose spectral norm is at least ``1e-15``.
    """

    row_min: int
    col_min: int
    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 4 or b.shape[2] != b.shape[3]:
            raise DimensionError(f"blocks must have shape (R, C, d, d), got {b.shape}")
        object.__setattr__(self, "blocks", b)
        object.__setattr__(self, "row_min", int(self.row_min))
        object.__setattr__(self, "col_min", int(self.col_min))

    @property
    def n_rows(self):
        return self.blocks.shape[0]

    @property
    def n_cols(self):
        return self.blocks.shape[1]

    @property
    def d(self):
        return self.blocks.shape[2]

    @property
    def row_max(self):
        return self.row_min + self.n_rows - 1

    @property
    def col_max(self):
        return self.col_min + self.n_cols - 1

    @property
    def row_indices(self):
        return np.arange(self.row_min, self.row_max + 1)

    @property
    def col_indices(self):
        return np.arange(self.col_min, self.col_max + 1)

    def block(self, i, j):
        if not (self.row_min <= i <= self.row_max and self.col_min <= j <= self.col_max):
            return np.zeros((self.d, self.d))
        return self.blocks[i - self.row_min, j - self.col_min]

    @classmethod
    def identity(cls, k_min, length, d):
        b = np.zeros((length, length, d, d))
        idx = np.arange(length)
        b[idx, idx] = np.eye(d)
        return cls(k_min, k_min, b)

    @classmethod
    def from_dense(cls, row_min, col_min, dense, d):
        R, C = dense.shape[0] // d, dense.shape[1] // d
        return cls(row_min, col_min, dense.reshape(R, d, C, d).transpose(0, 2, 1, 3))

    def to_dense(self):
        R, C, d, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(R * d, C * d)

    def apply(self, seq):
        if (seq.k_min, seq.length) != (self.col_min, self.n_cols):
            raise DimensionError(
                f"sequence window [{seq.k_min}, {seq.k_max}] != input window "
                f"[{self.col_min}, {self.col_max}]")
        return TangentSequence(self.row_min, np.einsum("ijab,jb->ia", self.blocks, seq.vectors))

    def __matmul__(self, other):
        if (self.col_min, self.n_cols) != (other.row_min, other.n_rows):
            raise DimensionError("inner windows of the product do not match")
        dense = self.to_dense() @ other.to_dense()
        return MatrixRep.from_dense(self.row_min, other.col_min, dense, self.d)

    def __sub__(self, other):
        if (self.row_min, self.col_min, self.blocks.shape) != \
                (other.row_min, other.col_min, other.blocks.shape):
            raise DimensionError("representations live on different windows")
        return MatrixRep(self.row_min, self.col_min, self.blocks - other.blocks)

    def minus_identity(self):
        """``A - I`` where ``I`` pairs equal row and column indices."""
        b = self.blocks.copy()
        for i in range(max(self.row_min, self.col_min), min(self.row_max, self.col_max) + 1):
            b[i - self.row_min, i - self.col_min] -= np.eye(self.d)
        return MatrixRep(self.row_min, self.col_min, b)

    def restrict(self, rows=None, cols=None):
        r0, r1 = rows if rows is not None else (self.row_min, self.row_max)
        c0, c1 = cols if cols is not None else (self.col_min, self.col_max)
        if r0 < self.row_min or r1 > self.row_max or c0 < self.col_min or c1 > self.col_max:
            raise DimensionError("restriction window exceeds the representation")
        return MatrixRep(r0, c0, self.blocks[r0 - self.row_min:r1 - self.row_min + 1,
                                             c0 - self.col_min:c1 - self.col_min + 1])

    def nonzero_blocks(self, threshold=DROP_BELOW):
        norms = block_norms(self)
        for a, b in zip(*np.nonzero(norms >= threshold)):
            yield int(a + self.row_min), int(b + self.col_min), self.blocks[a, b]

    def to_json_obj(self):
        return {"row_window": [self.row_min, self.row_max],
                "col_window": [self.col_min, self.col_max],
                "d": self.d,
                "blocks": [{"i": i, "j": j, "block": blk.tolist()}
                           for i, j, blk in self.nonzero_blocks()]}

    def to_json(self):
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj):
        (r0, r1), (c0, c1), d = obj["row_window"], obj["col_window"], obj["d"]
        b = np.zeros((r1 - r0 + 1, c1 - c0 + 1, d, d))
        for e in obj["blocks"]:
            b[e["i"] - r0, e["j"] - c0] = e["block"]
        return cls(r0, c0, b)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_obj(json.loads(text))


@dataclass(frozen=True)
class TransferOperator:
    """``Gamma`` on ``[k_min, k_max]``; ``sub[k - k_min - 1] = Df(y_{k-1})``."""

    k_min: int
    sub: np.ndarray

    def __post_init__(self):
        s = np.array(self.sub, dtype=float)
        if s.ndim != 3 or s.shape[1] != s.shape[2] or s.shape[0] < 1:
            raise DimensionError("need at least one d x d cocycle matrix")
        s.flags.writeable = False
        object.__setattr__(self, "sub", s)
        object.__setattr__(self, "k_min", int(self.k_min))

    @property
    def d(self):
        return self.sub.shape[1]

    @property
    def length(self):
        return self.sub.shape[0] + 1

    @property
    def k_max(self):
        return self.k_min + self.length - 1

    @property
    def input_window(self):
        return self.k_min, self.k_max

    @property
    def output_window(self):
        return self.k_min + 1, self.k_max

    def Df(self, k):
        """Cocycle matrix at site ``k`` for ``k_min <= k < k_max``."""
        return self.sub[k - self.k_min]

    @property
    def rep(self):
        L, d = self.length, self.d
        b = np.zeros((L - 1, L, d, d))
        r = np.arange(L - 1)
        b[r, r + 1] = np.eye(d)
        b[r, r] = -self.sub
        return MatrixRep(self.k_min + 1, self.k_min, b)

    def to_dense(self):
        return self.rep.to_dense()

    def restrict(self, k_lo, k_hi):
        if k_lo < self.k_min or k_hi > self.k_max or k_hi - k_lo < 1:
            raise DimensionError("restriction window invalid")
        return TransferOperator(k_lo, self.sub[k_lo - self.k_min:k_hi - self.k_min])


def assemble_gamma(model, points):
    """Build ``Gamma`` along an orbit window (true orbit or pseudo-orbit)."""
    if not isinstance(points, OrbitWindow):
        raise ValidationError("assemble_gamma expects an OrbitWindow")
    if points.length < 2:
        raise ValidationError("need at least two points")
    mats = cocycle(model, points)
    return TransferOperator(points.k_min, mats[:-1])


def apply_gamma(op, seq):
    if (seq.k_min, seq.length) != (op.k_min, op.length) or seq.d != op.d:
        raise DimensionError(
            f"sequence window [{seq.k_min}, {seq.k_max}] != input window {op.input_window}")
    v = seq.vectors
    return TangentSequence(op.k_min + 1, v[1:] - np.einsum("kab,kb->ka", op.sub, v[:-1]))


def shift_conjugate(op, j):
    """``S^{-j} Gamma S^j``: same blocks, window moved left by ``j``."""
    return TransferOperator(op.k_min - int(j), op.sub)


def as_rep(obj):
    if isinstance(obj, MatrixRep):
        return obj
    if hasattr(obj, "rep"):
        return obj.rep
    raise ValidationError(f"cannot view {type(obj).__name__} as a block matrix")


def spectral_norms(b):
    """Spectral norms over the last two axes of a stack of square matrices."""
    d = b.shape[-1]
    if d == 1:
        return np.abs(b[..., 0, 0])
    if d == 2:
        # largest singular value of a 2x2 matrix in closed form, rescaled
        # so that squaring neither underflows nor overflows
        scale = np.max(np.abs(b), axis=(-2, -1))
        safe = np.where(scale > 0, scale, 1.0)
        return safe * _spectral_2x2(b / safe[..., None, None])
    return np.linalg.svd(b, compute_uv=False)[..., 0]


def _spectral_2x2(b):
    fro2 = np.einsum("...ab,...ab->...", b, b)
    det = b[..., 0, 0] * b[..., 1, 1] - b[..., 0, 1] * b[..., 1, 0]
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4 * det * det, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def block_norms(rep):
    """Spectral norm of every block, shape ``(R, C)``."""
    return spectral_norms(as_rep(rep).blocks)


def _row_col_weights(rep, grade_in, grade_out):
    w_out = as_grade(grade_out).weights(rep.row_indices)
    w_in = as_grade(grade_in).weights(rep.col_indices)
    return w_out, w_in


def norm_upper(rep, grade_in, grade_out=None):
    """``sup_i w_out(i) sum_j |A_ij| / w_in(j)``; dominates the induced norm X_in -> X_out."""
    rep = as_rep(rep)
    grade_out = grade_in if grade_out is None else grade_out
    w_out, w_in = _row_col_weights(rep, grade_in, grade_out)
    return float(np.max(w_out * (block_norms(rep) @ (1.0 / w_in))))


def norm_lower(rep, grade, grade_out=None):
    """``norm_upper / (d sqrt(d))``; never exceeds the induced norm."""
    rep = as_rep(rep)
    return norm_upper(rep, grade, grade_out) / (rep.d * math.sqrt(rep.d))


def _directions(d, count, seed=0):
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        t = np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        g = np.random.Generator(np.random.Philox(seed)).standard_normal((count, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    if d <= 10:
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T
        signs = signs[signs[:, 0] > 0] / math.sqrt(d)
    else:
        signs = np.empty((0, d))
    return np.vstack([dirs, signs, np.eye(d)])


def _ascend(B, u, best, steps):
    """Monotone ascent ``u <- grad / |grad|`` on each row of ``sum_j |B_ij^T u|``."""
    for _ in range(steps):
        v = np.einsum("ijab,ia->ijb", B, u)
        nv = np.linalg.norm(v, axis=2, keepdims=True)
        grad = np.einsum("ijab,ijb->ia", B, np.divide(v, nv, out=np.zeros_like(v), where=nv > 0))
        gn = np.linalg.norm(grad, axis=1, keepdims=True)
        u = np.divide(grad, gn, out=u.copy(), where=gn > 0)
        val = np.linalg.norm(np.einsum("ijab,ia->ijb", B, u), axis=2).sum(axis=1)
        done = np.all(val - best <= 1e-15 * np.maximum(best, 1))
        best = np.maximum(best, val)
        if done:
            break
    return best


def induced_norm_estimate(rep, grade, grade_out=None, directions=64, ascent_steps=30,
                          return_rows=False, starts=4):
    """Estimate of the induced weighted sup-norm of a block matrix.

    For row ``i`` the induced norm is ``w_out(i) max_{|u|=1} sum_j |A_ij^T u| / w_in(j)``,
    a convex function of ``u``.  It is maximized by sampling ``directions``
    unit vectors plus coordinate-sign vectors and then running the monotone
    ascent ``u <- grad / |grad|`` from the ``starts`` best samples.  Exact for ``d = 1``;
    for ``d >= 2`` the result is a lower estimate of the true norm.
    """
    rep = as_rep(rep)
    grade_out = grade if grade_out is None else grade_out
    w_out, w_in = _row_col_weights(rep, grade, grade_out)
    B = rep.blocks / w_in[None, :, None, None]
    # rescale so squared norms neither underflow nor overflow
    scale = float(np.max(np.abs(B))) if B.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        scale = 1.0
    B = B / scale
    w_out = w_out * scale
    if rep.d == 1:
        rows = w_out * np.abs(B[:, :, 0, 0]).sum(axis=1)
        return (float(rows.max()), rows) if return_rows else float(rows.max())
    U = _directions(rep.d, directions)
    # F[i, n] = sum_j |B_ij^T u_n|
    BtU = np.einsum("ijab,na->injb", B, U)
    F = np.linalg.norm(BtU, axis=3).sum(axis=2)
    best = F.max(axis=1)
    # several starts per row: a single start can stall where some |B_ij^T u| = 0
    order = np.argsort(-F, axis=1)[:, :starts]
    for s in range(order.shape[1]):
        best = np.maximum(best, _ascend(B, U[order[:, s]], best.copy(), ascent_steps))
    rows = w_out * best
    return (float(rows.max()), rows) if return_rows else float(rows.max())


def conjugate_rep(rep, j):
    """Re-index both windows left by ``j`` (``S^{-j} A S^j``)."""
    rep = as_rep(rep)
    return MatrixRep(rep.row_min - j, rep.col_min - j, rep.blocks)
