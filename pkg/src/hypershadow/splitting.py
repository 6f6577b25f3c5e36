"""Stable and unstable splittings along orbit windows.

Frames come from two re-orthonormalized cocycle sweeps: a forward sweep with
``Df`` whose leading directions converge to ``E^u`` and a backward sweep with
``Df^{-1}`` whose leading directions converge to ``E^s``.  The window is
extended by ``iters`` steps on each side with the model's own map so that the
sweeps are burned in before they reach the first site of interest.

Along the window the cocycle is carried in frame coordinates:
``Df(x_k) E^s_k = E^s_{k+1} T^s_k`` and likewise for ``E^u``.  Products of
derivatives are never formed directly; only the small transport matrices are
multiplied, which keeps every block of the splitting inverse at full relative
precision.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import OrbitWindow, make_rng
from .errors import DegenerateSplittingError, DimensionError, ValidationError
from .operator import spectral_norms
from .seqspace import TangentSequence

__all__ = ["SplittingFrame", "compute_splitting", "compute_splitting_many", "extract_splitting_via_inverse",
           "split_sequence", "subspace_distance"]

EXPONENT_GUARD = 1e-3
GAP_RATIO = 1.01
CONVERGENCE_TOL = 1e-10


def subspace_distance(E, F):
    """Spectral distance between the orthogonal projectors onto span E and span F."""
    if E.shape[1] == 0 and F.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(E @ E.T - F @ F.T, 2))


@dataclass(frozen=True)
class SplittingFrame:
    """Splitting data for every site of ``[k_min, k_min + L - 1]``.

    ``Es[k]`` and ``Eu[k]`` are orthonormal bases, ``Gs[k]`` and ``Gu[k]`` the
    matching rows of ``[Es Eu]^{-1}``, so ``Ps = Es Gs`` and ``Pu = Eu Gu``.
    ``Ts[k]`` and ``Tu[k]`` carry the cocycle from site ``k`` to ``k + 1`` in
    frame coordinates.
    """

    k_min: int
    Es: np.ndarray
    Eu: np.ndarray
    Gs: np.ndarray
    Gu: np.ndarray
    Ts: np.ndarray
    Tu: np.ndarray
    c: float
    lam: float
    a: float
    exponents: np.ndarray
    invariance_error: float
    convergence: float
    info: dict = field(default_factory=dict)

    @property
    def length(self):
        return self.Es.shape[0]

    @property
    def k_max(self):
        return self.k_min + self.length - 1

    @property
    def d(self):
        return self.Es.shape[1]

    @property
    def d_s(self):
        return self.Es.shape[2]

    @property
    def d_u(self):
        return self.Eu.shape[2]

    @property
    def Ps(self):
        return np.einsum("kas,ksb->kab", self.Es, self.Gs)

    @property
    def Pu(self):
        return np.einsum("kau,kub->kab", self.Eu, self.Gu)

    def site(self, k):
        i = k - self.k_min
        if not 0 <= i < self.length:
            raise IndexError(f"site {k} outside frame window [{self.k_min}, {self.k_max}]")
        return {"k": int(k), "Es": self.Es[i], "Eu": self.Eu[i],
                "Ps": self.Es[i] @ self.Gs[i], "Pu": self.Eu[i] @ self.Gu[i]}

    def restrict(self, k_lo, k_hi):
        if k_lo < self.k_min or k_hi > self.k_max or k_lo > k_hi:
            raise DimensionError("restriction outside frame window")
        a, b = k_lo - self.k_min, k_hi - self.k_min
        return SplittingFrame(k_lo, self.Es[a:b + 1], self.Eu[a:b + 1], self.Gs[a:b + 1],
                              self.Gu[a:b + 1], self.Ts[a:b], self.Tu[a:b], self.c, self.lam,
                              self.a, self.exponents, self.invariance_error, self.convergence,
                              dict(self.info))

    def constants(self):
        return {"c": self.c, "lambda": self.lam, "a": self.a, "d_s": self.d_s,
                "d_u": self.d_u, "exponents": [float(e) for e in self.exponents],
                "invariance_error": self.invariance_error, "convergence": self.convergence,
                **self.info}

    def to_json(self):
        Ps, Pu = self.Ps, self.Pu
        sites = [{"k": int(self.k_min + i), "Es": self.Es[i].tolist(), "Eu": self.Eu[i].tolist(),
                  "Ps": Ps[i].tolist(), "Pu": Pu[i].tolist()} for i in range(self.length)]
        return json.dumps({"constants": self.constants(), "frames": sites})


def _extended_cocycle(model, orbit, iters):
    pts = [p for p in orbit.points]
    head, tail = [], []
    x = orbit.points[0]
    for _ in range(iters):
        x = model.f_inv(x)
        head.append(x)
    x = orbit.points[-1]
    for _ in range(iters):
        x = model.f(x)
        tail.append(x)
    allpts = head[::-1] + pts + tail
    return np.array([model.Df(p) for p in allpts])


def _qr_pos(M):
    """Batched QR with a nonnegative diagonal in ``R``."""
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    s[s == 0] = 1.0
    return Q * s[..., None, :], R * s[..., :, None]


def _forward_sweep(mats, Q0):
    """``Q_{k+1} R_k = Df_k Q_k`` for a batch ``(S, n, d, d)``; also returns log|diag R|."""
    S, n, d = mats.shape[0], mats.shape[1], mats.shape[2]
    Qs = np.empty((S, n, d, d))
    logs = np.empty((S, n - 1, d))
    Q = Q0
    Qs[:, 0] = Q
    for k in range(n - 1):
        Q, R = _qr_pos(mats[:, k] @ Q)
        Qs[:, k + 1] = Q
        logs[:, k] = np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))
    return Qs, logs


def _backward_sweep(inv_mats, Q0):
    """``Q_k R_k = Df_k^{-1} Q_{k+1}``, running from the last site to the first."""
    S, n, d = inv_mats.shape[0], inv_mats.shape[1] + 1, inv_mats.shape[2]
    Qs = np.empty((S, n, d, d))
    Q = Q0
    Qs[:, -1] = Q
    for k in range(n - 2, -1, -1):
        Q, _ = _qr_pos(inv_mats[:, k] @ Q)
        Qs[:, k] = Q
    return Qs


def _random_orthonormal(rng, S, d):
    Q, _ = _qr_pos(rng.standard_normal((S, d, d)))
    return Q


def _measure_constants(Ts, Tu_inv, kmax):
    """Contraction factor ``lambda`` and smallest ``c >= 1`` with ``|prod_k| <= c lambda^k``.

    ``lambda`` is the largest one-step factor (stable transports forward,
    inverse unstable transports backward) when that is below 1.  Otherwise the
    one-step factor says nothing and ``lambda`` falls back to the worst
    ``kmax``-step rate ``max |prod_kmax|^{1/kmax}``; ``c`` then absorbs the
    transient.  Works on a batch: ``Ts`` has shape ``(S, n, d_s, d_s)``.
    """
    S, n = Ts.shape[0], Ts.shape[1]
    step_lam = np.zeros(S)
    for T in (Ts, Tu_inv):
        if T.shape[2]:
            step_lam = np.maximum(step_lam, spectral_norms(T).max(axis=1))
    steps = min(kmax, n)
    worst = np.zeros((S, steps + 1))
    worst[:, 0] = 1.0
    for T, forward in ((Ts, True), (Tu_inv, False)):
        e = T.shape[2]
        if e == 0:
            continue
        P = np.broadcast_to(np.eye(e), (S, n, e, e)).copy()
        for k in range(1, steps + 1):
            m = n - k + 1
            step = T[:, k - 1:k - 1 + m]
            P = step @ P[:, :m] if forward else P[:, :m] @ step
            worst[:, k] = np.maximum(worst[:, k], spectral_norms(P).max(axis=1))
    rate = worst[:, steps] ** (1.0 / steps) if steps else step_lam
    lam = np.where(step_lam < 1, step_lam, rate)
    with np.errstate(divide="ignore", over="ignore"):
        c = np.max(worst / lam[:, None] ** np.arange(steps + 1)[None, :], axis=1)
    return lam, np.maximum(c, 1.0), np.where(step_lam < 1, "one-step", "window-rate")


def _frames_from_cocycles(mats, k_min, length, iters, seed):
    """Frames for a batch of extended cocycles ``(S, length + 2 iters, d, d)``."""
    S, d = mats.shape[0], mats.shape[2]
    inv_mats = np.linalg.inv(mats[:, :-1])
    rng = make_rng(seed)
    Qf, logs = _forward_sweep(mats, _random_orthonormal(rng, S, d))
    Qb = _backward_sweep(inv_mats, _random_orthonormal(rng, S, d))
    Qf2, _ = _forward_sweep(mats, _random_orthonormal(rng, S, d))
    Qb2 = _backward_sweep(inv_mats, _random_orthonormal(rng, S, d))
    exps_all = logs.mean(axis=1)
    nsteps = logs.shape[1]
    sl = slice(iters, iters + length)
    d_u_all = np.sum(exps_all > 0, axis=1)
    for s in range(S):
        if np.any(np.abs(exps_all[s]) <= EXPONENT_GUARD):
            raise DegenerateSplittingError(
                "finite-time exponent inside the guard band", exponents=exps_all[s].tolist(),
                guard=EXPONENT_GUARD, orbit=s)
        du = d_u_all[s]
        if 0 < du < d:
            gap = nsteps * (exps_all[s, du - 1] - exps_all[s, du])
            if gap < np.log(GAP_RATIO):
                raise DegenerateSplittingError("singular values fail to separate",
                                               log_gap=float(gap), orbit=s)
    if len(set(d_u_all.tolist())) != 1:
        raise DegenerateSplittingError("unstable dimension varies across the batch",
                                       d_u=d_u_all.tolist())
    d_u = int(d_u_all[0])
    d_s = d - d_u
    Eu, Es = Qf[:, sl, :, :d_u], Qb[:, sl, :, :d_s]

    def proj(E):
        return E @ np.swapaxes(E, -1, -2)

    conv = np.zeros(S)
    for E, E2 in ((Eu, Qf2[:, sl, :, :d_u]), (Es, Qb2[:, sl, :, :d_s])):
        if E.shape[-1]:
            conv = np.maximum(conv, spectral_norms(proj(E) - proj(E2)).max(axis=1))
    if conv.max() > 1e-6:
        raise DegenerateSplittingError("subspace iteration did not converge",
                                       convergence=float(conv.max()))
    V = np.concatenate([Es, Eu], axis=3)
    cond = np.linalg.cond(V)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
        raise DegenerateSplittingError("stable and unstable frames are nearly parallel",
                                       condition=float(np.max(cond)))
    G = np.linalg.inv(V)
    Gs, Gu = G[:, :, :d_s, :], G[:, :, d_s:, :]
    D = mats[:, sl][:, :-1]
    Et = lambda E: np.swapaxes(E, -1, -2)  # noqa: E731
    Ts = Et(Es[:, 1:]) @ D @ Es[:, :-1]
    Tu = Et(Eu[:, 1:]) @ D @ Eu[:, :-1]
    inv_err = np.zeros(S)
    for E, T in ((Es, Ts), (Eu, Tu)):
        if E.shape[-1]:
            DE = D @ E[:, :-1]
            r = DE - E[:, 1:] @ T
            inv_err = np.maximum(inv_err, (spectral_norms(r) / spectral_norms(DE)).max(axis=1))
    Tu_inv = np.linalg.inv(Tu) if d_u else Tu
    if length > 1:
        lam, c, source = _measure_constants(Ts, Tu_inv, kmax=min(length - 1, 64))
    else:
        lam, c, source = np.zeros(S), np.ones(S), np.array(["one-step"] * S)
    Ps, Pu = Es @ Gs, Eu @ Gu
    a = np.maximum(spectral_norms(Ps).max(axis=1), spectral_norms(Pu).max(axis=1))
    return [SplittingFrame(k_min[s], Es[s], Eu[s], Gs[s], Gu[s], Ts[s], Tu[s], float(c[s]),
                           float(lam[s]), float(a[s]), np.sort(exps_all[s])[::-1],
                           float(inv_err[s]), float(conv[s]),
                           {"iters": int(iters), "surrogate": True,
                            "lambda_source": str(source[s])})
            for s in range(S)]


def compute_splitting(model, orbit, iters=64, seed=0):
    """Stable/unstable frames along ``orbit`` with measured ``(c, lambda, a)``.

    Raises
    ------
    DegenerateSplittingError
        If a finite-time exponent lies inside the guard band ``|chi| <= 1e-3``,
        the singular-value gap over the extended window is below ``1.01``, or
        two sweeps from independent random starts disagree.
    """
    return compute_splitting_many(model, [orbit], iters=iters, seed=seed)[0]


def compute_splitting_many(model, orbits, iters=64, seed=0):
    """Batched :func:`compute_splitting` for orbits of equal length."""
    if not orbits:
        return []
    for o in orbits:
        if not isinstance(o, OrbitWindow):
            raise ValidationError("compute_splitting expects an OrbitWindow")
    if iters < 1:
        raise ValidationError("iters must be positive")
    length = orbits[0].length
    if any(o.length != length for o in orbits):
        raise ValidationError("batched orbits must share a window length")
    mats = np.array([_extended_cocycle(model, o, iters) for o in orbits])
    return _frames_from_cocycles(mats, [o.k_min for o in orbits], length, iters, seed)


def extract_splitting_via_inverse(inverse, Df_at_minus1, theta):
    """``theta^s = (Ups J theta)_0`` and ``theta^u = -Df(x_{-1}) (Ups J theta)_{-1}``."""
    rep = inverse.rep if hasattr(inverse, "rep") else inverse
    if not (rep.row_min <= -1 and rep.row_max >= 0 and rep.col_min <= 0 <= rep.col_max):
        raise DimensionError("inverse must cover rows -1, 0 and column 0")
    theta = np.asarray(theta, dtype=float)
    ts = rep.block(0, 0) @ theta
    tu = -np.asarray(Df_at_minus1, dtype=float) @ (rep.block(-1, 0) @ theta)
    return ts, tu


def split_sequence(seq, frames):
    """Sitewise projection ``eta^s_k = P^s_k eta_k`` and ``eta^u_k = P^u_k eta_k``."""
    if seq.k_min < frames.k_min or seq.k_max > frames.k_max:
        raise DimensionError("frames do not cover the sequence window")
    a = seq.k_min - frames.k_min
    Ps = frames.Ps[a:a + seq.length]
    vs = np.einsum("kab,kb->ka", Ps, seq.vectors)
    return TangentSequence(seq.k_min, vs), TangentSequence(seq.k_min, seq.vectors - vs)
