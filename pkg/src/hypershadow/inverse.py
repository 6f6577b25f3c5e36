"""Inverses of the transfer operator on finite windows.

Several constructions live here:

* the splitting inverse, built from stable/unstable frames;
* minimal weighted-norm solves of ``Gamma xi = rhs`` and the singular-value
  proxy derived from them;
* exponential decay certificates for block matrices;
* damped approximate inverses assembled from inverses along nearby true
  orbits, and their upgrade to exact right inverses by a Neumann series.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import OrbitWindow, evolve, torus_distance
from .errors import (CertificateError, DimensionError, GradeTooCoarseError,
                     PreconditionError, PseudoOrbitTooFarError, ValidationError)
from .operator import (MatrixRep, TransferOperator, as_rep, assemble_gamma, block_norms,
                       induced_norm_estimate, norm_upper, spectral_norms)
from .seqspace import INFINITY, TangentSequence, as_grade
from .splitting import compute_splitting_many

__all__ = [
    "InverseOperator", "ApproxInverseParams", "splitting_inverse", "minimal_norm_solve",
    "solve_norm_proxy", "decay_certificate", "decay_constant", "graded_to_uniform_bound",
    "approximate_inverse", "neumann_invert", "fit_log_decay", "fit_column_decay",
    "pesin_inverses_along", "measure_closeness", "budget_terms", "splitting_series_bound",
    "interior_defects",
]


@dataclass(frozen=True)
class InverseOperator:
    """Block matrix of an inverse together with its decay certificate and recorded bound."""

    rep: MatrixRep
    c_decay: float
    lambda_decay: float
    grade_in: object = INFINITY
    grade_out: object = INFINITY
    bound: float = math.inf
    bound_name: str = ""
    info: dict = field(default_factory=dict)

    def decay_violation(self):
        """Largest excess of a block over ``c lambda^{|j-i|} exp((|i|-|j|)/n)``."""
        return _decay_excess(self.rep, self.c_decay, self.lambda_decay, self.grade_in)

    def certificate(self):
        return {"c_decay": self.c_decay, "lambda_decay": self.lambda_decay,
                "grade_in": as_grade(self.grade_in).to_json(),
                "grade_out": as_grade(self.grade_out).to_json(),
                "bound": self.bound, "bound_name": self.bound_name}

    def to_json(self):
        return json.dumps({"rep": self.rep.to_json_obj(), "certificate": self.certificate()})


def _decay_excess(rep, c, lam, grade):
    g = as_grade(grade)
    i = rep.row_indices[:, None].astype(float)
    j = rep.col_indices[None, :].astype(float)
    allowed = c * lam ** np.abs(j - i)
    if not g.is_infinite:
        allowed = allowed * np.exp((np.abs(i) - np.abs(j)) / g.n)
    return float(np.max(block_norms(rep) - allowed))


def splitting_series_bound(a, c, lam, grade=INFINITY):
    """``a c (1 + lambda e^{1/n}) / (1 - lambda e^{1/n})``."""
    q = lam * as_grade(grade).ratio_bound
    if q >= 1:
        raise GradeTooCoarseError(f"lambda * exp(1/n) = {q:.6g} >= 1", lam=lam,
                                  grade=as_grade(grade).to_json())
    return a * c * (1 + q) / (1 - q)


def splitting_inverse(gamma, frames, grade=INFINITY):
    """Right inverse of ``gamma`` from stable/unstable frames.

    Blocks are ``Df^{i-j}(x_j) P^s(x_j)`` for ``i >= j`` and
    ``-Df^{i-j}(x_j) P^u(x_j)`` for ``i < j``, truncated to the window.  Rows run
    over the input window of ``gamma``, columns over its output window, and
    ``gamma @ result`` is the identity up to rounding.

    Raises
    ------
    GradeTooCoarseError
        If ``lambda * exp(1/n) >= 1`` for the measured contraction ``lambda``.
    """
    grade = as_grade(grade)
    bound = splitting_series_bound(frames.a, frames.c, frames.lam, grade)
    if frames.k_min > gamma.k_min or frames.k_max < gamma.k_max:
        raise DimensionError("frames do not cover the operator window")
    fr = frames.restrict(gamma.k_min, gamma.k_max)
    L, d = gamma.length, gamma.d
    blocks = np.zeros((L, L - 1, d, d))
    q = np.arange(1, L)  # column positions relative to k_min
    # stable part, offset l = i - j >= 0
    if fr.d_s:
        M = np.broadcast_to(np.eye(fr.d_s), (L - 1, fr.d_s, fr.d_s)).copy()
        for l in range(0, L - 1):
            cols = q[:L - 1 - l]
            if l > 0:
                M = np.einsum("nab,nbc->nac", fr.Ts[cols + l - 1], M[:len(cols)])
            blocks[cols + l, cols - 1] = np.einsum(
                "nas,nst,ntb->nab", fr.Es[cols + l], M, fr.Gs[cols])
            if np.abs(M).max() < 1e-300:
                break
    if fr.d_u:
        Tinv = np.linalg.inv(fr.Tu)
        N = None
        for l in range(1, L):
            cols = q[l - 1:]
            N = Tinv[cols - 1] if N is None else \
                np.einsum("nab,nbc->nac", Tinv[cols - l], N[1:])
            blocks[cols - l, cols - 1] = -np.einsum(
                "nau,nuv,nvb->nab", fr.Eu[cols - l], N, fr.Gu[cols])
            if np.abs(N).max() < 1e-300:
                break
    rep = MatrixRep(gamma.k_min, gamma.k_min + 1, blocks)
    lam_decay = fr.lam * grade.ratio_bound
    return InverseOperator(rep, frames.a * frames.c, lam_decay, grade, grade, bound,
                           "splitting_series_bound",
                           {"a": frames.a, "c": frames.c, "lambda": frames.lam})


def interior_defects(gamma, inverse, guard=0):
    """Max block deviation from the identity of ``Gamma Ups`` and ``Ups Gamma``.

    ``Ups Gamma - I`` is measured on columns at least ``guard`` sites away from
    the window edges; the full matrices are returned for boundary analysis.
    """
    rep = as_rep(inverse)
    G = gamma.rep
    right = (G @ rep).minus_identity()
    left = (rep @ G).minus_identity()
    rn = block_norms(right)
    ln = block_norms(left)
    cols = left.col_indices
    inner = (cols >= gamma.k_min + guard) & (cols <= gamma.k_max - guard)
    return {"right": float(rn.max()),
            "left_interior": float(ln[:, inner].max()) if inner.any() else 0.0,
            "right_rep": right, "left_rep": left}


def _weights_for_window(grade, k_min, length):
    return as_grade(grade).weights(np.arange(k_min, k_min + length))


def minimal_norm_solve(gamma, rhs, grade=INFINITY):
    """``xi`` minimizing ``sum_k exp(-2|k|/n)|xi_k|^2`` subject to ``Gamma xi = rhs``.

    The system is rescaled to ``(Gamma W^{-1}) zeta = rhs`` with ``zeta = W xi``
    and solved through a QR factorization of its transpose, followed by one
    step of residual refinement.
    """
    if (rhs.k_min, rhs.length) != (gamma.k_min + 1, gamma.length - 1):
        raise DimensionError("rhs must live on the output window of gamma")
    d = gamma.d
    w = np.repeat(_weights_for_window(grade, gamma.k_min, gamma.length), d)
    M = gamma.to_dense() / w[None, :]
    Q, R = np.linalg.qr(M.T)
    b = rhs.flat()
    zeta = Q @ np.linalg.solve(R.T, b)
    r = b - M @ zeta
    zeta = zeta + Q @ np.linalg.solve(R.T, r)
    xi = (zeta / w).reshape(gamma.length, d)
    return TangentSequence(gamma.k_min, xi)


def _rescaled_sigma_min(gamma, grade_in, grade_out=None):
    grade_out = grade_in if grade_out is None else grade_out
    d = gamma.d
    w_in = np.repeat(_weights_for_window(grade_in, gamma.k_min, gamma.length), d)
    w_out = np.repeat(_weights_for_window(grade_out, gamma.k_min + 1, gamma.length - 1), d)
    M = w_out[:, None] * gamma.to_dense() / w_in[None, :]
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def solve_norm_proxy(gamma, grade, K_list):
    """``[(K, 1/sigma_min)]`` of the rescaled operator restricted to ``[-K, K]``.

    ``gamma`` may be a TransferOperator whose window contains every ``[-K, K]``
    or a callable ``K -> TransferOperator``.
    """
    K_list = list(K_list)
    if any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValidationError("K_list must be strictly increasing")
    out = []
    for K in K_list:
        g = gamma(K) if callable(gamma) else gamma.restrict(-K, K)
        out.append((int(K), 1.0 / _rescaled_sigma_min(g, grade)))
    return out


def decay_constant(a, b, lam):
    """Decay constant ``max(a, b) lambda / (lambda - a b (1 - lambda))``."""
    den = lam - a * b * (1 - lam)
    if den <= 0:
        raise ValidationError(f"lambda={lam} outside the admissible interval")
    return max(a, b) * lam / den


def decay_certificate(inverse_rep, a, b, half_width=None, grade=INFINITY, grid=64, tol=1e-9):
    """Pick ``lambda`` on a grid in ``(ab/(ab+1), 1)`` and verify the block decay bound.

    The chosen ``lambda`` minimizes ``c(lambda) lambda^w`` with ``w`` the window
    half-width; ties go to the smaller ``lambda``.

    Raises
    ------
    CertificateError
        If some block exceeds ``c lambda^{|j-i|}`` (times the grade weight ratio)
        by more than ``tol``.
    """
    rep = as_rep(inverse_rep)
    if a <= 0 or b <= 0:
        raise ValidationError("a and b must be positive")
    if half_width is None:
        half_width = (max(rep.n_rows, rep.n_cols) - 1) // 2
    lo = a * b / (a * b + 1)
    lams = lo + (1 - lo) * np.arange(1, grid + 1) / (grid + 1)
    scores = [decay_constant(a, b, l) * l ** half_width for l in lams]
    best = int(np.argmin(scores))  # argmin returns the first, i.e. smallest lambda
    lam = float(lams[best])
    c = decay_constant(a, b, lam)
    excess = _decay_excess(rep, c, lam, grade)
    if excess > tol:
        raise CertificateError("block decay bound violated", excess=excess, c_decay=c,
                               lambda_decay=lam)
    return c, lam


def graded_to_uniform_bound(c_4, n, d):
    """``2 c_4 d sqrt(d) / (1 - exp(-1/n))``."""
    if c_4 <= 0 or n < 1 or math.isinf(n):
        raise ValidationError("need c_4 > 0 and finite n >= 1")
    return 2 * c_4 * d * math.sqrt(d) / (1 - math.exp(-1.0 / n))


def fit_log_decay(values, offsets):
    """Least-squares slope of ``-log(values)`` against ``offsets``."""
    v = np.asarray(values, dtype=float)
    x = np.asarray(offsets, dtype=float)
    keep = v > 1e-300
    slope = np.polyfit(x[keep], np.log(v[keep]), 1)[0]
    return float(-slope)


def fit_column_decay(rep, column=0, span=None):
    """Decay rates of ``|A_{i,column}|`` below and above the diagonal."""
    rep = as_rep(rep)
    norms = block_norms(rep)[:, column - rep.col_min]
    rows = rep.row_indices
    span = span or (rep.n_rows // 4)
    below = (rows > column) & (rows <= column + span)
    above = (rows < column) & (rows >= column - span)
    return (fit_log_decay(norms[below], rows[below] - column),
            fit_log_decay(norms[above], column - rows[above]))


# approximate inverses

@dataclass(frozen=True)
class ApproxInverseParams:
    """Damping and cutoffs for the damped approximate inverse.

    ``d_q`` and ``e_p`` are the measured closeness quantities; leave them as
    ``None`` to have :func:`approximate_inverse` measure them.
    """

    lambda_damp: float
    p: int
    q: int
    d_q: float = None
    e_p: float = None

    def __post_init__(self):
        if not 0 < self.lambda_damp < 1:
            raise ValidationError("lambda_damp must lie in (0, 1)")
        if self.p < 1 or self.q < 1:
            raise ValidationError("cutoffs p, q must be positive")


def pesin_inverses_along(model, points, half_width, grade=INFINITY, iters=64):
    """Splitting inverse of ``Gamma`` along the true orbit of every window point.

    The inverse for site ``i`` lives on ``[-half_width, half_width]`` with the
    point itself at index 0.
    """
    orbits = [evolve(model, y, -half_width, half_width) for y in points.points]
    frames = compute_splitting_many(model, orbits, iters=iters)
    return {int(k): splitting_inverse(assemble_gamma(model, orb), fr, grade)
            for k, orb, fr in zip(points.indices, orbits, frames)}


def measure_closeness(model, pseudo, pesin_inverses, p, q, alpha=None):
    """``d(q) = sup_{|j-i|<q} |f^{j-i}(z_i) - y_j|^alpha`` and
    ``e(p) = sup_{|j-i|<=p} |Ups^{(i)}_{0,j-i} - Ups^{(i-1)}_{1,j-i+1}|`` with ``z_i = y_i``."""
    alpha = model.alpha if alpha is None else alpha
    d_q = 0.0
    idx = pseudo.indices
    for i, y in zip(idx, pseudo.points):
        x = y
        for l in range(1, q):
            if i + l > pseudo.k_max:
                break
            x = model.f(x)
            d_q = max(d_q, torus_distance(x, pseudo[i + l]) ** alpha)
        x = y
        for l in range(1, q):
            if i - l < pseudo.k_min:
                break
            x = model.f_inv(x)
            d_q = max(d_q, torus_distance(x, pseudo[i - l]) ** alpha)
    e_p = 0.0
    offs = np.arange(-p, p + 1)
    for i in idx[1:]:
        U, V = pesin_inverses[int(i)].rep, pesin_inverses[int(i) - 1].rep
        diff = np.array([U.block(0, s) - V.block(1, s + 1) for s in offs])
        e_p = max(e_p, float(spectral_norms(diff).max()))
    return d_q, e_p


def budget_terms(c1, c2, m, n, d, params, d_q, e_p, sup_dist_alpha=None):
    """A-priori error budget of the damped approximate inverse, keyed by formula.

    The left-inverse terms come first, then the right-inverse terms; each term
    is meant to stay at or below 1/8.
    """
    g = as_grade(n)
    lam = params.lambda_damp
    c3 = g.ratio_bound * m * d * math.sqrt(d)
    c4 = sum(math.exp(abs(j) / g.n) if not g.is_infinite else 1.0
             for j in range(-params.p + 1, params.p))
    sda = d_q if sup_dist_alpha is None else sup_dist_alpha
    left = {
        "lambda^q*2*c1*c3": lam ** params.q * 2 * c1 * c3,
        "(1-lambda)*c1*c3": (1 - lam) * c1 * c3,
        "c2*d(q)*c3": c2 * d_q * c3 if c2 else 0.0,
    }
    right = {
        "lambda^p*2*c1*c3+lambda^p*2*m": lam ** params.p * 2 * (c1 * c3 + m),
        "(1-lambda)*c1*c3": (1 - lam) * c1 * c3,
        "c2*sup|z-y|^alpha*c3": c2 * sda * c3 if c2 else 0.0,
        "c4(p)*e(p)": c4 * e_p,
    }
    return {"left": left, "right": right, "c3": c3, "c4(p)": c4}


def approximate_inverse(pesin_inverses, pseudo, params, grade=INFINITY, *, model, m=None,
                        guard=None):
    """Damped approximate inverse ``Theta_{i,j} = lambda^{|j-i|} Ups^{(i)}_{0,j-i}``.

    The left defect ``Theta Gamma_y - I`` is measured on rows at least ``guard``
    sites away from the window edges (the rectangular ``Gamma_y`` has a kernel
    that no left inverse can see past); the right defect ``Gamma_y Theta - I``
    on all rows.  Both are measured with :func:`induced_norm_estimate`.

    Raises
    ------
    PseudoOrbitTooFarError
        If a measured defect exceeds 1/2.  ``violated_terms`` names the
        a-priori budget terms above 1/8.
    """
    if not isinstance(pseudo, OrbitWindow):
        raise ValidationError("pseudo must be an OrbitWindow")
    grade = as_grade(grade)
    missing = [int(k) for k in pseudo.indices if int(k) not in pesin_inverses]
    if missing:
        raise ValidationError(f"no inverse assigned to sites {missing[:5]}")
    gamma = assemble_gamma(model, pseudo)
    L, d = gamma.length, gamma.d
    blocks = np.zeros((L, L - 1, d, d))
    lam = params.lambda_damp
    cols = np.arange(gamma.k_min + 1, gamma.k_max + 1)
    for r, i in enumerate(pseudo.indices):
        U = pesin_inverses[int(i)].rep
        s = cols - i
        ok = (s >= U.col_min) & (s <= U.col_max)
        blk = U.blocks[0 - U.row_min, s[ok] - U.col_min]
        blocks[r, np.nonzero(ok)[0]] = (lam ** np.abs(s[ok]))[:, None, None] * blk
    theta = MatrixRep(gamma.k_min, gamma.k_min + 1, blocks)

    d_q, e_p = params.d_q, params.e_p
    if d_q is None or e_p is None:
        mq, mp = measure_closeness(model, pseudo, pesin_inverses, params.p, params.q)
        d_q = mq if d_q is None else d_q
        e_p = mp if e_p is None else e_p
    if m is None:
        m = max(math.ceil(norm_upper(v.rep, grade) - 1e-12) for v in pesin_inverses.values())
    budget = budget_terms(model.c1, model.c2, m, grade, d, params, d_q, e_p)

    if guard is None:
        lam_dec = max(v.lambda_decay for v in pesin_inverses.values())
        guard = int(math.ceil(math.log(1e-12) / math.log(lam_dec))) if lam_dec < 1 else L // 4
    guard = min(guard, (L - 1) // 2)
    G = gamma.rep
    left = (theta @ G).minus_identity()
    left_in = left.restrict(rows=(gamma.k_min + guard, gamma.k_max - guard))
    right = (G @ theta).minus_identity()
    left_norm = induced_norm_estimate(left_in, grade)
    right_norm = induced_norm_estimate(right, grade)
    report = {"left_defect": left_norm, "right_defect": right_norm, "guard": guard,
              "left_defect_upper": norm_upper(left_in, grade),
              "right_defect_upper": norm_upper(right, grade),
              "d_q": d_q, "e_p": e_p, "m": m, "budget": budget}
    if left_norm > 0.5 or right_norm > 0.5:
        over = [k for side in ("left", "right") for k, v in budget[side].items() if v > 0.125]
        raise PseudoOrbitTooFarError(
            f"approximate inverse defect exceeds 1/2 (left {left_norm:.3g}, right {right_norm:.3g})",
            violated_terms=sorted(set(over)) or ["measured defect"], left_defect=left_norm,
            right_defect=right_norm)
    return theta, report


def neumann_invert(theta_tilde, gamma, grade=INFINITY, m=None, n_pesin=None, tol=1e-14,
                   max_terms=64):
    """Exact right inverse ``Theta = Theta~ sum_k (I - Gamma Theta~)^k``.

    Raises
    ------
    PreconditionError
        If the measured defect exceeds 1/2 or the series stops contracting.
    """
    grade = as_grade(grade)
    theta_tilde = as_rep(theta_tilde)
    E = (gamma.rep @ theta_tilde).minus_identity()
    E = MatrixRep(E.row_min, E.col_min, -E.blocks)
    defect = induced_norm_estimate(E, grade)
    if defect > 0.5:
        raise PreconditionError(f"defect {defect:.3g} exceeds 1/2; Neumann series not certified",
                                defect=defect)
    S = theta_tilde.blocks.copy()
    term = theta_tilde
    terms = 1
    prev = math.inf
    while terms < max_terms:
        term = term @ E
        size = norm_upper(term, grade)
        if size < tol:
            break
        if size > prev * (1 + 1e-9) and size > 1e-8:
            raise PreconditionError("Neumann series is not contracting", term=terms, size=size)
        prev = size
        S += term.blocks
        terms += 1
    theta = MatrixRep(theta_tilde.row_min, theta_tilde.col_min, S)
    measured = induced_norm_estimate(theta, grade)
    tilde_bound = norm_upper(theta_tilde, grade)
    info = {"terms": terms, "defect": defect, "measured_norm": measured,
            "theta_tilde_bound": tilde_bound,
            "inflation_ok": bool(measured <= 2 * tilde_bound + 1e-12)}
    uniform = math.inf
    if m is not None and n_pesin is not None:
        d = gamma.d
        uniform = 4 * m * d ** 3 / (1 - math.exp(-1.0 / n_pesin))
        info["pesin_uniform_bound"] = uniform
        info["lemma_uniform_bound"] = graded_to_uniform_bound(2 * m * d * math.sqrt(d), n_pesin, d)
    a = float(np.linalg.norm(gamma.sub, 2, axis=(1, 2)).max())
    b = max(norm_upper(theta, grade), 1e-300)
    try:
        c_dec, lam_dec = decay_certificate(theta, a, b, grade=grade)
    except CertificateError:
        c_dec, lam_dec = math.inf, 1.0
        info["certificate"] = "failed"
    return InverseOperator(theta, c_dec, lam_dec, grade, grade,
                           uniform if m is not None else 2 * tilde_bound,
                           "pesin_uniform_bound" if m is not None else "neumann_doubling_bound",
                           info)
