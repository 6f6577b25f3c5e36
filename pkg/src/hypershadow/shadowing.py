"""Refining pseudo-orbits into true orbits with the contraction ``Phi_y``.

For a pseudo-orbit ``y`` and offsets ``xi`` set
``A_y(xi)_k = f(y_{k-1} + xi_{k-1}) - y_k`` and
``Phi_y(xi) = xi + Gamma_y^{-1}(A_y(xi) - xi)``.  Fixed points of ``A_y`` are
exactly the offsets that turn ``y`` into a true orbit, and ``Phi_y`` is a
contraction on a small ball when ``Df`` is close to constant there.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import OrbitWindow, defect, reduce, torus_diff, torus_distance
from .errors import (ContractionViolatedError, PreconditionError, RadiusViolationError,
                     ValidationError)
from .inverse import minimal_norm_solve
from .operator import as_rep, assemble_gamma, norm_upper
from .seqspace import INFINITY, TangentSequence

__all__ = ["ShadowingConfig", "ContractionState", "ShadowResult", "shadowing_constants",
           "refine", "verify_shadowing", "ShadowTable", "radius_cap"]


def radius_cap(c2, alpha, kappa, K):
    """Largest ``rho`` with ``c2 rho^alpha <= kappa / K``."""
    if c2 == 0:
        return math.inf
    return (kappa / (K * c2)) ** (1.0 / alpha)


@dataclass(frozen=True)
class ShadowingConfig:
    """Constants of one shadowing run.

    Invariants checked on construction: ``K beta <= (1 - kappa) rho`` and, when
    ``c2`` is given, ``c2 rho^alpha <= kappa / K``.
    """

    kappa: float
    K: float
    rho: float
    beta: float
    delta: float = None
    max_iter: int = 50
    tol: float = 1e-12
    c2: float = None
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValidationError("kappa must lie in (0, 1)")
        if self.K <= 0 or self.rho <= 0 or self.beta <= 0:
            raise ValidationError("K, rho and beta must be positive")
        if self.K * self.beta > (1 - self.kappa) * self.rho * (1 + 1e-12):
            raise PreconditionError(
                "beta_radius_condition violated: K*beta > (1-kappa)*rho",
                condition="beta_radius_condition", K=self.K, beta=self.beta, rho=self.rho,
                kappa=self.kappa)
        if self.c2 is not None and self.rho > radius_cap(self.c2, self.alpha, self.kappa,
                                                         self.K) * (1 + 1e-12):
            raise PreconditionError(
                "derivative_closeness_condition violated: c2*rho^alpha > kappa/K",
                condition="derivative_closeness_condition", rho=self.rho,
                rho_cap=radius_cap(self.c2, self.alpha, self.kappa, self.K))
        if self.delta is None:
            object.__setattr__(self, "delta", self.beta)

    @classmethod
    def from_inverse(cls, inverse, beta, kappa=0.5, model=None, **kw):
        """Config whose ``K`` is the inverse's recorded bound and ``rho = K beta/(1-kappa)``."""
        K = inverse.bound if math.isfinite(inverse.bound) else norm_upper(inverse.rep, INFINITY)
        c2 = kw.pop("c2", None if model is None else model.c2)
        alpha = kw.pop("alpha", 1.0 if model is None else model.alpha)
        return cls(kappa, K, K * beta / (1 - kappa), beta, c2=c2, alpha=alpha, **kw)

    def to_dict(self):
        return {"kappa": self.kappa, "K": self.K, "rho": self.rho, "beta": self.beta,
                "delta": self.delta, "max_iter": self.max_iter, "tol": self.tol,
                "c2": self.c2, "alpha": self.alpha}


def shadowing_constants(model, m, n, rho_request, kappa=0.5):
    """``K = 4 m d^3/(1 - e^{-1/n})``, ``rho = min(rho_request, (kappa/(K c2))^{1/alpha})``,
    ``beta = (1 - kappa) rho / K``."""
    if m < 1 or n < 1 or math.isinf(n):
        raise ValidationError("need m >= 1 and finite n >= 1")
    d = model.d
    K = 4 * m * d ** 3 / (1 - math.exp(-1.0 / n))
    rho = min(rho_request, radius_cap(model.c2, model.alpha, kappa, K))
    beta = (1 - kappa) * rho / K
    return ShadowingConfig(kappa, K, rho, beta, c2=model.c2, alpha=model.alpha)


@dataclass
class ContractionState:
    offsets: TangentSequence
    defect_history: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    iterations: int = 0


@dataclass
class ShadowResult:
    orbit: OrbitWindow
    offsets: TangentSequence
    shadow_distance: float
    iterations: int
    defect_history: list
    contraction_factors: list
    guard: int
    certified_window: tuple
    mode: str
    beta: float
    rho: float

    @property
    def kappa_measured(self):
        return max(self.contraction_factors) if self.contraction_factors else 0.0

    def certificate(self):
        return {"beta": self.beta, "rho": self.rho, "kappa_measured": self.kappa_measured,
                "iterations": self.iterations, "guard": self.guard,
                "certified_window": list(self.certified_window),
                "shadow_distance": self.shadow_distance, "mode": self.mode,
                "final_defect": self.defect_history[-1] if self.defect_history else 0.0,
                "defect_history": self.defect_history}

    def to_json(self):
        return json.dumps(self.certificate(), sort_keys=True)


def _A_minus_xi(model, pts, xi):
    """``A_y(xi)_k - xi_k`` on the output window ``k = k_min + 1, ..., k_max``."""
    x = reduce(pts + xi)
    fx = np.array([model.f(p) for p in x[:-1]])
    return torus_diff(fx, pts[1:]) - xi[1:]


def _sup(v):
    return float(np.max(np.linalg.norm(v, axis=-1))) if v.size else 0.0


def refine(model, pseudo, inverse, config, mode="precomputed"):
    """Iterate ``Phi_y`` from ``xi = 0`` until ``sup |A_y(xi) - xi| <= config.tol``.

    ``mode="precomputed"`` applies the given right inverse of ``Gamma_y`` at
    every step; ``mode="solve-each-step"`` replaces it with a minimal-norm
    solve (``inverse`` may then be ``None``).

    Raises
    ------
    PreconditionError
        If the pseudo-orbit defect exceeds ``config.beta`` or the inverse bound
        exceeds ``config.K``.
    ContractionViolatedError
        If the defect fails to decrease at some step.
    RadiusViolationError
        If the offsets leave the ball of radius ``config.rho``.
    """
    if mode not in ("precomputed", "solve-each-step"):
        raise ValidationError(f"unknown refine mode {mode!r}")
    if pseudo.beta > config.beta * (1 + 1e-9):
        raise PreconditionError(
            f"pseudo-orbit defect {pseudo.beta:.3g} exceeds beta {config.beta:.3g} "
            "(beta_radius_condition)", condition="beta_radius_condition",
            defect=pseudo.beta, beta=config.beta)
    gamma = assemble_gamma(model, pseudo)
    rep = None
    lam_decay = None
    if mode == "precomputed":
        if inverse is None:
            raise ValidationError("precomputed mode needs an inverse")
        rep = as_rep(inverse)
        if (rep.row_min, rep.n_rows, rep.col_min, rep.n_cols) != \
                (gamma.k_min, gamma.length, gamma.k_min + 1, gamma.length - 1):
            raise ValidationError("inverse windows do not match the pseudo-orbit")
        bound = getattr(inverse, "bound", None)
        if bound is not None and math.isfinite(bound) and bound > config.K * (1 + 1e-9):
            raise PreconditionError(f"inverse bound {bound:.4g} exceeds K = {config.K:.4g}",
                                    bound=bound, K=config.K)
        lam_decay = getattr(inverse, "lambda_decay", None)
        dense = rep.to_dense()
    pts = pseudo.points
    L, d = pseudo.length, pseudo.d
    xi = np.zeros((L, d))
    r = _A_minus_xi(model, pts, xi)
    history = [_sup(r)]
    steps, factors = [], []
    it = 0
    while history[-1] > config.tol and it < config.max_iter:
        if mode == "precomputed":
            dxi = (dense @ r.reshape(-1)).reshape(L, d)
        else:
            dxi = minimal_norm_solve(gamma, TangentSequence(pseudo.k_min + 1, r)).vectors
        xi = xi + dxi
        it += 1
        steps.append(_sup(dxi))
        if len(steps) >= 2 and steps[-2] > 0:
            factors.append(steps[-1] / steps[-2])
        if _sup(xi) > config.rho:
            raise RadiusViolationError(
                f"offsets left the ball of radius {config.rho:.3g} at step {it}",
                step=it, sup_offset=_sup(xi), rho=config.rho)
        r = _A_minus_xi(model, pts, xi)
        history.append(_sup(r))
        if history[-1] > history[-2] and history[-1] > config.tol:
            raise ContractionViolatedError(
                f"defect increased at step {it}", step=it, history=history)
    if history[-1] > config.tol:
        raise ContractionViolatedError(f"no convergence in {config.max_iter} iterations",
                                       step=it, history=history)
    orbit = OrbitWindow.from_points(model, pseudo.k_min, reduce(pts + xi))
    if lam_decay is not None and 0 < lam_decay < 1:
        guard = int(math.ceil(math.log(1e-12) / math.log(lam_decay)))
    else:
        guard = L // 4
    guard = min(guard, (L - 1) // 2)
    return ShadowResult(orbit, TangentSequence(pseudo.k_min, xi), _sup(xi), it, history,
                        factors, guard, (pseudo.k_min + guard, pseudo.k_max - guard), mode,
                        config.beta, config.rho)


def verify_shadowing(model, orbit, pseudo, rho):
    """True iff ``orbit`` is a true orbit (defect <= 1e-10) within ``rho`` of ``pseudo``."""
    if (orbit.k_min, orbit.length) != (pseudo.k_min, pseudo.length):
        raise ValidationError("orbit and pseudo-orbit windows differ")
    dmax = max(torus_distance(a, b) for a, b in zip(orbit.points, pseudo.points))
    beta = defect(model, orbit.points)
    ok = bool(beta <= 1e-10 and dmax <= rho)
    return ok, {"orbit_defect": beta, "max_distance": dmax, "rho": rho, "passed": ok}


class ShadowTable:
    """Per Pesin level pair ``(m, r)``: the ``delta`` and ``beta`` actually used."""

    def __init__(self):
        self.rows = {}

    def record(self, m, r, delta, beta, rho=None):
        self.rows[(int(m), int(r))] = {"m": int(m), "r": int(r), "delta": float(delta),
                                       "beta": float(beta),
                                       "rho": None if rho is None else float(rho)}

    def to_json(self):
        return json.dumps([self.rows[k] for k in sorted(self.rows)], sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "r", "delta", "beta", "rho"])
        for k in sorted(self.rows):
            row = self.rows[k]
            w.writerow([row["m"], row["r"], repr(row["delta"]), repr(row["beta"]),
                        "" if row["rho"] is None else repr(row["rho"])])
        return buf.getvalue()
