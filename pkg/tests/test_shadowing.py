import json
import math

import numpy as np
import pytest

from hypershadow.dynamics import CatMap, SlowedCatMap, pseudo_orbit, torus_diff
from hypershadow.errors import PreconditionError, RadiusViolationError, ValidationError
from hypershadow.inverse import splitting_inverse
from hypershadow.operator import MatrixRep, assemble_gamma
from hypershadow.shadowing import (ShadowingConfig, ShadowTable, radius_cap, refine,
                                   shadowing_constants, verify_shadowing)
from hypershadow.splitting import compute_splitting


def _setup(model, x0, beta, seed, k_min=-100, k_max=99):
    ps = pseudo_orbit(model, x0, k_min, k_max, beta, seed)
    inv = splitting_inverse(assemble_gamma(model, ps), compute_splitting(model, ps))
    return ps, inv


def test_constants_oracle(cat):
    cfg = shadowing_constants(cat, 3, 4, 1e-3)
    assert cfg.K == pytest.approx(433.998, abs=1e-3)
    assert cfg.beta == pytest.approx(1.15208e-6, rel=1e-4)
    assert cfg.rho == pytest.approx(1e-3)


def test_radius_cap_oracle():
    assert radius_cap(0.0, 1.0, 0.5, 10.0) == math.inf
    assert radius_cap(2.0, 1.0, 0.5, 10.0) == pytest.approx(0.025)


def test_config_preconditions():
    with pytest.raises(PreconditionError) as e:
        ShadowingConfig(0.5, 10.0, 1e-6, 1e-6)
    assert e.value.details["condition"] == "beta_radius_condition"
    with pytest.raises(PreconditionError) as e:
        ShadowingConfig(0.5, 10.0, 1.0, 1e-6, c2=1.0)
    assert e.value.details["condition"] == "derivative_closeness_condition"
    with pytest.raises(ValidationError):
        ShadowingConfig(1.5, 10.0, 1.0, 1e-6)


def test_cat_single_iteration(cat):
    beta = 1e-6
    ps, inv = _setup(cat, [0.3, 0.7], beta, 3, 0, 199)
    cfg = ShadowingConfig.from_inverse(inv, beta, model=cat)
    res = refine(cat, ps, inv, cfg)
    assert res.iterations == 1 and res.defect_history[-1] <= 1e-12
    assert res.shadow_distance <= math.sqrt(5) * beta * 1.05
    ok, rep = verify_shadowing(cat, res.orbit, ps, cfg.rho)
    assert ok and rep["orbit_defect"] <= 1e-10
    json.loads(res.to_json())


def test_modes_agree_on_interior(cat):
    ps, inv = _setup(cat, [0.3, 0.7], 1e-6, 4, 0, 119)
    cfg = ShadowingConfig.from_inverse(inv, 1e-6, model=cat)
    a = refine(cat, ps, inv, cfg)
    b = refine(cat, ps, None, cfg, mode="solve-each-step")
    g = a.guard
    assert np.abs(torus_diff(a.orbit.points[g:-g], b.orbit.points[g:-g])).max() <= 1e-12


def test_slowed_map_converges():
    f = SlowedCatMap(r=0.25, kappa=0.5)
    ps, inv = _setup(f, [0.01, 0.02], 1e-7, 4)
    cfg = ShadowingConfig.from_inverse(inv, 1e-7, model=f)
    res = refine(f, ps, inv, cfg)
    assert res.iterations <= 8 and res.kappa_measured <= 0.55
    assert verify_shadowing(f, res.orbit, ps, cfg.rho)[0]


def test_refine_rejects_large_defect(cat):
    ps, inv = _setup(cat, [0.3, 0.7], 1e-5, 1, 0, 59)
    cfg = ShadowingConfig.from_inverse(inv, 1e-6, model=cat)
    with pytest.raises(PreconditionError):
        refine(cat, ps, inv, cfg)


def test_radius_violation(cat):
    # an inflated right inverse without a recorded bound overshoots the ball
    ps, inv = _setup(cat, [0.3, 0.7], 1e-6, 1, 0, 59)
    bad = MatrixRep(inv.rep.row_min, inv.rep.col_min, 1e3 * inv.rep.blocks)
    cfg = ShadowingConfig.from_inverse(inv, 1e-6, model=cat)
    with pytest.raises(RadiusViolationError):
        refine(cat, ps, bad, cfg)


def test_shadow_table_roundtrip():
    t = ShadowTable()
    t.record(3, 2, 1e-3, 1e-6, 2e-3)
    t.record(1, 1, 1e-2, 1e-5)
    rows = json.loads(t.to_json())
    assert [r["m"] for r in rows] == [1, 3]
    assert t.to_csv().splitlines()[0] == "m,r,delta,beta,rho"
