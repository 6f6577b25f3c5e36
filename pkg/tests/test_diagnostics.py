import json
import math

import numpy as np
import pytest

from hypershadow.diagnostics import (HyperbolicityReport, Thresholds, grade_pesin_sets,
                                     lyapunov_exponents, lyapunov_with_check, mather_test,
                                     nonuniform_proxy, proxy_verdict)
from hypershadow.dynamics import CatMap, IdentityMap, StandardMap, make_rng
from hypershadow.errors import PreconditionError, ValidationError
from hypershadow.seqspace import INFINITY

from conftest import LAMBDA_U


def test_proxy_verdict_rules():
    assert proxy_verdict([(16, 1.0), (32, 1.1), (64, 1.2)], True)[0] == "uniform-like"
    assert proxy_verdict([(16, 1.0), (32, 2.0), (64, 3.0)], True)[0] == "inconclusive"
    assert proxy_verdict([(16, 1.0), (32, 5.0), (64, 10.0)], True)[0] == "degenerate"
    assert proxy_verdict([(16, 1.0), (32, 1.0), (64, 1.0)], False)[0] == "degenerate"


def test_lyapunov_cat_oracle(cat):
    exps = lyapunov_exponents(cat, np.array([0.1, 0.2]), 10_000)
    np.testing.assert_allclose(exps, [math.log(LAMBDA_U), -math.log(LAMBDA_U)], atol=1e-3)


def test_lyapunov_standard_sum_zero():
    rep = lyapunov_with_check(StandardMap(2.0), np.array([0.3, 0.1]), 10_000)
    assert abs(rep["sum"]) <= 1e-6
    with pytest.raises(ValidationError):
        lyapunov_with_check(StandardMap(2.0), np.array([0.3, 0.1]), 10)


def test_mather_cat_uniform(cat):
    pts = make_rng(0).random((10, 2))
    rep = mather_test(cat, pts, INFINITY)
    assert rep.verdict == "uniform-like"
    assert rep.params["max_spread"] < 0.05
    json.loads(rep.to_json())
    assert rep.to_csv().count("\n") == 1 + 10 * 3


def test_mather_identity_degenerate():
    rep = mather_test(IdentityMap(), [[0.1, 0.2], [0.5, 0.5]], INFINITY)
    assert rep.verdict == "degenerate"
    for r in rep.records:
        assert r["growth"] >= 3.5  # proxy ~ K/pi: linear in K


def test_mather_workers_deterministic(cat):
    pts = make_rng(1).random((6, 2))
    a = mather_test(cat, pts, workers=1).to_json()
    b = mather_test(cat, pts, workers=3).to_json()
    assert a == b


def test_nonuniform_proxy(cat):
    rep = nonuniform_proxy(cat, n=4, m=2, samples=20, seed=3)
    assert rep.verdict == "nonuniform-like"
    assert rep.params["fraction_finite"] == 1.0
    assert rep.params["strictly_nonuniform"] is False
    with pytest.raises(PreconditionError):
        nonuniform_proxy(cat, n=2, m=2)


def test_nonuniform_proxy_identity_not_hyperbolic():
    rep = nonuniform_proxy(IdentityMap(), samples=5, seed=0)
    assert rep.verdict == "inconclusive"
    assert rep.verdict_counts() == {"degenerate": 5}


def test_pesin_levels(cat):
    pts = make_rng(2).random((12, 2))
    grades = grade_pesin_sets(cat, pts, m_levels=(1, 2, 3), K=16)
    by = {g.level: g for g in grades}
    # the cat-map inverse has sup-norm sqrt(5): level 3
    assert by[1].members == [] and by[2].members == []
    assert by[3].members == list(range(12))
    r = by[3].refinement
    assert all(set(r[a]) <= set(r[b]) for a, b in zip(sorted(r), sorted(r)[1:]))
