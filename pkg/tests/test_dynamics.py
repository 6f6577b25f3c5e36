import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypershadow.dynamics import (CatMap, IdentityMap, OrbitWindow, SlowedCatMap, StandardMap,
                                  UserMap, check_model, cocycle, defect, evolve, make_rng,
                                  model_from_config, pseudo_orbit, reduce, torus_diff,
                                  torus_distance)
from hypershadow.errors import ValidationError

unit = st.floats(0, 1, exclude_max=True, allow_nan=False)
points = st.tuples(unit, unit).map(np.array)


def test_torus_diff_oracle():
    assert torus_diff(np.array([0.95, 0.1]), np.array([0.05, 0.9])) == pytest.approx([-0.1, 0.2])
    assert torus_distance([0.0, 0.0], [0.5, 0.0]) == pytest.approx(0.5)
    assert reduce(np.array([-0.25, 1.5])).tolist() == [0.75, 0.5]


def test_cat_map_oracle(cat):
    assert cat.f(np.array([0.5, 0.25])) == pytest.approx([0.25, 0.75])
    np.testing.assert_array_equal(cat.Df(np.zeros(2)), [[2, 1], [1, 1]])
    assert cat.c1 == pytest.approx((3 + math.sqrt(5)) / 2)


def test_non_unimodular_rejected():
    with pytest.raises(ValidationError):
        CatMap([[2, 0], [0, 1]])
    with pytest.raises(ValidationError):
        CatMap([[1, 1], [0, 1]])


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(points)
def test_slowed_map_roundtrip_and_coincidence(x):
    f = SlowedCatMap(r=0.25, kappa=0.3)
    assert torus_distance(f.f(f.f_inv(x)), x) < 1e-12
    assert torus_distance(f.f_inv(f.f(x)), x) < 1e-12
    if not f.in_slowdown(x):
        assert torus_distance(f.f(x), CatMap().f(x)) < 1e-14


@settings(max_examples=300, deadline=None, derandomize=True)
@given(points, st.sampled_from(["smooth", "cubic"]))
def test_slowed_derivative_matches_finite_difference(x, profile):
    f = SlowedCatMap(r=0.3, kappa=0.4, profile=profile)
    h = 1e-6
    s = np.linalg.norm(torus_diff(x, 0.0))
    if abs(s - f.r) < 1e-4:
        return  # the cubic profile is not differentiable across the sphere
    fd = np.column_stack([torus_diff(f.f(x + h * e), f.f(x - h * e)) / (2 * h)
                          for e in np.eye(2)])
    assert np.allclose(fd, f.Df(x), atol=1e-5)


def test_slowed_fixed_point_derivative():
    f = SlowedCatMap(r=0.25, kappa=0.5)
    np.testing.assert_allclose(f.Df(np.zeros(2)), 0.5 * np.array([[2, 1], [1, 1]]))
    assert f.c1 >= max(np.linalg.norm(f.Df(p), 2) for p in make_rng(0).random((500, 2)) * 0.5)


def test_slowed_kappa_one_is_cat():
    f = SlowedCatMap(r=0.25, kappa=1.0)
    for x in make_rng(1).random((50, 2)):
        assert torus_distance(f.f(x), CatMap().f(x)) < 1e-14


def test_standard_map_area_preserving():
    f = StandardMap(1.3)
    for x in make_rng(2).random((100, 2)):
        assert np.linalg.det(f.Df(x)) == pytest.approx(1.0)
        assert torus_distance(f.f_inv(f.f(x)), x) < 1e-12


def test_check_model_within_constants():
    rep = check_model(SlowedCatMap(), samples=300)
    assert rep["max_Df"] <= rep["c1"] + 1e-12
    assert rep["max_holder_quotient"] <= rep["c2"]
    assert rep["max_roundtrip"] < 1e-12


def test_user_map_sampled_constants():
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    m = UserMap(lambda x: A @ x, lambda x: np.linalg.solve(A, x), lambda x: A, 2, pairs=200)
    assert m.constants_source == "sampled"
    assert m.c1 == pytest.approx(np.linalg.norm(A, 2)) and m.c2 == 0.0


def test_model_from_config():
    assert isinstance(model_from_config({"type": "cat"}), CatMap)
    assert model_from_config({"type": "slowed_cat", "r": 0.1}).r == 0.1
    assert isinstance(model_from_config({"type": "identity"}), IdentityMap)
    with pytest.raises(ValidationError):
        model_from_config({"type": "bogus"})


def test_evolve_is_true_orbit(cat):
    o = evolve(cat, [0.3, 0.7], -10, 10)
    assert o.is_true_orbit(1e-12) and o.length == 21
    np.testing.assert_allclose(o[0], [0.3, 0.7])
    assert cocycle(cat, o).shape == (21, 2, 2)


@settings(max_examples=200, deadline=None, derandomize=True)
@given(points, st.floats(1e-9, 1e-3), st.integers(0, 2 ** 32 - 1))
def test_pseudo_orbit_defect_at_most_beta(x, beta, seed):
    p = pseudo_orbit(CatMap(), x, -5, 5, beta, seed)
    assert p.beta <= beta
    assert p.beta == defect(CatMap(), p.points)


def test_pseudo_orbit_deterministic():
    a = pseudo_orbit(CatMap(), [0.2, 0.3], -20, 20, 1e-6, 7)
    b = pseudo_orbit(CatMap(), [0.2, 0.3], -20, 20, 1e-6, 7)
    assert np.array_equal(a.points, b.points)


def test_orbit_csv_roundtrip(cat):
    o = pseudo_orbit(cat, [0.2, 0.3], -3, 4, 1e-6, 1)
    back = OrbitWindow.from_csv(cat, o.to_csv())
    assert back.k_min == -3 and np.array_equal(back.points, o.points) and back.beta == o.beta
    with pytest.raises(ValidationError):
        OrbitWindow.from_csv(cat, "k,x_1,x_2\n0,0.1,0.2\n2,0.3,0.4\n")
