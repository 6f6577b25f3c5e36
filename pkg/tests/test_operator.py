import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypershadow.dynamics import IdentityMap, SlowedCatMap, evolve
from hypershadow.errors import DimensionError, ValidationError
from hypershadow.operator import (MatrixRep, apply_gamma, assemble_gamma, conjugate_rep,
                                  induced_norm_estimate, norm_lower, norm_upper, shift_conjugate,
                                  spectral_norms)
from hypershadow.seqspace import INFINITY, TangentSequence, weighted_norm

SLOW = SlowedCatMap(r=0.25, kappa=0.5)
near_ball = st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)).map(lambda t: np.array(t) % 1.0)
grades = st.one_of(st.integers(1, 30), st.just(INFINITY))


@st.composite
def reps(draw, d=2):
    R = draw(st.integers(1, 5))
    C = draw(st.integers(1, 5))
    blocks = draw(arrays(float, (R, C, d, d), elements=st.floats(-10, 10)))
    return MatrixRep(draw(st.integers(-5, 5)), draw(st.integers(-5, 5)), blocks)


def test_gamma_structure_oracle(cat):
    g = assemble_gamma(cat, evolve(cat, [0.1, 0.2], -2, 2))
    assert g.input_window == (-2, 2) and g.output_window == (-1, 2)
    dense = g.to_dense()
    assert dense.shape == (8, 10)
    # row block k: [... -Df(y_{k-1})  I ...]
    np.testing.assert_array_equal(dense[:2, :4], np.hstack([-cat.A, np.eye(2)]))


def test_identity_singular_values_oracle():
    # difference operator (xi_k - xi_{k-1}): singular values 2 sin(j pi / (2L))
    L = 17
    g = assemble_gamma(IdentityMap(1), evolve(IdentityMap(1), [0.3], 0, L - 1))
    sv = np.sort(np.linalg.svd(g.to_dense(), compute_uv=False))
    expected = 2 * np.sin(np.arange(1, L) * np.pi / (2 * L))
    np.testing.assert_allclose(sv, expected, atol=1e-12)


def test_spectral_norms_closed_form():
    b = np.random.default_rng(0).standard_normal((200, 2, 2))
    np.testing.assert_allclose(spectral_norms(b), np.linalg.norm(b, 2, axis=(1, 2)))


def test_cat_gamma_norms(cat):
    g = assemble_gamma(cat, evolve(cat, [0.1, 0.2], -8, 8))
    # rows [-A I]: sup-norm of the block row
    assert norm_upper(g.rep, INFINITY) == pytest.approx(1 + (3 + math.sqrt(5)) / 2)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(near_ball, st.integers(2, 6))
def test_kernel_is_tangent_orbits(x, half):
    orbit = evolve(SLOW, x, -half, half)
    g = assemble_gamma(SLOW, orbit)
    v = np.zeros((orbit.length, 2))
    v[0] = [0.6, -0.8]
    for k in range(1, orbit.length):
        v[k] = g.sub[k - 1] @ v[k - 1]
    out = apply_gamma(g, TangentSequence(-half, v))
    assert np.max(np.abs(out.vectors)) <= 1e-12 * max(1.0, np.max(np.abs(v)))
    s = np.linalg.svd(g.to_dense(), compute_uv=False)
    # full row rank: the kernel is exactly d-dimensional
    assert s.size == (orbit.length - 1) * 2 and s.min() > 1e-8


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(near_ball, st.integers(-5, 5))
def test_shift_conjugation_of_gamma(x, j):
    g = assemble_gamma(SLOW, evolve(SLOW, x, -4, 4))
    y = evolve(SLOW, x, j, j).points[0]
    g2 = assemble_gamma(SLOW, evolve(SLOW, y, -4 - j, 4 - j))
    c = shift_conjugate(g, j)
    assert c.k_min == g2.k_min
    np.testing.assert_allclose(c.sub, g2.sub, atol=1e-9)
    rep = conjugate_rep(g.rep, j)
    assert (rep.row_min, rep.col_min) == (g2.rep.row_min, g2.rep.col_min)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(reps(), grades)
def test_norm_sandwich(rep, grade):
    lo, est, hi = norm_lower(rep, grade), induced_norm_estimate(rep, grade), norm_upper(rep, grade)
    assert lo <= est * (1 + 1e-9) + 1e-300
    assert est <= hi * (1 + 1e-9) + 1e-300


@settings(max_examples=300, deadline=None, derandomize=True)
@given(reps(), grades)
def test_induced_estimate_matches_brute_force(rep, grade):
    t = np.linspace(0, np.pi, 4001)
    U = np.stack([np.cos(t), np.sin(t)], 1)
    w_out = grade.weights(rep.row_indices) if hasattr(grade, "weights") else \
        np.exp(-np.abs(rep.row_indices) / grade)
    w_in = grade.weights(rep.col_indices) if hasattr(grade, "weights") else \
        np.exp(-np.abs(rep.col_indices) / grade)
    B = rep.blocks / w_in[None, :, None, None]
    F = np.linalg.norm(np.einsum("ijab,na->injb", B, U), axis=3).sum(2).max(1)
    brute = float(np.max(w_out * F))
    assert induced_norm_estimate(rep, grade) >= brute * (1 - 1e-6) - 1e-300


@settings(max_examples=300, deadline=None, derandomize=True)
@given(reps(d=1), st.integers(1, 10))
def test_induced_exact_for_scalars(rep, n):
    w_out = np.exp(-np.abs(rep.row_indices) / n)
    w_in = np.exp(-np.abs(rep.col_indices) / n)
    exact = np.max(w_out * (np.abs(rep.blocks[:, :, 0, 0]) / w_in).sum(1))
    assert induced_norm_estimate(rep, n) == pytest.approx(exact, rel=1e-12, abs=1e-300)
    assert norm_upper(rep, n) == pytest.approx(exact, rel=1e-12, abs=1e-300)


@settings(max_examples=300, deadline=None, derandomize=True)
@given(reps(), st.integers(1, 10))
def test_upper_bounds_action(rep, n):
    rng = np.random.default_rng(0)
    seq = TangentSequence(rep.col_min, rng.standard_normal((rep.n_cols, 2)))
    lhs = weighted_norm(rep.apply(seq), n)
    assert lhs <= norm_upper(rep, n) * weighted_norm(seq, n) * (1 + 1e-9) + 1e-12


@settings(max_examples=200, deadline=None, derandomize=True)
@given(reps())
def test_rep_roundtrips(rep):
    back = MatrixRep.from_json(rep.to_json())
    assert np.allclose(back.to_dense(), rep.to_dense(), atol=1e-15)
    assert np.array_equal(MatrixRep.from_dense(rep.row_min, rep.col_min, rep.to_dense(), 2).blocks,
                          rep.blocks)


def test_matmul_and_windows():
    a = MatrixRep(0, 0, np.random.default_rng(1).standard_normal((3, 4, 2, 2)))
    b = MatrixRep(0, 0, np.random.default_rng(2).standard_normal((4, 2, 2, 2)))
    np.testing.assert_allclose((a @ b).to_dense(), a.to_dense() @ b.to_dense())
    with pytest.raises((DimensionError, ValidationError)):
        b @ a
    assert np.array_equal(a.block(10, 0), np.zeros((2, 2)))
