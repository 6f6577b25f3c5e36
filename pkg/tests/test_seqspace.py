import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypershadow.errors import DimensionError, ValidationError
from hypershadow.seqspace import (INFINITY, GradeParam, TangentSequence, WeightSequence,
                                  as_grade, shift, validate_weights, weighted_norm)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def sequences(draw, max_len=12, d=2):
    L = draw(st.integers(1, max_len))
    k_min = draw(st.integers(-20, 20))
    v = draw(arrays(float, (L, d), elements=finite))
    return TangentSequence(k_min, v)


def test_weights_oracle():
    g = GradeParam(2)
    assert np.allclose(g.weights([-2, 0, 4]), [math.exp(-1), 1.0, math.exp(-2)])
    assert INFINITY.weights([5, -7]).tolist() == [1.0, 1.0]
    assert g.ratio_bound == pytest.approx(math.exp(0.5))


def test_delta_norm_oracle():
    e = TangentSequence.delta(-3, 7, 2, [3.0, 4.0])
    assert weighted_norm(e, INFINITY) == 5.0
    assert weighted_norm(e, 2) == pytest.approx(5 * math.exp(-1))


@pytest.mark.parametrize("bad", [0, 0.5, 1.5, float("nan")])
def test_grade_rejects(bad):
    with pytest.raises(ValidationError):
        GradeParam(bad)


def test_as_grade_and_json():
    assert as_grade("inf") is INFINITY and as_grade(None) is INFINITY
    assert as_grade(3).to_json() == 3
    assert INFINITY.to_json() == "inf"
    assert str(GradeParam(4)) == "4"


def test_shape_errors():
    with pytest.raises(DimensionError):
        TangentSequence(0, np.zeros((0, 2)))
    with pytest.raises(ValidationError):
        TangentSequence(0, [[np.inf, 0.0]])
    s = TangentSequence.zeros(0, 3, 2)
    with pytest.raises(DimensionError):
        s + TangentSequence.zeros(1, 3, 2)
    with pytest.raises(IndexError):
        s[5]


def test_weight_sequence_validation():
    w = WeightSequence(-1, [0.5, 1.0, 0.5], ratio_bound=2.0)
    assert w.at([0]).tolist() == [1.0]
    with pytest.raises(ValidationError):
        validate_weights([1.0, -1.0])
    with pytest.raises(ValidationError):
        WeightSequence(0, [1.0, 0.01], ratio_bound=2.0)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(sequences(), st.integers(1, 50), st.integers(1, 50))
def test_norm_grading_chain(seq, n1, n2):
    lo, hi = sorted((n1, n2))
    a, b, c = weighted_norm(seq, lo), weighted_norm(seq, hi), weighted_norm(seq, INFINITY)
    assert a <= b * (1 + 1e-12) + 1e-300
    assert b <= c * (1 + 1e-12) + 1e-300


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(sequences(), st.integers(-15, 15), st.integers(1, 20))
def test_shift_norm_bound(seq, j, n):
    # |S^j eta|_n <= exp(|j|/n) |eta|_n
    lhs = weighted_norm(shift(seq, j), n)
    assert lhs <= math.exp(abs(j) / n) * weighted_norm(seq, n) * (1 + 1e-12) + 1e-300
    assert weighted_norm(shift(seq, j), INFINITY) == weighted_norm(seq, INFINITY)


@settings(max_examples=200, deadline=None, derandomize=True)
@given(sequences())
def test_serialization_roundtrip(seq):
    assert TangentSequence.from_csv(seq.to_csv()).allclose(seq, atol=0)
    back = TangentSequence.from_json(seq.to_json())
    assert back.k_min == seq.k_min and np.array_equal(back.vectors, seq.vectors)
    json.loads(seq.to_json())


def test_restrict_and_arithmetic():
    s = TangentSequence(-2, np.arange(10.0).reshape(5, 2))
    r = s.restrict(-1, 1)
    assert r.k_min == -1 and r[0].tolist() == [4.0, 5.0]
    assert ((s + s) - s).allclose(s)
    assert (2 * s)[2].tolist() == [16.0, 18.0]
