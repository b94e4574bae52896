import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advmel.errors import DomainError, NumericError
from advmel.tensor import (
    clamp_unit_box,
    cosine_similarity,
    finite_difference_gradient,
    l2_norm,
    project_linf,
    softmax_cross_entropy,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
EPS8 = 8 / 255


@pytest.mark.parametrize(
    "a, b, expected",
    [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0), ([1, 0], [2, 0], 1.0)],
)
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(np.array(a, float), np.array(b, float)) == expected


def test_cosine_zero_norm():
    with pytest.raises(DomainError):
        cosine_similarity(np.zeros(3), np.ones(3))


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_cosine_scale_and_symmetry(a, s):
    if l2_norm(a) < 1e-6:
        return
    b = np.roll(a, 1) + 0.5
    assert cosine_similarity(a, s * a) == pytest.approx(1.0, abs=1e-12)
    if l2_norm(b) > 0:
        assert cosine_similarity(a, b) == cosine_similarity(b, a)
        assert -1 - 1e-12 <= cosine_similarity(a, b) <= 1 + 1e-12


def test_cross_entropy_examples():
    loss, grad = softmax_cross_entropy(np.array([0.0, 0.0]), 0)
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_array_equal(grad, [-0.5, 0.5])
    # -log(sigmoid(10)) = log(1 + e^-10)
    loss, _ = softmax_cross_entropy(np.array([10.0, 0.0]), 0)
    assert loss == pytest.approx(math.log1p(math.exp(-10.0)), rel=1e-12)
    assert loss == pytest.approx(4.54e-5, rel=1e-3)


def test_cross_entropy_bad_label():
    with pytest.raises(IndexError):
        softmax_cross_entropy(np.zeros(3), 3)


def test_cross_entropy_stable_for_large_logits():
    loss, grad = softmax_cross_entropy(np.array([1000.0, -1000.0, 0.0]), 1)
    assert np.isfinite(loss) and loss == pytest.approx(2000.0)
    assert np.all(np.isfinite(grad))


@given(arrays(np.float64, st.integers(2, 10), elements=finite), st.data())
def test_cross_entropy_properties(logits, data):
    y = data.draw(st.integers(0, len(logits) - 1))
    loss, grad = softmax_cross_entropy(logits, y)
    assert loss >= 0.0
    assert abs(grad.sum()) < 1e-12


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        z = rng.normal(scale=3.0, size=n)
        y = int(rng.integers(n))
        _, analytic = softmax_cross_entropy(z, y)
        numeric = finite_difference_gradient(lambda v: softmax_cross_entropy(v, y)[0], z, 1e-5)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1e-12)


def test_cross_entropy_through_dot_products_matches_finite_differences():
    rng = np.random.default_rng(8)
    W = rng.normal(size=(5, 8))
    x = rng.normal(size=8)
    y = 2
    _, g = softmax_cross_entropy(W @ x, y)
    analytic = W.T @ g
    numeric = finite_difference_gradient(lambda v: softmax_cross_entropy(W @ v, y)[0], x, 1e-5)
    assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(numeric)


@pytest.mark.parametrize(
    "delta, expected",
    [([0.1], [EPS8]), ([-0.5, 0.01], [-EPS8, 0.01]), ([0.0, 0.0], [0.0, 0.0])],
)
def test_project_linf_examples(delta, expected):
    np.testing.assert_array_equal(project_linf(np.array(delta), EPS8), expected)


@given(arrays(np.float64, (3, 4), elements=finite), st.floats(1e-4, 1.0))
def test_project_linf_idempotent_and_bounded(delta, eps):
    p = project_linf(delta, eps)
    assert np.max(np.abs(p)) <= eps
    np.testing.assert_array_equal(project_linf(p, eps), p)


@pytest.mark.parametrize("x, expected", [([1.2], [1.0]), ([-0.3], [0.0]), ([0.5], [0.5])])
def test_clamp_examples(x, expected):
    np.testing.assert_array_equal(clamp_unit_box(np.array(x)), expected)


@given(arrays(np.float64, 7, elements=finite))
def test_clamp_idempotent(x):
    c = clamp_unit_box(x)
    assert c.min() >= 0 and c.max() <= 1
    np.testing.assert_array_equal(clamp_unit_box(c), c)


@pytest.mark.parametrize("t, expected", [([3, 4], 5.0), ([0, 0, 0], 0.0), ([1, 1, 1, 1], 2.0)])
def test_l2_norm(t, expected):
    assert l2_norm(np.array(t, float)) == expected


def test_finite_difference_examples():
    g = finite_difference_gradient(lambda v: float(v[0] ** 2), np.array([3.0]), 1e-4)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    g = finite_difference_gradient(lambda v: 7.0, np.ones(4), 1e-4)
    np.testing.assert_array_equal(g, np.zeros(4))


def test_finite_difference_rejects_non_finite():
    with pytest.raises(NumericError):
        finite_difference_gradient(lambda v: float("nan"), np.ones(2))
