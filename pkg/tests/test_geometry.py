import numpy as np
import pytest

from svsoftmax.errors import DegenerateVector, DimensionMismatch
from svsoftmax.geometry import cosine_logits, normalize_backward, normalize_rows


def test_normalize_rows_examples():
    np.testing.assert_allclose(normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)
    np.testing.assert_array_equal(normalize_rows([[1.0, 0.0], [0.0, -2.0]]), [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(DegenerateVector):
        normalize_rows([[0.0, 0.0]])


def test_normalize_rows_floor_is_inclusive():
    with pytest.raises(DegenerateVector):
        normalize_rows([[1e-12, 0.0]])
    normalize_rows([[2e-12, 0.0]])


def test_unit_norm_idempotent_and_scale_invariant():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((50, 7)) * rng.uniform(0.1, 10, size=(50, 1))
    u = normalize_rows(m)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(normalize_rows(u), u, atol=1e-12)
    for c in (1e-3, 0.5, 7.0, 1e5):
        np.testing.assert_allclose(normalize_rows(c * m), u, atol=1e-12)


def test_cosine_logits_examples():
    np.testing.assert_array_equal(cosine_logits([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]), [[1.0, 0.0]])
    np.testing.assert_array_equal(cosine_logits([[1.0, 0.0]], [[-1.0, 0.0]]), [[-1.0]])
    np.testing.assert_allclose(cosine_logits([[0.6, 0.8]], [[0.8, 0.6]]), [[0.96]], atol=1e-15)


def test_cosine_logits_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_logits(np.ones((2, 3)), np.ones((4, 2)))


def test_cosine_logits_bounded_on_normalized_rows():
    rng = np.random.default_rng(1)
    x = normalize_rows(rng.standard_normal((200, 5)))
    raw = x @ x.T
    assert np.max(np.abs(raw)) <= 1 + 1e-9
    c = cosine_logits(x, x)
    assert np.max(np.abs(c)) <= 1.0


def test_normalize_backward_examples():
    np.testing.assert_allclose(normalize_backward([2.0, 0.0], [1.0, 1.0]), [0.0, 0.5], atol=1e-15)
    for c in (-3.0, 0.0, 2.5):
        np.testing.assert_allclose(normalize_backward([1.0, 0.0], [c, 0.0]), [0.0, 0.0], atol=1e-15)
    with pytest.raises(DegenerateVector):
        normalize_backward([0.0, 0.0], [1.0, 1.0])


def test_normalize_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(100):
        d = int(rng.integers(2, 9))
        v = rng.standard_normal(d)
        v *= rng.uniform(0.1, 10) / np.linalg.norm(v)
        g = rng.standard_normal(d)
        fd = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            fd[j] = (normalize_rows(v + e) @ g - normalize_rows(v - e) @ g) / (2 * h)
        an = normalize_backward(v, g)
        rel = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-8)
        assert rel.max() < 1e-6


def test_normalize_backward_is_tangent():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((100, 6)) * 4
    g = rng.standard_normal((100, 6))
    out = normalize_backward(v, g)
    assert np.max(np.abs(np.einsum("ij,ij->i", out, v))) < 1e-10
