import numpy as np
import numpy.testing as npt
import pytest

from mochastream import numeric as nm
from mochastream.oracle import finite_difference_grad

rng = np.random.default_rng(20240811)


def test_matmul_identity():
    x = rng.normal(size=(3, 2))
    npt.assert_array_equal(nm.matmul(np.eye(3), x), x)


def test_matmul_hand_case():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[1.0], [1.0]])
    npt.assert_array_equal(nm.matmul(a, b), [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    x = rng.normal(size=(4, 3))
    npt.assert_array_equal(nm.matmul(np.zeros((2, 4)), x), np.zeros((2, 3)))


def test_matmul_dim_mismatch():
    with pytest.raises(nm.DimensionError):
        nm.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_backward_matches_fd():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    g = rng.normal(size=(3, 2))
    da, db = nm.matmul_backward(a, b, g)
    fd = finite_difference_grad(lambda: float(np.sum(nm.matmul(a, b) * g)),
                                {"a": a, "b": b})
    npt.assert_allclose(da, fd["a"], rtol=1e-6, atol=1e-9)
    npt.assert_allclose(db, fd["b"], rtol=1e-6, atol=1e-9)


def test_softmax_symmetry():
    npt.assert_allclose(nm.stable_softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)


def test_softmax_overflow_safe():
    out = nm.stable_softmax(np.array([1000.0, 0.0]))
    npt.assert_allclose(out, [1.0, 0.0], atol=1e-12)


def test_softmax_matches_direct_formula():
    x = rng.normal(size=5)
    direct = np.exp(x) / np.exp(x).sum()
    npt.assert_allclose(nm.stable_softmax(x), direct, atol=1e-12)


def test_softmax_normalizes_and_shift_invariant():
    x = rng.normal(size=(3, 4)) * 5
    y = nm.stable_softmax(x, axis=-1)
    assert np.all(y >= 0)
    npt.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    npt.assert_allclose(nm.stable_softmax(x + 7.3, axis=-1), y, atol=1e-12)


def test_softmax_empty_axis():
    with pytest.raises(nm.DimensionError):
        nm.stable_softmax(np.zeros((2, 0)))


def test_softmax_backward_matches_fd():
    x = rng.normal(size=6)
    g = rng.normal(size=6)
    y = nm.stable_softmax(x)
    dx = nm.softmax_backward(y, g)
    fd = finite_difference_grad(lambda: float(np.sum(nm.stable_softmax(x) * g)), {"x": x})
    npt.assert_allclose(dx, fd["x"], rtol=1e-6, atol=1e-9)


def test_sigmoid_tanh_trivia():
    assert nm.sigmoid(0.0) == 0.5
    assert nm.tanh(0.0) == 0.0
    for x in (0.3, 1.7, 9.0):
        assert abs(nm.sigmoid(-x) - (1.0 - nm.sigmoid(x))) < 1e-15
    assert 0.0 < nm.sigmoid(-30.0) < nm.sigmoid(0.1) < nm.sigmoid(30.0) < 1.0
    assert -1.0 < nm.tanh(-15.0) < nm.tanh(0.5) < nm.tanh(15.0) < 1.0
    assert nm.sigmoid(-800.0) >= 0.0 and nm.sigmoid(800.0) <= 1.0


def test_sigmoid_tanh_backward_matches_fd():
    x = rng.normal(size=5)
    g = rng.normal(size=5)
    fd = finite_difference_grad(lambda: float(np.sum(nm.sigmoid(x) * g)), {"x": x})
    npt.assert_allclose(nm.sigmoid_backward(nm.sigmoid(x), g), fd["x"], rtol=1e-6, atol=1e-9)
    fd = finite_difference_grad(lambda: float(np.sum(nm.tanh(x) * g)), {"x": x})
    npt.assert_allclose(nm.tanh_backward(nm.tanh(x), g), fd["x"], rtol=1e-6, atol=1e-9)


def test_layer_primitive_backwards():
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 3))
    g = rng.normal(size=(2, 3))
    fd = finite_difference_grad(lambda: float(np.sum(nm.add(a, b) * g)), {"a": a, "b": b})
    da, db = nm.add_backward(g)
    npt.assert_allclose(da, fd["a"], rtol=1e-6, atol=1e-9)
    npt.assert_allclose(db, fd["b"], rtol=1e-6, atol=1e-9)

    x = rng.normal(size=4)
    gx = rng.normal(size=4)
    fd = finite_difference_grad(lambda: float(np.sum(nm.scale(x, 2.5) * gx)), {"x": x})
    npt.assert_allclose(nm.scale_backward(gx, 2.5), fd["x"], rtol=1e-6, atol=1e-9)


def test_concat_narrow_roundtrip_and_backward():
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))
    cat = nm.concat([a, b], axis=-1)
    npt.assert_array_equal(nm.narrow(cat, 0, 3, axis=-1), a)
    npt.assert_array_equal(nm.narrow(cat, 3, 2, axis=-1), b)

    g = rng.normal(size=(2, 5))
    ga, gb = nm.concat_backward(g, [3, 2], axis=-1)
    fd = finite_difference_grad(
        lambda: float(np.sum(nm.concat([a, b], axis=-1) * g)), {"a": a, "b": b})
    npt.assert_allclose(ga, fd["a"], rtol=1e-6, atol=1e-9)
    npt.assert_allclose(gb, fd["b"], rtol=1e-6, atol=1e-9)

    gn = rng.normal(size=(2, 2))
    back = nm.narrow_backward(gn, cat.shape, 3, axis=-1)
    fd = finite_difference_grad(
        lambda: float(np.sum(nm.narrow(cat, 3, 2, axis=-1) * gn)), {"cat": cat})
    npt.assert_allclose(back, fd["cat"], rtol=1e-6, atol=1e-9)


def test_narrow_out_of_range():
    with pytest.raises(nm.DimensionError):
        nm.narrow(np.zeros((2, 3)), 2, 2, axis=-1)


def test_as_tensor_validation():
    with pytest.raises(nm.DimensionError):
        nm.as_tensor(np.zeros((1, 1, 1, 1)))
    with pytest.raises(nm.NonFiniteError):
        nm.as_tensor(np.array([1.0, np.nan]))
    out = nm.as_tensor(np.zeros(3, dtype=np.float32))
    assert out.dtype == np.float32


def test_ops_are_pure():
    x = rng.normal(size=(3, 3)).astype(np.float32)
    npt.assert_array_equal(nm.stable_softmax(x), nm.stable_softmax(x))
    npt.assert_array_equal(nm.matmul(x, x), nm.matmul(x, x))


class TestRngStream:
    def test_replay_is_identical(self):
        a = nm.RngStream(1234, 7).normal((5,))
        b = nm.RngStream(1234, 7).normal((5,))
        npt.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = nm.RngStream(1234, 7).normal((5,))
        b = nm.RngStream(1234, 8).normal((5,))
        assert not np.array_equal(a, b)

    def test_gaussian_moments(self):
        draws = nm.RngStream(99, 0).normal((1_000_000,))
        assert abs(draws.mean()) < 0.01
        assert abs(draws.var() - 1.0) < 0.01

    def test_gaussian_scalar(self):
        s = nm.RngStream(5, 1)
        val = nm.gaussian(s)
        assert isinstance(val, float)
        assert nm.gaussian(nm.RngStream(5, 1)) == val

    def test_derive_children(self):
        base = nm.RngStream(42, 0)
        a = base.derive(1).normal((4,))
        b = base.derive(2).normal((4,))
        assert not np.array_equal(a, b)
        npt.assert_array_equal(a, nm.RngStream(42, 0).derive(1).normal((4,)))

    def test_integers_empty_range(self):
        assert nm.RngStream(1, 1).integers(3, 3) == 3
