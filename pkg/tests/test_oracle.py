import numpy as np
import numpy.testing as npt
import pytest

from mochastream import oracle

rng = np.random.default_rng(7171)


def test_enumeration_hand_case():
    # single step over two frames, even odds: select at 0, or skip then select
    alpha = oracle.enumerate_alignments(np.array([[0.5, 0.5]]))
    npt.assert_allclose(alpha, [[0.5, 0.25]], atol=1e-15)


def test_enumeration_always_selects_first_frame():
    p = np.ones((3, 4))
    alpha = oracle.enumerate_alignments(p)
    expect = np.zeros((3, 4))
    expect[:, 0] = 1.0
    npt.assert_allclose(alpha, expect, atol=1e-15)


def test_enumeration_mass_is_one():
    for _ in range(20):
        p = rng.uniform(size=(rng.integers(1, 5), rng.integers(1, 7)))
        assert abs(oracle.enumeration_total_mass(p) - 1.0) < 1e-12


def test_enumeration_size_guard():
    with pytest.raises(ValueError):
        oracle.enumerate_alignments(np.zeros((7, 4)))
    with pytest.raises(ValueError):
        oracle.enumerate_alignments(np.zeros((2, 9)))


def test_chunk_reference_width_one_is_identity():
    alpha = rng.uniform(size=(2, 5))
    u = rng.normal(size=(2, 5))
    npt.assert_allclose(oracle.chunkwise_attention_reference(alpha, u, 1), alpha, atol=1e-15)


def test_finite_difference_square():
    x = np.array([3.0])
    grads = oracle.finite_difference_grad(lambda: float(x[0] ** 2), {"x": x}, step=1e-5)
    assert abs(grads["x"][0] - 6.0) < 1e-8


def test_finite_difference_constant():
    x = np.array([1.0, -2.0])
    grads = oracle.finite_difference_grad(lambda: 4.2, {"x": x})
    npt.assert_array_equal(grads["x"], np.zeros(2))


def test_grad_check_passes_correct_gradient():
    x = rng.normal(size=4)
    w = rng.normal(size=4)
    report = oracle.grad_check(lambda: float(x @ w), {"x": x}, {"x": w.copy()})
    assert report.passed
    assert report.worst < 1e-6


def test_grad_check_flags_sign_error():
    # detector sanity: a flipped sign must be reported with its coordinate
    x = rng.normal(size=3) + 2.0
    wrong = {"x": -2.0 * x}
    report = oracle.grad_check(lambda: float(np.sum(x ** 2)), {"x": x}, wrong)
    assert not report.passed
    assert report.failures[0][0] == "x"
    assert "FAIL" in report.summary()


def test_exhaustive_expected_error_uniform_binary():
    # two tokens (end + one symbol), single step, uniform: half the mass
    # matches the one-symbol reference, half misses by one edit
    def next_logprobs(prefix):
        return np.log(np.array([0.5, 0.5]))

    got = oracle.exhaustive_expected_error(next_logprobs, 2, 1, [1], eos_id=0)
    assert abs(got - 0.5) < 1e-12


def test_exhaustive_expected_error_certain_model():
    def next_logprobs(prefix):
        out = np.full(3, -745.0)  # ~exp underflow for the rest
        if prefix == (1,):
            out[0] = 0.0
        else:
            out[1] = 0.0
        return out

    got = oracle.exhaustive_expected_error(next_logprobs, 3, 2, [1], eos_id=0)
    assert got < 1e-9
