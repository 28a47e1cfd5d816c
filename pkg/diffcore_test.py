#!/usr/bin/env python3
"""Tests for the reverse-mode tape."""

import numpy as np
import pytest

from poumor import diffcore as dc
from poumor.errors import NonFiniteError, ShapeError, TapeError, ValidationError

def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)

def test_add_values():
    """add([1,2],[3,4]) gives [4,6]."""
    tape = dc.Tape()
    out = tape.leaf([1.0, 2.0]) + tape.leaf([3.0, 4.0])
    assert out.value.tolist() == [4.0, 6.0]

def test_shape_mismatch_names_kind_and_shapes():
    """Mismatched operands raise with the op kind and both shapes."""
    tape = dc.Tape()
    with pytest.raises(ShapeError, match=r"add: shape mismatch \(3,\) vs \(4,\)"):
        tape.leaf(np.zeros(3)) + tape.leaf(np.zeros(4))
    with pytest.raises(ShapeError, match="hadamard"):
        dc.mul(tape.leaf(np.zeros(2)), tape.leaf(np.zeros(5)))

def test_softmax_uniform():
    """softmax of equal logits is uniform."""
    tape = dc.Tape()
    out = dc.softmax(tape.leaf([0.0, 0.0, 0.0]))
    assert out.value == pytest.approx([1 / 3] * 3, abs=1e-15)

def test_softmax_shift_invariance_and_saturation():
    """Adding a constant to the logits changes nothing; a wide gap saturates."""
    tape = dc.Tape()
    x = np.array([[0.3, -1.2, 2.0], [5.0, 5.0, -3.0]])
    a = dc.softmax(tape.leaf(x), axis=-1).value
    b = dc.softmax(tape.leaf(x + 7.5), axis=-1).value
    assert np.allclose(a, b, rtol=0.0, atol=1e-14)
    out = dc.softmax(tape.leaf([10.0, -10.0])).value
    assert out[0] == pytest.approx(1.0, abs=1e-8) and 0.0 < out[1] < 1e-8
    assert out.sum() == pytest.approx(1.0, abs=1e-15)

def test_fft_of_delta_is_flat():
    """A delta at index 0 has a constant unitary spectrum 1/sqrt(n)."""
    tape = dc.Tape()
    delta = tape.constant(np.array([1.0, 0, 0, 0], dtype=complex))
    spec = dc.fft(delta, axes=(0,)).value
    assert np.allclose(spec, 0.5, atol=1e-15)

def test_square_derivative():
    """d(x^2)/dx at x=3 is 6."""
    value, grads = dc.value_and_grad(lambda t, p: dc.total(dc.square(p["x"])), {"x": np.array([3.0])})
    assert value == 9.0
    assert grads["x"][0] == pytest.approx(6.0)

def test_fft_gradient_matches_dense_adjoint():
    """Gradient through fft equals the conjugate transpose of the dense DFT."""
    rng = np.random.default_rng(0)
    n = 8
    a, b = rng.normal(size=n), rng.normal(size=n)
    w = rng.uniform(0.5, 2.0, size=n)

    def f(tape, p):
        z = dc.complex_from_pair(p["a"], p["b"])
        return dc.total(dc.scale(dc.abs2(dc.fft(z, axes=(0,))), w))

    _, grads = dc.value_and_grad(f, {"a": a, "b": b})
    F = dft_matrix(n)
    z = a + 1j * b
    expected = 2.0 * F.conj().T @ (w * (F @ z))
    assert np.allclose(grads["a"], expected.real, atol=1e-12)
    assert np.allclose(grads["b"], expected.imag, atol=1e-12)

def test_fft_inverse_and_adjoint_identities():
    """ifft(fft(x)) = x and <Fx, y> = <x, F^H y> to 1e-10."""
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 8)) + 1j * rng.normal(size=(6, 8))
    y = rng.normal(size=(6, 8)) + 1j * rng.normal(size=(6, 8))
    tape = dc.Tape()
    fx = dc.fft(tape.constant(x), axes=(0, 1))
    back = dc.ifft(fx, axes=(0, 1)).value
    assert np.max(np.abs(back - x)) < 1e-10
    lhs = np.vdot(y, fx.value)
    rhs = np.vdot(np.fft.ifftn(y, norm="ortho"), x)
    assert abs(lhs - rhs) < 1e-10

def test_rfft_irfft_roundtrip():
    """irfft inverts rfft on real input."""
    x = np.random.default_rng(2).normal(size=(2, 8, 6, 3))
    tape = dc.Tape()
    spec = dc.rfft(tape.constant(x), axes=(1, 2))
    assert spec.shape == (2, 8, 4, 3)
    back = dc.irfft(spec, axes=(1, 2), sizes=(8, 6)).value
    assert np.max(np.abs(back - x)) < 1e-12

def test_backward_before_forward():
    """backward on an empty tape is an error."""
    other = dc.Tape()
    v = other.leaf(1.0)
    with pytest.raises(TapeError, match="before a forward pass"):
        dc.Tape().backward(v)

def test_backward_needs_real_scalar():
    """A non-scalar output cannot be differentiated."""
    tape = dc.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(TapeError, match="real scalar"):
        tape.backward(dc.tanh(x))

def test_leaves_are_real():
    """Complex leaves are rejected; complex weights are assembled from pairs."""
    with pytest.raises(ValidationError, match="must be real"):
        dc.Tape().leaf(np.array([1j]))
    tape = dc.Tape()
    with pytest.raises(ValidationError, match="complex constant"):
        dc.scale(tape.leaf(np.ones(2)), 1j)

def test_complex_gradient_splits_into_partials():
    """|a + ib|^2 has gradients 2a and 2b."""
    a, b = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    _, grads = dc.value_and_grad(lambda t, p: dc.total(dc.abs2(dc.complex_from_pair(p["a"], p["b"]))),
                                 {"a": a, "b": b})
    assert np.allclose(grads["a"], 2 * a)
    assert np.allclose(grads["b"], 2 * b)

def test_grad_check_tanh():
    """sum(tanh(x)) passes the finite-difference check at 1e-6."""
    x = np.random.default_rng(3).normal(size=7)
    report = dc.grad_check(lambda t, p: dc.total(dc.tanh(p["x"])), x, step=1e-5, tol=1e-6)
    assert report.passed
    assert np.allclose(report.analytic["x"], 1 - np.tanh(x) ** 2)

def test_grad_check_constant_function():
    """A constant function has exactly zero gradient."""
    report = dc.grad_check(lambda t, p: t.constant(3.0), np.ones(4))
    assert report.max_rel_error == 0.0
    assert report.passed
    assert not np.any(report.analytic["x"])

def test_grad_check_non_finite():
    """Non-finite values abort the check."""
    with pytest.raises(NonFiniteError):
        dc.grad_check(lambda t, p: dc.total(dc.log(p["x"])), -np.ones(2))

def test_elementwise_and_reduction_gradients():
    """Composite of every real primitive passes the finite-difference check."""
    rng = np.random.default_rng(4)
    theta = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 2)), "b": rng.normal(size=2),
             "y": rng.uniform(0.5, 1.5, size=(3, 4))}

    def f(tape, p):
        h = dc.bias(dc.matmul(dc.tanh(p["x"]), p["w"]), p["b"])
        s = dc.softmax(h, axis=-1)
        left, right = dc.split(s, [1, 1], axis=-1)
        joined = dc.concat([dc.sin(left), dc.cos(right), dc.softplus(left)], axis=-1)
        wide = dc.broadcast(dc.reshape(dc.mean(joined), (1,)), (3,))
        ratio = dc.div(dc.exp(p["x"] * 0.1), p["y"])
        return dc.total(dc.square(wide)) + dc.mean(dc.log(p["y"])) + dc.total(ratio - p["x"])

    report = dc.grad_check(f, theta, tol=1e-6)
    assert report.passed, report.max_rel_error

def test_spectral_primitive_gradients():
    """rfft, mode truncation, mode matmul, padding and irfft pass the gradient check."""
    rng = np.random.default_rng(5)
    n = 8
    idx = [np.array([0, 1, 7]), np.array([0, 1])]
    theta = {"x": rng.normal(size=(2, n, n, 2)), "gr": rng.normal(size=(3, 2, 3, 2)),
             "gi": rng.normal(size=(3, 2, 3, 2))}
    target = rng.normal(size=(2, n, n, 3))

    def f(tape, p):
        spec = dc.rfft(p["x"], axes=(1, 2))
        kept = dc.mode_truncate(spec, (1, 2), idx)
        mixed = dc.mode_matmul(dc.complex_from_pair(p["gr"], p["gi"]), kept)
        full = dc.mode_pad(mixed, (1, 2), idx, (2, n, n // 2 + 1, 3))
        out = dc.irfft(full, axes=(1, 2), sizes=(n, n))
        return dc.total(dc.square(out - tape.constant(target)))

    report = dc.grad_check(f, theta, tol=1e-6)
    assert report.passed, report.max_rel_error

def test_complex_fft_gradients():
    """fft/ifft with a complex scale pass the gradient check."""
    rng = np.random.default_rng(6)
    c = rng.normal(size=6) + 1j * rng.normal(size=6)

    def f(tape, p):
        z = dc.complex_from_pair(p["a"], p["b"])
        return dc.total(dc.abs2(dc.ifft(dc.scale(dc.fft(z, (0,)), c), (0,))))

    report = dc.grad_check(f, {"a": rng.normal(size=6), "b": rng.normal(size=6)})
    assert report.passed, report.max_rel_error

def test_gradients_by_name():
    """Gradients can be looked up by leaf name."""
    tape = dc.Tape()
    leaves = tape.leaves({"a": np.array([2.0]), "b": np.array([5.0])})
    out = dc.total(leaves["a"] * leaves["b"])
    grads = tape.backward(out).named()
    assert grads["a"][0] == 5.0 and grads["b"][0] == 2.0

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
