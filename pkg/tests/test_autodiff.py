import math
import zlib

import numpy as np
import pytest

from most_tkg import autodiff as ad
from most_tkg.autodiff import BackwardError, DimensionError, ParityError, Tape, Tensor


def nz(g, size):
    """Random signs, magnitudes in [0.3, 2]: keeps gradient entries away from zero.

    Relative error of a tiny gradient entry is dominated by round-off in the
    difference quotient, which says nothing about the backward rule.
    """
    return g.choice([-1.0, 1.0], size=size) * g.uniform(0.3, 2.0, size=size)


# op name -> (builder(rng) -> list of input arrays, function of tensors)
OPS = {
    "add": (lambda g: [nz(g, (3, 4)), nz(g, (4,))], lambda a, b: ad.add(a, b)),
    "sub": (lambda g: [nz(g, (3, 4)), nz(g, (3, 1))], lambda a, b: ad.sub(a, b)),
    "mul": (lambda g: [nz(g, (3, 4)), nz(g, (3, 4))], lambda a, b: ad.mul(a, b)),
    "mul_scalar_tensor": (lambda g: [nz(g, ()), nz(g, (5,))], lambda a, b: ad.mul(a, b)),
    "div": (lambda g: [nz(g, (2, 4)), g.uniform(0.5, 2.0, size=(4,))], lambda a, b: ad.div(a, b)),
    "scalar_mul": (lambda g: [nz(g, (4,))], lambda a: ad.scalar_mul(a, -2.5)),
    "matvec": (lambda g: [nz(g, (3, 4)), nz(g, (4,))], lambda a, b: ad.matmul(a, b)),
    "matmul": (lambda g: [nz(g, (3, 4)), nz(g, (4, 2))], lambda a, b: ad.matmul(a, b)),
    "transpose": (lambda g: [nz(g, (3, 4))], lambda a: ad.transpose(a)),
    "concat": (lambda g: [nz(g, (2, 3)), nz(g, (2, 2))], lambda a, b: ad.concat([a, b], -1)),
    "reshape": (lambda g: [nz(g, (2, 3))], lambda a: ad.reshape(a, (3, 2))),
    "stack": (lambda g: [nz(g, (4,)), nz(g, (4,))], lambda a, b: ad.stack([a, b])),
    "take_rows": (lambda g: [nz(g, (5, 3))], lambda a: ad.take_rows(a, np.array([0, 3, 3, 1]))),
    "slice_cols": (lambda g: [nz(g, (3, 6))], lambda a: ad.slice_cols(a, 1, 4)),
    "mean_rows": (lambda g: [nz(g, (5, 3))], lambda a: ad.mean_rows(a)),
    "sum_axis": (lambda g: [nz(g, (5, 3))], lambda a: ad.sum(a, axis=1)),
    "cos": (lambda g: [nz(g, (6,))], lambda a: ad.cos(a)),
    "sigmoid": (lambda g: [nz(g, (6,))], lambda a: ad.sigmoid(a)),
    "tanh": (lambda g: [nz(g, (6,))], lambda a: ad.tanh(a)),
    "relu": (lambda g: [nz(g, (6,))], lambda a: ad.relu(a)),
    "leaky_relu": (lambda g: [nz(g, (6,))], lambda a: ad.leaky_relu(a, 0.1)),
    "log": (lambda g: [g.uniform(0.2, 3.0, size=(6,))], lambda a: ad.log(a)),
    "clip": (lambda g: [np.array([-3.0, -0.5, 0.1, 0.7, 2.5]) + g.uniform(-0.05, 0.05, 5)],
             lambda a: ad.clip(a, -1.0, 1.0)),
    "dropout": (lambda g: [nz(g, (4, 6))],
                lambda a: ad.dropout(a, 0.3, np.random.default_rng(5), training=True)),
    "complex_mul": (lambda g: [nz(g, (3, 6)), nz(g, (6,))], lambda a, b: ad.complex_mul(a, b)),
    "hermitian_dot": (lambda g: [nz(g, (3, 6)), nz(g, (4, 6))],
                      lambda a, b: ad.hermitian_dot(a, b)),
    "complex_inf_norm": (lambda g: [nz(g, (8,))], lambda a: ad.complex_inf_norm(a)),
    "l2_norm": (lambda g: [nz(g, (8,))], lambda a: ad.l2_norm(a)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    build, op = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        inputs = [Tensor(x, requires_grad=True) for x in build(rng)]
        probe = op(*[Tensor(x.value) for x in inputs]).value
        weights = nz(rng, probe.shape)
        # weighted sum gives a scalar whose gradient touches every output
        worst = max(worst, ad.finite_difference_check(lambda: ad.sum(ad.mul(op(*inputs), weights)), inputs))
    assert worst < 1e-6, f"{name}: relative error {worst:.2e}"


def test_sigmoid_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        y = ad.sigmoid(x)
    ad.backward(y, tape)
    assert y.item() == 0.5 and x.grad == pytest.approx(0.25)


def test_complex_mul_one_times_i():
    assert ad.complex_mul(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).value.tolist() == [0.0, 1.0]


def test_complex_ops_match_python_complex(rng):
    a, b = nz(rng, 8), nz(rng, 8)
    ca, cb = a[0::2] + 1j * a[1::2], b[0::2] + 1j * b[1::2]
    prod = ad.complex_mul(Tensor(a), Tensor(b)).value
    np.testing.assert_allclose(prod[0::2] + 1j * prod[1::2], ca * cb, rtol=0, atol=1e-14)
    assert ad.hermitian_dot(Tensor(a), Tensor(b)).item() == pytest.approx(np.sum(ca * np.conj(cb)).real, abs=1e-14)
    assert ad.complex_inf_norm(Tensor(a)).item() == pytest.approx(np.max(np.abs(ca)), abs=1e-15)


def test_square_and_mean_gradients():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    ad.backward(y, tape)
    assert x.grad == 6.0
    v = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        m = ad.scalar_mul(ad.sum(v), 1 / 4)
    ad.backward(m, tape)
    np.testing.assert_array_equal(v.grad, np.full(4, 0.25))


def test_checker_on_simple_functions():
    x = Tensor(3.0, requires_grad=True)
    assert ad.finite_difference_check(lambda: ad.mul(x, x), [x]) < 1e-9
    y = Tensor(1.0, requires_grad=True)
    assert ad.finite_difference_check(lambda: ad.cos(y), [y]) < 1e-8
    with pytest.raises(ValueError):
        ad.finite_difference_check(lambda: ad.cos(y), [y], epsilon=0.0)


def test_checker_rejects_non_finite():
    x = Tensor(-1.0, requires_grad=True)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        ad.finite_difference_check(lambda: ad.log(x), [x])


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(BackwardError):
        ad.backward(y, tape)
    with Tape() as tape:
        z = ad.sum(ad.mul(x, x))
    ad.backward(z, tape)
    with pytest.raises(BackwardError):
        ad.backward(z, tape)
    tape.reset()
    with tape:
        z = ad.sum(ad.mul(x, x))
    ad.backward(z, tape)


def test_shape_and_parity_errors():
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))
    with pytest.raises(ParityError):
        ad.complex_mul(Tensor(np.ones(3)), Tensor(np.ones(3)))
    with pytest.raises(ParityError):
        ad.complex_inf_norm(Tensor(np.ones(5)))


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, x)
    assert y._backward is None and not y.requires_grad


def test_linearity_of_backward(rng):
    x = Tensor(nz(rng, 5), requires_grad=True)
    a, b = 1.7, -0.4

    def grad_of(fn):
        x.zero_grad()
        with Tape() as tape:
            out = fn()
        ad.backward(out, tape)
        g = x.grad.copy()
        tape.reset()
        return g

    f = lambda: ad.sum(ad.tanh(x))  # noqa: E731
    g = lambda: ad.sum(ad.mul(ad.cos(x), x))  # noqa: E731
    combo = grad_of(lambda: ad.add(ad.scalar_mul(f(), a), ad.scalar_mul(g(), b)))
    np.testing.assert_allclose(combo, a * grad_of(f) + b * grad_of(g), rtol=1e-12, atol=1e-14)


def test_dropout_determinism_and_eval_passthrough(rng):
    x = Tensor(nz(rng, (4, 5)), requires_grad=True)

    def run():
        x.zero_grad()
        with Tape() as tape:
            out = ad.dropout(x, 0.5, np.random.default_rng(9), training=True)
            loss = ad.sum(ad.mul(out, out))
        ad.backward(loss, tape)
        return out.value.copy(), x.grad.copy()

    (v1, g1), (v2, g2) = run(), run()
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_array_equal(g1, g2)
    kept = v1 != 0
    np.testing.assert_allclose(v1[kept], x.value[kept] / 0.5)
    np.testing.assert_array_equal(ad.dropout(x, 0.5, None, training=False).value, x.value)


def test_gradient_accumulates_over_reuse():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = ad.add(ad.mul(x, x), ad.scalar_mul(x, 3.0))
    ad.backward(y, tape)
    assert x.grad == pytest.approx(2 * 2.0 + 3.0)


def test_sigmoid_is_stable_for_large_inputs():
    s = ad.sigmoid(Tensor(np.array([-800.0, 800.0]))).value
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0
    assert math.isclose(ad.sigmoid(Tensor(1.0)).item(), 1 / (1 + math.e**-1), rel_tol=1e-15)
