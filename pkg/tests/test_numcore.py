import numpy as np
import pytest

from tric.core import numcore as nc
from tric.core.numcore import NonDeterministicFunctionError, ShapeMismatchError, Tensor


def test_broadcast_add_mul_gradients(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    nc.tsum(a * b + a).backward()
    np.testing.assert_allclose(a.grad, np.broadcast_to(b.data + 1.0, a.shape))
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0))


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeMismatchError, match=r"\(3, 4\)"):
        nc.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5,))))
    with pytest.raises(ShapeMismatchError):
        nc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_layer_norm_gradient_matches_finite_differences(rng):
    x = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    gamma = Tensor(1.0 + 0.1 * rng.standard_normal(8), requires_grad=True)
    beta = Tensor(0.1 * rng.standard_normal(8), requires_grad=True)
    direction = rng.standard_normal((4, 8))
    report = nc.finite_diff_check(lambda: nc.tsum(nc.layer_norm(x, gamma, beta) * direction), [x, gamma, beta],
                                  step=1e-5, tol=1e-4)
    assert report.passed, report
    assert report.checked == 32 + 8 + 8


@pytest.mark.parametrize("op", [nc.gelu, nc.sigmoid, nc.tanh, nc.exp])
def test_activation_gradients(op, rng):
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    assert nc.finite_diff_check(lambda: nc.tsum(op(x) * x), [x]).passed


def test_softmax_mask_and_gradient(rng):
    logits = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    mask = np.array([[True, True, False, True], [True, False, False, False]])
    out = nc.softmax(logits, axis=-1, mask=mask)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(out.data[~mask] == 0.0)
    assert out.data[1, 0] == 1.0
    direction = rng.standard_normal((2, 4))
    assert nc.finite_diff_check(lambda: nc.tsum(nc.softmax(logits, mask=mask) * direction), [logits]).passed


def test_softmax_fully_masked_slice_is_an_error():
    with pytest.raises(ValueError):
        nc.softmax(Tensor(np.zeros((1, 3))), mask=np.zeros((1, 3), dtype=bool))


def test_conv1d_same_padding_matches_numpy(rng):
    signal = rng.standard_normal(9)
    kernel = rng.standard_normal(3)
    x = Tensor(signal.reshape(1, 9, 1))
    weight = Tensor(kernel.reshape(3, 1, 1))
    out = nc.conv1d(x, weight, None, axis=1).data.reshape(-1)
    # correlation with "same" zero padding
    expected = np.correlate(np.pad(signal, 1), kernel, mode="valid")
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv1d_kinds_gradients(rng):
    x = Tensor(rng.standard_normal((2, 5, 3, 4)), requires_grad=True)
    depthwise = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    plain = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
    bias = Tensor(rng.standard_normal(2), requires_grad=True)

    def f():
        h = nc.conv1d(x, depthwise, None, axis=2, kind="depthwise")
        return nc.tsum(nc.conv1d(h, plain, bias, axis=1) ** 2)

    assert nc.finite_diff_check(f, [x, depthwise, plain, bias]).passed


def test_group_norm_normalises_each_group(rng):
    x = Tensor(3.0 + 2.0 * rng.standard_normal((2, 6, 8)))
    out = nc.group_norm(x, 4, nc.ones((8,)), nc.zeros((8,))).data
    grouped = out.reshape(2, 6, 4, 2)
    np.testing.assert_allclose(grouped.mean(axis=(1, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(grouped.var(axis=(1, 3)), 1.0, atol=1e-4)
    with pytest.raises(ShapeMismatchError):
        nc.group_norm(x, 3, nc.ones((8,)), nc.zeros((8,)))


def test_shape_ops_route_gradients(rng):
    a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)

    def f():
        h = nc.concat([nc.slice_axis(a, 1, 0, 2), nc.pad_axis(a, 1, 1, 0)], axis=1)
        return nc.tsum(h.transpose(2, 0, 1).reshape(4, -1) ** 2) + nc.tsum(nc.tmax(a, axis=-1))

    assert nc.finite_diff_check(f, [a]).passed


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with nc.no_grad():
        out = w * 2.0
    assert not out.requires_grad
    assert nc.is_grad_enabled()


def test_backward_needs_scalar_and_runs_once():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatchError):
        (w * 2.0).backward()
    loss = nc.tsum(w * w)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_nondeterministic_function_is_detected(rng):
    w = Tensor(np.ones(2), requires_grad=True)
    noise = np.random.default_rng(0)
    with pytest.raises(NonDeterministicFunctionError):
        nc.finite_diff_check(lambda: nc.tsum(w * noise.standard_normal(2)), [w])


def test_wrong_gradient_is_reported():
    w = Tensor(np.array([0.5, -1.5]), requires_grad=True)

    def broken():
        out = nc.tsum(w * w)
        out._backward = lambda g: (np.zeros_like(w.data),)
        return out

    # the scalar sum has one parent; zeroing its backward breaks the gradient
    report = nc.finite_diff_check(broken, [w])
    assert not report.passed


def test_vanishing_gradients_pass_at_a_large_loss_scale(rng):
    logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    shift = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
    direction = rng.standard_normal((3, 5))

    def f():
        # the row shift cancels inside the softmax, so its exact gradient is zero
        return 1e4 * nc.tsum(nc.softmax(logits + shift) * direction) + 1e4

    report = nc.finite_diff_check(f, [logits, shift])
    assert report.passed, report
    assert report.checked == 15 + 3


def test_roundoff_floor_still_reports_wrong_gradients_at_a_large_scale():
    w = Tensor(np.array([0.5, -1.5]), requires_grad=True)

    def broken():
        out = nc.tsum(w * w) + 1e4
        out._parents[0]._backward = lambda g: (np.zeros_like(w.data),)
        return out

    assert not nc.finite_diff_check(broken, [w]).passed
