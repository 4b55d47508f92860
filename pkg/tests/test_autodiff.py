import math

import numpy as np
import pytest

import billinglab.autodiff as ad
from billinglab.autodiff import Tensor
from billinglab.errors import ShapeError


def finite_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn of one array."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        grad.ravel()[i] = (up - down) / (2 * h)
    return grad


def check_gradient(build, x0: np.ndarray, rel_tol: float = 1e-4) -> None:
    """Compare analytic gradient of sum(op(x)) against finite differences."""
    t = Tensor(x0.copy(), requires_grad=True)
    out = ad.sum_(build(t))
    out.backward()

    def numeric(x):
        return float(ad.sum_(build(Tensor(x))).data)

    fd = finite_difference(numeric, x0.copy())
    scale = np.maximum(np.abs(fd), np.maximum(np.abs(t.grad), 1e-6))
    assert np.max(np.abs(fd - t.grad) / scale) < rel_tol


RNG = np.random.default_rng(42)
X34 = RNG.normal(size=(3, 4))


class TestPrimitiveGradients:
    @pytest.mark.parametrize(
        "name,build",
        [
            ("sigmoid", ad.sigmoid),
            ("tanh", ad.tanh),
            ("relu", lambda t: ad.relu(t)),
            ("gelu", ad.gelu),
            ("softplus", ad.softplus),
            ("exp", ad.exp),
            ("softmax", ad.softmax),
            ("layer_norm", ad.layer_norm),
            ("neg", ad.neg),
            ("abs", ad.abs_),
            ("square", lambda t: ad.mul(t, t)),
            ("slice", lambda t: t[1:, :2]),
            ("reshape", lambda t: ad.reshape(t, (4, 3))),
            ("transpose", lambda t: ad.transpose(t, (1, 0))),
            ("clip", lambda t: ad.clip_min(t, 0.1)),
            ("mean", lambda t: ad.mean(t, axis=1, keepdims=True)),
        ],
    )
    def test_elementwise_and_shape_ops(self, name, build):
        x = X34 + (0.3 if name == "log" else 0.0)
        check_gradient(build, x)

    def test_log_gradient(self):
        check_gradient(ad.log, np.abs(X34) + 0.5)

    def test_matmul_gradients_both_sides(self):
        a0 = RNG.normal(size=(3, 4))
        b0 = RNG.normal(size=(4, 2))
        b = Tensor(b0, requires_grad=True)
        check_gradient(lambda t: ad.matmul(t, b), a0)
        a = Tensor(a0, requires_grad=True)
        check_gradient(lambda t: ad.matmul(a, t), b0.copy())

    def test_batched_matmul_gradient(self):
        b0 = RNG.normal(size=(2, 2, 4, 3))
        other = Tensor(RNG.normal(size=(2, 2, 3, 5)), requires_grad=True)
        check_gradient(lambda t: ad.matmul(t, other), b0)

    def test_broadcast_add_gradient(self):
        bias0 = RNG.normal(size=(4,))
        x = Tensor(X34, requires_grad=True)
        check_gradient(lambda t: ad.add(x, t), bias0)

    def test_div_gradient(self):
        denom = Tensor(np.abs(RNG.normal(size=(3, 1))) + 0.5, requires_grad=True)
        check_gradient(lambda t: ad.div(t, denom), X34.copy())
        numer = Tensor(X34, requires_grad=True)
        check_gradient(lambda t: ad.div(numer, t), np.abs(RNG.normal(size=(3, 1))) + 0.5)

    def test_concat_gradient(self):
        other = Tensor(RNG.normal(size=(2, 4)), requires_grad=True)
        check_gradient(lambda t: ad.concat([t, other], axis=0), X34.copy())


class TestForwardValues:
    def test_sigmoid_at_zero(self):
        t = Tensor(np.array([0.0]), requires_grad=True)
        out = ad.sigmoid(t)
        assert out.data[0] == 0.5
        ad.sum_(out).backward()
        assert t.grad[0] == pytest.approx(0.25)

    def test_layer_norm_of_constant_vector_is_zero(self):
        out = ad.layer_norm(Tensor(np.full((2, 5), 3.7)))
        assert np.allclose(out.data, 0.0)

    def test_softmax_rows_sum_to_one(self):
        out = ad.softmax(Tensor(RNG.normal(size=(4, 7)) * 10))
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_gelu_known_values(self):
        out = ad.gelu(Tensor(np.array([0.0, 1.0])))
        assert out.data[0] == 0.0
        # x * Phi(x) at 1.0 with the exact erf form
        assert out.data[1] == pytest.approx(0.8413447460685429)

    def test_relu_kink(self):
        out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert out.data.tolist() == [0.0, 0.0, 2.0]


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(X34)
        out = ad.dropout(x, 0.5, train=False)
        assert out is x

    def test_rate_zero_is_identity_in_train_mode(self):
        x = Tensor(X34)
        assert ad.dropout(x, 0.0, train=True) is x

    def test_train_mode_masks_and_rescales(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((200, 50)))
        out = ad.dropout(x, 0.5, train=True, rng=rng)
        kept = out.data != 0
        assert 0.4 < kept.mean() < 0.6
        assert np.allclose(out.data[kept], 2.0)

    def test_gradient_respects_mask(self):
        rng = np.random.default_rng(1)
        x = Tensor(np.ones((5, 5)), requires_grad=True)
        out = ad.dropout(x, 0.4, train=True, rng=rng)
        ad.sum_(out).backward()
        assert np.array_equal(x.grad != 0, out.data != 0)


class TestShapeErrors:
    def test_matmul_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))

    def test_backward_needs_scalar(self):
        t = Tensor(X34, requires_grad=True)
        with pytest.raises(ShapeError):
            ad.mul(t, 2.0).backward()

    def test_matmul_rejects_vectors(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


class TestGraphMechanics:
    def test_gradient_accumulates_over_reuse(self):
        t = Tensor(np.array([2.0]), requires_grad=True)
        out = ad.add(ad.mul(t, t), t)  # x^2 + x -> grad 2x + 1 = 5
        out.backward(np.ones(1))
        assert t.grad[0] == pytest.approx(5.0)

    def test_constants_do_not_collect_gradients(self):
        const = Tensor(np.array([3.0]))
        t = Tensor(np.array([2.0]), requires_grad=True)
        ad.sum_(ad.mul(const, t)).backward()
        assert const.grad is None
        assert t.grad[0] == 3.0
