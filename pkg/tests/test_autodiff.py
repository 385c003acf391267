"""Tape gradients against central finite differences, op by op."""

import numpy as np
import pytest

from bcnn import autodiff as ad
from bcnn.autodiff import GraphError, Tensor


def check(loss_fn, params, tol=2e-5, n_samples=30, seed=0):
    err = ad.grad_check(loss_fn, params, n_samples=n_samples, seed=seed)
    assert err < tol, f"max relative gradient error {err}"


class TestElementwiseOps:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)

        def loss():
            return ad.square_sum_axis(ad.reshape(ad.mul(ad.add(a, b), a), (1, -1)), 1)

        check(loss, [a, b])

    def test_square_sum_gradient_is_twice_value(self):
        rng = np.random.default_rng(1)
        z = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
        out = ad.square_sum_axis(z, axis=1)
        total = ad.sum_axis(ad.reshape(out, (1, 2)), 1)
        total.backward()
        np.testing.assert_allclose(z.grad, 2.0 * z.data, atol=1e-14)

    def test_relu_softsign_maximum(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((4, 4)) + 0.3, requires_grad=True)
        b = Tensor(rng.standard_normal((4, 4)), requires_grad=True)

        def loss():
            m = ad.maximum(ad.relu(a), ad.softsign(b))
            return ad.square_sum_axis(ad.reshape(m, (1, -1)), 1)

        check(loss, [a, b])

    def test_matmul(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)

        def loss():
            return ad.square_sum_axis(ad.matmul(a, w), 1)

        def scalar():
            return ad.sum_axis(ad.reshape(loss(), (1, 5)), 1)

        check(scalar, [a, w])


class TestSpatialOps:
    @pytest.mark.parametrize("stride,padding", [(1, "valid"), (1, "same"), (2, "same")])
    def test_conv2d(self, stride, padding):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 8, 8, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 3, 3, 4)) * 0.3, requires_grad=True)

        def loss():
            z = ad.conv2d(x, w, stride=stride, padding=padding)
            flat = ad.reshape(z, (1, -1))
            return ad.square_sum_axis(flat, 1)

        check(loss, [x, w], n_samples=40)

    def test_avg_pool_and_global_pool(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 6, 6, 3)), requires_grad=True)

        def loss():
            pooled = ad.global_avg_pool(ad.avg_pool2(x))
            return ad.square_sum_axis(pooled, 1)

        def scalar():
            return ad.sum_axis(ad.reshape(loss(), (1, -1)), 1)

        check(scalar, [x])

    def test_stride_slice(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((1, 7, 7, 2)), requires_grad=True)

        def loss():
            return ad.square_sum_axis(ad.reshape(ad.stride_slice(x, 2), (1, -1)), 1)

        check(loss, [x])


class TestSoftmaxCrossEntropy:
    def test_matches_manual_loss(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((5, 10))
        labels = rng.integers(0, 10, 5)
        loss = ad.softmax_cross_entropy(Tensor(logits), labels)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        manual = -np.log(probs[np.arange(5), labels]).mean()
        assert float(loss.data) == pytest.approx(manual, rel=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        logits = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        labels = rng.integers(0, 6, 4)

        def loss():
            return ad.softmax_cross_entropy(logits, labels)

        check(loss, [logits], tol=1e-7, n_samples=24)


class TestTapeMechanics:
    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(GraphError):
            x.backward()

    def test_zero_everything_gives_zero_grads(self):
        x = Tensor(np.zeros((1, 4, 4, 1)), requires_grad=True)
        w = Tensor(np.zeros((3, 3, 1, 2)), requires_grad=True)
        out = ad.conv2d(x, w, padding="same")
        loss = ad.square_sum_axis(ad.reshape(out, (1, -1)), 1)
        loss.backward()
        assert np.all(x.grad == 0.0)
        assert np.all(w.grad == 0.0)

    def test_reused_node_accumulates(self):
        a = Tensor(np.array([[2.0]]), requires_grad=True)
        out = ad.mul(a, a)  # a^2, both parents are the same node
        loss = ad.sum_axis(out, 1)
        loss = ad.sum_axis(loss, 0)
        loss.backward()
        assert a.grad[0, 0] == pytest.approx(4.0)
