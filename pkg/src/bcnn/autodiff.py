"""Minimal reverse-mode differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
topologically sorts the tape and accumulates gradients into every node with
requires_grad. Only the operations the training runtime needs are defined.
"""

from __future__ import annotations

import numpy as np

from .conv import corr2d, corr2d_grads


class GraphError(RuntimeError):
    """Malformed tape (missing node or detached gradient)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self.parents = tuple(parents)
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise GraphError("backward() starts from a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, contribution in node.backward_fn(node.grad):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = contribution.copy()
                else:
                    parent.grad += contribution

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return Tensor(out, parents=(a, b), backward_fn=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return Tensor(out, parents=(a, b), backward_fn=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor(out, parents=(a, b), backward_fn=backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(old)),)

    return Tensor(out, parents=(a,), backward_fn=backward)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        return ((a, np.repeat(np.expand_dims(g, axis), a.data.shape[axis], axis=axis)),)

    return Tensor(out, parents=(a,), backward_fn=backward)


def square_sum_axis(a: Tensor, axis: int) -> Tensor:
    """sum(a^2) over one axis, fused (the modulus-recombination step)."""
    out = np.sum(a.data * a.data, axis=axis)

    def backward(g):
        return ((a, 2.0 * a.data * np.expand_dims(g, axis)),)

    return Tensor(out, parents=(a,), backward_fn=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return ((a, g * mask),)

    return Tensor(a.data * mask, parents=(a,), backward_fn=backward)


def softsign(a: Tensor) -> Tensor:
    denom = 1.0 + np.abs(a.data)

    def backward(g):
        return ((a, g / (denom * denom)),)

    return Tensor(a.data / denom, parents=(a,), backward_fn=backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data >= b.data  # ties route to the first argument

    def backward(g):
        return ((a, g * take_a), (b, g * ~take_a))

    return Tensor(np.where(take_a, a.data, b.data), parents=(a, b), backward_fn=backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    out = corr2d(x.data, w.data, stride=stride, padding=padding)

    def backward(g):
        dx, dw = corr2d_grads(x.data, w.data, g, stride=stride, padding=padding)
        return ((x, dx), (w, dw))

    return Tensor(out, parents=(x, w), backward_fn=backward)


def avg_pool2(x: Tensor) -> Tensor:
    n, h, w, c = x.data.shape
    h2, w2 = h // 2, w // 2
    cropped = x.data[:, : 2 * h2, : 2 * w2, :]
    out = cropped.reshape(n, h2, 2, w2, 2, c).mean(axis=(2, 4))

    def backward(g):
        dx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        dx[:, : 2 * h2, : 2 * w2, :] = spread
        return ((x, dx),)

    return Tensor(out, parents=(x,), backward_fn=backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, h, w, c = x.data.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        dx = np.broadcast_to(g[:, None, None, :], x.data.shape) / (h * w)
        return ((x, np.ascontiguousarray(dx)),)

    return Tensor(out, parents=(x,), backward_fn=backward)


def stride_slice(x: Tensor, stride: int) -> Tensor:
    out = x.data[:, ::stride, ::stride, :]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, ::stride, ::stride, :] = g
        return ((x, dx),)

    return Tensor(np.ascontiguousarray(out), parents=(x,), backward_fn=backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels, computed in the log domain."""
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    log_probs = z - logsumexp
    n = z.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        return ((logits, g * probs / n),)

    return Tensor(np.asarray(loss, dtype=z.dtype), parents=(logits,), backward_fn=backward)


def numeric_gradient(loss_fn, param: Tensor, index: tuple, step: float = 1e-5) -> float:
    """Central finite difference of loss_fn() w.r.t. one parameter entry."""
    original = param.data[index]
    param.data[index] = original + step
    hi = float(loss_fn().data.reshape(()))
    param.data[index] = original - step
    lo = float(loss_fn().data.reshape(()))
    param.data[index] = original
    return (hi - lo) / (2.0 * step)


def grad_check(loss_fn, params: list[Tensor], n_samples: int = 50,
               step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    Samples up to n_samples parameter entries across all tensors; the
    denominator is max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    probs = sizes / sizes.sum()
    worst = 0.0
    for _ in range(n_samples):
        pi = int(rng.choice(len(params), p=probs))
        flat_idx = int(rng.integers(params[pi].data.size))
        index = np.unravel_index(flat_idx, params[pi].data.shape)
        numeric = numeric_gradient(loss_fn, params[pi], index, step)
        a = float(analytic[pi][index])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
