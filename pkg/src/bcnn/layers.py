"""Differentiable layers over the autodiff tape: the equivariant conv layer,
its plain counterpart, pooling, dense and activation layers."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import bconv
from .autodiff import Tensor


class Layer:
    def params(self) -> list[Tensor]:
        return []

    def set_training(self, training: bool) -> None:
        pass

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


def _bconv_kernel(kre: Tensor, kim: Tensor, tre: np.ndarray, tim: np.ndarray,
                  group: str, size: int, c_in: int, c_out: int) -> Tensor:
    """Assemble the real correlation kernel from the complex coefficient bank.

    tre/tim are the transform tensor's parts with the pixel-area element
    folded in, shape (nu_cnt, S^2, j); kre/kim are (nu_cnt, j, c_in*c_out).
    Output kernel is (S, S, c_in, nu_cnt*R*c_out) with R=2 response parts for
    the rotation group and R=4 (two real-weight branches) for the O(2) path.
    """
    if group == "so2":
        parts = [
            np.einsum("npj,njq->npq", tre, kre.data) + np.einsum("npj,njq->npq", tim, kim.data),
            np.einsum("npj,njq->npq", tim, kre.data) - np.einsum("npj,njq->npq", tre, kim.data),
        ]
    else:
        parts = [
            np.einsum("npj,njq->npq", tre, kre.data),
            np.einsum("npj,njq->npq", tim, kre.data),
            -np.einsum("npj,njq->npq", tre, kim.data),
            -np.einsum("npj,njq->npq", tim, kim.data),
        ]
    nu_cnt = tre.shape[0]
    resp = len(parts)
    stacked = np.stack(parts, axis=1)  # (nu, resp, S^2, q)
    kernel = np.moveaxis(stacked, 2, 0).reshape(size * size, nu_cnt * resp, c_in, c_out)
    kernel = np.moveaxis(kernel, 1, 2).reshape(size, size, c_in, nu_cnt * resp * c_out)

    def backward(g):
        gk = g.reshape(size * size, c_in, nu_cnt, resp, c_out)
        gk = np.moveaxis(gk, 1, 3)  # (S^2, nu, resp, cin, cout)
        gk = np.moveaxis(gk, 0, 2).reshape(nu_cnt, resp, size * size, c_in * c_out)
        if group == "so2":
            d_fre, d_fim = gk[:, 0], gk[:, 1]
            dkre = np.einsum("npj,npq->njq", tre, d_fre) + np.einsum("npj,npq->njq", tim, d_fim)
            dkim = np.einsum("npj,npq->njq", tim, d_fre) - np.einsum("npj,npq->njq", tre, d_fim)
        else:
            d_gre, d_gim, d_hre, d_him = gk[:, 0], gk[:, 1], gk[:, 2], gk[:, 3]
            dkre = np.einsum("npj,npq->njq", tre, d_gre) + np.einsum("npj,npq->njq", tim, d_gim)
            dkim = -np.einsum("npj,npq->njq", tre, d_hre) - np.einsum("npj,npq->njq", tim, d_him)
        return ((kre, dkre), (kim, dkim))

    return Tensor(kernel, parents=(kre, kim), backward_fn=backward)


class BConv2D(Layer):
    """Rotation(/reflection)-invariant window responses with learnable
    complex coefficients; multi-scale when several filter sizes are given."""

    def __init__(self, c_in, c_out, filter_sizes, group="so2", cutoff_policy="full",
                 stride=1, padding="valid", seed=0, dtype=np.float64):
        ref = bconv.init_layer(
            c_in, c_out, filter_sizes, group=group, cutoff_policy=cutoff_policy,
            seed=seed, stride=stride, padding=padding,
        )
        self.spec = ref.spec
        self.group = group
        self.stride = stride
        self.padding = padding
        self.c_in = c_in
        self.c_out = c_out
        self.filter_sizes = ref.filter_sizes
        self.mask = ref.bank.mask
        q = c_in * c_out
        nu_cnt = self.spec.nu_max + 1
        kap = ref.bank.kappa.reshape(nu_cnt, self.spec.j_max, q)
        self.kre = Tensor(kap.real.astype(dtype).copy(), requires_grad=True)
        self.kim = Tensor(kap.imag.astype(dtype).copy(), requires_grad=True)
        self.transforms = [
            (
                t.grid_size,
                (t.values.real * t.pixel_area).astype(dtype),
                (t.values.imag * t.pixel_area).astype(dtype),
            )
            for t in ref.transforms
        ]

    def params(self):
        return [self.kre, self.kim]

    def _response(self, x: Tensor, transform, stride, padding) -> Tensor:
        size, tre, tim = transform
        kernel = _bconv_kernel(
            self.kre, self.kim, tre, tim, self.group, size, self.c_in, self.c_out
        )
        z = ad.conv2d(x, kernel, stride=stride, padding=padding)
        n, ho, wo, _ = z.data.shape
        z = ad.reshape(z, (n, ho, wo, -1, self.c_out))
        return ad.square_sum_axis(z, axis=3)

    def __call__(self, x: Tensor) -> Tensor:
        if len(self.transforms) == 1:
            return self._response(x, self.transforms[0], self.stride, self.padding)
        if self.padding != "same":
            raise bconv.ShapeError("multi-scale layer requires same padding")
        out = self._response(x, self.transforms[0], 1, "same")
        for transform in self.transforms[1:]:
            out = ad.maximum(out, self._response(x, transform, 1, "same"))
        if self.stride > 1:
            out = ad.stride_slice(out, self.stride)
        return out


class Conv2D(Layer):
    """Plain correlation layer (the vanilla baseline building block)."""

    def __init__(self, c_in, c_out, size, stride=1, padding="valid", seed=0,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        scale = np.sqrt(2.0 / (size * size * c_in))
        self.w = Tensor(
            (rng.standard_normal((size, size, c_in, c_out)) * scale).astype(dtype),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def params(self):
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.conv2d(x, self.w, stride=self.stride, padding=self.padding), self.b)


class Dense(Layer):
    def __init__(self, c_in, c_out, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        scale = np.sqrt(1.0 / c_in)
        self.w = Tensor(
            (rng.standard_normal((c_in, c_out)) * scale).astype(dtype),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def params(self):
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class AvgPool2(Layer):
    def __call__(self, x: Tensor) -> Tensor:
        return ad.avg_pool2(x)


class GlobalAvgPool(Layer):
    def __call__(self, x: Tensor) -> Tensor:
        return ad.global_avg_pool(x)


class ReLU(Layer):
    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(x)


class Softsign(Layer):
    def __call__(self, x: Tensor) -> Tensor:
        return ad.softsign(x)


class Standardize(Layer):
    """Per-channel running standardization (optional, off by default).

    Uses running statistics as constants in the graph (no batch-stat
    gradients); statistics update from each training batch as a side effect.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-8, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.calibration_momentum = None  # set during stat settling
        self.eps = eps
        self.training = False

    def set_training(self, training: bool) -> None:
        self.training = training

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            momentum = self.calibration_momentum or self.momentum
            axes = tuple(range(x.data.ndim - 1))
            batch_mean = x.data.mean(axis=axes)
            batch_var = x.data.var(axis=axes)
            self.mean += momentum * (batch_mean - self.mean)
            self.var += momentum * (batch_var - self.var)
        scale = 1.0 / np.sqrt(self.var + self.eps)
        shift = Tensor((-self.mean * scale).astype(x.dtype))
        return ad.add(ad.mul(x, Tensor(scale.astype(x.dtype))), shift)


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def set_training(self, training: bool) -> None:
        for layer in self.layers:
            layer.set_training(training)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
