"""Shared fixtures: cached basis specs and a real handwritten test digit."""

import numpy as np
import pytest

from bcnn.basis import build_basis, build_transform_tensor


@pytest.fixture(scope="session")
def spec9_full():
    return build_basis(9, "full")


@pytest.fixture(scope="session")
def tensor9_full(spec9_full):
    return build_transform_tensor(spec9_full)


@pytest.fixture(scope="session")
def spec9_half():
    return build_basis(9, "half")


@pytest.fixture(scope="session")
def tensor9_half(spec9_half):
    return build_transform_tensor(spec9_half)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain separable bilinear resize (test-local reference implementation)."""
    h, w = img.shape
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x0 + 1)]
    c = img[np.ix_(y0 + 1, x0)]
    d = img[np.ix_(y0 + 1, x0 + 1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)


@pytest.fixture(scope="session")
def digit28() -> np.ndarray:
    """A real handwritten digit laid out MNIST-style: 20x20 content in 28x28."""
    from sklearn.datasets import load_digits

    raw = load_digits().images[3] / 16.0  # a "3", values in [0, 1]
    content = bilinear_resize(raw, 20, 20)
    out = np.zeros((28, 28))
    out[4:24, 4:24] = content
    return out


def pad_to_odd(img: np.ndarray) -> np.ndarray:
    """Pad an even-sized square image by one zero row/column (bottom, right)."""
    if img.shape[0] % 2 == 1:
        return img
    size = img.shape[0] + 1
    out = np.zeros((size, size), dtype=img.dtype)
    out[: img.shape[0], : img.shape[1]] = img
    return out
