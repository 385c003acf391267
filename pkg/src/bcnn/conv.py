"""Cross-correlation on NHWC arrays via im2col + GEMM, with the adjoints."""

from __future__ import annotations

import numpy as np


def pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1) -> np.ndarray:
    """(N,H,W,C) -> (N,Ho,Wo,kh*kw*C) patch matrix (already padded input)."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # sliding_window_view yields (N, Ho, Wo, C, kh, kw); kernel layout is (kh, kw, C)
    windows = windows[:, ::stride, ::stride]
    windows = np.moveaxis(windows, 3, 5)
    n, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(windows).reshape(n, ho, wo, kh * kw * x.shape[3])


def corr2d(
    x: np.ndarray, w: np.ndarray, stride: int = 1, padding: str = "valid"
) -> np.ndarray:
    """Cross-correlation of (N,H,W,Cin) with kernels (kh,kw,Cin,Cout)."""
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    if padding == "same":
        x = pad_same(x, kh, kw)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    cols = im2col(x, kh, kw, stride)
    return cols @ w.reshape(kh * kw * cin, cout)


def corr2d_grads(
    x: np.ndarray,
    w: np.ndarray,
    dout: np.ndarray,
    stride: int = 1,
    padding: str = "valid",
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints of corr2d: (dx, dw) for upstream gradient dout (N,Ho,Wo,Cout)."""
    kh, kw, cin, cout = w.shape
    xp = pad_same(x, kh, kw) if padding == "same" else x
    n, hp, wp, _ = xp.shape
    ho, wo = dout.shape[1], dout.shape[2]

    cols = im2col(xp, kh, kw, stride).reshape(n * ho * wo, kh * kw * cin)
    dout_mat = dout.reshape(n * ho * wo, cout)
    dw = (cols.T @ dout_mat).reshape(kh, kw, cin, cout)

    dcols = (dout_mat @ w.reshape(kh * kw * cin, cout).T).reshape(
        n, ho, wo, kh, kw, cin
    )
    dxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx_ in range(kw):
            dxp[:, dy : dy + stride * ho : stride, dx_ : dx_ + stride * wo : stride] += (
                dcols[:, :, :, dy, dx_, :]
            )
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        dxp = dxp[:, ph : hp - ph, pw : wp - pw, :]
    return dxp, dw
