"""Array-level forward/backward primitives on (batch, channels, height, width) tensors."""
from __future__ import annotations

import numpy as np


def im2col3(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 neighbourhoods: (N, C, H, W) -> (N, C*9, H*W)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, 3 * i + j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(n, c * 9, h * w)


def col2im3(cols: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Adjoint of :func:`im2col3`."""
    n, c, h, w = shape
    cols = cols.reshape(n, c, 9, h, w)
    xp = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            xp[:, :, i : i + h, j : j + w] += cols[:, :, 3 * i + j]
    return xp[:, :, 1:-1, 1:-1]


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Same-padded stride-1 convolution (cross-correlation) for 3x3 or 1x1 kernels."""
    n, _, h, w = x.shape
    cout, _, kh, _ = weight.shape
    if kh == 1:
        cols = x.reshape(n, x.shape[1], h * w)
    else:
        cols = im2col3(x)
    out = np.matmul(weight.reshape(cout, -1), cols) + bias[None, :, None]
    return out.reshape(n, cout, h, w), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, weight: np.ndarray, x_shape):
    n, cout, h, w = dout.shape
    d = dout.reshape(n, cout, h * w)
    dw = d[0] @ cols[0].T
    for i in range(1, n):
        dw += d[i] @ cols[i].T
    dw = dw.reshape(weight.shape)
    db = d.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(cout, -1).T, d)
    if weight.shape[2] == 1:
        dx = dcols.reshape(x_shape)
    else:
        dx = col2im3(dcols, x_shape)
    return dx, dw, db


def lrelu_forward(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def lrelu_backward(dout: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    # the kink x == 0 takes the negative-side slope
    return np.where(x > 0, dout, slope * dout)


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(dout: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dout: np.ndarray) -> np.ndarray:
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
