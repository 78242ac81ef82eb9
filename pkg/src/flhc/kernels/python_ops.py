"""Pure-numpy implementations of the hot training kernels.

These are the fallback used when the compiled extension is unavailable.
Convolutions are stride-1 with same padding and are evaluated as a matrix
product over an im2col buffer; pooling is 2x2 with stride 2. All arrays are
float64 and laid out NHWC, weights (KH, KW, Cin, Cout).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_NAME = "python"


def _im2col(padded: np.ndarray, kh: int, kw: int, out_h: int, out_w: int) -> np.ndarray:
    """Return a (B*out_h*out_w, kh*kw*C) copy of all receptive fields."""
    b, _, _, c = padded.shape
    s0, s1, s2, s3 = padded.strides
    windows = as_strided(
        padded,
        shape=(b, out_h, out_w, kh, kw, c),
        strides=(s0, s1, s2, s1, s2, s3),
        writeable=False,
    )
    return windows.reshape(b * out_h * out_w, kh * kw * c)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padding stride-1 correlation of x (B,H,W,Cin) with w (KH,KW,Cin,Cout)."""
    bs, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ValueError(f"channel mismatch: input {cin}, weights {wcin}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(padded, kh, kw, h, wd)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(bs, h, wd, cout)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, compute_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    bs, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2

    dy_flat = dy.reshape(bs * h * wd, cout)
    db = dy_flat.sum(axis=0)

    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(padded, kh, kw, h, wd)
    dw = (cols.T @ dy_flat).reshape(kh, kw, cin, cout)

    if not compute_dx:
        return None, dw, db

    dcols = dy_flat @ w.reshape(kh * kw * cin, cout).T
    dcols = dcols.reshape(bs, h, wd, kh, kw, cin)
    dpadded = np.zeros_like(padded)
    for ki in range(kh):
        for kj in range(kw):
            dpadded[:, ki : ki + h, kj : kj + wd, :] += dcols[:, :, :, ki, kj, :]
    dx = dpadded[:, ph : ph + h, pw : pw + wd, :]
    return np.ascontiguousarray(dx), dw, db


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pooling; returns the output and per-cell argmax in 0..3.

    Ties resolve to the first element in window order (0,0),(0,1),(1,0),(1,1).
    """
    bs, h, wd, c = x.shape
    if h % 2 or wd % 2:
        raise ValueError(f"pooling needs even spatial dims, got {h}x{wd}")
    v = x.reshape(bs, h // 2, 2, wd // 2, 2, c)
    windows = np.stack(
        (v[:, :, 0, :, 0, :], v[:, :, 0, :, 1, :], v[:, :, 1, :, 0, :], v[:, :, 1, :, 1, :]),
        axis=-1,
    )
    out = windows.max(axis=-1)
    switches = windows.argmax(axis=-1).astype(np.uint8)
    return out, switches


def maxpool2_backward(dy: np.ndarray, switches: np.ndarray) -> np.ndarray:
    """Scatter pooled gradients back to the positions recorded in switches."""
    bs, oh, ow, c = dy.shape
    dx = np.zeros((bs, oh * 2, ow * 2, c))
    dv = dx.reshape(bs, oh, 2, ow, 2, c)
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        mask = switches == k
        np.copyto(dv[:, :, di, :, dj, :], dy, where=mask)
    return dx
