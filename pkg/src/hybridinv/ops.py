"""Differentiable array primitives for the layered generator.

Every forward op has a matching VJP (vector-Jacobian product) so gradients
can be propagated by hand without an autodiff framework. Conventions:
single image, channel-first arrays `(C, H, W)`, dtype preserved.
"""

from __future__ import annotations

import numpy as np


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padding 3x3 convolution. x: (Ci,H,W), w: (Co,Ci,3,3), b: (Co,)."""
    ci, h, wd = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    y = np.empty((co, h, wd), dtype=x.dtype)
    y[:] = b[:, None, None]
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy:dy + h, dx:dx + wd].reshape(ci, h * wd)
            y += (w[:, :, dy, dx] @ patch).reshape(co, h, wd)
    return y


def conv3x3_vjp(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients of conv3x3 wrt input, weights and bias."""
    ci, h, wd = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    gy2 = gy.reshape(co, h * wd)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy:dy + h, dx:dx + wd].reshape(ci, h * wd)
            gw[:, :, dy, dx] = gy2 @ patch.T
            gxp[:, dy:dy + h, dx:dx + wd] += (w[:, :, dy, dx].T @ gy2).reshape(ci, h, wd)
    gx = gxp[:, 1:-1, 1:-1]
    gb = gy.sum(axis=(1, 2))
    return gx, gw, gb


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise convolution. x: (Ci,H,W), w: (Co,Ci), b: (Co,)."""
    ci, h, wd = x.shape
    y = (w @ x.reshape(ci, h * wd)).reshape(w.shape[0], h, wd)
    return y + b[:, None, None]


def conv1x1_vjp(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    ci, h, wd = x.shape
    co = w.shape[0]
    gy2 = gy.reshape(co, h * wd)
    gx = (w.T @ gy2).reshape(ci, h, wd)
    gw = gy2 @ x.reshape(ci, h * wd).T
    gb = gy.sum(axis=(1, 2))
    return gx, gw, gb


def upsample2x(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour x2 upsample of (C,H,W)."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2x_vjp(gy: np.ndarray) -> np.ndarray:
    c, h2, w2 = gy.shape
    return gy.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))


def tanh_vjp(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """VJP of tanh given its *output* y."""
    return gy * (1.0 - y * y)


def avgpool_field(field: np.ndarray, factor: int) -> np.ndarray:
    """Block-average a (H,W) field by an integer factor (must divide)."""
    h, w = field.shape
    if h % factor or w % factor:
        raise ValueError(f"pool factor {factor} does not divide {h}x{w}")
    return field.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def avgpool_field_vjp(gy: np.ndarray, factor: int) -> np.ndarray:
    """Adjoint of avgpool_field: spread each cell gradient over its block."""
    spread = np.repeat(np.repeat(gy, factor, axis=0), factor, axis=1)
    return spread / (factor * factor)


def upsample_field(field: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upsample of a (H,W) field."""
    return np.repeat(np.repeat(field, factor, axis=0), factor, axis=1)


def upsample_field_vjp(gy: np.ndarray, factor: int) -> np.ndarray:
    h, w = gy.shape
    return gy.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
