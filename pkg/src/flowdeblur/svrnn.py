"""Spatially variant RNN: four one-directional scans with per-pixel gates.

Each output pixel follows g = (1 - w) * f + w * g_prev along its scan
line, with zero state entering at the line boundary. The four direction
blocks (left-to-right, right-to-left, top-to-bottom, bottom-to-top) are
concatenated channel-wise, so C input channels and 4C gate maps produce
4C output channels. Lines are independent; the recurrence within a line
is strictly sequential.
"""

from dataclasses import dataclass

import numpy as np

DIRECTIONS = ("left_right", "right_left", "top_bottom", "bottom_top")


@dataclass
class SvrnnCache:
    f: np.ndarray
    w: np.ndarray
    g: np.ndarray


def _check_shapes(f, w):
    if f.ndim != 4 or w.ndim != 4:
        raise ValueError("svrnn expects 4-d (n, c, h, w) arrays")
    n, c, h, wd = f.shape
    if w.shape != (n, 4 * c, h, wd):
        raise ValueError(f"weight maps must have shape {(n, 4 * c, h, wd)} "
                         f"(4x feature channels), got {w.shape}")
    return c


def _dir_view(t, d):
    """View of t arranged so direction d scans along the last axis, ascending."""
    if d == 0:                    # left -> right
        return t
    if d == 1:                    # right -> left
        return t[..., ::-1]
    if d == 2:                    # top -> bottom
        return t.swapaxes(2, 3)
    return t.swapaxes(2, 3)[..., ::-1]   # bottom -> top


def _scan_forward(f, w, out):
    """out[..., j] = (1-w[...,j]) * f[...,j] + w[...,j] * out[..., j-1]."""
    length = f.shape[-1]
    drive = (1.0 - w) * f
    out[..., 0] = drive[..., 0]
    for j in range(1, length):
        out[..., j] = drive[..., j] + w[..., j] * out[..., j - 1]


def svrnn_forward(f, w):
    """Run all four directional scans; returns (g, cache) with g of 4C channels."""
    c = _check_shapes(f, w)
    g = np.empty_like(w)
    for d in range(4):
        wd = _dir_view(w[:, d * c:(d + 1) * c], d)
        gd = _dir_view(g[:, d * c:(d + 1) * c], d)
        _scan_forward(_dir_view(f, d), wd, gd)
    return g, SvrnnCache(f=f, w=w, g=g)


def svrnn_backward(grad_g, f, w, cache):
    """Adjoint of the forward scans: a reverse-direction recurrence.

    a_j = grad_g_j + w_{j+1} * a_{j+1}; grad_f_j = (1-w_j) * a_j;
    grad_w_j = a_j * (g_{j-1} - f_j).
    """
    c = _check_shapes(f, w)
    if cache.g.shape != w.shape or cache.f.shape != f.shape:
        raise ValueError("stale cache: shapes do not match the forward call")
    if grad_g.shape != w.shape:
        raise ValueError(f"grad_g must have shape {w.shape}, got {grad_g.shape}")
    grad_f = np.zeros_like(f)
    grad_w = np.empty_like(w)
    for d in range(4):
        sl = slice(d * c, (d + 1) * c)
        fd = _dir_view(f, d)
        wd = _dir_view(w[:, sl], d)
        gd = _dir_view(cache.g[:, sl], d)
        ggd = _dir_view(grad_g[:, sl], d)
        gwd = _dir_view(grad_w[:, sl], d)
        length = fd.shape[-1]
        a = np.empty_like(wd)
        a[..., length - 1] = ggd[..., length - 1]
        for j in range(length - 2, -1, -1):
            a[..., j] = ggd[..., j] + wd[..., j + 1] * a[..., j + 1]
        _dir_view(grad_f, d)[...] += (1.0 - wd) * a
        gwd[..., 0] = -a[..., 0] * fd[..., 0]  # g_{-1} = 0
        gwd[..., 1:] = a[..., 1:] * (gd[..., :-1] - fd[..., 1:])
    return grad_f, grad_w
