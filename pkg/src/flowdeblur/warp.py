"""Backward warping by a flow field, with exact gradients.

Convention: a position in image 1 plus its flow gives the matching
position in image 2, so warping gathers from the second image:
warped(x, y) = img(x + F_p, y + F_q), clamp-to-edge. The photometric
loss compares that warp of B2 against B1 with an unnormalized sum of
squared differences.
"""

from dataclasses import dataclass

import numpy as np

from .tensor_io import require_flow, require_tensor


@dataclass
class WarpCache:
    img: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    in_x: np.ndarray  # sample not clamped along x
    in_y: np.ndarray
    shape: tuple


def bilinear_warp(img, flow):
    """Warp img by flow; returns (warped, cache) for the backward pass."""
    require_tensor(img, "image")
    require_flow(flow)
    if img.shape[0] != flow.shape[0] or img.shape[2:] != flow.shape[2:]:
        raise ValueError(f"image dims {img.shape} do not match flow dims {flow.shape}")
    n, c, h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs[None] + flow[:, 0]
    sy = ys[None] + flow[:, 1]
    in_x = (sx >= 0.0) & (sx <= w - 1.0)
    in_y = (sy >= 0.0) & (sy <= h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(sx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(sy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(img.dtype)
    fy = (sy - y0).astype(img.dtype)
    flat = img.reshape(n, c, h * w)
    idx = lambda yy, xx: (yy * w + xx)[:, None]  # broadcast over channels
    v00 = np.take_along_axis(flat, idx(y0, x0).reshape(n, 1, h * w), axis=2).reshape(n, c, h, w)
    v01 = np.take_along_axis(flat, idx(y0, x1).reshape(n, 1, h * w), axis=2).reshape(n, c, h, w)
    v10 = np.take_along_axis(flat, idx(y1, x0).reshape(n, 1, h * w), axis=2).reshape(n, c, h, w)
    v11 = np.take_along_axis(flat, idx(y1, x1).reshape(n, 1, h * w), axis=2).reshape(n, c, h, w)
    wfx = fx[:, None]
    wfy = fy[:, None]
    warped = (v00 * (1 - wfx) * (1 - wfy) + v01 * wfx * (1 - wfy)
              + v10 * (1 - wfx) * wfy + v11 * wfx * wfy)
    cache = WarpCache(img=img, x0=x0, x1=x1, y0=y0, y1=y1, fx=fx, fy=fy,
                      in_x=in_x, in_y=in_y, shape=img.shape)
    return warped, cache


def warp_backward(grad_warped, cache):
    """Exact gradients of bilinear_warp w.r.t. image and flow.

    grad_flow is zero wherever the sample was clamped in that axis.
    """
    if grad_warped.shape != cache.shape:
        raise ValueError(f"stale cache: grad shape {grad_warped.shape} does not "
                         f"match forward shape {cache.shape}")
    n, c, h, w = cache.shape
    img = cache.img
    x0, x1, y0, y1 = cache.x0, cache.x1, cache.y0, cache.y1
    fx, fy = cache.fx, cache.fy
    wfx = fx[:, None]
    wfy = fy[:, None]

    grad_img = np.zeros_like(img)
    gflat = grad_img.reshape(n, c, h * w)
    for yy, xx, wt in ((y0, x0, (1 - wfx) * (1 - wfy)), (y0, x1, wfx * (1 - wfy)),
                       (y1, x0, (1 - wfx) * wfy), (y1, x1, wfx * wfy)):
        tgt = np.broadcast_to((yy * w + xx)[:, None], (n, c, h, w)).reshape(n, c, h * w)
        np.add.at(gflat, (np.arange(n)[:, None, None], np.arange(c)[None, :, None], tgt),
                  (grad_warped * wt).reshape(n, c, h * w))

    flat = img.reshape(n, c, h * w)
    take = lambda yy, xx: np.take_along_axis(
        flat, (yy * w + xx)[:, None].reshape(n, 1, h * w), axis=2).reshape(n, c, h, w)
    v00, v01, v10, v11 = take(y0, x0), take(y0, x1), take(y1, x0), take(y1, x1)
    # d(warped)/d(sample x) and /d(sample y)
    dx = (1 - wfy) * (v01 - v00) + wfy * (v11 - v10)
    dy = (1 - wfx) * (v10 - v00) + wfx * (v11 - v01)
    gp = (grad_warped * dx).sum(axis=1) * cache.in_x
    gq = (grad_warped * dy).sum(axis=1) * cache.in_y
    grad_flow = np.stack([gp, gq], axis=1)
    return grad_img, grad_flow


def photometric_loss(b1, b2, flow):
    """Sum of squared differences between warp(b2, flow) and b1.

    Returns (loss, grad_flow); the gradient runs through warp_backward.
    """
    require_tensor(b1, "b1")
    require_tensor(b2, "b2")
    if b1.shape != b2.shape:
        raise ValueError(f"b1 {b1.shape} and b2 {b2.shape} must match")
    warped, cache = bilinear_warp(b2, flow)
    diff = warped - b1
    loss = float(np.sum(diff.astype(np.float64) ** 2))
    _, grad_flow = warp_backward(2.0 * diff, cache)
    return loss, grad_flow
