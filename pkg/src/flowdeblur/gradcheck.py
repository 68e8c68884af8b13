"""Central finite-difference checks for every differentiable operator.

All checks run in float64. A check perturbs a random subset of input
elements, compares the analytic gradient against (f(x+h) - f(x-h)) / 2h,
and reports the worst relative error, where each probe is normalized by
max(|analytic|, |numeric|, 1e-3 * gradient scale) so near-zero entries
do not inflate the ratio.
"""

import numpy as np

from . import layers, svrnn, warp
from .model import Model, ModelConfig, total_loss
from .synth import gen_flow_field, make_texture
from .tensor_io import downsample_pyramid

OP_TOLERANCE = 1e-4
PIPELINE_TOLERANCE = 1e-3


def _rel_errors(analytic, numeric, scale):
    floor = max(1e-3 * scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def probe_tensor(loss_fn, x, grad, rng, n_probes=12, h=1e-6, idx_pool=None):
    """Worst relative FD error over randomly probed elements of x.

    idx_pool optionally restricts the probed flat indices (e.g. to
    interior pixels)."""
    xf = x.reshape(-1)
    if not np.shares_memory(xf, x):
        raise ValueError("probe target must be a contiguous array, not a view copy")
    pool = np.asarray(idx_pool) if idx_pool is not None else np.arange(x.size)
    flat_idx = rng.choice(pool, size=min(n_probes, pool.size), replace=False)
    numeric = np.empty(len(flat_idx))
    analytic = np.empty(len(flat_idx))
    gf = grad.reshape(-1)
    for i, j in enumerate(flat_idx):
        orig = xf[j]
        xf[j] = orig + h
        lp = loss_fn()
        xf[j] = orig - h
        lm = loss_fn()
        xf[j] = orig
        numeric[i] = (lp - lm) / (2 * h)
        analytic[i] = gf[j]
    scale = max(np.abs(grad).max(), np.abs(numeric).max())
    return float(_rel_errors(analytic, numeric, scale).max())


def check_conv(seed, kernel=3, stride=1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 8, 8))
    w = rng.standard_normal((4, 3, kernel, kernel)) * 0.5
    b = rng.standard_normal(4) * 0.1
    y0, _ = layers.conv2d_forward(x, w, b, stride)
    gy = rng.standard_normal(y0.shape)
    loss = lambda: float(np.sum(layers.conv2d_forward(x, w, b, stride)[0] * gy))
    _, cache = layers.conv2d_forward(x, w, b, stride)
    gx, gw, gb = layers.conv2d_backward(gy, w, cache)
    worst = probe_tensor(loss, x, gx, rng)
    worst = max(worst, probe_tensor(loss, w, gw, rng))
    worst = max(worst, probe_tensor(loss, b, gb, rng, n_probes=4))
    return worst


def check_deconv(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 5, 6))
    w = rng.standard_normal((3, 4, 4, 4)) * 0.5
    b = rng.standard_normal(4) * 0.1
    y0, _ = layers.deconv2d_forward(x, w, b)
    gy = rng.standard_normal(y0.shape)
    loss = lambda: float(np.sum(layers.deconv2d_forward(x, w, b)[0] * gy))
    _, cache = layers.deconv2d_forward(x, w, b)
    gx, gw, gb = layers.deconv2d_backward(gy, w, cache)
    worst = probe_tensor(loss, x, gx, rng)
    worst = max(worst, probe_tensor(loss, w, gw, rng))
    worst = max(worst, probe_tensor(loss, b, gb, rng, n_probes=4))
    return worst


def check_svrnn(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((2, 3, 8, 8))
    w = rng.uniform(-0.95, 0.95, (2, 12, 8, 8))
    g0, _ = svrnn.svrnn_forward(f, w)
    gy = rng.standard_normal(g0.shape)
    loss = lambda: float(np.sum(svrnn.svrnn_forward(f, w)[0] * gy))
    _, cache = svrnn.svrnn_forward(f, w)
    gf, gw = svrnn.svrnn_backward(gy, f, w, cache)
    worst = probe_tensor(loss, f, gf, rng)
    worst = max(worst, probe_tensor(loss, w, gw, rng))
    return worst


def check_warp(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.0, 1.0, (1, 3, 9, 9))
    # keep sample positions fractional and inside the frame
    flow = rng.uniform(0.3, 1.7, (1, 2, 9, 9)) * np.where(rng.random((1, 2, 9, 9)) < 0.5, -1, 1)
    flow = np.clip(flow, -2.0, 2.0)
    w0, _ = warp.bilinear_warp(img, flow)
    gy = rng.standard_normal(w0.shape)
    loss = lambda: float(np.sum(warp.bilinear_warp(img, flow)[0] * gy))
    _, cache = warp.bilinear_warp(img, flow)
    gimg, gflow = warp.warp_backward(gy, cache)
    # probe interior pixels only: samples stay off integer grid lines and
    # away from the clamped border
    mask = np.zeros(flow.shape, dtype=bool)
    mask[:, :, 3:6, 3:6] = True
    worst = probe_tensor(loss, flow, gflow, rng, h=1e-5,
                         idx_pool=np.nonzero(mask.reshape(-1))[0])
    worst = max(worst, probe_tensor(loss, img, gimg, rng))
    return worst


def _pipeline_setup(seed):
    cfg = ModelConfig(base_channels=4, n_flow_scales=2)
    model = Model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    gt = make_texture(64, 64, seed + 2).astype(np.float64)
    b1 = gt + 0.05 * rng.standard_normal(gt.shape)
    flow = gen_flow_field("smooth", 3.0, 64, 64, seed + 3).astype(np.float64)
    b2, _ = warp.bilinear_warp(b1, -flow)
    b1 = np.clip(b1, 0.0, 1.0)
    b2 = np.clip(b2, 0.0, 1.0)
    pyr1 = downsample_pyramid(b1, 6)
    pyr2 = downsample_pyramid(b2, 6)
    s = cfg.n_flow_scales
    b1s = [pyr1[5 - i] for i in range(s)]
    b2s = [pyr2[5 - i] for i in range(s)]

    def loss_value():
        res = model.forward(b1, b2)
        total, _, _, _, _ = total_loss(res.deblurred, gt, b1s, b2s, res.flows)
        return total

    def loss_and_grads():
        res = model.forward(b1, b2)
        total, _, _, gih, gfl = total_loss(res.deblurred, gt, b1s, b2s, res.flows)
        model.backward(res, gih, gfl)
        return total

    return model, loss_value, loss_and_grads


def check_pipeline(seed, n_params=10, h=1e-5):
    """End-to-end FD probe of the full loss on the miniature configuration."""
    model, loss_value, loss_and_grads = _pipeline_setup(seed)
    loss_and_grads()
    params = list(model.parameters())
    rng = np.random.default_rng(seed + 9)
    numeric = []
    analytic = []
    for _ in range(n_params):
        name, node, attr = params[int(rng.integers(len(params)))]
        value = getattr(node, attr)
        grad = node.grad_w if attr == "weight" else node.grad_b
        j = int(rng.integers(value.size))
        vf = value.reshape(-1)
        orig = vf[j]
        vf[j] = orig + h
        lp = loss_value()
        vf[j] = orig - h
        lm = loss_value()
        vf[j] = orig
        numeric.append((lp - lm) / (2 * h))
        analytic.append(grad.reshape(-1)[j])
    numeric = np.array(numeric)
    analytic = np.array(analytic)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max())
    return float(_rel_errors(analytic, numeric, scale).max())


CHECKS = {
    "conv": (check_conv, OP_TOLERANCE),
    "deconv": (check_deconv, OP_TOLERANCE),
    "svrnn": (check_svrnn, OP_TOLERANCE),
    "warp": (check_warp, OP_TOLERANCE),
    "pipeline": (check_pipeline, PIPELINE_TOLERANCE),
}


def run_check(op, seed=0):
    """Returns (worst_rel_err, tolerance) for the named operator suite."""
    if op not in CHECKS:
        raise ValueError(f"unknown gradcheck op {op!r}; choose from {sorted(CHECKS)}")
    fn, tol = CHECKS[op]
    return fn(seed), tol
