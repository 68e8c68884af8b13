"""Differentiable layer set: conv, transposed conv, activations, Adam, Xavier.

Convolutions are cross-correlations computed as im2col + GEMM; their
input gradients scatter back through the same tap bookkeeping, so the
conv/deconv pair is an exact adjoint (deconv forward IS the conv input
gradient). Everything preserves the input dtype: float32 for training,
float64 for finite-difference checks.
"""

from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.1


# ---------------------------------------------------------------------------
# im2col plumbing

def _im2col(xp, kh, kw, stride):
    """Patch matrix (n*ho*wo, c*kh*kw) from a padded (n,c,hp,wp) input."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw), writeable=False)
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3))
    return cols.reshape(n * ho * wo, c * kh * kw), ho, wo


def _col2im(gcols, x_shape, kh, kw, stride, pad, ho, wo):
    """Scatter-add column gradients back onto the (unpadded) input."""
    n, c, h, w = x_shape
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gcols.dtype)
    g6 = gcols.reshape(n, ho, wo, c, kh, kw)
    for ki in range(kh):
        for kj in range(kw):
            gxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                g6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])
    return gxp


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


# ---------------------------------------------------------------------------
# convolution, pad = floor(k/2), stride in {1, 2}

def conv2d_forward(x, weight, bias, stride):
    """y[n,o,i,j] = sum_{c,ki,kj} w[o,c,ki,kj] x[n,c,i*s+ki-p, j*s+kj-p] + b[o]."""
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {c}")
    pad = kh // 2
    cols, ho, wo = _im2col(_pad(x, pad), kh, kw, stride)
    y = cols @ weight.reshape(o, -1).T
    y += bias
    n = x.shape[0]
    y = np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    return y, (cols, x.shape, ho, wo, stride)


def conv2d_backward(grad_y, weight, cache, need_input_grad=True):
    cols, x_shape, ho, wo, stride = cache
    o, c, kh, kw = weight.shape
    if grad_y.shape[1] != o or grad_y.shape[2:] != (ho, wo):
        raise ValueError(f"stale cache: grad {grad_y.shape} vs output ({o},{ho},{wo})")
    gm = np.ascontiguousarray(grad_y.transpose(0, 2, 3, 1)).reshape(-1, o)
    grad_b = gm.sum(axis=0)
    grad_w = (gm.T @ cols).reshape(weight.shape)
    grad_x = None
    if need_input_grad:
        gcols = gm @ weight.reshape(o, -1)
        grad_x = _col2im(gcols, x_shape, kh, kw, stride, kh // 2, ho, wo)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# transposed convolution, kernel 4 / stride 2 / pad 1: exact 2x upsampling
# weight layout (in_c, out_c, 4, 4) = the weight of the conv it transposes

DECONV_K = 4
DECONV_STRIDE = 2
DECONV_PAD = 1


def deconv2d_forward(x, weight, bias):
    n, cin, h, w = x.shape
    if weight.shape[0] != cin:
        raise ValueError(f"input has {cin} channels, weight expects {weight.shape[0]}")
    cout = weight.shape[1]
    ho, wo = 2 * h, 2 * w
    xm = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(-1, cin)
    gcols = xm @ weight.reshape(cin, -1)
    y = _col2im(gcols, (n, cout, ho, wo), DECONV_K, DECONV_K, DECONV_STRIDE,
                DECONV_PAD, h, w)
    y += bias[None, :, None, None]
    return y, (x, xm)


def deconv2d_backward(grad_y, weight, cache):
    x, xm = cache
    n, cin, h, w = x.shape
    cout = weight.shape[1]
    if grad_y.shape != (n, cout, 2 * h, 2 * w):
        raise ValueError(f"stale cache: grad {grad_y.shape} vs output "
                         f"{(n, cout, 2 * h, 2 * w)}")
    grad_b = grad_y.sum(axis=(0, 2, 3))
    cols_g, ho, wo = _im2col(_pad(grad_y, DECONV_PAD), DECONV_K, DECONV_K,
                             DECONV_STRIDE)
    grad_x = (cols_g @ weight.reshape(cin, -1).T).reshape(n, ho, wo, cin)
    grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))
    grad_w = (xm.T @ cols_g).reshape(weight.shape)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# elementwise activations

def leaky_relu_forward(x):
    y = np.where(x >= 0, x, LEAKY_SLOPE * x)
    return y, x


def leaky_relu_backward(grad_y, cache):
    return grad_y * np.where(cache >= 0, 1.0, LEAKY_SLOPE).astype(grad_y.dtype)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(grad_y, cache):
    return grad_y * (1.0 - cache * cache)


# ---------------------------------------------------------------------------
# channel concat / split

def concat_channels(tensors):
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ValueError(f"spatial/batch mismatch in concat: {t.shape} vs {base}")
    return np.concatenate(tensors, axis=1)


def split_channels(t, sizes):
    if sum(sizes) != t.shape[1]:
        raise ValueError(f"split sizes {sizes} do not sum to {t.shape[1]} channels")
    out = []
    start = 0
    for s in sizes:
        out.append(t[:, start:start + s])
        start += s
    return out


# ---------------------------------------------------------------------------
# optimizer and init

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, value):
        return cls(m=np.zeros_like(value), v=np.zeros_like(value))


def adam_step(value, grad, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=1e-6):
    """Bias-corrected Adam with classic L2 weight decay folded into the gradient."""
    if grad.shape != value.shape:
        raise ValueError(f"grad shape {grad.shape} != param shape {value.shape}")
    g = grad if not weight_decay else grad + value * grad.dtype.type(weight_decay)
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype)


def xavier_init(shape, rng, dtype=np.float32):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); fans from dims 1 and 0."""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = shape[1] * receptive if len(shape) > 1 else fan_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
