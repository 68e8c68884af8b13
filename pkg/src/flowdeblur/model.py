"""Two-subnet deblurring model: flow estimator + RNN-guided restorer.

The flow subnet is a six-stage strided encoder with a skip decoder that
emits a flow field at five scales (1/64 .. 1/4 of the input) plus three
tanh-bounded gate-map heads. The deblurring subnet is a U-net over the
first frame whose encoder (or decoder, by configuration) runs the
spatially variant RNN at three scales using those gates. Channel widths
follow the reference table at base width 24 and scale linearly with
`base_channels`, rounded to multiples of 4.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import warp
from .graph import ConcatNode, ConvNode, DeconvNode, LayerGraph, RnnNode
from .tensor_io import require_tensor

FLOW_NAMES = ("flow6", "flow5", "flow4", "flow3", "flow2")
RNNW_NAMES = ("rnnw1", "rnnw2", "rnnw3")
RNN_MODES = ("rnn", "concat", "none")
RNN_PLACEMENTS = ("encoder", "decoder")

MODEL_MAGIC = b"FDBL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 8       # reference table uses 24
    n_flow_scales: int = 5
    rnn_mode: str = "rnn"
    rnn_placement: str = "encoder"
    duty_cycle: float = 1.0
    pad_multiple: int = 64       # six stride-2 stages in the flow net

    def __post_init__(self):
        if self.base_channels < 4 or self.base_channels % 4:
            raise ValueError("base_channels must be >= 4 and divisible by 4")
        if not 1 <= self.n_flow_scales <= 5:
            raise ValueError("n_flow_scales must be in [1, 5]")
        if self.rnn_mode not in RNN_MODES:
            raise ValueError(f"rnn_mode must be one of {RNN_MODES}")
        if self.rnn_placement not in RNN_PLACEMENTS:
            raise ValueError(f"rnn_placement must be one of {RNN_PLACEMENTS}")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must be in (0, 1]")


def scaled_channels(reference, base_channels):
    """Reference-table channel count rescaled by base_channels/24, in 4s."""
    return 4 * max(1, int(np.floor(reference * base_channels / 96.0 + 0.5)))


def _widths(cfg):
    ch = lambda ref: scaled_channels(ref, cfg.base_channels)
    return ch(24), ch(48), ch(96), ch(192), ch(384), ch(12)


def _gate_channels(cfg):
    """Output widths of rnnw1..3 = 4x the features they gate."""
    c1, c2, c4, _, _, _ = _widths(cfg)
    if cfg.rnn_placement == "encoder":
        return 4 * c1, 4 * c2, 4 * c4
    return 4 * c1, 4 * c2, 4 * c2


def build_flow_net(cfg):
    """Flow estimation net per the reference table (upper part)."""
    c1, c2, c4, c8, c16, chalf = _widths(cfg)
    r1, r2, r3 = _gate_channels(cfg)
    g = LayerGraph(["images"])  # both frames, channel-concatenated: 6 channels
    g.add(ConvNode("conv1", "images", 6, c1, 7, 2, "lrelu"))
    g.add(ConvNode("conv2", "conv1", c1, c2, 5, 2, "lrelu"))
    g.add(ConvNode("conv3", "conv2", c2, c4, 5, 2, "lrelu"))
    g.add(ConvNode("conv3_1", "conv3", c4, c4, 3, 1, "lrelu"))
    g.add(ConvNode("conv4", "conv3_1", c4, c8, 3, 2, "lrelu"))
    g.add(ConvNode("conv4_1", "conv4", c8, c8, 3, 1, "lrelu"))
    g.add(ConvNode("conv5", "conv4_1", c8, c8, 3, 2, "lrelu"))
    g.add(ConvNode("conv5_1", "conv5", c8, c8, 3, 1, "lrelu"))
    g.add(ConvNode("conv6", "conv5_1", c8, c16, 3, 2, "lrelu"))
    g.add(ConvNode("conv6_1", "conv6", c16, c16, 3, 1, "lrelu"))

    g.add(ConvNode("flow6", "conv6_1", c16, 2, 3, 1))
    g.add(DeconvNode("up6to5", "flow6", 2, 2))
    g.add(DeconvNode("deconv6", "conv6_1", c16, c8, "lrelu"))
    g.add(ConcatNode("cat5", ["conv5_1", "deconv6", "up6to5"]))

    g.add(ConvNode("flow5", "cat5", c8 + c8 + 2, 2, 3, 1))
    g.add(DeconvNode("up5to4", "flow5", 2, 2))
    g.add(DeconvNode("deconv5", "cat5", c8 + c8 + 2, c4, "lrelu"))
    g.add(ConcatNode("cat4", ["conv4_1", "deconv5", "up5to4"]))

    g.add(ConvNode("flow4", "cat4", c8 + c4 + 2, 2, 3, 1))
    g.add(DeconvNode("up4to3", "flow4", 2, 2))
    g.add(DeconvNode("deconv4", "cat4", c8 + c4 + 2, c2, "lrelu"))
    g.add(ConcatNode("cat3", ["conv3_1", "deconv4", "up4to3"]))

    g.add(ConvNode("flow3", "cat3", c4 + c2 + 2, 2, 3, 1))
    g.add(DeconvNode("up3to2", "flow3", 2, 2))
    g.add(DeconvNode("deconv3", "cat3", c4 + c2 + 2, c1, "lrelu"))
    g.add(ConcatNode("cat2", ["conv2", "deconv3", "up3to2"]))

    g.add(ConvNode("flow2", "cat2", c2 + c1 + 2, 2, 3, 1))
    g.add(DeconvNode("up2to1", "flow2", 2, 2))
    g.add(DeconvNode("deconv2", "cat2", c2 + c1 + 2, chalf, "lrelu"))
    g.add(ConcatNode("cat1", ["conv1", "deconv2", "up2to1"]))

    g.add(ConvNode("rnnw1", "cat1", c1 + chalf + 2, r1, 3, 1, "tanh"))
    g.add(ConvNode("rnnw2", "cat2", c2 + c1 + 2, r2, 3, 1, "tanh"))
    g.add(ConvNode("rnnw3", "cat3", c4 + c2 + 2, r3, 3, 1, "tanh"))
    return g


def _add_fusion(g, cfg, k, feat, gates, feat_channels):
    """The RNN slot at scale k: spatially variant RNN, concat+1x1 fusion,
    or a widening conv. Returns the slot's output name."""
    out_c = 4 * feat_channels
    if cfg.rnn_mode == "rnn":
        name = f"d_rnn{k}"
        g.add(RnnNode(name, feat, gates))
    elif cfg.rnn_mode == "concat":
        name = f"d_fuse{k}"
        g.add(ConcatNode(name + "_cat", [feat, gates]))
        g.add(ConvNode(name, name + "_cat", feat_channels + out_c, out_c, 1, 1))
    else:
        name = f"d_widen{k}"
        g.add(ConvNode(name, feat, feat_channels, out_c, 3, 1))
    return name


def build_deblur_net(cfg):
    """Deblurring net per the reference table (lower part).

    The encoder carries no activations (sparse features would starve the
    RNN propagation); all decoder convs/deconvs use leaky ReLU.
    """
    c1, c2, c4, _, _, chalf = _widths(cfg)
    inputs = ["image1"]
    if cfg.rnn_mode != "none":
        inputs += list(RNNW_NAMES)
    g = LayerGraph(inputs)

    if cfg.rnn_placement == "encoder":
        g.add(ConvNode("d_conv1", "image1", 3, c1, 5, 2))
        s1 = _add_fusion(g, cfg, 1, "d_conv1", "rnnw1", c1)
        g.add(ConvNode("d_conv2", s1, 4 * c1, c2, 5, 2))
        s2 = _add_fusion(g, cfg, 2, "d_conv2", "rnnw2", c2)
        g.add(ConvNode("d_conv3", s2, 4 * c2, c4, 5, 2))
        s3 = _add_fusion(g, cfg, 3, "d_conv3", "rnnw3", c4)
        g.add(ConvNode("d_conv3_2", s3, 4 * c4, c4, 5, 1, "lrelu"))
        g.add(ConvNode("d_conv3_3", "d_conv3_2", c4, c2, 5, 1, "lrelu"))
        g.add(ConcatNode("d_cat3", ["d_conv3_3", s3]))
        g.add(DeconvNode("d_deconv3", "d_cat3", c2 + 4 * c4, c2, "lrelu"))
        g.add(ConvNode("d_deconv3_1", "d_deconv3", c2, c2, 5, 1, "lrelu"))
        g.add(ConcatNode("d_cat2", ["d_deconv3_1", s2]))
        g.add(DeconvNode("d_deconv2", "d_cat2", c2 + 4 * c2, c1, "lrelu"))
        g.add(ConvNode("d_deconv2_1", "d_deconv2", c1, c1, 5, 1, "lrelu"))
        g.add(ConcatNode("d_cat1", ["d_deconv2_1", s1]))
        g.add(DeconvNode("d_deconv1", "d_cat1", c1 + 4 * c1, chalf, "lrelu"))
    else:
        # RNNs moved to the decoder stage of matching scale; encoder skips
        # connect the plain conv features instead.
        g.add(ConvNode("d_conv1", "image1", 3, c1, 5, 2))
        g.add(ConvNode("d_conv2", "d_conv1", c1, c2, 5, 2))
        g.add(ConvNode("d_conv3", "d_conv2", c2, c4, 5, 2))
        g.add(ConvNode("d_conv3_2", "d_conv3", c4, c4, 5, 1, "lrelu"))
        g.add(ConvNode("d_conv3_3", "d_conv3_2", c4, c2, 5, 1, "lrelu"))
        s3 = _add_fusion(g, cfg, 3, "d_conv3_3", "rnnw3", c2)
        g.add(ConcatNode("d_cat3", [s3, "d_conv3"]))
        g.add(DeconvNode("d_deconv3", "d_cat3", 4 * c2 + c4, c2, "lrelu"))
        g.add(ConvNode("d_deconv3_1", "d_deconv3", c2, c2, 5, 1, "lrelu"))
        s2 = _add_fusion(g, cfg, 2, "d_deconv3_1", "rnnw2", c2)
        g.add(ConcatNode("d_cat2", [s2, "d_conv2"]))
        g.add(DeconvNode("d_deconv2", "d_cat2", 4 * c2 + c2, c1, "lrelu"))
        g.add(ConvNode("d_deconv2_1", "d_deconv2", c1, c1, 5, 1, "lrelu"))
        s1 = _add_fusion(g, cfg, 1, "d_deconv2_1", "rnnw1", c1)
        g.add(ConcatNode("d_cat1", [s1, "d_conv1"]))
        g.add(DeconvNode("d_deconv1", "d_cat1", 4 * c1 + c1, chalf, "lrelu"))

    g.add(ConvNode("d_deconv1_1", "d_deconv1", chalf, chalf, 5, 1, "lrelu"))
    g.add(ConcatNode("d_cat0", ["d_deconv1_1", "image1"]))
    g.add(ConvNode("d_conv0", "d_cat0", chalf + 3, 3, 5, 1))
    return g


@dataclass
class ForwardResult:
    deblurred: np.ndarray
    flows: list            # coarsest (1/64) first, n_flow_scales entries
    rnn_maps: list         # three gate tensors, or [] without a flow net
    flow_full: np.ndarray  # finest flow; None when the flow net is absent
    _caches: tuple


class Model:
    """Both subnets plus the glue to run and differentiate them jointly."""

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.flow_net = build_flow_net(cfg) if cfg.rnn_mode != "none" else None
        self.deblur_net = build_deblur_net(cfg)
        if self.flow_net is not None:
            self.flow_net.init_params(rng, dtype)
        self.deblur_net.init_params(rng, dtype)

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        if self.flow_net is not None:
            for name, node, attr in self.flow_net.parameters():
                yield "flow." + name, node, attr
        for name, node, attr in self.deblur_net.parameters():
            yield "deblur." + name, node, attr

    def param_count(self):
        return sum(getattr(node, attr).size for _, node, attr in self.parameters())

    def summary(self):
        parts = []
        if self.flow_net is not None:
            parts += ["flow net:", self.flow_net.summary()]
        parts += ["deblur net:", self.deblur_net.summary()]
        return "\n".join(parts)

    # -- execution ----------------------------------------------------------

    def forward(self, b1, b2):
        require_tensor(b1, "b1")
        require_tensor(b2, "b2")
        if b1.shape != b2.shape:
            raise ValueError(f"frame shapes differ: {b1.shape} vs {b2.shape}")
        m = self.cfg.pad_multiple
        if b1.shape[2] % m or b1.shape[3] % m:
            raise ValueError(f"spatial dims must be multiples of {m}; "
                             "use deblur_pair for arbitrary sizes")
        if self.flow_net is not None:
            fvals, fcaches = self.flow_net.forward(
                {"images": np.concatenate([b1, b2], axis=1)})
            flows = [fvals[k] for k in FLOW_NAMES[:self.cfg.n_flow_scales]]
            rnn_maps = [fvals[k] for k in RNNW_NAMES]
            dins = {"image1": b1, **{k: fvals[k] for k in RNNW_NAMES}}
            flow_full = fvals["flow2"]
        else:
            fvals, fcaches = None, None
            flows, rnn_maps, flow_full = [], [], None
            dins = {"image1": b1}
        dvals, dcaches = self.deblur_net.forward(dins)
        return ForwardResult(deblurred=dvals["d_conv0"], flows=flows,
                             rnn_maps=rnn_maps, flow_full=flow_full,
                             _caches=(fcaches, dcaches))

    def backward(self, result, grad_deblurred, grad_flows=None):
        """Populate parameter gradients for one forward pass.

        grad_flows pairs with result.flows (coarsest first); entries may
        be None.
        """
        fcaches, dcaches = result._caches
        din_grads = self.deblur_net.backward({"d_conv0": grad_deblurred}, dcaches,
                                             skip_input_grads=("image1",))
        if self.flow_net is None:
            return
        seeds = {}
        for name, g in zip(FLOW_NAMES, grad_flows or []):
            if g is not None:
                seeds[name] = g
        for name in RNNW_NAMES:
            if name in din_grads:
                seeds[name] = din_grads[name]
        self.flow_net.backward(seeds, fcaches, skip_input_grads=("images",))


def zero_like_grads(model):
    for _, node, attr in model.parameters():
        setattr(node, "grad_w" if attr == "weight" else "grad_b", None)


def total_loss(i_hat, i_gt, b1_pyr, b2_pyr, flows, lambda_img=1.0,
               lambda_flow=None):
    """Multi-scale warping loss plus full-resolution restoration loss.

    All norms are unnormalized sums of squares. Returns
    (total, flow_term, img_term, grad_i_hat, grad_flows).
    """
    s_count = len(flows)
    if lambda_flow is None:
        lambda_flow = [1.0 / s_count] * s_count if s_count else []
    if len(lambda_flow) != s_count or len(b1_pyr) < s_count or len(b2_pyr) < s_count:
        raise ValueError("pyramids/weights do not match the flow scales")
    flow_term = 0.0
    grad_flows = []
    for s in range(s_count):
        if b1_pyr[s].shape[2:] != flows[s].shape[2:]:
            raise ValueError(f"pyramid level {s} is {b1_pyr[s].shape}, "
                             f"flow is {flows[s].shape}")
        loss_s, gf = warp.photometric_loss(b1_pyr[s], b2_pyr[s], flows[s])
        flow_term += lambda_flow[s] * loss_s
        grad_flows.append((lambda_flow[s] * gf).astype(flows[s].dtype))
    diff = i_hat.astype(np.float64) - i_gt.astype(np.float64)
    img_term = float(np.sum(diff * diff))
    grad_i_hat = (2.0 * lambda_img * diff).astype(i_hat.dtype)
    total = flow_term + lambda_img * img_term
    return total, flow_term, img_term, grad_i_hat, grad_flows


# ---------------------------------------------------------------------------
# padded inference for arbitrary sizes

def _pad_reflect(t, ph, pw):
    out = t
    while ph > 0 or pw > 0:
        dh = min(ph, out.shape[2] - 1)
        dw = min(pw, out.shape[3] - 1)
        out = np.pad(out, ((0, 0), (0, 0), (0, dh), (0, dw)), mode="reflect")
        ph -= dh
        pw -= dw
    return out


def deblur_pair(model, b1, b2):
    """Pad both frames to the stride multiple, run, crop back.

    Returns (restored, flow_full) where flow_full is the finest flow
    upsampled to full resolution (values scaled by 4), or None when the
    model has no flow net.
    """
    from .tensor_io import bilinear_resize
    n, c, h, w = b1.shape
    m = model.cfg.pad_multiple
    ph = (-h) % m
    pw = (-w) % m
    res = model.forward(_pad_reflect(b1, ph, pw), _pad_reflect(b2, ph, pw))
    restored = res.deblurred[:, :, :h, :w]
    flow_full = None
    if res.flow_full is not None:
        up = bilinear_resize(res.flow_full, h + ph, w + pw) * 4.0
        flow_full = up[:, :, :h, :w].astype(np.float32)
    return restored, flow_full


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config JSON, named float32 blobs

class CheckpointError(ValueError):
    pass


def save_model(model, path):
    records = []
    for name, node, attr in model.parameters():
        value = np.ascontiguousarray(getattr(node, attr), dtype="<f4")
        records.append((name, value))
    cfg_blob = json.dumps(asdict(model.cfg), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(np.array([MODEL_VERSION, len(cfg_blob)], dtype="<u4").tobytes())
        f.write(cfg_blob)
        f.write(np.array([len(records)], dtype="<u4").tobytes())
        for name, value in records:
            nb = name.encode("utf-8")
            f.write(np.array([len(nb)], dtype="<u4").tobytes())
            f.write(nb)
            f.write(np.array([value.ndim] + list(value.shape), dtype="<u4").tobytes())
            f.write(value.tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated at byte {len(self.data)} "
                                  f"(needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = np.frombuffer(self.take(4 * count), dtype="<u4")
        return int(vals[0]) if count == 1 else [int(v) for v in vals]


def load_model(path):
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(4) != MODEL_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    version = r.u32()
    if version != MODEL_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cfg = ModelConfig(**json.loads(r.take(r.u32()).decode("utf-8")))
    model = Model(cfg, seed=0, dtype=np.float32)
    expected = {name: (node, attr) for name, node, attr in model.parameters()}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32(ndim)) if ndim > 1 else (r.u32(),)
        value = np.frombuffer(r.take(4 * int(np.prod(shape))), dtype="<f4")
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        node, attr = expected.pop(name)
        if getattr(node, attr).shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, expected "
                                  f"{getattr(node, attr).shape}")
        setattr(node, attr, value.reshape(shape).copy())
    if expected:
        raise CheckpointError(f"{path}: missing parameters {sorted(expected)}")
    return model
