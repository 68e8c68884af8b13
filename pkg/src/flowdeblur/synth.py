"""Synthetic training data: flow fields, blurred pairs, augmentation.

Every sample is generated from a per-index RNG stream derived from
(seed, index), so datasets are byte-reproducible regardless of
generation order. The stored blurry first frame is rendered from the
stored ground truth and flow after cropping, which makes the closed
loop `reblur(gt, flow) ~ b1` hold to 8-bit quantization for every
sample.
"""

import os
from dataclasses import dataclass

import numpy as np

from .blur import BlurConfig, reblur
from .tensor_io import bilinear_resize, load_flo, load_image, save_flo, save_image
from .warp import bilinear_warp

FLOW_KINDS = ("affine", "smooth", "objects")
MANIFEST = "manifest.csv"
MAX_FLOW_MAG = 20.0  # generator stays inside the validated blur range


@dataclass
class Sample:
    b1: np.ndarray
    b2: np.ndarray
    gt: np.ndarray
    flow: np.ndarray


def affine_flow(h, w, a11=0.0, a12=0.0, a21=0.0, a22=0.0, tx=0.0, ty=0.0):
    """Global affine motion about the image center: F = A (p - c) + t."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs -= (w - 1) / 2.0
    ys -= (h - 1) / 2.0
    fp = a11 * xs + a12 * ys + tx
    fq = a21 * xs + a22 * ys + ty
    return np.stack([fp, fq])[None].astype(np.float32)


def _rescale_to(flow, max_mag):
    mag = np.hypot(flow[:, 0], flow[:, 1]).max()
    if mag == 0.0 or max_mag == 0.0:
        return np.zeros_like(flow)
    return (flow * (max_mag / mag)).astype(np.float32)


def _smooth_flow(rng, max_mag, h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    xn = xs / max(w - 1, 1)
    yn = ys / max(h - 1, 1)
    comps = []
    for _ in range(2):
        field = np.zeros((h, w), dtype=np.float64)
        for _ in range(int(rng.integers(4, 9))):
            fx, fy = rng.uniform(0.3, 2.5, size=2)
            phx, phy = rng.uniform(0.0, 2 * np.pi, size=2)
            amp = rng.uniform(0.3, 1.0)
            field += amp * np.sin(2 * np.pi * fx * xn + phx) * \
                np.sin(2 * np.pi * fy * yn + phy)
        comps.append(field)
    return _rescale_to(np.stack(comps)[None].astype(np.float32), max_mag)


def _objects_flow(rng, max_mag, h, w):
    scale = 2.0 / max(h, w)
    bg = affine_flow(h, w,
                     a11=rng.uniform(-scale, scale), a12=rng.uniform(-scale, scale),
                     a21=rng.uniform(-scale, scale), a22=rng.uniform(-scale, scale),
                     tx=rng.uniform(-1, 1), ty=rng.uniform(-1, 1))
    bg = _rescale_to(bg, 0.3 * max_mag)
    flow = bg.astype(np.float64)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(int(rng.integers(1, 4))):
        bh = rng.integers(h // 4, max(h // 4 + 1, h // 2))
        bw = rng.integers(w // 4, max(w // 4 + 1, w // 2))
        y0 = rng.integers(0, max(1, h - bh))
        x0 = rng.integers(0, max(1, w - bw))
        vx, vy = rng.uniform(-1.0, 1.0, size=2)
        inside = np.minimum(np.minimum(ys - y0, y0 + bh - 1 - ys),
                            np.minimum(xs - x0, x0 + bw - 1 - xs))
        m = np.clip((inside + 1.0) / 3.0, 0.0, 1.0)  # 3 px feathered boundary
        flow[0, 0] = flow[0, 0] * (1 - m) + vx * max_mag * m
        flow[0, 1] = flow[0, 1] * (1 - m) + vy * max_mag * m
    return _rescale_to(flow.astype(np.float32), max_mag)


def gen_flow_field(kind, max_mag, h, w, seed):
    """Random flow of the requested kind with peak magnitude max_mag."""
    if kind not in FLOW_KINDS:
        raise ValueError(f"unknown flow kind {kind!r}, expected one of {FLOW_KINDS}")
    if not 0.0 <= max_mag <= MAX_FLOW_MAG:
        raise ValueError(f"max_mag must be in [0, {MAX_FLOW_MAG}], got {max_mag}")
    rng = np.random.default_rng(seed)
    if max_mag == 0.0:
        return np.zeros((1, 2, h, w), dtype=np.float32)
    if kind == "smooth":
        return _smooth_flow(rng, max_mag, h, w)
    if kind == "objects":
        return _objects_flow(rng, max_mag, h, w)
    scale = 2.0 / max(h, w)
    fl = affine_flow(h, w,
                     a11=rng.uniform(-scale, scale), a12=rng.uniform(-scale, scale),
                     a21=rng.uniform(-scale, scale), a22=rng.uniform(-scale, scale),
                     tx=rng.uniform(-1, 1), ty=rng.uniform(-1, 1))
    return _rescale_to(fl, max_mag)


def make_sample(sharp, flow, cfg, margin=None):
    """Blurred two-frame pair from a sharp image and a flow field.

    The second sharp frame backward-warps the first by the negated flow;
    a margin crop then removes the warp's clamped border before both
    frames are blurred, so the stored b1 is exactly the reblur of the
    stored gt and flow.
    """
    peak = float(np.hypot(flow[:, 0], flow[:, 1]).max())
    if margin is None:
        margin = int(np.ceil(peak)) + 2
    h, w = sharp.shape[2:]
    if h - 2 * margin < 8 or w - 2 * margin < 8:
        raise ValueError(f"image {h}x{w} too small for margin {margin}")
    frame2, _ = bilinear_warp(sharp, -flow)
    sl = (slice(None), slice(None), slice(margin, h - margin), slice(margin, w - margin))
    gt = np.ascontiguousarray(sharp[sl])
    fl = np.ascontiguousarray(flow[sl])
    b1 = reblur(gt, fl, cfg)
    b2 = reblur(np.ascontiguousarray(frame2[sl]), fl, cfg)
    return Sample(b1=b1, b2=b2, gt=gt, flow=fl)


# ---------------------------------------------------------------------------
# textures used as sharp source material

def make_texture(h, w, seed, kind="scene"):
    """Random sharp RGB test image in [0,1].

    "smooth": band-limited sinusoid mixture (for quadrature-sensitive
    blur comparisons). "scene": the same plus hard-edged rectangles, so
    blur is actually visible.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w]
    xn = xs / max(w - 1, 1)
    yn = ys / max(h - 1, 1)
    img = np.zeros((3, h, w), dtype=np.float64)
    for c in range(3):
        acc = np.zeros((h, w), dtype=np.float64)
        for _ in range(4):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phx, phy = rng.uniform(0, 2 * np.pi, size=2)
            acc += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fx * xn + phx) * \
                np.sin(2 * np.pi * fy * yn + phy)
        img[c] = acc
    img -= img.min()
    img /= max(img.max(), 1e-9)
    img = 0.15 + 0.7 * img
    if kind == "scene":
        for _ in range(int(rng.integers(6, 13))):
            bh = int(rng.integers(h // 8, h // 2))
            bw = int(rng.integers(w // 8, w // 2))
            y0 = int(rng.integers(0, h - bh))
            x0 = int(rng.integers(0, w - bw))
            color = rng.uniform(0.05, 0.95, size=3)
            img[:, y0:y0 + bh, x0:x0 + bw] = color[:, None, None]
    return np.clip(img, 0.0, 1.0)[None].astype(np.float32)


# ---------------------------------------------------------------------------
# dataset build / verify

def _rot90_flow(flow, k):
    """Rotate a flow field by k*90 degrees, vectors included."""
    out = flow
    for _ in range(k % 4):
        rot = np.rot90(out, 1, axes=(2, 3))
        out = np.stack([rot[:, 1], -rot[:, 0]], axis=1)
    return np.ascontiguousarray(out)


def apply_augment(sample, rotate90=0, channel_perm=(0, 1, 2), scale=None,
                  crop=None):
    """Deterministic core of `augment`.

    rotate90 counts quarter turns; the same geometric transform hits b1,
    b2 and gt, and flow vectors rotate/rescale with it. `crop` is
    (y0, x0, h, w). Rotation and channel permutation keep the
    reblur(gt, flow) == b1 relationship exact; resize and crop are
    training-only approximations.
    """
    b1, b2, gt, fl = sample.b1, sample.b2, sample.gt, sample.flow
    k = rotate90 % 4
    if k:
        b1 = np.ascontiguousarray(np.rot90(b1, k, axes=(2, 3)))
        b2 = np.ascontiguousarray(np.rot90(b2, k, axes=(2, 3)))
        gt = np.ascontiguousarray(np.rot90(gt, k, axes=(2, 3)))
        fl = _rot90_flow(fl, k)
    perm = list(channel_perm)
    if perm != [0, 1, 2]:
        b1, b2, gt = b1[:, perm], b2[:, perm], gt[:, perm]
    if scale is not None and scale != 1.0:
        nh = max(8, int(round(gt.shape[2] * scale)))
        nw = max(8, int(round(gt.shape[3] * scale)))
        sy = nh / gt.shape[2]
        sx = nw / gt.shape[3]
        b1 = bilinear_resize(b1, nh, nw)
        b2 = bilinear_resize(b2, nh, nw)
        gt = bilinear_resize(gt, nh, nw)
        fl = bilinear_resize(fl, nh, nw)
        fl = np.stack([fl[:, 0] * sx, fl[:, 1] * sy], axis=1)
    if crop is not None:
        y0, x0, ch, cw = crop
        if y0 < 0 or x0 < 0 or y0 + ch > gt.shape[2] or x0 + cw > gt.shape[3]:
            raise ValueError(f"crop {crop} outside image {gt.shape[2:]}")
        sl = (slice(None), slice(None), slice(y0, y0 + ch), slice(x0, x0 + cw))
        b1, b2, gt, fl = b1[sl], b2[sl], gt[sl], fl[sl]
    return Sample(b1=np.ascontiguousarray(b1), b2=np.ascontiguousarray(b2),
                  gt=np.ascontiguousarray(gt), flow=np.ascontiguousarray(fl))


def augment(sample, rng, patch=None, resize_range=None):
    """Random 90-degree rotation, color permutation, optional resize/crop."""
    k = int(rng.integers(0, 4))
    perm = [int(p) for p in rng.permutation(3)]
    scale = float(rng.uniform(*resize_range)) if resize_range is not None else None
    out = apply_augment(sample, rotate90=k, channel_perm=perm, scale=scale)
    if patch is not None and (out.gt.shape[2] > patch or out.gt.shape[3] > patch):
        y0 = int(rng.integers(0, out.gt.shape[2] - patch + 1))
        x0 = int(rng.integers(0, out.gt.shape[3] - patch + 1))
        out = apply_augment(out, crop=(y0, x0, patch, patch))
    return out


def _sample_names(i):
    return (f"{i:06d}_b1.ppm", f"{i:06d}_b2.ppm", f"{i:06d}_gt.ppm", f"{i:06d}.flo")


def build_dataset(src_dir, out_dir, count, kinds, max_mag, duty_cycle, seed):
    """Write `count` (b1, b2, gt, flow) samples plus a manifest.

    Manifest columns (no header): b1,b2,gt,flow,kind,max_mag,duty_cycle,seed.
    Byte-reproducible from (seed, parameters).
    """
    for kind in kinds:
        if kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {kind!r}")
    sources = sorted(f for f in os.listdir(src_dir) if f.endswith(".ppm"))
    if not sources:
        raise ValueError(f"no .ppm source images in {src_dir}")
    os.makedirs(out_dir, exist_ok=True)
    cfg = BlurConfig(duty_cycle=duty_cycle)
    margin = int(np.ceil(max_mag)) + 2
    rows = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        src = sources[int(rng.integers(len(sources)))]
        sharp = load_image(os.path.join(src_dir, src))
        kind = kinds[int(rng.integers(len(kinds)))]
        mag = float(rng.uniform(min(2.0, max_mag), max_mag)) if max_mag > 0 else 0.0
        flow_seed = int(rng.integers(2 ** 31))
        flow = gen_flow_field(kind, mag, sharp.shape[2], sharp.shape[3], flow_seed)
        sample = make_sample(sharp, flow, cfg, margin=margin)
        n_b1, n_b2, n_gt, n_fl = _sample_names(i)
        save_image(sample.b1, os.path.join(out_dir, n_b1))
        save_image(sample.b2, os.path.join(out_dir, n_b2))
        save_image(sample.gt, os.path.join(out_dir, n_gt))
        save_flo(sample.flow, os.path.join(out_dir, n_fl))
        rows.append(f"{n_b1},{n_b2},{n_gt},{n_fl},{kind},{mag:.6f},"
                    f"{duty_cycle:.6f},{seed}")
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        f.write("".join(r + "\n" for r in rows))
    return os.path.join(out_dir, MANIFEST)


def read_manifest(data_dir):
    rows = []
    with open(os.path.join(data_dir, MANIFEST)) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            b1, b2, gt, fl, kind, mag, r, seed = line.split(",")
            rows.append({"b1": b1, "b2": b2, "gt": gt, "flow": fl, "kind": kind,
                         "max_mag": float(mag), "duty_cycle": float(r),
                         "seed": int(seed)})
    return rows


def load_sample(data_dir, row):
    return Sample(b1=load_image(os.path.join(data_dir, row["b1"])),
                  b2=load_image(os.path.join(data_dir, row["b2"])),
                  gt=load_image(os.path.join(data_dir, row["gt"])),
                  flow=load_flo(os.path.join(data_dir, row["flow"])))


def verify_dataset(data_dir):
    """Closed loop: reblurring every stored gt must reproduce its stored b1.

    Returns the worst absolute pixel difference across the dataset.
    """
    worst = 0.0
    for row in read_manifest(data_dir):
        s = load_sample(data_dir, row)
        again = reblur(s.gt, s.flow, BlurConfig(duty_cycle=row["duty_cycle"]))
        worst = max(worst, float(np.abs(again - s.b1).max()))
    return worst
