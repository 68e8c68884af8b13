"""Tensor conventions, image/flow file I/O and resampling primitives.

Tensors are numpy arrays of shape (n, c, h, w), float32 or float64,
values finite everywhere. Images live in [0, 1]; 8-bit happens only at
file boundaries. Flow fields are tensors with c == 2 (channel 0 is the
horizontal component, channel 1 the vertical one), in pixels per frame
interval at the tensor's own resolution.
"""

import numpy as np

FLO_MAGIC = b"PIEH"  # little-endian float32 202021.25


class FileFormatError(ValueError):
    """Malformed image or flow file. Carries the failing byte offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def require_tensor(t, name="tensor"):
    """Validate the (n, c, h, w) layout and finiteness; return t unchanged."""
    if not isinstance(t, np.ndarray) or t.ndim != 4:
        raise ValueError(f"{name} must be a 4-d (n, c, h, w) array, got "
                         f"{getattr(t, 'shape', type(t))}")
    if not np.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")
    return t


def require_flow(flow, name="flow"):
    require_tensor(flow, name)
    if flow.shape[1] != 2:
        raise ValueError(f"{name} must have 2 channels, got {flow.shape[1]}")
    return flow


def _read_token(data, pos, path):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FileFormatError(path, pos, "truncated header")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def load_image(path):
    """Read a binary PPM (P6) or PGM (P5), maxval 255, into a (1,c,h,w) tensor in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FileFormatError(path, 0, f"expected P6 or P5 magic, got {magic!r}")
    pos = 2
    fields = []
    for field in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos, path)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FileFormatError(path, pos - len(tok),
                                  f"non-numeric {field} {tok!r}") from None
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise FileFormatError(path, 2, f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise FileFormatError(path, pos, f"maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte separates header from payload
    need = w * h * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FileFormatError(path, len(data),
                              f"truncated payload: need {need} bytes, have {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    img = img.reshape(h, w, channels).transpose(2, 0, 1)[None]
    return np.ascontiguousarray(img)


def save_image(t, path):
    """Write a (1,c,h,w) tensor as binary PPM/PGM; clamps to [0,1], rounds half up."""
    require_tensor(t, "image")
    n, c, h, w = t.shape
    if n != 1 or c not in (1, 3):
        raise ValueError(f"save_image expects (1,1,h,w) or (1,3,h,w), got {t.shape}")
    q = np.floor(np.clip(t[0].astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(q.transpose(1, 2, 0).tobytes())


def load_flo(path):
    """Read a Middlebury .flo file into a (1,2,h,w) float32 flow tensor."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FLO_MAGIC:
        raise FileFormatError(path, 0, f"bad magic {data[:4]!r}, expected {FLO_MAGIC!r}")
    if len(data) < 12:
        raise FileFormatError(path, len(data), "truncated header")
    w, h = np.frombuffer(data[4:12], dtype="<i4")
    if w <= 0 or h <= 0:
        raise FileFormatError(path, 4, f"bad dimensions {w}x{h}")
    need = int(h) * int(w) * 2 * 4
    if len(data) != 12 + need:
        raise FileFormatError(path, len(data),
                              f"size mismatch: expected {12 + need} bytes total, got {len(data)}")
    uv = np.frombuffer(data[12:], dtype="<f4").reshape(int(h), int(w), 2)
    flow = np.ascontiguousarray(uv.transpose(2, 0, 1)[None]).astype(np.float32)
    return require_flow(flow, str(path))


def save_flo(flow, path):
    """Write a (1,2,h,w) flow tensor as Middlebury .flo (round trip bit-exact)."""
    require_flow(flow)
    if flow.shape[0] != 1:
        raise ValueError("save_flo expects batch size 1")
    _, _, h, w = flow.shape
    uv = flow[0].transpose(1, 2, 0).astype("<f4")
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(uv).tobytes())


def avg_downsample2x(t):
    """Average-pool by 2x2; h and w must be even. 64-bit accumulation."""
    require_tensor(t)
    n, c, h, w = t.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_downsample2x needs even dims, got {h}x{w}")
    blocks = t.reshape(n, c, h // 2, 2, w // 2, 2).astype(np.float64)
    return blocks.mean(axis=(3, 5)).astype(t.dtype)


def downsample_pyramid(t, levels):
    """[t/2, t/4, ...]: repeated avg_downsample2x, `levels` entries."""
    out = []
    cur = t
    for _ in range(levels):
        cur = avg_downsample2x(cur)
        out.append(cur)
    return out


def _resize_axis_coords(out_size, in_size):
    # align-corners-false: output centers map to (i + 0.5) * scale - 0.5
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(t, new_h, new_w):
    """Bilinear resample to (new_h, new_w), align-corners-false, clamped."""
    require_tensor(t)
    if new_h < 1 or new_w < 1:
        raise ValueError("target dims must be >= 1")
    n, c, h, w = t.shape
    if (new_h, new_w) == (h, w):
        return t.copy()
    y0, y1, fy = _resize_axis_coords(new_h, h)
    x0, x1, fx = _resize_axis_coords(new_w, w)
    fy = fy.astype(t.dtype)[None, None, :, None]
    fx = fx.astype(t.dtype)[None, None, None, :]
    rows0 = t[:, :, y0, :]
    rows1 = t[:, :, y1, :]
    top = rows0[:, :, :, x0] * (1 - fx) + rows0[:, :, :, x1] * fx
    bot = rows1[:, :, :, x0] * (1 - fx) + rows1[:, :, :, x1] * fx
    return top * (1 - fy) + bot * fy
