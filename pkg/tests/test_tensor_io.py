import numpy as np
import pytest

from flowdeblur.tensor_io import (FLO_MAGIC, FileFormatError, avg_downsample2x,
                                  bilinear_resize, load_flo, load_image,
                                  save_flo, save_image)


def test_ppm_all_255_maps_to_one(tmp_path):
    p = tmp_path / "white.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + b"\xff" * 12)
    t = load_image(p)
    assert t.shape == (1, 3, 2, 2)
    assert np.all(t == 1.0)


def test_ppm_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    payload = rng.integers(0, 256, size=5 * 7 * 3, dtype=np.uint8).tobytes()
    src = tmp_path / "in.ppm"
    src.write_bytes(b"P6\n7 5\n255\n" + payload)
    dst = tmp_path / "out.ppm"
    save_image(load_image(src), dst)
    assert dst.read_bytes() == src.read_bytes()


def test_pgm_round_trip(tmp_path):
    payload = bytes(range(16))
    src = tmp_path / "in.pgm"
    src.write_bytes(b"P5\n4 4\n255\n" + payload)
    t = load_image(src)
    assert t.shape == (1, 1, 4, 4)
    dst = tmp_path / "out.pgm"
    save_image(t, dst)
    assert dst.read_bytes() == src.read_bytes()


def test_half_intensity_rounds_to_128(tmp_path):
    # independent scalar check: round(0.5 * 255) = 128
    t = np.full((1, 3, 1, 1), 0.5, dtype=np.float32)
    p = tmp_path / "half.ppm"
    save_image(t, p)
    data = p.read_bytes()
    assert data.endswith(bytes([128, 128, 128]))


def test_save_clamps_out_of_range(tmp_path):
    t = np.array([[[[-0.5]], [[1.5]], [[0.25]]]], dtype=np.float32)
    p = tmp_path / "c.ppm"
    save_image(t, p)
    assert p.read_bytes().endswith(bytes([0, 255, 64]))


def test_ppm_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# a comment\n 2 1\n# another\n255\n" + b"\x10" * 6)
    t = load_image(p)
    assert t.shape == (1, 3, 1, 2)


def test_ppm_bad_magic(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n abc")
    with pytest.raises(FileFormatError) as err:
        load_image(p)
    assert err.value.offset == 0


def test_ppm_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 5)
    with pytest.raises(FileFormatError) as err:
        load_image(p)
    assert "truncated payload" in str(err.value)


def test_ppm_wrong_maxval(tmp_path):
    p = tmp_path / "m.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00")
    with pytest.raises(FileFormatError):
        load_image(p)


def test_flo_magic_constant(tmp_path):
    # Middlebury format: "PIEH" == float32 202021.25 little-endian
    assert FLO_MAGIC == b"\x50\x49\x45\x48"
    assert np.frombuffer(FLO_MAGIC, dtype="<f4")[0] == 202021.25
    p = tmp_path / "f.flo"
    save_flo(np.zeros((1, 2, 2, 2), dtype=np.float32), p)
    assert p.read_bytes()[:4] == b"PIEH"


def test_flo_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(1)
    flow = rng.standard_normal((1, 2, 6, 4)).astype(np.float32)
    a = tmp_path / "a.flo"
    b = tmp_path / "b.flo"
    save_flo(flow, a)
    save_flo(load_flo(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(load_flo(a), flow)


def test_flo_zero_flow_dims(tmp_path):
    p = tmp_path / "z.flo"
    save_flo(np.zeros((1, 2, 2, 2), dtype=np.float32), p)
    f = load_flo(p)
    assert f.shape == (1, 2, 2, 2)
    assert np.all(f == 0.0)


def test_flo_wrong_magic(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FileFormatError):
        load_flo(p)


def test_flo_size_mismatch(tmp_path):
    p = tmp_path / "short.flo"
    p.write_bytes(FLO_MAGIC + np.array([2, 2], dtype="<i4").tobytes() + b"\x00" * 8)
    with pytest.raises(FileFormatError) as err:
        load_flo(p)
    assert "size mismatch" in str(err.value)


def test_downsample_block_mean():
    t = np.array([[[[0.0, 0.0], [0.0, 4.0]]]])
    assert avg_downsample2x(t)[0, 0, 0, 0] == 1.0


def test_downsample_constant():
    t = np.full((1, 3, 8, 6), 0.37, dtype=np.float32)
    d = avg_downsample2x(t)
    assert d.shape == (1, 3, 4, 3)
    assert np.allclose(d, 0.37, atol=1e-7)


def test_downsample_preserves_mean():
    rng = np.random.default_rng(2)
    t = rng.random((2, 3, 64, 64), dtype=np.float32)
    d = avg_downsample2x(t)
    assert abs(float(t.mean(dtype=np.float64)) -
               float(d.mean(dtype=np.float64))) <= 1e-6


def test_downsample_rejects_odd():
    with pytest.raises(ValueError):
        avg_downsample2x(np.zeros((1, 1, 3, 4)))


def test_resize_identity_and_constant():
    rng = np.random.default_rng(3)
    t = rng.random((1, 3, 5, 7), dtype=np.float32)
    assert np.array_equal(bilinear_resize(t, 5, 7), t)
    c = np.full((1, 1, 4, 4), 0.6, dtype=np.float64)
    assert np.allclose(bilinear_resize(c, 9, 3), 0.6, atol=1e-12)


def test_resize_row_coordinates():
    # hand evaluation of the align-corners-false mapping
    t = np.array([[[[0.0, 1.0]]]])
    out = bilinear_resize(t, 1, 4)
    assert np.allclose(out[0, 0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)


def test_ops_reject_non_finite():
    bad = np.full((1, 2, 2, 2), np.nan, dtype=np.float32)
    with pytest.raises(ValueError):
        avg_downsample2x(bad)
    with pytest.raises(ValueError):
        bilinear_resize(bad, 4, 4)
    with pytest.raises(ValueError):
        save_flo(bad, "/tmp/never-written.flo")
