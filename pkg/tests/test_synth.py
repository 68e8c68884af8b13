import os

import numpy as np
import pytest

from flowdeblur.blur import BlurConfig, reblur
from flowdeblur.metrics import psnr
from flowdeblur.synth import (Sample, affine_flow, apply_augment, augment,
                              build_dataset, gen_flow_field, load_sample,
                              make_sample, make_texture, read_manifest,
                              verify_dataset)
from flowdeblur.tensor_io import save_image

CLOSED_LOOP_BOUND = 1.0 / 255.0 + 1e-6


def test_zero_magnitude_gives_zero_field():
    for kind in ("affine", "smooth", "objects"):
        f = gen_flow_field(kind, 0.0, 16, 16, seed=0)
        assert f.shape == (1, 2, 16, 16)
        assert np.all(f == 0.0)


def test_affine_pure_translation():
    f = affine_flow(8, 10, tx=3.0, ty=0.0)
    assert np.all(f[:, 0] == 3.0)
    assert np.all(f[:, 1] == 0.0)


def test_smooth_field_hits_max_magnitude():
    f = gen_flow_field("smooth", 7.5, 32, 32, seed=1)
    mag = np.hypot(f[:, 0], f[:, 1])
    assert mag.max() == pytest.approx(7.5, abs=1e-3)


def test_all_kinds_respect_magnitude_cap():
    for kind in ("affine", "smooth", "objects"):
        for seed in range(3):
            f = gen_flow_field(kind, 6.0, 24, 24, seed=seed)
            assert np.hypot(f[:, 0], f[:, 1]).max() <= 6.0 + 1e-3
            assert f.dtype == np.float32


def test_gen_flow_field_validation():
    with pytest.raises(ValueError):
        gen_flow_field("spiral", 5.0, 8, 8, seed=0)
    with pytest.raises(ValueError):
        gen_flow_field("smooth", 25.0, 8, 8, seed=0)


def test_make_sample_zero_flow_identity():
    sharp = make_texture(40, 40, seed=2)
    flow = np.zeros((1, 2, 40, 40), dtype=np.float32)
    s = make_sample(sharp, flow, BlurConfig(), margin=4)
    assert np.array_equal(s.b1, s.gt)
    assert np.array_equal(s.b2, s.gt)
    assert s.gt.shape == (1, 3, 32, 32)


def test_make_sample_constant_flow_shift():
    sharp = make_texture(64, 64, seed=3)
    flow = np.zeros((1, 2, 64, 64), dtype=np.float32)
    flow[:, 0] = 4.0
    s = make_sample(sharp, flow, BlurConfig(), margin=8)
    # frame 2 lags frame 1 by the flow: b2(x) == b1(x - 4); skip the
    # first blur-support columns of b1 where crop-edge clamping differs
    assert np.allclose(s.b2[:, :, :, 8:], s.b1[:, :, :, 4:-4], atol=1e-3)


def test_make_sample_margin_guard():
    sharp = make_texture(16, 16, seed=4)
    with pytest.raises(ValueError):
        make_sample(sharp, np.zeros((1, 2, 16, 16), dtype=np.float32),
                    BlurConfig(), margin=7)


def test_blur_psnr_decreases_with_magnitude():
    sharp = make_texture(72, 72, seed=5)
    scores = []
    for mag in (2.0, 5.0, 10.0):
        flow = gen_flow_field("smooth", mag, 72, 72, seed=6)
        s = make_sample(sharp, flow, BlurConfig(), margin=12)
        scores.append(psnr(np.clip(s.b1, 0, 1), s.gt))
    assert scores[0] > scores[1] > scores[2]


@pytest.fixture()
def src_dir(tmp_path):
    d = tmp_path / "src"
    d.mkdir()
    for i in range(2):
        save_image(make_texture(72, 72, seed=50 + i), d / f"tex{i}.ppm")
    return d


def test_build_dataset_reproducible_and_verified(tmp_path, src_dir):
    out1 = tmp_path / "d1"
    out2 = tmp_path / "d2"
    build_dataset(src_dir, out1, 4, ["affine", "smooth", "objects"], 8.0, 1.0, seed=9)
    build_dataset(src_dir, out2, 4, ["affine", "smooth", "objects"], 8.0, 1.0, seed=9)
    names1 = sorted(os.listdir(out1))
    assert names1 == sorted(os.listdir(out2))
    for name in names1:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    rows = read_manifest(out1)
    assert len(rows) == 4
    assert verify_dataset(out1) <= CLOSED_LOOP_BOUND


def test_build_dataset_empty_source(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        build_dataset(empty, tmp_path / "out", 1, ["affine"], 5.0, 1.0, seed=0)


def test_build_dataset_count_zero(tmp_path, src_dir):
    out = tmp_path / "z"
    manifest = build_dataset(src_dir, out, 0, ["affine"], 5.0, 1.0, seed=0)
    assert os.path.exists(manifest)
    assert read_manifest(out) == []


def _random_sample(seed, mag=5.0):
    sharp = make_texture(56, 56, seed=seed)
    flow = gen_flow_field("objects", mag, 56, 56, seed=seed + 100)
    return make_sample(sharp, flow, BlurConfig(), margin=8)


def test_augment_identity():
    s = _random_sample(10)
    out = apply_augment(s)
    for a, b in ((out.b1, s.b1), (out.b2, s.b2), (out.gt, s.gt), (out.flow, s.flow)):
        assert np.array_equal(a, b)


def test_augment_rotation_vector_convention():
    # one quarter turn maps flow (3, 0) to (0, -3) under np.rot90(k=1)
    s = Sample(b1=make_texture(8, 8, seed=11), b2=make_texture(8, 8, seed=12),
               gt=make_texture(8, 8, seed=13),
               flow=affine_flow(8, 8, tx=3.0, ty=0.0))
    out = apply_augment(s, rotate90=1)
    assert np.all(out.flow[:, 0] == 0.0)
    assert np.all(out.flow[:, 1] == -3.0)
    back = apply_augment(out, rotate90=3)
    assert np.array_equal(back.flow, s.flow)


def test_augment_rotation_keeps_closed_loop_exact():
    s = _random_sample(14)
    for k in (1, 2, 3):
        out = apply_augment(s, rotate90=k)
        again = reblur(out.gt, out.flow, BlurConfig())
        assert np.abs(again - out.b1).max() <= 1e-5


def test_augment_color_permutation_preserves_psnr():
    s = _random_sample(15)
    base = psnr(np.clip(s.b1, 0, 1), s.gt)
    out = apply_augment(s, channel_perm=(2, 0, 1))
    assert psnr(np.clip(out.b1, 0, 1), out.gt) == pytest.approx(base, abs=1e-12)
    again = reblur(out.gt, out.flow, BlurConfig())
    assert np.abs(again - out.b1).max() <= 1e-6


def test_augment_resize_scales_flow():
    s = Sample(b1=make_texture(16, 16, seed=16), b2=make_texture(16, 16, seed=17),
               gt=make_texture(16, 16, seed=18),
               flow=affine_flow(16, 16, tx=2.0, ty=-1.0))
    out = apply_augment(s, scale=2.0)
    assert out.gt.shape[2:] == (32, 32)
    assert np.allclose(out.flow[:, 0], 4.0, atol=1e-6)
    assert np.allclose(out.flow[:, 1], -2.0, atol=1e-6)


def test_augment_crop():
    s = _random_sample(19)
    out = apply_augment(s, crop=(3, 5, 16, 16))
    assert out.gt.shape[2:] == (16, 16)
    assert np.array_equal(out.gt, s.gt[:, :, 3:19, 5:21])
    assert np.array_equal(out.flow, s.flow[:, :, 3:19, 5:21])
    with pytest.raises(ValueError):
        apply_augment(s, crop=(100, 0, 16, 16))


def test_random_augment_stream_closed_loop():
    # the randomized wrapper (rotation + permutation only) keeps the
    # reblur relationship within the 8-bit bound
    s = _random_sample(20)
    rng = np.random.default_rng(21)
    for _ in range(5):
        out = augment(s, rng)
        again = reblur(out.gt, out.flow, BlurConfig())
        assert np.abs(again - out.b1).max() <= CLOSED_LOOP_BOUND
