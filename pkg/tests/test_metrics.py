import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from retexkit.conditioning import write_tensor
from retexkit.errors import ConfigError, EmptyRegionError, InputError, ShapeError
from retexkit.metrics import (PSNR_CAP, FlowParams, MetricsConfig, MetricsReport,
                              background_metrics, cosine_similarity, dilate_mask, estimate_flow,
                              evaluate, ewarp, foreground_crop, load_embeddings, masked_ssim,
                              psnr_from_mse, ssim_map, validate_report, warp_error)

FAST = MetricsConfig(ewarp=FlowParams(iterations=60, warps=2))


def brute_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i, j in zip(*np.nonzero(mask)):
        out[max(0, i - r):min(h, i + r + 1), max(0, j - r):min(w, j + r + 1)] = True
    return out


def smooth_texture(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return ndimage.gaussian_filter(rng.random((h, w)), 2.0, mode="wrap")


def test_dilate_single_pixel():
    m = np.zeros((64, 64), bool)
    m[32, 32] = True
    d = dilate_mask(m, 16)
    assert d.sum() == 33 * 33
    assert d[16:49, 16:49].all()
    assert np.array_equal(dilate_mask(m, 0), m)
    assert dilate_mask(np.ones((5, 5), bool), 3).all()
    with pytest.raises(ConfigError):
        dilate_mask(m, -1)


@given(arrays(bool, st.tuples(st.integers(1, 20), st.integers(1, 20))), st.integers(0, 6))
def test_dilate_matches_brute_force(mask, r):
    assert np.array_equal(dilate_mask(mask, r), brute_dilate(mask, r))


@given(arrays(bool, (12, 12)), st.integers(0, 4), st.integers(0, 4))
def test_dilate_monotone(mask, r1, r2):
    lo, hi = sorted((r1, r2))
    assert (dilate_mask(mask, lo) <= dilate_mask(mask, hi)).all()
    assert (mask <= dilate_mask(mask, lo)).all()


def test_dilate_clip_is_per_frame():
    m = np.zeros((2, 9, 9), bool)
    m[0, 4, 4] = True
    d = dilate_mask(m, 2)
    assert d[0].sum() == 25 and not d[1].any()


def test_psnr_values():
    assert psnr_from_mse(0.0, 255) == PSNR_CAP
    assert psnr_from_mse(255.0 ** 2, 255) == pytest.approx(0.0)
    assert psnr_from_mse(1e-12, 1.0) == pytest.approx(120.0)


def test_background_identity(rng):
    x = rng.random((3, 40, 40, 3))
    mask = np.zeros((3, 40, 40), bool)
    mask[:, 18:22, 18:22] = True
    r = background_metrics(x, x, mask, MetricsConfig(dilation_radius=4))
    assert r["mse"] == 0 and r["psnr"] == PSNR_CAP and r["ssim"] == pytest.approx(1.0)


def test_background_black_vs_white():
    r = background_metrics(np.zeros((2, 16, 16, 3)), np.ones((2, 16, 16, 3)),
                           np.zeros((2, 16, 16), bool))
    assert r["mse"] == pytest.approx(65025.0)
    assert r["psnr"] == pytest.approx(0.0)
    unit = background_metrics(np.zeros((1, 8, 8, 3)), np.ones((1, 8, 8, 3)),
                              np.zeros((1, 8, 8), bool), MetricsConfig(pixel_scale="unit_0_1"))
    assert unit["mse"] == pytest.approx(1.0) and unit["psnr"] == pytest.approx(0.0)


def test_background_ignores_dilated_region(rng):
    src = rng.random((2, 80, 80, 3))
    edited = src + 0.02 * rng.standard_normal(src.shape)
    mask = np.zeros((2, 80, 80), bool)
    mask[:, 30:40, 35:45] = True
    base = background_metrics(src, edited, mask)
    region = dilate_mask(mask, 16)
    corrupted = edited.copy()
    corrupted[region] = rng.random((int(region.sum()), 3))
    again = background_metrics(src, corrupted, mask)
    for key in ("mse", "psnr", "ssim"):
        assert again[key] == base[key]


def test_background_psnr_consistent_with_mse(rng):
    src = rng.random((4, 24, 24, 3))
    edited = np.clip(src + rng.normal(0, 0.05, src.shape) * rng.random((4, 1, 1, 1)), 0, 1)
    r = background_metrics(src, edited, np.zeros((4, 24, 24), bool))
    assert r["psnr"] == pytest.approx(10 * np.log10(255 ** 2 / r["mse"]), abs=1e-9)


def test_background_errors(rng):
    x = rng.random((1, 10, 10, 3))
    with pytest.raises(EmptyRegionError):
        background_metrics(x, x, np.ones((1, 10, 10), bool))
    with pytest.raises(ShapeError):
        background_metrics(x, x[:, :9], np.zeros((1, 10, 10), bool))
    with pytest.raises(ShapeError):
        background_metrics(x, x, np.zeros((1, 10, 9), bool))


def test_ssim_interior_matches_skimage(rng):
    skm = pytest.importorskip("skimage.metrics")
    x = rng.random((40, 48)) * 255
    y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255)
    _, ref = skm.structural_similarity(x, y, data_range=255, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, full=True)
    sel, vals = ssim_map(x, y, None, MetricsConfig())
    ours = np.zeros_like(x)
    ours[sel] = vals
    assert np.allclose(ours[5:-5, 5:-5], ref[5:-5, 5:-5], atol=1e-9)


@given(st.integers(0, 2**31))
def test_ssim_symmetric_bounded_and_reflexive(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((20, 20)) * 255, rng.random((20, 20)) * 255
    region = rng.random((20, 20)) < 0.7
    region[0, 0] = True
    cfg = MetricsConfig()
    a, b = masked_ssim(x, y, region, cfg), masked_ssim(y, x, region, cfg)
    assert a == pytest.approx(b, abs=1e-12)
    assert -1 <= a <= 1
    assert masked_ssim(x, x, region, cfg) == pytest.approx(1.0, abs=1e-12)


def test_ssim_empty_region():
    with pytest.raises(EmptyRegionError):
        masked_ssim(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), bool), MetricsConfig())


def test_foreground_crop_full_and_box(rng):
    img = rng.random((10, 12, 3))
    assert np.allclose(foreground_crop(img, np.ones((10, 12), bool), 12, 10), img)
    big = np.zeros((30, 30, 3))
    patch = np.kron(np.arange(4.0).reshape(2, 2), np.ones((5, 5)))[..., None].repeat(3, -1)
    big[7:17, 11:21] = patch
    mask = np.zeros((30, 30), bool)
    mask[7:17, 11:21] = True
    crop = foreground_crop(big, mask, 20, 20)
    assert crop.shape == (20, 20, 3)
    # nearest-in-spirit: block centres keep their values after 2x upsampling
    assert crop[4, 4, 0] == pytest.approx(0) and crop[15, 15, 0] == pytest.approx(3)


def test_foreground_crop_clip_skips_empty(rng):
    clip = rng.random((3, 8, 8, 3))
    mask = np.zeros((3, 8, 8), bool)
    mask[0, 2:4, 2:6] = True
    mask[2] = True
    out = foreground_crop(clip, mask, 4, 4)
    assert out.shape == (2, 4, 4, 3)
    with pytest.raises(EmptyRegionError):
        foreground_crop(clip, np.zeros((3, 8, 8), bool), 4, 4)


def test_cosine():
    assert cosine_similarity([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 5]) == 0.0
    assert cosine_similarity([1, 1], [-1, -1]) == pytest.approx(-1.0)
    with pytest.raises(ShapeError):
        cosine_similarity([0, 0], [1, 1])
    with pytest.raises(ShapeError):
        cosine_similarity([1, 2], [1, 2, 3])


@given(arrays(np.float64, 6, elements=st.floats(-100, 100)),
       arrays(np.float64, 6, elements=st.floats(-100, 100)))
def test_cosine_bounded_symmetric(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1 <= c <= 1 and c == pytest.approx(cosine_similarity(b, a))


def test_flow_identical_frames_is_zero():
    f = smooth_texture(32, 32)
    flow = estimate_flow(f, f)
    assert np.abs(flow.u).max() < 1e-12 and np.abs(flow.v).max() < 1e-12
    assert flow.valid.all()


def test_flow_flat_frames_is_zero():
    f = np.full((16, 16), 0.4)
    flow = estimate_flow(f, f + 0.0)
    assert np.abs(flow.u).max() < 1e-3 and np.abs(flow.v).max() < 1e-3


def test_flow_recovers_one_pixel_shift():
    base = smooth_texture(48, 48, 3)
    moved = np.roll(base, 1, axis=1)  # content moves right by one pixel
    flow = estimate_flow(base, moved)
    inner = (slice(8, -8), slice(8, -8))
    assert 0.5 <= flow.u[inner].mean() <= 1.5
    assert np.abs(flow.v[inner]).mean() < 0.3
    assert flow.valid[inner].mean() > 0.8


def test_flow_shape_errors():
    with pytest.raises(ShapeError):
        estimate_flow(np.zeros((4, 4)), np.zeros((4, 5)))


def test_warp_error_ground_truth_beats_zero_flow():
    base = smooth_texture(40, 40, 5)
    nxt = np.roll(base, 2, axis=1)
    # frame t+1 at p equals frame t at p - (2, 0)
    u = np.full(base.shape, -2.0)
    v = np.zeros(base.shape)
    gt = warp_error(base, nxt, u, v)
    zero = warp_error(base, nxt, np.zeros_like(u), v)
    assert gt < 1e-20 < zero


def test_ewarp_static_and_ordering():
    static = np.repeat(smooth_texture(32, 32, 1)[None, ..., None], 3, 0).repeat(3, -1)
    assert ewarp(static, FAST) == 0.0
    tex = smooth_texture(32, 48, 2)
    smooth = np.stack([tex[:, k:k + 32] for k in range(3)])[..., None].repeat(3, -1)
    noise = np.random.default_rng(7).random((3, 32, 32, 3))
    e_smooth, e_noise = ewarp(smooth, FAST), ewarp(noise, FAST)
    assert 0 < e_smooth < e_noise
    assert e_noise > 100
    with pytest.raises(ShapeError):
        ewarp(static[:1])


def test_ewarp_constant_clip_is_zero():
    assert ewarp(np.full((4, 16, 16, 3), 0.3), FAST) == 0.0


def test_evaluate_report_shape(rng):
    src = rng.random((2, 40, 40, 3))
    mask = np.zeros((2, 40, 40), bool)
    mask[:, 4:8, 4:8] = True
    rep = evaluate(src, src, mask, cfg=FAST)
    d = rep.to_dict()
    assert d["background"]["mse"] == 0 and d["background"]["psnr"] == PSNR_CAP
    assert d["background"]["lpips_slot"] is None
    assert all(v is None for v in d["foreground"].values())
    assert d["motion"]["ewarp"] is not None
    assert d["metadata"]["dilation_radius"] == 16 and d["metadata"]["frames_evaluated"] == 2
    assert MetricsReport.from_json(rep.to_json()) == rep


def test_evaluate_single_image_has_no_motion(rng):
    img = rng.random((40, 40, 3))
    mask = np.zeros((40, 40), bool)
    rep = evaluate(img, img, mask)
    assert rep.motion["ewarp"] is None and rep.metadata["frames_evaluated"] == 1


def test_evaluate_embedding_slots(rng):
    img = rng.random((40, 40, 3))
    mask = np.zeros((40, 40), bool)
    emb = {k: rng.standard_normal(8) for k in ("clip", "dino", "bg_lpips")}
    rep = evaluate(img, img, mask, embeddings=emb, reference_embeddings=emb)
    assert rep.foreground["clip_slot"] == pytest.approx(1.0)
    assert rep.foreground["dino_slot"] == pytest.approx(1.0)
    assert rep.foreground["dream_slot"] is None
    assert rep.background["lpips_slot"] == pytest.approx(1.0)


def test_schema_rejects_bad_reports():
    good = {"background": {"mse": 0, "psnr": 99, "ssim": 1, "lpips_slot": None},
            "foreground": {k: None for k in ("clip_slot", "dino_slot", "lpips_slot",
                                              "dream_slot")},
            "motion": {"ewarp": None},
            "metadata": {"dilation_radius": 16, "frames_evaluated": 1,
                         "pixel_scale": "eight_bit_0_255"}}
    validate_report(good)
    bad = json.loads(json.dumps(good))
    del bad["motion"]
    with pytest.raises(InputError):
        validate_report(bad)
    bad = json.loads(json.dumps(good))
    bad["background"]["mse"] = -1
    with pytest.raises(InputError):
        validate_report(bad)


def test_load_embeddings_json_and_rtk(tmp_path):
    (tmp_path / "e.json").write_text(json.dumps({"clip_slot": [1, 2], "dino": [3.0]}))
    e = load_embeddings(tmp_path / "e.json")
    assert e["clip"].tolist() == [1.0, 2.0] and e["dino"].tolist() == [3.0]
    rows = np.arange(12, dtype=np.float32).reshape(3, 1, 1, 4)
    write_tensor(tmp_path / "e.rtk", rows)
    r = load_embeddings(tmp_path / "e.rtk")
    assert sorted(r) == ["clip", "dino", "lpips"]
    assert r["dino"].tolist() == [4.0, 5.0, 6.0, 7.0]
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(InputError):
        load_embeddings(tmp_path / "bad.json")
    (tmp_path / "bad2.json").write_text('{"clip": ["a"]}')
    with pytest.raises(InputError):
        load_embeddings(tmp_path / "bad2.json")
