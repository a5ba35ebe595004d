import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from conftest import pixel_overlap_fraction, pixels_disjoint
from corrnet.data import (
    AugmentationConfig,
    ImageBuffer,
    PhotometricConfig,
    extract_patch,
    generate_synthetic_benchmark,
    generate_textured_image,
    load_image,
    load_image_dir,
    photometric_augment,
    sample_descriptor_batch,
    sample_detector_batch,
    weak_homography,
)
from corrnet.errors import DegenerateKeypoint, SamplerExhausted
from corrnet.geometry import (
    Homography,
    apply_homography,
    image_corners,
    read_homography_file,
    warp_image,
)

NO_JITTER = PhotometricConfig(0.0, 0.0, 0.0, 0.0, grayscale_prob=0.0, blur_prob=0.0)


# ---- containers and ingestion ----------------------------------------------


def test_image_buffer_validation():
    buf = ImageBuffer(np.zeros((4, 6, 3)), id="z")
    assert (buf.height, buf.width) == (4, 6)
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((4, 6)), id="flat")
    with pytest.raises(ValueError):
        ImageBuffer(np.full((4, 6, 3), 1.5), id="hot")
    with pytest.raises(ValueError):
        ImageBuffer(np.full((4, 6, 3), -0.1), id="cold")


def test_load_image_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    Image.fromarray(raw).save(tmp_path / "img.png")
    buf = load_image(tmp_path / "img.png", resize_to=None)
    assert buf.id == "img"
    assert np.array_equal(buf.pixels, raw / 255.0)
    resized = load_image(tmp_path / "img.png", resize_to=(10, 15))
    assert resized.pixels.shape == (10, 15, 3)


def test_load_image_dir_skips_and_records_failures(tmp_path):
    rng = np.random.default_rng(1)
    for name in ("b.png", "a.png"):
        arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / name)
    (tmp_path / "broken.png").write_bytes(b"not an image at all")
    (tmp_path / "notes.txt").write_text("ignored")
    (tmp_path / "subdir").mkdir()
    result = load_image_dir(tmp_path, resize_to=None)
    assert [b.id for b in result] == ["a", "b"]  # sorted by filename
    assert len(result.failures) == 1
    assert result.failures[0][0].endswith("broken.png")
    with pytest.raises(NotADirectoryError):
        load_image_dir(tmp_path / "notes.txt")


def test_load_image_dir_resizes_by_default(tmp_path):
    arr = np.zeros((30, 40, 3), dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "x.png")
    result = load_image_dir(tmp_path)
    assert result[0].pixels.shape == (240, 320, 3)


# ---- photometric pipeline ---------------------------------------------------


def test_photometric_identity_config_is_noop():
    rng = np.random.default_rng(2)
    pixels = rng.uniform(0.1, 0.9, size=(16, 16, 3))
    out = photometric_augment(pixels, NO_JITTER, np.random.default_rng(3))
    assert np.allclose(out, pixels, atol=1e-12)


def test_photometric_range_shape_determinism():
    rng = np.random.default_rng(4)
    pixels = rng.uniform(size=(24, 24, 3))
    cfg = PhotometricConfig()
    a = photometric_augment(pixels, cfg, np.random.default_rng(7))
    b = photometric_augment(pixels, cfg, np.random.default_rng(7))
    c = photometric_augment(pixels, cfg, np.random.default_rng(8))
    assert a.shape == pixels.shape
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_photometric_draw_order_is_fixed():
    # blur_prob only flips the blur stage; the rest of the stream is untouched,
    # so the blurred output is exactly a gaussian filter of the unblurred one.
    rng = np.random.default_rng(5)
    pixels = rng.uniform(size=(16, 16, 3))
    no_blur = PhotometricConfig(blur_prob=0.0)
    do_blur = PhotometricConfig(blur_prob=1.0)
    out_plain = photometric_augment(pixels, no_blur, np.random.default_rng(9))
    out_blur = photometric_augment(pixels, do_blur, np.random.default_rng(9))
    replay = np.random.default_rng(9)
    for _ in range(6):  # brightness, contrast, saturation, hue, gray?, blur?
        replay.uniform()
    sigma = replay.uniform(0.1, 2.0)
    want = np.clip(
        ndimage.gaussian_filter(out_plain, sigma=(sigma, sigma, 0), mode="nearest"),
        0.0,
        1.0,
    )
    assert np.allclose(out_blur, want, atol=1e-12)


def test_photometric_config_validation():
    with pytest.raises(ValueError):
        PhotometricConfig(brightness=-0.1)
    with pytest.raises(ValueError):
        PhotometricConfig(blur_prob=1.5)


def test_weak_homography_bounds_corner_motion():
    rng = np.random.default_rng(6)
    for _ in range(50):
        H = weak_homography(64, 0.1, rng)
        corners = image_corners(64, 64)
        moved = apply_homography(H, corners)
        assert np.all(np.abs(moved - corners) <= 0.1 * 64 + 1e-6)


# ---- detector pair sampler ----------------------------------------------------


def batch_rect_groups(batch):
    """Rects grouped by source id in emission order: [(id, (rect_a, rect_b)), ...]"""
    return [
        (sid, (ga.rect, gb.rect))
        for sid, (ga, gb) in zip(batch.source_ids, batch.crop_geometry)
    ]


def check_spatial_invariants(batch, overlap_min):
    groups = batch_rect_groups(batch)
    for _, (ra, rb) in groups:
        assert pixel_overlap_fraction(ra, rb) >= overlap_min - 1e-12
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            if groups[i][0] != groups[j][0]:
                continue
            for r1 in groups[i][1]:
                for r2 in groups[j][1]:
                    assert pixels_disjoint(r1, r2)


def test_detector_batch_spatial_invariants(textured_images):
    cfg = AugmentationConfig(photometric=NO_JITTER, overlap_min=0.8, crop_size=24)
    for seed in range(50):
        batch = sample_detector_batch(textured_images, 4, cfg, rng_seed=seed)
        assert batch.n_pairs == 4
        for va, vb in zip(batch.views_a, batch.views_b):
            assert va.shape == vb.shape == (24, 24, 3)
            assert va.min() >= 0.0 and va.max() <= 1.0
        check_spatial_invariants(batch, 0.8)


def test_detector_batch_disjointness_extends_across_cycles(textured_images):
    # one source image, several visits: every emitted rect must avoid all others
    cfg = AugmentationConfig(photometric=NO_JITTER, overlap_min=0.9, crop_size=16)
    for seed in range(20):
        batch = sample_detector_batch(textured_images[:1], 8, cfg, rng_seed=seed)
        assert len(set(batch.source_ids)) == 1
        check_spatial_invariants(batch, 0.9)


def test_detector_batch_overlap_one_means_identical_rects(textured_images):
    cfg = AugmentationConfig(photometric=NO_JITTER, overlap_min=1.0, crop_size=24)
    batch = sample_detector_batch(textured_images, 4, cfg, rng_seed=3)
    for _, (ra, rb) in batch_rect_groups(batch):
        assert ra == rb
    check_spatial_invariants(batch, 1.0)


def test_detector_batch_overlap_zero_still_separates_pair_groups(textured_images):
    cfg = AugmentationConfig(photometric=NO_JITTER, overlap_min=0.0, crop_size=16)
    for seed in range(10):
        batch = sample_detector_batch(textured_images, 4, cfg, rng_seed=seed)
        check_spatial_invariants(batch, 0.0)


def test_detector_batch_is_seed_deterministic(textured_images):
    cfg = AugmentationConfig(overlap_min=0.8, crop_size=24)
    a = sample_detector_batch(textured_images, 4, cfg, rng_seed=11)
    b = sample_detector_batch(textured_images, 4, cfg, rng_seed=11)
    c = sample_detector_batch(textured_images, 4, cfg, rng_seed=12)
    assert np.array_equal(a.stacked_views(), b.stacked_views())
    assert a.source_ids == b.source_ids
    assert batch_rect_groups(a) == batch_rect_groups(b)
    assert not np.array_equal(a.stacked_views(), c.stacked_views())


def test_stacked_views_interleave(textured_images):
    cfg = AugmentationConfig(overlap_min=0.8, crop_size=24)
    batch = sample_detector_batch(textured_images, 2, cfg, rng_seed=0)
    stacked = batch.stacked_views()
    assert stacked.shape == (4, 24, 24, 3)
    assert np.array_equal(stacked[0], batch.views_a[0])
    assert np.array_equal(stacked[1], batch.views_b[0])
    assert np.array_equal(stacked[2], batch.views_a[1])
    assert np.array_equal(stacked[3], batch.views_b[1])


def test_detector_batch_weak_homography_mode(textured_images):
    cfg = AugmentationConfig(
        photometric=NO_JITTER, geometric="weak-homography", overlap_min=0.8, crop_size=24
    )
    batch = sample_detector_batch(textured_images, 2, cfg, rng_seed=1)
    for ga, gb in batch.crop_geometry:
        assert isinstance(ga.warp, Homography) and isinstance(gb.warp, Homography)
    for v in batch.views_a + batch.views_b:
        assert v.shape == (24, 24, 3)
        assert v.min() >= 0.0 and v.max() <= 1.0


def test_detector_batch_validation(textured_images):
    cfg = AugmentationConfig(crop_size=24)
    with pytest.raises(ValueError):
        sample_detector_batch(textured_images, 3, cfg, 0)
    with pytest.raises(ValueError):
        sample_detector_batch(textured_images, 0, cfg, 0)
    with pytest.raises(ValueError):
        sample_detector_batch([], 2, cfg, 0)
    huge = AugmentationConfig(crop_size=512)
    with pytest.raises(SamplerExhausted):
        sample_detector_batch(textured_images, 2, huge, 0)


def test_detector_batch_skips_too_small_sources(textured_images):
    small = ImageBuffer(np.zeros((16, 16, 3)), id="toosmall")
    cfg = AugmentationConfig(photometric=NO_JITTER, overlap_min=0.8, crop_size=24)
    batch = sample_detector_batch([small] + textured_images[:1], 4, cfg, rng_seed=2)
    assert set(batch.source_ids) == {textured_images[0].id}


def test_augmentation_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(geometric="strong")
    with pytest.raises(ValueError):
        AugmentationConfig(overlap_min=1.2)
    with pytest.raises(ValueError):
        AugmentationConfig(crop_size=4)
    with pytest.raises(ValueError):
        AugmentationConfig(max_corner_shift=-0.5)


# ---- descriptor neighborhood sampler -------------------------------------------


def tex_image(h=64, w=64, seed=21):
    return generate_textured_image(h, w, np.random.default_rng(seed))


def test_extract_patch_center_and_clamped():
    rng = np.random.default_rng(13)
    px = rng.uniform(size=(40, 50, 3))
    patch, clamped = extract_patch(px, 25, 20, 8)
    assert not clamped
    assert np.array_equal(patch, px[16:24, 21:29])
    corner, clamped = extract_patch(px, 0, 0, 8)
    assert clamped
    assert np.array_equal(corner, px[0:8, 0:8])
    with pytest.raises(ValueError):
        extract_patch(px, 0, 0, 64)


def test_descriptor_neighborhood_offsets_and_patches():
    img = tex_image()
    kps = [(32, 30, 1.0)]
    for seed in range(30):
        batch = sample_descriptor_batch(
            img, kps, patch_size=16, n_negatives=6, radius=3, rng_seed=seed,
            photometric=NO_JITTER,
        )
        assert batch.center == (32, 30)
        assert batch.anchor.shape == batch.positive.shape == (16, 16, 3)
        assert len(batch.negatives) == 6
        assert len(set(batch.offsets)) == 6  # sampled without replacement
        for (dx, dy), neg in zip(batch.offsets, batch.negatives):
            assert 1 <= max(abs(dx), abs(dy)) <= 3
            want, was_clamped = extract_patch(img.pixels, 32 + dx, 30 + dy, 16)
            assert not was_clamped
            assert np.array_equal(neg, want)
        # with jitter off, the anchor and positive are the keypoint patch itself
        assert np.allclose(batch.anchor, extract_patch(img.pixels, 32, 30, 16)[0], atol=1e-12)


def test_descriptor_neighborhood_offset_pool_is_capped():
    img = tex_image()
    batch = sample_descriptor_batch(
        img, [(32, 32, 1.0)], patch_size=16, n_negatives=50, radius=1, rng_seed=0
    )
    assert len(batch.negatives) == 8  # the full Chebyshev ring at radius 1
    assert sorted(batch.offsets) == sorted(
        (dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)
    )


def test_descriptor_border_eligibility_boundary():
    img = tex_image(64, 64)
    # patch 32 (half 16), radius 4: eligible x range is [20, 44]
    kps = [(19, 32, 1.0), (20, 32, 1.0), (44, 32, 1.0), (45, 32, 1.0)]
    seen = set()
    for seed in range(40):
        batch = sample_descriptor_batch(img, kps, 32, 4, 4, rng_seed=seed)
        seen.add(batch.center[0])
        assert [i for i, _ in batch.skipped] == [0, 3]
    assert seen == {20, 44}


def test_descriptor_degenerate_cases():
    img = tex_image(64, 64)
    with pytest.raises(DegenerateKeypoint):
        sample_descriptor_batch(img, [], 16, 4, 3, 0)
    with pytest.raises(DegenerateKeypoint):
        sample_descriptor_batch(img, [(0, 0, 1.0), (63, 63, 1.0)], 16, 4, 3, 0)
    with pytest.raises(ValueError):
        sample_descriptor_batch(img, [(32, 32, 1.0)], 16, 0, 3, 0)
    with pytest.raises(ValueError):
        sample_descriptor_batch(img, [(32, 32, 1.0)], 16, 4, 0, 0)


def test_descriptor_batch_is_seed_deterministic():
    img = tex_image()
    kps = [(28, 30, 1.0), (36, 33, 0.5)]
    a = sample_descriptor_batch(img, kps, 16, 5, 3, rng_seed=4)
    b = sample_descriptor_batch(img, kps, 16, 5, 3, rng_seed=4)
    assert np.array_equal(a.anchor, b.anchor)
    assert np.array_equal(a.positive, b.positive)
    assert a.offsets == b.offsets and a.center == b.center


# ---- synthetic benchmark --------------------------------------------------------


def test_illumination_benchmark_layout(tmp_path):
    images = [tex_image(48, 64, seed=s) for s in (1, 2)]
    seq_dirs = generate_synthetic_benchmark(images, tmp_path / "bench", n_targets=3,
                                            mode="illumination", rng_seed=5)
    assert len(seq_dirs) == 2
    for seq, img in zip(seq_dirs, images):
        assert seq.name == f"i_{img.id}"
        assert sorted(p.name for p in seq.iterdir()) == [
            "1.png", "2.png", "3.png", "4.png", "H_1_2", "H_1_3", "H_1_4",
        ]
        ref = load_image(seq / "1.png", resize_to=None)
        assert np.allclose(ref.pixels, img.pixels, atol=1.0 / 255)
        for n in (2, 3, 4):
            assert read_homography_file(seq / f"H_1_{n}") == Homography.identity()
            tgt = load_image(seq / f"{n}.png", resize_to=None)
            assert tgt.pixels.shape == img.pixels.shape
            assert not np.array_equal(tgt.pixels, ref.pixels)  # tone was jittered


def test_viewpoint_benchmark_warp_back_oracle(tmp_path):
    img = tex_image(96, 128, seed=3)
    (seq,) = generate_synthetic_benchmark([img], tmp_path / "bench", n_targets=4,
                                          mode="viewpoint", rng_seed=6)
    assert seq.name == f"v_{img.id}"
    diag = float(np.hypot(127, 95))
    axis_limit = 0.15 * diag / np.sqrt(2.0)
    ref = load_image(seq / "1.png", resize_to=None).pixels
    for n in (2, 3, 4, 5):
        H = read_homography_file(seq / f"H_1_{n}")
        # construction contract: target corners displace 0.05..1.0 of the cap
        moved = apply_homography(H.inverse(), image_corners(128, 96))
        shifts = np.linalg.norm(moved - image_corners(128, 96), axis=1)
        assert np.all(shifts <= 0.15 * diag * (1 + 1e-9))
        assert np.all(shifts >= 0.05 * axis_limit * np.sqrt(2.0) * (1 - 1e-9))
        # warping the target back with H recovers the reference
        tgt = load_image(seq / f"{n}.png", resize_to=None).pixels
        back, valid = warp_image(tgt, H.inverse(), (96, 128))
        err = np.abs(back - ref).mean(axis=2)[valid]
        assert err.mean() < 0.05


def test_benchmark_generation_is_deterministic(tmp_path):
    images = [tex_image(48, 64, seed=9)]
    a = generate_synthetic_benchmark(images, tmp_path / "a", 2, "viewpoint", rng_seed=1)
    b = generate_synthetic_benchmark(images, tmp_path / "b", 2, "viewpoint", rng_seed=1)
    for fa, fb in zip(sorted(a[0].iterdir()), sorted(b[0].iterdir())):
        assert fa.read_bytes() == fb.read_bytes()


def test_benchmark_validation(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic_benchmark([tex_image()], tmp_path, mode="zoom")
    with pytest.raises(ValueError):
        generate_synthetic_benchmark([], tmp_path)
    with pytest.raises(ValueError):
        generate_synthetic_benchmark([tex_image()], tmp_path, n_targets=0)


def test_generate_textured_image_properties():
    img = generate_textured_image(32, 48, np.random.default_rng(17))
    assert img.pixels.shape == (32, 48, 3)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
    assert img.pixels.std() > 0.05  # has actual structure
    assert img.id.startswith("tex")
