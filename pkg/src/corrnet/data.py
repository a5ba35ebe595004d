"""Image ingestion, augmentation, and the spatially-constrained samplers.

Two samplers feed training. The detector sampler draws, per source image,
one overlapping crop pair (the positive) and a second crop pair disjoint
from the first (negatives for the first pair under the in-batch loss). The
descriptor sampler builds a neighborhood around a detected keypoint: two
augmented views of the keypoint patch plus patches at small offsets, which
act as hard negatives. Both are pure functions of (inputs, seed).

A synthetic benchmark generator writes sequence directories in the standard
layout (1.png reference, 2..6.png targets, H_1_n ground-truth files) for
desk-scale evaluation.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib import colors as mcolors
from PIL import Image
from scipy import ndimage

from .errors import DegenerateKeypoint, SamplerExhausted
from .geometry import (
    Homography,
    Rect,
    homography_from_points,
    image_corners,
    rect_overlap_fraction,
    warp_image,
    write_homography_file,
)

DEFAULT_RESOLUTION = (240, 320)  # (H, W)
MAX_SAMPLER_ATTEMPTS = 1000
_LUMA = np.array([0.299, 0.587, 0.114])
_IMAGE_EXTS = (".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp")


# ---- containers ------------------------------------------------------------


@dataclass(frozen=True)
class ImageBuffer:
    """One loaded image: (H, W, 3) float64 pixels in [0, 1] plus a source id."""

    pixels: np.ndarray
    id: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class ImageDirResult(list):
    """Sequence of ImageBuffer with a record of unreadable files."""

    def __init__(self, buffers, failures):
        super().__init__(buffers)
        self.failures = list(failures)


@dataclass(frozen=True)
class PhotometricConfig:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation", "hue"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} range must be non-negative")
        for name in ("grayscale_prob", "blur_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")


@dataclass(frozen=True)
class AugmentationConfig:
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    geometric: str = "none"
    max_corner_shift: float = 0.1  # fraction of crop side, weak-homography mode
    overlap_min: float = 0.8
    crop_size: int = 128

    def __post_init__(self):
        if self.geometric not in ("none", "weak-homography"):
            raise ValueError(f"unknown geometric mode {self.geometric!r}")
        if not 0.0 <= self.overlap_min <= 1.0:
            raise ValueError("overlap_min must lie in [0, 1]")
        if self.max_corner_shift < 0:
            raise ValueError("max_corner_shift must be non-negative")
        if self.crop_size < 8:
            raise ValueError("crop_size must be at least 8")


@dataclass(frozen=True)
class CropGeometry:
    """Where one view came from: its source rect and any warp applied to the
    cropped pixels (crop coordinates -> emitted view coordinates)."""

    rect: Rect
    warp: Homography | None = None


@dataclass
class DetectorPairBatch:
    """N positive pairs; views_a[i] and views_b[i] are overlapping crops of
    source_ids[i]. Consecutive pairs sharing a source id are mutually disjoint."""

    views_a: list
    views_b: list
    source_ids: list
    crop_geometry: list  # per pair: (CropGeometry, CropGeometry)

    @property
    def n_pairs(self) -> int:
        return len(self.views_a)

    def stacked_views(self) -> np.ndarray:
        """Interleave into the (2N, s, s, 3) layout the loss expects."""
        out = np.empty((2 * self.n_pairs,) + self.views_a[0].shape)
        out[0::2] = np.stack(self.views_a)
        out[1::2] = np.stack(self.views_b)
        return out


@dataclass
class DescriptorNeighborhoodBatch:
    """One keypoint neighborhood: two augmented views of the anchor patch and
    patches at nearby offsets (1 <= Chebyshev distance <= radius)."""

    anchor: np.ndarray
    positive: np.ndarray
    negatives: list
    center: tuple  # (x, y) of the anchor keypoint
    offsets: list  # (dx, dy) per negative
    skipped: list  # (keypoint index, reason) for border-degenerate keypoints


# ---- ingestion --------------------------------------------------------------


def _resize_image(pixels: np.ndarray, out_hw) -> np.ndarray:
    oh, ow = out_hw
    img = Image.fromarray(np.clip(pixels * 255.0, 0, 255).astype(np.uint8))
    img = img.resize((ow, oh), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def load_image(path, resize_to=None) -> ImageBuffer:
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    if resize_to is not None and pixels.shape[:2] != tuple(resize_to):
        pixels = _resize_image(pixels, resize_to)
    return ImageBuffer(pixels, id=Path(path).stem)


def load_image_dir(path, resize_to=DEFAULT_RESOLUTION) -> ImageDirResult:
    """Load every decodable image under `path`, sorted by filename.

    Unreadable files are skipped and recorded in the result's `.failures`
    list as (path, message); they never abort the load.
    """
    root = Path(path)
    if not root.is_dir():
        raise NotADirectoryError(f"{path} is not a directory")
    buffers, failures = [], []
    for entry in sorted(root.iterdir()):
        if not entry.is_file() or entry.suffix.lower() not in _IMAGE_EXTS:
            continue
        try:
            buffers.append(load_image(entry, resize_to=resize_to))
        except (OSError, ValueError, SyntaxError) as exc:
            failures.append((str(entry), str(exc)))
    return ImageDirResult(buffers, failures)


# ---- photometric augmentation ----------------------------------------------


def _luminance(pixels: np.ndarray) -> np.ndarray:
    return pixels @ _LUMA


def photometric_augment(pixels: np.ndarray, cfg: PhotometricConfig, rng) -> np.ndarray:
    """Color jitter, random grayscale, random blur. All random draws happen
    in a fixed order regardless of which stages fire, so a given seed always
    consumes the same stream."""
    p = cfg
    f_bright = rng.uniform(1 - p.brightness, 1 + p.brightness)
    f_contrast = rng.uniform(1 - p.contrast, 1 + p.contrast)
    f_sat = rng.uniform(1 - p.saturation, 1 + p.saturation)
    f_hue = rng.uniform(-p.hue, p.hue)
    do_gray = rng.uniform() < p.grayscale_prob
    do_blur = rng.uniform() < p.blur_prob
    sigma = rng.uniform(0.1, 2.0)

    out = pixels * f_bright
    mean = _luminance(np.clip(out, 0, 1)).mean()
    out = (out - mean) * f_contrast + mean
    gray = _luminance(np.clip(out, 0, 1))[..., None]
    out = gray + (out - gray) * f_sat
    out = np.clip(out, 0.0, 1.0)
    if f_hue != 0.0:
        hsv = mcolors.rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + f_hue) % 1.0
        out = mcolors.hsv_to_rgb(hsv)
    if do_gray:
        out = np.repeat(_luminance(out)[..., None], 3, axis=2)
    if do_blur:
        out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0), mode="nearest")
    return np.clip(out, 0.0, 1.0)


def weak_homography(crop_size: int, max_shift_frac: float, rng) -> Homography:
    """Random projective warp moving each crop corner by at most
    max_shift_frac * crop_size per axis (crop coords -> view coords)."""
    s = crop_size
    corners = image_corners(s, s)
    jitter = rng.uniform(-max_shift_frac * s, max_shift_frac * s, size=(4, 2))
    return homography_from_points(corners, corners + jitter)


# ---- detector pair sampler ---------------------------------------------------


def _sample_rect(h: int, w: int, size: int, rng) -> Rect:
    return Rect(int(rng.integers(0, w - size + 1)), int(rng.integers(0, h - size + 1)), size, size)


def _sample_overlapping_pair(h: int, w: int, size: int, overlap_min: float, rng):
    """Two equal-size rects with overlap fraction in [overlap_min, 1].

    overlap_min == 0 means unconstrained placement (both rects independently
    uniform, the ablation baseline); overlap_min == 1 forces identical rects.
    """
    if overlap_min >= 1.0:
        a = _sample_rect(h, w, size, rng)
        return a, a
    if overlap_min <= 0.0:
        return _sample_rect(h, w, size, rng), _sample_rect(h, w, size, rng)
    for _ in range(MAX_SAMPLER_ATTEMPTS):
        a = _sample_rect(h, w, size, rng)
        # target fraction u = fx * fy with fx, fy the per-axis overlap fractions
        u = rng.uniform(overlap_min, 1.0)
        fx = rng.uniform(u, 1.0)
        fy = u / fx
        dx = int(round((1 - fx) * size)) * (1 if rng.uniform() < 0.5 else -1)
        dy = int(round((1 - fy) * size)) * (1 if rng.uniform() < 0.5 else -1)
        bx, by = a.x0 + dx, a.y0 + dy
        if not (0 <= bx <= w - size and 0 <= by <= h - size):
            continue
        b = Rect(bx, by, size, size)
        if rect_overlap_fraction(a, b) >= overlap_min:
            return a, b
    raise SamplerExhausted(
        f"could not place an overlapping pair (crop {size}, image {w}x{h})"
    )


def _rects_disjoint(group_a, group_b) -> bool:
    return all(rect_overlap_fraction(ra, rb) == 0.0 for ra in group_a for rb in group_b)


def _make_view(pixels: np.ndarray, rect: Rect, cfg: AugmentationConfig, rng):
    crop = pixels[rect.y0 : rect.y1, rect.x0 : rect.x1]
    warp = None
    if cfg.geometric == "weak-homography":
        warp = weak_homography(cfg.crop_size, cfg.max_corner_shift, rng)
        crop, _ = warp_image(crop, warp, (cfg.crop_size, cfg.crop_size), mode="nearest")
        crop = np.clip(crop, 0.0, 1.0)
    view = photometric_augment(crop, cfg.photometric, rng)
    return view, CropGeometry(rect, warp)


def sample_detector_batch(
    images, n_pairs: int, cfg: AugmentationConfig, rng_seed: int
) -> DetectorPairBatch:
    """Draw n_pairs positive pairs; each selected source image contributes
    exactly two pairs whose crop rectangles are mutually disjoint."""
    if n_pairs < 2 or n_pairs % 2 != 0:
        raise ValueError("n_pairs must be an even number >= 2")
    if len(images) == 0:
        raise ValueError("no source images")
    rng = np.random.default_rng(rng_seed)
    size = cfg.crop_size
    usable = [
        (i, img)
        for i, img in enumerate(images)
        if img.height >= size and img.width >= size
    ]
    if not usable:
        raise SamplerExhausted(f"no image fits a {size}px crop")

    # each visited source image yields 2 mutually disjoint pairs; a shuffled
    # order cycles when more pairs are requested than images exist, and the
    # disjointness constraint then extends across visits of the same image
    order = []
    while len(order) < n_pairs // 2:
        order.extend(rng.permutation(len(usable)).tolist())
    order = order[: n_pairs // 2]

    placed = defaultdict(list)  # source id -> rects already emitted
    views_a, views_b, source_ids, geometry = [], [], [], []
    for idx in order:
        _, img = usable[idx]
        h, w = img.height, img.width
        for _ in range(MAX_SAMPLER_ATTEMPTS):
            a1, b1 = _sample_overlapping_pair(h, w, size, cfg.overlap_min, rng)
            if not _rects_disjoint((a1, b1), placed[img.id]):
                continue
            a2, b2 = _sample_overlapping_pair(h, w, size, cfg.overlap_min, rng)
            if _rects_disjoint((a2, b2), placed[img.id] + [a1, b1]):
                break
        else:
            raise SamplerExhausted(
                f"no disjoint second pair found in {w}x{h} image (crop {size})"
            )
        placed[img.id].extend([a1, b1, a2, b2])
        for ra, rb in ((a1, b1), (a2, b2)):
            va, ga = _make_view(img.pixels, ra, cfg, rng)
            vb, gb = _make_view(img.pixels, rb, cfg, rng)
            views_a.append(va)
            views_b.append(vb)
            source_ids.append(img.id)
            geometry.append((ga, gb))
    return DetectorPairBatch(views_a, views_b, source_ids, geometry)


# ---- descriptor neighborhood sampler ----------------------------------------


def extract_patch(pixels: np.ndarray, x: int, y: int, patch_size: int):
    """Patch of side patch_size centred at (x, y); the window is clamped to
    stay inside the image. Returns (patch, clamped_flag)."""
    h, w = pixels.shape[:2]
    if patch_size > min(h, w):
        raise ValueError(f"patch_size {patch_size} exceeds image {w}x{h}")
    half = patch_size // 2
    x0 = min(max(int(x) - half, 0), w - patch_size)
    y0 = min(max(int(y) - half, 0), h - patch_size)
    clamped = (x0 != int(x) - half) or (y0 != int(y) - half)
    return pixels[y0 : y0 + patch_size, x0 : x0 + patch_size].copy(), clamped


def _neighbor_offsets(radius: int) -> list:
    return [
        (dx, dy)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if max(abs(dx), abs(dy)) >= 1
    ]


def sample_descriptor_batch(
    image: ImageBuffer,
    keypoints,
    patch_size: int,
    n_negatives: int,
    radius: int,
    rng_seed: int,
    photometric: PhotometricConfig | None = None,
) -> DescriptorNeighborhoodBatch:
    """Build one keypoint neighborhood from `image`.

    A random border-safe keypoint is chosen; its patch is augmented twice
    (anchor and positive) and n_negatives patches are taken at random offsets
    with 1 <= Chebyshev norm <= radius. Keypoints whose patch or neighbor
    patches would cross the border are skipped and reported; if every
    keypoint is degenerate, DegenerateKeypoint is raised.
    """
    points = keypoints.points if hasattr(keypoints, "points") else list(keypoints)
    if len(points) == 0:
        raise DegenerateKeypoint("keypoint set is empty")
    if radius < 1 or n_negatives < 1:
        raise ValueError("radius and n_negatives must be >= 1")
    photometric = photometric or PhotometricConfig()
    rng = np.random.default_rng(rng_seed)
    h, w = image.height, image.width
    half = patch_size // 2
    margin = half + radius

    eligible, skipped = [], []
    for i, (x, y, _score) in enumerate(points):
        if margin <= x < w - (patch_size - half) - radius + 1 and (
            margin <= y < h - (patch_size - half) - radius + 1
        ):
            eligible.append((i, int(x), int(y)))
        else:
            skipped.append((i, f"keypoint ({x}, {y}) within {margin}px of border"))
    if not eligible:
        raise DegenerateKeypoint(
            f"all {len(points)} keypoints within {margin}px of the border"
        )

    _, x, y = eligible[int(rng.integers(0, len(eligible)))]
    patch, _ = extract_patch(image.pixels, x, y, patch_size)
    anchor = photometric_augment(patch, photometric, rng)
    positive = photometric_augment(patch, photometric, rng)

    all_offsets = _neighbor_offsets(radius)
    take = min(n_negatives, len(all_offsets))
    chosen = rng.choice(len(all_offsets), size=take, replace=False)
    offsets = [all_offsets[int(k)] for k in chosen]
    negatives = [
        extract_patch(image.pixels, x + dx, y + dy, patch_size)[0] for dx, dy in offsets
    ]
    return DescriptorNeighborhoodBatch(
        anchor=anchor,
        positive=positive,
        negatives=negatives,
        center=(x, y),
        offsets=offsets,
        skipped=skipped,
    )


# ---- synthetic benchmark ------------------------------------------------------


def _photometric_variant(pixels: np.ndarray, rng) -> np.ndarray:
    gamma = rng.uniform(0.6, 1.6)
    gain = rng.uniform(0.7, 1.2)
    bias = rng.uniform(-0.12, 0.12)
    out = np.power(np.clip(pixels, 0.0, 1.0), gamma) * gain + bias
    return np.clip(out, 0.0, 1.0)


def _viewpoint_homography(h: int, w: int, max_frac: float, rng) -> Homography:
    """Transform mapping target coords -> reference coords: each target corner
    lands strictly inside the reference frame, displaced at most max_frac of
    the diagonal per corner, so warping never samples outside the image."""
    corners = image_corners(w, h)
    diag = float(np.hypot(w - 1, h - 1))
    axis_limit = max_frac * diag / np.sqrt(2.0)  # caps Euclidean shift at max_frac * diag
    inward = np.array([[1, 1], [-1, 1], [1, -1], [-1, -1]], dtype=float)
    shift = rng.uniform(0.05 * axis_limit, axis_limit, size=(4, 2)) * inward
    return homography_from_points(corners, corners + shift)


def _save_png(path, pixels: np.ndarray) -> None:
    Image.fromarray(np.clip(pixels * 255.0, 0, 255).astype(np.uint8)).save(path)


def generate_synthetic_benchmark(
    images,
    out,
    n_targets: int = 5,
    mode: str = "illumination",
    rng_seed: int = 0,
    max_corner_frac: float = 0.15,
) -> list:
    """Write one sequence directory per source image and return their paths.

    Layout per sequence: `1.png` (reference), `2..{n+1}.png` (targets), and
    `H_1_2 .. H_1_{n+1}` text files mapping reference coords to target coords.
    Illumination mode keeps geometry fixed (identity H) and jitters tone;
    viewpoint mode warps by random homographies whose corners stay inside
    the reference frame (no out-of-image sampling).
    """
    if mode not in ("illumination", "viewpoint"):
        raise ValueError(f"unknown benchmark mode {mode!r}")
    if len(images) == 0:
        raise ValueError("need at least one source image")
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    rng = np.random.default_rng(rng_seed)
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    prefix = "i" if mode == "illumination" else "v"
    seq_dirs = []
    for img in images:
        seq = root / f"{prefix}_{img.id}"
        seq.mkdir(exist_ok=True)
        _save_png(seq / "1.png", img.pixels)
        h, w = img.height, img.width
        for n in range(2, n_targets + 2):
            if mode == "illumination":
                target = _photometric_variant(img.pixels, rng)
                h_ref_to_tgt = Homography.identity()
            else:
                g_tgt_to_ref = _viewpoint_homography(h, w, max_corner_frac, rng)
                h_ref_to_tgt = g_tgt_to_ref.inverse()
                target, _ = warp_image(img.pixels, h_ref_to_tgt, (h, w))
                target = np.clip(target, 0.0, 1.0)
            _save_png(seq / f"{n}.png", target)
            write_homography_file(seq / f"H_1_{n}", h_ref_to_tgt)
        seq_dirs.append(seq)
    return seq_dirs


def generate_textured_image(height: int, width: int, rng) -> ImageBuffer:
    """Multi-octave smoothed noise with color mixing: cheap synthetic imagery
    with structure at several scales, for demos and tests."""
    acc = np.zeros((height, width))
    for sigma, weight in ((2, 1.0), (6, 2.0), (14, 4.0)):
        layer = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma)
        acc += weight * layer
    acc -= acc.min()
    acc /= max(acc.max(), 1e-12)
    mix = rng.uniform(0.3, 1.0, size=3)
    phase = rng.uniform(0, np.pi, size=3)
    channels = [0.5 + 0.5 * np.sin(2.5 * np.pi * acc * m + p) for m, p in zip(mix, phase)]
    pixels = np.clip(np.stack(channels, axis=-1), 0.0, 1.0)
    return ImageBuffer(pixels, id=f"tex{rng.integers(0, 10**9)}")
