"""Keypoint detection by gradient attribution on an image pair.

Joint mode cross-modulates the two images: each image's last-stage feature
maps are channel-scaled by the other image's pooled latent, the most active
common neuron (argmax of the elementwise product of the two original latent
vectors) is recomputed through the modulated maps, and that scalar is
attributed back to the pixels two ways at once: a coarse class-activation
mask (channel weights from spatially pooled standard gradients, rectified,
upsampled, min-max normalized) and a fine guided-backpropagation gradient.
The saliency is their elementwise product; non-maximum suppression plus a
top-k cut turns it into keypoints. Single mode is the ablation: one image,
its own most active neuron, no modulation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoGradientPath
from .model import CorrNetModel, ForwardTrace, GradientTarget


@dataclass(frozen=True)
class DetectorConfig:
    source: str = "h"  # latent driving neuron selection and backprop: h | z
    mode: str = "joint"  # joint | single
    nms_window: int = 3
    top_k: int = 1000
    saliency_reduce: str = "channel-max-abs"

    def __post_init__(self):
        if self.source not in ("h", "z"):
            raise ValueError(f"source must be 'h' or 'z', got {self.source!r}")
        if self.mode not in ("joint", "single"):
            raise ValueError(f"mode must be 'joint' or 'single', got {self.mode!r}")
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be odd and >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.saliency_reduce != "channel-max-abs":
            raise ValueError(f"unknown saliency_reduce {self.saliency_reduce!r}")


@dataclass
class KeypointSet:
    """Detections as (x, y, score) with score > 0, sorted by descending score
    (ties by row-major position); at most top_k entries."""

    points: list
    image_id: str = ""

    def __len__(self) -> int:
        return len(self.points)

    def xy(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 2))
        return np.array([(p[0], p[1]) for p in self.points], dtype=np.float64)

    def scores(self) -> np.ndarray:
        return np.array([p[2] for p in self.points], dtype=np.float64)


@dataclass
class SaliencyPair:
    """Two saliency maps; `warned_*` marks an image whose target activation
    was exactly zero (its map is all zeros rather than an error)."""

    saliency_ref: np.ndarray
    saliency_tgt: np.ndarray | None = None
    warned_ref: bool = False
    warned_tgt: bool = False
    neuron: int = -1

    def __iter__(self):
        return iter((self.saliency_ref, self.saliency_tgt))


def select_common_neuron(trace_ref: ForwardTrace, trace_tgt: ForwardTrace, source: str) -> int:
    """Argmax of the elementwise product of the two latent vectors; ties go
    to the lowest index. Symmetric in its arguments."""
    if source == "h":
        product = trace_ref.latent * trace_tgt.latent
    elif source == "z":
        product = trace_ref.projection * trace_tgt.projection
    else:
        raise ValueError(f"source must be 'h' or 'z', got {source!r}")
    return int(np.argmax(product))


def _bilinear_upsample(grid: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear resize with corner alignment: grid cell centres map onto the
    output frame's corner pixels, so maxima keep their relative position."""
    gh, gw = grid.shape
    oh, ow = out_hw
    ys = np.linspace(0.0, gh - 1.0, oh)
    xs = np.linspace(0.0, gw - 1.0, ow)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy.ravel(), xx.ravel()], order=1).reshape(oh, ow)


def _saliency_for_trace(
    model: CorrNetModel, trace: ForwardTrace, neuron: int, source: str, modulation
) -> tuple[np.ndarray, bool]:
    """Mask-times-guided-gradient attribution of one scalar to one image."""
    h_img, w_img = trace.input_image.shape[:2]
    target = GradientTarget(source=source, index=neuron, modulation=modulation)
    value = model.target_value(trace, target)
    if value == 0.0:
        return np.zeros((h_img, w_img)), True

    d_maps, maps = model.feature_gradient(trace, target)
    weights = d_maps.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * maps).sum(axis=0), 0.0)
    cam = _bilinear_upsample(cam, (h_img, w_img))
    top, bottom = cam.max(), cam.min()
    if top > bottom:
        cam = (cam - bottom) / (top - bottom)
    elif top > 0:
        cam = np.ones_like(cam)  # constant positive mask: pure pass-through

    try:
        guided = model.input_gradient(trace, target, guided=True)
    except NoGradientPath:
        return np.zeros((h_img, w_img)), True
    detail = np.abs(guided).max(axis=2)
    return cam * detail, False


def joint_saliency(
    model: CorrNetModel, image_ref: np.ndarray, image_tgt: np.ndarray, cfg: DetectorConfig
) -> SaliencyPair:
    """Saliency maps for both images of a pair, or for one image alone.

    Joint mode: feature maps of each image are channel-scaled by the pooled
    latent of the other before the common neuron's activation is recomputed
    and backpropagated. Single mode: image_tgt is ignored and each call
    attributes the image's own most active neuron without modulation.
    """
    trace_ref = model.forward(image_ref)
    if cfg.mode == "single":
        own = trace_ref.latent if cfg.source == "h" else trace_ref.projection
        neuron = int(np.argmax(own))
        sal, warned = _saliency_for_trace(model, trace_ref, neuron, cfg.source, None)
        return SaliencyPair(sal, None, warned_ref=warned, neuron=neuron)

    trace_tgt = model.forward(image_tgt)
    neuron = select_common_neuron(trace_ref, trace_tgt, cfg.source)
    sal_ref, warn_ref = _saliency_for_trace(
        model, trace_ref, neuron, cfg.source, trace_tgt.latent
    )
    sal_tgt, warn_tgt = _saliency_for_trace(
        model, trace_tgt, neuron, cfg.source, trace_ref.latent
    )
    return SaliencyPair(sal_ref, sal_tgt, warn_ref, warn_tgt, neuron=neuron)


def nms_topk(saliency: np.ndarray, cfg: DetectorConfig, image_id: str = "") -> KeypointSet:
    """Keep pixels that are the strict maximum of their nms_window square
    (ties resolved to the lexicographically smallest (y, x) coordinate),
    drop non-positive scores, order by descending score, cut to top_k.

    A retained pixel must beat every lexicographically smaller neighbor
    strictly and every lexicographically greater neighbor weakly; re-running
    on the retained sparse map is therefore the identity.
    """
    v = np.asarray(saliency, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"saliency must be 2-d, got shape {v.shape}")
    r = cfg.nms_window // 2
    keep = v > 0.0
    h, w = v.shape
    padded = np.full((h + 2 * r, w + 2 * r), -np.inf)
    padded[r : r + h, r : r + w] = v
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            shifted = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            if (dy, dx) < (0, 0):
                keep &= v > shifted  # lex-smaller neighbor: must beat strictly
            else:
                keep &= v >= shifted  # lex-greater neighbor: ties are ours
    ys, xs = np.nonzero(keep)
    order = np.lexsort((xs, ys, -v[ys, xs]))
    points = [
        (int(xs[i]), int(ys[i]), float(v[ys[i], xs[i]])) for i in order[: cfg.top_k]
    ]
    return KeypointSet(points, image_id=image_id)


def detect(
    model: CorrNetModel,
    image_ref: np.ndarray,
    image_tgt: np.ndarray | None,
    cfg: DetectorConfig,
) -> tuple[KeypointSet, KeypointSet | None]:
    """Full pipeline: saliency then NMS/top-k. Joint mode needs both images
    and returns both keypoint sets; single mode takes one image."""
    if cfg.mode == "joint":
        if image_tgt is None:
            raise ValueError("joint mode requires both images")
        pair = joint_saliency(model, image_ref, image_tgt, cfg)
        return (
            nms_topk(pair.saliency_ref, cfg, image_id="ref"),
            nms_topk(pair.saliency_tgt, cfg, image_id="tgt"),
        )
    pair = joint_saliency(model, image_ref, None, cfg)
    kps_ref = nms_topk(pair.saliency_ref, cfg, image_id="ref")
    if image_tgt is None:
        return kps_ref, None
    pair_tgt = joint_saliency(model, image_tgt, None, cfg)
    return kps_ref, nms_topk(pair_tgt.saliency_ref, cfg, image_id="tgt")


def detect_random(shape_hw, cfg: DetectorConfig, rng_seed: int) -> KeypointSet:
    """Random baseline: uniform-noise saliency through the same NMS/top-k."""
    rng = np.random.default_rng(rng_seed)
    noise = rng.uniform(1e-6, 1.0, size=shape_hw)
    return nms_topk(noise, cfg, image_id=f"random{rng_seed}")


# ---- keypoint file IO ---------------------------------------------------------


def save_keypoints(path, kps: KeypointSet, meta: dict | None = None) -> None:
    """Write `x y score` lines plus a JSON sidecar `<path>.meta.json` holding
    the detection settings (mode, source, nms_window, top_k, checkpoint hash)."""
    with open(path, "w", encoding="ascii") as fh:
        for x, y, score in kps.points:
            fh.write(f"{x} {y} {score!r}\n")
    if meta is not None:
        with open(f"{path}.meta.json", "w", encoding="ascii") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_keypoints(path) -> KeypointSet:
    points = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, score = line.split()
            points.append((int(x), int(y), float(score)))
    return KeypointSet(points, image_id=str(path))


def checkpoint_hash(path) -> str:
    """Hex digest identifying a checkpoint file, recorded in sidecars."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
