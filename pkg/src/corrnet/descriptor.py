"""Local patch description, cosine matching, and robust homography fitting.

Descriptors are the unit-norm projections of keypoint-centred patches run
through the fine-tuned weights. Matching is mutual nearest neighbor under
cosine similarity; geometry is recovered by random-sample consensus over
4-point direct linear transforms with a least-squares refit on the inliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import extract_patch
from .detector import KeypointSet
from .errors import DegenerateConfiguration, InsufficientMatches, ShapeMismatch
from .geometry import Homography, apply_homography, homography_from_points
from .model import CorrNetModel

DESCRIBE_CHUNK = 64  # patches per forward pass; bounds peak memory


@dataclass
class DescriptorSet:
    """(K, d) unit-norm descriptor rows aligned 1:1 with a KeypointSet.
    `clamped[i]` flags border keypoints whose patch window was shifted."""

    descriptors: np.ndarray
    clamped: np.ndarray

    def __len__(self) -> int:
        return self.descriptors.shape[0]


@dataclass
class MatchSet:
    """Mutual-nearest-neighbor matches: (index_ref, index_tgt, cosine)."""

    pairs: list
    method: str = "mutual-nn"

    def __len__(self) -> int:
        return len(self.pairs)


def describe(
    model_l: CorrNetModel, image: np.ndarray, keypoints: KeypointSet, patch_size: int = 32
) -> DescriptorSet:
    """One descriptor per keypoint, in keypoint order. Border patches are
    clamped inside the image (never dropped) and flagged."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) image, got {image.shape}")
    if patch_size < model_l.min_input:
        raise ShapeMismatch(
            f"patch_size {patch_size} below encoder minimum {model_l.min_input}"
        )
    n = len(keypoints.points)
    if n == 0:
        return DescriptorSet(
            np.zeros((0, model_l.config.description_size)), np.zeros(0, dtype=bool)
        )
    patches = np.empty((n, patch_size, patch_size, 3))
    clamped = np.zeros(n, dtype=bool)
    for i, (x, y, _score) in enumerate(keypoints.points):
        patches[i], clamped[i] = extract_patch(image, x, y, patch_size)
    rows = []
    for start in range(0, n, DESCRIBE_CHUNK):
        z, _ = model_l.forward_batch(patches[start : start + DESCRIBE_CHUNK])
        rows.append(z)
    return DescriptorSet(np.vstack(rows), clamped)


def match(a: DescriptorSet, b: DescriptorSet, min_score: float = 0.0) -> MatchSet:
    """Pairs (i, j) where i and j are each other's best cosine match and the
    similarity clears min_score. Rows are unit-norm so the dot product is
    the cosine."""
    da, db = a.descriptors, b.descriptors
    if da.shape[1] != db.shape[1]:
        raise ShapeMismatch(f"descriptor sizes differ: {da.shape[1]} vs {db.shape[1]}")
    if len(a) == 0 or len(b) == 0:
        return MatchSet([])
    sim = da @ db.T
    best_b = np.argmax(sim, axis=1)
    best_a = np.argmax(sim, axis=0)
    pairs = []
    for i in range(len(a)):
        j = int(best_b[i])
        score = float(sim[i, j])
        if int(best_a[j]) == i and score >= min_score:
            pairs.append((i, j, score))
    return MatchSet(pairs)


def _normalize_batch(pts: np.ndarray):
    """Batched Hartley conditioning. pts (S, 4, 2) -> (normalized points,
    T (S,3,3), T_inverse (S,3,3)) with T a centering/scaling similarity."""
    s = pts.shape[0]
    centroid = pts.mean(axis=1, keepdims=True)
    centered = pts - centroid
    mean_dist = np.linalg.norm(centered, axis=2).mean(axis=1)
    scale = np.where(mean_dist > 0, np.sqrt(2.0) / np.maximum(mean_dist, 1e-30), 1.0)
    t = np.zeros((s, 3, 3))
    t_inv = np.zeros((s, 3, 3))
    t[:, 0, 0] = t[:, 1, 1] = scale
    t[:, 2, 2] = 1.0
    t[:, :2, 2] = -scale[:, None] * centroid[:, 0]
    t_inv[:, 0, 0] = t_inv[:, 1, 1] = 1.0 / scale
    t_inv[:, 2, 2] = 1.0
    t_inv[:, :2, 2] = centroid[:, 0]
    return centered * scale[:, None, None], t, t_inv


def _fit_dlt_batch(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Solve many Hartley-normalized 4-point direct linear transforms at once.

    src, dst are (S, 4, 2) sample stacks; returns (S, 3, 3) candidate
    matrices (singular fits yield garbage rows that later score zero
    inliers)."""
    s = src.shape[0]
    src_n, t_src, _ = _normalize_batch(src)
    dst_n, _, t_dst_inv = _normalize_batch(dst)
    rows = np.zeros((s, 8, 9))
    x, y = src_n[..., 0], src_n[..., 1]
    u, v = dst_n[..., 0], dst_n[..., 1]
    rows[:, 0::2, 0] = x
    rows[:, 0::2, 1] = y
    rows[:, 0::2, 2] = 1.0
    rows[:, 0::2, 6] = -u * x
    rows[:, 0::2, 7] = -u * y
    rows[:, 0::2, 8] = -u
    rows[:, 1::2, 3] = x
    rows[:, 1::2, 4] = y
    rows[:, 1::2, 5] = 1.0
    rows[:, 1::2, 6] = -v * x
    rows[:, 1::2, 7] = -v * y
    rows[:, 1::2, 8] = -v
    _, _, vt = np.linalg.svd(rows)
    h_norm = vt[:, -1, :].reshape(s, 3, 3)
    return t_dst_inv @ h_norm @ t_src


def _sample_collinear(points: np.ndarray) -> np.ndarray:
    """(S, 4, 2) -> bool mask: sample has 3+ collinear points (degenerate)."""
    idx = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    bad = np.zeros(points.shape[0], dtype=bool)
    for i, j, k in idx:
        d1 = points[:, j] - points[:, i]
        d2 = points[:, k] - points[:, i]
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        bad |= np.abs(cross) < 1e-9
    return bad


def estimate_homography(
    matches: MatchSet,
    kps_ref: KeypointSet,
    kps_tgt: KeypointSet,
    inlier_px: float = 3.0,
    iterations: int = 1000,
    seed: int = 0,
):
    """Consensus fit of a reference-to-target homography from matches.

    Returns (Homography, inlier mask over matches). The best minimal model
    (most inliers at reprojection error < inlier_px, deterministic given
    seed) is refit on all its inliers by normalized least squares."""
    if len(matches) < 4:
        raise InsufficientMatches(f"{len(matches)} matches, need at least 4")
    xy_ref = kps_ref.xy()
    xy_tgt = kps_tgt.xy()
    src = np.array([xy_ref[i] for i, _, _ in matches.pairs])
    dst = np.array([xy_tgt[j] for _, j, _ in matches.pairs])
    n = len(matches)

    rng = np.random.default_rng(seed)
    samples = np.array([rng.choice(n, size=4, replace=False) for _ in range(iterations)])
    src_s = src[samples]
    dst_s = dst[samples]
    usable = ~_sample_collinear(src_s) & ~_sample_collinear(dst_s)
    if not np.any(usable):
        raise DegenerateConfiguration("every minimal sample was collinear")

    candidates = _fit_dlt_batch(src_s[usable], dst_s[usable])

    # score all candidates against all matches at once
    ones = np.ones((n, 1))
    pts = np.concatenate([src, ones], axis=1)  # (n, 3)
    proj = np.einsum("sab,nb->sna", candidates, pts)  # (S, n, 3)
    w = proj[..., 2]
    safe = np.abs(w) > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        px = proj[..., 0] / w
        py = proj[..., 1] / w
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    inl = safe & (err < inlier_px)
    counts = inl.sum(axis=1)
    best = int(np.argmax(counts))  # first max: deterministic tie-break
    if counts[best] < 4:
        raise DegenerateConfiguration(
            f"no candidate reached 4 inliers at {inlier_px}px"
        )
    mask = inl[best]
    try:
        fit = homography_from_points(src[mask], dst[mask])
    except ValueError as exc:
        raise DegenerateConfiguration(f"inlier refit failed: {exc}") from exc

    # refit can change marginal memberships; rescore once with the final model
    final_err = _reprojection_error(fit, src, dst)
    final_mask = final_err < inlier_px
    if final_mask.sum() >= 4:
        mask = final_mask
    return fit, mask


def _reprojection_error(H: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    proj = apply_homography(H, src)
    return np.linalg.norm(proj - dst, axis=1)


# ---- match file IO -------------------------------------------------------------


def save_matches(path, matches: MatchSet, kps_ref: KeypointSet, kps_tgt: KeypointSet) -> None:
    """Line format: `x_ref y_ref x_tgt y_tgt score`."""
    with open(path, "w", encoding="ascii") as fh:
        for i, j, score in matches.pairs:
            xr, yr, _ = kps_ref.points[i]
            xt, yt, _ = kps_tgt.points[j]
            fh.write(f"{xr} {yr} {xt} {yt} {score!r}\n")


def load_matches(path) -> list:
    """Rows of (x_ref, y_ref, x_tgt, y_tgt, score)."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            xr, yr, xt, yt, score = line.split()
            rows.append((int(xr), int(yr), int(xt), int(yt), float(score)))
    return rows
