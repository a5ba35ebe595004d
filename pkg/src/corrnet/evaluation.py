"""Repeatability, localization error, and homography correctness over
sequence directories (1.png reference, 2..k.png targets, H_1_n files).

A keypoint is correct when, transferred by the ground-truth homography, it
lands within epsilon of some detection in the partner image. Repeatability
counts correct points in both directions over all detections; localization
error averages the residual distance over the correct points only. Nothing
is ever filtered by ground truth before scoring: every detection counts
against the denominator.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .data import ImageBuffer, load_image
from .descriptor import describe, estimate_homography, match
from .detector import DetectorConfig, KeypointSet, detect, detect_random
from .errors import (
    DegenerateConfiguration,
    EmptyDetections,
    InsufficientMatches,
    MalformedSequence,
)
from .geometry import Homography, corner_transfer_error, read_homography_file

_W_EPS = 1e-12
_IMG_RE = re.compile(r"^(\d+)\.(png|ppm|pgm|jpg|jpeg|bmp)$")


@dataclass(frozen=True)
class EvalConfig:
    epsilon: float = 3.0
    homography_epsilons: tuple = (1.0, 3.0, 5.0)
    resolution: tuple = (240, 320)  # (H, W)
    filtering: str = "none"  # fixed: detections are never screened by ground truth

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if any(e <= 0 for e in self.homography_epsilons):
            raise ValueError("homography epsilons must be positive")
        if self.filtering != "none":
            raise ValueError("ground-truth filtering is permanently disabled")
        object.__setattr__(self, "homography_epsilons", tuple(self.homography_epsilons))
        object.__setattr__(self, "resolution", tuple(self.resolution))


@dataclass
class RepResult:
    """Repeatability outcome; unpacks as (rep, localization_error)."""

    rep: float
    localization_error: float  # nan when the pair has no correct points
    n_ref: int
    n_tgt: int
    n_correct: int

    def __iter__(self):
        return iter((self.rep, self.localization_error))


@dataclass
class PairResult:
    sequence: str
    pair_index: int  # target image number n (pair is (1, n))
    rep: float
    le: float
    n_ref: int
    n_tgt: int
    n_correct: int
    n_matches: int = 0
    n_inliers: int = 0
    corr_h: dict | None = None
    warning: str = ""


@dataclass
class EvalReport:
    settings: dict
    pairs: list = field(default_factory=list)

    @property
    def rep_mean(self) -> float:
        return float(np.mean([p.rep for p in self.pairs])) if self.pairs else math.nan

    @property
    def le_mean(self) -> float:
        samples = [p.le for p in self.pairs if not math.isnan(p.le)]
        return float(np.mean(samples)) if samples else math.nan

    @property
    def corr_h_mean(self) -> dict:
        scored = [p for p in self.pairs if p.corr_h is not None]
        if not scored:
            return {}
        eps_values = sorted(scored[0].corr_h)
        return {e: float(np.mean([p.corr_h[e] for p in scored])) for e in eps_values}

    def sequences(self) -> list:
        return sorted({p.sequence for p in self.pairs})

    def sequence_summary(self, name: str) -> dict:
        rows = [p for p in self.pairs if p.sequence == name]
        les = [p.le for p in rows if not math.isnan(p.le)]
        out = {
            "pairs": len(rows),
            "rep": float(np.mean([p.rep for p in rows])),
            "le": float(np.mean(les)) if les else math.nan,
        }
        scored = [p for p in rows if p.corr_h is not None]
        if scored:
            for e in sorted(scored[0].corr_h):
                out[f"corr_h@{e:g}"] = float(np.mean([p.corr_h[e] for p in scored]))
        return out


def _transfer(H: Homography, pts: np.ndarray):
    """Project points, tolerating vanishing homogeneous coordinates.

    Returns (projected (N, 2), valid mask); invalid rows are junk and must
    be masked by the caller."""
    hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    proj = hom @ H.m.T
    w = proj[:, 2]
    valid = np.abs(w) > _W_EPS
    safe_w = np.where(valid, w, 1.0)
    return proj[:, :2] / safe_w[:, None], valid


def _min_dists(src_xy: np.ndarray, H: Homography, cand_xy: np.ndarray):
    """Distance from each transferred source point to its nearest candidate."""
    if src_xy.shape[0] == 0 or cand_xy.shape[0] == 0:
        return np.full(src_xy.shape[0], np.inf)
    proj, valid = _transfer(H, src_xy)
    diff = proj[:, None, :] - cand_xy[None, :, :]
    dists = np.linalg.norm(diff, axis=2).min(axis=1)
    return np.where(valid, dists, np.inf)


def correctness(x, candidates: KeypointSet, H: Homography, epsilon: float) -> bool:
    """True when H x lies within epsilon of some candidate keypoint."""
    xy = candidates.xy()
    if xy.shape[0] == 0:
        return False
    d = _min_dists(np.atleast_2d(np.asarray(x, dtype=float)), H, xy)
    return bool(d[0] <= epsilon)


def repeatability(
    kps_ref: KeypointSet, kps_tgt: KeypointSet, H_gt: Homography, epsilon: float = 3.0
) -> RepResult:
    """Fraction of detections (both images pooled) whose transfer lands within
    epsilon of a partner detection; reference points transfer by H_gt, target
    points by its inverse. Localization error is the mean nearest-candidate
    distance over the correct points, nan when there are none."""
    n1, n2 = len(kps_ref), len(kps_tgt)
    if n1 + n2 == 0:
        raise EmptyDetections("no keypoints in either image")
    d_ref = _min_dists(kps_ref.xy(), H_gt, kps_tgt.xy())
    d_tgt = _min_dists(kps_tgt.xy(), H_gt.inverse(), kps_ref.xy())
    correct = np.concatenate([d_ref <= epsilon, d_tgt <= epsilon])
    dists = np.concatenate([d_ref, d_tgt])[correct]
    rep = float(correct.sum() / (n1 + n2))
    le = float(dists.mean()) if dists.size else math.nan
    return RepResult(rep, le, n1, n2, int(correct.sum()))


def homography_correctness(
    H_gt: Homography, H_est: Homography | None, width: int, height: int, epsilons
) -> dict:
    """Indicator per epsilon: 1 when the summed 4-corner transfer error is
    within epsilon. A failed estimation (H_est None) scores 0 everywhere."""
    if H_est is None:
        return {float(e): 0 for e in epsilons}
    err = corner_transfer_error(H_gt, H_est, width, height)
    return {float(e): int(err <= e) for e in epsilons}


# ---- benchmark harness -------------------------------------------------------


def _resize_transform(native_hw, eval_hw) -> Homography:
    """Coordinate map induced by resizing: x' = (x + 0.5) * s - 0.5 per axis."""
    nh, nw = native_hw
    eh, ew = eval_hw
    sy, sx = eh / nh, ew / nw
    return Homography(
        [[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5], [0.0, 0.0, 1.0]]
    )


def _load_sequence(seq_dir: Path, resolution):
    """Returns (reference ImageBuffer, [(n, target ImageBuffer, H at eval
    resolution)]) or raises MalformedSequence."""
    images = {}
    for entry in seq_dir.iterdir():
        m = _IMG_RE.match(entry.name)
        if m:
            images[int(m.group(1))] = entry
    if 1 not in images:
        raise MalformedSequence(f"{seq_dir}: missing reference image 1.*")
    targets = sorted(n for n in images if n >= 2)
    if not targets:
        raise MalformedSequence(f"{seq_dir}: no target images")

    with Image.open(images[1]) as im:
        native_ref = (im.height, im.width)
    ref = load_image(images[1], resize_to=resolution)
    s_ref = _resize_transform(native_ref, resolution)

    loaded = []
    for n in targets:
        h_path = seq_dir / f"H_1_{n}"
        if not h_path.exists():
            raise MalformedSequence(f"{seq_dir}: missing homography file H_1_{n}")
        try:
            h_native = read_homography_file(h_path)
        except ValueError as exc:
            raise MalformedSequence(f"{seq_dir}: bad H_1_{n}: {exc}") from exc
        with Image.open(images[n]) as im:
            native_tgt = (im.height, im.width)
        tgt = load_image(images[n], resize_to=resolution)
        s_tgt = _resize_transform(native_tgt, resolution)
        h_eval = s_tgt.compose(h_native).compose(s_ref.inverse())
        loaded.append((n, tgt, h_eval))
    return ref, loaded


def _derived_seed(base: int, parts) -> int:
    return int(np.random.SeedSequence([base] + list(parts)).generate_state(1)[0])


def _eval_pair(
    seq_name: str,
    seq_index: int,
    ref: ImageBuffer,
    n: int,
    tgt: ImageBuffer,
    H_gt: Homography,
    detector_cfg: DetectorConfig,
    model,
    model_l,
    eval_cfg: EvalConfig,
    random_seed,
    patch_size: int,
    min_score: float,
    ransac_iterations: int,
    ransac_seed: int,
) -> PairResult:
    hw = ref.pixels.shape[:2]
    if random_seed is not None:
        kps_ref = detect_random(hw, detector_cfg, _derived_seed(random_seed, [seq_index, n, 0]))
        kps_tgt = detect_random(hw, detector_cfg, _derived_seed(random_seed, [seq_index, n, 1]))
    else:
        kps_ref, kps_tgt = detect(model, ref.pixels, tgt.pixels, detector_cfg)

    warning = ""
    try:
        rr = repeatability(kps_ref, kps_tgt, H_gt, eval_cfg.epsilon)
        rep, le = rr.rep, rr.localization_error
        n_correct = rr.n_correct
    except EmptyDetections:
        rep, le, n_correct = 0.0, math.nan, 0
        warning = "no detections in either image"

    result = PairResult(
        sequence=seq_name,
        pair_index=n,
        rep=rep,
        le=le,
        n_ref=len(kps_ref),
        n_tgt=len(kps_tgt),
        n_correct=n_correct,
        warning=warning,
    )
    if model_l is not None:
        desc_ref = describe(model_l, ref.pixels, kps_ref, patch_size)
        desc_tgt = describe(model_l, tgt.pixels, kps_tgt, patch_size)
        matches = match(desc_ref, desc_tgt, min_score)
        result.n_matches = len(matches)
        h_est = None
        try:
            h_est, inliers = estimate_homography(
                matches, kps_ref, kps_tgt, eval_cfg.epsilon, ransac_iterations, ransac_seed
            )
            result.n_inliers = int(inliers.sum())
        except (InsufficientMatches, DegenerateConfiguration):
            pass
        result.corr_h = homography_correctness(
            H_gt, h_est, hw[1], hw[0], eval_cfg.homography_epsilons
        )
    return result


def run_benchmark(
    benchmark_dir,
    detector_cfg: DetectorConfig,
    model,
    model_l=None,
    eval_cfg: EvalConfig | None = None,
    *,
    random_seed: int | None = None,
    jobs: int = 1,
    patch_size: int = 32,
    min_score: float = 0.0,
    ransac_iterations: int = 1000,
    ransac_seed: int = 0,
) -> EvalReport:
    """Score every (reference, target) pair of every sequence directory.

    With `random_seed` set, uniform-random keypoints replace the model (the
    no-learning baseline; `model` may be None). With `model_l` given, the
    descriptor stage (describe, match, fit homography) also runs and CorrH
    columns appear. Aggregates are unweighted means over pairs.
    """
    if model is None and random_seed is None:
        raise ValueError("need a model unless random_seed requests the baseline")
    eval_cfg = eval_cfg or EvalConfig()
    root = Path(benchmark_dir)
    if not root.is_dir():
        raise MalformedSequence(f"{benchmark_dir} is not a directory")
    seq_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not seq_dirs:
        raise MalformedSequence(f"{benchmark_dir}: no sequence directories")

    def eval_sequence(item):
        seq_index, seq_dir = item
        ref, targets = _load_sequence(seq_dir, eval_cfg.resolution)
        return [
            _eval_pair(
                seq_dir.name,
                seq_index,
                ref,
                n,
                tgt,
                h_gt,
                detector_cfg,
                model,
                model_l,
                eval_cfg,
                random_seed,
                patch_size,
                min_score,
                ransac_iterations,
                ransac_seed,
            )
            for n, tgt, h_gt in targets
        ]

    items = list(enumerate(seq_dirs))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(eval_sequence, items))
    else:
        chunks = [eval_sequence(item) for item in items]

    settings = {
        "epsilon": eval_cfg.epsilon,
        "homography_epsilons": list(eval_cfg.homography_epsilons),
        "resolution": list(eval_cfg.resolution),
        "filtering": eval_cfg.filtering,
        "detector": {
            "source": detector_cfg.source,
            "mode": detector_cfg.mode,
            "nms_window": detector_cfg.nms_window,
            "top_k": detector_cfg.top_k,
        },
        "random_baseline": random_seed is not None,
        "descriptor_stage": model_l is not None,
    }
    pairs = [p for chunk in chunks for p in chunk]
    pairs.sort(key=lambda p: (p.sequence, p.pair_index))
    return EvalReport(settings, pairs)


# ---- report serialization ------------------------------------------------------


def _fmt(value: float, digits: int = 4) -> str:
    return "" if (isinstance(value, float) and math.isnan(value)) else f"{value:.{digits}f}"


def write_report(report: EvalReport, out_dir) -> tuple:
    """Write `report.txt` (human-readable) and `pairs.csv` (one row per pair).
    Output bytes depend only on the report contents."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eps_cols = sorted(report.corr_h_mean)

    txt = out / "report.txt"
    with open(txt, "w", encoding="ascii") as fh:
        fh.write("keypoint benchmark report\n")
        fh.write("=========================\n")
        for key, value in sorted(report.settings.items()):
            fh.write(f"{key}: {value}\n")
        fh.write(f"sequences: {len(report.sequences())}  pairs: {len(report.pairs)}\n\n")
        fh.write(f"repeatability (mean over pairs): {_fmt(report.rep_mean)}\n")
        le = report.le_mean
        fh.write(
            f"localization error (mean over pairs with correct points): {_fmt(le)}\n"
        )
        for e in eps_cols:
            fh.write(f"homography correctness @{e:g}px: {_fmt(report.corr_h_mean[e])}\n")
        fh.write("\nper sequence\n------------\n")
        for name in report.sequences():
            summary = report.sequence_summary(name)
            parts = [f"rep={_fmt(summary['rep'])}", f"le={_fmt(summary['le'])}"]
            parts += [
                f"corr_h@{e:g}={_fmt(summary[f'corr_h@{e:g}'])}"
                for e in eps_cols
                if f"corr_h@{e:g}" in summary
            ]
            fh.write(f"{name} ({summary['pairs']} pairs): " + "  ".join(parts) + "\n")

    csv = out / "pairs.csv"
    with open(csv, "w", encoding="ascii") as fh:
        header = ["sequence", "pair", "rep", "le", "n_ref", "n_tgt", "n_correct"]
        header += ["n_matches", "n_inliers"]
        header += [f"corrh@{e:g}" for e in eps_cols]
        fh.write(",".join(header) + "\n")
        for p in report.pairs:
            row = [
                p.sequence,
                str(p.pair_index),
                _fmt(p.rep),
                _fmt(p.le),
                str(p.n_ref),
                str(p.n_tgt),
                str(p.n_correct),
                str(p.n_matches),
                str(p.n_inliers),
            ]
            row += [
                ("" if p.corr_h is None else str(p.corr_h.get(e, "")))
                for e in eps_cols
            ]
            fh.write(",".join(row) + "\n")
    return txt, csv
