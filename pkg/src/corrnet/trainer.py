"""Optimization loops: contrastive pretraining on crop pairs and descriptor
fine-tuning on keypoint neighborhoods.

Both loops are reproducible from (data, seed, config): every batch seed is
derived from (config seed, epoch, step), validation batches are fixed, and
weights stay float32 so checkpoints round-trip bit-identically. The "best"
model is the one with the lowest validation contrastive loss.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .data import (
    AugmentationConfig,
    DescriptorNeighborhoodBatch,
    PhotometricConfig,
    sample_descriptor_batch,
    sample_detector_batch,
)
from .detector import DetectorConfig, detect
from .errors import EmptyDetections, NonFiniteLoss
from .loss import ContrastiveBatchEmbeddings, nt_xent_loss_and_grad, nt_xent_with_extras
from .model import CorrNetModel, load_checkpoint

MAX_BATCH_VIEWS = 512  # memory cap: crops per forward pass
_VAL_TAG = 0x5EED  # seed-stream namespace for validation batches


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    batch_pairs: int = 16
    epochs: int = 20
    temperature: float = 0.5
    overlap_min: float = 0.8
    seed: int = 0
    eval_every: int = 5  # epochs between repeatability probes
    val_fraction: float = 0.1

    def __post_init__(self):
        if min(self.learning_rate, self.weight_decay) < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.batch_pairs < 2 or self.epochs < 1 or self.eval_every < 1:
            raise ValueError("batch_pairs >= 2, epochs >= 1, eval_every >= 1 required")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.overlap_min <= 1.0:
            raise ValueError("overlap_min must lie in [0, 1]")
        if 2 * self.batch_pairs > MAX_BATCH_VIEWS:
            raise ValueError(f"batch_pairs capped at {MAX_BATCH_VIEWS // 2}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class TrainResult:
    records: list  # one dict per epoch: epoch, train_loss, val_loss, rep_h, rep_z, wall_time
    best_model: CorrNetModel
    best_epoch: int
    best_val_loss: float


class Adam:
    """Adaptive-moment optimizer; moments in float64, weights stay float32.
    Weight decay is added to the raw gradient before the moment updates."""

    def __init__(self, params: dict, learning_rate: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros(p.value.shape) for name, p in params.items()}
        self.v = {name: np.zeros(p.value.shape) for name, p in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=np.float64) + self.wd * p.value.astype(np.float64)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            p.value = (p.value.astype(np.float64) - update).astype(np.float32)


def _derived_seed(parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _split_images(images, seed: int, val_fraction: float):
    if len(images) < 2:
        raise ValueError("need at least 2 source images to hold out a validation split")
    order = np.random.default_rng(_derived_seed([seed, 0xA11])).permutation(len(images))
    n_val = max(1, int(round(val_fraction * len(images))))
    n_val = min(n_val, len(images) - 1)
    val = [images[i] for i in order[:n_val]]
    train = [images[i] for i in order[n_val:]]
    return train, val


def _append_log(log_path, record: dict) -> None:
    if log_path is None:
        return
    with open(log_path, "a", encoding="ascii") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss} at {where}")


def train_corrnet(
    images,
    model: CorrNetModel,
    cfg: TrainConfig,
    probe=None,
    log_path=None,
    augmentation: AugmentationConfig | None = None,
) -> TrainResult:
    """Contrastive training on spatially-constrained crop pairs.

    `probe`, when set to a benchmark directory, adds joint-detection
    repeatability for both latent sources (h and z) to the log every
    cfg.eval_every epochs. The model is updated in place; the returned
    best_model is a snapshot of the lowest-validation-loss epoch.
    """
    aug = augmentation or AugmentationConfig(overlap_min=cfg.overlap_min)
    if aug.overlap_min != cfg.overlap_min:
        aug = AugmentationConfig(
            photometric=aug.photometric,
            geometric=aug.geometric,
            max_corner_shift=aug.max_corner_shift,
            overlap_min=cfg.overlap_min,
            crop_size=aug.crop_size,
        )
    train_images, val_images = _split_images(images, cfg.seed, cfg.val_fraction)
    val_pairs = max(2, min(cfg.batch_pairs, 2 * len(val_images)))
    val_seed = _derived_seed([cfg.seed, _VAL_TAG])

    opt = Adam(model.params(), cfg.learning_rate, cfg.weight_decay)
    steps_per_epoch = max(1, len(train_images) // max(1, cfg.batch_pairs // 2))

    def val_loss() -> float:
        batch = sample_detector_batch(val_images, val_pairs, aug, val_seed)
        z, _ = model.forward_batch(batch.stacked_views())
        loss, _ = nt_xent_loss_and_grad(
            ContrastiveBatchEmbeddings(z, temperature=cfg.temperature)
        )
        return loss

    records = []
    best_model, best_epoch, best_val = None, -1, math.inf
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        epoch_losses = []
        for step in range(steps_per_epoch):
            batch_seed = _derived_seed([cfg.seed, epoch, step])
            batch = sample_detector_batch(train_images, cfg.batch_pairs, aug, batch_seed)
            z, caches = model.forward_batch(batch.stacked_views())
            loss, dz = nt_xent_loss_and_grad(
                ContrastiveBatchEmbeddings(z, temperature=cfg.temperature)
            )
            _check_finite(loss, f"epoch {epoch} step {step}")
            opt.step(model.backward_batch(caches, dz))
            epoch_losses.append(loss)

        v_loss = val_loss()
        _check_finite(v_loss, f"epoch {epoch} validation")
        if v_loss < best_val:
            best_model, best_epoch, best_val = model.copy(), epoch, v_loss

        rep_h = rep_z = None
        if probe is not None and (
            epoch % cfg.eval_every == cfg.eval_every - 1 or epoch == cfg.epochs - 1
        ):
            rep_h, rep_z = _probe_repeatability(model, probe)

        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": float(v_loss),
            "rep_h": rep_h,
            "rep_z": rep_z,
            "wall_time": time.perf_counter() - started,
        }
        records.append(record)
        _append_log(log_path, record)
    return TrainResult(records, best_model, best_epoch, best_val)


def _probe_repeatability(model: CorrNetModel, benchmark_dir) -> tuple:
    # late import: evaluation pulls in the descriptor stack this loop doesn't need
    from .evaluation import EvalConfig, run_benchmark

    reps = []
    for source in ("h", "z"):
        cfg = DetectorConfig(source=source, mode="joint")
        report = run_benchmark(benchmark_dir, cfg, model, None, EvalConfig())
        reps.append(report.rep_mean)
    return reps[0], reps[1]


# ---- descriptor fine-tuning ------------------------------------------------------


def _detect_all(model: CorrNetModel, images, detector_cfg: DetectorConfig):
    single_cfg = DetectorConfig(
        source=detector_cfg.source,
        mode="single",
        nms_window=detector_cfg.nms_window,
        top_k=detector_cfg.top_k,
    )
    keypoints = []
    for img in images:
        kps, _ = detect(model, img.pixels, None, single_cfg)
        if len(kps) == 0:
            raise EmptyDetections(f"no keypoints detected on image {img.id!r}")
        keypoints.append(kps)
    return keypoints


def _neighborhood_views(batches: list):
    """Stack anchors/positives interleaved plus all negatives."""
    views = np.empty((2 * len(batches),) + batches[0].anchor.shape)
    for i, nb in enumerate(batches):
        views[2 * i] = nb.anchor
        views[2 * i + 1] = nb.positive
    extras = np.stack([patch for nb in batches for patch in nb.negatives])
    return views, extras


def train_descriptor(
    images,
    base_checkpoint,
    detector_cfg: DetectorConfig,
    cfg: TrainConfig,
    patch_size: int = 32,
    n_negatives: int = 8,
    radius: int = 12,
    log_path=None,
    photometric: PhotometricConfig | None = None,
) -> TrainResult:
    """Fine-tune a copy of the base weights on keypoint neighborhoods.

    Keypoints are detected once per image with the frozen base model (single
    mode). Each step takes cfg.batch_pairs anchor neighborhoods: the anchor
    and an independently augmented positive form the contrastive pairs, and
    all neighboring patches join the denominator as extra negatives. The
    base checkpoint file is only read, never written.
    """
    base_model = load_checkpoint(base_checkpoint)
    model_l = base_model.copy()
    photometric = photometric or PhotometricConfig()

    train_images, val_images = _split_images(images, cfg.seed, cfg.val_fraction)
    train_kps = _detect_all(base_model, train_images, detector_cfg)
    val_kps = _detect_all(base_model, val_images, detector_cfg)

    opt = Adam(model_l.params(), cfg.learning_rate, cfg.weight_decay)
    steps_per_epoch = max(1, len(train_images))

    def gather(batch_images, batch_kps, n_anchors: int, seed: int):
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(batch_images), size=n_anchors)
        return [
            sample_descriptor_batch(
                batch_images[k],
                batch_kps[k],
                patch_size,
                n_negatives,
                radius,
                _derived_seed([seed, i]),
                photometric=photometric,
            )
            for i, k in enumerate(picks)
        ]

    def batch_loss(batches: list[DescriptorNeighborhoodBatch], with_grads: bool):
        views, extras = _neighborhood_views(batches)
        z_views, cache_v = model_l.forward_batch(views)
        z_extras, cache_e = model_l.forward_batch(extras)
        # a patch that silences every unit embeds to the zero vector; such a
        # negative carries no signal, so drop it instead of aborting the run
        keep = np.linalg.norm(z_extras, axis=1) > 0.0
        emb = ContrastiveBatchEmbeddings(z_views, temperature=cfg.temperature)
        loss, dz, d_kept = nt_xent_with_extras(emb, z_extras[keep])
        if not with_grads:
            return loss, None
        d_extras = np.zeros_like(z_extras)
        d_extras[keep] = d_kept
        grads = model_l.backward_batch(cache_v, dz)
        for name, g in model_l.backward_batch(cache_e, d_extras).items():
            grads[name] = grads[name] + g
        return loss, grads

    val_seed = _derived_seed([cfg.seed, _VAL_TAG, 1])
    val_batches = gather(val_images, val_kps, max(2, cfg.batch_pairs // 2), val_seed)

    records = []
    best_model, best_epoch, best_val = None, -1, math.inf
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        epoch_losses = []
        for step in range(steps_per_epoch):
            seed = _derived_seed([cfg.seed, 1 + epoch, step])
            batches = gather(train_images, train_kps, cfg.batch_pairs, seed)
            loss, grads = batch_loss(batches, with_grads=True)
            _check_finite(loss, f"epoch {epoch} step {step}")
            opt.step(grads)
            epoch_losses.append(loss)

        v_loss, _ = batch_loss(val_batches, with_grads=False)
        _check_finite(v_loss, f"epoch {epoch} validation")
        if v_loss < best_val:
            best_model, best_epoch, best_val = model_l.copy(), epoch, v_loss

        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": float(v_loss),
            "rep_h": None,
            "rep_z": None,
            "wall_time": time.perf_counter() - started,
        }
        records.append(record)
        _append_log(log_path, record)
    return TrainResult(records, best_model, best_epoch, best_val)
