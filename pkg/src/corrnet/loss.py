"""Normalized-temperature cross-entropy loss over paired embeddings.

A batch is a (2N, d) embedding array plus a fixed-point-free involution
`positive_index` pairing each anchor row with its positive partner; every
other row (positive included) sits in the anchor's denominator. The default
pairing is interleaved: rows 2i and 2i+1 form pair i. Rows are re-normalized
internally (cosine similarity is scale-invariant) and the gradient accounts
for that normalization, so callers may pass unnormalized embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPairing

DEFAULT_TEMPERATURE = 0.5
_NORM_EPS = 1e-12


def interleaved_pairs(n_rows: int) -> np.ndarray:
    """Pairing for the (2i, 2i+1) row layout: partner index is i ^ 1."""
    return np.arange(n_rows) ^ 1


@dataclass(frozen=True)
class ContrastiveBatchEmbeddings:
    """A (2N, d) embedding batch with its positive pairing and temperature."""

    z: np.ndarray
    positive_index: np.ndarray = None
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2:
            raise InvalidPairing(f"embeddings must be 2-d, got shape {z.shape}")
        if z.shape[0] % 2 != 0:
            raise InvalidPairing(f"odd number of rows ({z.shape[0]}): views must be paired")
        if z.shape[0] < 4:
            raise InvalidPairing("need at least 2 pairs so every anchor has a negative")
        if not np.all(np.isfinite(z)):
            raise InvalidPairing("embeddings contain non-finite values")
        if self.temperature <= 0:
            raise InvalidPairing("temperature must be positive")
        pos = self.positive_index
        pos = interleaved_pairs(z.shape[0]) if pos is None else np.asarray(pos, dtype=int)
        if pos.shape != (z.shape[0],):
            raise InvalidPairing(f"positive_index length {pos.shape} != {z.shape[0]} rows")
        if np.any(pos < 0) or np.any(pos >= z.shape[0]):
            raise InvalidPairing("positive_index out of range")
        if np.any(pos == np.arange(z.shape[0])):
            raise InvalidPairing("positive_index has a fixed point (row paired with itself)")
        if np.any(pos[pos] != np.arange(z.shape[0])):
            raise InvalidPairing("positive_index is not an involution")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "positive_index", pos)

    @property
    def n_pairs(self) -> int:
        return self.z.shape[0] // 2


def _unit_rows(z: np.ndarray):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms < _NORM_EPS):
        raise InvalidPairing("zero-norm embedding row")
    return z / norms, norms


def _loss_and_grads(batch: ContrastiveBatchEmbeddings, extras: np.ndarray | None):
    z, pos, tau = batch.z, batch.positive_index, batch.temperature
    n_rows = z.shape[0]
    zh, z_norms = _unit_rows(z)
    if extras is not None:
        eh, e_norms = _unit_rows(extras)
        cols = np.vstack([zh, eh])
    else:
        eh = e_norms = None
        cols = zh

    logits = zh @ cols.T / tau
    np.fill_diagonal(logits[:, :n_rows], -np.inf)

    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    denom = shifted.sum(axis=1, keepdims=True)

    anchors = np.arange(n_rows)
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]
    losses = log_denom - logits[anchors, pos]
    loss = float(losses.mean())

    probs = shifted / denom
    target = np.zeros_like(probs)
    target[anchors, pos] = 1.0
    g = (probs - target) / (n_rows * tau)

    d_cols = g.T @ zh
    d_zh = g @ cols + d_cols[:n_rows]
    dz = (d_zh - zh * np.sum(d_zh * zh, axis=1, keepdims=True)) / z_norms
    if extras is not None:
        d_eh = d_cols[n_rows:]
        d_extras = (d_eh - eh * np.sum(d_eh * eh, axis=1, keepdims=True)) / e_norms
    else:
        d_extras = None
    return loss, losses, dz, d_extras


def _as_batch(batch, temperature: float) -> ContrastiveBatchEmbeddings:
    if isinstance(batch, ContrastiveBatchEmbeddings):
        return batch
    return ContrastiveBatchEmbeddings(batch, temperature=temperature)


def nt_xent_loss(batch, temperature: float = DEFAULT_TEMPERATURE):
    """Returns (mean loss over all 2N anchors, per-anchor loss vector).

    `batch` is a ContrastiveBatchEmbeddings or a raw (2N, d) array in
    interleaved pair order; `temperature` applies only to raw arrays.
    """
    loss, losses, _, _ = _loss_and_grads(_as_batch(batch, temperature), None)
    return loss, losses


def nt_xent_loss_and_grad(batch, temperature: float = DEFAULT_TEMPERATURE):
    """Loss plus its gradient w.r.t. the raw (pre-normalization) embeddings."""
    loss, _, dz, _ = _loss_and_grads(_as_batch(batch, temperature), None)
    return loss, dz


def nt_xent_with_extras(batch, extra_negatives, temperature: float = DEFAULT_TEMPERATURE):
    """Variant with additional denominator-only negatives.

    `extra_negatives` (M, d) join every anchor's denominator but are never
    positives and contribute no anchor rows of their own. Returns
    (loss, grad_embeddings, grad_extras). Used for descriptor fine-tuning
    where neighboring patches act as hard negatives.
    """
    batch = _as_batch(batch, temperature)
    extras = np.asarray(extra_negatives, dtype=float)
    if extras.ndim != 2 or extras.shape[1] != batch.z.shape[1]:
        raise InvalidPairing(
            f"extra negatives shape {extras.shape} incompatible with {batch.z.shape}"
        )
    if not np.all(np.isfinite(extras)):
        raise InvalidPairing("extra negatives contain non-finite values")
    if extras.shape[0] == 0:
        loss, _, dz, _ = _loss_and_grads(batch, None)
        return loss, dz, np.zeros_like(extras)
    loss, _, dz, d_extras = _loss_and_grads(batch, extras)
    return loss, dz, d_extras
