"""Shared bits for the demo scripts: a scratch directory next to this file
and a cached quick-trained checkpoint so the later demos start fast."""

from pathlib import Path

import numpy as np

from corrnet import (
    EncoderConfig,
    TrainConfig,
    build_model,
    generate_textured_image,
    load_checkpoint,
    save_checkpoint,
    train_corrnet,
)

SCRATCH = Path(__file__).resolve().parent / "out"


def textured_set(n, seed, hw=(240, 320)):
    rng = np.random.default_rng(seed)
    return [generate_textured_image(hw[0], hw[1], rng) for _ in range(n)]


def quick_checkpoint(epochs=6):
    """Train a small encoder once and cache it under demos/out.

    Takes a minute or two of CPU on the first call, instant afterwards.
    Delete demos/out/demo_base.ckpt to retrain.
    """
    path = SCRATCH / "demo_base.ckpt"
    if path.exists():
        return load_checkpoint(path), path
    path.parent.mkdir(parents=True, exist_ok=True)
    print("no cached checkpoint, training one (~1-2 min) ...")
    images = textured_set(16, seed=7)
    model = build_model(EncoderConfig.small(description_size=32), seed=0)
    cfg = TrainConfig(epochs=epochs, batch_pairs=8, eval_every=epochs, seed=7)
    result = train_corrnet(images, model, cfg)
    save_checkpoint(result.best_model, path)
    print(f"cached {path} (best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f})")
    return result.best_model, path
