"""Train the contrastive encoder from scratch on synthetic textured images.

The signal is purely self-supervised: two crops of the same image that
overlap by at least `overlap_min` form a positive pair; crops from the other
images in the batch (plus a disjoint second pair placed in the same source)
are the negatives. Every few epochs a detection probe runs joint detection
on a small held-out benchmark and logs repeatability for both latent
sources, so you can watch detection quality emerge from a loss that never
mentions keypoints.

Run:  python demos/train_detector.py [--epochs N] [--n-images N]
Outputs land in demos/out/: trained.ckpt, train_log.jsonl, probe_bench/.
"""

import argparse
import json
import time

import numpy as np

from corrnet import (
    EncoderConfig,
    TrainConfig,
    build_model,
    generate_synthetic_benchmark,
    save_checkpoint,
    train_corrnet,
)

from _common import SCRATCH, textured_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--n-images", type=int, default=24)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    SCRATCH.mkdir(parents=True, exist_ok=True)

    # training corpus plus two extra images that only the probe sees
    images = textured_set(args.n_images + 2, seed=args.seed)
    train_images, probe_images = images[:-2], images[-2:]
    probe_dir = SCRATCH / "probe_bench"
    generate_synthetic_benchmark(
        probe_images, probe_dir, n_targets=2, mode="illumination", rng_seed=args.seed
    )
    print(f"{len(train_images)} training images, probe benchmark at {probe_dir}")

    model = build_model(EncoderConfig.small(description_size=32), seed=args.seed)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_pairs=8,
        eval_every=max(1, args.epochs // 3),
        seed=args.seed,
    )

    started = time.perf_counter()
    result = train_corrnet(
        train_images, model, cfg, probe=probe_dir, log_path=SCRATCH / "train_log.jsonl"
    )
    minutes = (time.perf_counter() - started) / 60.0

    print(f"\n{'epoch':>5} {'train':>8} {'val':>8} {'rep_h':>6} {'rep_z':>6}")
    for r in result.records:
        rep_h = f"{r['rep_h']:.3f}" if not np.isnan(r["rep_h"]) else "  -  "
        rep_z = f"{r['rep_z']:.3f}" if not np.isnan(r["rep_z"]) else "  -  "
        print(f"{r['epoch']:>5} {r['train_loss']:>8.4f} {r['val_loss']:>8.4f} "
              f"{rep_h:>6} {rep_z:>6}")

    out = SCRATCH / "trained.ckpt"
    save_checkpoint(result.best_model, out)
    print(f"\nbest epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}), "
          f"{minutes:.1f} min")
    print(f"checkpoint: {out}")
    print(f"log:        {SCRATCH / 'train_log.jsonl'}  "
          f"({sum(1 for _ in open(SCRATCH / 'train_log.jsonl'))} rows, JSONL)")
    with open(SCRATCH / "train_log.jsonl") as fh:
        print("first row:", json.dumps(json.loads(fh.readline()))[:100], "...")


if __name__ == "__main__":
    main()
