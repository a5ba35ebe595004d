"""Visualize the pair-conditioned saliency maps behind joint detection.

For each image the other image's pooled latent rescales the feature maps
before the shared neuron's activation is recomputed; the gated gradient of
that activation w.r.t. the pixels is the saliency. The two latent sources
give different maps: `h` attributes a pooled feature channel, `z` a
coordinate of the normalized projection.

Writes demos/out/saliency.png (2x3 grid: image, h map, z map per row).
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from corrnet import DetectorConfig, generate_synthetic_benchmark, joint_saliency, load_image

from _common import SCRATCH, quick_checkpoint, textured_set


def main():
    model, _ = quick_checkpoint()

    seq = generate_synthetic_benchmark(
        textured_set(1, seed=606), SCRATCH / "saliency_pair", n_targets=1, rng_seed=606
    )[0]
    ref = load_image(seq / "1.png").pixels
    tgt = load_image(seq / "2.png").pixels

    maps = {}
    for source in ("h", "z"):
        cfg = DetectorConfig(source=source, mode="joint")
        pair = joint_saliency(model, ref, tgt, cfg)
        maps[source] = pair
        print(f"source {source}: shared neuron {pair.neuron}, "
              f"ref peak {pair.saliency_ref.max():.3e}, "
              f"tgt peak {pair.saliency_tgt.max():.3e}")

    fig, axes = plt.subplots(2, 3, figsize=(12, 6))
    for row, (img, which) in enumerate(((ref, "saliency_ref"), (tgt, "saliency_tgt"))):
        axes[row, 0].imshow(img)
        axes[row, 0].set_title("reference" if row == 0 else "target")
        for col, source in enumerate(("h", "z"), start=1):
            sal = getattr(maps[source], which)
            axes[row, col].imshow(sal, cmap="inferno")
            axes[row, col].set_title(f"source={source} (neuron {maps[source].neuron})")
    for ax in axes.ravel():
        ax.set_axis_off()
    fig.tight_layout()
    out = SCRATCH / "saliency.png"
    fig.savefig(out, dpi=110)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
