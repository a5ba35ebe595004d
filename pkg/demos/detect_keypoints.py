"""Joint keypoint detection on an image pair.

Detection needs no detector head: the pair is pushed through the trained
encoder, each image's feature maps are channel-scaled by the other image's
pooled latent, the most co-active neuron is picked, and its gated gradient
w.r.t. the input pixels becomes a saliency map. Non-maximum suppression over
that map yields keypoints that tend to fire on structure both images share.

Writes demos/out/detections.png with the two images and their keypoints.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from corrnet import DetectorConfig, detect, generate_synthetic_benchmark, load_image

from _common import SCRATCH, quick_checkpoint, textured_set

TOP_K = 200


def main():
    model, ckpt = quick_checkpoint()
    print(f"model: {ckpt.name}, latent {model.config.latent_size}, "
          f"projection {model.config.description_size}")

    # a fresh image the model never trained on, photometrically jittered
    pair_dir = SCRATCH / "detect_pair"
    seq = generate_synthetic_benchmark(
        textured_set(1, seed=303), pair_dir, n_targets=1, rng_seed=303
    )[0]
    ref = load_image(seq / "1.png").pixels
    tgt = load_image(seq / "2.png").pixels

    cfg = DetectorConfig(source="h", mode="joint", nms_window=3, top_k=TOP_K)
    kps_ref, kps_tgt = detect(model, ref, tgt, cfg)
    print(f"joint detection: {len(kps_ref)} ref / {len(kps_tgt)} tgt keypoints")
    for x, y, s in kps_ref.points[:5]:
        print(f"  ({x:5.0f}, {y:5.0f})  score {s:.3e}")

    # single-image mode attributes each image's own most active neuron with
    # no cross-modulation; on a photometric pair the latents barely move, so
    # the two modes usually agree, and they drift apart as appearance does
    kps_single, _ = detect(model, ref, None, DetectorConfig(source="h", mode="single",
                                                            nms_window=3, top_k=TOP_K))
    shared = len(set(map(tuple, kps_ref.xy().astype(int).tolist()))
                 & set(map(tuple, kps_single.xy().astype(int).tolist())))
    print(f"single mode on ref: {len(kps_single)} keypoints, "
          f"{shared} locations shared with joint mode")

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, img, kps, title in ((axes[0], ref, kps_ref, "reference"),
                                (axes[1], tgt, kps_tgt, "target")):
        ax.imshow(img)
        xy = kps.xy()
        ax.scatter(xy[:, 0], xy[:, 1], s=6, c="red", marker="x", linewidths=0.7)
        ax.set_title(f"{title} ({len(kps)} keypoints)")
        ax.set_axis_off()
    fig.tight_layout()
    out = SCRATCH / "detections.png"
    fig.savefig(out, dpi=110)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
