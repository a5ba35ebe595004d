"""Command-line entry points: train, train-descriptor, detect, match,
evaluate, gen-synthetic, visualize.

Every command writes a JSON run manifest (resolved configuration, input
content hashes, seed, toolkit version, wall time) next to its outputs.
Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error;
diagnostics go to standard error. The CORRNET_CHECKPOINT_DIR environment
variable supplies a fallback directory for resolving checkpoint paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    AugmentationConfig,
    ImageBuffer,
    PhotometricConfig,
    generate_synthetic_benchmark,
    generate_textured_image,
    load_image,
    load_image_dir,
)
from .detector import (
    DetectorConfig,
    checkpoint_hash,
    detect,
    load_keypoints,
    save_keypoints,
)
from .errors import CorrnetError
from .evaluation import EvalConfig, run_benchmark, write_report
from .geometry import read_homography_file, write_homography_file
from .model import EncoderConfig, build_model, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train_corrnet, train_descriptor

ENV_CHECKPOINT_DIR = "CORRNET_CHECKPOINT_DIR"


class ConfigError(Exception):
    """Bad configuration or usage; maps to exit code 2."""


# ---- small helpers -------------------------------------------------------------


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def resolve_checkpoint(path: str) -> Path:
    """Use the path as given; fall back to $CORRNET_CHECKPOINT_DIR for
    relative paths that do not exist from the working directory."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    env = os.environ.get(ENV_CHECKPOINT_DIR)
    if env and (Path(env) / p).exists():
        return Path(env) / p
    return p


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _input_digest(path) -> str:
    """Content hash of a file, or of a directory's sorted (name, hash) list."""
    p = Path(path)
    if p.is_file():
        return _file_sha256(p)
    if p.is_dir():
        digest = hashlib.sha256()
        for f in sorted(p.rglob("*")):
            if f.is_file():
                digest.update(str(f.relative_to(p)).encode())
                digest.update(bytes.fromhex(_file_sha256(f)))
        return digest.hexdigest()
    return ""


def write_manifest(out_dir, command: str, config: dict, inputs: dict,
                   seed, started: float, checkpoint_digest: str = "",
                   argv=None) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:] if argv is None else list(argv),
        "config": config,
        "inputs": {str(k): _input_digest(v) for k, v in inputs.items()},
        "checkpoint_hash": checkpoint_digest,
        "seed": seed,
        "version": __version__,
        "wall_time": time.perf_counter() - started,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{command}.manifest.json"
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_config_file(path) -> dict:
    """Flat `key = value` lines; `#` starts a comment. Values are parsed as
    JSON scalars when possible, else kept as strings. Keys use the long flag
    names with dashes replaced by underscores."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    values = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        try:
            values[key] = json.loads(val)
        except json.JSONDecodeError:
            values[key] = val
    return values


def _apply_config_file(parser: argparse.ArgumentParser, argv, args_ns) -> argparse.Namespace:
    """Re-parse with config-file values as defaults so flags override them."""
    if not getattr(args_ns, "config", None):
        return args_ns
    values = load_config_file(args_ns.config)
    sub = args_ns.subparser
    known = {a.dest for a in sub._actions}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _args_snapshot(args) -> dict:
    """JSON-safe view of the parsed arguments for the manifest."""
    skip = ("func", "subparser")
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in skip
    }


def _photometric_args(parser: argparse.ArgumentParser) -> None:
    d = PhotometricConfig()
    parser.add_argument("--brightness", type=float, default=d.brightness)
    parser.add_argument("--contrast", type=float, default=d.contrast)
    parser.add_argument("--saturation", type=float, default=d.saturation)
    parser.add_argument("--hue", type=float, default=d.hue)
    parser.add_argument("--grayscale-prob", type=float, default=d.grayscale_prob)
    parser.add_argument("--blur-prob", type=float, default=d.blur_prob)


def _augmentation_from(args) -> AugmentationConfig:
    return AugmentationConfig(
        photometric=PhotometricConfig(
            brightness=args.brightness,
            contrast=args.contrast,
            saturation=args.saturation,
            hue=args.hue,
            grayscale_prob=args.grayscale_prob,
            blur_prob=args.blur_prob,
        ),
        geometric=args.geometric,
        max_corner_shift=args.max_corner_shift,
        overlap_min=args.overlap_min,
        crop_size=args.crop_size,
    )


def _train_config_from(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_pairs=args.batch_pairs,
        epochs=args.epochs,
        temperature=args.temperature,
        overlap_min=args.overlap_min,
        seed=args.seed,
        eval_every=args.eval_every,
    )


def _detector_config_from(args, mode: str | None = None) -> DetectorConfig:
    return DetectorConfig(
        source=args.source,
        mode=mode or getattr(args, "mode", "joint"),
        nms_window=args.nms,
        top_k=args.top_k,
    )


def _load_images_arg(path, resize_to):
    result = load_image_dir(path, resize_to=resize_to)
    for failed, reason in result.failures:
        _warn(f"skipped unreadable image {failed}: {reason}")
    if not result:
        raise CorrnetError(f"no readable images in {path}")
    return result


# ---- subcommands ----------------------------------------------------------------


def cmd_train(args, argv, parser) -> int:
    args = _apply_config_file(parser, argv, args)
    started = time.perf_counter()
    cfg = _train_config_from(args)
    aug = _augmentation_from(args)
    enc = (
        EncoderConfig.small(args.description_size)
        if args.arch == "small"
        else EncoderConfig.large(args.description_size)
    )
    images = _load_images_arg(args.images, tuple(args.resize))
    model = build_model(enc, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)

    result = train_corrnet(images, model, cfg, probe=args.probe, log_path=log_path,
                           augmentation=aug)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(result.best_model, ckpt)
    print(
        f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}); "
        f"checkpoint: {ckpt}"
    )
    inputs = {"images": args.images}
    if args.probe:
        inputs["probe"] = args.probe
    write_manifest(out, "train", _args_snapshot(args), inputs, cfg.seed, started,
                   checkpoint_digest=checkpoint_hash(ckpt), argv=argv)
    return 0


def cmd_train_descriptor(args, argv, parser) -> int:
    args = _apply_config_file(parser, argv, args)
    started = time.perf_counter()
    cfg = _train_config_from(args)
    base = resolve_checkpoint(args.base)
    if not base.is_file():
        raise ConfigError(f"base checkpoint {args.base} not found")
    images = _load_images_arg(args.images, tuple(args.resize))
    detector_cfg = _detector_config_from(args, mode="single")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "descriptor_log.jsonl"
    log_path.unlink(missing_ok=True)

    result = train_descriptor(
        images, base, detector_cfg, cfg,
        patch_size=args.patch_size, n_negatives=args.n_negatives,
        radius=args.radius, log_path=log_path,
    )
    ckpt = out / "descriptor.ckpt"
    save_checkpoint(result.best_model, ckpt)
    print(
        f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}); "
        f"checkpoint: {ckpt}"
    )
    write_manifest(
        out, "train-descriptor", _args_snapshot(args),
        {"images": args.images, "base": base}, cfg.seed, started,
        checkpoint_digest=checkpoint_hash(ckpt), argv=argv,
    )
    return 0


def cmd_detect(args, argv, parser) -> int:
    started = time.perf_counter()
    if args.mode == "joint" and args.tgt is None:
        raise ConfigError("joint mode requires --tgt")
    if args.mode == "single" and args.tgt is not None:
        _warn("single mode ignores --tgt")
        args.tgt = None
    ckpt = resolve_checkpoint(args.checkpoint)
    model = load_checkpoint(ckpt)
    cfg = _detector_config_from(args)
    ref = load_image(args.ref, resize_to=None)
    tgt = load_image(args.tgt, resize_to=None) if args.tgt else None

    kps_ref, kps_tgt = detect(model, ref.pixels, tgt.pixels if tgt else None, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = checkpoint_hash(ckpt)
    meta = {
        "mode": cfg.mode,
        "source": cfg.source,
        "nms_window": cfg.nms_window,
        "top_k": cfg.top_k,
        "checkpoint": digest,
    }
    ref_path = out / f"{Path(args.ref).stem}.kp"
    save_keypoints(ref_path, kps_ref, meta)
    print(f"{len(kps_ref)} keypoints -> {ref_path}")
    if kps_tgt is not None:
        tgt_path = out / f"{Path(args.tgt).stem}.kp"
        save_keypoints(tgt_path, kps_tgt, meta)
        print(f"{len(kps_tgt)} keypoints -> {tgt_path}")

    inputs = {"checkpoint": ckpt, "ref": args.ref}
    if args.tgt:
        inputs["tgt"] = args.tgt
    write_manifest(out, "detect", _args_snapshot(args), inputs, None, started, digest,
                   argv=argv)
    return 0


def cmd_match(args, argv, parser) -> int:
    from .descriptor import describe, estimate_homography, match, save_matches
    from .errors import DegenerateConfiguration, InsufficientMatches

    started = time.perf_counter()
    ckpt = resolve_checkpoint(args.checkpoint)
    model_l = load_checkpoint(ckpt)
    ref = load_image(args.ref, resize_to=None)
    tgt = load_image(args.tgt, resize_to=None)
    kps_ref = load_keypoints(args.ref_keypoints)
    kps_tgt = load_keypoints(args.tgt_keypoints)

    desc_ref = describe(model_l, ref.pixels, kps_ref, args.patch_size)
    desc_tgt = describe(model_l, tgt.pixels, kps_tgt, args.patch_size)
    matches = match(desc_ref, desc_tgt, args.min_score)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    match_path = out / "matches.txt"
    save_matches(match_path, matches, kps_ref, kps_tgt)
    print(f"{len(matches)} mutual matches -> {match_path}")

    if not args.no_homography:
        try:
            h_est, inliers = estimate_homography(
                matches, kps_ref, kps_tgt, args.inlier_px, args.iterations, args.seed
            )
            h_path = out / "H_estimated"
            write_homography_file(h_path, h_est)
            print(f"{int(inliers.sum())}/{len(matches)} inliers -> {h_path}")
        except (InsufficientMatches, DegenerateConfiguration) as exc:
            _warn(f"homography estimation failed: {exc}")

    digest = checkpoint_hash(ckpt)
    write_manifest(
        out, "match", _args_snapshot(args),
        {"checkpoint": ckpt, "ref": args.ref, "tgt": args.tgt,
         "ref_keypoints": args.ref_keypoints, "tgt_keypoints": args.tgt_keypoints},
        args.seed, started, digest, argv=argv,
    )
    return 0


def cmd_evaluate(args, argv, parser) -> int:
    started = time.perf_counter()
    model = None
    digest = ""
    if args.random_baseline:
        if args.checkpoint:
            _warn("--random-baseline ignores --checkpoint")
    elif args.checkpoint:
        ckpt = resolve_checkpoint(args.checkpoint)
        model = load_checkpoint(ckpt)
        digest = checkpoint_hash(ckpt)
    else:
        raise ConfigError("evaluate needs --checkpoint or --random-baseline")
    model_l = None
    if args.descriptor_checkpoint:
        model_l = load_checkpoint(resolve_checkpoint(args.descriptor_checkpoint))

    eval_cfg = EvalConfig(
        epsilon=args.epsilon,
        homography_epsilons=tuple(args.homography_epsilons),
        resolution=tuple(args.resize),
    )
    detector_cfg = _detector_config_from(args)
    report = run_benchmark(
        args.benchmark, detector_cfg, model, model_l, eval_cfg,
        random_seed=args.seed if args.random_baseline else None,
        jobs=args.jobs, patch_size=args.patch_size, min_score=args.min_score,
        ransac_iterations=args.iterations, ransac_seed=args.seed,
    )
    txt, csv = write_report(report, args.out)
    print(f"{len(report.pairs)} pairs; REP {report.rep_mean:.4f} -> {txt}")
    inputs = {"benchmark": args.benchmark}
    if model is not None:
        inputs["checkpoint"] = resolve_checkpoint(args.checkpoint)
    if args.descriptor_checkpoint:
        inputs["descriptor_checkpoint"] = resolve_checkpoint(args.descriptor_checkpoint)
    write_manifest(args.out, "evaluate", _args_snapshot(args), inputs,
                   args.seed, started, digest, argv=argv)
    return 0


def cmd_gen_synthetic(args, argv, parser) -> int:
    started = time.perf_counter()
    if (args.images is None) == (args.from_noise is None):
        raise ConfigError("provide exactly one of --images or --from-noise")
    if args.images:
        images = _load_images_arg(args.images, tuple(args.resize))
    else:
        rng = np.random.default_rng(args.seed)
        h, w = args.resize
        images = [
            ImageBuffer(generate_textured_image(h, w, rng).pixels, id=f"noise{i:03d}")
            for i in range(args.from_noise)
        ]
    seqs = generate_synthetic_benchmark(
        images, args.out, n_targets=args.n_targets, mode=args.mode, rng_seed=args.seed
    )
    print(f"{len(seqs)} sequences ({args.mode}) -> {args.out}")
    inputs = {"images": args.images} if args.images else {}
    write_manifest(args.out, "gen-synthetic", _args_snapshot(args), inputs, args.seed,
                   started, argv=argv)
    return 0


def cmd_visualize(args, argv, parser) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .descriptor import describe, match
    from .evaluation import repeatability

    started = time.perf_counter()
    ckpt = resolve_checkpoint(args.checkpoint)
    model = load_checkpoint(ckpt)
    cfg = _detector_config_from(args)
    ref = load_image(args.ref, resize_to=None)
    tgt = load_image(args.tgt, resize_to=None)
    kps_ref, kps_tgt = detect(model, ref.pixels, tgt.pixels, cfg)

    pairs = []
    if args.descriptor_checkpoint:
        model_l = load_checkpoint(resolve_checkpoint(args.descriptor_checkpoint))
        desc_ref = describe(model_l, ref.pixels, kps_ref, args.patch_size)
        desc_tgt = describe(model_l, tgt.pixels, kps_tgt, args.patch_size)
        pairs = match(desc_ref, desc_tgt, args.min_score).pairs

    title = f"{len(kps_ref)} / {len(kps_tgt)} keypoints, {len(pairs)} matches"
    if args.homography:
        h_gt = read_homography_file(args.homography)
        rep, _le = repeatability(kps_ref, kps_tgt, h_gt, args.epsilon)
        title = f"REP {rep:.3f}  |  " + title

    h, w = ref.pixels.shape[:2]
    fig, axes = plt.subplots(1, 2, figsize=(12, 5))
    for ax, img, kps, name in (
        (axes[0], ref.pixels, kps_ref, "reference"),
        (axes[1], tgt.pixels, kps_tgt, "target"),
    ):
        ax.imshow(img)
        xy = kps.xy()
        if len(xy):
            ax.scatter(xy[:, 0], xy[:, 1], s=6, c="lime", marker="o",
                       linewidths=0, alpha=0.8)
        ax.set_title(name)
        ax.axis("off")
    fig.suptitle(title)
    fig.canvas.draw()  # fix axes positions before mapping data coords

    # match lines drawn in figure space across both axes
    for i, j, _score in pairs[: args.max_lines]:
        xr, yr, _ = kps_ref.points[i]
        xt, yt, _ = kps_tgt.points[j]
        pr = axes[0].transData.transform((xr, yr))
        pt = axes[1].transData.transform((xt, yt))
        inv = fig.transFigure.inverted()
        (fr, to) = inv.transform([pr, pt])
        fig.add_artist(
            plt.Line2D([fr[0], to[0]], [fr[1], to[1]], color="yellow",
                       linewidth=0.5, alpha=0.6)
        )
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"figure -> {args.out}")
    out_dir = Path(args.out).parent
    write_manifest(
        out_dir, "visualize", _args_snapshot(args),
        {"checkpoint": ckpt, "ref": args.ref, "tgt": args.tgt},
        None, started, checkpoint_hash(ckpt), argv=argv,
    )
    return 0


# ---- parser assembly ---------------------------------------------------------------


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--batch-pairs", type=int, default=d.batch_pairs)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--temperature", type=float, default=d.temperature)
    p.add_argument("--overlap-min", type=float, default=d.overlap_min)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--resize", type=int, nargs=2, default=[240, 320],
                   metavar=("H", "W"), help="working resolution for loaded images")


def _add_detector_flags(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    if with_mode:
        p.add_argument("--mode", choices=["joint", "single"], default="joint")
    p.add_argument("--source", choices=["h", "z"], default="h",
                   help="latent vector driving neuron selection and backprop")
    p.add_argument("--nms", type=int, default=3, help="NMS window side")
    p.add_argument("--top-k", type=int, default=1000)


def _add_descriptor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--min-score", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrnet",
        description="Self-supervised keypoint detection and description toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="contrastive training on an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["small", "large"], default="small")
    p.add_argument("--description-size", type=int, default=64)
    p.add_argument("--probe", help="benchmark dir for repeatability probes")
    _add_common_train_flags(p)
    p.add_argument("--crop-size", type=int, default=128)
    p.add_argument("--geometric", choices=["none", "weak-homography"], default="none")
    p.add_argument("--max-corner-shift", type=float, default=0.1)
    _photometric_args(p)
    p.set_defaults(func=cmd_train, subparser=p)

    p = sub.add_parser("train-descriptor", help="fine-tune descriptor weights")
    p.add_argument("--images", required=True)
    p.add_argument("--base", required=True, help="base checkpoint to start from")
    p.add_argument("--out", required=True)
    _add_common_train_flags(p)
    _add_detector_flags(p, with_mode=False)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--n-negatives", type=int, default=8)
    p.add_argument("--radius", type=int, default=12)
    p.set_defaults(func=cmd_train_descriptor, subparser=p)

    p = sub.add_parser("detect", help="detect keypoints on an image (pair)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tgt")
    p.add_argument("--out", required=True)
    _add_detector_flags(p)
    p.set_defaults(func=cmd_detect, subparser=p)

    p = sub.add_parser("match", help="describe and match two keypoint sets")
    p.add_argument("--checkpoint", required=True, help="descriptor checkpoint")
    p.add_argument("--ref", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--ref-keypoints", required=True)
    p.add_argument("--tgt-keypoints", required=True)
    p.add_argument("--out", required=True)
    _add_descriptor_flags(p)
    p.add_argument("--inlier-px", type=float, default=3.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-homography", action="store_true")
    p.set_defaults(func=cmd_match, subparser=p)

    p = sub.add_parser("evaluate", help="run the benchmark protocol")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--descriptor-checkpoint")
    p.add_argument("--out", required=True)
    _add_detector_flags(p)
    _add_descriptor_flags(p)
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--homography-epsilons", type=float, nargs="+", default=[1.0, 3.0, 5.0])
    p.add_argument("--resize", type=int, nargs=2, default=[240, 320], metavar=("H", "W"))
    p.add_argument("--random-baseline", action="store_true",
                   help="replace the model with uniform-random keypoints")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate, subparser=p)

    p = sub.add_parser("gen-synthetic", help="write a synthetic benchmark directory")
    p.add_argument("--out", required=True)
    p.add_argument("--images", help="source image directory")
    p.add_argument("--from-noise", type=int,
                   help="generate this many textured source images instead")
    p.add_argument("--mode", choices=["illumination", "viewpoint"], default="illumination")
    p.add_argument("--n-targets", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resize", type=int, nargs=2, default=[240, 320], metavar=("H", "W"))
    p.set_defaults(func=cmd_gen_synthetic, subparser=p)

    p = sub.add_parser("visualize", help="render keypoints and matches side by side")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--descriptor-checkpoint")
    p.add_argument("--ref", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--homography", help="ground-truth H file; adds REP to the title")
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--max-lines", type=int, default=200)
    _add_detector_flags(p)
    _add_descriptor_flags(p)
    p.set_defaults(func=cmd_visualize, subparser=p)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv, parser)
    except ConfigError as exc:
        _fail(str(exc))
        return 2
    except ValueError as exc:
        _fail(str(exc))
        return 2
    except CorrnetError as exc:
        _fail(str(exc))
        return 1
    except OSError as exc:
        _fail(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
