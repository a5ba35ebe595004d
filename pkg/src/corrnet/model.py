"""Siamese convolutional encoder with projection head.

The encoder is fully convolutional (strided convs only, no max-pooling, all
rectifier nonlinearities) and ends in global average pooling, so one model
serves both training crops and full-resolution detection inputs. A forward
pass exposes three representations: the last-stage feature maps A, the pooled
latent h, and the unit-norm projection z.

Input gradients can be computed in standard mode or guided mode (rectifiers
additionally zero negative incoming gradients), optionally through a
channel-modulated view of the feature maps used by joint detection.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NoGradientPath, ShapeMismatch, VersionMismatch

SCHEMA_VERSION = 1
_MAGIC = b"CORRNETCKPT1"

SMALL_CHANNELS = (16, 32, 64, 128)
LARGE_CHANNELS = (256, 512, 1024, 2048)
LARGE_BLOCKS = (3, 4, 6, 3)
LARGE_DESCRIPTION_SIZES = (128, 256, 512)


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture preset. `large` is the full-scale deep residual encoder
    (2048-dim h, description size restricted to {128, 256, 512}); `small` is
    the desk-scale default (4 conv stages, 128-dim h, free description size).
    """

    arch: str = "small"
    channels_per_stage: tuple = SMALL_CHANNELS
    description_size: int = 64
    pooling: str = "global-average"

    def __post_init__(self):
        if self.arch not in ("small", "large"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.pooling != "global-average":
            raise ValueError("only global-average pooling is supported")
        if not self.channels_per_stage or any(c < 1 for c in self.channels_per_stage):
            raise ValueError("channels_per_stage must be positive")
        if self.arch == "large" and self.description_size not in LARGE_DESCRIPTION_SIZES:
            raise ValueError(
                f"large preset requires description_size in {LARGE_DESCRIPTION_SIZES}"
            )
        if self.description_size < 2:
            raise ValueError("description_size must be >= 2")
        object.__setattr__(self, "channels_per_stage", tuple(self.channels_per_stage))

    @classmethod
    def small(cls, description_size: int = 64, channels_per_stage: tuple = SMALL_CHANNELS):
        return cls("small", tuple(channels_per_stage), description_size)

    @classmethod
    def large(cls, description_size: int = 512):
        return cls("large", LARGE_CHANNELS, description_size)

    @property
    def latent_size(self) -> int:
        return self.channels_per_stage[-1]

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "channels_per_stage": list(self.channels_per_stage),
            "description_size": self.description_size,
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            d["arch"], tuple(d["channels_per_stage"]), d["description_size"], d["pooling"]
        )


@dataclass
class ForwardTrace:
    """One image's forward pass: feature maps A (C,H',W'), pooled latent h (C,),
    unit-norm projection z (d,), and the caches needed for backpropagation."""

    feature_maps: np.ndarray
    latent: np.ndarray
    projection: np.ndarray
    input_image: np.ndarray
    _enc_caches: list = field(repr=False, default=None)
    _head_caches: list = field(repr=False, default=None)


@dataclass(frozen=True)
class GradientTarget:
    """Designates the scalar to backpropagate: component `index` of latent
    `source` ('h' or 'z'), computed through feature maps channel-scaled by
    `modulation` when given (the joint-detection cross-modulation)."""

    source: str
    index: int
    modulation: np.ndarray | None = None


class CorrNetModel:
    def __init__(self, config: EncoderConfig, encoder: nn.Sequential, head: nn.Sequential):
        self.config = config
        self.encoder = encoder
        self.pool = nn.GlobalAvgPool()
        self.head = head
        if config.arch == "small":
            self.min_input = 2 ** len(config.channels_per_stage)
        else:
            self.min_input = 2 ** (len(config.channels_per_stage) + 1)

    # ---- parameters ----------------------------------------------------

    def params(self) -> dict[str, nn.Param]:
        out = {}
        for p in self.encoder.params() + self.head.params():
            out[p.name] = p
        return out

    def copy(self) -> "CorrNetModel":
        return copy.deepcopy(self)

    # ---- forward -------------------------------------------------------

    def _check_images(self, images: np.ndarray):
        if images.ndim != 4 or images.shape[3] != 3:
            raise ShapeMismatch(f"expected (N, H, W, 3) images, got {images.shape}")
        if images.shape[1] < self.min_input or images.shape[2] < self.min_input:
            raise ShapeMismatch(
                f"input {images.shape[1]}x{images.shape[2]} below minimum "
                f"{self.min_input} for this encoder"
            )

    def _forward_raw(self, images: np.ndarray):
        x = np.transpose(np.asarray(images, dtype=nn.F64), (0, 3, 1, 2))
        a, enc_caches = self.encoder.forward(x)
        h, pool_cache = self.pool.forward(a)
        z, head_caches = self.head.forward(h)
        return a, h, z, enc_caches, pool_cache, head_caches

    def forward(self, image: np.ndarray) -> ForwardTrace:
        """Run one image (H, W, 3) through the network, keeping backward caches."""
        image = np.asarray(image, dtype=nn.F64)
        self._check_images(image[None])
        a, h, z, enc_caches, _, head_caches = self._forward_raw(image[None])
        return ForwardTrace(
            feature_maps=a[0],
            latent=h[0],
            projection=z[0],
            input_image=image,
            _enc_caches=enc_caches,
            _head_caches=head_caches,
        )

    def forward_batch(self, images: np.ndarray):
        """Batched forward for training/description: returns (z, caches)."""
        images = np.asarray(images, dtype=nn.F64)
        self._check_images(images)
        a, h, z, enc_caches, pool_cache, head_caches = self._forward_raw(images)
        return z, (enc_caches, pool_cache, head_caches)

    def backward_batch(self, caches, dz: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients from dL/dz of a batched forward."""
        enc_caches, pool_cache, head_caches = caches
        dh, head_grads = self.head.backward(head_caches, dz, need_param_grads=True)
        da, _ = self.pool.backward(pool_cache, dh)
        _, enc_grads = self.encoder.backward(enc_caches, da, need_param_grads=True)
        grads = dict(enc_grads)
        grads.update(head_grads)
        return grads

    # ---- scalar targets and input gradients -----------------------------

    def _modulated_maps(self, trace: ForwardTrace, target: GradientTarget):
        a = trace.feature_maps[None]
        if target.modulation is None:
            return a
        m = np.asarray(target.modulation, dtype=nn.F64)
        if m.shape != (a.shape[1],):
            raise ShapeMismatch(
                f"modulation length {m.shape} does not match {a.shape[1]} channels"
            )
        return a * m[None, :, None, None]

    def target_value(self, trace: ForwardTrace, target: GradientTarget) -> float:
        """Forward-only evaluation of the target scalar."""
        a_star = self._modulated_maps(trace, target)
        h_star = a_star.mean(axis=(2, 3))
        if target.source == "h":
            return float(h_star[0, target.index])
        z_star, _ = self.head.forward(h_star)
        return float(z_star[0, target.index])

    def _feature_seed(self, trace: ForwardTrace, target: GradientTarget, guided: bool):
        """Gradient of the target scalar w.r.t. the (modulated) feature maps."""
        a_star = self._modulated_maps(trace, target)
        _, c, fh, fw = a_star.shape
        if target.source == "h":
            dh = np.zeros((1, c))
            dh[0, target.index] = 1.0
        elif target.source == "z":
            h_star = a_star.mean(axis=(2, 3))
            if target.modulation is None:
                head_caches = trace._head_caches
                d = trace.projection.shape[0]
            else:
                z_star, head_caches = self.head.forward(h_star)
                d = z_star.shape[1]
            dz = np.zeros((1, d))
            dz[0, target.index] = 1.0
            dh, _ = self.head.backward(head_caches, dz, guided=guided)
        else:
            raise ValueError(f"unknown target source {target.source!r}")
        d_astar = np.broadcast_to(dh[:, :, None, None], (1, c, fh, fw)) / (fh * fw)
        return np.ascontiguousarray(d_astar), a_star

    def feature_gradient(self, trace: ForwardTrace, target: GradientTarget):
        """Standard (ungated) gradient of the scalar w.r.t. the modulated maps,
        plus the modulated maps themselves; this is the grad-CAM ingredient."""
        d_astar, a_star = self._feature_seed(trace, target, guided=False)
        return d_astar[0], a_star[0]

    def input_gradient(
        self, trace: ForwardTrace, target: GradientTarget, guided: bool = True
    ) -> np.ndarray:
        """Backpropagate the target scalar to the input image, (H, W, 3)."""
        d_astar, _ = self._feature_seed(trace, target, guided=guided)
        if target.modulation is not None:
            m = np.asarray(target.modulation, dtype=nn.F64)
            da = d_astar * m[None, :, None, None]
        else:
            da = d_astar
        if not np.any(da):
            raise NoGradientPath("target scalar does not depend on the input")
        dx, _ = self.encoder.backward(trace._enc_caches, da, guided=guided)
        return np.transpose(dx[0], (1, 2, 0))

    def backward_guided(self, trace: ForwardTrace, target: GradientTarget) -> np.ndarray:
        return self.input_gradient(trace, target, guided=True)


def build_model(config: EncoderConfig, seed: int = 0) -> CorrNetModel:
    """Deterministically initialize a model (He init) from a config and seed."""
    rng = np.random.default_rng(seed)
    layers: list[nn.Layer] = []
    if config.arch == "small":
        cin = 3
        for i, cout in enumerate(config.channels_per_stage):
            layers.append(nn.Conv2d(f"enc.s{i}", cin, cout, 3, stride=2, rng=rng))
            layers.append(nn.ReLU())
            cin = cout
    else:
        layers.append(nn.Conv2d("enc.stem", 3, 64, 7, stride=2, rng=rng))
        layers.append(nn.ReLU())
        cin = 64
        for i, cout in enumerate(config.channels_per_stage):
            for j in range(LARGE_BLOCKS[i]):
                stride = 2 if (j == 0 and i > 0) else 1
                layers.append(
                    nn.Residual(f"enc.s{i}.b{j}", cin, cout // 4, cout, stride, rng=rng)
                )
                cin = cout
    encoder = nn.Sequential(layers)

    h_dim = config.latent_size
    hidden2 = 512 if config.arch == "large" else max(2, h_dim // 2)
    head = nn.Sequential(
        [
            nn.Dense("head.fc0", h_dim, h_dim, rng=rng),
            nn.ReLU(),
            nn.Dense("head.fc1", h_dim, hidden2, rng=rng),
            nn.ReLU(),
            nn.Dense("head.fc2", hidden2, config.description_size, rng=rng),
            nn.L2Normalize(),
        ]
    )
    return CorrNetModel(config, encoder, head)


# ---- checkpoints ---------------------------------------------------------


def save_checkpoint(model: CorrNetModel, path) -> None:
    """Single-file container: magic, JSON header, raw little-endian f32 blobs."""
    params = model.params()
    arrays = []
    offset = 0
    blobs = []
    for name in sorted(params):
        value = np.ascontiguousarray(params[name].value, dtype="<f4")
        blob = value.tobytes()
        arrays.append(
            {"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "schema_version": SCHEMA_VERSION,
            "config": model.config.to_dict(),
            "arrays": arrays,
        },
        sort_keys=True,
    ).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> CorrNetModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise OSError(f"{path}: not a corrnet checkpoint")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise OSError(f"{path}: truncated checkpoint header")
        (header_len,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise OSError(f"{path}: truncated checkpoint header")
        header = json.loads(header_bytes.decode("ascii"))
        if header.get("schema_version") != SCHEMA_VERSION:
            raise VersionMismatch(
                f"checkpoint schema {header.get('schema_version')} != {SCHEMA_VERSION}"
            )
        config = EncoderConfig.from_dict(header["config"])
        model = build_model(config, seed=0)
        params = model.params()
        expected = set(params)
        stored = {entry["name"] for entry in header["arrays"]}
        if stored != expected:
            raise OSError(f"{path}: checkpoint arrays do not match architecture")
        data = fh.read()
        for entry in header["arrays"]:
            blob = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
            if len(blob) != entry["nbytes"]:
                raise OSError(f"{path}: truncated checkpoint data")
            value = np.frombuffer(blob, dtype="<f4").reshape(entry["shape"])
            param = params[entry["name"]]
            if tuple(value.shape) != tuple(param.value.shape):
                raise OSError(f"{path}: shape mismatch for {entry['name']}")
            param.value = value.copy()
    return model
