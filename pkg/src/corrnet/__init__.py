"""Self-supervised keypoint detection and description extraction.

A contrastively trained convolutional encoder doubles as a keypoint
detector (gradient attribution on image pairs) and, after neighborhood
fine-tuning, as a local patch descriptor. Includes a synthetic benchmark
generator and a repeatability/homography evaluation harness.
"""

__version__ = "0.1.0"

from .data import (
    AugmentationConfig,
    ImageBuffer,
    PhotometricConfig,
    generate_synthetic_benchmark,
    generate_textured_image,
    load_image,
    load_image_dir,
    sample_descriptor_batch,
    sample_detector_batch,
)
from .descriptor import DescriptorSet, MatchSet, describe, estimate_homography, match
from .detector import (
    DetectorConfig,
    KeypointSet,
    detect,
    detect_random,
    joint_saliency,
    nms_topk,
    select_common_neuron,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    correctness,
    homography_correctness,
    repeatability,
    run_benchmark,
    write_report,
)
from .geometry import Homography, Rect, apply_homography, corner_transfer_error
from .loss import ContrastiveBatchEmbeddings, nt_xent_loss, nt_xent_loss_and_grad
from .model import (
    CorrNetModel,
    EncoderConfig,
    ForwardTrace,
    GradientTarget,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import TrainConfig, TrainResult, train_corrnet, train_descriptor

__all__ = [
    "AugmentationConfig",
    "ContrastiveBatchEmbeddings",
    "CorrNetModel",
    "DescriptorSet",
    "DetectorConfig",
    "EncoderConfig",
    "EvalConfig",
    "EvalReport",
    "ForwardTrace",
    "GradientTarget",
    "Homography",
    "ImageBuffer",
    "KeypointSet",
    "MatchSet",
    "PhotometricConfig",
    "Rect",
    "TrainConfig",
    "TrainResult",
    "apply_homography",
    "build_model",
    "corner_transfer_error",
    "correctness",
    "describe",
    "detect",
    "detect_random",
    "estimate_homography",
    "generate_synthetic_benchmark",
    "generate_textured_image",
    "homography_correctness",
    "joint_saliency",
    "load_checkpoint",
    "load_image",
    "load_image_dir",
    "match",
    "nms_topk",
    "nt_xent_loss",
    "nt_xent_loss_and_grad",
    "repeatability",
    "run_benchmark",
    "sample_descriptor_batch",
    "sample_detector_batch",
    "save_checkpoint",
    "select_common_neuron",
    "train_corrnet",
    "train_descriptor",
    "write_report",
]
