"""Small-object detection data toolkit for Pascal VOC.

Annotation I/O and size statistics, copy-paste oversampling, size-stratified
AP evaluation and adversarial objectives for residual representations.
"""

__version__ = "0.1.0"

from .augmentor import (
    STRATEGIES,
    AugmentedSample,
    PlacementPolicy,
    Pools,
    StrategyConfig,
    augment_image,
    place_object,
    rescale_patch,
    run_strategy,
    strategy_preset,
)
from .det_eval import APProtocol, Detection, EvalConfig, EvalReport, Match, average_precision, evaluate, iou, match_detections
from .gan_objectives import (
    discriminator_loss,
    generator_loss,
    minimax_value,
    residual_gan_value,
    soft_noisy_labels,
    toy_residual_training,
)
from .estimators import CopyPasteOversampler, ResidualGAN, SizeSplitter, SizeStratifiedAP
from .patch_pool import ObjectPool, Patch, PatchSource, build_voc_pool, crop_object, load_generated_pool, sample
from .voc_io import (
    VOC_CLASSES,
    AnnotatedObject,
    BoundingBox,
    DatasetStats,
    ImageAnnotation,
    SizeClass,
    dataset_stats,
    parse_annotation,
    size_class,
    split_by_size,
    write_annotation,
)

__all__ = [
    "__version__",
    "APProtocol",
    "AnnotatedObject",
    "AugmentedSample",
    "BoundingBox",
    "CopyPasteOversampler",
    "DatasetStats",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "ImageAnnotation",
    "Match",
    "ObjectPool",
    "Patch",
    "PatchSource",
    "PlacementPolicy",
    "Pools",
    "ResidualGAN",
    "STRATEGIES",
    "SizeClass",
    "SizeSplitter",
    "SizeStratifiedAP",
    "StrategyConfig",
    "VOC_CLASSES",
    "augment_image",
    "average_precision",
    "build_voc_pool",
    "crop_object",
    "dataset_stats",
    "discriminator_loss",
    "evaluate",
    "generator_loss",
    "iou",
    "load_generated_pool",
    "match_detections",
    "minimax_value",
    "parse_annotation",
    "place_object",
    "rescale_patch",
    "residual_gan_value",
    "run_strategy",
    "sample",
    "size_class",
    "soft_noisy_labels",
    "split_by_size",
    "strategy_preset",
    "toy_residual_training",
    "write_annotation",
]
