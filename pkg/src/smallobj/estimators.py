"""scikit-learn style wrappers over the toolkit's functional core.

They follow the estimator conventions (constructor stores hyperparameters
untouched, ``fit`` returns ``self``, fitted state ends in ``_``) so they
work with ``get_params``/``set_params``, ``clone`` and grid search.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .augmentor import AugmentedSample, PlacementPolicy, Pools, StrategyConfig, augment_image, strategy_preset
from .det_eval import APProtocol, Detection, EvalConfig, EvalReport, evaluate
from .exceptions import ValidationError
from .gan_objectives import toy_residual_training
from .patch_pool import build_voc_pool, image_loader, load_generated_pool
from .voc_io import ImageAnnotation, SizeClass, split_by_size


def _check_annotations(annotations) -> list[ImageAnnotation]:
    annotations = list(annotations)
    bad = [type(a).__name__ for a in annotations if not isinstance(a, ImageAnnotation)]
    if bad:
        raise ValidationError(f"expected ImageAnnotation items, got {sorted(set(bad))}")
    return annotations


class SizeSplitter(TransformerMixin, BaseEstimator):
    """Keep only objects of one size group (stateless)."""

    def __init__(self, size="small"):
        self.size = size

    def fit(self, annotations=None, y=None):
        self.size_ = SizeClass.parse(self.size)
        return self

    def transform(self, annotations):
        check_is_fitted(self, "size_")
        return split_by_size(_check_annotations(annotations), self.size_)


class CopyPasteOversampler(BaseEstimator):
    """Copy-paste oversampling of small objects.

    ``fit`` builds the VOC crop pool from the training annotations and
    images (and loads ``generated_pool`` when given); ``resample`` then
    produces augmented samples for any annotated images.

    Parameters
    ----------
    strategy : int or StrategyConfig
        Preset number 1..5 or a full configuration.
    seed : int
        Master seed; each image/repetition gets its own derived stream.
    max_attempts : int
        Placement attempts per paste before it is skipped.
    pool_size : {"small", "medium", "big"} or None
        Restrict the VOC pool to one size group; ``None`` uses every
        non-difficult object.
    generated_pool : path or None
        Directory of 32x32 generated patches, one sub-directory per class.
    """

    def __init__(self, strategy=1, seed=0, max_attempts=50, pool_size=None, generated_pool=None):
        self.strategy = strategy
        self.seed = seed
        self.max_attempts = max_attempts
        self.pool_size = pool_size
        self.generated_pool = generated_pool

    def _strategy(self) -> StrategyConfig:
        if isinstance(self.strategy, StrategyConfig):
            return self.strategy
        return strategy_preset(self.strategy)

    def fit(self, annotations, images):
        annotations = _check_annotations(annotations)
        self.strategy_ = self._strategy()
        voc = build_voc_pool(annotations, images, self.pool_size)
        generated = load_generated_pool(self.generated_pool) if self.generated_pool is not None else None
        self.pools_ = Pools(voc=voc, generated=generated)
        return self

    def resample(self, annotations, images) -> list[AugmentedSample]:
        check_is_fitted(self, "pools_")
        load = image_loader(images)
        policy = PlacementPolicy(self.max_attempts)
        samples = []
        for ann in _check_annotations(annotations):
            samples.extend(augment_image(load(ann), ann, self.strategy_, self.pools_, self.seed, policy))
        return samples

    def fit_resample(self, annotations, images) -> list[AugmentedSample]:
        annotations = _check_annotations(annotations)
        return self.fit(annotations, images).resample(annotations, images)


class SizeStratifiedAP(BaseEstimator):
    """Per-class AP / mAP of detections against ground truth fixed at ``fit``."""

    def __init__(self, iou_threshold=0.5, protocol="11point", size=None, cross_size="ignore"):
        self.iou_threshold = iou_threshold
        self.protocol = protocol
        self.size = size
        self.cross_size = cross_size

    def fit(self, ground_truth, y=None):
        self.ground_truth_ = _check_annotations(ground_truth)
        self.config_ = EvalConfig(
            iou_threshold=float(self.iou_threshold),
            protocol=APProtocol(self.protocol),
            size_filter=None if self.size is None else SizeClass.parse(self.size),
            cross_size=self.cross_size,
        )
        return self

    def evaluate(self, detections: Sequence[Detection]) -> EvalReport:
        check_is_fitted(self, "ground_truth_")
        return evaluate(detections, self.ground_truth_, self.config_)

    def score(self, detections: Sequence[Detection], y=None) -> float:
        """mAP as a fraction in [0, 1]."""
        return self.evaluate(detections).mean_ap


class ResidualGAN(TransformerMixin, BaseEstimator):
    """Toy residual generator trained adversarially against large-object features.

    ``fit(X_small, X_large)`` learns the residual map; ``transform`` returns
    the super-resolved features ``X + G(X | f)`` and ``residual`` the map
    alone. ``predict_proba`` exposes the discriminator.
    """

    def __init__(self, lr=0.01, momentum=0.9, iterations=3000, disc_l2=5.0, soft_labels=False,
                 init_scale=0.01, seed=0):
        self.lr = lr
        self.momentum = momentum
        self.iterations = iterations
        self.disc_l2 = disc_l2
        self.soft_labels = soft_labels
        self.init_scale = init_scale
        self.seed = seed

    def fit(self, X, y, conditions=None):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[1] != y.shape[1]:
            raise ValueError(f"X has {X.shape[1]} features but large samples have {y.shape[1]}")
        if conditions is not None:
            conditions = check_array(conditions, dtype=np.float64)
            if len(conditions) != len(X):
                raise ValueError("conditions must have one row per sample of X")
        result = toy_residual_training(
            y, X, conditions,
            lr=self.lr, momentum=self.momentum, iterations=self.iterations, disc_l2=self.disc_l2,
            soft_labels=self.soft_labels, seed=self.seed, init_scale=self.init_scale,
        )
        self.params_ = result.params
        self.history_ = result
        self.n_features_in_ = X.shape[1]
        return self

    def residual(self, X, conditions=None):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.params_.residual(X, conditions)

    def transform(self, X, conditions=None):
        X = check_array(X, dtype=np.float64)
        return X + self.residual(X, conditions)

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        p = self.params_.discriminate(X)
        return np.column_stack([1 - p, p])


__all__ = ["SizeSplitter", "CopyPasteOversampler", "SizeStratifiedAP", "ResidualGAN"]
