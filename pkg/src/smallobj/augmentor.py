"""Copy-paste oversampling of small objects.

Each selected small object triggers ``oversampling_ratio`` paste attempts per
repetition. A paste lands at a uniformly drawn position whose box touches no
other box (original or pasted) and stays inside the image. Emitted
annotations hold the pasted objects only; the original objects keep their
pixels but lose their labels.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .exceptions import DatasetIOError, GeometryError, PoolLookupError, ValidationError
from .patch_pool import ImageSource, ObjectPool, Patch, crop_object, image_loader
from .rng import derive_rng
from .voc_io import (
    VOC_CLASSES,
    AnnotatedObject,
    BoundingBox,
    ImageAnnotation,
    SizeClass,
    canonical_class,
    save_annotation,
)

logger = logging.getLogger(__name__)

RARE_SMALL_CLASSES = frozenset({"cat", "diningtable", "dog", "sofa"})
SWITCH_TARGET_CLASSES = frozenset(VOC_CLASSES) - RARE_SMALL_CLASSES
GENERATED_CLASSES = frozenset({
    "aeroplane", "bird", "boat", "car", "chair", "horse", "person", "pottedplant", "tvmonitor",
})
LESS_NUMEROUS_CLASSES = frozenset({"aeroplane", "train", "bicycle", "horse", "motorbike", "bus"})
RESCALE_TARGET = 32


class PatchChoice(enum.Enum):
    ORIGINAL_OBJECT = "original"
    VOC_POOL = "voc"
    MIXED_GENERATED_VOC = "mixed"


@dataclass(frozen=True)
class StrategyConfig:
    name: str
    oversampling_ratio: int = 3
    repetitions: int = 1
    repetitions_by_class: Mapping[str, int] = field(default_factory=dict)
    patch_source: PatchChoice = PatchChoice.VOC_POOL
    class_switch: bool = False
    switch_target_classes: frozenset = SWITCH_TARGET_CLASSES
    rescale: bool = True
    generated_classes: frozenset = GENERATED_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "patch_source", PatchChoice(self.patch_source))
        object.__setattr__(
            self, "repetitions_by_class",
            {canonical_class(k): int(v) for k, v in dict(self.repetitions_by_class).items()},
        )
        object.__setattr__(self, "switch_target_classes", frozenset(map(canonical_class, self.switch_target_classes)))
        object.__setattr__(self, "generated_classes", frozenset(map(canonical_class, self.generated_classes)))
        if self.oversampling_ratio < 1 or self.repetitions < 1:
            raise ValidationError("oversampling_ratio and repetitions must be positive")
        if any(v < 1 for v in self.repetitions_by_class.values()):
            raise ValidationError("per-class repetitions must be positive")
        if self.class_switch:
            if not self.switch_target_classes:
                raise ValidationError("class switching needs at least one target class")
            if self.switch_target_classes & RARE_SMALL_CLASSES:
                raise ValidationError(
                    "switch targets may not include " + ", ".join(sorted(RARE_SMALL_CLASSES))
                )
            if self.patch_source is PatchChoice.ORIGINAL_OBJECT:
                raise ValidationError("class switching cannot reuse the original object patch")

    def repetitions_for(self, class_name: str) -> int:
        return self.repetitions_by_class.get(class_name, self.repetitions)

    @property
    def max_repetitions(self) -> int:
        return max([self.repetitions, *self.repetitions_by_class.values()])


STRATEGIES = {
    1: StrategyConfig("strategy1", repetitions=1, patch_source=PatchChoice.ORIGINAL_OBJECT, rescale=False),
    2: StrategyConfig("strategy2", repetitions=5, patch_source=PatchChoice.VOC_POOL),
    3: StrategyConfig("strategy3", repetitions=5, patch_source=PatchChoice.VOC_POOL, class_switch=True),
    4: StrategyConfig("strategy4", repetitions=5, patch_source=PatchChoice.MIXED_GENERATED_VOC),
    5: StrategyConfig(
        "strategy5",
        repetitions=10,
        repetitions_by_class={c: 15 for c in LESS_NUMEROUS_CLASSES},
        patch_source=PatchChoice.MIXED_GENERATED_VOC,
        class_switch=True,
    ),
}


def strategy_preset(number: int) -> StrategyConfig:
    try:
        return STRATEGIES[int(number)]
    except (KeyError, ValueError):
        raise ValidationError(f"unknown strategy {number!r}; expected 1..5") from None


def _parse_bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {value!r}")


def _parse_class_set(value) -> frozenset:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return frozenset(canonical_class(v) for v in value)


def _parse_class_ints(value) -> dict:
    if isinstance(value, Mapping):
        return dict(value)
    out = {}
    for item in str(value).split(","):
        if not item.strip():
            continue
        name, _, n = item.rpartition(":")
        if not name:
            raise ValidationError(f"expected class:count, got {item!r}")
        out[canonical_class(name)] = int(n)
    return out


_FIELD_PARSERS = {
    "name": str,
    "oversampling_ratio": int,
    "repetitions": int,
    "repetitions_by_class": _parse_class_ints,
    "patch_source": lambda v: PatchChoice(str(v).strip().lower()),
    "class_switch": _parse_bool,
    "switch_target_classes": _parse_class_set,
    "rescale": _parse_bool,
    "generated_classes": _parse_class_set,
}


def strategy_from_mapping(values: Mapping[str, object], base: StrategyConfig | None = None) -> StrategyConfig:
    """Override fields of ``base`` (strategy 1 when omitted) from string values."""
    base = base or STRATEGIES[1]
    unknown = set(values) - set(_FIELD_PARSERS)
    if unknown:
        raise ValidationError("unknown strategy keys: " + ", ".join(sorted(unknown)))
    try:
        parsed = {k: _FIELD_PARSERS[k](v) for k, v in values.items()}
    except ValueError as exc:
        raise ValidationError(f"bad strategy value: {exc}") from None
    return replace(base, **parsed)


@dataclass(frozen=True)
class PlacementPolicy:
    max_attempts: int = 50

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be positive")


@dataclass(frozen=True)
class Pools:
    voc: ObjectPool | None = None
    generated: ObjectPool | None = None


@dataclass(frozen=True)
class PasteRecord:
    patch_id: str
    bbox: BoundingBox | None
    original_class: str
    final_class: str

    @property
    def failed(self) -> bool:
        return self.bbox is None


@dataclass
class AugmentedSample:
    image_id: str
    image: np.ndarray
    blocked: list[BoundingBox]
    objects: list[AnnotatedObject] = field(default_factory=list)
    provenance: list[PasteRecord] = field(default_factory=list)
    depth: int = 3

    @classmethod
    def start(cls, image: np.ndarray, annotation: ImageAnnotation, image_id: str | None = None) -> AugmentedSample:
        return cls(
            image_id=image_id or annotation.image_id,
            image=np.array(image, dtype=np.uint8, copy=True),
            blocked=[obj.bbox for obj in annotation.objects],
            depth=annotation.depth,
        )

    @property
    def annotation(self) -> ImageAnnotation:
        h, w = self.image.shape[:2]
        return ImageAnnotation(self.image_id, w, h, self.depth, tuple(self.objects), filename=f"{self.image_id}.png")

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.provenance)


def rescale_patch(patch: Patch, rng: np.random.Generator) -> Patch:
    """Bilinear resize to a random size between the current one and 32 px.

    Width is drawn first, then height, each uniform over the inclusive
    integer range spanned by the current dimension and 32.
    """
    w, h = patch.width, patch.height
    new_w = int(rng.integers(min(w, RESCALE_TARGET), max(w, RESCALE_TARGET) + 1))
    new_h = int(rng.integers(min(h, RESCALE_TARGET), max(h, RESCALE_TARGET) + 1))
    if (new_w, new_h) == (w, h):
        return patch
    resized = Image.fromarray(np.ascontiguousarray(patch.pixels)).resize((new_w, new_h), Image.BILINEAR)
    return Patch(np.asarray(resized), patch.class_name, patch.source, patch.patch_id)


def place_object(
    sample: AugmentedSample, patch: Patch, policy: PlacementPolicy, rng: np.random.Generator
) -> BoundingBox | None:
    """Paste ``patch`` at a random free position; ``None`` when every attempt collides.

    Each attempt draws x then y. The sample is untouched on failure.
    """
    img_h, img_w = sample.image.shape[:2]
    if patch.width > img_w or patch.height > img_h:
        raise GeometryError(f"{patch.width}x{patch.height} patch does not fit {img_w}x{img_h} image")
    for _ in range(policy.max_attempts):
        x = int(rng.integers(0, img_w - patch.width + 1))
        y = int(rng.integers(0, img_h - patch.height + 1))
        box = BoundingBox.from_xywh(x, y, patch.width, patch.height)
        if any(box.intersects(other) for other in sample.blocked):
            continue
        sample.image[box.ymin:box.ymax + 1, box.xmin:box.xmax + 1] = patch.pixels
        sample.blocked.append(box)
        return box
    return None


def small_objects(annotation: ImageAnnotation) -> list[AnnotatedObject]:
    return [obj for obj in annotation.objects if obj.size is SizeClass.SMALL]


def _pool_for(strategy: StrategyConfig, pools: Pools, class_name: str) -> tuple[str, ObjectPool | None]:
    if strategy.patch_source is PatchChoice.MIXED_GENERATED_VOC and class_name in strategy.generated_classes:
        return "generated", pools.generated
    return "voc", pools.voc


def check_pools(strategy: StrategyConfig, pools: Pools, source_classes) -> None:
    """Raise ``PoolLookupError`` unless every class the strategy may request is covered."""
    if strategy.patch_source is PatchChoice.ORIGINAL_OBJECT:
        return
    wanted = strategy.switch_target_classes if strategy.class_switch else set(source_classes)
    missing = []
    for class_name in sorted(wanted):
        pool_name, pool = _pool_for(strategy, pools, class_name)
        if pool is None or class_name not in pool:
            missing.append(f"{class_name} ({pool_name} pool)")
    if missing:
        raise PoolLookupError("pools do not cover: " + ", ".join(missing))


def augment_image(
    image: np.ndarray,
    annotation: ImageAnnotation,
    strategy: StrategyConfig,
    pools: Pools | None,
    seed: int | np.random.Generator,
    policy: PlacementPolicy = PlacementPolicy(),
) -> list[AugmentedSample]:
    """Produce the oversampled variants of one image.

    Repetition ``r`` draws from its own stream derived from ``(seed,
    image_id, r)``. A small object takes part in the first
    ``strategy.repetitions_for(class)`` repetitions, so the number of
    returned samples is the largest repetition count among the image's
    small objects. Images without small objects yield an empty list.
    """
    pools = pools or Pools()
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    image = np.asarray(image, dtype=np.uint8)
    if image.shape[:2] != (annotation.height, annotation.width):
        raise ValidationError(
            f"{annotation.image_id}: image is {image.shape[1]}x{image.shape[0]}, "
            f"annotation says {annotation.width}x{annotation.height}"
        )
    selected = small_objects(annotation)
    if not selected:
        return []
    check_pools(strategy, pools, {obj.class_name for obj in selected})

    originals = {}
    if strategy.patch_source is PatchChoice.ORIGINAL_OBJECT:
        for i, obj in enumerate(annotation.objects):
            if obj.size is SizeClass.SMALL:
                originals[id(obj)] = crop_object(image, obj.bbox, obj.class_name, f"orig:{annotation.image_id}:{i}")

    targets = sorted(strategy.switch_target_classes)
    n_reps = max(strategy.repetitions_for(obj.class_name) for obj in selected)
    samples = []
    for rep in range(n_reps):
        rng = derive_rng(seed, annotation.image_id, rep)
        sample = AugmentedSample.start(image, annotation, f"{annotation.image_id}_r{rep:02d}")
        for obj in selected:
            if rep >= strategy.repetitions_for(obj.class_name):
                continue
            final_class = targets[int(rng.integers(len(targets)))] if strategy.class_switch else obj.class_name
            for _ in range(strategy.oversampling_ratio):
                if strategy.patch_source is PatchChoice.ORIGINAL_OBJECT:
                    patch = originals[id(obj)]
                else:
                    patch = _pool_for(strategy, pools, final_class)[1].sample(final_class, rng)
                if strategy.rescale:
                    patch = rescale_patch(patch, rng)
                box = None
                if patch.width <= image.shape[1] and patch.height <= image.shape[0]:
                    box = place_object(sample, patch, policy, rng)
                if box is not None:
                    sample.objects.append(AnnotatedObject(final_class, box, synthetic=True))
                sample.provenance.append(PasteRecord(patch.patch_id, box, obj.class_name, final_class))
        samples.append(sample)
    return samples


# -- dataset runs ----------------------------------------------------------------

@dataclass
class Manifest:
    pasted: Counter = field(default_factory=Counter)
    failed: Counter = field(default_factory=Counter)
    samples: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __add__(self, other: Manifest) -> Manifest:
        return Manifest(
            self.pasted + other.pasted,
            self.failed + other.failed,
            self.samples + other.samples,
            sorted(self.skipped + other.skipped),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[AugmentedSample]) -> Manifest:
        m = cls(samples=len(samples))
        for sample in samples:
            for rec in sample.provenance:
                (m.failed if rec.failed else m.pasted)[rec.final_class] += 1
        return m

    @property
    def total_pasted(self) -> int:
        return sum(self.pasted.values())

    @property
    def total_failed(self) -> int:
        return sum(self.failed.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "pasted_count", "failed_count"])
        for cls in VOC_CLASSES:
            if self.pasted[cls] or self.failed[cls]:
                writer.writerow([cls, self.pasted[cls], self.failed[cls]])
        writer.writerow(["total", self.total_pasted, self.total_failed])
        return buf.getvalue()

    def skipped_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "reason"])
        writer.writerows(self.skipped)
        return buf.getvalue()


def class_balance_ratio(counts: Mapping[str, int]) -> float:
    """Max/min count over classes that received at least one paste."""
    values = [v for v in counts.values() if v > 0]
    if not values:
        return float("nan")
    return max(values) / min(values)


def run_strategy(
    annotations: Sequence[ImageAnnotation],
    images: ImageSource,
    strategy: StrategyConfig,
    pools: Pools | None,
    master_seed: int,
    out_dir: str | os.PathLike,
    policy: PlacementPolicy = PlacementPolicy(),
    jobs: int = 1,
) -> Manifest:
    """Augment every image holding a small object and write the results.

    Layout: ``images/<id>_rNN.png``, ``annotations/<id>_rNN.xml``,
    ``manifest.csv`` and ``skipped.csv``. Outputs depend only on the inputs
    and ``master_seed``, whatever ``jobs`` is.
    """
    pools = pools or Pools()
    out = Path(out_dir)
    selected = [ann for ann in annotations if small_objects(ann)]
    check_pools(strategy, pools, {o.class_name for ann in selected for o in small_objects(ann)})
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    load = image_loader(images)

    def work(ann: ImageAnnotation) -> Manifest:
        try:
            image = load(ann)
            samples = augment_image(image, ann, strategy, pools, master_seed, policy)
        except (DatasetIOError, ValidationError, GeometryError) as exc:
            logger.warning("skipping %s: %s", ann.image_id, exc)
            return Manifest(skipped=[(ann.image_id, str(exc))])
        for sample in samples:
            Image.fromarray(sample.image).save(out / "images" / f"{sample.image_id}.png")
            save_annotation(sample.annotation, out / "annotations")
        return Manifest.from_samples(samples)

    manifest = Manifest()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, selected))
    else:
        results = []
        for i, ann in enumerate(selected):
            results.append(work(ann))
            if (i + 1) % 100 == 0:
                logger.info("augmented %d/%d images", i + 1, len(selected))
    for result in results:
        manifest = manifest + result
    (out / "manifest.csv").write_text(manifest.to_csv())
    (out / "skipped.csv").write_text(manifest.skipped_csv())
    return manifest


STRATEGY_KEYS = tuple(f.name for f in fields(StrategyConfig))
