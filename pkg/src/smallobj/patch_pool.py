"""Per-class pools of object patches used as copy-paste sources."""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
from PIL import Image

from .exceptions import DatasetIOError, GeometryError, PoolLookupError, ValidationError
from .voc_io import BoundingBox, ImageAnnotation, SizeClass, canonical_class

logger = logging.getLogger(__name__)

GENERATED_SIZE = 32
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


class PatchSource(enum.Enum):
    VOC_CROP = "voc"
    GENERATED = "generated"


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray
    class_name: str
    source: PatchSource = PatchSource.VOC_CROP
    patch_id: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
            raise ValidationError(f"patch pixels must be an HxWx3 uint8 array, got {pixels.shape} {pixels.dtype}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValidationError("patch must be at least 1x1")
        if self.source is PatchSource.GENERATED and pixels.shape[:2] != (GENERATED_SIZE, GENERATED_SIZE):
            raise ValidationError(f"generated patch must be 32x32, got {pixels.shape[1]}x{pixels.shape[0]}")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class ObjectPool:
    """Immutable mapping of class name to patches, sampled with replacement."""

    def __init__(self, patches: Mapping[str, Iterable[Patch]] | None = None):
        self._patches: dict[str, tuple[Patch, ...]] = {}
        for name, items in (patches or {}).items():
            items = tuple(items)
            if items:
                self._patches[name] = items

    @classmethod
    def from_patches(cls, patches: Iterable[Patch]) -> ObjectPool:
        grouped: dict[str, list[Patch]] = {}
        for patch in patches:
            grouped.setdefault(patch.class_name, []).append(patch)
        return cls(grouped)

    def __contains__(self, class_name: str) -> bool:
        return class_name in self._patches

    def __getitem__(self, class_name: str) -> tuple[Patch, ...]:
        try:
            return self._patches[class_name]
        except KeyError:
            raise PoolLookupError(f"no patches for class {class_name!r} in pool") from None

    def __len__(self) -> int:
        return sum(len(v) for v in self._patches.values())

    def __repr__(self) -> str:
        return f"ObjectPool({self.sizes()})"

    @property
    def classes(self) -> list[str]:
        return sorted(self._patches)

    def sizes(self) -> dict[str, int]:
        return {name: len(self._patches[name]) for name in self.classes}

    def sample(self, class_name: str, rng: np.random.Generator) -> Patch:
        return sample(self, class_name, rng)


def sample(pool: ObjectPool, class_name: str, rng: np.random.Generator) -> Patch:
    """Uniform draw with replacement; a single ``rng.integers`` call per draw."""
    items = pool[class_name]
    return items[int(rng.integers(len(items)))]


def crop_object(image: np.ndarray, bbox: BoundingBox, class_name: str, patch_id: str = "") -> Patch:
    image = np.asarray(image)
    h, w = image.shape[:2]
    if not bbox.inside(w, h):
        raise GeometryError(f"box {bbox.as_tuple()} outside {w}x{h} image")
    pixels = image[bbox.ymin:bbox.ymax + 1, bbox.xmin:bbox.xmax + 1]
    return Patch(pixels, canonical_class(class_name), PatchSource.VOC_CROP, patch_id)


def load_rgb(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DatasetIOError(f"image not found: {path}") from None
    except OSError as exc:
        raise DatasetIOError(f"cannot decode image {path}: {exc}") from None


def find_image(directory: str | os.PathLike, ann: ImageAnnotation) -> Path:
    directory = Path(directory)
    candidates = [directory / ann.filename] + [directory / f"{ann.image_id}{ext}" for ext in IMAGE_EXTENSIONS]
    for path in candidates:
        if path.is_file():
            return path
    raise DatasetIOError(f"no image file for {ann.image_id} in {directory}")


ImageSource = str | os.PathLike | Mapping[str, np.ndarray] | Callable[[ImageAnnotation], np.ndarray]


def image_loader(images: ImageSource) -> Callable[[ImageAnnotation], np.ndarray]:
    """Normalize a directory, an id->array mapping or a callable into a loader."""
    if callable(images):
        return images
    if isinstance(images, Mapping):
        def from_mapping(ann):
            try:
                return np.asarray(images[ann.image_id])
            except KeyError:
                raise DatasetIOError(f"no image for {ann.image_id}") from None
        return from_mapping
    directory = Path(images)
    return lambda ann: load_rgb(find_image(directory, ann))


def build_voc_pool(
    annotations: Iterable[ImageAnnotation],
    images: ImageSource,
    size_filter: SizeClass | str | None = None,
    include_difficult: bool = False,
) -> ObjectPool:
    """Crop every (non-difficult) object passing ``size_filter`` into a pool."""
    load = image_loader(images)
    size_filter = SizeClass.parse(size_filter) if size_filter is not None else None
    patches = []
    for ann in annotations:
        wanted = [
            (i, obj) for i, obj in enumerate(ann.objects)
            if (include_difficult or not obj.difficult) and (size_filter is None or obj.size is size_filter)
        ]
        if not wanted:
            continue
        image = load(ann)
        for i, obj in wanted:
            patches.append(crop_object(image, obj.bbox, obj.class_name, f"voc:{ann.image_id}:{i}"))
    return ObjectPool.from_patches(patches)


def _pool_class_name(name: str) -> str:
    try:
        return canonical_class(name.replace("_", " "))
    except ValidationError:
        logger.warning("generated pool class %r is not a VOC class; kept as is", name)
        return name


def load_generated_pool(directory: str | os.PathLike) -> ObjectPool:
    """Load ``<root>/<class_name>/*.png`` files, each a 32x32 RGB patch.

    Directory names go through the VOC alias table, so ``potted plant``,
    ``potted_plant`` and ``pottedplant`` all land on ``pottedplant``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DatasetIOError(f"generated pool directory not found: {root}")
    patches = []
    bad = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        class_name = _pool_class_name(class_dir.name)
        for path in sorted(class_dir.glob("*.png")):
            try:
                with Image.open(path) as im:
                    size = im.size
                    pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
            except OSError as exc:
                raise DatasetIOError(f"cannot read generated patch {path}: {exc}") from None
            if size != (GENERATED_SIZE, GENERATED_SIZE):
                bad.append(f"{path} ({size[0]}x{size[1]})")
                continue
            patches.append(
                Patch(pixels, class_name, PatchSource.GENERATED, f"gen:{class_dir.name}/{path.name}")
            )
    if bad:
        raise ValidationError("generated patches must be 32x32: " + ", ".join(bad))
    return ObjectPool.from_patches(patches)


def save_pool(pool: ObjectPool, directory: str | os.PathLike) -> None:
    """Write a pool in the generated-pool layout (lossless PNG)."""
    root = Path(directory)
    for class_name in pool.classes:
        class_dir = root / class_name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i, patch in enumerate(pool[class_name]):
            Image.fromarray(np.ascontiguousarray(patch.pixels)).save(class_dir / f"{i:05d}.png")
