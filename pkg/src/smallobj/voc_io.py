"""Pascal VOC annotation parsing, writing and size-stratified statistics.

Boxes are stored 0-based and inclusive on both ends. VOC files are 1-based,
so parsing subtracts one from every coordinate and writing adds it back.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import numbers
import os
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import AnnotationParseError, GeometryError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)

# Spellings used in prose and tables mapped onto the devkit names.
CLASS_ALIASES = {
    "airplane": "aeroplane",
    "bike": "bicycle",
    "table": "diningtable",
    "dining table": "diningtable",
    "moto": "motorbike",
    "motorcycle": "motorbike",
    "plant": "pottedplant",
    "potted plant": "pottedplant",
    "potted_plant": "pottedplant",
    "tv": "tvmonitor",
    "tv monitor": "tvmonitor",
    "tv_monitor": "tvmonitor",
}

SMALL_AREA = 32 * 32
BIG_AREA = 64 * 64


def canonical_class(name: str) -> str:
    key = name.strip().lower()
    key = CLASS_ALIASES.get(key, key)
    if key not in VOC_CLASSES:
        raise ValidationError(f"unknown VOC class: {name!r}")
    return key


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Integer pixel rectangle, inclusive on both ends."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    def __post_init__(self):
        for name in ("xmin", "ymin", "xmax", "ymax"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Integral):
                raise GeometryError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise GeometryError(f"inverted box {self.as_tuple()}")
        if self.xmin < 0 or self.ymin < 0:
            raise GeometryError(f"negative coordinate in box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.xmax - self.xmin + 1

    @property
    def height(self) -> int:
        return self.ymax - self.ymin + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def intersection_area(self, other: BoundingBox) -> int:
        iw = min(self.xmax, other.xmax) - max(self.xmin, other.xmin) + 1
        ih = min(self.ymax, other.ymax) - max(self.ymin, other.ymin) + 1
        if iw <= 0 or ih <= 0:
            return 0
        return iw * ih

    def intersects(self, other: BoundingBox) -> bool:
        return self.intersection_area(other) > 0

    def inside(self, width: int, height: int) -> bool:
        return self.xmax < width and self.ymax < height

    @classmethod
    def from_xywh(cls, x: int, y: int, w: int, h: int) -> BoundingBox:
        return cls(x, y, x + w - 1, y + h - 1)


class SizeClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    BIG = "big"

    @classmethod
    def parse(cls, value: str | SizeClass) -> SizeClass:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown size class {value!r}; expected small, medium or big") from None


def size_class(bbox: BoundingBox) -> SizeClass:
    """Classify a box by area: below 32*32 is small, at or above 64*64 is big."""
    area = bbox.area
    if area < SMALL_AREA:
        return SizeClass.SMALL
    if area < BIG_AREA:
        return SizeClass.MEDIUM
    return SizeClass.BIG


@dataclass(frozen=True)
class AnnotatedObject:
    class_name: str
    bbox: BoundingBox
    difficult: bool = False
    truncated: bool = False
    # provenance only: never written to XML and ignored by equality
    synthetic: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "class_name", canonical_class(self.class_name))
        object.__setattr__(self, "difficult", bool(self.difficult))
        object.__setattr__(self, "truncated", bool(self.truncated))

    @property
    def size(self) -> SizeClass:
        return size_class(self.bbox)


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    depth: int = 3
    objects: tuple[AnnotatedObject, ...] = ()
    filename: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.filename is None:
            object.__setattr__(self, "filename", f"{self.image_id}.jpg")
        self.validate()

    def validate(self) -> None:
        for name in ("width", "height", "depth"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{self.image_id}: {name} must be a positive integer, got {value!r}")
        for obj in self.objects:
            if not obj.bbox.inside(self.width, self.height):
                raise ValidationError(
                    f"{self.image_id}: {obj.class_name} box {obj.bbox.as_tuple()} "
                    f"outside {self.width}x{self.height} image"
                )


# -- XML ----------------------------------------------------------------------

def _text(node: ET.Element, path: str, field_name: str) -> str:
    child = node.find(path)
    if child is None or child.text is None or not child.text.strip():
        raise SchemaError(field_name)
    return child.text.strip()


def _int(node: ET.Element, path: str, field_name: str) -> int:
    raw = _text(node, path, field_name)
    try:
        return int(float(raw))
    except ValueError:
        raise SchemaError(field_name, f"field {field_name} is not a number: {raw!r}") from None


def _flag(node: ET.Element, tag: str) -> bool:
    child = node.find(tag)
    if child is None or child.text is None or not child.text.strip():
        return False
    return int(float(child.text.strip())) != 0


def parse_annotation(xml_text: str | bytes) -> ImageAnnotation:
    """Parse one VOC XML document.

    Objects are returned in file order. Unknown elements are skipped.
    Coordinates that fall outside the image after the 1-based to 0-based
    shift are clipped onto the image, since a handful of released VOC
    files have boxes touching 0 or exceeding the stated size.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, column = exc.position
        raise AnnotationParseError(f"malformed XML at line {line}, column {column}: {exc}", line, column) from None

    filename = _text(root, "filename", "filename")
    width = _int(root, "size/width", "size/width")
    height = _int(root, "size/height", "size/height")
    depth = _int(root, "size/depth", "size/depth")
    if width <= 0 or height <= 0 or depth <= 0:
        raise SchemaError("size", f"non-positive image size {width}x{height}x{depth}")

    objects = []
    for i, node in enumerate(root.findall("object")):
        name = _text(node, "name", f"object[{i}]/name")
        coords = [
            _int(node, f"bndbox/{tag}", f"object[{i}]/bndbox/{tag}") - 1
            for tag in ("xmin", "ymin", "xmax", "ymax")
        ]
        xmin, ymin, xmax, ymax = coords
        if xmin > xmax or ymin > ymax:
            raise GeometryError(f"object[{i}] ({name}): inverted box {tuple(c + 1 for c in coords)}")
        clipped = (
            min(max(xmin, 0), width - 1),
            min(max(ymin, 0), height - 1),
            min(max(xmax, 0), width - 1),
            min(max(ymax, 0), height - 1),
        )
        if clipped != (xmin, ymin, xmax, ymax):
            logger.debug("%s: clipped object[%d] box %s to %s", filename, i, coords, clipped)
        objects.append(
            AnnotatedObject(
                class_name=name,
                bbox=BoundingBox(*clipped),
                difficult=_flag(node, "difficult"),
                truncated=_flag(node, "truncated"),
            )
        )

    return ImageAnnotation(
        image_id=os.path.splitext(filename)[0],
        width=width,
        height=height,
        depth=depth,
        objects=tuple(objects),
        filename=filename,
    )


def write_annotation(ann: ImageAnnotation) -> str:
    ann.validate()
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = ann.filename
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(ann.width)
    ET.SubElement(size, "height").text = str(ann.height)
    ET.SubElement(size, "depth").text = str(ann.depth)
    ET.SubElement(root, "segmented").text = "0"
    for obj in ann.objects:
        node = ET.SubElement(root, "object")
        ET.SubElement(node, "name").text = obj.class_name
        ET.SubElement(node, "truncated").text = str(int(obj.truncated))
        ET.SubElement(node, "difficult").text = str(int(obj.difficult))
        box = ET.SubElement(node, "bndbox")
        for tag, value in zip(("xmin", "ymin", "xmax", "ymax"), obj.bbox.as_tuple()):
            ET.SubElement(box, tag).text = str(value + 1)
    ET.indent(root, space="\t")
    return ET.tostring(root, encoding="unicode") + "\n"


def read_annotation(path: str | os.PathLike) -> ImageAnnotation:
    path = Path(path)
    try:
        return parse_annotation(path.read_bytes())
    except AnnotationParseError as exc:
        raise AnnotationParseError(f"{path}: {exc}", exc.line, exc.column) from None
    except SchemaError as exc:
        raise SchemaError(exc.field, f"{path}: {exc}") from None
    except (GeometryError, ValidationError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


def read_image_set(path: str | os.PathLike) -> list[str]:
    """Image ids listed one per line, as in ``ImageSets/Main/*.txt``."""
    ids = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.append(line.split()[0])
    return ids


def load_annotations(directory: str | os.PathLike, image_ids: Iterable[str] | None = None) -> list[ImageAnnotation]:
    directory = Path(directory)
    if image_ids is None:
        paths = sorted(directory.glob("*.xml"))
    else:
        paths = [directory / f"{image_id}.xml" for image_id in image_ids]
    return [read_annotation(p) for p in paths]


def save_annotation(ann: ImageAnnotation, directory: str | os.PathLike) -> Path:
    path = Path(directory) / f"{ann.image_id}.xml"
    path.write_text(write_annotation(ann), encoding="utf-8")
    return path


# -- size stratification -------------------------------------------------------

def split_by_size(dataset: Sequence[ImageAnnotation], size: SizeClass | str) -> list[ImageAnnotation]:
    """Keep images holding at least one object of ``size``, stripped to those objects."""
    size = SizeClass.parse(size)
    out = []
    for ann in dataset:
        kept = tuple(obj for obj in ann.objects if obj.size is size)
        if kept:
            out.append(replace(ann, objects=kept))
    return out


@dataclass
class DatasetStats:
    """Object counts per class and size group, plus per-size image counts.

    ``counts[(class_name, size)]`` is ``[all, non_difficult]``. Instances
    merge with ``+``, which is associative and order independent, so shards
    can be counted separately.
    """

    counts: Counter = field(default_factory=Counter)
    non_difficult: Counter = field(default_factory=Counter)
    images: Counter = field(default_factory=Counter)
    n_images: int = 0

    def __add__(self, other: DatasetStats) -> DatasetStats:
        return DatasetStats(
            counts=self.counts + other.counts,
            non_difficult=self.non_difficult + other.non_difficult,
            images=self.images + other.images,
            n_images=self.n_images + other.n_images,
        )

    def count(self, class_name: str, size: SizeClass | str, non_difficult: bool = False) -> int:
        key = (canonical_class(class_name), SizeClass.parse(size))
        return (self.non_difficult if non_difficult else self.counts)[key]

    def total(self, size: SizeClass | str | None = None, non_difficult: bool = False) -> int:
        table = self.non_difficult if non_difficult else self.counts
        if size is None:
            return sum(table.values())
        size = SizeClass.parse(size)
        return sum(n for (_, s), n in table.items() if s is size)

    def image_count(self, size: SizeClass | str) -> int:
        return self.images[SizeClass.parse(size)]

    @property
    def n_objects(self) -> int:
        return self.total()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "size", "all_count", "non_difficult_count"])
        for size in SizeClass:
            for cls in VOC_CLASSES:
                key = (cls, size)
                writer.writerow([cls, size.value, self.counts[key], self.non_difficult[key]])
        for size in SizeClass:
            writer.writerow(["all", size.value, self.total(size), self.total(size, non_difficult=True)])
        return buf.getvalue()

    def to_markdown(self, label: str = "") -> str:
        """Render the per-class layout (one column per class) and the per-size summary."""
        prefix = f"{label} " if label else ""
        lines = []
        header = "| type | " + " | ".join(VOC_CLASSES) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (len(VOC_CLASSES) + 1))
        rows = [
            ("small", SizeClass.SMALL, False),
            ("small (non diff)", SizeClass.SMALL, True),
            ("medium", SizeClass.MEDIUM, False),
            ("big", SizeClass.BIG, False),
        ]
        for name, size, nd in rows:
            table = self.non_difficult if nd else self.counts
            cells = " | ".join(str(table[(cls, size)]) for cls in VOC_CLASSES)
            lines.append(f"| {prefix}{name} | {cells} |")
        lines.append("")
        lines.append("| dataset | all objects | small objects | medium objects | big objects |")
        lines.append("|---|---|---|---|---|")
        lines.append(
            f"| {prefix}number of images | {self.n_images} | "
            + " | ".join(str(self.images[s]) for s in SizeClass) + " |"
        )
        lines.append(
            f"| {prefix}number of objects | {self.total()} | "
            + " | ".join(str(self.total(s)) for s in SizeClass) + " |"
        )
        return "\n".join(lines) + "\n"


def dataset_stats(dataset: Iterable[ImageAnnotation]) -> DatasetStats:
    stats = DatasetStats()
    for ann in dataset:
        stats.n_images += 1
        seen = set()
        for obj in ann.objects:
            size = obj.size
            seen.add(size)
            stats.counts[(obj.class_name, size)] += 1
            if not obj.difficult:
                stats.non_difficult[(obj.class_name, size)] += 1
        for size in seen:
            stats.images[size] += 1
    return stats
