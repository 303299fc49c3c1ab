"""Size-stratified average precision for detector outputs.

Matching follows the VOC devkit: detections are visited by descending score
(stable, so ties keep input order) and each one is compared with its
highest-IoU ground-truth box of the same class and image. Above the IoU
threshold, a difficult box makes the detection Ignored, an unclaimed box
makes it a TP and a claimed box makes it a duplicate FP.

With a size filter, ground truth of other sizes stays in the matching pool
but is not counted as positive. A detection whose best box lies outside the
filter is Ignored by default, or an FP with ``cross_size="strict"``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NoPositivesError, ValidationError
from .voc_io import VOC_CLASSES, BoundingBox, ImageAnnotation, SizeClass, canonical_class

logger = logging.getLogger(__name__)


class Match(enum.Enum):
    TP = "TP"
    FP = "FP"
    IGNORED = "Ignored"


class APProtocol(enum.Enum):
    ELEVEN_POINT = "11point"
    ALL_POINTS = "allpoints"


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_name: str
    score: float
    bbox: BoundingBox

    def __post_init__(self):
        object.__setattr__(self, "class_name", canonical_class(self.class_name))
        if not math.isfinite(self.score):
            raise ValidationError(f"non-finite score for detection in {self.image_id}")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    protocol: APProtocol = APProtocol.ELEVEN_POINT
    size_filter: SizeClass | None = None
    cross_size: str = "ignore"

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValidationError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        object.__setattr__(self, "protocol", APProtocol(self.protocol))
        if self.size_filter is not None:
            object.__setattr__(self, "size_filter", SizeClass.parse(self.size_filter))
        if self.cross_size not in ("ignore", "strict"):
            raise ValidationError(f"cross_size must be 'ignore' or 'strict', got {self.cross_size!r}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = a.intersection_area(b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def match_detections(
    detections: Sequence[Detection],
    ground_truth: Sequence[ImageAnnotation],
    config: EvalConfig = EvalConfig(),
) -> list[Match]:
    """Label single-class detections TP/FP/Ignored, returned in descending score order."""
    classes = {d.class_name for d in detections}
    if len(classes) > 1:
        raise ValidationError(f"detections span several classes: {sorted(classes)}")
    if not detections:
        return []
    class_name = classes.pop()
    gt = _class_ground_truth(ground_truth, class_name)
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    claimed: dict[str, set[int]] = defaultdict(set)
    labels = []
    for i in order:
        det = detections[i]
        boxes = gt.get(det.image_id, [])
        best, best_iou = -1, 0.0
        for j, (box, _, _) in enumerate(boxes):
            o = iou(det.bbox, box)
            if o > best_iou:
                best, best_iou = j, o
        if best < 0 or best_iou < config.iou_threshold:
            labels.append(Match.FP)
            continue
        _, difficult, size = boxes[best]
        if config.size_filter is not None and size is not config.size_filter:
            labels.append(Match.FP if config.cross_size == "strict" else Match.IGNORED)
        elif difficult:
            labels.append(Match.IGNORED)
        elif best in claimed[det.image_id]:
            labels.append(Match.FP)
        else:
            claimed[det.image_id].add(best)
            labels.append(Match.TP)
    return labels


def _class_ground_truth(ground_truth, class_name):
    gt = defaultdict(list)
    for ann in ground_truth:
        for obj in ann.objects:
            if obj.class_name == class_name:
                gt[ann.image_id].append((obj.bbox, obj.difficult, obj.size))
    return gt


def count_positives(ground_truth: Iterable[ImageAnnotation], class_name: str, size_filter: SizeClass | None = None) -> int:
    return sum(
        1
        for ann in ground_truth
        for obj in ann.objects
        if obj.class_name == class_name and not obj.difficult and (size_filter is None or obj.size is size_filter)
    )


def precision_recall(labels: Sequence[Match], n_positive: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative precision and recall over the non-ignored detections."""
    kept = [m for m in labels if m is not Match.IGNORED]
    tp = np.cumsum([m is Match.TP for m in kept], dtype=float)
    fp = np.cumsum([m is Match.FP for m in kept], dtype=float)
    recall = tp / n_positive
    precision = tp / np.maximum(tp + fp, np.finfo(float).eps)
    return precision, recall


def average_precision(labels: Sequence[Match], n_positive: int, protocol: APProtocol | str = APProtocol.ELEVEN_POINT) -> float:
    """AP in [0, 1] of a ranked TP/FP sequence.

    ``ElevenPoint`` averages the best precision reached at recall >= t for
    t in 0, 0.1, ..., 1. ``AllPoints`` integrates the precision envelope
    over recall. Raises ``NoPositivesError`` when ``n_positive`` is zero.
    """
    if n_positive <= 0:
        raise NoPositivesError("no eligible ground truth")
    protocol = APProtocol(protocol)
    precision, recall = precision_recall(labels, n_positive)
    if protocol is APProtocol.ELEVEN_POINT:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t - 1e-12
            ap += precision[mask].max() if mask.any() else 0.0
        return ap / 11.0
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass(frozen=True)
class ClassResult:
    ap: float
    n_gt: int
    precision: np.ndarray = field(repr=False, compare=False, default=None)
    recall: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass
class EvalReport:
    config: EvalConfig
    per_class: dict[str, ClassResult]
    excluded: list[str]

    @property
    def mean_ap(self) -> float:
        """Mean over evaluated classes, in [0, 1]; NaN when every class is excluded."""
        if not self.per_class:
            return float("nan")
        return float(np.mean([r.ap for r in self.per_class.values()]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "ap_percent", "n_gt"])
        for name, res in self.per_class.items():
            writer.writerow([name, f"{100 * res.ap:.4f}", res.n_gt])
        writer.writerow(["mAP", f"{100 * self.mean_ap:.4f}", sum(r.n_gt for r in self.per_class.values())])
        return buf.getvalue()

    def to_markdown(self, label: str = "") -> str:
        names = list(self.per_class)
        lines = [
            "| type | " + " | ".join(names) + " | mAP |",
            "|" + "---|" * (len(names) + 2),
            f"| {label or 'AP'} | "
            + " | ".join(f"{100 * self.per_class[n].ap:.2f}" for n in names)
            + f" | {100 * self.mean_ap:.2f} |",
        ]
        if self.excluded:
            lines.append("")
            lines.append("Excluded (no eligible ground truth): " + ", ".join(self.excluded))
        return "\n".join(lines) + "\n"

    def pr_curves_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "rank", "recall", "precision"])
        for name, res in self.per_class.items():
            for k, (r, p) in enumerate(zip(res.recall, res.precision), start=1):
                writer.writerow([name, k, f"{r:.6f}", f"{p:.6f}"])
        return buf.getvalue()


def evaluate(
    detections: Iterable[Detection],
    ground_truth: Sequence[ImageAnnotation],
    config: EvalConfig = EvalConfig(),
    classes: Sequence[str] = VOC_CLASSES,
) -> EvalReport:
    known = {ann.image_id for ann in ground_truth}
    by_class: dict[str, list[Detection]] = defaultdict(list)
    for det in detections:
        if det.image_id not in known:
            raise ValidationError(f"detection references unknown image {det.image_id!r}")
        by_class[det.class_name].append(det)
    per_class, excluded = {}, []
    for name in classes:
        n_gt = count_positives(ground_truth, name, config.size_filter)
        if n_gt == 0:
            excluded.append(name)
            continue
        labels = match_detections(by_class.get(name, []), ground_truth, config)
        precision, recall = precision_recall(labels, n_gt)
        per_class[name] = ClassResult(average_precision(labels, n_gt, config.protocol), n_gt, precision, recall)
    return EvalReport(config, per_class, excluded)


# -- detection files -------------------------------------------------------------

def parse_detections(text: str, class_name: str, source: str = "<detections>") -> list[Detection]:
    """Parse ``image_id score xmin ymin xmax ymax`` lines (1-based, inclusive).

    Real-valued coordinates are rounded to the nearest pixel.
    """
    class_name = canonical_class(class_name)
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValidationError(f"{source}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            score = float(parts[1])
            coords = [int(round(float(v))) - 1 for v in parts[2:]]
        except ValueError:
            raise ValidationError(f"{source}:{lineno}: non-numeric field") from None
        coords = [max(c, 0) for c in coords]
        try:
            bbox = BoundingBox(*coords)
        except ValueError as exc:
            raise ValidationError(f"{source}:{lineno}: {exc}") from None
        out.append(Detection(parts[0], class_name, score, bbox))
    return out


_CLASS_FILE = re.compile(r"(?:^|_)([a-z]+)\.txt$")


def load_detection_dir(directory: str | os.PathLike) -> list[Detection]:
    """Read one ``*.txt`` file per class; the class is the last ``_``-separated token.

    ``comp4_det_test_car.txt`` and ``car.txt`` both hold car detections.
    """
    directory = Path(directory)
    detections = []
    for path in sorted(directory.glob("*.txt")):
        m = _CLASS_FILE.search(path.name.lower())
        if not m:
            raise ValidationError(f"cannot infer class from file name {path.name}")
        detections.extend(parse_detections(path.read_text(), m.group(1), str(path)))
    return detections


def write_detections(detections: Iterable[Detection], directory: str | os.PathLike, prefix: str = "comp4_det_test_") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grouped = defaultdict(list)
    for det in detections:
        grouped[det.class_name].append(det)
    for name, dets in grouped.items():
        lines = [
            f"{d.image_id} {d.score:.6f} " + " ".join(str(c + 1) for c in d.bbox.as_tuple())
            for d in dets
        ]
        (directory / f"{prefix}{name}.txt").write_text("\n".join(lines) + "\n")
