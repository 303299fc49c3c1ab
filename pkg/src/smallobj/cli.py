"""Command-line entry point: ``smallobj {stats,split,augment,eval,gan-demo}``.

Progress and warnings go to stderr. Result files are written under
``--out``; stdout carries a short summary (and the stats CSV when ``stats``
runs without ``--out``).

Exit codes: 0 success, 2 usage, 3 validation, 4 I/O, 5 computation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augmentor import STRATEGY_KEYS, PlacementPolicy, Pools, run_strategy, strategy_from_mapping, strategy_preset
from .det_eval import APProtocol, EvalConfig, evaluate, load_detection_dir
from .exceptions import (
    AnnotationParseError,
    DatasetIOError,
    GeometryError,
    NoPositivesError,
    PoolLookupError,
    SchemaError,
    TrainingError,
    ValidationError,
)
from .gan_objectives import format_params, toy_residual_training
from .patch_pool import build_voc_pool, load_generated_pool
from .rng import make_rng, random_seed
from .voc_io import SizeClass, dataset_stats, load_annotations, read_image_set, save_annotation, split_by_size

logger = logging.getLogger("smallobj")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_COMPUTE = 5

FORMAT_VERSION = "1"
ROOT_ENV = "SMALLOBJ_VOC_ROOT"

# Keys accepted in a --strategy-config file besides StrategyConfig fields.
CONFIG_FLAG_KEYS = ("strategy", "annotations", "images", "image_set", "out", "seed",
                    "generated_pool", "pool_size", "max_attempts", "jobs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Dashes in keys read as underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _default_dataset_dir(sub: str) -> str | None:
    root = os.environ.get(ROOT_ENV)
    return str(Path(root) / sub) if root else None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smallobj", description="Small-object VOC toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"smallobj {__version__} (output format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_args(p, images=False):
        p.add_argument("--annotations", default=None,
                       help=f"VOC Annotations directory (default: ${ROOT_ENV}/Annotations)")
        if images:
            p.add_argument("--images", default=None,
                           help=f"image directory (default: ${ROOT_ENV}/JPEGImages)")
        p.add_argument("--image-set", default=None, help="file listing image ids to use, one per line")

    def common(p):
        p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("stats", help="object counts per class and size group")
    dataset_args(p)
    p.add_argument("--out", default=None, help="directory for stats.csv and stats.md (default: CSV on stdout)")
    p.add_argument("--label", default="", help="row label prefix in the Markdown tables")
    common(p)

    p = sub.add_parser("split", help="write annotations restricted to one size group")
    dataset_args(p)
    p.add_argument("--size", required=True, choices=[s.value for s in SizeClass])
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("augment", help="copy-paste oversampling of small objects")
    dataset_args(p, images=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--strategy", type=int, choices=range(1, 6), default=None)
    group.add_argument("--strategy-config", default=None, help="key = value file overriding strategy fields")
    p.add_argument("--generated-pool", default=None, help="directory <class>/*.png of 32x32 patches")
    p.add_argument("--pool-size", default=None, choices=[s.value for s in SizeClass],
                   help="restrict the VOC crop pool to one size group")
    p.add_argument("--max-attempts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: logical cores)")
    p.add_argument("--out", default=None)
    common(p)

    p = sub.add_parser("eval", help="size-stratified AP of detection files")
    dataset_args(p)
    p.add_argument("--detections", required=True, help="directory of per-class detection files")
    p.add_argument("--size", default=None, choices=[s.value for s in SizeClass])
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--protocol", default="11point", choices=[a.value for a in APProtocol])
    p.add_argument("--cross-size", default="ignore", choices=["ignore", "strict"],
                   help="detections matching ground truth of another size: ignore them or count FP")
    p.add_argument("--out", default=None)
    common(p)

    p = sub.add_parser("gan-demo", help="toy residual GAN on two Gaussian clusters")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--offset", type=float, default=0.0,
                   help="distance between the large and small cluster means")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--disc-l2", type=float, default=5.0)
    p.add_argument("--soft-labels", action="store_true")
    p.add_argument("--out", required=True)
    common(p)
    return parser


def _require_dir(path, what):
    if path is None:
        raise UsageError(f"--{what} is required (or set ${ROOT_ENV})")
    if not Path(path).is_dir():
        raise DatasetIOError(f"{what} directory not found: {path}")
    return Path(path)


def _load(args):
    annotations_dir = _require_dir(args.annotations or _default_dataset_dir("Annotations"), "annotations")
    ids = None
    if args.image_set:
        if not Path(args.image_set).is_file():
            raise DatasetIOError(f"image set not found: {args.image_set}")
        ids = read_image_set(args.image_set)
    return load_annotations(annotations_dir, ids)


def cmd_stats(args) -> int:
    annotations = _load(args)
    stats = dataset_stats(annotations)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.csv").write_text(stats.to_csv())
        (out / "stats.md").write_text(stats.to_markdown(args.label))
        print(f"images {stats.n_images} objects {stats.n_objects} "
              + " ".join(f"{s.value} {stats.total(s)}" for s in SizeClass))
    else:
        sys.stdout.write(stats.to_csv())
    return EXIT_OK


def cmd_split(args) -> int:
    annotations = _load(args)
    subset = split_by_size(annotations, args.size)
    out = Path(args.out) / "annotations"
    out.mkdir(parents=True, exist_ok=True)
    for ann in subset:
        save_annotation(ann, out)
    print(f"{args.size}: {len(subset)} images, {sum(len(a.objects) for a in subset)} objects")
    return EXIT_OK


def cmd_augment(args) -> int:
    file_values = read_config_file(args.strategy_config) if args.strategy_config else {}
    unknown = set(file_values) - set(STRATEGY_KEYS) - set(CONFIG_FLAG_KEYS)
    if unknown:
        raise ValidationError("unknown config keys: " + ", ".join(sorted(unknown)))
    for key in CONFIG_FLAG_KEYS:
        if key != "strategy" and key in file_values and getattr(args, key) is None:
            setattr(args, key, file_values[key])
    base = strategy_preset(args.strategy or file_values.get("strategy", 1))
    strategy = strategy_from_mapping({k: v for k, v in file_values.items() if k in STRATEGY_KEYS}, base)

    if args.out is None:
        raise UsageError("--out is required")
    seed = int(args.seed) if args.seed is not None else random_seed()
    jobs = int(args.jobs) if args.jobs is not None else (os.cpu_count() or 1)
    policy = PlacementPolicy(int(args.max_attempts) if args.max_attempts is not None else 50)

    annotations = _load(args)
    images_dir = _require_dir(args.images or _default_dataset_dir("JPEGImages"), "images")
    generated = None
    if args.generated_pool is not None:
        generated = load_generated_pool(_require_dir(args.generated_pool, "generated-pool"))
    print(f"seed: {seed}")
    logger.info("building VOC pool from %d annotations", len(annotations))
    voc = build_voc_pool(annotations, images_dir, args.pool_size)
    manifest = run_strategy(annotations, images_dir, strategy, Pools(voc, generated), seed, args.out, policy, jobs)
    print(f"{strategy.name}: {manifest.samples} samples, {manifest.total_pasted} pasted, "
          f"{manifest.total_failed} failed placements, {len(manifest.skipped)} skipped images")
    return EXIT_OK


def cmd_eval(args) -> int:
    annotations = _load(args)
    detections = load_detection_dir(_require_dir(args.detections, "detections"))
    config = EvalConfig(args.iou, APProtocol(args.protocol), args.size, args.cross_size)
    report = evaluate(detections, annotations, config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.md").write_text(report.to_markdown(args.size or "all"))
        (out / "pr_curves.csv").write_text(report.pr_curves_csv())
    print(f"mAP {100 * report.mean_ap:.2f} ({len(report.per_class)} classes, "
          f"{len(report.excluded)} excluded)")
    return EXIT_OK


def gan_demo_data(dim: int, offset: float, samples: int, rng: np.random.Generator):
    """Small cluster around a random centre, large cluster shifted by ``offset`` along the diagonal."""
    centre = rng.normal(0.0, 2.0, size=dim)
    shift = offset * np.ones(dim) / np.sqrt(dim)
    small = centre + rng.normal(size=(samples, dim))
    large = centre + shift + rng.normal(size=(samples, dim))
    held_out = centre + rng.normal(size=(samples, dim))
    return large, small, held_out, shift


def cmd_gan_demo(args) -> int:
    seed = args.seed if args.seed is not None else random_seed()
    print(f"seed: {seed}")
    rng = make_rng(seed)
    large, small, held_out, shift = gan_demo_data(args.dim, args.offset, args.samples, rng)
    result = toy_residual_training(
        large, small, lr=args.lr, momentum=args.momentum, iterations=args.iterations,
        disc_l2=args.disc_l2, soft_labels=args.soft_labels, seed=seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(result.history_csv())
    (out / "params.txt").write_text(format_params(result.params))
    mean_residual = result.params.residual(held_out).mean(axis=0)
    print(f"gradient check error {result.gradient_check_error:.2e}; "
          f"mean residual norm {np.linalg.norm(mean_residual):.4f} (target {np.linalg.norm(shift):.4f})")
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "split": cmd_split,
    "augment": cmd_augment,
    "eval": cmd_eval,
    "gan-demo": cmd_gan_demo,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"smallobj {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AnnotationParseError, SchemaError, GeometryError, ValidationError, PoolLookupError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, NoPositivesError, FloatingPointError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
