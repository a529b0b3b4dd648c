"""Command-line entry point of the EHOI detection toolkit"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from loguru import logger
from pydantic import ValidationError

from config.settings import Settings, get_settings
from src.errors import DatasetValidationError, DocumentParseError
from src.services import augment as augment_service
from src.services import data as data_service
from src.services.evaluation import EXTRA_KEYS, ApConfig, AssociationSource, EHOIEvaluator, Interpolation, MapAllMode
from src.services.matcher import HandObjectMatcher
from src.services.reporting import curve_series, load_report, per_category_frame, report_table

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3


class UsageError(Exception):
    """Invalid command-line usage detected after argument parsing"""


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(settings: Settings, level: Optional[str] = None):
    """Install the stderr sink and the optional rotating file sink"""
    logger.remove()
    logger.add(sys.stderr, format=settings.log_format, level=level or settings.log_level)
    if settings.log_file:
        logger.add(
            settings.log_file,
            format=settings.log_format,
            level=level or settings.log_level,
            rotation="500 MB"
        )


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.debug(f"Wrote {path}")


def _csv(df) -> str:
    return df.to_csv(index=False, float_format="%.2f", lineterminator="\n")


def _parse_meta(pairs: Sequence[str]) -> Dict[str, str]:
    meta = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--meta expects KEY=VALUE, got {pair!r}")
        meta[key] = value
    return meta


def _load_gt(path: str):
    return data_service.parse_annotations(data_service.load_document(path), source=path)


def _load_dets(path: str, gt=None, contact_threshold: Optional[float] = None):
    sizes = {f.frame_id: (f.width, f.height) for f in gt.frames} if gt is not None else None
    return data_service.parse_detections(
        data_service.load_document(path),
        categories=gt.categories if gt is not None else None,
        image_sizes=sizes,
        contact_threshold=contact_threshold,
        source=path,
    )


# ============ Subcommands ============

def cmd_evaluate(args) -> int:
    """Score detections against ground truth and write the report and tables"""
    metadata = _parse_meta(args.meta)
    gt = _load_gt(args.gt)
    dets = _load_dets(args.dets, gt, args.contact_threshold)
    cfg = ApConfig(
        iou_threshold=args.iou,
        interpolation=Interpolation(args.interp),
        associations=AssociationSource(args.associations),
        map_all_mode=MapAllMode(args.map_all_mode),
    )
    report = EHOIEvaluator(cfg).evaluate(gt, dets, jobs=args.jobs)
    report = report.model_copy(update={"metadata": metadata})

    out = Path(args.out)
    label = args.label or Path(args.dets).stem
    table = report_table([(label, report)])
    data_service.write_json(out / "report.json", report.to_flat())
    _write_text(out / "table.txt", table.text)
    _write_text(out / "table.csv", table.to_csv())
    _write_text(out / "per_category.csv", _csv(per_category_frame(report)))
    print(table.text, end="")
    return EXIT_OK


def cmd_match(args) -> int:
    """Run the hand-object matcher and write matched detections"""
    gt = _load_gt(args.gt) if args.gt else None
    dets = _load_dets(args.dets, gt, args.contact_threshold)
    matches = HandObjectMatcher.match_dataset(dets, jobs=args.jobs)
    matched = dets.with_frames(
        HandObjectMatcher.apply_matches(frame, fm) for frame, fm in zip(dets.frames, matches)
    )
    data_service.write_json(Path(args.out) / "matched.json", data_service.serialize_detections(matched, matches))
    return EXIT_OK


def cmd_augment(args) -> int:
    """Blur every frame and write corrected annotations"""
    gt = _load_gt(args.gt)
    out = Path(args.out)
    blurred = augment_service.MotionBlurAugmenter.run(
        gt, args.images, args.masks, out,
        kernel_size=args.kernel_size,
        trajectory_points=args.trajectory_points,
        seed=args.seed,
        threshold=args.threshold,
        jobs=args.jobs,
    )
    data_service.write_json(out / "annotations.json", data_service.serialize_annotations(blurred))
    return EXIT_OK


def cmd_stats(args) -> int:
    gt = _load_gt(args.gt)
    stats = data_service.stats(gt)
    text, _ = data_service.DatasetAnalyzer.render_stats_table(stats)

    out = Path(args.out)
    data_service.write_json(out / "stats.json", stats.model_dump())
    _write_text(out / "stats.txt", text)
    _write_text(out / "category_histogram.csv", _csv(data_service.DatasetAnalyzer.category_histogram(stats)))
    print(text, end="")
    return EXIT_OK


def cmd_split(args) -> int:
    """Partition the annotations by video and write one document per split"""
    gt = _load_gt(args.gt)
    spec = data_service.DatasetReader.parse_split_spec(
        data_service.load_document(args.split_spec), source=args.split_spec
    )
    result = data_service.split(gt, spec)
    text, df = data_service.DatasetAnalyzer.render_split_table(result)

    out = Path(args.out)
    for name, part in result.parts.items():
        data_service.write_json(out / f"{name.value}.json", data_service.serialize_annotations(part))
    _write_text(out / "split_stats.txt", text)
    _write_text(out / "split_stats.csv", df.to_csv(float_format="%.2f", lineterminator="\n"))
    print(text, end="")
    return EXIT_OK


def cmd_subsample(args) -> int:
    gt = _load_gt(args.gt)
    try:
        part = data_service.subsample(gt, args.fraction, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data_service.write_json(Path(args.out) / "subsample.json", data_service.serialize_annotations(part))
    return EXIT_OK


def cmd_report(args) -> int:
    """Merge several report files into one comparison table"""
    if args.labels and len(args.labels) != len(args.reports):
        raise UsageError(f"got {len(args.labels)} labels for {len(args.reports)} reports")
    labels = args.labels or [Path(p).stem for p in args.reports]
    if len(set(labels)) != len(labels):
        labels = list(args.reports)

    reports = [(label, load_report(path)) for label, path in zip(labels, args.reports)]
    table = report_table(reports, extra=args.columns or ())

    out = Path(args.out)
    _write_text(out / "comparison.txt", table.text)
    _write_text(out / "comparison.csv", table.to_csv())
    if args.curves:
        _write_text(out / "curves.csv", curve_series(reports).to_csv(index=False, lineterminator="\n"))
    print(table.text, end="")
    return EXIT_OK


# ============ Parser ============

def build_parser(settings: Settings) -> argparse.ArgumentParser:
    """Build the argument parser; defaults come from the settings"""
    common = _Parser(add_help=False)
    common.add_argument("--out", default=settings.output_dir, help="Output directory")
    common.add_argument("--log-level", default=None, help="Override the configured log level")

    jobs = _Parser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=settings.jobs, help="Frame-level parallelism degree")

    contact = _Parser(add_help=False)
    contact.add_argument("--contact-threshold", type=float, default=settings.contact_threshold,
                         help="contact_prob at or above which a hand is in contact")

    parser = _Parser(prog="ehoi", description=f"{settings.app_name} v{settings.app_version}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common, jobs, contact], help="Score detections against ground truth")
    p.add_argument("--gt", required=True, help="Ground-truth annotation file")
    p.add_argument("--dets", required=True, help="Detection file")
    p.add_argument("--iou", type=float, default=settings.iou_threshold, help="IoU threshold")
    p.add_argument("--interp", choices=[i.value for i in Interpolation], default=settings.interpolation)
    p.add_argument("--associations", choices=[a.value for a in AssociationSource],
                   default=AssociationSource.MATCH.value)
    p.add_argument("--map-all-mode", choices=[m.value for m in MapAllMode], default=MapAllMode.PER_CATEGORY.value)
    p.add_argument("--meta", action="append", default=[], metavar="KEY=VALUE", help="Report metadata entry")
    p.add_argument("--label", default=None, help="Row label in the rendered table")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("match", parents=[common, jobs, contact], help="Assign active objects to hands")
    p.add_argument("--dets", required=True, help="Detection file")
    p.add_argument("--gt", default=None, help="Annotation file used as image-size source")
    p.set_defaults(handler=cmd_match)

    p = sub.add_parser("augment", parents=[common, jobs], help="Motion-blur frames and correct their boxes")
    p.add_argument("--gt", required=True, help="Annotation file")
    p.add_argument("--images", required=True, help="Image directory")
    p.add_argument("--masks", required=True, help="Mask directory")
    p.add_argument("--kernel-size", type=int, default=settings.kernel_size)
    p.add_argument("--trajectory-points", type=int, default=settings.trajectory_points)
    p.add_argument("--threshold", type=float, default=settings.mask_threshold, help="Mask re-binarization level")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("stats", parents=[common], help="Dataset statistics")
    p.add_argument("--gt", required=True, help="Annotation file")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("split", parents=[common], help="Split annotations by video")
    p.add_argument("--gt", required=True, help="Annotation file")
    p.add_argument("--split-spec", required=True, help='{"train": [...], "val": [...], "test": [...]} file')
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("subsample", parents=[common], help="Seeded uniform frame subsample")
    p.add_argument("--gt", required=True, help="Annotation file")
    p.add_argument("--fraction", type=float, required=True, help="Share of frames to keep, in (0, 1]")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.set_defaults(handler=cmd_subsample)

    p = sub.add_parser("report", parents=[common], help="Combine report files into a comparison table")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--labels", nargs="+", default=None, help="One label per report")
    p.add_argument("--curves", action="store_true", help="Also write curves.csv")
    p.add_argument("--columns", nargs="+", choices=EXTRA_KEYS, default=None,
                   help="Supplementary metrics to append to the table (map_det, mar_obj)")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 1 on usage errors, 2 on parse errors, 3 on validation errors
    """
    settings = get_settings()
    parser = build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(settings, args.log_level)
    logger.debug(f"Running {args.command} with {vars(args)}")

    try:
        return args.handler(args)
    except UsageError as exc:
        logger.error(f"Usage error: {exc}")
        return EXIT_USAGE
    except DocumentParseError as exc:
        logger.error(f"Parse error: {exc}")
        return EXIT_PARSE
    except DatasetValidationError as exc:
        logger.error(f"Validation error: {exc}")
        return EXIT_VALIDATION
    except ValidationError as exc:
        logger.error(f"Parse error: {exc}")
        return EXIT_PARSE
    except ValueError as exc:
        logger.error(f"Invalid parameter: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
