"""Command-line front door: assess, calibrate, rank, and transform.

Exit codes: 0 success, 2 configuration error, 3 detector failure (partial
results are still flushed, with an error record in the report).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .calibrate import (
    CalibrationError,
    CalibratorParams,
    ParamGrid,
    apply_calibrator,
    calibrate,
)
from .dataset import ManifestError, load_image, load_manifest, save_image
from .detector import (
    CachingDetector,
    DetectionCache,
    DetectorError,
    DetectorHandle,
    MockDetector,
    MockRule,
)
from .fidelity import ALL_OBJECTS, SAFETY_RELEVANT, count_inconsistencies, sa_fidelity
from .report import emit_report, rank_generators, RankEntry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DETECTOR = 3

DEFAULT_GRID = "0.8:1.2:0.1"


class ConfigError(ValueError):
    pass


def _parse_mock_spec(spec: str) -> MockDetector:
    """Parse "mock" or "mock:min_area=100,luma_lo=0.3,luma_hi=0.7,min_rms=0.01"."""
    _, _, params_text = spec.partition(":")
    kwargs: dict[str, float] = {}
    if params_text:
        for part in params_text.split(","):
            key, _, value = part.partition("=")
            try:
                kwargs[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"bad mock parameter {part!r}") from None
    try:
        rule = MockRule(
            min_area=kwargs.pop("min_area", 100.0),
            luma_window=(kwargs.pop("luma_lo", 0.0), kwargs.pop("luma_hi", 1.0)),
            min_rms_contrast=kwargs.pop("min_rms", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if kwargs:
        raise ConfigError(f"unknown mock parameters: {sorted(kwargs)}")
    return MockDetector(rule)


def _build_detector(spec: str, score_threshold: float):
    if spec.startswith("mock"):
        return _parse_mock_spec(spec)
    try:
        handle = DetectorHandle.from_spec(spec, score_threshold=score_threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cache_dir = os.environ.get("SAFIDEL_CACHE_DIR")
    if cache_dir:
        return CachingDetector(handle, DetectionCache(cache_dir))
    return handle


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _provenance(args: argparse.Namespace, detector_id: str) -> dict:
    # Execution details (output path, worker count) do not affect results
    # and stay out of the hash so reruns compare byte-for-byte.
    skip = {"func", "out", "jobs"}
    config = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    config = {k: str(v) for k, v in sorted(config.items())}
    return {
        "config_hash": _config_hash(config),
        "tool_version": __version__,
        "detector_id": detector_id,
    }


def _load_dataset(args: argparse.Namespace):
    ds = load_manifest(args.manifest)
    overrides = {}
    if args.area_threshold is not None:
        overrides["area_threshold"] = args.area_threshold
    if overrides:
        from dataclasses import replace

        selector = replace(ds.selector, **overrides)
        ds = load_manifest(args.manifest, selector=selector)
    return ds


def _write_report(args: argparse.Namespace, results: dict) -> None:
    data = emit_report(results, args.format)
    Path(args.out).write_bytes(data)


def _assess_sample(sample, generator, detector, selector, modes, iou_min):
    real_img = sample.load_real()
    real_dets = detector.detect(real_img, image_id=f"{sample.sample_id}::real", gt=sample.objects)
    syn_img = sample.load_synthetic(generator)
    syn_dets = detector.detect(
        syn_img, image_id=f"{sample.sample_id}::{generator}", gt=sample.objects
    )
    rows = []
    for mode in modes:
        counts = count_inconsistencies(
            sample.objects, real_dets, syn_dets, selector, iou_min, mode
        )
        rows.append(
            {
                "generator": generator,
                "sample_id": sample.sample_id,
                "mode": mode,
                **counts.to_json_dict(),
                "fn": counts.false_negatives,
                "fp": counts.false_positives,
            }
        )
    verdict = sa_fidelity(syn_dets, [real_dets], sample.sd, selector, sample.image_size)
    verdict_row = {
        "generator": generator,
        "sample_id": sample.sample_id,
        **verdict.to_json_dict(),
    }
    return rows, verdict_row


def cmd_assess(args: argparse.Namespace) -> int:
    detector = _build_detector(args.detector, args.score_threshold)
    try:
        return _run_assess(args, detector)
    finally:
        detector.close()


def _run_assess(args: argparse.Namespace, detector) -> int:
    ds = _load_dataset(args)
    generators = [args.generator] if args.generator else ds.generators
    for gen in generators:
        if gen not in ds.generators:
            raise ConfigError(f"generator {gen!r} not in manifest")
    modes = {
        "sa": [SAFETY_RELEVANT],
        "ov": [ALL_OBJECTS],
        "both": [SAFETY_RELEVANT, ALL_OBJECTS],
    }[args.mode]

    detector_id = getattr(detector, "detector_id", "unknown")
    results: dict = {
        "provenance": _provenance(args, detector_id),
        "rows": [],
        "sa_verdicts": [],
    }
    work = [(gen, sample) for gen in generators for sample in ds.samples]

    def run_one(item):
        gen, sample = item
        return _assess_sample(sample, gen, detector, ds.selector, modes, args.iou)

    failure: DetectorError | None = None
    outcomes = []
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(run_one, item) for item in work]
            for fut in futures:
                if failure is not None:
                    fut.cancel()
                    continue
                try:
                    outcomes.append(fut.result())
                except DetectorError as exc:
                    failure = exc
    else:
        for item in work:
            try:
                outcomes.append(run_one(item))
            except DetectorError as exc:
                failure = exc
                break

    for rows, verdict_row in outcomes:
        for row in rows:
            results["rows"].append({"detector": detector_id, **row})
        results["sa_verdicts"].append(verdict_row)

    if failure is not None:
        results["error"] = f"detector failure: {failure}"
        _write_report(args, results)
        print(f"detector failure: {failure}", file=sys.stderr)
        return EXIT_DETECTOR
    _write_report(args, results)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    detector = _build_detector(args.detector, args.score_threshold)
    try:
        return _run_calibrate(args, detector)
    finally:
        detector.close()


def _run_calibrate(args: argparse.Namespace, detector) -> int:
    ds = _load_dataset(args)
    try:
        grid = ParamGrid.parse(args.grid)
    except ValueError as exc:
        raise ConfigError(f"bad grid spec: {exc}") from None
    generators = [args.generator] if args.generator else ds.generators
    for gen in generators:
        if gen not in ds.generators:
            raise ConfigError(f"generator {gen!r} not in manifest")

    detector_id = getattr(detector, "detector_id", "unknown")
    results: dict = {"provenance": _provenance(args, detector_id), "calibration": {}}
    try:
        for gen in generators:
            outcome = calibrate(
                ds, gen, detector, args.loss, grid, iou_min=args.iou, jobs=args.jobs
            )
            results["calibration"][gen] = outcome.to_json_dict()
    except CalibrationError as exc:
        results["error"] = f"detector failure: {exc}"
        args.format = "json"
        _write_report(args, results)
        print(f"detector failure: {exc}", file=sys.stderr)
        return EXIT_DETECTOR
    args.format = "json"  # calibration results are structured; always JSON
    _write_report(args, results)
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from None
    mode = SAFETY_RELEVANT if args.mode == "sa" else ALL_OBJECTS
    grouped: dict[tuple[str, str], list[float]] = {}
    for row in report.get("rows", []):
        if row.get("mode") != mode:
            continue
        key = (row["generator"], row["detector"])
        grouped.setdefault(key, []).append(float(row["total"]))
    if not grouped:
        raise ConfigError(f"report has no rows for mode {mode!r}")
    entries = [
        RankEntry(generator=gen, detector=det, counts=counts)
        for (gen, det), counts in sorted(grouped.items())
    ]
    ranked = rank_generators(entries)
    results = {
        "provenance": report.get("provenance", {}),
        "mode": mode,
        "ranking": [r.to_json_dict() for r in ranked],
    }
    _write_report(args, results)
    return EXIT_OK


def cmd_transform(args: argparse.Namespace) -> int:
    try:
        params = CalibratorParams(
            contrast=args.contrast,
            brightness=args.brightness,
            sharpness=args.sharpness,
            blur_sigma=args.blur,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    img = load_image(args.input)
    save_image(apply_calibrator(img, params), args.output)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="paired dataset manifest JSON")
    parser.add_argument(
        "--detector",
        required=True,
        help='detector spec: "cmd:<command>", "http://host:port", or "mock[:k=v,...]"',
    )
    parser.add_argument("--generator", help="restrict to one generator")
    parser.add_argument("--iou", type=float, default=0.5, help="IoU threshold for matching")
    parser.add_argument("--area-threshold", type=float, default=None, dest="area_threshold")
    parser.add_argument("--score-threshold", type=float, default=0.5, dest="score_threshold")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output report path")
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safidel",
        description="Safety-aware fidelity assessment and calibration for paired "
        "real/synthetic perception data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="count real-vs-synthetic detection inconsistencies")
    _add_common(p)
    p.add_argument("--mode", choices=("sa", "ov", "both"), default="both")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("calibrate", help="grid-search the synthetic post-transform")
    _add_common(p)
    p.add_argument("--grid", default=DEFAULT_GRID, help="grid spec or start:stop:step shorthand")
    p.add_argument("--loss", choices=("neq", "l1", "fnr"), default="neq")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("rank", help="rank generators from an assess report")
    p.add_argument("--report", required=True, help="JSON report produced by assess")
    p.add_argument("--mode", choices=("sa", "ov"), default="sa")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("transform", help="apply a transform to one image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--contrast", type=float, default=1.0)
    p.add_argument("--brightness", type=float, default=1.0)
    p.add_argument("--sharpness", type=float, default=1.0)
    p.add_argument("--blur", type=float, default=0.0)
    p.set_defaults(func=cmd_transform)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the config-error code.
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DetectorError as exc:
        print(f"detector failure: {exc}", file=sys.stderr)
        return EXIT_DETECTOR


if __name__ == "__main__":
    sys.exit(main())
