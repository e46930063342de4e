"""Command-line interface: extract, eval and synth subcommands.

extract runs the full pipeline over page images (files or directories),
writing one CSV per detected table plus a JSON sidecar per page. eval scores
predictions against ground truth in area or icdar mode. synth renders a
deterministic corpus of synthetic pages with ground truth and stub-OCR
sidecars.

Configuration precedence: built-in defaults, then --config file, then flags.
Exit codes: 0 success, 1 partial failure (some inputs failed, the rest were
processed), 2 invalid usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

from . import evaluation, pipeline, synthetic
from .image_prep import load_image, save_image
from .ocr_output import parse_csv
from .pipeline import PipelineConfig

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# (flag, config field, type) for every numeric/string knob exposed 1:1.
_CONFIG_FLAGS = [
    ("--working-width", "working_width", int),
    ("--pad", "pad", int),
    ("--threshold-start", "threshold_start", float),
    ("--delta", "delta", float),
    ("--seg-frac", "seg_frac", float),
    ("--proximity", "proximity", int),
    ("--min-cell", "min_cell", int),
    ("--merge-threshold", "merge_threshold", float),
    ("--empty-eps", "empty_eps", float),
    ("--band-density", "band_density", float),
    ("--col-density", "col_density", float),
    ("--merge-gap", "merge_gap", int),
    ("--col-merge-gap", "col_merge_gap", int),
    ("--line-quantile", "line_quantile", float),
    ("--sim-cv", "sim_cv", float),
    ("--ink-threshold", "ink_threshold", int),
    ("--line-excl", "line_excl", int),
    ("--join-gap", "join_gap", int),
    ("--seam-margin", "seam_margin", int),
    ("--ocr-cmd", "ocr_cmd", str),
    ("--classifier-cmd", "classifier_cmd", str),
    ("--jobs", "jobs", int),
    ("--out-dir", "out_dir", str),
]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    for flag, dest, typ in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=typ, default=None)
    parser.add_argument("--debug-images", dest="debug_images",
                        action="store_true", default=None)
    parser.add_argument("--merge-multiline", dest="merge_multiline",
                        action="store_true", default=None)
    parser.add_argument("--no-refine-regions", dest="refine_regions",
                        action="store_false", default=None)
    parser.add_argument("--utf8-arrows", dest="arrows", action="store_const",
                        const="utf8", default=None)
    parser.add_argument("--timings", dest="timings", action="store_true", default=None)


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    if args.config:
        config = PipelineConfig.from_file(args.config, base=config)
    overrides = {}
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    config = replace(config, **overrides)
    config.validate()
    return config


def _collect_inputs(paths: list[str]) -> list[Path]:
    inputs: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            inputs.extend(sorted(q for q in p.iterdir()
                                 if q.suffix.lower() in IMAGE_SUFFIXES))
        else:
            inputs.append(p)
    return inputs


def _cmd_extract(args: argparse.Namespace) -> int:
    config = _build_config(args)
    inputs = _collect_inputs(args.inputs)
    if not inputs:
        print("no input images found", file=sys.stderr)
        return 2
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return 2
    proposals = {}
    if args.regions:
        try:
            proposals = pipeline.load_proposals(args.regions)
        except (OSError, ValueError) as exc:
            print(f"cannot read proposals {args.regions}: {exc}", file=sys.stderr)
            return 2

    emitted: dict[str, list] = {}
    failures: list[tuple[Path, str]] = []

    def run_one(path: Path):
        page = load_image(path)
        debug_dir = out_dir if config.debug_images else None
        result = pipeline.process_page(path, config,
                                       proposals=proposals.get(path.stem),
                                       debug_dir=debug_dir)
        for k, table in enumerate(result.tables, start=1):
            (out_dir / f"{path.stem}_table{k}.csv").write_text(
                table.csv_text, encoding="utf-8")
        sidecar = pipeline.page_sidecar(result, path.name,
                                        (page.shape[1], page.shape[0]),
                                        include_timings=config.timings)
        (out_dir / f"{path.stem}.json").write_text(sidecar, encoding="utf-8")
        return result

    jobs = config.jobs if config.jobs > 0 else min(4, len(inputs))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {path: pool.submit(run_one, path) for path in inputs}
        for path, future in futures.items():
            try:
                result = future.result()
                emitted[path.stem] = result.regions
                for warning in result.warnings:
                    print(f"[warn] {path.name}: {warning}", file=sys.stderr)
            except Exception as exc:
                failures.append((path, str(exc)))

    if args.emit_regions:
        Path(args.emit_regions).write_text(pipeline.dump_regions(emitted),
                                           encoding="utf-8")
    for path, message in failures:
        print(f"[error] {path}: {message}", file=sys.stderr)
    print(f"processed {len(inputs) - len(failures)}/{len(inputs)} page(s) -> {out_dir}")
    return 1 if failures else 0


def _load_predicted_tables(pred_dir: Path, stem: str) -> list:
    tables = []
    k = 1
    while True:
        csv_path = pred_dir / f"{stem}_table{k}.csv"
        if not csv_path.exists():
            break
        tables.append(parse_csv(csv_path.read_text(encoding="utf-8")))
        k += 1
    return tables


def _load_predicted_regions(pred: Path, stem: str):
    from .region_detect import Region

    if pred.is_file():  # a combined --emit-regions file
        grouped = pipeline.load_proposals(pred)
        return grouped.get(stem, [])
    sidecar = pred / f"{stem}.json"
    if not sidecar.exists():
        return None
    data = json.loads(sidecar.read_text(encoding="utf-8"))
    return [Region(r["x_min"], r["y_min"], r["x_max"], r["y_max"])
            for r in data.get("regions", [])]


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = Path(args.predicted)
    truth_dir = Path(args.truth)
    stems = sorted(p.stem for p in truth_dir.glob("*.xml"))
    if not stems:
        print(f"no ground-truth XML files in {truth_dir}", file=sys.stderr)
        return 2
    report: dict = {"mode": args.mode, "per_document": []}
    failures = 0

    if args.mode == "icdar":
        predicted, truth = {}, {}
        for stem in stems:
            try:
                truth[stem] = evaluation.parse_groundtruth(truth_dir / f"{stem}.xml")
            except evaluation.GroundTruthError as exc:
                print(f"[error] {exc}", file=sys.stderr)
                failures += 1
                continue
            tables = _load_predicted_tables(pred, stem)
            predicted[stem] = tables
        score = evaluation.icdar_score(predicted, truth,
                                       strict_text=args.strict_text,
                                       dedupe=args.unique_relations,
                                       warn=lambda m: print(f"[warn] {m}", file=sys.stderr))
        for s in score.per_document:
            report["per_document"].append({
                "document": s.document, "precision": s.precision, "recall": s.recall,
                "predicted": s.predicted, "truth": s.truth, "matched": s.matched})
        report["average"] = {"precision": score.precision, "recall": score.recall,
                             "f1": score.f1}
        print(f"icdar: precision={score.precision:.4f} recall={score.recall:.4f} "
              f"f1={score.f1:.4f} over {len(score.per_document)} document(s)")
    else:
        per_doc = []
        for stem in stems:
            try:
                truth_tables = evaluation.parse_groundtruth(truth_dir / f"{stem}.xml")
            except evaluation.GroundTruthError as exc:
                print(f"[error] {exc}", file=sys.stderr)
                failures += 1
                continue
            predicted_regions = _load_predicted_regions(pred, stem)
            if predicted_regions is None:
                print(f"[warn] no prediction for {stem}; counted as empty", file=sys.stderr)
                predicted_regions = []
            metrics = evaluation.area_precision_recall(
                predicted_regions, [t.region for t in truth_tables])
            per_doc.append(metrics)
            report["per_document"].append({
                "document": stem, "precision": metrics.precision,
                "recall": metrics.recall, "f1": metrics.f1})
        if per_doc:
            avg_p = sum(m.precision for m in per_doc) / len(per_doc)
            avg_r = sum(m.recall for m in per_doc) / len(per_doc)
        else:
            avg_p = avg_r = 0.0
        avg_f1 = 2 * avg_p * avg_r / (avg_p + avg_r) if (avg_p + avg_r) else 0.0
        report["average"] = {"precision": avg_p, "recall": avg_r, "f1": avg_f1}
        print(f"area: precision={avg_p:.4f} recall={avg_r:.4f} f1={avg_f1:.4f} "
              f"over {len(per_doc)} document(s)")

    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return 1 if failures else 0


def _cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    import random as _random
    rng = _random.Random(args.seed)
    for i in range(args.count):
        kind = kinds[i % len(kinds)]
        page = synthetic.generate_page(rng.randrange(2 ** 31), kind=kind)
        stem = f"synth_{i:04d}"
        save_image(out_dir / f"{stem}.png", page.image)
        evaluation.write_groundtruth(out_dir / f"{stem}.xml", f"{stem}.png", [page.truth])
        sidecar = {"texts": [{"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1,
                              "text": b.text} for b in page.text_boxes]}
        (out_dir / f"{stem}.ocr.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.count} page(s) to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tablescan",
                                     description="Table extraction from page images")
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="extract tables from page images to CSV")
    p_extract.add_argument("inputs", nargs="+", help="image files or directories")
    p_extract.add_argument("--regions", metavar="FILE",
                           help="JSON region proposals to union with detections")
    p_extract.add_argument("--emit-regions", metavar="FILE",
                           help="write final regions of all pages to FILE")
    _add_config_args(p_extract)
    p_extract.set_defaults(func=_cmd_extract)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("predicted", help="directory of extraction outputs "
                                          "(or a regions JSON file in area mode)")
    p_eval.add_argument("truth", help="directory of ground-truth XML files")
    p_eval.add_argument("--mode", choices=("area", "icdar"), default="icdar")
    p_eval.add_argument("--strict-text", action="store_true",
                        help="disable text normalization before matching")
    p_eval.add_argument("--unique-relations", action="store_true",
                        help="compare relation sets instead of multisets")
    p_eval.add_argument("--report", metavar="FILE", help="write the JSON report to FILE")
    p_eval.set_defaults(func=_cmd_eval)

    p_synth = sub.add_parser("synth", help="render a synthetic corpus with ground truth")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--count", type=int, default=10)
    p_synth.add_argument("--kinds", default="ruled,unruled,span,sparse",
                         help="comma-separated page kinds to cycle through")
    p_synth.add_argument("--out-dir", default="synth")
    p_synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"invalid usage: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
