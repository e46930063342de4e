"""End-to-end page processing: prep, region detection, extraction, outputs.

Per page: normalize to the working form, run the band/column region search,
fuse with external proposals, then for each region cut the original-resolution
crop, rebuild its structure (real lines, data mask, inferred lines, final
lines), classify and resolve cell merges, map cells back to original pixels,
OCR the occupied anchors and write one CSV per table plus a JSON sidecar per
page. Every stage works on its own data; pages can run concurrently.
"""

from __future__ import annotations

import functools
import json
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import cell_grid, image_prep, line_detect, region_detect, structure_lines
from .cell_grid import CommandMergeClassifier, default_merge_classifier
from .image_prep import DegenerateInputError
from .line_detect import Orientation
from .ocr_output import CommandOCR, StubOCR, TableModel, emit_csv, extract_text
from .region_detect import Region
from .util import ink_fraction

STUB_PREFIX = "stub:"


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the extraction pipeline, with the documented defaults."""

    working_width: int = 800
    pad: int = 16
    threshold_start: float = 0.6
    delta: float = 0.02
    seg_frac: float = 0.2
    proximity: int = 5
    min_cell: int = 8
    merge_threshold: float = 0.5
    empty_eps: float = 0.002
    band_density: float = 0.005
    col_density: float = 0.01
    merge_gap: int = 1
    col_merge_gap: int = 16
    line_quantile: float = 0.99
    sim_cv: float = 0.5
    ink_threshold: int = 128
    line_excl: int = 2
    close_radius: int = 2
    join_gap: int = 2
    seam_margin: int = 5
    refine_regions: bool = True
    merge_multiline: bool = False
    arrows: str = "ascii"
    ocr_cmd: str = "tesseract {image} stdout --psm 6"
    classifier_cmd: str = ""
    jobs: int = 0  # 0 = automatic
    debug_images: bool = False
    timings: bool = False
    out_dir: str = "."

    def validate(self) -> None:
        if self.working_width < 16:
            raise ValueError("working_width must be >= 16")
        if self.pad < 0:
            raise ValueError("pad must be >= 0")
        if not 0 < self.threshold_start < 1:
            raise ValueError("threshold_start must be in (0, 1)")
        if not 0 < self.delta <= 0.1:
            raise ValueError("delta must be in (0, 0.1]")
        if not 0 < self.seg_frac <= 1:
            raise ValueError("seg_frac must be in (0, 1]")
        if self.min_cell < 1 or self.proximity < 0 or self.line_excl < 0:
            raise ValueError("min_cell/proximity/line_excl out of range")
        if not 0 <= self.merge_threshold <= 1:
            raise ValueError("merge_threshold must be in [0, 1]")
        if self.arrows not in ("ascii", "utf8"):
            raise ValueError("arrows must be 'ascii' or 'utf8'")

    def to_file(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        cfg = base or cls()
        overrides = {}
        text = Path(path).read_text(encoding="utf-8")
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ValueError(f"{path}:{n}: unknown key {key!r}")
            current = getattr(defaults, key)
            if isinstance(current, bool):
                overrides[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                overrides[key] = int(value)
            elif isinstance(current, float):
                overrides[key] = float(value)
            else:
                overrides[key] = value
        return replace(cfg, **overrides)


@dataclass
class TableResult:
    region: Region
    model: TableModel
    grid: cell_grid.CellGrid
    resolution: cell_grid.MergeResolution
    boxes: dict
    csv_text: str


@dataclass
class PageResult:
    regions: list[Region]
    tables: list[TableResult]
    warnings: list[str]
    timings: dict[str, float]


def make_classifier(config: PipelineConfig):
    if config.classifier_cmd:
        return CommandMergeClassifier(config.classifier_cmd)
    return functools.partial(default_merge_classifier,
                             empty_eps=config.empty_eps,
                             ink_threshold=config.ink_threshold,
                             seam_margin=config.seam_margin)


def make_ocr_client(config: PipelineConfig, image_path=None):
    """Build the OCR client; `stub:` resolves the sidecar beside the input."""
    cmd = config.ocr_cmd.strip()
    if cmd.startswith(STUB_PREFIX):
        explicit = cmd[len(STUB_PREFIX):].strip()
        if explicit:
            return StubOCR(explicit)
        if image_path is not None:
            return StubOCR(Path(image_path).with_suffix(".ocr.json"))
        return StubOCR(None)
    return CommandOCR(cmd)


def detect_regions(page: np.ndarray, config: PipelineConfig,
                   warn=None) -> tuple[list[Region], image_prep.ScaleMap]:
    """Run the two-stage band/column search on one grayscale page."""
    work, smap = image_prep.resize_to_width(page, config.working_width)
    padded, smap = image_prep.pad_vertical(work, smap, config.pad)
    strips = image_prep.slice_strips(padded)
    band_scorer = functools.partial(region_detect.default_band_scorer,
                                    density_threshold=config.band_density,
                                    ink_threshold=config.ink_threshold)
    content = (smap.pad_top, smap.pad_top + work.shape[0])
    flags = region_detect.detect_row_bands(strips, band_scorer, content_rows=content)
    row_intervals = region_detect.group_rows(flags, merge_gap=config.merge_gap)
    col_scorer = functools.partial(region_detect.default_column_scorer,
                                   density_threshold=config.col_density)
    column_intervals = []
    for y0, y1 in row_intervals:
        crop = padded[y0:min(y1, padded.shape[0]), :]
        square = image_prep.resize(crop, region_detect.COLUMN_SQUARE,
                                   region_detect.COLUMN_SQUARE)
        column_intervals.append(region_detect.detect_columns(
            square, col_scorer, merge_gap=config.col_merge_gap))
    regions = region_detect.to_regions(
        row_intervals, column_intervals, smap, config.working_width,
        original_size=(page.shape[1], page.shape[0]), warn=warn)
    return regions, smap


def extract_table(page: np.ndarray, region: Region, config: PipelineConfig,
                  classifier, ocr, warn=None, debug_sink=None) -> TableResult:
    """Extract one table region from the original-resolution page."""
    crop = page[region.y_min:region.y_max + 1, region.x_min:region.x_max + 1]
    if crop.shape[1] > config.working_width:
        work, smap = image_prep.resize_to_width(crop, config.working_width)
    else:
        # Upscaling a small crop would stretch glyph gaps past every fixed
        # pixel tolerance; the fixed-width copy only ever shrinks.
        work, smap = crop, image_prep.ScaleMap()
    raw = line_detect.second_derivatives(work)
    pooled = line_detect.maxpool_3x3_stride1(raw)
    line_kw = dict(quantile=config.line_quantile, seg_frac=config.seg_frac,
                   sim_cv=config.sim_cv)
    v_real = line_detect.find_real_lines(pooled, Orientation.VERTICAL,
                                         raw=raw, crop=work, **line_kw)
    h_real = line_detect.find_real_lines(pooled, Orientation.HORIZONTAL,
                                         raw=raw, crop=work, **line_kw)
    mask = line_detect.build_data_mask(work, v_real + h_real,
                                       ink_threshold=config.ink_threshold,
                                       line_excl=config.line_excl)
    mask = line_detect.close_mask(mask, radius=config.close_radius)

    finals = {}
    for axis, real in ((Orientation.VERTICAL, v_real), (Orientation.HORIZONTAL, h_real)):
        profile = structure_lines.quality_profile(mask, axis)
        inferred = structure_lines.adaptive_inferred_lines(
            profile, t0=config.threshold_start, delta=config.delta)
        groups = structure_lines.group_inferred(inferred, join_gap=config.join_gap)
        groups = structure_lines.suppress_near_real(groups, real, proximity=config.proximity)
        selected = [structure_lines.sma_select(g, profile) for g in groups]
        span = work.shape[1] if axis is Orientation.VERTICAL else work.shape[0]
        finals[axis] = structure_lines.finalize_lines(
            [l.coordinate for l in real], selected, axis, span, min_cell=config.min_cell)

    grid = cell_grid.build_grid(finals[Orientation.VERTICAL], finals[Orientation.HORIZONTAL])
    decisions = cell_grid.classify_pairs(work, grid, classifier)

    def ink_fallback(cell):
        x0, y0, x1, y1 = grid.cell_box(*cell)
        return ink_fraction(work[y0:y1 + 1, x0:x1 + 1], config.ink_threshold) > config.empty_eps

    resolution = cell_grid.resolve_merges(grid, decisions, config.merge_threshold,
                                          occupancy_fallback=ink_fallback, warn=warn)
    boxes = cell_grid.scale_cells_to_original(
        resolution, grid, smap, region, original_size=(page.shape[1], page.shape[0]))
    model = extract_text(ocr, page, resolution, grid, boxes, warn=warn)
    if config.merge_multiline:
        model = merge_multiline(model, resolution, grid, finals[Orientation.HORIZONTAL])
    csv_text = emit_csv(model, arrows=config.arrows)
    if debug_sink is not None:
        debug_sink(work, pooled, v_real, h_real, finals, grid, resolution)
    return TableResult(region=region, model=model, grid=grid,
                       resolution=resolution, boxes=boxes, csv_text=csv_text)


def merge_multiline(model: TableModel, resolution, grid,
                    horizontal: structure_lines.FinalLines) -> TableModel:
    """Concatenate stacked text cells separated only by inferred row lines.

    Off by default. Runs of vertically adjacent single-height text cells in
    the same column whose separating row boundary is an inferred line merge
    into the top cell, texts joined by spaces; the lower cells become upward
    extend markers. Real and border lines never merge.
    """
    from .ocr_output import Cell, EXTEND_UP

    inferred_row = {i for i, s in enumerate(horizontal.sources)
                    if s == structure_lines.SOURCE_INFERRED}
    cells = [row[:] for row in model.cells]
    for c in range(model.cols):
        r = 0
        while r < model.rows - 1:
            run_end = r
            while (run_end + 1 < model.rows
                   and cells[run_end][c].kind == "text"
                   and cells[run_end + 1][c].kind == "text"
                   and (run_end + 1) in inferred_row):
                run_end += 1
            if run_end > r:
                joined = " ".join(cells[k][c].text for k in range(r, run_end + 1)
                                  if cells[k][c].text)
                cells[r][c] = Cell.of_text(joined)
                for k in range(r + 1, run_end + 1):
                    cells[k][c] = Cell.extend(EXTEND_UP)
            r = run_end + 1
    return TableModel(rows=model.rows, cols=model.cols, cells=cells)


def load_proposals(path) -> dict[str, list[Region]]:
    """Read external region proposals: [{x_min, y_min, x_max, y_max, page}, ...]."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError("proposals file must hold a JSON array")
    out: dict[str, list[Region]] = {}
    for i, item in enumerate(data):
        try:
            region = Region(int(item["x_min"]), int(item["y_min"]),
                            int(item["x_max"]), int(item["y_max"]))
            out.setdefault(str(item["page"]), []).append(region)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"proposals entry {i} invalid: {exc}") from exc
    return out


def dump_regions(regions_by_page: dict[str, list[Region]]) -> str:
    items = []
    for page in sorted(regions_by_page):
        for r in sorted(regions_by_page[page]):
            items.append({"page": page, "x_min": r.x_min, "y_min": r.y_min,
                          "x_max": r.x_max, "y_max": r.y_max})
    return json.dumps(items, indent=2, sort_keys=True) + "\n"


def process_page(image_path, config: PipelineConfig,
                 proposals: list[Region] | None = None,
                 debug_dir=None) -> PageResult:
    """Full pipeline for one page image."""
    t_start = time.perf_counter()
    warnings: list[str] = []
    warn = warnings.append
    page = image_prep.load_image(image_path)
    regions, _ = detect_regions(page, config, warn=warn)
    if proposals:
        regions = region_detect.ensemble_union(regions, proposals)
    if config.refine_regions:
        refined = []
        for region in regions:
            tight = region_detect.refine_region_to_ink(page, region, config.ink_threshold)
            if tight is None:
                warn(f"dropped blank region {region}")
            else:
                refined.append(tight)
        regions = refined
    t_regions = time.perf_counter()

    classifier = make_classifier(config)
    ocr = make_ocr_client(config, image_path)
    tables: list[TableResult] = []
    for k, region in enumerate(sorted(regions), start=1):
        debug_sink = None
        if debug_dir is not None:
            stem = Path(image_path).stem
            debug_sink = functools.partial(_write_debug_images,
                                           Path(debug_dir), f"{stem}_table{k}")
        try:
            tables.append(extract_table(page, region, config, classifier, ocr,
                                        warn=warn, debug_sink=debug_sink))
        except (DegenerateInputError, cell_grid.DegenerateTableError) as exc:
            warn(f"skipped region {region}: {exc}")
    timings = {"regions_s": t_regions - t_start,
               "tables_s": time.perf_counter() - t_regions}
    return PageResult(regions=sorted(r.region for r in tables), tables=tables,
                      warnings=warnings, timings=timings)


def page_sidecar(result: PageResult, image_name: str, size: tuple[int, int],
                 include_timings: bool = False) -> str:
    """Deterministic JSON summary of one processed page."""
    doc = {
        "image": image_name,
        "width": size[0],
        "height": size[1],
        "regions": [{"x_min": r.x_min, "y_min": r.y_min,
                     "x_max": r.x_max, "y_max": r.y_max} for r in result.regions],
        "tables": [],
        "warnings": sorted(result.warnings),
    }
    for idx, table in enumerate(result.tables, start=1):
        cells = []
        for comp in table.resolution.components:
            x0, y0, x1, y1 = table.boxes[comp]
            cells.append({
                "row": comp.r0, "col": comp.c0,
                "row_span": comp.r1 - comp.r0 + 1, "col_span": comp.c1 - comp.c0 + 1,
                "box": {"x0": x0, "y0": y0, "x1": x1, "y1": y1},
                "occupied": bool(any(table.resolution.occupancy[r, c]
                                     for r, c in comp.cells())),
            })
        doc["tables"].append({
            "index": idx,
            "region": {"x_min": table.region.x_min, "y_min": table.region.y_min,
                       "x_max": table.region.x_max, "y_max": table.region.y_max},
            "rows": table.grid.rows, "cols": table.grid.cols,
            "cells": cells,
        })
    if include_timings:
        doc["timings"] = {k: round(v, 6) for k, v in result.timings.items()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_debug_images(out_dir: Path, stem: str, work, pooled, v_real, h_real,
                        finals, grid, resolution) -> None:
    """Emit the diagnostic overlays: gradient heatmap, lines, merged cells."""
    from PIL import Image

    out_dir.mkdir(parents=True, exist_ok=True)
    combined = np.maximum(pooled.d2x, pooled.d2y).astype(np.float64)
    peak = combined.max() or 1.0
    heat = (255 * combined / peak).astype(np.uint8)
    Image.fromarray(heat, mode="L").save(out_dir / f"{stem}_grad.png")

    base = np.stack([work] * 3, axis=-1)
    lines_img = base.copy()
    yellow, blue, green, red = (255, 220, 40), (30, 60, 200), (40, 180, 60), (220, 40, 40)
    for axis, final in finals.items():
        for coord, source in zip(final.coordinates, final.sources):
            if source != structure_lines.SOURCE_INFERRED:
                continue
            if axis is Orientation.VERTICAL:
                lines_img[:, coord] = yellow
            else:
                lines_img[coord, :] = yellow
    for line in v_real:
        lines_img[:, line.coordinate] = blue
    for line in h_real:
        lines_img[line.coordinate, :] = blue
    Image.fromarray(lines_img.astype(np.uint8), mode="RGB").save(
        out_dir / f"{stem}_lines.png")

    final_img = base.copy()
    for coord in finals[Orientation.VERTICAL].coordinates:
        final_img[:, coord] = green
    for coord in finals[Orientation.HORIZONTAL].coordinates:
        final_img[coord, :] = green
    for comp in resolution.components:
        if comp.r0 == comp.r1 and comp.c0 == comp.c1:
            continue
        x0, y0, x1, y1 = (grid.col_bounds[comp.c0], grid.row_bounds[comp.r0],
                          grid.col_bounds[comp.c1 + 1], grid.row_bounds[comp.r1 + 1])
        final_img[y0:y1 + 1, x0] = red
        final_img[y0:y1 + 1, x1] = red
        final_img[y0, x0:x1 + 1] = red
        final_img[y1, x0:x1 + 1] = red
    Image.fromarray(final_img.astype(np.uint8), mode="RGB").save(
        out_dir / f"{stem}_merged.png")
