"""Table region detection: strip/band row search, column search, region ensemble.

The row stage asks a band scorer for 4 booleans per strip (one per 8-row band
of the strip's inner window), concatenates them page-wide, and groups positive
bands into row intervals. Each row interval, resampled to a 400x400 square, is
passed to a column scorer whose 400 per-column booleans are grouped the same
way. Row x column interval pairs are mapped back to original-image regions.

Scorers are pluggable stand-ins for learned detectors; the defaults are
deterministic ink-density tests. Externally supplied region proposals are
fused with the detected ones by a fixed-point bounding-box union that prefers
recall: overlapping regions merge, disjoint ones from either source are kept.

Known limitation, inherited by design: two side-by-side tables with very
different heights share one row interval, so the shorter table's region
includes extra area below it. The extractor tolerates the slack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .image_prep import Strip, ScaleMap, INNER_MARGIN, resize, as_gray_image
from .util import bool_runs, join_runs, ink_fraction, round_half_up

BAND_HEIGHT = 8
BANDS_PER_STRIP = 4
COLUMN_SQUARE = 400

# A scorer receives one Strip and returns 4 booleans, one per 8-row band of
# the strip's inner window. A column scorer receives a 400x400 raster and
# returns 400 booleans, one per column.
BandScorer = Callable[[Strip], Sequence[bool]]
ColumnScorer = Callable[[np.ndarray], Sequence[bool]]


class ScorerContractError(ValueError):
    """A pluggable scorer returned the wrong number of outputs."""


@dataclass(frozen=True, order=True)
class Region:
    """Axis-aligned table bounding box, inclusive, in original-image pixels."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate region {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def area(self) -> int:
        return self.width * self.height

    def overlaps(self, other: "Region") -> bool:
        """True when the two boxes share at least one pixel."""
        return (max(self.x_min, other.x_min) <= min(self.x_max, other.x_max)
                and max(self.y_min, other.y_min) <= min(self.y_max, other.y_max))

    def union(self, other: "Region") -> "Region":
        return Region(min(self.x_min, other.x_min), min(self.y_min, other.y_min),
                      max(self.x_max, other.x_max), max(self.y_max, other.y_max))


def _full_cover_lines(img: np.ndarray, axis: int, ink_threshold: int, cover: float) -> np.ndarray:
    """Boolean per row (axis=1) or column (axis=0) that is almost entirely ink."""
    dark = img < ink_threshold
    return dark.mean(axis=axis) >= cover


def default_band_scorer(strip: Strip, *, density_threshold: float = 0.005,
                        ink_threshold: int = 128, line_cover: float = 0.95) -> list[bool]:
    """Flag a band when its ink density exceeds the threshold (strictly) or a
    full-width dark line passes through it."""
    px = strip.pixels
    line_rows = _full_cover_lines(px, axis=1, ink_threshold=ink_threshold, cover=line_cover)
    flags = []
    for i in range(BANDS_PER_STRIP):
        lo = INNER_MARGIN + BAND_HEIGHT * i
        band = px[lo:lo + BAND_HEIGHT]
        hit = ink_fraction(band, ink_threshold) > density_threshold
        flags.append(bool(hit or line_rows[lo:lo + BAND_HEIGHT].any()))
    return flags


def default_column_scorer(image: np.ndarray, *, density_threshold: float = 0.01,
                          ink_threshold: int = 192, line_cover: float = 0.95) -> list[bool]:
    """Flag a resampled column when its ink density exceeds the threshold
    (strictly) or a full-height dark line passes through it.

    The ink cutoff is looser than elsewhere because squeezing a tall row group
    into the 400px square dilutes ink toward the background.
    """
    img = as_gray_image(image)
    if img.shape != (COLUMN_SQUARE, COLUMN_SQUARE):
        raise ScorerContractError(f"column scorer expects 400x400, got {img.shape}")
    dark = img < ink_threshold
    density = dark.mean(axis=0)
    line_cols = dark.mean(axis=0) >= line_cover
    return [bool(d > density_threshold or l) for d, l in zip(density, line_cols)]


def detect_row_bands(strips: Sequence[Strip], scorer: BandScorer,
                     content_rows: tuple[int, int] | None = None) -> list[bool]:
    """Concatenate per-strip band flags in strip order.

    content_rows, when given, is the padded-image row range [start, end) that
    holds actual page content; flags for bands entirely outside it are forced
    False (they cover padding or bottom extension).
    """
    flags: list[bool] = []
    for strip in strips:
        out = list(scorer(strip))
        if len(out) != BANDS_PER_STRIP:
            raise ScorerContractError(
                f"band scorer returned {len(out)} outputs, expected {BANDS_PER_STRIP}")
        flags.extend(bool(v) for v in out)
    if content_rows is not None:
        lo, hi = content_rows
        for k in range(len(flags)):
            band_lo = INNER_MARGIN + BAND_HEIGHT * k
            band_hi = band_lo + BAND_HEIGHT
            if band_hi <= lo or band_lo >= hi:
                flags[k] = False
    return flags


def group_rows(flags: Sequence[bool], band_height: int = BAND_HEIGHT,
               merge_gap: int = 1) -> list[tuple[int, int]]:
    """Group positive bands into padded-image row intervals [start, end).

    Runs of True separated by <= merge_gap False bands are joined. An empty
    result means no table was found on the page.
    """
    runs = join_runs(bool_runs(flags), merge_gap)
    return [(INNER_MARGIN + band_height * a, INNER_MARGIN + band_height * b)
            for a, b in runs]


def detect_columns(group_image: np.ndarray, scorer: ColumnScorer,
                   merge_gap: int = 16) -> list[tuple[int, int]]:
    """Column intervals [start, end) in 400-wide resampled coordinates.

    Columns are grouped like the rows: runs of positive columns joined across
    gaps of <= merge_gap. Multiple intervals mean side-by-side tables.
    """
    out = list(scorer(group_image))
    if len(out) != COLUMN_SQUARE:
        raise ScorerContractError(
            f"column scorer returned {len(out)} outputs, expected {COLUMN_SQUARE}")
    return join_runs(bool_runs(out), merge_gap)


def to_regions(row_intervals: Sequence[tuple[int, int]],
               column_intervals: Sequence[Sequence[tuple[int, int]]],
               scale: ScaleMap, working_width: int,
               original_size: tuple[int, int],
               crop_spans: Sequence[tuple[int, int]] | None = None,
               warn=None) -> list[Region]:
    """Map (row interval x column interval) pairs to original-image regions.

    Column intervals are in 400-wide resampled coordinates of each row-group
    crop; crop_spans gives each crop's (x offset, width) in working pixels and
    defaults to the full working width. Regions degenerate after clamping are
    dropped (optionally reported through `warn`).
    """
    orig_w, orig_h = original_size
    regions: list[Region] = []
    for idx, (y0, y1) in enumerate(row_intervals):
        x_off, crop_w = (crop_spans[idx] if crop_spans is not None else (0, working_width))
        factor = crop_w / COLUMN_SQUARE
        for c0, c1 in column_intervals[idx]:
            wx0 = x_off + c0 * factor
            wx1 = x_off + c1 * factor  # c1 is exclusive
            ox0 = round_half_up(scale.to_original_x(wx0))
            ox1 = round_half_up(scale.to_original_x(wx1)) - 1
            oy0 = round_half_up(scale.to_original_y(y0))
            oy1 = round_half_up(scale.to_original_y(y1)) - 1
            ox0, ox1 = max(0, ox0), min(orig_w - 1, ox1)
            oy0, oy1 = max(0, oy0), min(orig_h - 1, oy1)
            if ox0 > ox1 or oy0 > oy1:
                if warn is not None:
                    warn(f"dropped degenerate region row={y0}:{y1} col={c0}:{c1}")
                continue
            regions.append(Region(ox0, oy0, ox1, oy1))
    return regions


def ensemble_union(primary: Sequence[Region], proposals: Sequence[Region]) -> list[Region]:
    """Fuse two region sets by fixed-point bounding-box union.

    While any two regions in the pool share a pixel, they are replaced by
    their bounding-box union; non-overlapping regions from both sources
    survive unchanged. The result is pairwise non-overlapping and contains
    every input region.
    """
    pool = list(primary) + list(proposals)
    changed = True
    while changed:
        changed = False
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                if pool[i].overlaps(pool[j]):
                    merged = pool[i].union(pool[j])
                    pool = [r for k, r in enumerate(pool) if k not in (i, j)]
                    pool.append(merged)
                    changed = True
                    break
            if changed:
                break
    return sorted(pool)


def refine_region_to_ink(page: np.ndarray, region: Region,
                         ink_threshold: int = 128) -> Region | None:
    """Shrink a region to the bounding box of its ink, or None when blank.

    The stand-in scorers propose at band/column granularity, which leaves
    white margins around the table; trimming them keeps downstream cell
    geometry independent of that granularity.
    """
    crop = page[region.y_min:region.y_max + 1, region.x_min:region.x_max + 1]
    dark = crop < ink_threshold
    if not dark.any():
        return None
    rows = np.flatnonzero(dark.any(axis=1))
    cols = np.flatnonzero(dark.any(axis=0))
    return Region(region.x_min + int(cols[0]), region.y_min + int(rows[0]),
                  region.x_min + int(cols[-1]), region.y_min + int(rows[-1]))
