"""Visible ("real") ruling-line detection from second-derivative gradients.

A ruling line shows up as a ridge of high second derivative perpendicular to
the line, with near-constant intensity along it. The search therefore scans,
for vertical lines, columns of the 3x3-maxpooled d2x field for long contiguous
segments of high values, then requires the candidate column's raw d2y values
to be mutually similar (low coefficient of variation). The pooled field
absorbs noise and 1-pixel breaks at crossings; the raw parallel derivative is
used for the similarity test because pooling smears crossing-line ridges into
it, which would make genuine grid lines look dissimilar to themselves.

Accepted neighbor columns (a thick or antialiased line fires several) are
deduplicated to their centroid, and each surviving line is extended to the
full table span.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import binary_closing, maximum_filter

from .image_prep import as_gray_image, DegenerateInputError
from .util import bool_runs, round_half_up


class Orientation(str, Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"


@dataclass(frozen=True)
class GradientField:
    """Per-pixel |d2/dx2| and |d2/dy2| magnitudes of a grayscale crop."""

    d2x: np.ndarray
    d2y: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.d2x.shape


@dataclass(frozen=True)
class RealLine:
    """A detected ruling line, extended to the full table span."""

    orientation: Orientation
    coordinate: int
    source_span: tuple[int, int]  # detected segment [start, end) before extension


def second_derivatives(crop: np.ndarray) -> GradientField:
    """Absolute discrete second differences in x and y, replicated edges.

    d2x[y, x] = |f(x-1, y) - 2 f(x, y) + f(x+1, y)|, and analogously for d2y.
    """
    crop = as_gray_image(crop)
    h, w = crop.shape
    if h < 3 or w < 3:
        raise DegenerateInputError(f"crop {w}x{h} too small for gradients (need 3x3)")
    f = crop.astype(np.int32)
    px = np.pad(f, ((0, 0), (1, 1)), mode="edge")
    py = np.pad(f, ((1, 1), (0, 0)), mode="edge")
    d2x = np.abs(px[:, :-2] - 2 * f + px[:, 2:])
    d2y = np.abs(py[:-2, :] - 2 * f + py[2:, :])
    return GradientField(d2x=d2x, d2y=d2y)


def maxpool_3x3_stride1(field: GradientField) -> GradientField:
    """3x3 stride-1 max pooling of both fields, replicated edges, same size."""
    return GradientField(
        d2x=maximum_filter(field.d2x, size=3, mode="nearest"),
        d2y=maximum_filter(field.d2y, size=3, mode="nearest"),
    )


_SIM_FLOOR = 8.0  # absolute magnitude below which variation reads as noise


def _coefficient_of_variation(values: np.ndarray) -> float:
    mean = float(values.mean())
    # Dividing by a floored mean keeps near-zero segments (a line is flat
    # along itself, so its parallel derivative is tiny) from exploding the
    # ratio on harmless single-digit noise.
    return float(values.std()) / max(mean, _SIM_FLOOR)


def find_real_lines(pooled: GradientField, orientation: Orientation,
                    raw: GradientField | None = None,
                    crop: np.ndarray | None = None, *,
                    quantile: float = 0.99, rel_cap: float = 0.2,
                    seg_frac: float = 0.2, sim_cv: float = 0.5,
                    line_contrast: float = 64.0,
                    dedup_gap: int = 2) -> list[RealLine]:
    """Search the pooled field for ruling lines of the given orientation.

    A column (row) is accepted when it contains a contiguous segment, at least
    seg_frac of the span long, of pooled perpendicular-derivative values at or
    above the high threshold, and the segment's parallel-derivative values
    have coefficient of variation <= sim_cv. `raw` supplies the unpooled
    parallel derivatives for that test; without it the pooled ones are used.

    The high threshold is the field's `quantile`, capped at rel_cap times the
    field maximum: sharp glyph edges can push the upper percentiles past the
    magnitude an honest 2-3 pixel ruling produces, and the cap keeps such
    rulings reachable. Candidates the threshold lets through are still gated
    by the segment-length and similarity tests.

    When `crop` (the source intensities) is given, the segment must also
    contrast with the crop's background by line_contrast on average: the white
    border row of a text blob has line-like gradients and perfectly uniform
    parallel derivatives, but an actual line is made of ink.
    """
    if orientation is Orientation.VERTICAL:
        primary = pooled.d2x
        parallel = (raw or pooled).d2y
        intensity = crop if crop is None else np.asarray(crop)
    else:
        primary = pooled.d2y.T
        parallel = (raw or pooled).d2x.T
        intensity = crop if crop is None else np.asarray(crop).T
    span, n_coords = primary.shape
    threshold = max(min(float(np.quantile(primary, quantile)),
                        rel_cap * float(primary.max())), 1.0)
    seg_len = max(1, int(np.ceil(seg_frac * span)))
    background = float(np.median(crop)) if crop is not None else 255.0

    high = primary >= threshold
    candidates = np.flatnonzero(high.sum(axis=0) >= seg_len)
    accepted: list[tuple[int, tuple[int, int]]] = []
    for c in candidates:
        best_span = None
        for a, b in bool_runs(high[:, c]):
            if b - a < seg_len:
                continue
            if _coefficient_of_variation(parallel[a:b, c].astype(np.float64)) > sim_cv:
                continue
            if intensity is not None:
                seg = intensity[a:b, c].astype(np.float64)
                if float(np.mean(np.abs(seg - background))) < line_contrast:
                    continue
            if best_span is None or (b - a) > (best_span[1] - best_span[0]):
                best_span = (a, b)
        if best_span is not None:
            accepted.append((int(c), best_span))

    lines: list[RealLine] = []
    for group in _group_coords(accepted, dedup_gap):
        coords = [c for c, _ in group]
        centroid = round_half_up(float(np.mean(coords)))
        rep_span = max((s for _, s in group), key=lambda s: s[1] - s[0])
        lines.append(RealLine(orientation=orientation, coordinate=centroid,
                              source_span=rep_span))
    return lines


def _group_coords(accepted, gap):
    groups = []
    for item in accepted:
        if groups and item[0] - groups[-1][-1][0] <= gap:
            groups[-1].append(item)
        else:
            groups.append([item])
    return groups


def build_data_mask(crop: np.ndarray, lines: list[RealLine], *,
                    ink_threshold: int = 128, line_excl: int = 2) -> np.ndarray:
    """Boolean raster of content pixels: dark and away from every real line.

    A pixel is data iff its intensity is below ink_threshold and it lies more
    than line_excl pixels from every real line's coordinate (columns for
    vertical lines, rows for horizontal ones).
    """
    crop = as_gray_image(crop)
    mask = crop < ink_threshold
    h, w = crop.shape
    for line in lines:
        c = line.coordinate
        lo, hi = max(0, c - line_excl), c + line_excl + 1
        if line.orientation is Orientation.VERTICAL:
            mask[:, lo:min(hi, w)] = False
        else:
            mask[lo:min(hi, h), :] = False
    return mask


def close_mask(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Morphologically close the data mask so words read as solid blobs.

    Glyph ink is pixel-sparse (strokes with gaps), which makes lines "through"
    a word look almost as clean as true corridors; closing restores the
    piece-of-data granularity the inferred-line scores assume. radius=0 is a
    no-op.
    """
    if radius <= 0:
        return mask
    size = 2 * radius + 1
    # Edge-pad before closing: with the default zero border, erosion would eat
    # ink that touches the mask boundary.
    pad = 2 * radius
    padded = np.pad(mask, pad, mode="edge")
    closed = binary_closing(padded, structure=np.ones((size, size), dtype=bool))
    return closed[pad:-pad, pad:-pad]
