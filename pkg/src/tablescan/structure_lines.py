"""Inferred separator lines and their fusion with real lines into a grid.

An inferred line is a coordinate whose full span is (mostly) free of data
pixels. Each coordinate gets a quality score: the fraction of the span not
covered by data. Validity starts at a threshold of 0.6 and the threshold is
raised in small steps for as long as the number of separable groups of valid
coordinates does not drop; this adapts the cut between sparse and dense
tables, splitting wide blank corridors around sparsely populated columns.

Valid coordinates are grouped, groups near a real line are discarded (the
real line is ground truth), and each surviving group contributes the single
coordinate with the best 5-wide simple moving average of quality scores.
Real lines, selected inferred lines and the two table borders merge into the
final structural lines per axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .line_detect import Orientation, RealLine
from .util import bool_runs, join_runs

SMA_RADIUS = 2  # moving-average window reaches 2 coordinates each way


@dataclass(frozen=True)
class QualityProfile:
    """Per-coordinate data-free fraction along one axis."""

    axis: Orientation
    scores: np.ndarray  # float64 in [0, 1]


@dataclass(frozen=True)
class InferredLineSet:
    axis: Orientation
    valid: np.ndarray  # boolean per coordinate
    threshold_final: float
    group_count: int
    initial_group_count: int  # groups at the starting threshold


@dataclass(frozen=True)
class LineGroup:
    """A contiguous interval of valid inferred-line coordinates."""

    start: int
    end: int  # exclusive
    members: np.ndarray  # the valid coordinates inside [start, end)

    @property
    def centroid(self) -> float:
        return float(np.mean(self.members))


# Per-coordinate provenance markers used by FinalLines.
SOURCE_BORDER = "border"
SOURCE_REAL = "real"
SOURCE_INFERRED = "inferred"


@dataclass(frozen=True)
class FinalLines:
    axis: Orientation
    coordinates: tuple[int, ...]  # strictly increasing, first 0, last span-1
    sources: tuple[str, ...]


def quality_profile(mask: np.ndarray, axis: Orientation) -> QualityProfile:
    """Fraction of each column (vertical axis) or row free of data pixels."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"expected non-empty 2-D mask, got shape {mask.shape}")
    if axis is Orientation.VERTICAL:
        covered = mask.mean(axis=0)
    else:
        covered = mask.mean(axis=1)
    return QualityProfile(axis=axis, scores=1.0 - covered)


def _count_groups(valid: np.ndarray) -> int:
    return len(bool_runs(valid))


def adaptive_inferred_lines(profile: QualityProfile, t0: float = 0.6,
                            delta: float = 0.02) -> InferredLineSet:
    """Raise the validity threshold while the group count keeps up.

    Starting at t0, coordinates scoring >= t are valid; the threshold rises by
    delta for as long as the number of maximal valid runs is >= the best seen,
    keeping the last accepted valid set. The loop stops when the count drops
    or t passes 1.0 (scores cannot exceed 1, so nothing is valid beyond it).

    threshold_final reports the earliest threshold that already achieved the
    returned group count; for tables whose group count never improves this is
    t0 itself.
    """
    if not (0 < delta <= 0.1):
        raise ValueError(f"delta must be in (0, 0.1], got {delta}")
    if not (0 < t0 < 1):
        raise ValueError(f"t0 must be in (0, 1), got {t0}")
    scores = profile.scores
    best = 0
    kept = np.zeros_like(scores, dtype=bool)
    first_at_best: float = t0
    initial_count: int | None = None
    k = 0
    while True:
        t = t0 + k * delta
        if t > 1.0 + 1e-9:
            break
        valid = scores >= t - 1e-12
        count = _count_groups(valid)
        if initial_count is None:
            initial_count = count
        if count < best:
            break
        if count > best:
            first_at_best = t
        best = count
        kept = valid
        k += 1
    return InferredLineSet(axis=profile.axis, valid=kept,
                           threshold_final=first_at_best,
                           group_count=best, initial_group_count=initial_count or 0)


def group_inferred(lines: InferredLineSet, join_gap: int = 2) -> list[LineGroup]:
    """Contiguous valid runs, joining runs separated by <= join_gap pixels."""
    runs = join_runs(bool_runs(lines.valid), join_gap)
    valid_idx = np.flatnonzero(lines.valid)
    return [LineGroup(start=a, end=b,
                      members=valid_idx[(valid_idx >= a) & (valid_idx < b)])
            for a, b in runs]


def suppress_near_real(groups: list[LineGroup], real: list[RealLine],
                       proximity: int = 5) -> list[LineGroup]:
    """Drop groups containing or within `proximity` pixels of a real line."""
    coords = [line.coordinate for line in real]
    return [g for g in groups
            if not any(g.start - proximity <= c <= g.end - 1 + proximity for c in coords)]


def sma_select(group: LineGroup, profile: QualityProfile) -> int:
    """Pick the group's best coordinate by 5-wide moving average of quality.

    Coordinates outside the group's valid members (including positions beyond
    the table) contribute a zero quality score to the window. Ties go to the
    coordinate nearest the group centroid, then to the smaller coordinate.
    """
    if group.members.size == 0:
        raise ValueError("cannot select from an empty group")
    scores = profile.scores
    member_set = set(group.members.tolist())

    def window_mean(c: int) -> float:
        total = 0.0
        for w in range(c - SMA_RADIUS, c + SMA_RADIUS + 1):
            if w in member_set:
                total += scores[w]
        return total / (2 * SMA_RADIUS + 1)

    centroid = group.centroid
    best_c, best_key = None, None
    for c in range(group.start, group.end):
        key = (-window_mean(c), abs(c - centroid), c)
        if best_key is None or key < best_key:
            best_c, best_key = c, key
    return int(best_c)


def finalize_lines(real: list[int], inferred: list[int], axis: Orientation,
                   span: int, min_cell: int = 8) -> FinalLines:
    """Merge real and inferred coordinates with the borders into final lines.

    Borders 0 and span-1 are always present. Candidates closer than min_cell
    to an already-accepted line are dropped; borders outrank real lines, real
    lines outrank inferred ones, and earlier (smaller) coordinates win within
    a class.
    """
    if span < 2:
        raise ValueError(f"span must be >= 2, got {span}")
    accepted: list[tuple[int, str]] = [(0, SOURCE_BORDER), (span - 1, SOURCE_BORDER)]
    candidates = [(c, SOURCE_REAL) for c in sorted(real)] + \
                 [(c, SOURCE_INFERRED) for c in sorted(inferred)]
    for c, source in candidates:
        if not 0 <= c <= span - 1:
            continue
        if all(abs(c - a) >= min_cell for a, _ in accepted):
            accepted.append((c, source))
    accepted.sort()
    coords, sources = zip(*accepted)
    return FinalLines(axis=axis, coordinates=coords, sources=sources)
