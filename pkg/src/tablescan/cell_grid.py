"""Cell lattice construction, pair classification and merge resolution.

The final lines define a regular lattice; cells that the lattice sliced
improperly are stitched back together by a classifier working on a fixed
200x100 view: the two adjacent cells, each resampled to 100x100 on its own so
the shared boundary always sits at the center seam, composed left/right in
reading order (vertically adjacent pairs are rotated first so the boundary is
vertical). The classifier answers three reals in [0, 1]: left has data, right
has data, the pair should merge.

The reference learned classifier for this contract is a three-branch network
over the view (a 3x3/16-filter conv stack; a 1x100 average-pool followed by
1-D convolutions; a 64-filter stack on the centermost 20x100 crop) joined by
dense layers into the 3 outputs. Training data for it is not bundled; the
default plug is a deterministic ink test honoring the same contract, and any
external program speaking the subprocess protocol (PNG of the view on stdin,
three reals on stdout) can replace it.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from io import BytesIO
from typing import Callable, Iterable

import numpy as np
from PIL import Image
from scipy import ndimage

from .image_prep import ScaleMap, as_gray_image, resize
from .line_detect import Orientation
from .region_detect import Region
from .structure_lines import FinalLines
from .util import ink_fraction, round_half_up

CELL_SIDE = 100
VIEW_W, VIEW_H = 200, 100
CENTER_BAND_W = 20

# view -> (left_has_data, right_has_data, should_merge), each in [0, 1]
MergeClassifier = Callable[[np.ndarray], tuple[float, float, float]]


class ClassifierContractError(ValueError):
    """A merge-classifier plug violated its I/O contract."""


class DegenerateTableError(ValueError):
    """A table collapsed to fewer than one cell."""


@dataclass(frozen=True)
class CellGrid:
    row_bounds: tuple[int, ...]
    col_bounds: tuple[int, ...]

    @property
    def rows(self) -> int:
        return len(self.row_bounds) - 1

    @property
    def cols(self) -> int:
        return len(self.col_bounds) - 1

    def cell_box(self, r: int, c: int) -> tuple[int, int, int, int]:
        """Inclusive working-crop pixel box (x0, y0, x1, y1) of cell (r, c)."""
        return (self.col_bounds[c], self.row_bounds[r],
                self.col_bounds[c + 1], self.row_bounds[r + 1])


@dataclass(frozen=True, order=True)
class Component:
    """A merged rectangular block of grid cells; the top-left cell anchors it."""

    r0: int
    c0: int
    r1: int
    c1: int  # inclusive

    @property
    def anchor(self) -> tuple[int, int]:
        return (self.r0, self.c0)

    def cells(self) -> Iterable[tuple[int, int]]:
        for r in range(self.r0, self.r1 + 1):
            for c in range(self.c0, self.c1 + 1):
                yield (r, c)


@dataclass(frozen=True)
class MergeResolution:
    occupancy: np.ndarray  # bool per cell
    merge_right: np.ndarray  # bool per (r, c), last column unused
    merge_down: np.ndarray  # bool per (r, c), last row unused
    components: tuple[Component, ...]


def build_grid(vertical: FinalLines, horizontal: FinalLines) -> CellGrid:
    """Lattice from the two axes' final lines; no filtering."""
    if len(vertical.coordinates) < 2 or len(horizontal.coordinates) < 2:
        raise DegenerateTableError("need at least 2 boundary coordinates per axis")
    return CellGrid(row_bounds=tuple(horizontal.coordinates),
                    col_bounds=tuple(vertical.coordinates))


def _cell_crop(crop: np.ndarray, grid: CellGrid, r: int, c: int) -> np.ndarray:
    x0, y0, x1, y1 = grid.cell_box(r, c)
    return crop[y0:y1 + 1, x0:x1 + 1]


def prepare_pair(crop: np.ndarray, grid: CellGrid, a: tuple[int, int],
                 b: tuple[int, int]) -> np.ndarray:
    """Compose the 200x100 classifier view for two adjacent cells.

    Each cell is resampled to 100x100 independently, which puts the shared
    boundary exactly at the central seam. Vertically adjacent pairs are
    rotated a quarter turn counterclockwise first, so the boundary-adjacent
    edges of both cells meet at the seam and `a` (the reading-order first
    cell) is always the left tile.
    """
    crop = as_gray_image(crop)
    (ra, ca), (rb, cb) = a, b
    if (ra, ca) == (rb, cb):
        raise ValueError("cells must differ")
    if ra == rb and cb == ca + 1:
        rotate = False
    elif ca == cb and rb == ra + 1:
        rotate = True
    else:
        raise ValueError(f"cells {a} and {b} are not adjacent in reading order")
    tiles = []
    for r, c in (a, b):
        tile = resize(_cell_crop(crop, grid, r, c), CELL_SIDE, CELL_SIDE)
        if rotate:
            tile = np.rot90(tile, 1)
        tiles.append(tile)
    return np.hstack(tiles)


def default_merge_classifier(view: np.ndarray, *, empty_eps: float = 0.002,
                             ink_threshold: int = 128, seam_margin: int = 5,
                             interior_margin: int = 8) -> tuple[float, float, float]:
    """Deterministic ink-based stand-in for a learned pair classifier.

    A half "has data" when the ink fraction of its interior (a frame of
    interior_margin pixels is ignored, so boundary rulings do not count as
    content) exceeds empty_eps. The pair "should merge" when, inside the
    centermost 20x100 band, one connected ink component reaches more than
    seam_margin pixels past the seam on both sides; the margin keeps a ruling
    line sitting on the seam from reading as content that bridges it.
    """
    view = as_gray_image(view)
    if view.shape != (VIEW_H, VIEW_W):
        raise ClassifierContractError(f"expected {VIEW_W}x{VIEW_H} view, got {view.shape}")
    m = interior_margin
    left_data = ink_fraction(view[m:VIEW_H - m, m:CELL_SIDE - m], ink_threshold) > empty_eps
    right_data = ink_fraction(view[m:VIEW_H - m, CELL_SIDE + m:VIEW_W - m], ink_threshold) > empty_eps

    band_lo = CELL_SIDE - CENTER_BAND_W // 2
    band = view[:, band_lo:band_lo + CENTER_BAND_W] < ink_threshold
    merge = False
    labels, count = ndimage.label(band, structure=np.ones((3, 3), dtype=int))
    seam_in_band = CENTER_BAND_W // 2  # first column right of the seam
    for lbl in range(1, count + 1):
        cols = np.flatnonzero((labels == lbl).any(axis=0))
        if cols[0] <= seam_in_band - 1 - seam_margin and cols[-1] >= seam_in_band + seam_margin:
            merge = True
            break
    return (1.0 if left_data else 0.0, 1.0 if right_data else 0.0, 1.0 if merge else 0.0)


class CommandMergeClassifier:
    """External classifier plug: PNG view on stdin, three reals on stdout."""

    def __init__(self, command: str):
        self.argv = shlex.split(command)

    def __call__(self, view: np.ndarray) -> tuple[float, float, float]:
        view = as_gray_image(view)
        if view.shape != (VIEW_H, VIEW_W):
            raise ClassifierContractError(f"expected {VIEW_W}x{VIEW_H} view, got {view.shape}")
        buf = BytesIO()
        Image.fromarray(view, mode="L").save(buf, format="PNG")
        proc = subprocess.run(self.argv, input=buf.getvalue(),
                              stdout=subprocess.PIPE, check=True)
        parts = proc.stdout.decode("utf-8").split()
        if len(parts) != 3:
            raise ClassifierContractError(
                f"classifier command returned {len(parts)} values, expected 3")
        out = tuple(float(p) for p in parts)
        if not all(0.0 <= v <= 1.0 for v in out):
            raise ClassifierContractError(f"classifier outputs outside [0, 1]: {out}")
        return out


@dataclass(frozen=True)
class PairDecision:
    a: tuple[int, int]
    b: tuple[int, int]
    left_data: float
    right_data: float
    merge: float


def classify_pairs(crop: np.ndarray, grid: CellGrid,
                   classifier: MergeClassifier) -> list[PairDecision]:
    """Run the classifier over all horizontal pairs, then all vertical pairs."""
    decisions = []
    for r in range(grid.rows):
        for c in range(grid.cols - 1):
            view = prepare_pair(crop, grid, (r, c), (r, c + 1))
            decisions.append(PairDecision((r, c), (r, c + 1), *classifier(view)))
    for r in range(grid.rows - 1):
        for c in range(grid.cols):
            view = prepare_pair(crop, grid, (r, c), (r + 1, c))
            decisions.append(PairDecision((r, c), (r + 1, c), *classifier(view)))
    return decisions


def resolve_merges(grid: CellGrid, decisions: list[PairDecision],
                   merge_threshold: float = 0.5,
                   occupancy_fallback: Callable[[tuple[int, int]], bool] | None = None,
                   warn=None) -> MergeResolution:
    """Turn pairwise decisions into disjoint rectangular merged components.

    Cells connected through merge decisions (>= merge_threshold) form
    components; each component is expanded to its bounding rectangle of grid
    cells, re-merging anything the expansion swallows, until the partition is
    stable. A cell is occupied when any classifier vote marked its half as
    having data; cells that received no votes at all (a 1x1 grid) fall back to
    occupancy_fallback. Vertical merges happen only where the classifier
    fired; stacked text lines are left as separate cells.
    """
    rows, cols = grid.rows, grid.cols
    occupancy = np.zeros((rows, cols), dtype=bool)
    voted = np.zeros((rows, cols), dtype=bool)
    merge_right = np.zeros((rows, cols), dtype=bool)
    merge_down = np.zeros((rows, cols), dtype=bool)

    for d in decisions:
        for cell, has_data in ((d.a, d.left_data), (d.b, d.right_data)):
            voted[cell] = True
            if has_data >= 0.5:
                occupancy[cell] = True
        if d.merge >= merge_threshold:
            (ra, ca), (rb, cb) = d.a, d.b
            if ra == rb:
                merge_right[ra, min(ca, cb)] = True
            else:
                merge_down[min(ra, rb), ca] = True

    if occupancy_fallback is not None:
        for r in range(rows):
            for c in range(cols):
                if not voted[r, c]:
                    occupancy[r, c] = occupancy_fallback((r, c))

    parent = {(r, c): (r, c) for r in range(rows) for c in range(cols)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols and merge_right[r, c]:
                union((r, c), (r, c + 1))
            if r + 1 < rows and merge_down[r, c]:
                union((r, c), (r + 1, c))

    # Rectangularize to a fixed point: a component's bounding rectangle may
    # swallow cells of another component, which forces a further union.
    changed = True
    expanded_any = False
    while changed:
        changed = False
        blocks: dict[tuple[int, int], list[int]] = {}
        for r in range(rows):
            for c in range(cols):
                root = find((r, c))
                box = blocks.setdefault(root, [r, c, r, c])
                box[0], box[1] = min(box[0], r), min(box[1], c)
                box[2], box[3] = max(box[2], r), max(box[3], c)
        for root, (r0, c0, r1, c1) in blocks.items():
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    if find((r, c)) != root:
                        union((r, c), root)
                        changed = True
                        expanded_any = True
    if expanded_any and warn is not None:
        warn("non-rectangular merge component expanded to its bounding rectangle")

    blocks = {}
    for r in range(rows):
        for c in range(cols):
            root = find((r, c))
            box = blocks.setdefault(root, [r, c, r, c])
            box[0], box[1] = min(box[0], r), min(box[1], c)
            box[2], box[3] = max(box[2], r), max(box[3], c)
    components = tuple(sorted(Component(r0, c0, r1, c1)
                              for r0, c0, r1, c1 in blocks.values()))
    return MergeResolution(occupancy=occupancy, merge_right=merge_right,
                           merge_down=merge_down, components=components)


def scale_cells_to_original(resolution: MergeResolution, grid: CellGrid,
                            scale: ScaleMap, region: Region,
                            original_size: tuple[int, int]) -> dict[Component, tuple[int, int, int, int]]:
    """Map each component's working-crop box to original-image pixels.

    Boxes go through the crop's inverse ScaleMap, are offset by the region's
    origin, and are clamped to the region (hence the original image).
    """
    orig_w, orig_h = original_size
    boxes = {}
    for comp in resolution.components:
        x0 = grid.col_bounds[comp.c0]
        x1 = grid.col_bounds[comp.c1 + 1]
        y0 = grid.row_bounds[comp.r0]
        y1 = grid.row_bounds[comp.r1 + 1]
        ox0 = region.x_min + round_half_up(scale.to_original_x(x0))
        ox1 = region.x_min + round_half_up(scale.to_original_x(x1))
        oy0 = region.y_min + round_half_up(scale.to_original_y(y0))
        oy1 = region.y_min + round_half_up(scale.to_original_y(y1))
        ox0 = min(max(ox0, region.x_min), region.x_max)
        ox1 = min(max(ox1, region.x_min), min(region.x_max, orig_w - 1))
        oy0 = min(max(oy0, region.y_min), region.y_max)
        oy1 = min(max(oy1, region.y_min), min(region.y_max, orig_h - 1))
        boxes[comp] = (ox0, oy0, ox1, oy1)
    return boxes
