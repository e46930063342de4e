"""Deterministic synthetic table renderer with exact ground truth.

Renders axis-aligned tables (optionally ruled, optionally containing a
column-spanning cell or a sparse column) with known cell boundaries, a fixed
lexicon, and a record of every drawn text blob's pixel box. The same seed
always produces byte-identical images, which makes the generator usable as an
oracle for structure recovery, merging, OCR dispatch and metric tests.

Text is drawn in multiple 1-pixel x offsets ("bolding"): this closes the tiny
inter-letter gaps of the default font so a word reads as one connected ink
component. Column-spanning text gets an extra offset pass and is centered on
the internal boundary it is meant to straddle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .evaluation import GTCell, GroundTruthTable
from .region_detect import Region

LEXICON = (
    "Grade Type Total Rate Unit Name Code Item Size Cost Year Page Node Temp "
    "Volt Watt Mean Peak Flow Mass Area Load Gain Bias Step Rank Tier Slot "
    "alpha beta gamma delta sigma omega theta kappa"
).split()
NUMBERS = ["0.5", "1.2", "3.14", "7", "12", "42", "88", "105", "256", "512",
           "640", "1024", "2.7", "9.81", "60", "75.5"]

_FONT_CACHE: dict[int, ImageFont.FreeTypeFont] = {}
_WORD_CACHE: dict[tuple[str, tuple[int, ...], int], np.ndarray] = {}


def _font(size: int):
    if size not in _FONT_CACHE:
        _FONT_CACHE[size] = ImageFont.load_default(size=size)
    return _FONT_CACHE[size]


def render_word(text: str, offsets: tuple[int, ...] = (0, 1), size: int = 14) -> np.ndarray:
    """Tight grayscale tile of `text` drawn at every x offset in `offsets`."""
    key = (text, offsets, size)
    tile = _WORD_CACHE.get(key)
    if tile is None:
        font = _font(size)
        x0, y0, x1, y1 = font.getbbox(text)
        w = (x1 - x0) + max(offsets) + 8
        h = (y1 - y0) + 8
        img = Image.new("L", (w, h), 255)
        draw = ImageDraw.Draw(img)
        for dx in offsets:
            draw.text((4 - x0 + dx, 4 - y0), text, font=font, fill=0)
        arr = np.asarray(img)
        ys, xs = np.nonzero(arr < 255)
        tile = arr[ys.min():ys.max() + 1, xs.min():xs.max() + 1].copy()
        _WORD_CACHE[key] = tile
    return tile


def _paste(canvas: np.ndarray, tile: np.ndarray, x: int, y: int) -> tuple[int, int, int, int]:
    h, w = tile.shape
    canvas[y:y + h, x:x + w] = np.minimum(canvas[y:y + h, x:x + w], tile)
    return (x, y, x + w - 1, y + h - 1)


@dataclass(frozen=True)
class TextBox:
    x0: int
    y0: int
    x1: int
    y1: int
    text: str

    def shifted(self, dx: int, dy: int) -> "TextBox":
        return TextBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy, self.text)


@dataclass
class SyntheticTable:
    """A rendered table crop plus everything needed to judge recovery."""

    image: np.ndarray
    cells: list[GTCell]
    text_boxes: list[TextBox]
    x_bounds: list[int]  # logical column boundaries, 0 .. width-1 inclusive ends
    y_bounds: list[int]
    ruled: bool
    thickness: int

    @property
    def rows(self) -> int:
        return len(self.y_bounds) - 1

    @property
    def cols(self) -> int:
        return len(self.x_bounds) - 1


def _draw_vline(img: np.ndarray, x: int, y0: int, y1: int, t: int) -> None:
    lo = max(0, x - t // 2)
    img[y0:y1 + 1, lo:min(lo + t, img.shape[1])] = 0


def _draw_hline(img: np.ndarray, y: int, x0: int, x1: int, t: int) -> None:
    lo = max(0, y - t // 2)
    img[lo:min(lo + t, img.shape[0]), x0:x1 + 1] = 0


def generate_synthetic(seed: int, rows: int, cols: int, *, ruled: bool = False,
                       density: float = 1.0, spans: bool = False,
                       sparse_col: int | None = None,
                       col_width_range: tuple[int, int] = (80, 150),
                       row_pitch_range: tuple[int, int] = (40, 60),
                       thickness_choices: tuple[int, ...] = (1, 2, 3),
                       font_size: int = 14) -> SyntheticTable:
    """Render one table crop deterministically from `seed`.

    density is the fill probability per cell; column 0 is always filled so no
    row is completely blank. sparse_col marks one column that receives exactly
    one filled cell regardless of density (the adaptive-threshold fixture).
    spans=True places one 2-column spanning cell whose text crosses the
    internal boundary.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be within [0, 1]")
    rng = random.Random(seed)
    thickness = rng.choice(list(thickness_choices))
    col_widths = [rng.randint(*col_width_range) for _ in range(cols)]
    row_pitches = [rng.randint(*row_pitch_range) for _ in range(rows)]
    # Real tables align cell content within a column; without that, column
    # boundaries are genuinely unrecoverable from content positions.
    alignments = [rng.choice(("left", "left", "center")) for _ in range(cols)]
    numeric_cols = [c > 0 and rng.random() < 0.3 for c in range(cols)]
    x_bounds = [0]
    for w in col_widths:
        x_bounds.append(x_bounds[-1] + w)
    y_bounds = [0]
    for p in row_pitches:
        y_bounds.append(y_bounds[-1] + p)
    width, height = x_bounds[-1] + 1, y_bounds[-1] + 1
    img = np.full((height, width), 255, dtype=np.uint8)

    span_cell: tuple[int, int] | None = None
    if spans and cols >= 2:
        span_cell = (rng.randrange(rows), rng.randrange(cols - 1))
    sparse_filled_row = rng.randrange(rows) if sparse_col is not None else None

    if ruled:
        for y in y_bounds:
            _draw_hline(img, min(y, height - 1), 0, width - 1, thickness)
        for i, x in enumerate(x_bounds):
            x = min(x, width - 1)
            if span_cell is not None and i == span_cell[1] + 1:
                # interior boundary hidden by the spanning cell: draw around it
                r = span_cell[0]
                if r > 0:
                    _draw_vline(img, x, 0, y_bounds[r], thickness)
                if r < rows - 1:
                    _draw_vline(img, x, y_bounds[r + 1], height - 1, thickness)
            else:
                _draw_vline(img, x, 0, height - 1, thickness)

    pad_x = rng.randint(6, 10) + (thickness if ruled else 0)
    cells: list[GTCell] = []
    text_boxes: list[TextBox] = []
    skip: set[tuple[int, int]] = set()
    if span_cell is not None:
        skip.add((span_cell[0], span_cell[1] + 1))

    for r in range(rows):
        for c in range(cols):
            if (r, c) in skip:
                continue
            if span_cell is not None and (r, c) == span_cell:
                _place_span_text(img, rng, x_bounds, y_bounds, r, c, pad_x,
                                 font_size, cells, text_boxes)
                continue
            if sparse_col is not None and c == sparse_col:
                filled = r == sparse_filled_row
            elif c == 0:
                filled = density > 0.0
            else:
                filled = rng.random() < density
            if not filled:
                continue
            _place_cell_text(img, rng, x_bounds, y_bounds, r, c, pad_x,
                             font_size, cells, text_boxes,
                             align=alignments[c], numeric=numeric_cols[c],
                             short=(sparse_col is not None and c == sparse_col))
    return SyntheticTable(image=img, cells=cells, text_boxes=text_boxes,
                          x_bounds=x_bounds, y_bounds=y_bounds,
                          ruled=ruled, thickness=thickness)


def _pick_word(rng: random.Random, max_width: int, font_size: int,
               offsets=(0, 1), numeric: bool = False,
               min_frac: float = 0.0) -> tuple[str, np.ndarray] | None:
    """A lexicon token fitting max_width, preferring one at least min_frac of it."""
    fallback = None
    for _ in range(10):
        word = rng.choice(NUMBERS) if numeric else rng.choice(LEXICON)
        tile = render_word(word, offsets=offsets, size=font_size)
        if tile.shape[1] > max_width:
            continue
        if tile.shape[1] >= min_frac * max_width:
            return word, tile
        if fallback is None:
            fallback = (word, tile)
    if fallback is not None:
        return fallback
    word = rng.choice(NUMBERS[:4])
    tile = render_word(word, offsets=offsets, size=font_size)
    return (word, tile) if tile.shape[1] <= max_width else None


def _place_cell_text(img, rng, x_bounds, y_bounds, r, c, pad_x, font_size,
                     cells, text_boxes, align: str = "left",
                     numeric: bool = False, short: bool = False) -> None:
    inner_x0 = x_bounds[c] + pad_x
    inner_x1 = x_bounds[c + 1] - pad_x
    avail = inner_x1 - inner_x0 + 1
    picked = _pick_word(rng, avail, font_size, numeric=numeric,
                        min_frac=0.0 if (short or numeric) else 0.4)
    if picked is None:
        return
    word, tile = picked
    th, tw = tile.shape
    if align == "center":
        x = inner_x0 + (avail - tw) // 2 + rng.randint(-2, 2)
    else:
        x = inner_x0 + rng.randint(0, 3)
    x = min(max(x, inner_x0), inner_x1 - tw + 1)
    pitch = y_bounds[r + 1] - y_bounds[r]
    y = y_bounds[r] + max(2, (pitch - th) // 2)
    box = _paste(img, tile, x, y)
    cells.append(GTCell(row=r, col=c, text=word))
    text_boxes.append(TextBox(*box, text=word))


def _place_span_text(img, rng, x_bounds, y_bounds, r, c, pad_x, font_size,
                     cells, text_boxes) -> None:
    """Text for a 2-column spanning cell, centered on the hidden boundary."""
    boundary = x_bounds[c + 1]
    inner_x0 = x_bounds[c] + pad_x
    inner_x1 = x_bounds[c + 2] - pad_x
    avail = inner_x1 - inner_x0 + 1
    w1, w2 = rng.choice(LEXICON), rng.choice(LEXICON)
    token, tile = None, None
    for candidate in (f"{w1}-{w2}", f"{w1}-{rng.choice(NUMBERS)}", f"{w1}-7", "Sub-7"):
        t = render_word(candidate, offsets=(0, 1, 2, 3), size=font_size)
        if t.shape[1] <= avail:
            token, tile = candidate, t
            break
    if tile is None:
        token = "A-7"
        tile = render_word(token, offsets=(0, 1, 2, 3), size=font_size)
    th, tw = tile.shape
    x = min(max(boundary - tw // 2, inner_x0), inner_x1 - tw + 1)
    pitch = y_bounds[r + 1] - y_bounds[r]
    y = y_bounds[r] + max(2, (pitch - th) // 2)
    box = _paste(img, tile, x, y)
    cells.append(GTCell(row=r, col=c, col_span=2, text=token))
    text_boxes.append(TextBox(*box, text=token))


@dataclass
class SyntheticPage:
    """A page image holding one synthetic table, with page-coordinate truth."""

    image: np.ndarray
    truth: GroundTruthTable
    text_boxes: list[TextBox]
    table: SyntheticTable


def generate_page(seed: int, *, kind: str = "mixed",
                  page_width_range: tuple[int, int] = (900, 1200),
                  font_size: int = 14) -> SyntheticPage:
    """Render a full page around one table whose geometry suits its width.

    kind selects the table preset: "ruled", "unruled", "span" (unruled with a
    2-column spanning cell), "sparse" (sparse middle column), or "mixed"
    (seeded choice among the first two). Row pitches are capped so that with
    the page shrunk to the 800-pixel working width, inter-row whitespace stays
    within one 8-row detection band.
    """
    rng = random.Random(seed)
    page_w = rng.randint(*page_width_range)
    if kind == "mixed":
        kind = rng.choice(["ruled", "unruled"])

    gap_cap = max(12, int(15 * page_w / 800) - 1)
    if kind == "ruled":
        pitch_lo, pitch_hi = 30, 13 + min(2 * gap_cap, 38)
        table = generate_synthetic(rng.randrange(2 ** 31), rng.randint(3, 7),
                                   rng.randint(2, 5), ruled=True,
                                   density=rng.uniform(0.8, 1.0),
                                   row_pitch_range=(pitch_lo, pitch_hi),
                                   thickness_choices=(2, 3), font_size=font_size)
    elif kind == "unruled":
        pitch_hi = 13 + min(gap_cap, 18)
        table = generate_synthetic(rng.randrange(2 ** 31), rng.randint(4, 8),
                                   rng.randint(2, 5), ruled=False,
                                   density=rng.uniform(0.85, 1.0),
                                   row_pitch_range=(25, pitch_hi), font_size=font_size)
    elif kind == "span":
        pitch_hi = 13 + min(gap_cap, 18)
        table = generate_synthetic(rng.randrange(2 ** 31), rng.randint(4, 7),
                                   rng.randint(3, 5), ruled=False, density=1.0,
                                   spans=True, row_pitch_range=(25, pitch_hi),
                                   font_size=font_size)
    elif kind == "sparse":
        pitch_hi = 13 + min(gap_cap, 18)
        cols = rng.randint(3, 5)
        table = generate_synthetic(rng.randrange(2 ** 31), rng.randint(5, 8), cols,
                                   ruled=False, density=1.0, sparse_col=cols // 2,
                                   row_pitch_range=(25, pitch_hi), font_size=font_size)
    else:
        raise ValueError(f"unknown page kind {kind!r}")

    th, tw = table.image.shape
    page_w = max(page_w, tw + 80)
    x_off = rng.randint(40, page_w - tw - 40)
    y_off = rng.randint(40, 160)
    page_h = y_off + th + rng.randint(40, 120)
    page = np.full((page_h, page_w), 255, dtype=np.uint8)
    page[y_off:y_off + th, x_off:x_off + tw] = table.image

    region = Region(x_off, y_off, x_off + tw - 1, y_off + th - 1)
    truth = GroundTruthTable(region=region, cells=list(table.cells))
    boxes = [b.shifted(x_off, y_off) for b in table.text_boxes]
    return SyntheticPage(image=page, truth=truth, text_boxes=boxes, table=table)
