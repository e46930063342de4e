"""Per-cell OCR dispatch and CSV serialization with EXTEND markers.

Only occupied anchor cells are sent to OCR, on crops cut from the original
full-resolution image. Cells belonging to a merged component but not anchoring
it serialize as an EXTEND token with an arrow pointing back toward the anchor
(left within a row, up within a column). One OCR failure is contained to its
cell; the page keeps going.

OCR engines are external processes invoked once per crop (the crop is written
to a temporary PNG substituted into the command template). The stub engine
`stub:` instead reads text straight from a generator sidecar, which makes
end-to-end tests independent of any real OCR installation.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .cell_grid import CellGrid, Component, MergeResolution
from .image_prep import save_image

EXTEND_LEFT = "left"
EXTEND_UP = "up"

_ARROWS = {
    "ascii": {EXTEND_LEFT: "EXTEND<-", EXTEND_UP: "EXTEND^"},
    "utf8": {EXTEND_LEFT: "EXTEND←", EXTEND_UP: "EXTEND↑"},
}
_TOKEN_TO_DIRECTION = {tok: d for style in _ARROWS.values() for d, tok in style.items()}


class OCRFailure(RuntimeError):
    """The OCR engine failed on one crop."""


class OCRClient(Protocol):
    def recognize(self, crop: np.ndarray, box: tuple[int, int, int, int]) -> str:
        """Text for one cell crop; `box` is its original-image pixel box."""
        ...


@dataclass
class Cell:
    kind: str  # "text" | "empty" | "extend"
    text: str = ""
    direction: str = ""  # for extend cells

    @staticmethod
    def of_text(text: str) -> "Cell":
        return Cell(kind="text", text=text)

    @staticmethod
    def empty() -> "Cell":
        return Cell(kind="empty")

    @staticmethod
    def extend(direction: str) -> "Cell":
        return Cell(kind="extend", direction=direction)


@dataclass
class TableModel:
    rows: int
    cols: int
    cells: list[list[Cell]]

    def logical_cells(self) -> list[tuple[int, int, int, int, str]]:
        """Merged-aware cells as (r0, c0, r1, c1, text) with extends resolved."""
        anchor_of: dict[tuple[int, int], tuple[int, int]] = {}
        for r in range(self.rows):
            for c in range(self.cols):
                cell = self.cells[r][c]
                if cell.kind != "extend":
                    anchor_of[(r, c)] = (r, c)
                else:
                    prev = (r, c - 1) if cell.direction == EXTEND_LEFT else (r - 1, c)
                    anchor_of[(r, c)] = anchor_of.get(prev, prev)
        spans: dict[tuple[int, int], list[int]] = {}
        for (r, c), (ar, ac) in anchor_of.items():
            box = spans.setdefault((ar, ac), [ar, ac, ar, ac])
            box[2], box[3] = max(box[2], r), max(box[3], c)
        out = []
        for (ar, ac), (r0, c0, r1, c1) in sorted(spans.items()):
            anchor = self.cells[ar][ac]
            text = anchor.text if anchor.kind == "text" else ""
            out.append((r0, c0, r1, c1, text))
        return out


def normalize_cell_text(raw: str) -> str:
    """Trim and collapse whitespace; internal line breaks become single spaces."""
    return re.sub(r"\s+", " ", raw).strip()


class CommandOCR:
    """Invoke an external OCR command once per crop.

    The template must contain `{image}`, replaced by the crop's temporary PNG
    path; recognized text is read from the command's standard output.
    """

    def __init__(self, template: str):
        if "{image}" not in template:
            raise ValueError("OCR command template must contain {image}")
        self.template = template
        self.calls = 0

    def recognize(self, crop: np.ndarray, box) -> str:
        self.calls += 1
        with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as tmp:
            path = Path(tmp.name)
        try:
            save_image(path, crop)
            argv = [part.replace("{image}", str(path))
                    for part in shlex.split(self.template)]
            proc = subprocess.run(argv, stdout=subprocess.PIPE,
                                  stderr=subprocess.DEVNULL, timeout=120)
            if proc.returncode != 0:
                raise OCRFailure(f"OCR command exited {proc.returncode}")
            return proc.stdout.decode("utf-8", errors="replace")
        except OCRFailure:
            raise
        except Exception as exc:
            raise OCRFailure(str(exc)) from exc
        finally:
            path.unlink(missing_ok=True)


class StubOCR:
    """Read text from a sidecar of ground-truth text boxes instead of an engine.

    The sidecar (JSON: {"texts": [{"x0", "y0", "x1", "y1", "text"}, ...]} in
    original-image pixels) lists every rendered text blob; recognition returns
    the texts whose box centers fall inside the crop, in reading order.
    """

    def __init__(self, sidecar_path=None):
        self.calls = 0
        self._texts: list[tuple[float, float, str]] = []
        if sidecar_path is not None and Path(sidecar_path).exists():
            data = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
            for t in data.get("texts", []):
                cx = (t["x0"] + t["x1"]) / 2.0
                cy = (t["y0"] + t["y1"]) / 2.0
                self._texts.append((cy, cx, t["text"]))
            self._texts.sort()

    def recognize(self, crop: np.ndarray, box) -> str:
        self.calls += 1
        x0, y0, x1, y1 = box
        hits = [text for cy, cx, text in self._texts
                if x0 <= cx <= x1 and y0 <= cy <= y1]
        return " ".join(hits)


class CountingOCR:
    """Test helper: constant text, counts invocations."""

    def __init__(self, text: str = "x"):
        self.text = text
        self.calls = 0

    def recognize(self, crop, box) -> str:
        self.calls += 1
        return self.text


def extract_text(client: OCRClient, original: np.ndarray,
                 resolution: MergeResolution, grid: CellGrid,
                 boxes: dict[Component, tuple[int, int, int, int]],
                 warn=None) -> TableModel:
    """OCR every occupied component anchor and assemble the table model.

    A component is occupied when any of its cells is; its anchor (top-left
    cell) receives the text, the other cells point back with extend markers.
    An OCR failure records empty text for that cell and continues.
    """
    rows, cols = grid.rows, grid.cols
    cells: list[list[Cell]] = [[Cell.empty() for _ in range(cols)] for _ in range(rows)]
    for comp in resolution.components:
        occupied = any(resolution.occupancy[r, c] for r, c in comp.cells())
        box = boxes[comp]
        if occupied:
            x0, y0, x1, y1 = box
            crop = original[y0:y1 + 1, x0:x1 + 1]
            try:
                text = normalize_cell_text(client.recognize(crop, box))
            except OCRFailure as exc:
                if warn is not None:
                    warn(f"OCR failed on cell ({comp.r0},{comp.c0}): {exc}")
                text = ""
            cells[comp.r0][comp.c0] = Cell.of_text(text)
        else:
            cells[comp.r0][comp.c0] = Cell.empty()
        for r, c in comp.cells():
            if (r, c) == comp.anchor:
                continue
            direction = EXTEND_LEFT if r == comp.r0 else EXTEND_UP
            cells[r][c] = Cell.extend(direction)
    return TableModel(rows=rows, cols=cols, cells=cells)


def _csv_quote(field: str) -> str:
    if any(ch in field for ch in ',"\n\r'):
        return '"' + field.replace('"', '""') + '"'
    return field


def emit_csv(model: TableModel, arrows: str = "ascii") -> str:
    """Serialize to RFC-4180-style CSV text, one record per grid row."""
    tokens = _ARROWS[arrows]
    lines = []
    for row in model.cells:
        fields = []
        for cell in row:
            if cell.kind == "text":
                fields.append(_csv_quote(cell.text))
            elif cell.kind == "empty":
                fields.append("")
            else:
                fields.append(tokens[cell.direction])
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n" if lines else ""


def parse_csv(text: str) -> TableModel:
    """Read an emitted CSV back into a table model (both arrow styles accepted)."""
    import csv
    from io import StringIO

    records = list(csv.reader(StringIO(text)))
    if not records:
        return TableModel(rows=0, cols=0, cells=[])
    cols = max(len(r) for r in records)
    cells = []
    for record in records:
        row = []
        for i in range(cols):
            field = record[i] if i < len(record) else ""
            if field == "":
                row.append(Cell.empty())
            elif field in _TOKEN_TO_DIRECTION:
                row.append(Cell.extend(_TOKEN_TO_DIRECTION[field]))
            else:
                row.append(Cell.of_text(field))
        cells.append(row)
    return TableModel(rows=len(records), cols=cols, cells=cells)
