"""Evaluation: area precision/recall and ICDAR-style adjacency-relation scoring.

Identification quality compares predicted and true table regions by area:
precision is the predicted area that is truly table, recall the true table
area that was predicted. Extraction quality follows the ICDAR table
competition method: every non-empty cell forms "adjacency relations" with its
nearest non-empty neighbors to the right and below (blank cells are skipped,
merged spans crossed); relation multisets of prediction and truth are
compared per document, precision and recall are averaged across documents,
and F1 comes from the averaged pair.

Ground truth lives in a small XML format: a <document> of <table> elements
with pixel bounds, each holding <cell> elements with grid position, spans and
text. Cells may be listed sparsely; absent grid positions are blank.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from shapely.geometry import box as shapely_box
from shapely.ops import unary_union

from .region_detect import Region
from .ocr_output import TableModel

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class GroundTruthError(ValueError):
    """Malformed or inconsistent ground-truth markup."""


@dataclass(frozen=True)
class GTCell:
    row: int
    col: int
    row_span: int = 1
    col_span: int = 1
    text: str = ""


@dataclass
class GroundTruthTable:
    region: Region
    cells: list[GTCell] = field(default_factory=list)


@dataclass(frozen=True)
class AreaMetrics:
    precision: float
    recall: float

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


@dataclass(frozen=True)
class AdjacencyRelation:
    """Unordered text pair with a direction; constructed in canonical order."""

    content_a: str
    content_b: str
    direction: str

    @staticmethod
    def make(a: str, b: str, direction: str) -> "AdjacencyRelation":
        lo, hi = sorted((a, b))
        return AdjacencyRelation(lo, hi, direction)


def normalize_text(raw: str, strict: bool = False) -> str:
    """Lowercase, collapse whitespace, drop spaces hugging punctuation.

    strict=True disables normalization apart from outer trimming.
    """
    if strict:
        return raw.strip()
    s = re.sub(r"\s+", " ", raw).strip().lower()
    s = re.sub(r"\s+([,.;:!?%)\]])", r"\1", s)
    s = re.sub(r"([(\[])\s+", r"\1", s)
    return s


def _union_area(regions: list[Region]) -> float:
    if not regions:
        return 0.0
    shapes = [shapely_box(r.x_min, r.y_min, r.x_max + 1, r.y_max + 1) for r in regions]
    return unary_union(shapes).area


def area_precision_recall(predicted: list[Region], truth: list[Region]) -> AreaMetrics:
    """Area metrics over the unions of the two region sets.

    Degenerate conventions: with nothing predicted, precision is 1.0 when
    there is also no truth and 0.0 otherwise; recall is 1.0 when there is no
    truth.
    """
    ap = _union_area(predicted)
    al = _union_area(truth)
    if ap > 0 and al > 0:
        pred_shape = unary_union([shapely_box(r.x_min, r.y_min, r.x_max + 1, r.y_max + 1)
                                  for r in predicted])
        true_shape = unary_union([shapely_box(r.x_min, r.y_min, r.x_max + 1, r.y_max + 1)
                                  for r in truth])
        inter = pred_shape.intersection(true_shape).area
    else:
        inter = 0.0
    precision = inter / ap if ap > 0 else (1.0 if al == 0 else 0.0)
    recall = inter / al if al > 0 else 1.0
    return AreaMetrics(precision=precision, recall=recall)


def _logical_cells(model) -> list[tuple[int, int, int, int, str]]:
    """(r0, c0, r1, c1, text) for either a TableModel or a GroundTruthTable."""
    if isinstance(model, TableModel):
        return model.logical_cells()
    if isinstance(model, GroundTruthTable):
        return [(c.row, c.col, c.row + c.row_span - 1, c.col + c.col_span - 1, c.text)
                for c in model.cells]
    raise TypeError(f"cannot extract cells from {type(model).__name__}")


def adjacency_relations(model, strict_text: bool = False) -> Counter:
    """Multiset of adjacency relations for one table.

    For each non-empty logical cell, one relation with the nearest non-empty
    logical cell to the right per spanned row, and one with the nearest below
    per spanned column; blank and extend positions are skipped. Distinct
    neighbor cells each contribute one relation; the same neighbor found via
    several spanned rows/columns counts once.
    """
    cells = [(r0, c0, r1, c1, normalize_text(t, strict_text))
             for r0, c0, r1, c1, t in _logical_cells(model)]
    occupied: dict[tuple[int, int], int] = {}
    for idx, (r0, c0, r1, c1, text) in enumerate(cells):
        if not text:
            continue
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                occupied[(r, c)] = idx
    if not occupied:
        return Counter()
    max_r = max(r for r, _ in occupied)
    max_c = max(c for _, c in occupied)

    relations: Counter = Counter()
    for idx, (r0, c0, r1, c1, text) in enumerate(cells):
        if not text:
            continue
        right_neighbors = set()
        for r in range(r0, r1 + 1):
            for c in range(c1 + 1, max_c + 1):
                other = occupied.get((r, c))
                if other is not None and other != idx:
                    right_neighbors.add(other)
                    break
        for other in sorted(right_neighbors):
            relations[AdjacencyRelation.make(text, cells[other][4], HORIZONTAL)] += 1
        down_neighbors = set()
        for c in range(c0, c1 + 1):
            for r in range(r1 + 1, max_r + 1):
                other = occupied.get((r, c))
                if other is not None and other != idx:
                    down_neighbors.add(other)
                    break
        for other in sorted(down_neighbors):
            relations[AdjacencyRelation.make(text, cells[other][4], VERTICAL)] += 1
    return relations


@dataclass(frozen=True)
class DocumentScore:
    document: str
    precision: float
    recall: float
    predicted: int
    truth: int
    matched: int


@dataclass(frozen=True)
class IcdarScore:
    per_document: tuple[DocumentScore, ...]
    precision: float
    recall: float

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


def icdar_score(predicted: dict[str, list], truth: dict[str, list],
                strict_text: bool = False, dedupe: bool = False,
                warn=None) -> IcdarScore:
    """Score per document, then macro-average precision and recall.

    `predicted` and `truth` map document ids to lists of tables (TableModel or
    GroundTruthTable); relations of all tables in a document are pooled.
    Documents missing from either side are reported and excluded. dedupe=True
    collapses repeated relation tuples to sets before matching.
    """
    docs = sorted(set(predicted) & set(truth))
    for missing in sorted(set(predicted) ^ set(truth)):
        if warn is not None:
            side = "truth" if missing in predicted else "prediction"
            warn(f"document {missing!r} has no {side} counterpart; excluded")
    scores = []
    for doc in docs:
        pred_rel: Counter = Counter()
        for table in predicted[doc]:
            pred_rel += adjacency_relations(table, strict_text)
        true_rel: Counter = Counter()
        for table in truth[doc]:
            true_rel += adjacency_relations(table, strict_text)
        if dedupe:
            pred_rel = Counter(set(pred_rel))
            true_rel = Counter(set(true_rel))
        matched = sum((pred_rel & true_rel).values())
        n_pred = sum(pred_rel.values())
        n_true = sum(true_rel.values())
        precision = matched / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
        recall = matched / n_true if n_true else 1.0
        scores.append(DocumentScore(document=doc, precision=precision, recall=recall,
                                    predicted=n_pred, truth=n_true, matched=matched))
    if scores:
        avg_p = sum(s.precision for s in scores) / len(scores)
        avg_r = sum(s.recall for s in scores) / len(scores)
    else:
        avg_p = avg_r = 0.0
    return IcdarScore(per_document=tuple(scores), precision=avg_p, recall=avg_r)


def _cell_line_numbers(text: str) -> list[int]:
    """Line number of each <cell> occurrence, in document order."""
    lines = []
    for n, line in enumerate(text.splitlines(), start=1):
        lines.extend([n] * line.count("<cell"))
    return lines


def parse_groundtruth(path) -> list[GroundTruthTable]:
    """Parse and validate one ground-truth XML document."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise GroundTruthError(f"{path.name}: malformed XML: {exc}") from exc
    if root.tag != "document":
        raise GroundTruthError(f"{path.name}: root element must be <document>")
    cell_lines = _cell_line_numbers(text)
    cell_no = 0
    tables = []
    for t_el in root.iter("table"):
        try:
            coords = [int(t_el.attrib[k]) for k in ("x0", "y0", "x1", "y1")]
        except (KeyError, ValueError) as exc:
            raise GroundTruthError(f"{path.name}: table needs integer x0 y0 x1 y1") from exc
        if coords[0] > coords[2] or coords[1] > coords[3] or min(coords) < 0:
            raise GroundTruthError(f"{path.name}: table region {coords} out of order or bounds")
        table = GroundTruthTable(region=Region(*coords))
        occupied: dict[tuple[int, int], tuple[GTCell, int]] = {}
        for c_el in t_el.iter("cell"):
            cell_no += 1
            line = cell_lines[cell_no - 1] if cell_no <= len(cell_lines) else 0
            try:
                cell = GTCell(row=int(c_el.attrib["row"]), col=int(c_el.attrib["col"]),
                              row_span=int(c_el.attrib.get("rowspan", 1)),
                              col_span=int(c_el.attrib.get("colspan", 1)),
                              text=c_el.text or "")
            except (KeyError, ValueError) as exc:
                raise GroundTruthError(
                    f"{path.name}:{line}: cell needs integer row/col") from exc
            if cell.row < 0 or cell.col < 0 or cell.row_span < 1 or cell.col_span < 1:
                raise GroundTruthError(
                    f"{path.name}:{line}: cell ({cell.row},{cell.col}) has invalid position or span")
            for r in range(cell.row, cell.row + cell.row_span):
                for c in range(cell.col, cell.col + cell.col_span):
                    if (r, c) in occupied:
                        prev, prev_line = occupied[(r, c)]
                        raise GroundTruthError(
                            f"{path.name}:{line}: cell ({cell.row},{cell.col}) span "
                            f"{cell.row_span}x{cell.col_span} overlaps cell "
                            f"({prev.row},{prev.col}) from line {prev_line} at grid ({r},{c})")
                    occupied[(r, c)] = (cell, line)
            table.cells.append(cell)
        tables.append(table)
    return tables


def write_groundtruth(path, image_name: str, tables: list[GroundTruthTable]) -> None:
    """Emit ground truth in the XML schema parse_groundtruth reads."""
    root = ET.Element("document", image=image_name)
    for table in tables:
        r = table.region
        t_el = ET.SubElement(root, "table", x0=str(r.x_min), y0=str(r.y_min),
                             x1=str(r.x_max), y1=str(r.y_max))
        for cell in table.cells:
            c_el = ET.SubElement(t_el, "cell", row=str(cell.row), col=str(cell.col),
                                 rowspan=str(cell.row_span), colspan=str(cell.col_span))
            c_el.text = cell.text
    ET.indent(root)
    Path(path).write_bytes(ET.tostring(root, encoding="utf-8", xml_declaration=True))
