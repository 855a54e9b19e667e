"""HTML table fragments -> normalized span-aware grids and back.

The grid is the universal table representation for the rest of the package:
every position of an ``n_rows x n_cols`` matrix is owned by exactly one cell
(span rectangles partition the grid). Parsing is tag-soup tolerant because
recognizer output is near-HTML, not validated HTML.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser


class TableError(Exception):
    """Base class for table parsing/normalization errors."""


class NoTableFound(TableError):
    """The input contains no <table> element."""


class MalformedMarkup(TableError):
    """Table markup is broken beyond the recoverable tag-soup cases."""


class SpanConflict(TableError):
    """Two cells claim the same grid position."""


@dataclass(frozen=True)
class RawCell:
    content: str
    rowspan: int = 1
    colspan: int = 1
    is_header: bool = False


@dataclass(frozen=True)
class TableFragment:
    """Rows of raw cells as they appeared in markup; may be ragged."""

    rows: tuple[tuple[RawCell, ...], ...]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("fragment needs at least one row")
        for row in self.rows:
            for cell in row:
                if cell.rowspan < 1 or cell.colspan < 1:
                    raise ValueError("cell spans must be >= 1")


@dataclass(frozen=True)
class GridCell:
    anchor_row: int
    anchor_col: int
    rowspan: int
    colspan: int
    content: str
    is_header: bool = False


@dataclass(frozen=True)
class TableGrid:
    """Normalized occupancy matrix; ``occupancy[r][c]`` indexes into ``cells``."""

    n_rows: int
    n_cols: int
    cells: tuple[GridCell, ...]
    occupancy: tuple[tuple[int, ...], ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def cell_at(self, row: int, col: int) -> GridCell:
        return self.cells[self.occupancy[row][col]]

    def content_at(self, row: int, col: int) -> str:
        return self.cell_at(row, col).content

    def row_contents(self, row: int) -> list[str]:
        """Per-position contents of one grid row (spanned cells repeat)."""
        return [self.cell_at(row, c).content for c in range(self.n_cols)]


def normalize_text(s: str) -> str:
    """Comparison normalization: trim, collapse whitespace, case-fold."""
    return re.sub(r"\s+", " ", s.strip()).casefold()


_NUMBER_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?%?")


def looks_numeric(s: str) -> bool:
    """True when the trimmed content is a bare number (commas tolerated)."""
    s = s.strip().replace(",", "")
    return bool(s) and _NUMBER_RE.fullmatch(s) is not None


# Tags with table-structural meaning; everything else inside a cell is kept
# verbatim as opaque content.
_STRUCTURE_TAGS = {"table", "thead", "tbody", "tfoot", "tr", "td", "th"}


class _TableSoupParser(HTMLParser):
    """Collects the first <table> element from near-HTML input.

    Missing </td>, </tr> and </table> are closed implicitly. A nested
    <table> inside a cell is treated as opaque cell content.
    """

    def __init__(self):
        super().__init__(convert_charrefs=False)
        self.rows: list[list[RawCell]] = []
        self.done = False
        self._in_table = False
        self._in_thead = False
        self._nested_table = 0
        self._row: list[RawCell] | None = None
        self._cell_parts: list[str] | None = None
        self._cell_attrs: tuple[int, int, bool] | None = None  # rowspan, colspan, header

    # -- helpers -----------------------------------------------------------

    @staticmethod
    def _span_attr(attrs, name) -> int:
        for key, value in attrs:
            if key == name:
                try:
                    span = int(str(value).strip())
                except (TypeError, ValueError):
                    return 1
                return max(span, 1)
        return 1

    def _open_cell(self, attrs, header: bool):
        self._close_cell()
        if self._row is None:
            self._row = []
        self._cell_parts = []
        self._cell_attrs = (
            self._span_attr(attrs, "rowspan"),
            self._span_attr(attrs, "colspan"),
            header or self._in_thead,
        )

    def _close_cell(self):
        if self._cell_parts is None:
            return
        rowspan, colspan, header = self._cell_attrs
        assert self._row is not None
        self._row.append(
            RawCell("".join(self._cell_parts), rowspan, colspan, header)
        )
        self._cell_parts = None
        self._cell_attrs = None

    def _close_row(self):
        self._close_cell()
        if self._row is not None:
            self.rows.append(self._row)
            self._row = None

    def _append_raw(self, text: str):
        if self._cell_parts is not None:
            self._cell_parts.append(text)

    # -- HTMLParser hooks ---------------------------------------------------

    def handle_starttag(self, tag, attrs):
        if self.done:
            return
        if not self._in_table:
            if tag == "table":
                self._in_table = True
            return
        if self._nested_table or (tag == "table" and self._cell_parts is not None):
            if tag == "table":
                self._nested_table += 1
            self._append_raw(self.get_starttag_text())
            return
        if tag == "thead":
            self._in_thead = True
        elif tag in ("tbody", "tfoot"):
            self._in_thead = False
        elif tag == "tr":
            self._close_row()
            self._row = []
        elif tag in ("td", "th"):
            self._open_cell(attrs, tag == "th")
        elif tag == "table":
            # <table> directly between rows: near-HTML garbage, skip over it.
            self._nested_table += 1
        else:
            self._append_raw(self.get_starttag_text())

    def handle_startendtag(self, tag, attrs):
        if self.done or not self._in_table:
            return
        if self._nested_table:
            self._append_raw(self.get_starttag_text())
            return
        if tag in ("td", "th"):
            self._open_cell(attrs, tag == "th")
            self._close_cell()
        elif tag not in _STRUCTURE_TAGS:
            self._append_raw(self.get_starttag_text())

    def handle_endtag(self, tag):
        if self.done or not self._in_table:
            return
        if self._nested_table:
            if tag == "table":
                self._nested_table -= 1
            self._append_raw(f"</{tag}>")
            return
        if tag == "table":
            self._close_row()
            self._in_table = False
            self.done = True
        elif tag == "tr":
            self._close_row()
        elif tag in ("td", "th"):
            self._close_cell()
        elif tag == "thead":
            self._in_thead = False
        elif tag not in _STRUCTURE_TAGS:
            self._append_raw(f"</{tag}>")

    def handle_data(self, data):
        self._append_raw(data)

    def handle_entityref(self, name):
        self._append_raw(f"&{name};")

    def handle_charref(self, name):
        self._append_raw(f"&#{name};")

    def handle_comment(self, data):
        self._append_raw(f"<!--{data}-->")

    def finish(self):
        self.close()
        if self._in_table:
            # Unclosed </table> at EOF: recover by closing the open row.
            self._close_row()
            self._in_table = False
            self.done = True


def parse_table_html(html: str) -> TableFragment:
    """Parse the first <table> in ``html`` into a :class:`TableFragment`.

    <th> cells and cells inside <thead> get ``is_header=True``. Markup inside
    a cell (including <img> tags) is preserved verbatim in ``content``.
    Raises :class:`NoTableFound` when there is no table element and
    :class:`MalformedMarkup` when the table yields no rows.
    """
    parser = _TableSoupParser()
    try:
        parser.feed(html)
        parser.finish()
    except AssertionError:  # pragma: no cover - parser internal breakage
        raise MalformedMarkup("unrecoverable markup") from None
    if not parser.done:
        raise NoTableFound("no <table> element in input")
    if not parser.rows or all(not row for row in parser.rows):
        raise MalformedMarkup("table has no cells")
    # Empty <tr></tr> rows are kept: they carry positions owned by rowspans
    # from rows above (canonical serialization emits them).
    rows = tuple(tuple(row) for row in parser.rows)
    return TableFragment(rows)


def normalize_grid(fragment: TableFragment) -> TableGrid:
    """Lay out a fragment with the standard HTML table algorithm.

    Each cell lands at the leftmost free column of its row and claims its
    span rectangle. Ragged rows are padded with empty 1x1 cells, rowspans
    overflowing the bottom edge are clipped; both are recorded in
    ``grid.warnings`` instead of raised.
    """
    n_rows = len(fragment.rows)
    warnings: list[str] = []
    cells: list[GridCell] = []
    # occupancy rows grow on demand while cells are placed
    occ: list[list[int | None]] = [[] for _ in range(n_rows)]

    def claim(r: int, c: int, idx: int):
        row = occ[r]
        while len(row) <= c:
            row.append(None)
        if row[c] is not None:
            raise SpanConflict(f"position ({r},{c}) claimed twice")
        row[c] = idx

    for r, raw_row in enumerate(fragment.rows):
        cursor = 0
        for raw in raw_row:
            row = occ[r]
            while cursor < len(row) and row[cursor] is not None:
                cursor += 1
            rowspan = raw.rowspan
            if r + rowspan > n_rows:
                rowspan = n_rows - r
                warnings.append(
                    f"clipped rowspan {raw.rowspan}->{rowspan} at ({r},{cursor})"
                )
            idx = len(cells)
            cells.append(
                GridCell(r, cursor, rowspan, raw.colspan, raw.content, raw.is_header)
            )
            for rr in range(r, r + rowspan):
                for cc in range(cursor, cursor + raw.colspan):
                    claim(rr, cc, idx)
            cursor += raw.colspan

    n_cols = max((len(row) for row in occ), default=0)
    for r in range(n_rows):
        row = occ[r]
        while len(row) < n_cols:
            row.append(None)
        for c in range(n_cols):
            if row[c] is None:
                idx = len(cells)
                cells.append(GridCell(r, c, 1, 1, "", False))
                row[c] = idx
                warnings.append(f"padded empty cell at ({r},{c})")

    return TableGrid(
        n_rows,
        n_cols,
        tuple(cells),
        tuple(tuple(row) for row in occ),  # type: ignore[arg-type]
        tuple(warnings),
    )


def grid_from_cells(
    n_rows: int, n_cols: int, cells: list[GridCell] | tuple[GridCell, ...]
) -> TableGrid:
    """Build a grid from explicit cells; uncovered positions are padded.

    Raises :class:`SpanConflict` when two cells overlap or a span leaves the
    grid bounds.
    """
    occ: list[list[int | None]] = [[None] * n_cols for _ in range(n_rows)]
    out = list(cells)
    for idx, cell in enumerate(out):
        if cell.anchor_row + cell.rowspan > n_rows or cell.anchor_col + cell.colspan > n_cols:
            raise SpanConflict(
                f"cell at ({cell.anchor_row},{cell.anchor_col}) leaves the grid"
            )
        for r in range(cell.anchor_row, cell.anchor_row + cell.rowspan):
            for c in range(cell.anchor_col, cell.anchor_col + cell.colspan):
                if occ[r][c] is not None:
                    raise SpanConflict(f"position ({r},{c}) claimed twice")
                occ[r][c] = idx
    for r in range(n_rows):
        for c in range(n_cols):
            if occ[r][c] is None:
                occ[r][c] = len(out)
                out.append(GridCell(r, c, 1, 1, "", False))
    ordered = sorted(range(len(out)), key=lambda i: (out[i].anchor_row, out[i].anchor_col))
    remap = {old: new for new, old in enumerate(ordered)}
    return TableGrid(
        n_rows,
        n_cols,
        tuple(out[i] for i in ordered),
        tuple(tuple(remap[i] for i in row) for row in occ),  # type: ignore[misc]
    )


def serialize_grid(grid: TableGrid) -> str:
    """Canonical byte-deterministic HTML: cells at anchors, spans only when > 1."""
    parts = ["<table>"]
    by_row: dict[int, list[GridCell]] = {}
    for cell in grid.cells:
        by_row.setdefault(cell.anchor_row, []).append(cell)
    for r in range(grid.n_rows):
        parts.append("<tr>")
        for cell in sorted(by_row.get(r, []), key=lambda c: c.anchor_col):
            tag = "th" if cell.is_header else "td"
            attrs = ""
            if cell.rowspan > 1:
                attrs += f' rowspan="{cell.rowspan}"'
            if cell.colspan > 1:
                attrs += f' colspan="{cell.colspan}"'
            parts.append(f"<{tag}{attrs}>{cell.content}</{tag}>")
        parts.append("</tr>")
    parts.append("</table>")
    return "".join(parts)


def parse_grid(html: str) -> TableGrid:
    """Convenience: parse then normalize."""
    return normalize_grid(parse_table_html(html))


def detect_header_rows(grid: TableGrid) -> int:
    """Number of leading rows whose every position is a header cell.

    When no row is tagged, falls back to a heuristic capped at one row: the
    first row counts as a header when all its cells are non-empty, none is a
    bare number, and at least one body cell in the same columns is.
    """
    k = 0
    for r in range(grid.n_rows):
        if all(grid.cell_at(r, c).is_header for c in range(grid.n_cols)):
            k += 1
        else:
            break
    if k > 0:
        return k
    if grid.n_rows < 2 or grid.n_cols == 0:
        return 0
    first = [grid.cell_at(0, c) for c in range(grid.n_cols)]
    if any(not normalize_text(c.content) for c in first):
        return 0
    if any(looks_numeric(c.content) for c in first):
        return 0
    for c in range(grid.n_cols):
        if any(looks_numeric(grid.content_at(r, c)) for r in range(1, grid.n_rows)):
            return 1
    return 0


def grid_to_fragment(grid: TableGrid) -> TableFragment:
    """Inverse of :func:`normalize_grid` for grids that satisfy the invariants."""
    rows: list[tuple[RawCell, ...]] = []
    by_row: dict[int, list[GridCell]] = {}
    for cell in grid.cells:
        by_row.setdefault(cell.anchor_row, []).append(cell)
    for r in range(grid.n_rows):
        anchored = sorted(by_row.get(r, []), key=lambda c: c.anchor_col)
        rows.append(
            tuple(
                RawCell(c.content, c.rowspan, c.colspan, c.is_header) for c in anchored
            )
        )
    return TableFragment(tuple(rows))
