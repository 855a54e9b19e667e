"""Evaluation metrics: string edit distance, tree edit distance over table
structures (TEDS / TEDS-S), and reading-order edit distance.

The tree distance is the Zhang-Shasha ordered tree edit distance with unit
insert/delete costs. Two rename cost models are provided: structure-only
(tag signatures must match, content ignored) and content-aware (tag mismatch
costs 1, tag match costs the normalized edit distance between cell
contents). Span values are folded into the tag signature, so span mistakes
count as structural errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .table_grid import TableError, TableGrid, normalize_text, parse_grid


class GtParseError(Exception):
    """The ground-truth side of a table comparison must parse."""


# -- sequence edit distance ------------------------------------------------------


def _levenshtein(a, b) -> int:
    """Unit-cost edit distance over any two indexable token sequences."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        current = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            current[j] = min(
                previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost
            )
        previous = current
    return previous[len(b)]


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance over Unicode scalar values with unit costs."""
    return _levenshtein(a, b)


def normalized_edit_distance(a: str, b: str) -> float:
    return _levenshtein(a, b) / max(len(a), len(b), 1)


def reading_order_edit(pred_indices, gt_indices) -> float:
    """Edit distance between element-id sequences, normalized by max length."""
    return _levenshtein(list(pred_indices), list(gt_indices)) / max(
        len(pred_indices), len(gt_indices), 1
    )


# -- document trees ---------------------------------------------------------------


@dataclass
class DocTree:
    tag: str
    content: str = ""
    children: list["DocTree"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(child.size() for child in self.children)


def grid_to_tree(grid: TableGrid) -> DocTree:
    """table -> tr* -> (td|th)* with spans folded into the tag signature."""
    root = DocTree("table")
    by_row: dict[int, list] = {}
    for cell in grid.cells:
        by_row.setdefault(cell.anchor_row, []).append(cell)
    for r in range(grid.n_rows):
        tr = DocTree("tr")
        for cell in sorted(by_row.get(r, []), key=lambda c: c.anchor_col):
            tag = "th" if cell.is_header else "td"
            tr.children.append(
                DocTree(
                    f"{tag}[{cell.rowspan},{cell.colspan}]",
                    normalize_text(cell.content),
                )
            )
        root.children.append(tr)
    return root


STRUCTURE_ONLY = "structure"
CONTENT_AWARE = "content"


def _rename_cost(a: DocTree, b: DocTree, cost_model: str) -> float:
    if a.tag != b.tag:
        return 1.0
    if cost_model == STRUCTURE_ONLY:
        return 0.0
    return normalized_edit_distance(a.content, b.content)


class _Annotated:
    """Postorder node list, leftmost-leaf-descendant table, and keyroots."""

    def __init__(self, root: DocTree):
        self.nodes: list[DocTree] = []
        self.lmds: list[int] = []
        self.keyroots: list[int] = []
        lmd_of: dict[int, int] = {}

        def walk(node: DocTree) -> int:
            child_ids = [walk(child) for child in node.children]
            my_id = len(self.nodes)
            self.nodes.append(node)
            lmd_of[my_id] = lmd_of[child_ids[0]] if child_ids else my_id
            self.lmds.append(lmd_of[my_id])
            return my_id

        walk(root)
        seen: set[int] = set()
        for i in range(len(self.nodes) - 1, -1, -1):
            if self.lmds[i] not in seen:
                self.keyroots.append(i)
                seen.add(self.lmds[i])
        self.keyroots.sort()


def tree_edit_distance(
    t1: DocTree | None, t2: DocTree | None, cost_model: str = CONTENT_AWARE
) -> float:
    """Zhang-Shasha ordered tree edit distance with unit insert/delete.

    ``None`` stands for the empty tree (pure deletions/insertions).
    """
    if cost_model not in (STRUCTURE_ONLY, CONTENT_AWARE):
        raise ValueError(f"unknown cost model {cost_model!r}")
    if t1 is None or t2 is None:
        return float((t1.size() if t1 else 0) + (t2.size() if t2 else 0))
    A, B = _Annotated(t1), _Annotated(t2)
    na, nb = len(A.nodes), len(B.nodes)
    treedist = [[0.0] * nb for _ in range(na)]

    for i in A.keyroots:
        for j in B.keyroots:
            li, lj = A.lmds[i], B.lmds[j]
            m, n = i - li + 2, j - lj + 2
            fd = [[0.0] * n for _ in range(m)]
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + 1.0
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + 1.0
            for x in range(1, m):
                for y in range(1, n):
                    ai, bj = x + li - 1, y + lj - 1
                    if A.lmds[ai] == li and B.lmds[bj] == lj:
                        fd[x][y] = min(
                            fd[x - 1][y] + 1.0,
                            fd[x][y - 1] + 1.0,
                            fd[x - 1][y - 1]
                            + _rename_cost(A.nodes[ai], B.nodes[bj], cost_model),
                        )
                        treedist[ai][bj] = fd[x][y]
                    else:
                        p = A.lmds[ai] - li
                        q = B.lmds[bj] - lj
                        fd[x][y] = min(
                            fd[x - 1][y] + 1.0,
                            fd[x][y - 1] + 1.0,
                            fd[p][q] + treedist[ai][bj],
                        )
    return treedist[na - 1][nb - 1]


def teds(pred_html: str, gt_html: str, structure_only: bool = False) -> float:
    """Tree-edit-distance similarity between two table HTML strings, in [0,1].

    An unparseable prediction scores 0; an unparseable ground truth raises
    :class:`GtParseError`.
    """
    try:
        gt_tree = grid_to_tree(parse_grid(gt_html))
    except TableError as exc:
        raise GtParseError(str(exc)) from exc
    try:
        pred_tree = grid_to_tree(parse_grid(pred_html))
    except TableError:
        return 0.0
    model = STRUCTURE_ONLY if structure_only else CONTENT_AWARE
    dist = tree_edit_distance(pred_tree, gt_tree, model)
    return 1.0 - dist / max(pred_tree.size(), gt_tree.size(), 1)


# -- batch evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    normalization: str

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "normalization": self.normalization}


def _order_tokens(value) -> list:
    if isinstance(value, str):
        return value.split()
    return list(value)


def evaluate_pair(pred, gt, kind: str) -> list[MetricReport]:
    """Metrics for one prediction/ground-truth pair of the given kind."""
    if kind == "text":
        dist = edit_distance(pred, gt)
        return [
            MetricReport("edit_distance", float(dist), "unit costs"),
            MetricReport(
                "normalized_edit_distance",
                dist / max(len(pred), len(gt), 1),
                "distance / max(len)",
            ),
        ]
    if kind == "table":
        return [
            MetricReport("teds", teds(pred, gt), "1 - TED / max(nodes)"),
            MetricReport(
                "teds_structure", teds(pred, gt, structure_only=True), "structure-only rename"
            ),
        ]
    if kind == "order":
        return [
            MetricReport(
                "reading_order_edit",
                reading_order_edit(_order_tokens(pred), _order_tokens(gt)),
                "distance / max(len)",
            )
        ]
    raise ValueError(f"unknown evaluation kind {kind!r}")


def evaluate_batch(entries: list[dict]) -> list[dict]:
    """Evaluate ``[{"pred", "gt", "kind"}, ...]``; one result row per entry."""
    results = []
    for pos, entry in enumerate(entries):
        reports = evaluate_pair(entry["pred"], entry["gt"], entry["kind"])
        results.append(
            {
                "index": pos,
                "kind": entry["kind"],
                "metrics": {r.name: r.value for r in reports},
            }
        )
    return results
