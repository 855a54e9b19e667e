"""Rule-based reward checks, composite reward, group-relative advantages,
and seeded table perturbations for preference-pair generation.

The rule half of the composite reward checks structural sanity of a
candidate table; the learned half is behind a pluggable scorer that receives
the original-table descriptor, the candidate HTML, and its canonical
re-serialization (standing in for a rendered image).
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from enum import Enum

from ._external import score_via_http, score_via_subprocess
from .table_grid import (
    GridCell,
    TableError,
    TableGrid,
    grid_from_cells,
    normalize_text,
    parse_grid,
    serialize_grid,
)


class EmptyGroup(Exception):
    """Advantages need at least one reward."""


class InapplicablePerturbation(Exception):
    """The table is too small or too uniform for the requested perturbation."""


_IMG_RE = re.compile(r"<img\b", re.IGNORECASE)


@dataclass(frozen=True)
class RuleWeights:
    well_formed: float = 0.25
    rectangular: float = 0.25
    placeholder_ok: float = 0.25
    non_empty: float = 0.25

    def __post_init__(self):
        total = self.well_formed + self.rectangular + self.placeholder_ok + self.non_empty
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"rule weights must sum to 1, got {total}")


@dataclass(frozen=True)
class RuleReport:
    well_formed: bool
    rectangular: bool
    placeholder_ok: bool
    non_empty: bool
    score: float

    def to_dict(self) -> dict:
        return {
            "well_formed": self.well_formed,
            "rectangular": self.rectangular,
            "placeholder_ok": self.placeholder_ok,
            "non_empty": self.non_empty,
            "score": self.score,
        }


def rule_checks(
    candidate_html: str,
    expected_placeholders: int = 0,
    weights: RuleWeights | None = None,
) -> RuleReport:
    """Structural sanity checks; failures lower the score, never raise.

    well_formed: the candidate parses and normalizes into a grid.
    rectangular: normalization needed no padding or span clipping.
    placeholder_ok: the ``<img>`` tag count equals the expected count.
    non_empty: at least one cell has non-whitespace content.
    """
    weights = weights or RuleWeights()
    well_formed = rectangular = non_empty = False
    try:
        grid = parse_grid(candidate_html)
        well_formed = True
        rectangular = not grid.warnings
        non_empty = any(normalize_text(c.content) for c in grid.cells)
    except TableError:
        pass
    placeholder_ok = len(_IMG_RE.findall(candidate_html)) == expected_placeholders
    score = (
        weights.well_formed * well_formed
        + weights.rectangular * rectangular
        + weights.placeholder_ok * placeholder_ok
        + weights.non_empty * non_empty
    )
    return RuleReport(well_formed, rectangular, placeholder_ok, non_empty, score)


# -- composite reward ------------------------------------------------------------


class RewardScorer:
    """Learned visual-consistency scorer over (original, candidate, render)."""

    def score(self, original_descriptor: str, candidate_html: str, rendered_canonical: str) -> float:
        raise NotImplementedError


class SubprocessRewardScorer(RewardScorer):
    def __init__(self, command: list[str], timeout: float = 30.0):
        self.command = command
        self.timeout = timeout

    def score(self, original_descriptor, candidate_html, rendered_canonical):
        payload = {
            "original_descriptor": original_descriptor,
            "candidate_html": candidate_html,
            "rendered_canonical": rendered_canonical,
        }
        return score_via_subprocess(self.command, payload, self.timeout)


class HttpRewardScorer(RewardScorer):
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def score(self, original_descriptor, candidate_html, rendered_canonical):
        payload = {
            "original_descriptor": original_descriptor,
            "candidate_html": candidate_html,
            "rendered_canonical": rendered_canonical,
        }
        return score_via_http(self.url, payload, self.timeout)


def composite_reward(rule_score: float, model_score: float, w_rule: float = 0.5) -> float:
    """Linear blend of the rule score and the learned score."""
    for name, value in (("rule_score", rule_score), ("model_score", model_score), ("w_rule", w_rule)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} {value} outside [0,1]")
    return w_rule * rule_score + (1.0 - w_rule) * model_score


def render_candidate(candidate_html: str) -> str:
    """Canonical re-serialization standing in for the rendered table image."""
    return serialize_grid(parse_grid(candidate_html))


# -- group-relative advantages ------------------------------------------------------


def group_advantages(rewards: list[float], eps: float = 1e-6) -> list[float]:
    """Zero-mean, unit-std advantages within a candidate group.

    Uses the population standard deviation; groups with std <= eps (constant
    groups in particular) get all-zero advantages.
    """
    if not rewards:
        raise EmptyGroup("cannot normalize an empty reward group")
    n = len(rewards)
    mean = sum(rewards) / n
    std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / n)
    if std <= eps:
        return [0.0] * n
    return [(r - mean) / (std + eps) for r in rewards]


@dataclass(frozen=True)
class RewardGroup:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]

    @classmethod
    def from_rewards(cls, rewards: list[float], eps: float = 1e-6) -> "RewardGroup":
        return cls(tuple(rewards), tuple(group_advantages(rewards, eps)))


# -- perturbations ---------------------------------------------------------------------


class PerturbationKind(Enum):
    SWAP_CELLS = "swap_cells"
    DROP_ROW = "drop_row"
    DROP_COLUMN = "drop_column"
    CHANGE_SPAN = "change_span"
    CORRUPT_TEXT = "corrupt_text"
    DUPLICATE_ROW = "duplicate_row"


@dataclass(frozen=True)
class PrefPair:
    positive: str
    negative: str
    perturbation: PerturbationKind

    def to_dict(self) -> dict:
        return {
            "positive": self.positive,
            "negative": self.negative,
            "perturbation": self.perturbation.value,
        }


def _rebuild_from_occupancy(occ_rows: list[list[int]], cells_by_id) -> TableGrid:
    """Reconstruct a grid from an edited occupancy matrix.

    Surviving cell ids keep their content; coverage rectangles are recomputed
    so row/column deletions and duplications stay span-consistent.
    """
    n_rows = len(occ_rows)
    n_cols = len(occ_rows[0]) if occ_rows else 0
    extents: dict[int, list[int]] = {}
    for r, row in enumerate(occ_rows):
        for c, idx in enumerate(row):
            if idx not in extents:
                extents[idx] = [r, r, c, c]
            else:
                ext = extents[idx]
                ext[0], ext[1] = min(ext[0], r), max(ext[1], r)
                ext[2], ext[3] = min(ext[2], c), max(ext[3], c)
    cells = []
    for idx, (r1, r2, c1, c2) in extents.items():
        src = cells_by_id[idx]
        cells.append(
            GridCell(r1, c1, r2 - r1 + 1, c2 - c1 + 1, src.content, src.is_header)
        )
    return grid_from_cells(n_rows, n_cols, cells)


def _swap_cells(grid: TableGrid, rng: random.Random) -> TableGrid:
    candidates = [
        (i, j)
        for i in range(len(grid.cells))
        for j in range(i + 1, len(grid.cells))
        if normalize_text(grid.cells[i].content) != normalize_text(grid.cells[j].content)
    ]
    if not candidates:
        raise InapplicablePerturbation("all cells have identical content")
    i, j = rng.choice(candidates)
    cells = list(grid.cells)
    ci, cj = cells[i], cells[j]
    cells[i] = GridCell(ci.anchor_row, ci.anchor_col, ci.rowspan, ci.colspan, cj.content, ci.is_header)
    cells[j] = GridCell(cj.anchor_row, cj.anchor_col, cj.rowspan, cj.colspan, ci.content, cj.is_header)
    return grid_from_cells(grid.n_rows, grid.n_cols, cells)


def _drop_row(grid: TableGrid, rng: random.Random) -> TableGrid:
    if grid.n_rows < 2:
        raise InapplicablePerturbation("need at least two rows")
    victim = rng.randrange(grid.n_rows)
    occ = [list(row) for r, row in enumerate(grid.occupancy) if r != victim]
    return _rebuild_from_occupancy(occ, grid.cells)


def _drop_column(grid: TableGrid, rng: random.Random) -> TableGrid:
    if grid.n_cols < 2:
        raise InapplicablePerturbation("need at least two columns")
    victim = rng.randrange(grid.n_cols)
    occ = [[idx for c, idx in enumerate(row) if c != victim] for row in grid.occupancy]
    return _rebuild_from_occupancy(occ, grid.cells)


def _duplicate_row(grid: TableGrid, rng: random.Random) -> TableGrid:
    victim = rng.randrange(grid.n_rows)
    row = list(grid.occupancy[victim])
    fresh: dict[int, int] = {}
    copy_row = []
    next_id = len(grid.cells)
    cells = list(grid.cells)
    for idx in row:
        cell = grid.cells[idx]
        if cell.rowspan == 1:
            # duplicate the cell (content copied) rather than stretching it
            if idx not in fresh:
                fresh[idx] = next_id
                cells.append(cell)
                next_id += 1
            copy_row.append(fresh[idx])
        else:
            copy_row.append(idx)
    occ = [list(r) for r in grid.occupancy]
    occ.insert(victim + 1, copy_row)
    return _rebuild_from_occupancy(occ, cells)


def _change_span(grid: TableGrid, rng: random.Random) -> TableGrid:
    # merge a cell with its 1x1 right neighbor, or split a multi-column cell
    merges = []
    for i, cell in enumerate(grid.cells):
        nc = cell.anchor_col + cell.colspan
        if nc >= grid.n_cols:
            continue
        j = grid.occupancy[cell.anchor_row][nc]
        other = grid.cells[j]
        if (
            other.anchor_row == cell.anchor_row
            and other.rowspan == cell.rowspan
            and other.colspan == 1
        ):
            merges.append((i, j))
    splits = [i for i, c in enumerate(grid.cells) if c.colspan >= 2]
    ops = [("merge", m) for m in merges] + [("split", s) for s in splits]
    if not ops:
        raise InapplicablePerturbation("no span can be changed")
    op, arg = rng.choice(ops)
    cells = list(grid.cells)
    if op == "merge":
        i, j = arg
        a, b = cells[i], cells[j]
        cells[i] = GridCell(
            a.anchor_row, a.anchor_col, a.rowspan, a.colspan + b.colspan, a.content, a.is_header
        )
        del cells[j]
    else:
        c = cells[arg]
        cells[arg] = GridCell(
            c.anchor_row, c.anchor_col, c.rowspan, c.colspan - 1, c.content, c.is_header
        )
        cells.append(
            GridCell(c.anchor_row, c.anchor_col + c.colspan - 1, c.rowspan, 1, "", False)
        )
    return grid_from_cells(grid.n_rows, grid.n_cols, cells)


def _corrupt_text(grid: TableGrid, rng: random.Random) -> TableGrid:
    candidates = [i for i, c in enumerate(grid.cells) if normalize_text(c.content)]
    if not candidates:
        raise InapplicablePerturbation("no non-empty cell to corrupt")
    i = rng.choice(candidates)
    cell = grid.cells[i]
    pos = rng.randrange(len(cell.content) + 1)
    mutated = cell.content[:pos] + "~" + cell.content[pos:]
    cells = list(grid.cells)
    cells[i] = GridCell(
        cell.anchor_row, cell.anchor_col, cell.rowspan, cell.colspan, mutated, cell.is_header
    )
    return grid_from_cells(grid.n_rows, grid.n_cols, cells)


_PERTURBATIONS = {
    PerturbationKind.SWAP_CELLS: _swap_cells,
    PerturbationKind.DROP_ROW: _drop_row,
    PerturbationKind.DROP_COLUMN: _drop_column,
    PerturbationKind.CHANGE_SPAN: _change_span,
    PerturbationKind.CORRUPT_TEXT: _corrupt_text,
    PerturbationKind.DUPLICATE_ROW: _duplicate_row,
}


def perturb_table(gt_html: str, kind: PerturbationKind, rng_seed: int) -> PrefPair:
    """Derive a visually inconsistent negative from the ground truth.

    Exactly one seeded perturbation of the given kind is applied; the
    positive side is the canonical serialization of the parsed ground truth.
    Raises :class:`InapplicablePerturbation` when the table cannot support
    the perturbation or it would leave the table unchanged.
    """
    grid = parse_grid(gt_html)
    positive = serialize_grid(grid)
    rng = random.Random(rng_seed)
    negative_grid = _PERTURBATIONS[kind](grid, rng)
    negative = serialize_grid(negative_grid)
    if negative == positive:
        raise InapplicablePerturbation(f"{kind.value} left the table unchanged")
    return PrefPair(positive, negative, kind)
