"""Layout validation, region routing, and reading-order document assembly.

The upstream layout stage emits a JSON array of regions with bounding box,
reading-order index, category label, and rotation. This module validates
that schema, plans the per-region crop/derotation, routes regions to the
matching recognizer kind, and folds recognized contents back into a document
in reading order. Recognition itself is fixture-driven: a JSON object maps
element index to recognized content.
"""

from __future__ import annotations

import html as html_escape_mod
import json
from dataclasses import dataclass, field
from enum import Enum

from .idtp import IdtpConfig, ImageDetection, plan_masks, restore_images
from .table_grid import TableError, parse_grid, serialize_grid
from .table_merge import (
    ContinuationScorer,
    MergeConfig,
    Pattern,
    merge_fragment_sequence_with_plans,
)


class LayoutSyntaxError(Exception):
    """Layout file is not JSON."""


class LayoutSchemaError(Exception):
    """Element object is missing bbox/index/label or has wrong types."""


class LayoutGeometryError(Exception):
    """Degenerate bbox or rotation that is not a right angle."""


class LayoutIndexError(Exception):
    """Reading-order indices are not a permutation."""


class DuplicateElement(Exception):
    pass


class UnknownElement(Exception):
    pass


KNOWN_LABELS = frozenset(
    {
        "text",
        "title",
        "formula",
        "table",
        "tablebody",
        "table_caption",
        "image",
        "image_caption",
        "header",
        "footer",
        "other",
    }
)

TABLE_LABELS = frozenset({"table", "tablebody"})
CAPTION_LABELS = frozenset({"table_caption", "image_caption"})

VALID_ROTATIONS = (0, 90, 180, 270)


class RecognizerKind(Enum):
    TEXT_REC = "text"
    FORMULA_REC = "formula"
    TABLE_REC = "table"
    PASS_THROUGH = "image"


@dataclass(frozen=True)
class LayoutElement:
    bbox: tuple[int, int, int, int]
    index: int
    label: str
    rotation: int = 0


@dataclass(frozen=True)
class LayoutPage:
    page_width: int
    page_height: int
    elements: tuple[LayoutElement, ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def element_by_index(self, index: int) -> LayoutElement:
        for el in self.elements:
            if el.index == index:
                return el
        raise UnknownElement(f"no element with index {index}")

    def to_json_list(self) -> list[dict]:
        return [
            {
                "bbox": list(el.bbox),
                "index": el.index,
                "label": el.label,
                "rotation": el.rotation,
            }
            for el in self.elements
        ]


@dataclass(frozen=True)
class RecognizedElement:
    element: LayoutElement
    content: str


@dataclass(frozen=True)
class CropSpec:
    clamped_bbox: tuple[int, int, int, int]
    rotation_to_apply: int


def _clamp_bbox(bbox, width, height):
    x1, y1, x2, y2 = bbox
    return (
        min(max(x1, 0), width),
        min(max(y1, 0), height),
        min(max(x2, 0), width),
        min(max(y2, 0), height),
    )


def parse_layout(json_text: str, page_width: int, page_height: int) -> LayoutPage:
    """Validate one page's layout JSON array into a :class:`LayoutPage`.

    Unknown labels degrade to ``other`` with a warning; 1-based index runs
    are normalized to 0-based with a warning. Violations raise
    :class:`LayoutSyntaxError`, :class:`LayoutSchemaError`,
    :class:`LayoutGeometryError`, or :class:`LayoutIndexError`.
    """
    try:
        raw = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise LayoutSyntaxError(str(exc)) from exc
    return _validate_layout(raw, page_width, page_height)


def _validate_layout(raw, page_width: int, page_height: int) -> LayoutPage:
    if not isinstance(raw, list):
        raise LayoutSchemaError("layout must be a JSON array of elements")
    warnings: list[str] = []
    elements: list[LayoutElement] = []
    for pos, obj in enumerate(raw):
        if not isinstance(obj, dict):
            raise LayoutSchemaError(f"element {pos} is not an object")
        for key in ("bbox", "index", "label"):
            if key not in obj:
                raise LayoutSchemaError(f"element {pos} missing '{key}'")
        bbox = obj["bbox"]
        if (
            not isinstance(bbox, (list, tuple))
            or len(bbox) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox)
        ):
            raise LayoutSchemaError(f"element {pos} bbox must be [x1,y1,x2,y2]")
        index = obj["index"]
        if not isinstance(index, int) or isinstance(index, bool):
            raise LayoutSchemaError(f"element {pos} index must be an integer")
        label = obj["label"]
        if not isinstance(label, str):
            raise LayoutSchemaError(f"element {pos} label must be a string")
        if label not in KNOWN_LABELS:
            warnings.append(f"element {pos}: unknown label {label!r} mapped to 'other'")
            label = "other"
        rotation = obj.get("rotation", 0)
        if isinstance(rotation, float) and rotation.is_integer():
            rotation = int(rotation)
        if rotation not in VALID_ROTATIONS:
            raise LayoutGeometryError(
                f"element {pos} rotation {rotation!r} is not one of {VALID_ROTATIONS}"
            )
        x1, y1, x2, y2 = (int(v) for v in bbox)
        if x1 >= x2 or y1 >= y2:
            raise LayoutGeometryError(f"element {pos} bbox {bbox} is degenerate")
        clamped = _clamp_bbox((x1, y1, x2, y2), page_width, page_height)
        if clamped != (x1, y1, x2, y2):
            warnings.append(f"element {pos}: bbox clamped to page bounds")
        if clamped[0] >= clamped[2] or clamped[1] >= clamped[3]:
            raise LayoutGeometryError(f"element {pos} bbox {bbox} lies outside the page")
        elements.append(LayoutElement(clamped, index, label, rotation))

    indices = sorted(el.index for el in elements)
    n = len(elements)
    if len(set(indices)) != n:
        raise LayoutIndexError("duplicate reading-order index")
    if indices == list(range(1, n + 1)) and n > 0:
        warnings.append("1-based indices normalized to 0-based")
        elements = [
            LayoutElement(el.bbox, el.index - 1, el.label, el.rotation) for el in elements
        ]
    elif indices != list(range(n)):
        raise LayoutIndexError(f"indices {indices} are not a permutation of 0..{n - 1}")
    return LayoutPage(page_width, page_height, tuple(elements), tuple(warnings))


def crop_plan(page: LayoutPage, element_index: int) -> CropSpec:
    """Crop rectangle plus the inverse rotation restoring upright orientation."""
    el = page.element_by_index(element_index)
    bbox = _clamp_bbox(el.bbox, page.page_width, page.page_height)
    return CropSpec(bbox, (360 - el.rotation) % 360)


def route_region(label: str) -> RecognizerKind:
    if label == "formula":
        return RecognizerKind.FORMULA_REC
    if label in TABLE_LABELS:
        return RecognizerKind.TABLE_REC
    if label == "image":
        return RecognizerKind.PASS_THROUGH
    return RecognizerKind.TEXT_REC


class OutputFormat(Enum):
    MARKDOWN = "markdown"
    HTML = "html"


def _render_markdown(el: LayoutElement, content: str) -> str:
    if el.label == "title":
        return f"# {content}"
    if el.label == "formula":
        return f"$$\n{content}\n$$"
    if el.label in TABLE_LABELS:
        return content
    if el.label == "image":
        return f"![]({content})"
    if el.label in CAPTION_LABELS:
        return f"*{content}*"
    return content


def _render_html(el: LayoutElement, content: str) -> str:
    esc = html_escape_mod.escape
    if el.label == "title":
        return f"<h1>{esc(content)}</h1>"
    if el.label == "formula":
        return f'<div class="formula">$${esc(content)}$$</div>'
    if el.label in TABLE_LABELS:
        return content
    if el.label == "image":
        return f'<img src="{esc(content, quote=True)}">'
    if el.label in CAPTION_LABELS:
        return f"<p><em>{esc(content)}</em></p>"
    return f"<p>{esc(content)}</p>"


def assemble(
    recognized: list[RecognizedElement],
    page: LayoutPage,
    output_format: OutputFormat = OutputFormat.MARKDOWN,
    include_headers_footers: bool = False,
) -> str:
    """Order recognized contents by reading-order index and render blocks.

    Headers and footers are dropped unless ``include_headers_footers``.
    Blocks with empty content are omitted. Markdown blocks are separated by
    exactly one blank line.
    """
    seen: set[int] = set()
    page_elements = set(page.elements)
    for rec in recognized:
        if rec.element not in page_elements:
            raise UnknownElement(f"element index {rec.element.index} not in page")
        if rec.element.index in seen:
            raise DuplicateElement(f"element index {rec.element.index} recognized twice")
        seen.add(rec.element.index)
    blocks = []
    for rec in sorted(recognized, key=lambda r: r.element.index):
        if rec.element.label in ("header", "footer") and not include_headers_footers:
            continue
        if not rec.content:
            continue
        if output_format is OutputFormat.MARKDOWN:
            blocks.append(_render_markdown(rec.element, rec.content))
        else:
            blocks.append(_render_html(rec.element, rec.content))
    sep = "\n\n" if output_format is OutputFormat.MARKDOWN else "\n"
    return sep.join(blocks)


# -- multi-page pipeline -----------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    merge: MergeConfig = field(default_factory=MergeConfig)
    idtp: IdtpConfig = field(default_factory=IdtpConfig)
    output_format: OutputFormat = OutputFormat.MARKDOWN
    include_headers_footers: bool = False
    scorer: ContinuationScorer | None = None


@dataclass
class PipelineResult:
    document: str
    merge_plans: list[dict]
    placeholder_maps: list[dict]
    restore_reports: list[dict]
    warnings: list[str]

    def reports_dict(self) -> dict:
        return {
            "merge_plans": self.merge_plans,
            "placeholder_maps": self.placeholder_maps,
            "restore_reports": self.restore_reports,
            "warnings": self.warnings,
        }


def parse_layout_document(text: str) -> list[LayoutPage]:
    """Accept a bare element array (one page), a single page object, or
    ``{"pages": [...]}`` for multi-page documents."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutSyntaxError(str(exc)) from exc
    if isinstance(raw, list):
        # bare arrays carry no page size; use the tight bbox extent so
        # clamping is a no-op (validation still vets every field)
        width = height = 0
        for e in raw:
            bbox = e.get("bbox") if isinstance(e, dict) else None
            if isinstance(bbox, (list, tuple)) and len(bbox) == 4:
                try:
                    width = max(width, int(bbox[2]))
                    height = max(height, int(bbox[3]))
                except (TypeError, ValueError):
                    continue
        return [_validate_layout(raw, width, height)]
    if isinstance(raw, dict) and "pages" in raw:
        pages = raw["pages"]
        if not isinstance(pages, list):
            raise LayoutSchemaError("'pages' must be a list")
        return [_parse_page_object(p, i) for i, p in enumerate(pages)]
    if isinstance(raw, dict):
        return [_parse_page_object(raw, 0)]
    raise LayoutSchemaError("layout document must be an array or object")


def _parse_page_object(obj, pos: int) -> LayoutPage:
    if not isinstance(obj, dict) or "elements" not in obj:
        raise LayoutSchemaError(f"page {pos} must be an object with 'elements'")
    try:
        width = int(obj["page_width"])
        height = int(obj["page_height"])
    except (KeyError, TypeError, ValueError):
        raise LayoutSchemaError(f"page {pos} needs integer page_width/page_height") from None
    return _validate_layout(obj["elements"], width, height)


def parse_recognition_fixture(text: str, n_pages: int) -> list[dict[int, dict]]:
    """Fixture content per page: ``{"<index>": {"content", "kind"}}`` for a
    single page, or a list of such objects for multi-page documents."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutSyntaxError(str(exc)) from exc
    if isinstance(raw, dict) and "pages" in raw:
        raw = raw["pages"]
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list):
        raise LayoutSchemaError("recognition fixture must be an object or list")
    if len(raw) != n_pages:
        raise LayoutSchemaError(
            f"fixture covers {len(raw)} pages, layout has {n_pages}"
        )
    out = []
    for page_fixture in raw:
        if not isinstance(page_fixture, dict):
            raise LayoutSchemaError("per-page fixture must be an object")
        try:
            out.append({int(k): v for k, v in page_fixture.items()})
        except ValueError:
            raise LayoutSchemaError("fixture keys must be element indices") from None
    return out


_EXPECTED_KIND = {
    RecognizerKind.TEXT_REC: "text",
    RecognizerKind.FORMULA_REC: "formula",
    RecognizerKind.TABLE_REC: "table",
    RecognizerKind.PASS_THROUGH: "image",
}


def run_pipeline(
    pages: list[LayoutPage],
    fixtures: list[dict[int, dict]],
    cfg: PipelineConfig | None = None,
    detections: dict[tuple[int, int], list[ImageDetection]] | None = None,
    image_ref_pattern: str = "page{page}_el{index}_img{id}.png",
) -> PipelineResult:
    """Validate, route, restore placeholder images, merge split tables, and
    assemble the document in reading order.

    ``detections`` maps (page, element index) to embedded-image detections
    for table elements; their placeholder maps get deterministic refs from
    ``image_ref_pattern`` so a cropper can cut the files afterwards.
    """
    cfg = cfg or PipelineConfig()
    detections = detections or {}
    warnings: list[str] = []
    placeholder_maps: list[dict] = []
    restore_reports: list[dict] = []

    contents: dict[tuple[int, int], str] = {}
    for page_no, (page, fixture) in enumerate(zip(pages, fixtures)):
        warnings.extend(f"page {page_no}: {w}" for w in page.warnings)
        for el in sorted(page.elements, key=lambda e: e.index):
            kind = route_region(el.label)
            entry = fixture.get(el.index)
            if entry is None:
                warnings.append(
                    f"page {page_no} element {el.index}: no recognition fixture entry"
                )
                content = ""
            else:
                content = entry.get("content", "")
                declared = entry.get("kind")
                if declared and declared != _EXPECTED_KIND[kind]:
                    warnings.append(
                        f"page {page_no} element {el.index}: fixture kind {declared!r}"
                        f" does not match routed {_EXPECTED_KIND[kind]!r}"
                    )
            contents[(page_no, el.index)] = content

    # placeholder restoration for table elements with detections
    for (page_no, index), dets in sorted(detections.items()):
        key = (page_no, index)
        if key not in contents:
            warnings.append(f"detections for unknown element {key}")
            continue
        el = pages[page_no].element_by_index(index)
        if el.label not in TABLE_LABELS:
            warnings.append(f"detections for non-table element {key} ignored")
            continue
        _, pmap = plan_masks(el.bbox, dets, cfg.idtp)
        pmap = pmap.with_refs(
            [
                image_ref_pattern.format(page=page_no, index=index, id=e.id)
                for e in pmap.entries
            ]
        )
        placeholder_maps.append(
            {"page": page_no, "index": index, **pmap.to_dict(el.bbox)}
        )
        try:
            result = restore_images(contents[key], pmap, cfg.idtp)
        except TableError as exc:
            warnings.append(f"page {page_no} element {index}: restore skipped ({exc})")
            continue
        restore_reports.append(
            {
                "page": page_no,
                "index": index,
                "found": result.found,
                "expected": result.expected,
                "rewrites": result.rewrites,
                "unused_entries": list(result.unused_entries),
                "count_mismatch": result.count_mismatch,
            }
        )
        if result.count_mismatch:
            warnings.append(
                f"page {page_no} element {index}: placeholder count mismatch"
                f" (found {result.found}, expected {result.expected})"
            )
        contents[key] = result.html

    merged_contents, dropped, merge_plans = _merge_tables(pages, contents, cfg, warnings)

    page_docs = []
    for page_no, page in enumerate(pages):
        recognized = [
            RecognizedElement(el, merged_contents[(page_no, el.index)])
            for el in sorted(page.elements, key=lambda e: e.index)
            if (page_no, el.index) not in dropped
        ]
        rendered = assemble(
            recognized, page, cfg.output_format, cfg.include_headers_footers
        )
        if rendered:
            page_docs.append(rendered)
    sep = "\n\n" if cfg.output_format is OutputFormat.MARKDOWN else "\n"
    document = sep.join(page_docs)
    if document:
        document += "\n"
    return PipelineResult(document, merge_plans, placeholder_maps, restore_reports, warnings)


def _merge_tables(pages, contents, cfg, warnings):
    """Fold adjacent table fragments; returns updated contents, the element
    keys consumed by merges, and plan reports."""
    stream: list[tuple[int, LayoutElement]] = []
    for page_no, page in enumerate(pages):
        for el in sorted(page.elements, key=lambda e: e.index):
            if el.label in TABLE_LABELS:
                stream.append((page_no, el))

    def adjacent(prev: tuple[int, LayoutElement], nxt: tuple[int, LayoutElement]) -> bool:
        (p_page, p_el), (n_page, n_el) = prev, nxt
        if p_page == n_page:
            between = [
                e
                for e in pages[p_page].elements
                if p_el.index < e.index < n_el.index
            ]
            return all(e.label in CAPTION_LABELS for e in between)
        return n_page == p_page + 1

    chains: list[list[tuple[int, LayoutElement]]] = []
    for item in stream:
        if chains and adjacent(chains[-1][-1], item):
            chains[-1].append(item)
        else:
            chains.append([item])

    new_contents = dict(contents)
    dropped: set[tuple[int, int]] = set()
    merge_plans: list[dict] = []
    for chain in chains:
        grids = []
        members = []
        for page_no, el in chain:
            key = (page_no, el.index)
            try:
                grids.append(parse_grid(contents[key]))
                members.append(key)
            except TableError as exc:
                warnings.append(
                    f"page {page_no} element {el.index}: table not parseable ({exc})"
                )
        if not grids:
            continue
        tables, plans = merge_fragment_sequence_with_plans(grids, cfg.scorer, cfg.merge)
        # partition members into the groups the fold produced
        groups: list[list[tuple[int, int]]] = [[members[0]]]
        for i, plan in enumerate(plans):
            merge_plans.append(
                {
                    "from": list(groups[-1][0]),
                    "next": list(members[i + 1]),
                    **plan.to_dict(),
                }
            )
            if plan.pattern is Pattern.NO_MERGE:
                groups.append([members[i + 1]])
            else:
                groups[-1].append(members[i + 1])
        for table, group in zip(tables, groups):
            new_contents[group[0]] = serialize_grid(table)
            for key in group[1:]:
                dropped.add(key)
    return new_contents, dropped, merge_plans


def pipeline_run(
    layout_path: str,
    fixture_path: str,
    cfg: PipelineConfig | None = None,
    detections: dict[tuple[int, int], list[ImageDetection]] | None = None,
) -> PipelineResult:
    """File-based front end over :func:`run_pipeline`."""
    with open(layout_path, encoding="utf-8") as fh:
        pages = parse_layout_document(fh.read())
    with open(fixture_path, encoding="utf-8") as fh:
        fixtures = parse_recognition_fixture(fh.read(), len(pages))
    return run_pipeline(pages, fixtures, cfg, detections)
