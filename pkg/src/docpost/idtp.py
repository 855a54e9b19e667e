"""Image-decoupled table parsing plumbing.

Embedded figures detected inside a table crop are replaced by solid
placeholder masks before recognition; the recognizer emits ``<img>`` tags in
their place, and this module deterministically restores the real image
references from the stored id mapping afterwards.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .table_grid import TableError, parse_grid, serialize_grid


class DimensionMismatch(Exception):
    """Pixel buffer does not match the mask plan's table crop."""


Rect = tuple[int, int, int, int]


@dataclass(frozen=True)
class ImageDetection:
    bbox: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate detection bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")


@dataclass(frozen=True)
class PlaceholderEntry:
    id: int
    bbox: Rect  # page coordinates, clamped to the table bbox
    image_ref: str = ""


@dataclass(frozen=True)
class PlaceholderMap:
    entries: tuple[PlaceholderEntry, ...]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError("placeholder ids must be 0..n-1 in order")

    def __len__(self):
        return len(self.entries)

    def with_refs(self, refs: list[str]) -> "PlaceholderMap":
        if len(refs) != len(self.entries):
            raise ValueError("ref count differs from entry count")
        return PlaceholderMap(
            tuple(replace(e, image_ref=r) for e, r in zip(self.entries, refs))
        )

    def to_dict(self, table_bbox: Rect | None = None) -> dict:
        out = {
            "entries": [
                {"id": e.id, "bbox": list(e.bbox), "image_ref": e.image_ref}
                for e in self.entries
            ]
        }
        if table_bbox is not None:
            out["table_bbox"] = list(table_bbox)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlaceholderMap":
        entries = tuple(
            PlaceholderEntry(int(e["id"]), tuple(int(v) for v in e["bbox"]), e.get("image_ref", ""))
            for e in data["entries"]
        )
        return cls(entries)


@dataclass(frozen=True)
class Mask:
    id: int
    rect: Rect  # table-local coordinates
    fill: tuple[int, int, int]


@dataclass(frozen=True)
class MaskPlan:
    table_bbox: Rect
    masks: tuple[Mask, ...]

    @property
    def crop_size(self) -> tuple[int, int]:
        x1, y1, x2, y2 = self.table_bbox
        return x2 - x1, y2 - y1


@dataclass(frozen=True)
class IdtpConfig:
    min_confidence: float = 0.3
    overlap_tolerance: float = 0.5  # max allowed IoU between kept detections
    fill: tuple[int, int, int] = (200, 200, 200)
    placeholder_scheme: str = "placeholder://"


def _iou(a: Rect, b: Rect) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    if ix1 >= ix2 or iy1 >= iy2:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def plan_masks(
    table_bbox: Rect,
    detections: list[ImageDetection],
    cfg: IdtpConfig | None = None,
) -> tuple[MaskPlan, PlaceholderMap]:
    """Plan placeholder masks for detections whose center lies in the table.

    Detections below ``min_confidence`` are ignored; overlapping survivors
    (IoU above ``overlap_tolerance``) are suppressed keeping the more
    confident one. Ids are assigned in canonical (y1, x1) order, so the
    result is invariant under permutation of the input. ``image_ref`` fields
    are left empty for the caller's cropper.
    """
    cfg = cfg or IdtpConfig()
    tx1, ty1, tx2, ty2 = table_bbox
    kept: list[tuple[Rect, float]] = []
    for det in detections:
        if det.confidence < cfg.min_confidence:
            continue
        x1, y1, x2, y2 = det.bbox
        cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
        if not (tx1 <= cx < tx2 and ty1 <= cy < ty2):
            continue
        clamped = (
            max(int(round(x1)), tx1),
            max(int(round(y1)), ty1),
            min(int(round(x2)), tx2),
            min(int(round(y2)), ty2),
        )
        if clamped[0] >= clamped[2] or clamped[1] >= clamped[3]:
            continue
        kept.append((clamped, det.confidence))

    kept.sort(key=lambda kc: (-kc[1], kc[0]))  # confidence ties break on rect
    survivors: list[tuple[Rect, float]] = []
    for rect, conf in kept:
        if all(_iou(rect, other) <= cfg.overlap_tolerance for other, _ in survivors):
            survivors.append((rect, conf))

    survivors.sort(key=lambda kc: (kc[0][1], kc[0][0]))
    masks = []
    entries = []
    for idx, (rect, _) in enumerate(survivors):
        local = (rect[0] - tx1, rect[1] - ty1, rect[2] - tx1, rect[3] - ty1)
        masks.append(Mask(idx, local, cfg.fill))
        entries.append(PlaceholderEntry(idx, rect))
    return MaskPlan(table_bbox, tuple(masks)), PlaceholderMap(tuple(entries))


# -- raw pixel buffers ----------------------------------------------------------


@dataclass(frozen=True)
class PixelBuffer:
    """Uncompressed 8-bit RGB pixels, row-major."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != self.width * self.height * 3:
            raise DimensionMismatch(
                f"buffer holds {len(self.data)} bytes, expected {self.width * self.height * 3}"
            )


def apply_masks(buffer: PixelBuffer, plan: MaskPlan) -> PixelBuffer:
    """Fill each mask rect with its solid color on a copy of the buffer."""
    if (buffer.width, buffer.height) != plan.crop_size:
        raise DimensionMismatch(
            f"buffer {buffer.width}x{buffer.height} differs from plan crop {plan.crop_size}"
        )
    out = bytearray(buffer.data)
    for mask in plan.masks:
        x1, y1, x2, y2 = mask.rect
        row = bytes(mask.fill) * (x2 - x1)
        for y in range(y1, y2):
            start = (y * buffer.width + x1) * 3
            out[start : start + len(row)] = row
    return PixelBuffer(buffer.width, buffer.height, bytes(out))


def crop_buffer(buffer: PixelBuffer, rect: Rect) -> PixelBuffer:
    """Copy the pixels under ``rect`` (clamped to the buffer) into a new buffer."""
    x1 = min(max(rect[0], 0), buffer.width)
    y1 = min(max(rect[1], 0), buffer.height)
    x2 = min(max(rect[2], 0), buffer.width)
    y2 = min(max(rect[3], 0), buffer.height)
    if x1 >= x2 or y1 >= y2:
        raise DimensionMismatch(f"crop rect {rect} is empty within the buffer")
    rows = []
    for y in range(y1, y2):
        start = (y * buffer.width + x1) * 3
        rows.append(buffer.data[start : start + (x2 - x1) * 3])
    return PixelBuffer(x2 - x1, y2 - y1, b"".join(rows))


def read_ppm(data: bytes) -> PixelBuffer:
    """Parse a binary P6 PPM with maxval 255."""
    pos = 0
    fields = []
    while len(fields) < 4:
        if pos >= len(data):
            raise ValueError("truncated PPM header")
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"not a P6 PPM: magic {fields[0]!r}")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = data[pos : pos + width * height * 3]
    return PixelBuffer(width, height, pixels)


def write_ppm(buffer: PixelBuffer) -> bytes:
    return b"P6\n%d %d\n255\n" % (buffer.width, buffer.height) + buffer.data


# -- placeholder restoration --------------------------------------------------------


_IMG_TAG_RE = re.compile(r"<img\b[^>]*/?>", re.IGNORECASE)
_SRC_ATTR_RE = re.compile(r"""(\bsrc\s*=\s*)("([^"]*)"|'([^']*)'|([^\s>/]+))""", re.IGNORECASE)


def _tag_src(tag: str) -> str | None:
    m = _SRC_ATTR_RE.search(tag)
    if not m:
        return None
    return m.group(3) if m.group(3) is not None else (m.group(4) if m.group(4) is not None else m.group(5))


def _set_tag_src(tag: str, ref: str) -> str:
    if _SRC_ATTR_RE.search(tag):
        return _SRC_ATTR_RE.sub(lambda m: f'{m.group(1)}"{ref}"', tag, count=1)
    closer = "/>" if tag.rstrip().endswith("/>") else ">"
    body = tag[: -len(closer)].rstrip("/ ").rstrip()
    return f'{body} src="{ref}"{closer}'


def _needs_restore(tag: str, scheme: str) -> bool:
    src = _tag_src(tag)
    return src is None or src == "" or src.startswith(scheme)


def _placeholder_id(tag: str, scheme: str) -> int | None:
    src = _tag_src(tag)
    if src and src.startswith(scheme):
        try:
            return int(src[len(scheme) :])
        except ValueError:
            return None
    return None


@dataclass(frozen=True)
class RestoreResult:
    html: str
    found: int
    expected: int
    rewrites: int
    unused_entries: tuple[int, ...]

    @property
    def count_mismatch(self) -> bool:
        return self.found != self.expected


def restore_images(
    html: str,
    pmap: PlaceholderMap,
    cfg: IdtpConfig | None = None,
    strict_ids: bool = False,
) -> RestoreResult:
    """Rewrite placeholder ``<img>`` tags with the mapped image references.

    Tags still needing restoration (no src, empty src, or a
    ``placeholder://`` src) are matched positionally in row-major grid order:
    the k-th one gets ``entries[k].image_ref``. With ``strict_ids`` the tags
    must instead carry ``src="placeholder://<id>"`` and are matched by id.
    Tags already holding a concrete reference are never touched, so re-running
    on restored output changes nothing and reports every entry unused. A
    found/expected count mismatch is reported in the result while restoration
    proceeds for the pairs that exist.
    """
    cfg = cfg or IdtpConfig()
    grid = parse_grid(html)
    by_id = {e.id: e for e in pmap.entries}
    used: set[int] = set()
    counter = {"found": 0, "rewrites": 0}

    def rewrite(tag: str) -> str:
        if not _needs_restore(tag, cfg.placeholder_scheme):
            return tag
        counter["found"] += 1
        if strict_ids:
            pid = _placeholder_id(tag, cfg.placeholder_scheme)
            if pid is None or pid not in by_id:
                return tag
            entry = by_id[pid]
        else:
            pid = counter["found"] - 1
            if pid not in by_id:
                return tag
            entry = by_id[pid]
        used.add(entry.id)
        counter["rewrites"] += 1
        return _set_tag_src(tag, entry.image_ref)

    # process cells in row-major anchor order so the positional counter
    # matches document order
    order = sorted(
        range(len(grid.cells)),
        key=lambda i: (grid.cells[i].anchor_row, grid.cells[i].anchor_col),
    )
    new_contents: dict[int, str] = {}
    for i in order:
        new_contents[i] = _IMG_TAG_RE.sub(
            lambda m: rewrite(m.group(0)), grid.cells[i].content
        )
    restored = replace(
        grid,
        cells=tuple(replace(c, content=new_contents[i]) for i, c in enumerate(grid.cells)),
    )
    unused = tuple(e.id for e in pmap.entries if e.id not in used)
    return RestoreResult(
        serialize_grid(restored),
        counter["found"],
        len(pmap),
        counter["rewrites"],
        unused,
    )


@dataclass(frozen=True)
class VerificationReport:
    residual_tags: tuple[int, ...]  # positions (in tag order) still unrestored
    unused_entries: tuple[int, ...]  # entry ids whose ref appears on no tag
    duplicate_srcs: tuple[str, ...]

    @property
    def is_empty(self) -> bool:
        return not (self.residual_tags or self.unused_entries or self.duplicate_srcs)

    def to_dict(self) -> dict:
        return {
            "residual_tags": list(self.residual_tags),
            "unused_entries": list(self.unused_entries),
            "duplicate_srcs": list(self.duplicate_srcs),
        }


def verify_restoration(
    html: str, pmap: PlaceholderMap, cfg: IdtpConfig | None = None
) -> VerificationReport:
    """Empty report iff the tag/entry correspondence is a bijection."""
    cfg = cfg or IdtpConfig()
    try:
        grid = parse_grid(html)
        tags = []
        for cell in grid.cells:
            tags.extend(_IMG_TAG_RE.findall(cell.content))
    except TableError:
        tags = _IMG_TAG_RE.findall(html)
    residual = tuple(
        i for i, tag in enumerate(tags) if _needs_restore(tag, cfg.placeholder_scheme)
    )
    srcs = [_tag_src(t) for t in tags]
    concrete = [s for s in srcs if s and not s.startswith(cfg.placeholder_scheme)]
    unused = tuple(e.id for e in pmap.entries if e.image_ref not in concrete)
    seen: set[str] = set()
    dupes = []
    for s in concrete:
        if s in seen and s not in dupes:
            dupes.append(s)
        seen.add(s)
    return VerificationReport(residual, unused, tuple(dupes))
