"""Command-line front end tying the pipeline together.

Subcommands: assemble, merge, mask, restore, eval, reward, pairs. All
machine-readable output goes to stdout or named files; diagnostics are JSON
objects on stderr. Exit codes: 0 success, 1 domain validation failure, 2
I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import idtp, layout, metrics, rewards, table_grid, table_merge
from .config import Config, ConfigError, apply_env_overrides, load_config

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2

_DOMAIN_ERRORS = (
    table_grid.TableError,
    table_merge.Unalignable,
    table_merge.PlanMismatch,
    layout.LayoutSyntaxError,
    layout.LayoutSchemaError,
    layout.LayoutGeometryError,
    layout.LayoutIndexError,
    layout.DuplicateElement,
    layout.UnknownElement,
    idtp.DimensionMismatch,
    metrics.GtParseError,
    rewards.EmptyGroup,
    rewards.InapplicablePerturbation,
    ConfigError,
    ValueError,
)


def _diag(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _load_cfg(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    cfg = apply_env_overrides(cfg)
    return cfg


def _read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _parse_bbox(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"bbox must be x1,y1,x2,y2, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_detections(data) -> list[idtp.ImageDetection]:
    if not isinstance(data, list):
        raise ValueError("detections file must be a JSON array")
    return [
        idtp.ImageDetection(tuple(d["bbox"]), float(d["confidence"])) for d in data
    ]


def _load_image(path: str) -> idtp.PixelBuffer:
    raw = Path(path).read_bytes()
    if raw[:2] == b"P6":
        return idtp.read_ppm(raw)
    try:
        from PIL import Image
    except ImportError:
        raise ValueError(
            f"{path} is not a PPM and Pillow is not installed (pip install docpost[images])"
        ) from None
    import io

    with Image.open(io.BytesIO(raw)) as img:
        rgb = img.convert("RGB")
        return idtp.PixelBuffer(rgb.width, rgb.height, rgb.tobytes())


# -- subcommands ------------------------------------------------------------------


def cmd_assemble(args) -> int:
    cfg = _load_cfg(args)
    pipeline_cfg = layout.PipelineConfig(
        merge=cfg.merge_config(),
        idtp=cfg.idtp_config(),
        output_format=layout.OutputFormat(args.format),
        include_headers_footers=args.include_headers_footers or cfg.include_headers_footers,
        scorer=cfg.continuation_scorer(),
    )
    detections: dict[tuple[int, int], list[idtp.ImageDetection]] = {}
    if args.detections_dir:
        for path in sorted(Path(args.detections_dir).glob("page*_el*.json")):
            stem = path.stem  # page<p>_el<i>
            try:
                page_no = int(stem.split("_")[0][len("page") :])
                index = int(stem.split("_")[1][len("el") :])
            except (IndexError, ValueError):
                _diag("detections", f"cannot parse page/element from {path.name}")
                return EXIT_IO
            detections[(page_no, index)] = _parse_detections(_read_json(str(path)))
    result = layout.pipeline_run(args.layout, args.fixture, pipeline_cfg, detections)
    Path(args.out).write_text(result.document, encoding="utf-8")
    reports_path = Path(args.out + ".reports.json")
    reports_path.write_text(
        json.dumps(result.reports_dict(), indent=2) + "\n", encoding="utf-8"
    )
    for warning in result.warnings:
        _diag("warning", warning)
    return EXIT_OK


def cmd_merge(args) -> int:
    cfg = _load_cfg(args)
    grids = []
    for path in args.fragments:
        grids.append(table_grid.parse_grid(Path(path).read_text(encoding="utf-8")))
    tables, plans = table_merge.merge_fragment_sequence_with_plans(
        grids, cfg.continuation_scorer(), cfg.merge_config()
    )
    out_files = []
    for i, table in enumerate(tables):
        out_path = f"{args.out_prefix}_{i}.html"
        Path(out_path).write_text(table_grid.serialize_grid(table), encoding="utf-8")
        out_files.append(out_path)
    print(
        json.dumps(
            {
                "inputs": list(args.fragments),
                "outputs": out_files,
                "plans": [p.to_dict() for p in plans],
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_mask(args) -> int:
    cfg = _load_cfg(args)
    table_bbox = _parse_bbox(args.table_bbox)
    page = _load_image(args.image)
    dets = _parse_detections(_read_json(args.detections))
    plan, pmap = idtp.plan_masks(table_bbox, dets, cfg.idtp_config())
    crop = idtp.crop_buffer(page, table_bbox)
    masked = idtp.apply_masks(crop, plan)
    Path(f"{args.out_prefix}.masked.ppm").write_bytes(idtp.write_ppm(masked))
    refs = []
    for entry in pmap.entries:
        ref = f"{args.out_prefix}_img{entry.id}.ppm"
        Path(ref).write_bytes(idtp.write_ppm(idtp.crop_buffer(page, entry.bbox)))
        refs.append(ref)
    pmap = pmap.with_refs(refs)
    Path(f"{args.out_prefix}.map.json").write_text(
        json.dumps(pmap.to_dict(table_bbox), indent=2) + "\n", encoding="utf-8"
    )
    print(
        json.dumps(
            {"masks": len(plan.masks), "map": f"{args.out_prefix}.map.json"}
        )
    )
    return EXIT_OK


def cmd_restore(args) -> int:
    cfg = _load_cfg(args)
    html = Path(args.html).read_text(encoding="utf-8")
    pmap = idtp.PlaceholderMap.from_dict(_read_json(args.map))
    result = idtp.restore_images(html, pmap, cfg.idtp_config(), strict_ids=args.strict_ids)
    Path(args.out).write_text(result.html, encoding="utf-8")
    report = idtp.verify_restoration(result.html, pmap, cfg.idtp_config())
    print(
        json.dumps(
            {
                "found": result.found,
                "expected": result.expected,
                "rewrites": result.rewrites,
                "count_mismatch": result.count_mismatch,
                "verification": report.to_dict(),
            },
            indent=2,
        )
    )
    if result.count_mismatch:
        _diag(
            "count_mismatch",
            f"found {result.found} placeholder tags, expected {result.expected}",
        )
        return EXIT_DOMAIN
    return EXIT_OK


def _format_eval_table(rows: list[dict]) -> str:
    lines = []
    header = ("index", "kind", "metric", "value")
    table = [header]
    for row in rows:
        for name, value in row["metrics"].items():
            table.append((str(row["index"]), row["kind"], name, f"{value:.6f}"))
    widths = [max(len(r[c]) for r in table) for c in range(4)]
    for r, row_cells in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row_cells, widths)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    entries = _read_json(args.batch)
    if not isinstance(entries, list):
        raise ValueError("batch file must be a JSON array")
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(
                pool.map(
                    lambda e: metrics.evaluate_pair(e["pred"], e["gt"], e["kind"]),
                    entries,
                )
            )
        rows = [
            {"index": i, "kind": entries[i]["kind"], "metrics": {r.name: r.value for r in rep}}
            for i, rep in enumerate(reports)
        ]
    else:
        rows = metrics.evaluate_batch(entries)
    print(_format_eval_table(rows))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(rows, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_reward(args) -> int:
    cfg = _load_cfg(args)
    candidates = _read_json(args.candidates)
    if not isinstance(candidates, list):
        raise ValueError("candidates file must be a JSON array")
    htmls = [c["html"] if isinstance(c, dict) else c for c in candidates]
    gt_html = Path(args.gt).read_text(encoding="utf-8")
    if args.expected_placeholders is not None:
        expected = args.expected_placeholders
    else:
        expected = gt_html.lower().count("<img")
    scorer = cfg.reward_scorer()
    weights = cfg.rule_weights_obj()
    out_rows = []
    reward_values = []
    for html in htmls:
        report = rewards.rule_checks(html, expected, weights)
        row = {"rule": report.to_dict(), "model_score": None, "reward": report.score}
        if scorer is not None:
            try:
                rendered = rewards.render_candidate(html)
            except table_grid.TableError:
                rendered = ""
            model_score = scorer.score(gt_html, html, rendered)
            row["model_score"] = model_score
            row["reward"] = rewards.composite_reward(report.score, model_score, cfg.w_rule)
        reward_values.append(row["reward"])
        out_rows.append(row)
    advantages = rewards.group_advantages(reward_values, cfg.eps) if reward_values else []
    for row, adv in zip(out_rows, advantages):
        row["advantage"] = adv
    print(json.dumps({"candidates": out_rows}, indent=2))
    return EXIT_OK


def cmd_pairs(args) -> int:
    sources = []
    for item in args.gt:
        path = Path(item)
        if path.is_dir():
            sources.extend(sorted(path.glob("*.html")))
        else:
            sources.append(path)
    if not sources:
        raise ValueError("no ground-truth tables found")
    kinds = (
        [rewards.PerturbationKind(k) for k in args.kinds.split(",")]
        if args.kinds
        else list(rewards.PerturbationKind)
    )
    written = skipped = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for source in sources:
            gt_html = source.read_text(encoding="utf-8")
            for seed in range(args.seeds):
                for kind in kinds:
                    try:
                        pair = rewards.perturb_table(gt_html, kind, seed)
                    except rewards.InapplicablePerturbation:
                        skipped += 1
                        continue
                    record = {"source": str(source), "seed": seed, **pair.to_dict()}
                    fh.write(json.dumps(record) + "\n")
                    written += 1
    print(json.dumps({"written": written, "skipped": skipped, "out": args.out}))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docpost",
        description="Post-processing toolkit for two-stage document parsers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="validate layout, restore, merge, and assemble")
    p.add_argument("layout", help="layout JSON (array, page object, or {'pages': [...]})")
    p.add_argument("fixture", help="recognition fixture JSON")
    p.add_argument("-o", "--out", required=True, help="output document path")
    p.add_argument("--detections-dir", help="directory of page<p>_el<i>.json detection files")
    p.add_argument("--format", choices=["markdown", "html"], default="markdown")
    p.add_argument("--include-headers-footers", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("merge", help="merge table fragment HTML files")
    p.add_argument("fragments", nargs="+", help="fragment HTML files in reading order")
    p.add_argument("--out-prefix", default="merged", help="output file prefix")
    p.add_argument("--config")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("mask", help="plan and apply placeholder masks on a table crop")
    p.add_argument("image", help="page image (PPM, or PNG/JPEG with Pillow)")
    p.add_argument("detections", help="detections JSON array")
    p.add_argument("--table-bbox", required=True, help="x1,y1,x2,y2 in page pixels")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("restore", help="restore image refs into recognized table HTML")
    p.add_argument("html", help="recognized table HTML file")
    p.add_argument("map", help="placeholder map JSON")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--strict-ids", action="store_true", help="match placeholder://<id> by id")
    p.add_argument("--config")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="run metrics over a batch file")
    p.add_argument("batch", help='JSON array of {"pred", "gt", "kind"}')
    p.add_argument("--json-out", help="also write rows as JSON")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reward", help="score candidate tables against a ground truth")
    p.add_argument("candidates", help="JSON array of candidate HTML strings")
    p.add_argument("gt", help="ground-truth table HTML file")
    p.add_argument("--expected-placeholders", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("pairs", help="generate positive/negative table pairs")
    p.add_argument("gt", nargs="+", help="ground-truth HTML files or directories")
    p.add_argument("--seeds", type=int, default=1, help="seeds 0..N-1 per kind")
    p.add_argument("--kinds", help="comma-separated perturbation kinds")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_pairs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError) as exc:
        _diag("io", str(exc))
        return EXIT_IO
    except _DOMAIN_ERRORS as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
