"""Command-line entry point: bg2 {bake,render,composite,validate,eval,report}."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics, pipeline
from .errors import Bg2Error
from .manifest import load_manifest


def _add_manifest_arg(parser):
    parser.add_argument("-m", "--manifest", required=True,
                        help="job manifest JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bg2",
        description="Blanket simulation, rendering, compositing, and "
                    "pose-metric evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bake", help="stage 1: simulate blankets to BGK2 files")
    _add_manifest_arg(p)
    p.add_argument("-j", "--jobs", type=int, default=None,
                   help="parallel workers (default: logical CPUs)")

    p = sub.add_parser("render", help="stage 2: render transparent layers")
    _add_manifest_arg(p)
    p.add_argument("-n", "--textures", type=int, required=True,
                   help="texture draws per segment")
    p.add_argument("-j", "--jobs", type=int, default=None)

    p = sub.add_parser("composite",
                       help="composite layers over source frames + annotate")
    _add_manifest_arg(p)

    p = sub.add_parser("validate", help="summarize and check an output tree")
    p.add_argument("-o", "--output-root", required=True)

    p = sub.add_parser("eval", help="PCK/NME of predictions against GT")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--gt", required=True, help="ground truth JSONL")
    p.add_argument("--rig", required=True,
                   help="rig name (slp14, fit3d) or rig config JSON path")
    p.add_argument("--map", dest="skeleton_map", default=None,
                   help="'builtin' for the shipped fit3d->slp14 map, "
                        "or a skeleton map JSON path")
    p.add_argument("--split", choices=["cover", "uncover", "none"],
                   default="none")

    p = sub.add_parser("report", help="two-model comparison table")
    p.add_argument("--inputs", nargs="+", required=True,
                   help="JSON files of report rows "
                        "[{testSet, blanket, model, pck, nme}, ...]")
    p.add_argument("--csv", default=None, help="also write CSV here")
    return parser


def _cmd_bake(args) -> int:
    manifest = load_manifest(args.manifest)
    results, errors, skipped = pipeline.cmd_bake(manifest, args.manifest,
                                                 jobs=args.jobs)
    for r in sorted(results, key=lambda r: r["videoId"]):
        print(f"baked {r['videoId']}: {r['segments']} segment(s), "
              f"{r['frames']} frames")
    for vid in skipped:
        print(f"up-to-date {vid}")
    for vid, msg in errors:
        print(f"ERROR {vid}: {msg}", file=sys.stderr)
    return 1 if errors else 0


def _cmd_render(args) -> int:
    manifest = load_manifest(args.manifest)
    results, errors, skipped = pipeline.cmd_render(
        manifest, args.manifest, textures_per_segment=args.textures,
        jobs=args.jobs)
    frames = sum(r["frames"] for r in results)
    print(f"rendered {len(results)} job(s), {frames} layer frame(s); "
          f"{len(skipped)} up-to-date")
    for job, msg in errors:
        print(f"ERROR {job}: {msg}", file=sys.stderr)
    return 1 if errors else 0


def _cmd_composite(args) -> int:
    manifest = load_manifest(args.manifest)
    written, errors = pipeline.cmd_composite(manifest)
    print(f"composited {written} frame(s)")
    for frame, msg in errors:
        print(f"ERROR {frame}: {msg}", file=sys.stderr)
    return 1 if errors else 0


def _cmd_validate(args) -> int:
    summary, problems = pipeline.cmd_validate(args.output_root)
    print(pipeline.format_summary_table(summary), end="")
    for p in problems:
        print(f"PROBLEM: {p}", file=sys.stderr)
    return 1 if problems else 0


def _load_rig(spec: str) -> metrics.RigConfig:
    if Path(spec).suffix == ".json":
        return metrics.RigConfig.from_json_file(spec)
    return metrics.load_builtin_rig(spec)


def _cmd_eval(args) -> int:
    rig = _load_rig(args.rig)
    skeleton_map = None
    if args.skeleton_map == "builtin":
        skeleton_map = metrics.load_builtin_map()
    elif args.skeleton_map:
        skeleton_map = metrics.SkeletonMap.from_json_file(args.skeleton_map)
    preds = metrics.read_pose_records(args.pred)
    gts = metrics.read_pose_records(args.gt)
    result = metrics.evaluate_set(preds, gts, rig, split=args.split,
                                  skeleton_map=skeleton_map)
    print(json.dumps({"split": result.split, "pck": result.pck,
                      "nme": result.nme, "frames": result.frames},
                     sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = raw if isinstance(raw, list) else [raw]
        for e in entries:
            rows.append(metrics.ReportRow(test_set=e["testSet"],
                                          blanket=e["blanket"],
                                          model=e["model"],
                                          pck=float(e["pck"]),
                                          nme=float(e["nme"])))
    report = metrics.build_report(rows)
    print(report.render_text(), end="")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


_HANDLERS = {"bake": _cmd_bake, "render": _cmd_render,
             "composite": _cmd_composite, "validate": _cmd_validate,
             "eval": _cmd_eval, "report": _cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Bg2Error as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
