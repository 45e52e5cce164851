"""``taskseg`` command line.

Exit codes: 0 success, 2 data error, 64 usage error.  Machine-readable
documents go to stdout (or ``--out``); human summaries and warnings go to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import DataError, IoError, ParseError
from .evaluation import (
    DEFAULT_BIN,
    DEFAULT_EPS,
    DEFAULT_MIN_SAMPLES,
    DEFAULT_TOLERANCE,
    annotation_summary,
    bin_annotations,
    cluster_ground_truth,
    evaluate,
)
from .ocg import build_ocg
from .recording_io import (
    Level,
    breakpoints_document,
    dumps_document,
    dumps_recording,
    read_annotations,
    read_breakpoints,
    read_recording,
)
from .segmenter import run_pipeline
from .simgen import compile_plan, dumps_plan, loads_plan, oracle_breakpoints, preset_distributed, preset_star
from .stsg import EdgeKind, connection_events

EXIT_OK = 0
EXIT_DATA = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _open_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror or exc}") from None


def _load_recording(path: str):
    return read_recording(io.BytesIO(_open_bytes(path)))


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"{out}: {exc.strerror or exc}") from None


def _load_groups(path: str | None) -> dict[str, str] | None:
    if path is None:
        return None
    try:
        doc = json.loads(_open_bytes(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in doc.items()):
        raise ParseError(f"{path}: group map must be a JSON object of name -> label")
    return doc


def cmd_validate(args) -> int:
    rec = _load_recording(args.path)
    events = connection_events(rec) if rec.frames else []
    parts = sum(1 for e in events if e.kind is EdgeKind.PART_PART)
    print(f"N={rec.n_nodes}, frames={len(rec.frames)}, events={parts}, tool_events={len(events) - parts}")
    return EXIT_OK


def cmd_ocg(args) -> int:
    rec = _load_recording(args.path)
    ocg = build_ocg(rec, args.final_frame, args.strict_connected)
    _emit(dumps_document(ocg.to_dict(rec)), args.out)
    print(f"origin={ocg.origin} ({rec.nodes[ocg.origin].name}), connected={ocg.connected}", file=sys.stderr)
    return EXIT_OK


def cmd_segment(args) -> int:
    rec = _load_recording(args.path)
    res = run_pipeline(
        rec,
        final_frame=args.final_frame,
        groups=_load_groups(args.groups),
        refine_breakpoints=not args.no_refine,
        strict_connected=args.strict_connected,
        strict_monotone=args.strict_monotone,
    )
    chosen = []
    if args.level in ("fine", "both"):
        chosen += res.fine
    if args.level in ("coarse", "both"):
        chosen += res.coarse
    _emit(dumps_document(breakpoints_document(chosen)), args.out)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "rule", "raw_time", "refined_time"])
        for bp in chosen:
            w.writerow([bp.level.value, bp.rule.value, repr(bp.raw_time), repr(bp.refined_time)])
        _emit(buf.getvalue(), args.csv)
    print(f"fine={len(res.fine)}, coarse={len(res.coarse)}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.bin <= 0 or args.eps <= 0 or args.tolerance <= 0 or args.min_samples < 1:
        raise UsageError("--bin, --eps and --tolerance must be positive and --min-samples >= 1")
    level = Level(args.level)
    preds = read_breakpoints(io.BytesIO(_open_bytes(args.pred)))
    rows = read_annotations(io.BytesIO(_open_bytes(args.annotations)))
    level_rows = [r for r in rows if r.level is level]
    gt = cluster_ground_truth(bin_annotations(level_rows, args.bin), args.eps, args.min_samples, level)
    pred_times = [bp.refined_time for bp in preds if bp.level is level]
    report = evaluate(pred_times, gt, args.tolerance)
    doc = {
        "level": level.value,
        "params": {"bin": args.bin, "eps": args.eps, "min_samples": args.min_samples, "tolerance": args.tolerance},
        **report.to_dict(),
        "ground_truth": gt.to_dict(),
        "annotation_summary": annotation_summary(rows, level),
    }
    _emit(dumps_document(doc), args.out)
    print(
        f"n_gt={report.n_gt}, n_pred={report.n_pred}, precision={report.precision:.2f}, "
        f"recall={report.recall:.2f}, f1={report.f1:.2f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.plan is not None:
        plan = loads_plan(_open_bytes(args.plan).decode("utf-8"))
    elif args.preset == "star":
        plan = preset_star(args.k, args.spacing, args.release_delay, args.fps, args.seed)
    else:
        plan = preset_distributed(args.arms, args.depth, args.spacing, args.release_delay, args.fps, args.seed)
    rec = compile_plan(plan, poses=args.poses)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ocg = build_ocg(rec)
    oracle = oracle_breakpoints(plan, ocg)
    _emit(dumps_recording(rec), args.out)
    _emit(dumps_document(oracle.to_dict()), args.out + ".oracle.json")
    _emit(dumps_plan(plan), args.out + ".plan.json")
    print(f"frames={len(rec.frames)}, fine={len(oracle.fine)}, coarse={len(oracle.coarse)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taskseg", description="Task segmentation for assembly recordings.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="parse and validate a recording")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("ocg", help="origin-centric graph of the final assembly")
    o.add_argument("path")
    o.add_argument("--final-frame", type=int)
    o.add_argument("--strict-connected", action="store_true")
    o.add_argument("--out")
    o.set_defaults(func=cmd_ocg)

    s = sub.add_parser("segment", help="detect fine and coarse breakpoints")
    s.add_argument("path")
    s.add_argument("--level", choices=("fine", "coarse", "both"), default="both")
    s.add_argument("--no-refine", action="store_true")
    s.add_argument("--final-frame", type=int)
    s.add_argument("--groups", help="JSON map of node name -> category-group label")
    s.add_argument("--strict-connected", action="store_true")
    s.add_argument("--strict-monotone", action="store_true")
    s.add_argument("--csv", help="also write a breakpoint timeline CSV here")
    s.add_argument("--out")
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score breakpoints against annotations")
    e.add_argument("--pred", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--level", choices=("fine", "coarse"), default="fine")
    e.add_argument("--eps", type=float, default=DEFAULT_EPS)
    e.add_argument("--min-samples", type=int, default=DEFAULT_MIN_SAMPLES)
    e.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    e.add_argument("--bin", type=float, default=DEFAULT_BIN)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen", help="compile a preset or plan file into a recording plus oracle sidecar")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=("star", "distributed"))
    src.add_argument("--plan")
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--arms", type=int, default=4)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--spacing", type=float, default=2.0)
    g.add_argument("--release-delay", type=float, default=0.5)
    g.add_argument("--fps", type=float, default=60.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--poses", choices=("none", "objects", "full"), default="objects")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.func(args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except UsageError as exc:
        print(f"taskseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"taskseg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
