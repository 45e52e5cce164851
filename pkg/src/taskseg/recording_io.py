"""Line-delimited JSON persistence for recordings, plus annotation/breakpoint/report documents.

Recording files are UTF-8 with LF line endings.  Line 1 is the header::

    {"format":"taskseg/1","frame_rate":60.0,"n_nodes":3,"nodes":[{"id":0,"name":"hub","category":"part"},...]}

and every further line is one frame::

    {"index":0,"t":0.0,"grasp":{"left":[],"right":[2]},"edges":[[0,1,"part_part"]],"poses":{"0":[x,y,z,qx,qy,qz,qw]},"hands":{"left":null,"right":null}}

``poses`` and ``hands`` are omitted when empty.  Floats are written with
Python's shortest round-trip ``repr``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import IO, Any, Iterable

from .errors import DataError, IoError, ParseError, ValidationError, VersionError
from .stsg import (
    Category,
    EdgeKind,
    FrameRecord,
    HandState,
    ObjectNode,
    Pose6DoF,
    Recording,
    Side,
    append_frame,
)

FORMAT_VERSION = "taskseg/1"
BREAKPOINTS_VERSION = "taskseg-breakpoints/1"
ANNOTATION_HEADER = ["participant_id", "time_s", "group_tag", "level"]


class Level(str, Enum):
    FINE = "fine"
    COARSE = "coarse"


@dataclass(frozen=True)
class AnnotationRow:
    participant_id: str
    time: float
    group_tag: str
    level: Level


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _pose_list(p: Pose6DoF) -> list[float]:
    return [*p.position, *p.rotation]


def _edge_list(rec: Recording, adjacency) -> list:
    return [[i, j, rec.edge_kind(i, j).value] for i, j in sorted(adjacency)]


def _frame_line(frame: FrameRecord, grasp_json: str, edges_json: str) -> str:
    # index, t, grasp and edges are spliced in by hand; the optional tail goes through json
    head = f'{{"index":{frame.index},"t":{_dumps(frame.timestamp)},"grasp":{grasp_json},"edges":{edges_json}'
    tail: dict[str, Any] = {}
    if frame.object_poses:
        tail["poses"] = {str(k): _pose_list(frame.object_poses[k]) for k in sorted(frame.object_poses)}
    if any(h.joints is not None for h in frame.hands):
        tail["hands"] = {
            h.side.value: None if h.joints is None else [_pose_list(j) for j in h.joints]
            for h in frame.hands
        }
    if not tail:
        return head + "}"
    return head + "," + _dumps(tail)[1:]


def header_line(rec: Recording) -> str:
    return _dumps(
        {
            "format": FORMAT_VERSION,
            "frame_rate": rec.frame_rate,
            "n_nodes": rec.n_nodes,
            "nodes": [{"id": n.id, "name": n.name, "category": n.category.value} for n in rec.nodes],
        }
    )


def dumps_recording(rec: Recording) -> str:
    lines = [header_line(rec)]
    grasp_key = edge_key = None
    grasp_json = edges_json = ""
    for f in rec.frames:
        # consecutive frames usually repeat their grasp and edge sets
        if f.hand_adjacency != grasp_key:
            grasp_key = f.hand_adjacency
            left, right = grasp_key
            grasp_json = _dumps({"left": sorted(left), "right": sorted(right)})
        if f.adjacency is not edge_key and f.adjacency != edge_key:
            edge_key = f.adjacency
            edges_json = _dumps(_edge_list(rec, edge_key))
        lines.append(_frame_line(f, grasp_json, edges_json))
    return "\n".join(lines) + "\n"


def write_recording(rec: Recording, sink: IO[bytes]) -> None:
    try:
        sink.write(dumps_recording(rec).encode("utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _require(doc: dict, key: str, types, lineno: int):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", lineno)
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, types):
        raise ParseError(f"field {key!r} has wrong type {type(value).__name__}", lineno)
    return value


def _parse_pose(values, lineno: int, frame: int | None) -> Pose6DoF:
    if type(values) is not list or len(values) != 7 or not all(type(v) in _NUMBER_TYPES for v in values):
        raise ParseError("pose must be a list of 7 numbers", lineno)
    try:
        return Pose6DoF(tuple(values[:3]), tuple(values[3:]))
    except ValidationError as exc:
        raise ValidationError(exc.reason, frame=frame, line=lineno) from None


_NUMBER_TYPES = (int, float)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_header(line: str) -> Recording:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", 1) from None
    if not isinstance(doc, dict):
        raise ParseError("header must be an object", 1)
    version = doc.get("format")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format {version!r}, expected {FORMAT_VERSION!r}")
    frame_rate = _require(doc, "frame_rate", (int, float), 1)
    n_nodes = _require(doc, "n_nodes", int, 1)
    raw_nodes = _require(doc, "nodes", list, 1)
    if not frame_rate > 0 or not math.isfinite(frame_rate):
        raise ValidationError(f"frame_rate must be positive, got {frame_rate!r}", line=1)
    if len(raw_nodes) != n_nodes:
        raise ValidationError(f"n_nodes={n_nodes} but {len(raw_nodes)} nodes listed", line=1)
    if not raw_nodes:
        raise ValidationError("node registry is empty", line=1)
    nodes = []
    names = set()
    for pos, nd in enumerate(raw_nodes):
        if not isinstance(nd, dict):
            raise ParseError("node entries must be objects", 1)
        nid = _require(nd, "id", int, 1)
        name = _require(nd, "name", str, 1)
        cat = _require(nd, "category", str, 1)
        if nid != pos:
            raise ValidationError(f"node ids must be dense; got {nid} at position {pos}", line=1)
        if not name:
            raise ValidationError(f"node {nid} has an empty name", line=1)
        if name in names:
            raise ValidationError(f"duplicate node name {name!r}", line=1)
        names.add(name)
        try:
            category = Category(cat)
        except ValueError:
            raise ParseError(f"unknown category {cat!r}", 1) from None
        nodes.append(ObjectNode(nid, name, category))
    return Recording(tuple(nodes), frame_rate)


_NO_HANDS = (HandState(Side.LEFT), HandState(Side.RIGHT))


def _parse_grasp(grasp: dict, n: int, index: int, lineno: int) -> tuple[frozenset[int], frozenset[int]]:
    if set(grasp) - {"left", "right"}:
        raise ParseError("grasp has unexpected keys", lineno)
    hand_sets = []
    for side in ("left", "right"):
        ids = grasp.get(side)
        if not isinstance(ids, list) or not all(_is_int(j) for j in ids):
            raise ParseError(f"grasp.{side} must be a list of integers", lineno)
        if ids != sorted(set(ids)):
            raise ParseError(f"grasp.{side} must be sorted and unique", lineno)
        for j in ids:
            if not 0 <= j < n:
                raise ValidationError(f"grasped object {j} outside [0, {n})", frame=index, line=lineno)
        hand_sets.append(frozenset(ids))
    return hand_sets[0], hand_sets[1]


def _parse_edges(rec: Recording, raw_edges: list, index: int, lineno: int) -> frozenset[tuple[int, int]]:
    n = rec.n_nodes
    edges = []
    for e in raw_edges:
        if not (isinstance(e, list) and len(e) == 3 and _is_int(e[0]) and _is_int(e[1]) and isinstance(e[2], str)):
            raise ParseError("edge must be [i, j, kind]", lineno)
        i, j, kind = e
        if not 0 <= i < j < n:
            raise ValidationError(f"edge ({i}, {j}) invalid for N={n}", frame=index, line=lineno)
        if rec.is_tool(i) and rec.is_tool(j):
            raise ValidationError(f"tool-tool edge ({i}, {j})", frame=index, line=lineno)
        try:
            kind = EdgeKind(kind)
        except ValueError:
            raise ParseError(f"unknown edge kind {kind!r}", lineno) from None
        if kind is not rec.edge_kind(i, j):
            raise ValidationError(f"edge ({i}, {j}) tagged {kind.value}", frame=index, line=lineno)
        edges.append((i, j))
    if edges != sorted(set(edges)):
        raise ParseError("edges must be sorted and unique", lineno)
    return frozenset(edges)


def _parse_poses(raw_poses, n: int, index: int, lineno: int) -> dict[int, Pose6DoF]:
    if not isinstance(raw_poses, dict):
        raise ParseError("poses must be an object", lineno)
    poses = {}
    for key, values in raw_poses.items():
        if not key.isdigit():
            raise ParseError(f"pose key {key!r} is not an object id", lineno)
        oid = int(key)
        if not 0 <= oid < n:
            raise ValidationError(f"pose for unknown object {oid}", frame=index, line=lineno)
        poses[oid] = _parse_pose(values, lineno, index)
    return poses


def _parse_hands(raw_hands, index: int, lineno: int) -> tuple[HandState, HandState]:
    if not isinstance(raw_hands, dict):
        raise ParseError("hands must be an object", lineno)
    hands = list(_NO_HANDS)
    for pos, side in enumerate((Side.LEFT, Side.RIGHT)):
        joints = raw_hands.get(side.value)
        if joints is None:
            continue
        if not isinstance(joints, list):
            raise ParseError(f"hands.{side.value} must be a list", lineno)
        parsed = tuple(_parse_pose(j, lineno, index) for j in joints)
        try:
            hands[pos] = HandState(side, parsed)
        except ValidationError as exc:
            raise ValidationError(exc.reason, frame=index, line=lineno) from None
    return hands[0], hands[1]


def _parse_frame(
    rec: Recording, line: str, lineno: int, prev: tuple[FrameRecord, dict] | None = None
) -> tuple[FrameRecord, dict]:
    """Parse one frame line; ``prev`` is the previous frame and its raw JSON object."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("frame line must be an object", lineno)
    index = _require(doc, "index", int, lineno)
    t = _require(doc, "t", (int, float), lineno)
    grasp = _require(doc, "grasp", dict, lineno)
    raw_edges = _require(doc, "edges", list, lineno)

    # values equal to the previous line's were validated there; share its sets
    prev_frame, prev_doc = prev if prev is not None else (None, {})
    if prev_frame is not None and grasp == prev_doc["grasp"]:
        hand_sets = prev_frame.hand_adjacency
    else:
        hand_sets = _parse_grasp(grasp, rec.n_nodes, index, lineno)
    if prev_frame is not None and raw_edges == prev_doc["edges"]:
        adjacency = prev_frame.adjacency
    else:
        adjacency = _parse_edges(rec, raw_edges, index, lineno)

    poses = _parse_poses(doc["poses"], rec.n_nodes, index, lineno) if "poses" in doc else {}
    hands = _parse_hands(doc["hands"], index, lineno) if doc.get("hands") is not None else _NO_HANDS
    return FrameRecord(index, float(t), hand_sets, adjacency, hands, poses), doc


def loads_recording(text: str) -> Recording:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file: missing header", 1)
    rec = _parse_header(lines[0])
    prev = None
    for lineno, line in enumerate(lines[1:], start=2):
        frame, doc = _parse_frame(rec, line, lineno, prev)
        try:
            append_frame(rec, frame)
        except ValidationError as exc:
            raise ValidationError(exc.reason, frame=frame.index, line=lineno) from None
        except DataError as exc:
            raise ValidationError(str(exc), frame=frame.index, line=lineno) from None
        prev = (frame, doc)
    return rec


def read_recording(source: IO[bytes]) -> Recording:
    try:
        data = source.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc.reason}") from None
    return loads_recording(text)


def read_annotations(source: IO[bytes] | IO[str]) -> list[AnnotationRow]:
    data = source.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header", 1) from None
    if [h.strip() for h in header] != ANNOTATION_HEADER:
        raise ParseError(f"header must be {','.join(ANNOTATION_HEADER)}", 1)
    rows = []
    for record in reader:
        lineno = reader.line_num
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) != 4:
            raise ParseError(f"expected 4 columns, got {len(record)}", lineno)
        pid, time_s, tag, level = (c.strip() for c in record)
        try:
            t = float(time_s)
        except ValueError:
            raise ParseError(f"bad time {time_s!r}", lineno) from None
        try:
            lvl = Level(level)
        except ValueError:
            raise ParseError(f"bad level {level!r}", lineno) from None
        if not math.isfinite(t) or t < 0:
            raise ValidationError(f"time must be finite and >= 0, got {time_s}", line=lineno)
        if not pid or not tag:
            raise ParseError("participant_id and group_tag must be non-empty", lineno)
        rows.append(AnnotationRow(pid, t, tag, lvl))
    return rows


def write_annotations(rows: Iterable[AnnotationRow], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for r in rows:
        writer.writerow([r.participant_id, repr(float(r.time)), r.group_tag, Level(r.level).value])


def dumps_document(doc: Any) -> str:
    """Deterministic pretty JSON used for reports and breakpoint lists."""
    return json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def breakpoints_document(breakpoints) -> dict:
    return {
        "format": BREAKPOINTS_VERSION,
        "breakpoints": [bp.to_dict() for bp in breakpoints],
    }


def read_breakpoints(source: IO[bytes] | IO[str]):
    from .segmenter import Breakpoint

    data = source.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != BREAKPOINTS_VERSION:
        raise VersionError(f"expected a {BREAKPOINTS_VERSION!r} document")
    items = doc.get("breakpoints")
    if not isinstance(items, list):
        raise ParseError("breakpoints must be a list")
    try:
        return [Breakpoint.from_dict(item) for item in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad breakpoint record: {exc}") from None
