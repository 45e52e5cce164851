"""Fine/coarse breakpoint detection over a recording's connection events.

Every part-part connection that merges two components is classified by the
first matching rule:

``OriginConnection``
    one side already contains the origin.
``CentralUpdate``
    the merged component's central object (maximal origin weight, smallest
    id on ties) differs from the central object of the first-listed
    endpoint's component before the merge.
``SubAssembly``
    any other merge; it necessarily forms or grows a group without the origin.

Connections inside an existing component change nothing and are skipped.
Consecutive fine breakpoints are merged into coarse ones when they share a
central object or their non-central endpoints carry the same category-group
label.  Refinement moves each breakpoint forward to the first frame where no
hand grasps an involved object.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import NestingError, RegistryMismatch
from .ocg import OriginCentricGraph, build_ocg
from .recording_io import Level
from .stsg import FrameRecord, ObjectNode, Recording, check_monotone, connection_events


class Rule(str, Enum):
    ORIGIN_CONNECTION = "OriginConnection"
    CENTRAL_UPDATE = "CentralUpdate"
    SUB_ASSEMBLY = "SubAssembly"
    COARSE_MERGE = "CoarseMerge"


@dataclass(frozen=True)
class Breakpoint:
    level: Level
    rule: Rule
    raw_frame: int
    raw_time: float
    refined_frame: int
    refined_time: float
    objects: frozenset[int]
    # bookkeeping for coarse merging and refinement; not serialized
    edge: tuple[int, int] | None = field(default=None, compare=False)
    center: int | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "objects", frozenset(self.objects))
        if self.refined_frame < self.raw_frame:
            raise ValueError(f"refined_frame {self.refined_frame} before raw_frame {self.raw_frame}")
        if (self.level is Level.COARSE) != (self.rule is Rule.COARSE_MERGE):
            raise ValueError(f"{self.level.value} breakpoint cannot carry rule {self.rule.value}")

    def to_dict(self) -> dict:
        return {
            "level": self.level.value,
            "rule": self.rule.value,
            "raw_frame": self.raw_frame,
            "raw_time": self.raw_time,
            "refined_frame": self.refined_frame,
            "refined_time": self.refined_time,
            "objects": sorted(self.objects),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Breakpoint":
        return cls(
            Level(d["level"]),
            Rule(d["rule"]),
            int(d["raw_frame"]),
            float(d["raw_time"]),
            int(d["refined_frame"]),
            float(d["refined_time"]),
            frozenset(int(o) for o in d["objects"]),
        )


class GroupState:
    """Merge-only union-find over parts that tracks each component's central object."""

    def __init__(self, parts: Iterable[int], weight: Mapping[int, float]):
        self.weight = weight
        self.parent = {p: p for p in parts}
        self.size = dict.fromkeys(self.parent, 1)
        self.center = {p: p for p in self.parent}

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def central(self, x: int) -> int:
        return self.center[self.find(x)]

    def _better(self, a: int, b: int) -> int:
        wa, wb = self.weight[a], self.weight[b]
        if wa != wb:
            return a if wa > wb else b
        return min(a, b)

    def union(self, i: int, j: int) -> int | None:
        """Merge the components of ``i`` and ``j``; returns the new central object."""
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return None
        center = self._better(self.center[ri], self.center[rj])
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        self.center[ri] = center
        return center


def _involved_tools(is_tool: Sequence[bool], frame: FrameRecord, parts: Iterable[int]) -> set[int]:
    parts = set(parts)
    tools = set()
    for a, b in frame.adjacency:
        if is_tool[a] and b in parts:
            tools.add(a)
        elif is_tool[b] and a in parts:
            tools.add(b)
    return tools


class FineDetector:
    """Incremental fine-breakpoint detector; feed frames in order with :meth:`push`."""

    def __init__(self, nodes: Sequence[ObjectNode], ocg: OriginCentricGraph, allow_initial_edges: bool = True):
        parts = [n.id for n in nodes if not n.is_tool]
        if sorted(ocg.weight) != parts:
            raise RegistryMismatch("OCG nodes do not match the recording's part nodes")
        self.is_tool = [n.is_tool for n in nodes]
        self.ocg = ocg
        self.state = GroupState(parts, ocg.weight)
        self.allow_initial_edges = allow_initial_edges
        self._prev: frozenset | None = None

    def _part_edge(self, i: int, j: int) -> bool:
        return not (self.is_tool[i] or self.is_tool[j])

    def connect(self, frame: FrameRecord, i: int, j: int) -> Breakpoint | None:
        """Apply one part-part connection (``i < j``) seen at ``frame``."""
        state = self.state
        ri, rj = state.find(i), state.find(j)
        if ri == rj:
            return None
        ro = state.find(self.ocg.origin)
        before = state.center[ri]
        after = state.union(i, j)
        if ri == ro or rj == ro:
            rule = Rule.ORIGIN_CONNECTION
        elif after != before:
            rule = Rule.CENTRAL_UPDATE
        else:
            rule = Rule.SUB_ASSEMBLY
        objects = {i, j} | _involved_tools(self.is_tool, frame, (i, j))
        return Breakpoint(
            Level.FINE, rule, frame.index, frame.timestamp, frame.index, frame.timestamp,
            frozenset(objects), edge=(i, j), center=after,
        )

    def push(self, frame: FrameRecord) -> list[Breakpoint]:
        prev = self._prev
        self._prev = frame.adjacency
        if prev is None:
            if self.allow_initial_edges:
                for i, j in frame.adjacency:
                    if self._part_edge(i, j):
                        self.state.union(i, j)
                return []
            new = frame.adjacency
        elif frame.adjacency is prev:
            return []
        else:
            new = frame.adjacency - prev
        out = []
        for i, j in sorted(new):
            if self._part_edge(i, j):
                bp = self.connect(frame, i, j)
                if bp is not None:
                    out.append(bp)
        return out


def detect_fine(rec: Recording, ocg: OriginCentricGraph, allow_initial_edges: bool = True) -> list[Breakpoint]:
    """Unrefined fine breakpoints (``refined_frame == raw_frame``)."""
    det = FineDetector(rec.nodes, ocg, allow_initial_edges)
    if not rec.frames:
        return []
    if allow_initial_edges:
        for i, j in rec.frames[0].adjacency:
            if det._part_edge(i, j):
                det.state.union(i, j)
    out = []
    for ev in connection_events(rec, allow_initial_edges):
        if not det._part_edge(ev.i, ev.j):
            continue
        bp = det.connect(rec.frames[ev.frame_index], ev.i, ev.j)
        if bp is not None:
            out.append(bp)
    return out


_NUMERIC_SUFFIX = re.compile(r"[\s_\-.]*\d+$")


def category_label(name: str, groups: Mapping[str, str] | None = None) -> str:
    """Group label for coarse merging: explicit map entry, else the name minus a numeric suffix."""
    if groups and name in groups:
        return groups[name]
    return _NUMERIC_SUFFIX.sub("", name) or name


def _annotate(fine: list[Breakpoint], rec: Recording, ocg: OriginCentricGraph) -> list[Breakpoint]:
    # recover edge/center for breakpoints that came from a document
    fresh = {
        (bp.raw_frame, bp.edge): bp for bp in detect_fine(rec, ocg)
    }
    out = []
    for bp in fine:
        parts = tuple(sorted(o for o in bp.objects if not rec.is_tool(o)))
        match = fresh.get((bp.raw_frame, parts))
        if match is None:
            raise RegistryMismatch(f"fine breakpoint at frame {bp.raw_frame} has no matching connection")
        out.append(replace(bp, edge=match.edge, center=match.center))
    return out


def detect_coarse(
    fine: list[Breakpoint],
    rec: Recording,
    ocg: OriginCentricGraph,
    groups: Mapping[str, str] | None = None,
) -> list[Breakpoint]:
    """Merge runs of fine breakpoints; one unrefined coarse breakpoint per run, at its last frame."""
    if any(bp.edge is None or bp.center is None for bp in fine):
        fine = _annotate(fine, rec, ocg)
    labels = [category_label(n.name, groups) for n in rec.nodes]

    def side_labels(bp: Breakpoint) -> frozenset[str]:
        return frozenset(labels[x] for x in bp.edge if x != bp.center)

    runs: list[list[Breakpoint]] = []
    for bp in fine:
        if runs:
            last = runs[-1][-1]
            same_center = last.center == bp.center
            la = side_labels(last)
            if same_center or (la and la == side_labels(bp)):
                runs[-1].append(bp)
                continue
        runs.append([bp])

    coarse = []
    for run in runs:
        end = run[-1]
        objects = frozenset().union(*(bp.objects for bp in run))
        coarse.append(
            Breakpoint(
                Level.COARSE, Rule.COARSE_MERGE, end.raw_frame, end.raw_time,
                end.raw_frame, end.raw_time, objects, edge=end.edge, center=end.center,
            )
        )
    return coarse


def relevant_objects(bp: Breakpoint, rec: Recording) -> set[int]:
    """Triggering parts plus every tool touching one of them at the raw frame."""
    base = set(bp.edge) if bp.edge is not None else set(bp.objects)
    parts = [o for o in base if not rec.is_tool(o)]
    return base | _involved_tools(rec._is_tool, rec.frames[bp.raw_frame], parts)


def refine(
    bps: list[Breakpoint], rec: Recording, bound_by: list[Breakpoint] | None = None
) -> list[Breakpoint]:
    """Shift breakpoints forward to the first frame with every relevant object released.

    The search for a breakpoint at frame ``t`` stops before the next raw
    frame ``> t`` among ``bound_by`` (default: ``bps`` itself) or at the end
    of the recording; if no release is found it lands on the last frame
    before that bound.  The result is sorted by refined frame, and
    breakpoints landing on the same frame keep only the earliest raw event.
    """
    bounds = sorted({bp.raw_frame for bp in (bps if bound_by is None else bound_by)})
    n_frames = len(rec.frames)
    refined = []
    for pos, bp in enumerate(bps):
        t = bp.raw_frame
        k = bisect.bisect_right(bounds, t)
        stop = bounds[k] if k < len(bounds) else n_frames
        relevant = relevant_objects(bp, rec)
        f = t
        while f < stop:
            left, right = rec.frames[f].hand_adjacency
            if not (relevant & left or relevant & right):
                break
            f += 1
        else:
            f = stop - 1
        refined.append((f, t, pos, replace(bp, refined_frame=f, refined_time=rec.frames[f].timestamp)))
    refined.sort(key=lambda item: item[:3])
    out: list[Breakpoint] = []
    for f, _, _, bp in refined:
        if out and out[-1].refined_frame == f:
            continue
        out.append(bp)
    return out


@dataclass(frozen=True)
class Segment:
    start: float
    end: float


@dataclass(frozen=True)
class CoarseSegment:
    start: float
    end: float
    fine: tuple[Segment, ...]


@dataclass(frozen=True)
class SegmentTree:
    duration: float
    coarse: tuple[CoarseSegment, ...]

    @property
    def fine(self) -> list[Segment]:
        return [s for c in self.coarse for s in c.fine]

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "coarse": [
                {
                    "start": c.start,
                    "end": c.end,
                    "fine": [{"start": s.start, "end": s.end} for s in c.fine],
                }
                for c in self.coarse
            ],
        }


def _times(values: Iterable, duration: float, what: str) -> list[float]:
    times = [v.refined_time if isinstance(v, Breakpoint) else float(v) for v in values]
    if any(b < a for a, b in zip(times, times[1:])):
        raise NestingError(f"{what} boundaries are not sorted")
    if times and (times[0] < 0 or times[-1] > duration):
        raise NestingError(f"{what} boundaries fall outside [0, {duration}]")
    return sorted({t for t in times if 0 < t < duration})


def build_segments(fine: Sequence, coarse: Sequence, duration: float) -> SegmentTree:
    """Nested partition of ``[0, duration]``; accepts breakpoints or plain times."""
    fine_t = _times(fine, duration, "fine")
    coarse_t = _times(coarse, duration, "coarse")
    fine_set = set(fine_t)
    missing = [t for t in coarse_t if t not in fine_set]
    if missing:
        raise NestingError(f"coarse boundary {missing[0]} is not a fine boundary")

    fine_edges = [0.0, *fine_t, float(duration)]
    coarse_edges = [0.0, *coarse_t, float(duration)]
    out = []
    k = 0
    for start, end in zip(coarse_edges, coarse_edges[1:]):
        segs = []
        while k + 1 < len(fine_edges) and fine_edges[k + 1] <= end:
            segs.append(Segment(fine_edges[k], fine_edges[k + 1]))
            k += 1
        out.append(CoarseSegment(start, end, tuple(segs)))
    return SegmentTree(float(duration), tuple(out))


@dataclass(frozen=True)
class SegmentationResult:
    ocg: OriginCentricGraph | None
    fine: list[Breakpoint]
    coarse: list[Breakpoint]
    tree: SegmentTree


def run_pipeline(
    rec: Recording,
    *,
    final_frame: int | None = None,
    groups: Mapping[str, str] | None = None,
    refine_breakpoints: bool = True,
    strict_connected: bool = False,
    strict_monotone: bool = False,
    allow_initial_edges: bool = True,
) -> SegmentationResult:
    """build_ocg -> detect_fine -> detect_coarse -> refine -> build_segments."""
    if not rec.frames:
        return SegmentationResult(None, [], [], build_segments([], [], 0.0))
    check_monotone(rec, strict_monotone)
    ocg = build_ocg(rec, final_frame, strict_connected)
    fine = detect_fine(rec, ocg, allow_initial_edges)
    coarse = detect_coarse(fine, rec, ocg, groups)
    if refine_breakpoints:
        # coarse searches use the fine bounds so each lands on its last fine's frame
        coarse = refine(coarse, rec, bound_by=fine)
        fine = refine(fine, rec)
    tree = build_segments(fine, coarse, rec.duration)
    return SegmentationResult(ocg, fine, coarse, tree)


def segment(rec: Recording, **kwargs) -> SegmentTree:
    return run_pipeline(rec, **kwargs).tree
