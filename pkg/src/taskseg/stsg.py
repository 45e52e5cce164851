"""Spatio-temporal scene graph: node registry, frames and frame-stream queries.

Frames store the hand and object adjacency sparsely: each hand's grasp set and
the set of undirected object edges ``(i, j)`` with ``i < j``.  Dense 0/1
matrices are available on demand through :meth:`FrameRecord.hand_matrix` and
:meth:`FrameRecord.adjacency_matrix`, and :meth:`FrameRecord.from_matrices`
builds a frame from dense input with full validation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DisassemblyError,
    DisassemblyWarning,
    DuplicateNode,
    EmptyRegistry,
    IndexRange,
    MatrixShape,
    TimeOrder,
    ValidationError,
)

N_JOINTS = 21
QUAT_TOL = 1e-6


class Category(str, Enum):
    PART = "part"
    TOOL = "tool"


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class EdgeKind(str, Enum):
    PART_PART = "part_part"
    TOOL_PART = "tool_part"


@dataclass(frozen=True)
class ObjectNode:
    id: int
    name: str
    category: Category

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))

    @property
    def is_tool(self) -> bool:
        return self.category is Category.TOOL


@dataclass(frozen=True)
class Pose6DoF:
    """Position in meters and a unit quaternion ``(x, y, z, w)``."""

    position: tuple[float, float, float]
    rotation: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        pos = tuple(map(float, self.position))
        rot = tuple(map(float, self.rotation))
        if len(pos) != 3 or len(rot) != 4:
            raise ValidationError("pose needs a 3-vector and a 4-component quaternion")
        if not all(map(math.isfinite, pos + rot)):
            raise ValidationError("pose has non-finite components")
        norm = math.hypot(*rot)
        if abs(norm - 1.0) > QUAT_TOL:
            raise ValidationError(f"quaternion norm {norm!r} is not 1")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def normalized(cls, position, rotation) -> "Pose6DoF":
        q = np.asarray(rotation, dtype=float)
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ValidationError("zero quaternion")
        return cls(tuple(position), tuple(float(v) for v in q / norm))


@dataclass(frozen=True)
class HandState:
    side: Side
    joints: tuple[Pose6DoF, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "side", Side(self.side))
        if self.joints is not None:
            joints = tuple(self.joints)
            if len(joints) != N_JOINTS:
                raise ValidationError(f"hand needs {N_JOINTS} joints, got {len(joints)}")
            object.__setattr__(self, "joints", joints)


def _empty_hands() -> tuple[HandState, HandState]:
    return (HandState(Side.LEFT), HandState(Side.RIGHT))


_EMPTY: frozenset = frozenset()


@dataclass(frozen=True)
class FrameRecord:
    """One time slice of a recording.

    ``hand_adjacency`` is the pair (left, right) of grasped object ids, i.e. the
    nonzero columns of each row of H.  ``adjacency`` holds the nonzero upper
    triangle of A.
    """

    index: int
    timestamp: float
    hand_adjacency: tuple[frozenset[int], frozenset[int]] = (_EMPTY, _EMPTY)
    adjacency: frozenset[tuple[int, int]] = _EMPTY
    hands: tuple[HandState, HandState] = field(default_factory=_empty_hands)
    object_poses: Mapping[int, Pose6DoF] = field(default_factory=dict)

    @classmethod
    def from_matrices(
        cls,
        index: int,
        timestamp: float,
        hand_matrix,
        adjacency_matrix,
        hands: tuple[HandState, HandState] | None = None,
        object_poses: Mapping[int, Pose6DoF] | None = None,
    ) -> "FrameRecord":
        H = np.asarray(hand_matrix)
        A = np.asarray(adjacency_matrix)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise MatrixShape(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if H.shape != (2, n):
            raise MatrixShape(f"H must have shape (2, {n}), got {H.shape}")
        if not np.isin(H, (0, 1)).all():
            raise MatrixShape("H entries must be 0 or 1")
        if not np.isin(A, (0, 1)).all():
            raise MatrixShape("A entries must be 0 or 1")
        if (A != A.T).any():
            i, j = np.argwhere(A != A.T)[0]
            raise MatrixShape(f"A is not symmetric at ({i}, {j})")
        if np.diagonal(A).any():
            raise MatrixShape("A must have a zero diagonal")
        grasps = tuple(frozenset(int(j) for j in np.flatnonzero(row)) for row in H)
        iu, ju = np.nonzero(np.triu(A, 1))
        edges = frozenset(zip(iu.tolist(), ju.tolist()))
        return cls(
            index,
            float(timestamp),
            grasps,
            edges,
            hands if hands is not None else _empty_hands(),
            dict(object_poses or {}),
        )

    def hand_matrix(self, n: int) -> np.ndarray:
        H = np.zeros((2, n), dtype=np.uint8)
        for row, ids in enumerate(self.hand_adjacency):
            H[row, list(ids)] = 1
        return H

    def adjacency_matrix(self, n: int) -> np.ndarray:
        A = np.zeros((n, n), dtype=np.uint8)
        for i, j in self.adjacency:
            A[i, j] = A[j, i] = 1
        return A

    @property
    def grasped(self) -> frozenset[int]:
        left, right = self.hand_adjacency
        return left | right


@dataclass(frozen=True)
class ConnectionEvent:
    frame_index: int
    timestamp: float
    i: int
    j: int
    kind: EdgeKind


@dataclass
class PartGraph:
    """Undirected simple graph; ``adj`` maps every node to its neighbor set."""

    adj: dict[int, set[int]]

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> "PartGraph":
        adj: dict[int, set[int]] = {n: set() for n in nodes}
        for i, j in edges:
            if i == j:
                raise MatrixShape(f"self loop on node {i}")
            adj[i].add(j)
            adj[j].add(i)
        return cls(adj)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.adj)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((i, j) for i, nbrs in self.adj.items() for j in nbrs if i < j)

    def degree(self, node: int) -> int:
        return len(self.adj[node])

    def __len__(self) -> int:
        return len(self.adj)


@dataclass
class Recording:
    """Node registry plus time-ordered frame stream."""

    nodes: tuple[ObjectNode, ...]
    frame_rate: float
    frames: list[FrameRecord] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self.frame_rate = float(self.frame_rate)
        self._is_tool = [n.is_tool for n in self.nodes]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def part_ids(self) -> list[int]:
        return [n.id for n in self.nodes if not n.is_tool]

    @property
    def tool_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_tool]

    def is_tool(self, node_id: int) -> bool:
        return self._is_tool[node_id]

    def edge_kind(self, i: int, j: int) -> EdgeKind:
        return EdgeKind.TOOL_PART if self._is_tool[i] or self._is_tool[j] else EdgeKind.PART_PART

    def frame(self, index: int) -> FrameRecord:
        if not 0 <= index < len(self.frames):
            raise IndexRange(f"frame {index} out of range [0, {len(self.frames)})")
        return self.frames[index]

    @property
    def duration(self) -> float:
        """Covered time span: last timestamp plus one frame period."""
        if not self.frames:
            return 0.0
        return self.frames[-1].timestamp + 1.0 / self.frame_rate

    def append(self, frame: FrameRecord) -> None:
        append_frame(self, frame)


def new_recording(nodes: Sequence[ObjectNode | tuple[str, str]], frame_rate: float) -> Recording:
    """Create an empty recording; ids are reassigned 0..N-1 in list order."""
    if not nodes:
        raise EmptyRegistry("node list is empty")
    if not frame_rate > 0 or not math.isfinite(frame_rate):
        raise ValidationError(f"frame_rate must be positive, got {frame_rate!r}")
    registry = []
    seen = set()
    for idx, node in enumerate(nodes):
        if isinstance(node, ObjectNode):
            name, category = node.name, node.category
        else:
            name, category = node
        if not name:
            raise ValidationError(f"node {idx} has an empty name")
        if name in seen:
            raise DuplicateNode(f"duplicate node name {name!r}")
        seen.add(name)
        registry.append(ObjectNode(idx, name, Category(category)))
    return Recording(tuple(registry), frame_rate)


def _check_frame(rec: Recording, frame: FrameRecord, prev: FrameRecord | None) -> None:
    n = rec.n_nodes
    expected = len(rec.frames)
    if frame.index != expected:
        raise ValidationError(f"frame index {frame.index}, expected {expected}", frame=frame.index)
    if not math.isfinite(frame.timestamp) or frame.timestamp < 0:
        raise ValidationError(f"bad timestamp {frame.timestamp!r}", frame=frame.index)
    if prev is not None and not frame.timestamp > prev.timestamp:
        raise TimeOrder(
            f"frame {frame.index}: timestamp {frame.timestamp!r} not after {prev.timestamp!r}"
        )
    if len(frame.hand_adjacency) != 2:
        raise MatrixShape("H must have exactly two rows")
    for row, ids in enumerate(frame.hand_adjacency):
        if prev is not None and ids is prev.hand_adjacency[row]:
            continue
        for j in ids:
            if not (isinstance(j, (int, np.integer)) and 0 <= j < n):
                raise MatrixShape(f"frame {frame.index}: H column {j!r} outside [0, {n})")
    if prev is None or frame.adjacency is not prev.adjacency:
        for edge in frame.adjacency:
            i, j = edge
            if not (0 <= i < j < n):
                raise MatrixShape(f"frame {frame.index}: edge {edge} invalid for N={n}")
            if rec.is_tool(i) and rec.is_tool(j):
                raise MatrixShape(f"frame {frame.index}: tool-tool edge {edge}")
    if len(frame.hands) != 2 or frame.hands[0].side is not Side.LEFT or frame.hands[1].side is not Side.RIGHT:
        raise ValidationError("hands must be (left, right)", frame=frame.index)
    for key in frame.object_poses:
        if not 0 <= key < n:
            raise ValidationError(f"pose for unknown object {key}", frame=frame.index)


def append_frame(rec: Recording, frame: FrameRecord) -> None:
    prev = rec.frames[-1] if rec.frames else None
    _check_frame(rec, frame, prev)
    rec.frames.append(frame)


def connection_events(rec: Recording, allow_initial_edges: bool = True) -> list[ConnectionEvent]:
    """All 0->1 transitions of A, ordered by (frame, i, j).

    Edges already present in frame 0 count as pre-assembled unless
    ``allow_initial_edges`` is false.
    """
    if not rec.frames:
        raise IndexRange("recording has no frames")
    events = []
    first = rec.frames[0]
    if not allow_initial_edges:
        for i, j in sorted(first.adjacency):
            events.append(ConnectionEvent(0, first.timestamp, i, j, rec.edge_kind(i, j)))
    prev = first.adjacency
    for frame in rec.frames[1:]:
        cur = frame.adjacency
        if cur is not prev:
            for i, j in sorted(cur - prev):
                events.append(ConnectionEvent(frame.index, frame.timestamp, i, j, rec.edge_kind(i, j)))
        prev = cur
    return events


def disassembly_events(rec: Recording) -> list[tuple[int, int, int]]:
    """Part-part 1->0 transitions as ``(frame_index, i, j)``."""
    out = []
    for a, b in zip(rec.frames, rec.frames[1:]):
        if a.adjacency is b.adjacency:
            continue
        for i, j in sorted(a.adjacency - b.adjacency):
            if rec.edge_kind(i, j) is EdgeKind.PART_PART:
                out.append((b.index, i, j))
    return out


def check_monotone(rec: Recording, strict: bool = False) -> None:
    """Warn about (or, if ``strict``, reject) removed part-part edges."""
    removed = disassembly_events(rec)
    if not removed:
        return
    f, i, j = removed[0]
    msg = f"{len(removed)} part-part edge removal(s), first ({i}, {j}) at frame {f}"
    if strict:
        raise DisassemblyError(msg)
    warnings.warn(msg, DisassemblyWarning, stacklevel=2)


def grasped_objects(rec: Recording, frame_index: int) -> set[int]:
    return set(rec.frame(frame_index).grasped)


def part_connectivity_at(rec: Recording, frame_index: int) -> PartGraph:
    """Part-only graph at a frame; tool-part edges are dropped."""
    frame = rec.frame(frame_index)
    edges = [(i, j) for i, j in frame.adjacency if not (rec.is_tool(i) or rec.is_tool(j))]
    return PartGraph.from_edges(rec.part_ids, edges)
