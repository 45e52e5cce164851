"""Scripted assembly plans, their compilation to recordings, and a breakpoint oracle.

A plan lists timed part-part connections, hand grasp windows and tool
manipulation windows.  ``compile_plan`` turns it into a frame stream;
``oracle_breakpoints`` re-derives the expected breakpoints straight from the
plan's event list and windows without touching the segmenter.

Time quantization: an instant ``t`` maps to the first frame whose timestamp
is ``>= t``; a window ``[start, end)`` is active on frames
``frame_of(start) <= f < frame_of(end)``.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import PlanError
from .ocg import OriginCentricGraph
from .stsg import (
    N_JOINTS,
    Category,
    FrameRecord,
    HandState,
    ObjectNode,
    Pose6DoF,
    Recording,
    Side,
)

PLAN_VERSION = "taskseg-plan/1"
POSE_MODES = ("none", "objects", "full")


@dataclass(frozen=True)
class GraspWindow:
    hand: Side
    obj: int
    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, "hand", Side(self.hand))


@dataclass(frozen=True)
class ToolUse:
    tool: int
    part: int
    start: float
    end: float


@dataclass(frozen=True)
class PlanStep:
    connect: tuple[int, int]
    time: float
    grasps: tuple[GraspWindow, ...] = ()
    tool: ToolUse | None = None


@dataclass(frozen=True)
class AssemblyPlan:
    nodes: tuple[ObjectNode, ...]
    steps: tuple[PlanStep, ...]
    duration: float
    frame_rate: float = 60.0
    seed: int = 0
    category_groups: Mapping[str, str] | None = None

    @property
    def n_frames(self) -> int:
        return math.floor(round(self.duration * self.frame_rate, 9)) + 1

    def frame_of(self, t: float) -> int:
        return math.ceil(round(t * self.frame_rate, 9))

    def to_dict(self) -> dict:
        return {
            "format": PLAN_VERSION,
            "frame_rate": self.frame_rate,
            "duration": self.duration,
            "seed": self.seed,
            "nodes": [{"id": n.id, "name": n.name, "category": n.category.value} for n in self.nodes],
            "category_groups": dict(sorted(self.category_groups.items())) if self.category_groups else None,
            "steps": [
                {
                    "connect": list(s.connect),
                    "time": s.time,
                    "grasps": [
                        {"hand": g.hand.value, "obj": g.obj, "start": g.start, "end": g.end} for g in s.grasps
                    ],
                    "tool": None
                    if s.tool is None
                    else {"tool": s.tool.tool, "part": s.tool.part, "start": s.tool.start, "end": s.tool.end},
                }
                for s in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AssemblyPlan":
        if d.get("format") != PLAN_VERSION:
            raise PlanError(f"expected a {PLAN_VERSION!r} document")
        try:
            nodes = tuple(ObjectNode(int(n["id"]), str(n["name"]), Category(n["category"])) for n in d["nodes"])
            steps = tuple(
                PlanStep(
                    (int(s["connect"][0]), int(s["connect"][1])),
                    float(s["time"]),
                    tuple(
                        GraspWindow(Side(g["hand"]), int(g["obj"]), float(g["start"]), float(g["end"]))
                        for g in s.get("grasps", ())
                    ),
                    None
                    if s.get("tool") is None
                    else ToolUse(int(s["tool"]["tool"]), int(s["tool"]["part"]),
                                 float(s["tool"]["start"]), float(s["tool"]["end"])),
                )
                for s in d["steps"]
            )
            plan = cls(
                nodes, steps, float(d["duration"]), float(d.get("frame_rate", 60.0)),
                int(d.get("seed", 0)), d.get("category_groups"),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise PlanError(f"malformed plan: {exc}") from None
        validate_plan(plan)
        return plan


def dumps_plan(plan: AssemblyPlan) -> str:
    return json.dumps(plan.to_dict(), indent=2) + "\n"


def loads_plan(text: str) -> AssemblyPlan:
    try:
        return AssemblyPlan.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan is not JSON: {exc.msg} (line {exc.lineno})") from None


def validate_plan(plan: AssemblyPlan) -> None:
    n = len(plan.nodes)
    if n == 0:
        raise PlanError("plan has no nodes")
    if not plan.frame_rate > 0:
        raise PlanError("frame_rate must be positive")
    if not plan.duration > 0:
        raise PlanError("duration must be positive")
    names = set()
    for pos, node in enumerate(plan.nodes):
        if node.id != pos:
            raise PlanError(f"node ids must be 0..N-1 in order; got {node.id} at {pos}")
        if not node.name or node.name in names:
            raise PlanError(f"empty or duplicate node name {node.name!r}")
        names.add(node.name)

    def is_part(x: int) -> bool:
        return 0 <= x < n and not plan.nodes[x].is_tool

    def check_window(start: float, end: float, what: str) -> None:
        if not (0 <= start <= end <= plan.duration):
            raise PlanError(f"{what} window ({start}, {end}) outside [0, {plan.duration}]")

    seen_edges = set()
    last_frame = 0
    n_frames = plan.n_frames
    for k, step in enumerate(plan.steps):
        i, j = step.connect
        if not (is_part(i) and is_part(j)) or i == j:
            raise PlanError(f"step {k}: connect {step.connect} must join two distinct parts")
        edge = (min(i, j), max(i, j))
        if edge in seen_edges:
            raise PlanError(f"step {k}: edge {edge} connected twice")
        seen_edges.add(edge)
        if not 0 < step.time <= plan.duration:
            raise PlanError(f"step {k}: connection time {step.time} outside (0, {plan.duration}]")
        f = plan.frame_of(step.time)
        if f <= last_frame or f >= n_frames:
            raise PlanError(f"step {k}: connection frame {f} not strictly after frame {last_frame}")
        last_frame = f
        for g in step.grasps:
            if not 0 <= g.obj < n:
                raise PlanError(f"step {k}: grasp of unknown object {g.obj}")
            check_window(g.start, g.end, f"step {k} grasp")
        if step.tool is not None:
            t = step.tool
            if not (0 <= t.tool < n and plan.nodes[t.tool].is_tool):
                raise PlanError(f"step {k}: {t.tool} is not a tool")
            if not is_part(t.part):
                raise PlanError(f"step {k}: tool target {t.part} is not a part")
            check_window(t.start, t.end, f"step {k} tool")


def _window_frames(plan: AssemblyPlan, start: float, end: float) -> tuple[int, int]:
    return plan.frame_of(start), min(plan.frame_of(end), plan.n_frames)


def compile_plan(plan: AssemblyPlan, poses: str = "objects") -> Recording:
    """Frame stream for a plan.

    ``poses`` selects placeholder pose synthesis: ``"none"``, ``"objects"``
    (one jittered pose per object per frame) or ``"full"`` (objects plus 21
    joints per hand).  Poses never influence H or A.
    """
    if poses not in POSE_MODES:
        raise PlanError(f"poses must be one of {POSE_MODES}")
    validate_plan(plan)
    n_frames = plan.n_frames
    fps = plan.frame_rate

    # per-frame change lists: +1/-1 counters for grasps and tool edges
    delta: dict[int, list[tuple[str, Any, int]]] = {}

    def add(frame: int, kind: str, key, d: int) -> None:
        if frame < n_frames:
            delta.setdefault(frame, []).append((kind, key, d))

    for step in plan.steps:
        i, j = step.connect
        add(plan.frame_of(step.time), "edge", (min(i, j), max(i, j)), 1)
        for g in step.grasps:
            s, e = _window_frames(plan, g.start, g.end)
            if s < e:
                add(s, "grasp", (g.hand, g.obj), 1)
                add(e, "grasp", (g.hand, g.obj), -1)
        if step.tool is not None:
            t = step.tool
            s, e = _window_frames(plan, t.start, t.end)
            if s < e:
                edge = (min(t.tool, t.part), max(t.tool, t.part))
                add(s, "edge", edge, 1)
                add(e, "edge", edge, -1)

    rng = np.random.default_rng(plan.seed)
    n = len(plan.nodes)
    layout = [(0.1 * (k % 8), 0.1 * (k // 8), 0.75) for k in range(n)]

    rec = Recording(plan.nodes, fps)
    counts: dict[Any, int] = {}
    left: frozenset[int] = frozenset()
    right: frozenset[int] = frozenset()
    edges: frozenset[tuple[int, int]] = frozenset()
    empty_hands = (HandState(Side.LEFT), HandState(Side.RIGHT))
    for f in range(n_frames):
        changes = delta.get(f)
        if changes:
            dirty = set()
            for kind, key, d in changes:
                counts[(kind, key)] = counts.get((kind, key), 0) + d
                dirty.add(kind if kind == "edge" else key[0])
            if "edge" in dirty:
                edges = frozenset(k for (kind, k), c in counts.items() if kind == "edge" and c > 0)
            if Side.LEFT in dirty:
                left = frozenset(k[1] for (kind, k), c in counts.items() if kind == "grasp" and c > 0 and k[0] is Side.LEFT)
            if Side.RIGHT in dirty:
                right = frozenset(k[1] for (kind, k), c in counts.items() if kind == "grasp" and c > 0 and k[0] is Side.RIGHT)
        object_poses = {}
        hands = empty_hands
        if poses != "none":
            jitter = rng.normal(0.0, 0.002, size=(n, 4))
            for k in range(n):
                x, y, z = layout[k]
                yaw = float(jitter[k, 3])
                object_poses[k] = Pose6DoF(
                    (x + float(jitter[k, 0]), y + float(jitter[k, 1]), z + float(jitter[k, 2])),
                    (0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)),
                )
        if poses == "full":
            hands = tuple(
                HandState(side, tuple(
                    Pose6DoF((float(v[0]), float(v[1]), float(v[2])))
                    for v in rng.normal((0.2 if side is Side.RIGHT else -0.2, 0.0, 1.0), 0.01, size=(N_JOINTS, 3))
                ))
                for side in (Side.LEFT, Side.RIGHT)
            )
        rec.frames.append(FrameRecord(f, f / fps, (left, right), edges, hands, object_poses))
    return rec


# --- presets -----------------------------------------------------------------


def preset_star(
    k: int,
    spacing: float = 2.0,
    release_delay: float = 0.5,
    frame_rate: float = 60.0,
    seed: int = 0,
    spoke_name: str = "spoke",
) -> AssemblyPlan:
    """Hub ("frame") plus ``k`` spokes connected one by one directly to it."""
    if k < 2:
        raise PlanError(f"star preset needs k >= 2, got {k}")
    nodes = [ObjectNode(0, "frame", Category.PART)]
    nodes += [ObjectNode(s, f"{spoke_name}_{s}", Category.PART) for s in range(1, k + 1)]
    steps = []
    for s in range(1, k + 1):
        t = spacing * s
        grasp = GraspWindow(Side.RIGHT, s, max(0.0, t - spacing / 2), t + release_delay)
        steps.append(PlanStep((0, s), t, (grasp,)))
    duration = spacing * (k + 1)
    return AssemblyPlan(tuple(nodes), tuple(steps), duration, frame_rate, seed)


DRONE_LEVELS = ("arm", "motor", "propeller")


def preset_distributed(
    arms: int,
    depth: int,
    spacing: float = 2.0,
    release_delay: float = 0.5,
    frame_rate: float = 60.0,
    seed: int = 0,
    with_tool: bool = True,
) -> AssemblyPlan:
    """Hub plus ``arms`` chains of ``depth`` parts, assembled stage by stage, leaf end first.

    Chain level 1 touches the hub and level ``depth`` is the leaf.  Stage 1
    joins levels ``depth-1`` and ``depth`` on every arm, each following
    stage attaches the next level toward the hub, and the last stage attaches
    every arm to the hub.  Registry order is hub, then levels
    ``depth-1, depth, depth-2, ..., 1`` so that the smaller id of each
    connection sits in the sub-assembly that is being extended.
    """
    if arms < 2 or depth < 2:
        raise PlanError(f"distributed preset needs arms >= 2 and depth >= 2, got {arms}, {depth}")
    names = DRONE_LEVELS if depth == 3 else tuple(f"level{lv}" for lv in range(1, depth + 1))
    level_order = [depth - 1, depth] + list(range(depth - 2, 0, -1))
    nodes = [ObjectNode(0, "hub", Category.PART)]
    ids: dict[tuple[int, int], int] = {}
    for lv in level_order:
        for a in range(1, arms + 1):
            ids[(lv, a)] = len(nodes)
            nodes.append(ObjectNode(len(nodes), f"{names[lv - 1]}_{a}", Category.PART))
    tool = None
    if with_tool:
        tool = len(nodes)
        nodes.append(ObjectNode(tool, "screwdriver", Category.TOOL))

    steps = []
    t = 0.0
    for stage in range(1, depth + 1):
        for a in range(1, arms + 1):
            t += spacing
            if stage < depth:
                inner, outer = ids[(depth - stage, a)], ids[(depth - stage + 1, a)]
            else:
                inner, outer = 0, ids[(1, a)]
            held = GraspWindow(Side.RIGHT, outer, t - spacing / 2, t + release_delay / 2)
            use = None
            if tool is not None and stage == depth:
                # screwing the arm onto the hub: the tool is held longest
                use = ToolUse(tool, inner, t - spacing / 4, t + release_delay / 2)
                other = GraspWindow(Side.LEFT, tool, t - spacing / 4, t + release_delay)
            else:
                other = GraspWindow(Side.LEFT, inner, t - spacing / 4, t + release_delay)
            steps.append(PlanStep((inner, outer), t, (held, other), use))
    duration = t + spacing
    return AssemblyPlan(tuple(nodes), tuple(steps), duration, frame_rate, seed)


_PREFIXES = ("panel", "bolt", "bracket", "leg", "rail", "cap", "pin")
_TOOLS = ("screwdriver", "wrench", "hammer", "drill")


def random_plan(
    seed: int,
    n_parts: int | None = None,
    n_tools: int | None = None,
    frame_rate: float = 60.0,
) -> AssemblyPlan:
    """Random monotone assembly plan (3-40 parts, 0-4 tools by default).

    Part ids are interleaved with tool ids, the final topology is a random
    tree plus occasional cycle-closing edges, and release delays sometimes
    run past the next connection.
    """
    rng = random.Random(seed)
    n_parts = rng.randint(3, 40) if n_parts is None else n_parts
    n_tools = rng.randint(0, 4) if n_tools is None else n_tools
    if n_parts < 2:
        raise PlanError("random plans need at least 2 parts")
    kinds = [Category.PART] * n_parts + [Category.TOOL] * n_tools
    rng.shuffle(kinds)
    nodes = []
    counters: dict[str, int] = {}
    for idx, cat in enumerate(kinds):
        if cat is Category.TOOL:
            base = _TOOLS[sum(1 for nd in nodes if nd.is_tool) % len(_TOOLS)]
        else:
            base = rng.choice(_PREFIXES)
        counters[base] = counters.get(base, 0) + 1
        nodes.append(ObjectNode(idx, f"{base}_{counters[base]}", cat))
    parts = [nd.id for nd in nodes if not nd.is_tool]
    tools = [nd.id for nd in nodes if nd.is_tool]

    order = parts[:]
    rng.shuffle(order)
    hub_bias = rng.random()
    edges = []
    for k in range(1, len(order)):
        parent = order[0] if rng.random() < hub_bias else order[rng.randrange(k)]
        edges.append((order[k], parent))
    for _ in range(rng.choice((0, 0, 0, 1, 2))):
        a, b = rng.sample(parts, 2)
        if (a, b) not in edges and (b, a) not in edges:
            edges.append((a, b))
    rng.shuffle(edges)
    if rng.random() < 0.5:
        # leaf-first bias: sort by the order in which the child was introduced, reversed
        rank = {p: r for r, p in enumerate(order)}
        edges.sort(key=lambda e: -max(rank[e[0]], rank[e[1]]))

    steps = []
    t = 0.0
    raw = []
    for a, b in edges:
        t += rng.uniform(0.3, 2.0)
        release = rng.choice((0.0, 0.1, 0.5, 1.0, rng.uniform(0.0, 4.0)))
        grasps = [(Side.RIGHT, a, t - rng.uniform(0.1, 1.5), t + release)]
        if rng.random() < 0.6:
            grasps.append((Side.LEFT, b, t - rng.uniform(0.1, 1.5), t + rng.uniform(0.0, 1.5)))
        use = None
        if tools and rng.random() < 0.5:
            tool = rng.choice(tools)
            target = rng.choice((a, b))
            start, end = t - rng.uniform(0.0, 1.0), t + rng.uniform(0.0, 2.0)
            if rng.random() < 0.2:
                start = t + 0.2  # tool arrives after the connection: not involved at t
            use = (tool, target, start, max(end, start))
            grasps.append((rng.choice((Side.LEFT, Side.RIGHT)), tool, start, end + rng.uniform(0.0, 1.0)))
        raw.append(((a, b), t, grasps, use))
    duration = t + rng.uniform(0.5, 3.0)

    def clip(x: float) -> float:
        return min(max(x, 0.0), duration)

    for (a, b), ct, grasps, use in raw:
        gw = tuple(GraspWindow(h, o, clip(s), clip(e)) for h, o, s, e in grasps if clip(s) <= clip(e))
        tu = None if use is None else ToolUse(use[0], use[1], clip(use[2]), clip(use[3]))
        steps.append(PlanStep((a, b), ct, gw, tu))
    return AssemblyPlan(tuple(nodes), tuple(steps), duration, frame_rate, seed)


# --- oracle ------------------------------------------------------------------


@dataclass(frozen=True)
class OracleBreakpoint:
    frame: int
    rule: str
    objects: tuple[int, ...]


@dataclass(frozen=True)
class OracleResult:
    fine: tuple[OracleBreakpoint, ...]
    coarse: tuple[OracleBreakpoint, ...]
    # level -> [(raw_frame, refined_frame)] after refinement and duplicate collapse
    refined: Mapping[str, tuple[tuple[int, int], ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fine": [{"frame": b.frame, "rule": b.rule, "objects": list(b.objects)} for b in self.fine],
            "coarse": [{"frame": b.frame, "objects": list(b.objects)} for b in self.coarse],
            "refined": {lv: [list(p) for p in pairs] for lv, pairs in sorted(self.refined.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "OracleResult":
        return cls(
            tuple(OracleBreakpoint(b["frame"], b["rule"], tuple(b["objects"])) for b in d["fine"]),
            tuple(OracleBreakpoint(b["frame"], "CoarseMerge", tuple(b["objects"])) for b in d["coarse"]),
            {lv: tuple(tuple(p) for p in pairs) for lv, pairs in d["refined"].items()},
        )


_SUFFIX = re.compile(r"[\s_\-.]*\d+$")


def oracle_breakpoints(plan: AssemblyPlan, ocg: OriginCentricGraph) -> OracleResult:
    """Replay the plan's connections with a from-scratch component tracker.

    Components are explicit member sets and central objects are recomputed by
    scanning members, so nothing here shares code with the segmenter.
    """
    weight = ocg.weight
    origin = ocg.origin
    groups = plan.category_groups or {}
    names = [nd.name for nd in plan.nodes]

    def label(x: int) -> str:
        name = names[x]
        if name in groups:
            return groups[name]
        return _SUFFIX.sub("", name) or name

    def center_of(members) -> int:
        best = None
        for m in sorted(members):
            if best is None or weight[m] > weight[best]:
                best = m
        return best

    comp = {nd.id: frozenset([nd.id]) for nd in plan.nodes if not nd.is_tool}
    events = sorted((plan.frame_of(s.time), min(s.connect), max(s.connect), s) for s in plan.steps)

    fine = []  # (frame, rule, objects, edge, center, relevant)
    for frame, i, j, step in events:
        ci, cj = comp[i], comp[j]
        if ci == cj:
            continue
        merged = ci | cj
        before = center_of(ci)
        after = center_of(merged)
        if origin in ci or origin in cj:
            rule = "OriginConnection"
        elif after != before:
            rule = "CentralUpdate"
        else:
            rule = "SubAssembly"
        for m in merged:
            comp[m] = merged
        tools = set()
        for other in plan.steps:
            u = other.tool
            if u is not None and u.part in (i, j):
                s, e = _window_frames(plan, u.start, u.end)
                if s <= frame < e:
                    tools.add(u.tool)
        objs = tuple(sorted({i, j} | tools))
        fine.append((frame, rule, objs, (i, j), after))

    # coarse runs
    runs: list[list[tuple]] = []
    for bp in fine:
        if runs:
            prev = runs[-1][-1]
            prev_labels = {label(x) for x in prev[3] if x != prev[4]}
            cur_labels = {label(x) for x in bp[3] if x != bp[4]}
            if prev[4] == bp[4] or (prev_labels and prev_labels == cur_labels):
                runs[-1].append(bp)
                continue
        runs.append([bp])
    coarse = [
        OracleBreakpoint(run[-1][0], "CoarseMerge", tuple(sorted(set().union(*(b[2] for b in run)))))
        for run in runs
    ]

    # refinement from the plan's grasp windows
    grasp_spans: dict[int, list[tuple[int, int]]] = {}
    for s in plan.steps:
        for g in s.grasps:
            a, b = _window_frames(plan, g.start, g.end)
            if a < b:
                grasp_spans.setdefault(g.obj, []).append((a, b))
    fine_frames = sorted({b[0] for b in fine})
    last = plan.n_frames - 1

    def release(frame: int, relevant) -> int:
        later = [f for f in fine_frames if f > frame]
        limit = later[0] - 1 if later else last
        f = frame
        moved = True
        while moved:
            moved = False
            for obj in relevant:
                for a, b in grasp_spans.get(obj, ()):
                    if a <= f < b:
                        f = b
                        moved = True
        return min(f, limit)

    def collapse(pairs):
        pairs = sorted(pairs, key=lambda p: (p[1], p[0]))
        out = []
        for raw, ref in pairs:
            if out and out[-1][1] == ref:
                continue
            out.append((raw, ref))
        return tuple(out)

    fine_ref = [(b[0], release(b[0], b[2])) for b in fine]
    coarse_ref = [(run[-1][0], release(run[-1][0], run[-1][2])) for run in runs]
    return OracleResult(
        tuple(OracleBreakpoint(b[0], b[1], b[2]) for b in fine),
        tuple(coarse),
        {"fine": collapse(fine_ref), "coarse": collapse(coarse_ref)},
    )
