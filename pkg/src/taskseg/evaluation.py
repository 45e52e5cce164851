"""Ground truth from participant annotations, and scoring of predicted breakpoints.

Annotations are binned to 1 s bin centers, clustered per group tag with a
one-dimensional DBSCAN (eps = 2 s, min_samples = 12), and each cluster's
median becomes a ground-truth breakpoint.  Predictions are matched one-to-one
to ground truth within a tolerance (3 s) by greedy minimum error.
"""

from __future__ import annotations

import bisect
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import LevelMix
from .recording_io import AnnotationRow, Level

DEFAULT_BIN = 1.0
DEFAULT_EPS = 2.0
DEFAULT_MIN_SAMPLES = 12
DEFAULT_TOLERANCE = 3.0

NOISE = -1


@dataclass(frozen=True)
class GTBreakpoint:
    time: float
    group_tag: str
    support: int


@dataclass(frozen=True)
class GroundTruth:
    level: Level
    breakpoints: tuple[GTBreakpoint, ...]
    mean_bp_range: float | None

    @property
    def times(self) -> list[float]:
        return [bp.time for bp in self.breakpoints]

    def to_dict(self) -> dict:
        return {
            "level": self.level.value,
            "mean_bp_range": self.mean_bp_range,
            "breakpoints": [
                {"time": b.time, "group_tag": b.group_tag, "support": b.support} for b in self.breakpoints
            ],
        }


@dataclass(frozen=True)
class Match:
    gt_time: float
    pred_time: float
    error: float  # pred_time - gt_time


@dataclass(frozen=True)
class EvalReport:
    n_gt: int
    n_pred: int
    matches: tuple[Match, ...]
    precision: float
    recall: float
    f1: float
    mae: float | None
    rmse: float | None

    def to_dict(self) -> dict:
        return {
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "matches": [
                {"gt_time": m.gt_time, "pred_time": m.pred_time, "error": m.error} for m in self.matches
            ],
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mae": self.mae,
            "rmse": self.rmse,
        }


def bin_annotations(rows: Iterable[AnnotationRow], bin: float = DEFAULT_BIN) -> list[AnnotationRow]:
    """Snap each annotation time to the center of its bin."""
    if not bin > 0:
        raise ValueError(f"bin must be positive, got {bin!r}")
    return [replace(r, time=math.floor(r.time / bin) * bin + bin / 2) for r in rows]


def dbscan_1d(times: Sequence[float], eps: float, min_samples: int) -> list[int]:
    """Cluster labels (``NOISE`` for noise) aligned with ``times``.

    A point is core when at least ``min_samples`` points, itself included,
    lie within ``eps``.  Cores closer than ``eps`` chain into one cluster; a
    border point joins the cluster of its nearest core, the earlier cluster
    on a tie.  Clusters are numbered in time order.
    """
    n = len(times)
    order = sorted(range(n), key=lambda k: (times[k], k))
    xs = [times[k] for k in order]

    core = [False] * n
    lo = hi = 0
    for p, x in enumerate(xs):
        while x - xs[lo] > eps:
            lo += 1
        while hi < n and xs[hi] - x <= eps:
            hi += 1
        core[p] = hi - lo >= min_samples

    labels_sorted = [NOISE] * n
    cluster = NOISE
    last_core = None
    core_pos = []
    for p in range(n):
        if not core[p]:
            continue
        if last_core is None or xs[p] - xs[last_core] > eps:
            cluster += 1
        labels_sorted[p] = cluster
        last_core = p
        core_pos.append(p)

    for p in range(n):
        if core[p] or not core_pos:
            continue
        k = bisect.bisect_left(core_pos, p)
        best = None
        for q in (core_pos[k - 1] if k > 0 else None, core_pos[k] if k < len(core_pos) else None):
            if q is None:
                continue
            d = abs(xs[p] - xs[q])
            if d <= eps and (best is None or d < best[0]):
                best = (d, labels_sorted[q])
        if best is not None:
            labels_sorted[p] = best[1]

    labels = [NOISE] * n
    for p, k in enumerate(order):
        labels[k] = labels_sorted[p]
    return labels


def cluster_ground_truth(
    rows: Sequence[AnnotationRow],
    eps: float = DEFAULT_EPS,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    level: Level | str | None = None,
) -> GroundTruth:
    levels = {Level(r.level) for r in rows}
    if level is not None:
        levels.add(Level(level))
    if len(levels) > 1:
        raise LevelMix(f"annotations mix levels: {sorted(lv.value for lv in levels)}")
    lvl = levels.pop() if levels else Level.FINE

    by_tag: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        by_tag[r.group_tag].append(r.time)

    gts = []
    for tag, times in by_tag.items():
        labels = dbscan_1d(times, eps, min_samples)
        members: dict[int, list[float]] = defaultdict(list)
        for t, lab in zip(times, labels):
            if lab != NOISE:
                members[lab].append(t)
        for pts in members.values():
            if len(pts) >= min_samples:
                gts.append(GTBreakpoint(statistics.median(pts), tag, len(pts)))
    gts.sort(key=lambda b: (b.time, b.group_tag))

    spreads = [max(ts) - min(ts) for ts in by_tag.values()]
    mean_range = math.fsum(spreads) / len(spreads) if spreads else None
    return GroundTruth(lvl, tuple(gts), mean_range)


def match_breakpoints(
    pred: Sequence[float], gt: GroundTruth | Sequence[float], tolerance: float = DEFAULT_TOLERANCE
) -> list[Match]:
    """Greedy one-to-one matching by smallest |error|, ties by (gt_time, pred_time)."""
    if not tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {tolerance!r}")
    gt_times = gt.times if isinstance(gt, GroundTruth) else list(gt)
    candidates = []
    for gi, g in enumerate(gt_times):
        for pi, p in enumerate(pred):
            err = abs(p - g)
            if err <= tolerance:
                candidates.append((err, g, p, gi, pi))
    candidates.sort()
    used_gt, used_pred = set(), set()
    matches = []
    for _, g, p, gi, pi in candidates:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        matches.append(Match(g, p, p - g))
    matches.sort(key=lambda m: (m.gt_time, m.pred_time))
    return matches


def compute_metrics(matches: Sequence[Match], n_pred: int, n_gt: int) -> EvalReport:
    m = len(matches)
    if m > min(n_pred, n_gt):
        raise ValueError(f"{m} matches exceed min(n_pred={n_pred}, n_gt={n_gt})")
    precision = m / n_pred if n_pred else 0.0
    recall = m / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if m:
        mae = math.fsum(abs(x.error) for x in matches) / m
        rmse = math.sqrt(math.fsum(x.error * x.error for x in matches) / m)
    else:
        mae = rmse = None
    return EvalReport(n_gt, n_pred, tuple(matches), precision, recall, f1, mae, rmse)


def evaluate(pred: Sequence[float], gt: GroundTruth, tolerance: float = DEFAULT_TOLERANCE) -> EvalReport:
    pred = sorted(pred)
    return compute_metrics(match_breakpoints(pred, gt, tolerance), len(pred), len(gt.breakpoints))


def annotation_summary(rows: Sequence[AnnotationRow], level: Level | str) -> dict:
    """Per-participant breakpoint counts at one level (mean, median, sample SD, min, max).

    Participants that appear only at the other level count as zero.
    """
    level = Level(level)
    counts = dict.fromkeys(sorted({r.participant_id for r in rows}), 0)
    for r in rows:
        if Level(r.level) is level:
            counts[r.participant_id] += 1
    values = list(counts.values())
    if not values:
        return {"participants": 0}
    return {
        "participants": len(values),
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "sd": statistics.stdev(values) if len(values) > 1 else 0.0,
        "min": min(values),
        "max": max(values),
    }
