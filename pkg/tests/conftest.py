import random
import warnings

import pytest

from taskseg.simgen import preset_distributed, preset_star
from taskseg.stsg import Category, FrameRecord, ObjectNode, new_recording


def make_recording(names, edges_by_frame, n_frames, fps=60.0, grasps_by_frame=None, tools=()):
    """Recording where ``edges_by_frame[f]`` (sparse, carried forward) sets A from frame f on."""
    nodes = [(n, Category.TOOL if n in tools else Category.PART) for n in names]
    rec = new_recording(nodes, fps)
    edges = frozenset()
    grasp = (frozenset(), frozenset())
    for f in range(n_frames):
        if f in edges_by_frame:
            edges = frozenset(tuple(sorted(e)) for e in edges_by_frame[f])
        if grasps_by_frame and f in grasps_by_frame:
            left, right = grasps_by_frame[f]
            grasp = (frozenset(left), frozenset(right))
        rec.append(FrameRecord(f, f / fps, grasp, edges))
    return rec


@pytest.fixture
def drone_plan():
    return preset_distributed(4, 3)


@pytest.fixture
def star_plan():
    return preset_star(5)


@pytest.fixture(autouse=True)
def _quiet_disconnected():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        yield


def synth_annotations(anchor_times, duration, seed=0, n_agree=13, n_noise=11, level="fine", jitter=1.0):
    """CSV text: ``n_agree`` annotators mark every anchor with U(-jitter, jitter) noise, the rest mark random times."""
    rng = random.Random(seed)
    tags = [f"bp_{k + 1}" for k in range(len(anchor_times))]
    lines = ["participant_id,time_s,group_tag,level"]
    for p in range(n_agree):
        for tag, t in zip(tags, anchor_times):
            lines.append(f"a{p:02d},{max(0.0, t + rng.uniform(-jitter, jitter))!r},{tag},{level}")
    for p in range(n_noise):
        for _ in range(rng.randint(1, len(anchor_times) + 2)):
            lines.append(f"n{p:02d},{rng.uniform(0, duration)!r},{rng.choice(tags)},{level}")
    return "\n".join(lines) + "\n"


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.getreports(outcome):
            if rep.when != "call" or "acceptance" not in rep.keywords:
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num}: {verdict}  {detail}")
