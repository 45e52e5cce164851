import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskseg.errors import DisassemblyError, NestingError, RegistryMismatch
from taskseg.ocg import build_ocg
from taskseg.recording_io import Level
from taskseg.segmenter import (
    Breakpoint,
    FineDetector,
    Rule,
    build_segments,
    category_label,
    detect_coarse,
    detect_fine,
    refine,
    run_pipeline,
    segment,
)
from taskseg.simgen import compile_plan, preset_distributed, preset_star, random_plan

from .conftest import make_recording


def rules(bps):
    return [bp.rule for bp in bps]


def test_star_three_origin_connections():
    rec = compile_plan(preset_star(3), poses="none")
    res = run_pipeline(rec, refine_breakpoints=False)
    assert rules(res.fine) == [Rule.ORIGIN_CONNECTION] * 3
    assert [bp.raw_time for bp in res.fine] == [2.0, 4.0, 6.0]
    assert [bp.objects for bp in res.fine] == [{0, 1}, {0, 2}, {0, 3}]
    assert len(res.coarse) == 1 and res.coarse[0].raw_frame == res.fine[-1].raw_frame


def test_no_events_gives_empty_output():
    rec = make_recording("abc", {0: [(0, 1), (1, 2)]}, 50)
    res = run_pipeline(rec)
    assert res.fine == [] and res.coarse == []
    assert len(res.tree.coarse) == 1 and len(res.tree.fine) == 1


def test_no_frames_gives_empty_output():
    res = run_pipeline(make_recording("abc", {}, 0))
    assert res.ocg is None and res.fine == [] and res.coarse == []


def test_drone_rules_in_order():
    rec = compile_plan(preset_distributed(4, 3), poses="none")
    res = run_pipeline(rec)
    assert rules(res.fine) == [Rule.SUB_ASSEMBLY] * 4 + [Rule.CENTRAL_UPDATE] * 4 + [Rule.ORIGIN_CONNECTION] * 4
    assert len(res.coarse) == 3
    fine_frames = {bp.refined_frame for bp in res.fine}
    assert {bp.refined_frame for bp in res.coarse} <= fine_frames
    # the tool held on the hub joins the objects of the hub-stage breakpoints
    tool = rec.tool_ids[0]
    assert all(tool in bp.objects for bp in res.fine[8:])
    assert not any(tool in bp.objects for bp in res.fine[:8])


def test_same_component_edge_is_ignored():
    rec = make_recording("abc", {10: [(0, 1)], 20: [(0, 1), (1, 2)], 30: [(0, 1), (1, 2), (0, 2)]}, 40)
    fine = detect_fine(rec, build_ocg(rec))
    assert [bp.raw_frame for bp in fine] == [10, 20]


def test_initial_edges_flag():
    rec = make_recording("abc", {0: [(0, 1)], 10: [(0, 1), (1, 2)]}, 20)
    ocg = build_ocg(rec)
    assert [bp.raw_frame for bp in detect_fine(rec, ocg)] == [10]
    assert [bp.raw_frame for bp in detect_fine(rec, ocg, allow_initial_edges=False)] == [0, 10]


def test_origin_connection_beats_central_update():
    # d joins through c, whose group already holds the origin
    rec = make_recording("abcd", {0: [(0, 1), (0, 2)], 10: [(0, 1), (0, 2), (2, 3)]}, 20)
    (bp,) = detect_fine(rec, build_ocg(rec))
    assert bp.rule is Rule.ORIGIN_CONNECTION


def propeller_recording():
    names = ["hub", "motor_1", "motor_2", "motor_3", "motor_4", "propeller_1", "propeller_2", "propeller_3", "propeller_4"]
    final = [(0, k) for k in range(1, 5)] + [(k, k + 4) for k in range(1, 5)]
    edges = {10 * k: [(m, m + 4) for m in range(1, k + 1)] for k in range(1, 5)}
    edges[60] = final
    return make_recording(names, edges, 80)


def test_same_label_sub_assemblies_collapse():
    rec = propeller_recording()
    ocg = build_ocg(rec)
    fine = detect_fine(rec, ocg)
    assert rules(fine) == [Rule.SUB_ASSEMBLY] * 4 + [Rule.ORIGIN_CONNECTION] * 4
    # four different centers (the motors), same non-central label (propeller)
    assert len({bp.center for bp in fine[:4]}) == 4
    coarse = detect_coarse(fine, rec, ocg)
    assert [bp.raw_frame for bp in coarse] == [40, 60]
    assert coarse[0].objects == set(range(1, 9))


def test_explicit_groups_split_runs():
    rec = propeller_recording()
    ocg = build_ocg(rec)
    fine = detect_fine(rec, ocg)
    groups = {f"propeller_{k}": f"p{k}" for k in range(1, 5)}
    coarse = detect_coarse(fine, rec, ocg, groups)
    assert [bp.raw_frame for bp in coarse] == [10, 20, 30, 40, 60]


def test_single_fine_single_coarse():
    rec = make_recording("ab", {5: [(0, 1)]}, 10)
    res = run_pipeline(rec)
    assert len(res.fine) == len(res.coarse) == 1
    assert res.coarse[0].objects == res.fine[0].objects


def test_alternating_centers_do_not_merge():
    # X and Y alternate as centers; endpoint labels are all distinct
    names = ["X", "Y", "a", "b", "c", "d"]
    steps = [(0, 2), (1, 3), (0, 4), (1, 5), (0, 1)]
    edges = {10 * (k + 1): steps[: k + 1] for k in range(len(steps))}
    rec = make_recording(names, edges, 70)
    ocg = build_ocg(rec)
    fine = detect_fine(rec, ocg)
    assert [bp.center for bp in fine[:4]] == [0, 1, 0, 1]
    assert len(detect_coarse(fine, rec, ocg)) == 5


def test_coarse_from_documents_matches_fresh():
    rec = compile_plan(preset_distributed(4, 3), poses="none")
    ocg = build_ocg(rec)
    fine = detect_fine(rec, ocg)
    loaded = [Breakpoint.from_dict(bp.to_dict()) for bp in fine]
    assert loaded == fine and loaded[0].edge is None
    assert detect_coarse(loaded, rec, ocg) == detect_coarse(fine, rec, ocg)


@pytest.mark.parametrize(
    "name, label",
    [("propeller_1", "propeller"), ("screw-12", "screw"), ("M3 bolt 4", "M3 bolt"), ("base", "base"), ("42", "42")],
)
def test_category_label(name, label):
    assert category_label(name) == label


def test_category_label_override():
    assert category_label("leg_1", {"leg_1": "front"}) == "front"


# --- refinement -------------------------------------------------------------


def grasp_recording(edge_frames, grasp_until, n_frames=200, holder="right"):
    names = ["a", "b", "c", "d"]
    edges, current = {}, []
    for f, e in edge_frames:
        current = current + [e]
        edges[f] = list(current)
    held = {1} if grasp_until else set()
    grasps = {0: ((), held) if holder == "right" else (held, ())}
    if grasp_until:
        grasps[grasp_until] = ((), ())
    return make_recording(names, edges, n_frames, grasps_by_frame=grasps)


def test_refine_waits_for_release():
    rec = grasp_recording([(100, (0, 1))], 130)
    (bp,) = refine(detect_fine(rec, build_ocg(rec)), rec)
    assert (bp.raw_frame, bp.refined_frame) == (100, 130)
    assert bp.refined_time == 130 / 60


def test_refine_immediate_release():
    rec = grasp_recording([(100, (0, 1))], None)
    (bp,) = refine(detect_fine(rec, build_ocg(rec)), rec)
    assert bp.refined_frame == 100


def test_refine_bounded_by_next_breakpoint():
    rec = grasp_recording([(100, (0, 1)), (150, (2, 3))], 190)
    a, b = refine(detect_fine(rec, build_ocg(rec)), rec)
    assert a.refined_frame == 149
    assert b.refined_frame == 150


def test_refine_bounded_by_end_of_recording():
    rec = make_recording("abcd", {100: [(0, 1)]}, 120, grasps_by_frame={0: ((1,), ())})
    (bp,) = refine(detect_fine(rec, build_ocg(rec)), rec)
    assert bp.refined_frame == 119


def test_refine_waits_for_adjacent_tool():
    rec = make_recording(
        ["a", "b", "t"], {100: [(0, 1), (1, 2)], 105: [(0, 1)]}, 200,
        grasps_by_frame={0: ((2,), ()), 140: ((), ())}, tools={"t"},
    )
    (bp,) = refine(detect_fine(rec, build_ocg(rec)), rec)
    assert bp.objects == {0, 1, 2}
    assert bp.refined_frame == 140


def test_refine_collapses_same_frame_to_earliest_raw():
    rec = make_recording("abcd", {100: [(0, 1), (2, 3)], 150: [(0, 1), (2, 3), (1, 2)]}, 200)
    fine = detect_fine(rec, build_ocg(rec))
    assert [bp.raw_frame for bp in fine] == [100, 100, 150]
    out = refine(fine, rec)
    assert [(bp.raw_frame, bp.refined_frame) for bp in out] == [(100, 100), (150, 150)]
    assert out[0].objects == {0, 1}


def test_no_refine_keeps_raw():
    rec = compile_plan(preset_distributed(4, 3), poses="none")
    res = run_pipeline(rec, refine_breakpoints=False)
    assert all(bp.refined_frame == bp.raw_frame for bp in res.fine + res.coarse)


def test_release_delay_shift():
    base = run_pipeline(compile_plan(preset_star(3, release_delay=0.0), poses="none"))
    late = run_pipeline(compile_plan(preset_star(3, release_delay=0.5), poses="none"))
    assert [b.refined_frame - a.refined_frame for a, b in zip(base.fine, late.fine)] == [30, 30, 30]


# --- segments ---------------------------------------------------------------


def test_build_segments_nested():
    tree = build_segments([10, 20, 30], [30], 40)
    assert [(c.start, c.end) for c in tree.coarse] == [(0, 30), (30, 40)]
    assert [(s.start, s.end) for s in tree.coarse[0].fine] == [(0, 10), (10, 20), (20, 30)]
    assert [(s.start, s.end) for s in tree.coarse[1].fine] == [(30, 40)]


def test_build_segments_empty():
    tree = build_segments([], [], 12.5)
    assert [(c.start, c.end) for c in tree.coarse] == [(0, 12.5)]
    assert [(s.start, s.end) for s in tree.fine] == [(0, 12.5)]


def test_build_segments_errors():
    with pytest.raises(NestingError):
        build_segments([10, 20], [15], 40)
    with pytest.raises(NestingError):
        build_segments([20, 10], [], 40)
    with pytest.raises(NestingError):
        build_segments([10, 50], [], 40)


def test_segment_tree_partitions_duration():
    rec = compile_plan(preset_distributed(4, 3), poses="none")
    tree = segment(rec)
    assert tree.duration == rec.duration
    fine = tree.fine
    assert fine[0].start == 0 and fine[-1].end == tree.duration
    assert all(a.end == b.start for a, b in zip(fine, fine[1:]))
    assert len(tree.coarse) == 4 and len(fine) == 13
    assert tree.to_dict()["coarse"][0]["fine"][0]["start"] == 0.0


# --- errors -----------------------------------------------------------------


def test_registry_mismatch():
    rec = make_recording("abc", {5: [(0, 1)]}, 10)
    other = make_recording("abcd", {5: [(0, 1)]}, 10)
    with pytest.raises(RegistryMismatch):
        detect_fine(rec, build_ocg(other))


def test_strict_monotone():
    rec = make_recording("abc", {5: [(0, 1)], 8: []}, 10)
    with pytest.raises(DisassemblyError):
        run_pipeline(rec, strict_monotone=True)


def test_breakpoint_invariants():
    with pytest.raises(ValueError):
        Breakpoint(Level.FINE, Rule.SUB_ASSEMBLY, 10, 0.1, 9, 0.09, {0, 1})
    with pytest.raises(ValueError):
        Breakpoint(Level.COARSE, Rule.SUB_ASSEMBLY, 10, 0.1, 10, 0.1, {0, 1})


# --- properties on random plans --------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_online_matches_batch(seed):
    rec = compile_plan(random_plan(seed), poses="none")
    ocg = build_ocg(rec)
    det = FineDetector(rec.nodes, ocg)
    online = [bp for fr in rec.frames for bp in det.push(fr)]
    assert online == detect_fine(rec, ocg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_pipeline_invariants(seed):
    rec = compile_plan(random_plan(seed), poses="none")
    res = run_pipeline(rec)
    raw = sorted(bp.raw_frame for bp in detect_fine(rec, res.ocg))
    parts = rec.part_ids
    # every breakpoint merges two groups
    g = res.ocg
    n_components = len({min(_component(rec, v)) for v in parts})
    assert len(raw) == len(parts) - n_components
    n_origin = sum(1 for bp in detect_fine(rec, g) if bp.rule is Rule.ORIGIN_CONNECTION)
    assert n_origin <= len(_component(rec, g.origin)) - 1
    for bp in res.fine:
        nxt = [f for f in raw if f > bp.raw_frame]
        assert bp.raw_frame <= bp.refined_frame < (nxt[0] if nxt else len(rec.frames))
    frames = [bp.refined_frame for bp in res.fine]
    assert frames == sorted(set(frames))
    assert {bp.raw_frame for bp in res.coarse} <= set(raw)
    assert {bp.refined_frame for bp in res.coarse} <= set(frames)
    assert run_pipeline(rec) == res


def _component(rec, v):
    adj = {}
    for i, j in rec.frames[-1].adjacency:
        if not (rec.is_tool(i) or rec.is_tool(j)):
            adj.setdefault(i, set()).add(j)
            adj.setdefault(j, set()).add(i)
    seen, stack = {v}, [v]
    while stack:
        for w in adj.get(stack.pop(), ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen
