from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from agentdriver.errors import EmptySet, UnknownCategory
from agentdriver.evaluation import (
    EvalSample,
    collision_per_step,
    format_table,
    gt_occupancy,
    l2_profile,
    report,
)
from agentdriver.scene import GTBox
from agentdriver.trajectory import Trajectory

FIXTURES = Path(__file__).parent / "fixtures"


def traj(points):
    return Trajectory(tuple((float(x), float(y)) for x, y in points))


def straight(speed=5.0, offset=(0.0, 0.0)):
    return traj([(offset[0], speed * 0.5 * k + offset[1]) for k in range(1, 7)])


def box_at(x, y, category="vehicle", length=1.0, width=1.0, heading=0.0):
    return GTBox((x, y), (length, width), heading, category)


def boxes_at_step(step, *boxes):
    per_step = [() for _ in range(6)]
    per_step[step - 1] = tuple(boxes)
    return tuple(per_step)


NO_BOXES = tuple(() for _ in range(6))


# --- l2 -----------------------------------------------------------------------


def test_l2_identical_is_zero():
    assert l2_profile(straight(), straight()).tolist() == [0.0] * 6


def test_l2_345_offset():
    profile = l2_profile(straight(offset=(0.3, 0.4)), straight())
    np.testing.assert_allclose(profile, [0.5] * 6, rtol=1e-12)


def test_l2_single_step_offset():
    pred = straight().to_list()
    pred[5][0] += 1.0
    profile = l2_profile(traj(pred), straight())
    assert profile.tolist() == [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]


# --- gt occupancy ----------------------------------------------------------------


def test_gt_occupancy_empty():
    for convention in ("uniad", "stp3"):
        occ = gt_occupancy(NO_BOXES, convention)
        assert all(len(c) == 0 for c in occ.centers_per_step)


def test_gt_occupancy_category_rule():
    boxes = boxes_at_step(2, box_at(0.0, 5.0, category="pedestrian"))
    uniad = gt_occupancy(boxes, "uniad")
    stp3 = gt_occupancy(boxes, "stp3")
    assert all(len(c) == 0 for c in uniad.centers_per_step)
    assert len(stp3.centers_per_step[1]) > 0


def test_gt_occupancy_unknown_category():
    boxes = boxes_at_step(1, box_at(0.0, 5.0, category="unicorn"))
    with pytest.raises(UnknownCategory):
        gt_occupancy(boxes, "uniad")


def test_gt_occupancy_cyclist_excluded_by_both():
    boxes = boxes_at_step(1, box_at(0.0, 5.0, category="cyclist"))
    for convention in ("uniad", "stp3"):
        occ = gt_occupancy(boxes, convention)
        assert all(len(c) == 0 for c in occ.centers_per_step)


def brute_force_raster(box: GTBox, origin, dims, resolution):
    """Independent scalar point-in-rotated-rect rasterizer."""
    hits = []
    sin_h, cos_h = math.sin(box.heading), math.cos(box.heading)
    for ix in range(dims[0]):
        for iy in range(dims[1]):
            cx = origin[0] + (ix + 0.5) * resolution
            cy = origin[1] + (iy + 0.5) * resolution
            dx, dy = cx - box.center[0], cy - box.center[1]
            f = -sin_h * dx + cos_h * dy
            r = cos_h * dx + sin_h * dy
            if abs(f) <= box.size[0] / 2 and abs(r) <= box.size[1] / 2:
                hits.append((round(cx, 6), round(cy, 6)))
    return sorted(hits)


def test_gt_occupancy_matches_brute_force_rasterizer():
    rng = np.random.default_rng(52)
    for _ in range(40):
        box = box_at(
            float(rng.uniform(-20, 20)),
            float(rng.uniform(-20, 20)),
            length=float(rng.uniform(0.5, 6)),
            width=float(rng.uniform(0.4, 3)),
            heading=float(rng.uniform(-np.pi, np.pi)),
        )
        occ = gt_occupancy(boxes_at_step(1, box), "uniad")
        got = sorted((round(float(x), 6), round(float(y), 6)) for x, y in occ.centers_per_step[0])
        expected = brute_force_raster(box, occ.origin, occ.dims, occ.resolution)
        assert got == expected


def test_uniad_occupancy_subset_of_stp3():
    rng = np.random.default_rng(53)
    for _ in range(20):
        per_step = []
        for _ in range(6):
            boxes = []
            for _ in range(int(rng.integers(0, 4))):
                boxes.append(
                    box_at(
                        float(rng.uniform(-15, 15)),
                        float(rng.uniform(-15, 15)),
                        category=["vehicle", "pedestrian", "cyclist"][int(rng.integers(3))],
                        length=float(rng.uniform(0.5, 5)),
                        width=float(rng.uniform(0.5, 2.5)),
                        heading=float(rng.uniform(-np.pi, np.pi)),
                    )
                )
            per_step.append(tuple(boxes))
        uniad = gt_occupancy(tuple(per_step), "uniad")
        stp3 = gt_occupancy(tuple(per_step), "stp3")
        for t in range(6):
            uniad_cells = {(float(x), float(y)) for x, y in uniad.centers_per_step[t]}
            stp3_cells = {(float(x), float(y)) for x, y in stp3.centers_per_step[t]}
            assert uniad_cells <= stp3_cells


# --- collision -----------------------------------------------------------------


def test_collision_per_step_empty():
    occ = gt_occupancy(NO_BOXES, "uniad")
    assert collision_per_step(straight(), occ) == [False] * 6


def test_collision_box_on_waypoint():
    pred = straight()
    boxes = boxes_at_step(2, box_at(*pred.points[1]))
    occ = gt_occupancy(boxes, "uniad")
    flags = collision_per_step(pred, occ)
    assert flags == [False, True, False, False, False, False]


def test_collision_box_far_from_trajectory():
    boxes = boxes_at_step(3, box_at(30.0, 30.0))
    occ = gt_occupancy(boxes, "uniad")
    assert collision_per_step(straight(), occ) == [False] * 6


def test_collision_monotone_under_obstacle_removal():
    rng = np.random.default_rng(54)
    pred = straight()
    for _ in range(20):
        all_boxes = []
        for t in range(6):
            step_boxes = [
                box_at(float(rng.uniform(-3, 3)), float(rng.uniform(0, 16)), length=2.0, width=2.0)
                for _ in range(int(rng.integers(0, 3)))
            ]
            all_boxes.append(tuple(step_boxes))
        full = collision_per_step(pred, gt_occupancy(tuple(all_boxes), "uniad"))
        reduced_boxes = tuple(step[1:] for step in all_boxes)  # drop one box per step
        reduced = collision_per_step(pred, gt_occupancy(reduced_boxes, "uniad"))
        assert sum(reduced) <= sum(full)


# --- report ----------------------------------------------------------------------


def test_report_single_sample_formula_substitution():
    profile = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    pred_points = [[0.0, p] for p in np.cumsum(profile)]
    gt_points = [[0.0, p] for p in np.concatenate([[0.0], np.cumsum(profile)[:-1]])]
    # build trajectories whose per-step l2 equals `profile` exactly: offset in y
    pred_t = traj([[0.0, g[1] + profile[i]] for i, g in enumerate(gt_points)])
    gt_t = traj(gt_points)
    sample = EvalSample(pred=pred_t, gt=gt_t, gt_boxes_per_step=NO_BOXES)
    uniad = report([sample], "uniad")
    stp3 = report([sample], "stp3")
    assert uniad.l2_per_horizon["1s"] == pytest.approx(profile[1], abs=1e-12)
    assert stp3.l2_per_horizon["1s"] == pytest.approx((profile[0] + profile[1]) / 2, abs=1e-12)
    assert stp3.l2_per_horizon["3s"] == pytest.approx(sum(profile) / 6, abs=1e-12)
    assert uniad.l2_per_horizon["avg"] == pytest.approx((profile[1] + profile[3] + profile[5]) / 3, abs=1e-12)


def test_constant_error_makes_conventions_agree():
    rng = np.random.default_rng(55)
    for _ in range(50):
        e = float(rng.uniform(0, 5))
        sample = EvalSample(pred=straight(offset=(0.0, e)), gt=straight(), gt_boxes_per_step=NO_BOXES)
        uniad = report([sample], "uniad")
        stp3 = report([sample], "stp3")
        for key in ("1s", "2s", "3s", "avg"):
            assert uniad.l2_per_horizon[key] == pytest.approx(e, abs=1e-9)
            assert stp3.l2_per_horizon[key] == pytest.approx(e, abs=1e-9)


def golden_samples():
    golden = json.loads((FIXTURES / "golden_metric_report.json").read_text())
    s = golden["samples"]
    gt = traj(s["gt"])
    sample_a = EvalSample(
        pred=traj(s["pred_a"]),
        gt=gt,
        gt_boxes_per_step=boxes_at_step(2, box_at(*traj(s["pred_a"]).points[1], category="vehicle")),
    )
    sample_b = EvalSample(
        pred=traj(s["pred_b"]),
        gt=gt,
        gt_boxes_per_step=boxes_at_step(
            4, box_at(*traj(s["pred_b"]).points[3], category="pedestrian", length=0.5, width=0.5)
        ),
    )
    sample_c = EvalSample(pred=traj(s["pred_c"]), gt=gt, gt_boxes_per_step=NO_BOXES)
    return golden, [sample_a, sample_b, sample_c]


def test_golden_file_report():
    golden, samples = golden_samples()
    for convention in ("uniad", "stp3"):
        got = report(samples, convention)
        want = golden[convention]
        for key in ("1s", "2s", "3s", "avg"):
            assert got.l2_per_horizon[key] == pytest.approx(want["l2_m"][key], abs=1e-9)
            assert got.collision_pct_per_horizon[key] == pytest.approx(want["collision_pct"][key], abs=1e-9)
        np.testing.assert_allclose(got.l2_mean_per_step, want["l2_mean_per_step"], atol=1e-9)
        assert got.collision_counts_per_step == want["collision_counts_per_step"]
        np.testing.assert_allclose(
            got.collision_rate_per_step_pct, want["collision_rate_per_step_pct"], atol=1e-9
        )


def test_report_empty_set():
    with pytest.raises(EmptySet):
        report([], "uniad")


def test_format_table_layout():
    _, samples = golden_samples()
    reports = [report(samples, c) for c in ("uniad", "stp3")]
    table = format_table(reports)
    assert "L2 (m)" in table and "Collision (%)" in table
    assert "uniad" in table and "stp3" in table
    assert "samples: 3" in table


def test_report_emits_intermediate_arrays():
    _, samples = golden_samples()
    doc = report(samples, "stp3").to_dict()
    assert len(doc["intermediate"]["l2_mean_per_step"]) == 6
    assert len(doc["intermediate"]["collision_counts_per_step"]) == 6
    assert doc["settings"]["collision_rate_denominator"] == "samples_per_timestep"
