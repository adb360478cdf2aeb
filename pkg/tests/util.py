"""Builders for synthetic scenes used across the test suite."""

from __future__ import annotations

import copy

import numpy as np

from agentdriver.scene import snapshot_from_dict

EMPTY_OCCUPANCY = {
    "origin": [-10.0, -10.0],
    "resolution": 0.5,
    "dims": [40, 40],
    "steps": 6,
    "values": [[[0.0] * 40 for _ in range(40)] for _ in range(6)],
}


def map_doc(nx=40, ny=40, origin=(-10.0, -10.0), resolution=0.5, drivable_value=1):
    return {
        "origin": list(origin),
        "resolution": resolution,
        "dims": [nx, ny],
        "drivable": [[drivable_value] * ny for _ in range(nx)],
        "lane_category_names": ["normal"],
        "lane_category": [[[1.0]] * ny for _ in range(nx)],
        "shoulder_distance": [[[1.0, 1.0]] * ny for _ in range(nx)],
        "divider_distance": [[[1.0, 1.0]] * ny for _ in range(nx)],
        "ped_crossings": [],
    }


def occupancy_doc(nx=40, ny=40, origin=(-10.0, -10.0), resolution=0.5, hot=()):
    """hot: iterable of (t 1-based, x, y, value) probe points."""
    values = np.zeros((6, nx, ny))
    for t, x, y, v in hot:
        ix = int(np.floor((x - origin[0]) / resolution))
        iy = int(np.floor((y - origin[1]) / resolution))
        values[t - 1, ix, iy] = v
    return {
        "origin": list(origin),
        "resolution": resolution,
        "dims": [nx, ny],
        "steps": 6,
        "values": values.tolist(),
    }


def scene_doc(
    scene_id="synthetic",
    detections=(),
    predictions=(),
    occupancy=None,
    map_layers=None,
    ego=None,
    gt_trajectory=None,
    gt_boxes_per_step=None,
):
    doc = {
        "schema": "agentdriver/1",
        "scene_id": scene_id,
        "ego": ego
        or {
            "heading": 0.0,
            "velocity": [0.0, 5.0],
            "acceleration": [0.0, 0.0],
            "history": [[0.0, -10.0], [0.0, -7.5], [0.0, -5.0], [0.0, -2.5]],
            "mission_goal": "go_straight",
            "can_bus_extras": [],
        },
        "detections": list(detections),
        "predictions": list(predictions),
        "occupancy": occupancy or copy.deepcopy(EMPTY_OCCUPANCY),
        "map": map_layers or map_doc(),
    }
    if gt_trajectory is not None:
        doc["gt_trajectory"] = gt_trajectory
    if gt_boxes_per_step is not None:
        doc["gt_boxes_per_step"] = gt_boxes_per_step
    return doc


def detection(object_id, x, y, category="vehicle", length=4.0, width=1.8, heading=0.0):
    return {
        "object_id": object_id,
        "category": category,
        "center": [x, y],
        "size": [length, width],
        "heading": heading,
    }


def make_snapshot(**kwargs):
    return snapshot_from_dict(scene_doc(**kwargs))


def random_scene(rng: np.random.Generator, n_objects=8, n_predictions=4, scene_id="rand"):
    """Random detections/predictions in a +/-50 m square for oracle tests."""
    detections = []
    for i in range(n_objects):
        detections.append(
            detection(
                f"o{i:03d}",
                float(rng.uniform(-50, 50)),
                float(rng.uniform(-50, 50)),
                category=["vehicle", "pedestrian", "cyclist", "other"][int(rng.integers(4))],
                length=float(rng.uniform(0.5, 6.0)),
                width=float(rng.uniform(0.4, 2.5)),
                heading=float(rng.uniform(-np.pi, np.pi)),
            )
        )
    predictions = []
    for i in range(min(n_predictions, n_objects)):
        steps = sorted(rng.choice(np.arange(1, 7), size=int(rng.integers(1, 7)), replace=False).tolist())
        predictions.append(
            {
                "object_id": f"o{i:03d}",
                "waypoints": [
                    [int(t), [float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50))]] for t in steps
                ],
            }
        )
    return make_snapshot(scene_id=scene_id, detections=detections, predictions=predictions)
