"""Open-loop planning metrics in both reporting conventions.

Per sample, the L2 profile is the per-timestep Euclidean distance between
the planned and human trajectories; collisions place the ego box on each
planned waypoint and test overlap against a ground-truth occupancy raster
built from object boxes. The two conventions differ in two ways:

* horizon reduction — "uniad" reports the value at timestep 2k for the
  k-second mark, "stp3" reports the running average over timesteps 1..2k
  (and its headline average is the average of those averages);
* ground-truth occupancy — "uniad" rasterizes vehicle boxes only, "stp3"
  rasterizes vehicles and pedestrians.

Both intermediate arrays (per-step means and collision counts) are part
of every report so either reading of the aggregation can be audited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySet, UnknownCategory, ValidationError
from .geometry import OrientedBox
from .scene import DETECTION_CATEGORIES, GTBox
from .tools import DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH, ego_footprints, ToolConfig
from .trajectory import HORIZON_STEPS, Trajectory

CONVENTIONS = ("uniad", "stp3")

# Which ground-truth box categories enter the occupancy raster.
CATEGORY_FILTER = {
    "uniad": frozenset({"vehicle"}),
    "stp3": frozenset({"vehicle", "pedestrian"}),
}

DEFAULT_RESOLUTION = 0.5


def l2_profile(pred: Trajectory, gt: Trajectory) -> np.ndarray:
    """Per-timestep Euclidean distance, a 6-vector."""
    p = np.asarray(pred.points, dtype=np.float64)
    g = np.asarray(gt.points, dtype=np.float64)
    return np.sqrt(((p - g) ** 2).sum(axis=1))


@dataclass
class BinaryOccupancy:
    """Per-step occupied cell centers (ground truth, no probabilities)."""

    centers_per_step: list[np.ndarray]  # 6 arrays of shape (n, 2)
    origin: tuple[float, float]
    resolution: float
    dims: tuple[int, int]


def _filtered_boxes(boxes_per_step, convention: str) -> list[list[GTBox]]:
    if convention not in CONVENTIONS:
        raise ValidationError("convention", f"must be one of {CONVENTIONS}")
    allowed = CATEGORY_FILTER[convention]
    out: list[list[GTBox]] = []
    for step in boxes_per_step:
        kept = []
        for box in step:
            if box.category not in DETECTION_CATEGORIES:
                raise UnknownCategory(f"unknown ground-truth category {box.category!r}")
            if box.category in allowed:
                kept.append(box)
        out.append(kept)
    return out


def gt_occupancy(
    boxes_per_step,
    convention: str,
    resolution: float = DEFAULT_RESOLUTION,
) -> BinaryOccupancy:
    """Rasterize ground-truth boxes per step; a cell is occupied when its
    center lies inside a box. The extent is the padded AABB of all boxes,
    snapped to the resolution grid."""
    if len(boxes_per_step) != HORIZON_STEPS:
        raise ValidationError("gt_boxes_per_step", f"expected {HORIZON_STEPS} steps")
    filtered = _filtered_boxes(boxes_per_step, convention)
    all_boxes = [b for step in filtered for b in step]
    if not all_boxes:
        return BinaryOccupancy(
            [np.zeros((0, 2)) for _ in range(HORIZON_STEPS)], (0.0, 0.0), resolution, (1, 1)
        )
    corners = np.array([b.box().aabb() for b in all_boxes])
    min_x = math.floor(corners[:, 0].min() / resolution) * resolution - resolution
    min_y = math.floor(corners[:, 1].min() / resolution) * resolution - resolution
    max_x = math.ceil(corners[:, 2].max() / resolution) * resolution + resolution
    max_y = math.ceil(corners[:, 3].max() / resolution) * resolution + resolution
    nx = max(1, int(round((max_x - min_x) / resolution)))
    ny = max(1, int(round((max_y - min_y) / resolution)))
    xs = min_x + (np.arange(nx) + 0.5) * resolution
    ys = min_y + (np.arange(ny) + 0.5) * resolution
    grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
    centers = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)

    centers_per_step: list[np.ndarray] = []
    for step_boxes in filtered:
        occupied = np.zeros(len(centers), dtype=bool)
        for b in step_boxes:
            occupied |= _inside_box(centers, b.box())
        centers_per_step.append(centers[occupied])
    return BinaryOccupancy(centers_per_step, (min_x, min_y), resolution, (nx, ny))


def _inside_box(points: np.ndarray, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    d = points - np.array(box.center)
    sin_h, cos_h = math.sin(box.heading), math.cos(box.heading)
    f = -sin_h * d[:, 0] + cos_h * d[:, 1]
    r = cos_h * d[:, 0] + sin_h * d[:, 1]
    return (np.abs(f) <= box.length / 2.0 + margin) & (np.abs(r) <= box.width / 2.0 + margin)


def collision_per_step(
    pred: Trajectory,
    gt_occ: BinaryOccupancy,
    ego_footprint: tuple[float, float] = (DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH),
) -> list[bool]:
    """Step t collides when any occupied cell center falls inside the ego
    box placed on waypoint t (heading from consecutive waypoints)."""
    config = ToolConfig(ego_length=ego_footprint[0], ego_width=ego_footprint[1])
    flags: list[bool] = []
    for t, box in enumerate(ego_footprints(pred, config), start=1):
        occupied = gt_occ.centers_per_step[t - 1]
        if not len(occupied):
            flags.append(False)
            continue
        flags.append(bool(_inside_box(occupied, box).any()))
    return flags


@dataclass
class EvalSample:
    pred: Trajectory
    gt: Trajectory
    gt_boxes_per_step: tuple = ()


@dataclass
class MetricReport:
    convention: str
    num_samples: int
    l2_per_horizon: dict  # {"1s": .., "2s": .., "3s": .., "avg": ..}
    collision_pct_per_horizon: dict
    l2_mean_per_step: list[float] = field(default_factory=list)
    collision_counts_per_step: list[int] = field(default_factory=list)
    collision_rate_per_step_pct: list[float] = field(default_factory=list)
    resolution: float = DEFAULT_RESOLUTION
    ego_footprint: tuple[float, float] = (DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH)

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "num_samples": self.num_samples,
            "l2_m": self.l2_per_horizon,
            "collision_pct": self.collision_pct_per_horizon,
            "intermediate": {
                "l2_mean_per_step": self.l2_mean_per_step,
                "collision_counts_per_step": self.collision_counts_per_step,
                "collision_rate_per_step_pct": self.collision_rate_per_step_pct,
            },
            "settings": {
                "resolution": self.resolution,
                "ego_footprint": list(self.ego_footprint),
                "collision_rate_denominator": "samples_per_timestep",
            },
        }


def _reduce(values: np.ndarray, convention: str) -> dict:
    """Apply the convention's horizon reduction to a per-step 6-vector."""
    out = {}
    per_k = []
    for k in (1, 2, 3):
        if convention == "uniad":
            v = float(values[2 * k - 1])
        else:
            v = float(values[: 2 * k].sum() / (2 * k))
        out[f"{k}s"] = v
        per_k.append(v)
    out["avg"] = float(np.mean(per_k))
    return out


def report(
    samples: list[EvalSample],
    convention: str,
    resolution: float = DEFAULT_RESOLUTION,
    ego_footprint: tuple[float, float] = (DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH),
) -> MetricReport:
    """Aggregate one convention's metrics over an evaluation set."""
    if convention not in CONVENTIONS:
        raise ValidationError("convention", f"must be one of {CONVENTIONS}")
    if not samples:
        raise EmptySet("no samples to evaluate")
    profiles = np.stack([l2_profile(s.pred, s.gt) for s in samples])
    l2_mean = profiles.mean(axis=0)

    counts = np.zeros(HORIZON_STEPS, dtype=np.int64)
    for s in samples:
        boxes = s.gt_boxes_per_step if s.gt_boxes_per_step else tuple(() for _ in range(HORIZON_STEPS))
        occ = gt_occupancy(boxes, convention, resolution)
        flags = collision_per_step(s.pred, occ, ego_footprint)
        counts += np.array(flags, dtype=np.int64)
    rates_pct = counts / float(len(samples)) * 100.0

    return MetricReport(
        convention=convention,
        num_samples=len(samples),
        l2_per_horizon=_reduce(l2_mean, convention),
        collision_pct_per_horizon=_reduce(rates_pct, convention),
        l2_mean_per_step=[float(v) for v in l2_mean],
        collision_counts_per_step=[int(c) for c in counts],
        collision_rate_per_step_pct=[float(v) for v in rates_pct],
        resolution=resolution,
        ego_footprint=ego_footprint,
    )


def format_table(reports: list[MetricReport]) -> str:
    """Text table with one row per convention, L2 and collision blocks."""
    lines = [
        f"{'Metrics':<16}{'L2 (m)':>28}{'Collision (%)':>34}",
        f"{'':<16}{'1s':>7}{'2s':>7}{'3s':>7}{'Avg':>7}{'1s':>9}{'2s':>9}{'3s':>8}{'Avg':>8}",
    ]
    for r in reports:
        l2 = r.l2_per_horizon
        col = r.collision_pct_per_horizon
        lines.append(
            f"{r.convention:<16}"
            f"{l2['1s']:>7.3f}{l2['2s']:>7.3f}{l2['3s']:>7.3f}{l2['avg']:>7.3f}"
            f"{col['1s']:>9.3f}{col['2s']:>9.3f}{col['3s']:>8.3f}{col['avg']:>8.3f}"
        )
    lines.append("")
    lines.append(
        f"samples: {reports[0].num_samples}; raster resolution {reports[0].resolution} m; "
        f"ego footprint {reports[0].ego_footprint[0]} m x {reports[0].ego_footprint[1]} m; "
        "collision rate denominator: samples per timestep"
    )
    return "\n".join(lines)
