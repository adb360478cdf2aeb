"""Scene snapshot model and JSON ingestion.

A scene file stands in for the outputs of upstream perception/prediction
networks: detections, predicted trajectories, an occupancy volume, and map
layers, all in the ego frame at one timestep. The JSON schema is documented
field by field in docs/scene_schema.md and versioned via the top-level
``"schema": "agentdriver/1"`` marker.

Snapshots are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import OrientedBox, Point
from .trajectory import HORIZON_STEPS, Trajectory

SCHEMA_ID = "agentdriver/1"

MISSION_GOALS = ("go_straight", "turn_left", "turn_right")
DETECTION_CATEGORIES = ("vehicle", "pedestrian", "cyclist", "other")

HISTORY_LENGTH = 4  # past 2D waypoints at 0.5 s spacing, most-recent last


@dataclass(frozen=True)
class EgoState:
    position: Point  # always (0, 0): the snapshot is expressed in the ego frame
    heading: float
    velocity: Point
    acceleration: Point
    history: tuple[Point, ...]
    mission_goal: str
    can_bus_extras: tuple[float, ...] = ()

    def goal_one_hot(self) -> tuple[float, float, float]:
        return tuple(1.0 if g == self.mission_goal else 0.0 for g in MISSION_GOALS)

    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class Detection:
    object_id: str
    category: str
    center: Point
    size: tuple[float, float]  # (length, width)
    heading: float

    def box(self) -> OrientedBox:
        return OrientedBox(self.center, self.size[0], self.size[1], self.heading)


@dataclass(frozen=True)
class PredictedTrajectory:
    object_id: str
    waypoints: tuple[tuple[int, Point], ...]  # (timestep 1..6, point); coverage may be partial

    def point_at(self, t: int) -> Point | None:
        for step, p in self.waypoints:
            if step == t:
                return p
        return None


class Raster:
    """Shared geo-transform for occupancy and map rasters.

    ``origin`` is the minimum corner of cell (0, 0); cell (ix, iy) covers
    the half-open square [origin + i*res, origin + (i+1)*res). Queries use
    nearest-cell (containing-cell) lookup and refuse to extrapolate:
    out-of-extent points yield None, never a default value.
    """

    def __init__(self, origin: Point, resolution: float, dims: tuple[int, int]):
        if resolution <= 0:
            raise ValidationError("resolution", "must be > 0")
        if dims[0] <= 0 or dims[1] <= 0:
            raise ValidationError("dims", "must be positive")
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.dims = (int(dims[0]), int(dims[1]))

    def cell_index(self, x: float, y: float) -> tuple[int, int] | None:
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= ix < self.dims[0] and 0 <= iy < self.dims[1]:
            return ix, iy
        return None

    def cell_center(self, ix: int, iy: int) -> Point:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def cells_in_aabb(self, min_x: float, min_y: float, max_x: float, max_y: float) -> list[tuple[int, int]]:
        """Indices of cells whose center lies inside the given AABB, row-major."""
        lo_x = max(0, math.ceil((min_x - self.origin[0]) / self.resolution - 0.5))
        hi_x = min(self.dims[0] - 1, math.floor((max_x - self.origin[0]) / self.resolution - 0.5))
        lo_y = max(0, math.ceil((min_y - self.origin[1]) / self.resolution - 0.5))
        hi_y = min(self.dims[1] - 1, math.floor((max_y - self.origin[1]) / self.resolution - 0.5))
        return [(ix, iy) for ix in range(lo_x, hi_x + 1) for iy in range(lo_y, hi_y + 1)]

    def extent(self) -> tuple[float, float, float, float]:
        return (
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.dims[0] * self.resolution,
            self.origin[1] + self.dims[1] * self.resolution,
        )


class OccupancyVolume(Raster):
    """Occupation probabilities per (timestep, cell) over the 6-step horizon."""

    def __init__(self, origin: Point, resolution: float, dims: tuple[int, int], values: np.ndarray):
        super().__init__(origin, resolution, dims)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (HORIZON_STEPS, self.dims[0], self.dims[1]):
            raise ValidationError(
                "occupancy.values",
                f"expected shape {(HORIZON_STEPS, *self.dims)}, got {values.shape}",
            )
        if values.size and (np.min(values) < 0.0 or np.max(values) > 1.0):
            raise ValidationError("occupancy.values", "probabilities must lie in [0,1]")
        self.values = values
        self.values.setflags(write=False)

    @property
    def steps(self) -> int:
        return HORIZON_STEPS

    def probability_at(self, x: float, y: float, t: int) -> float | None:
        """Probability at timestep t (1..6); None when out of extent."""
        idx = self.cell_index(x, y)
        if idx is None:
            return None
        return float(self.values[t - 1, idx[0], idx[1]])


class MapLayers(Raster):
    """Static map rasters sharing one geo-transform, plus crossing centroids."""

    def __init__(
        self,
        origin: Point,
        resolution: float,
        dims: tuple[int, int],
        drivable: np.ndarray,
        lane_category_names: tuple[str, ...],
        lane_category: np.ndarray,
        shoulder_distance: np.ndarray,
        divider_distance: np.ndarray,
        ped_crossings: tuple[Point, ...],
    ):
        super().__init__(origin, resolution, dims)
        self.drivable = np.asarray(drivable, dtype=bool)
        if self.drivable.shape != self.dims:
            raise ValidationError("map.drivable", f"expected shape {self.dims}, got {self.drivable.shape}")
        if not lane_category_names:
            raise ValidationError("map.lane_category_names", "must be non-empty")
        self.lane_category_names = tuple(lane_category_names)
        self.lane_category = np.asarray(lane_category, dtype=np.float64)
        expected = (*self.dims, len(self.lane_category_names))
        if self.lane_category.shape != expected:
            raise ValidationError("map.lane_category", f"expected shape {expected}, got {self.lane_category.shape}")
        self.shoulder_distance = np.asarray(shoulder_distance, dtype=np.float64)
        if self.shoulder_distance.shape != (*self.dims, 2):
            raise ValidationError("map.shoulder_distance", "expected per-cell (left, right) pairs")
        self.divider_distance = np.asarray(divider_distance, dtype=np.float64)
        if self.divider_distance.shape != (*self.dims, 2):
            raise ValidationError("map.divider_distance", "expected per-cell (left, right) pairs")
        for name, arr in (("shoulder_distance", self.shoulder_distance), ("divider_distance", self.divider_distance)):
            if arr.size and np.min(arr) < 0.0:
                raise ValidationError(f"map.{name}", "distances must be >= 0")
        self.ped_crossings = tuple((float(p[0]), float(p[1])) for p in ped_crossings)
        for arr in (self.drivable, self.lane_category, self.shoulder_distance, self.divider_distance):
            arr.setflags(write=False)


@dataclass(frozen=True)
class GTBox:
    """Ground-truth object box at one future step, for metric occupancy."""

    center: Point
    size: tuple[float, float]
    heading: float
    category: str

    def box(self) -> OrientedBox:
        return OrientedBox(self.center, self.size[0], self.size[1], self.heading)


@dataclass(frozen=True)
class SceneSnapshot:
    scene_id: str
    ego: EgoState
    detections: tuple[Detection, ...]
    predictions: tuple[PredictedTrajectory, ...]
    occupancy: OccupancyVolume
    map: MapLayers
    gt_trajectory: Trajectory | None = None
    gt_boxes_per_step: tuple[tuple[GTBox, ...], ...] | None = None
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def detection_by_id(self, object_id: str) -> Detection | None:
        return self._by_id.get(object_id)

    def prediction_for(self, object_id: str) -> PredictedTrajectory | None:
        for pred in self.predictions:
            if pred.object_id == object_id:
                return pred
        return None

    def is_evaluation_sample(self) -> bool:
        return self.gt_trajectory is not None


# ---------------------------------------------------------------------------
# parsing helpers: every reader names the field it is reading so validation
# errors carry exact paths like "predictions[0].object_id".


def _req(obj: dict, key: str, path: str):
    if key not in obj:
        raise ValidationError(f"{path}.{key}" if path else key, "missing")
    return obj[key]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, "expected a number")
    v = float(value)
    if not math.isfinite(v):
        raise ValidationError(path, "must be finite")
    return v


def _point(value, path: str) -> Point:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValidationError(path, "expected [x, y]")
    return (_num(value[0], f"{path}[0]"), _num(value[1], f"{path}[1]"))


def _parse_ego(raw: dict, history_length: int) -> EgoState:
    position = _point(raw.get("position", [0.0, 0.0]), "ego.position")
    if position != (0.0, 0.0):
        raise ValidationError("ego.position", "must be (0,0); scenes are ego-frame")
    heading = _num(_req(raw, "heading", "ego"), "ego.heading")
    if not (-math.pi < heading <= math.pi):
        raise ValidationError("ego.heading", "must lie in (-pi, pi]")
    velocity = _point(_req(raw, "velocity", "ego"), "ego.velocity")
    acceleration = _point(_req(raw, "acceleration", "ego"), "ego.acceleration")
    history_raw = _req(raw, "history", "ego")
    if not isinstance(history_raw, list) or len(history_raw) != history_length:
        raise ValidationError("ego.history", f"expected {history_length} past waypoints")
    history = tuple(_point(p, f"ego.history[{i}]") for i, p in enumerate(history_raw))
    goal = _req(raw, "mission_goal", "ego")
    if goal not in MISSION_GOALS:
        raise ValidationError("ego.mission_goal", f"must be one of {MISSION_GOALS}")
    extras_raw = raw.get("can_bus_extras", [])
    if not isinstance(extras_raw, list):
        raise ValidationError("ego.can_bus_extras", "expected a list of numbers")
    extras = tuple(_num(v, f"ego.can_bus_extras[{i}]") for i, v in enumerate(extras_raw))
    return EgoState(position, heading, velocity, acceleration, history, goal, extras)


def _parse_detection(raw: dict, path: str) -> Detection:
    object_id = _req(raw, "object_id", path)
    if not isinstance(object_id, str) or not object_id:
        raise ValidationError(f"{path}.object_id", "expected a non-empty string")
    category = _req(raw, "category", path)
    if category not in DETECTION_CATEGORIES:
        raise ValidationError(f"{path}.category", f"must be one of {DETECTION_CATEGORIES}")
    center = _point(_req(raw, "center", path), f"{path}.center")
    size_raw = _req(raw, "size", path)
    size = _point(size_raw, f"{path}.size")
    if size[0] <= 0 or size[1] <= 0:
        raise ValidationError(f"{path}.size", "length and width must be > 0")
    heading = _num(_req(raw, "heading", path), f"{path}.heading")
    return Detection(object_id, category, center, size, heading)


def _parse_prediction(raw: dict, path: str, known_ids: set[str]) -> PredictedTrajectory:
    object_id = _req(raw, "object_id", path)
    if object_id not in known_ids:
        raise ValidationError(f"{path}.object_id", f"unknown object {object_id!r}")
    waypoints_raw = _req(raw, "waypoints", path)
    if not isinstance(waypoints_raw, list):
        raise ValidationError(f"{path}.waypoints", "expected a list")
    waypoints: list[tuple[int, Point]] = []
    last_t = 0
    for i, entry in enumerate(waypoints_raw):
        wp_path = f"{path}.waypoints[{i}]"
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ValidationError(wp_path, "expected [timestep, [x, y]]")
        t = entry[0]
        if not isinstance(t, int) or isinstance(t, bool) or not (1 <= t <= HORIZON_STEPS):
            raise ValidationError(f"{wp_path}[0]", "timestep must be an integer in 1..6")
        if t <= last_t:
            raise ValidationError(f"{wp_path}[0]", "timesteps must be strictly increasing")
        last_t = t
        waypoints.append((t, _point(entry[1], f"{wp_path}[1]")))
    return PredictedTrajectory(object_id, tuple(waypoints))


def _parse_occupancy(raw: dict) -> OccupancyVolume:
    origin = _point(_req(raw, "origin", "occupancy"), "occupancy.origin")
    resolution = _num(_req(raw, "resolution", "occupancy"), "occupancy.resolution")
    dims_raw = _req(raw, "dims", "occupancy")
    if not isinstance(dims_raw, list) or len(dims_raw) != 2:
        raise ValidationError("occupancy.dims", "expected [nx, ny]")
    steps = raw.get("steps", HORIZON_STEPS)
    if steps != HORIZON_STEPS:
        raise ValidationError("occupancy.steps", f"must be {HORIZON_STEPS}")
    values = _req(raw, "values", "occupancy")
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError("occupancy.values", f"not a numeric array: {exc}") from exc
    return OccupancyVolume(origin, resolution, (dims_raw[0], dims_raw[1]), arr)


def _parse_map(raw: dict) -> MapLayers:
    origin = _point(_req(raw, "origin", "map"), "map.origin")
    resolution = _num(_req(raw, "resolution", "map"), "map.resolution")
    dims_raw = _req(raw, "dims", "map")
    if not isinstance(dims_raw, list) or len(dims_raw) != 2:
        raise ValidationError("map.dims", "expected [nx, ny]")
    names = _req(raw, "lane_category_names", "map")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ValidationError("map.lane_category_names", "expected a list of strings")
    try:
        return MapLayers(
            origin,
            resolution,
            (dims_raw[0], dims_raw[1]),
            np.asarray(_req(raw, "drivable", "map")),
            tuple(names),
            np.asarray(_req(raw, "lane_category", "map"), dtype=np.float64),
            np.asarray(_req(raw, "shoulder_distance", "map"), dtype=np.float64),
            np.asarray(_req(raw, "divider_distance", "map"), dtype=np.float64),
            tuple(_point(p, f"map.ped_crossings[{i}]") for i, p in enumerate(raw.get("ped_crossings", []))),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError("map", f"malformed raster: {exc}") from exc


def _parse_gt_boxes(raw: list, path: str) -> tuple[tuple[GTBox, ...], ...]:
    if len(raw) != HORIZON_STEPS:
        raise ValidationError(path, f"expected {HORIZON_STEPS} per-step box lists")
    steps: list[tuple[GTBox, ...]] = []
    for t, boxes in enumerate(raw):
        if not isinstance(boxes, list):
            raise ValidationError(f"{path}[{t}]", "expected a list of boxes")
        parsed = []
        for i, b in enumerate(boxes):
            bp = f"{path}[{t}][{i}]"
            category = _req(b, "category", bp)
            if category not in DETECTION_CATEGORIES:
                raise ValidationError(f"{bp}.category", f"must be one of {DETECTION_CATEGORIES}")
            size = _point(_req(b, "size", bp), f"{bp}.size")
            if size[0] <= 0 or size[1] <= 0:
                raise ValidationError(f"{bp}.size", "length and width must be > 0")
            parsed.append(
                GTBox(
                    center=_point(_req(b, "center", bp), f"{bp}.center"),
                    size=size,
                    heading=_num(_req(b, "heading", bp), f"{bp}.heading"),
                    category=category,
                )
            )
        steps.append(tuple(parsed))
    return tuple(steps)


def snapshot_from_dict(doc: dict, history_length: int = HISTORY_LENGTH) -> SceneSnapshot:
    """Validate a parsed scene document and build the immutable snapshot."""
    if not isinstance(doc, dict):
        raise ValidationError("", "top-level document must be an object")
    schema = doc.get("schema")
    if schema != SCHEMA_ID:
        raise ValidationError("schema", f"expected {SCHEMA_ID!r}, got {schema!r}")
    scene_id = _req(doc, "scene_id", "")
    if not isinstance(scene_id, str) or not scene_id:
        raise ValidationError("scene_id", "expected a non-empty string")

    ego = _parse_ego(_req(doc, "ego", ""), history_length)

    detections_raw = doc.get("detections", [])
    if not isinstance(detections_raw, list):
        raise ValidationError("detections", "expected a list")
    detections = tuple(_parse_detection(d, f"detections[{i}]") for i, d in enumerate(detections_raw))
    seen: set[str] = set()
    for i, det in enumerate(detections):
        if det.object_id in seen:
            raise ValidationError(f"detections[{i}].object_id", f"duplicate id {det.object_id!r}")
        seen.add(det.object_id)

    predictions_raw = doc.get("predictions", [])
    if not isinstance(predictions_raw, list):
        raise ValidationError("predictions", "expected a list")
    predictions = tuple(
        _parse_prediction(p, f"predictions[{i}]", seen) for i, p in enumerate(predictions_raw)
    )

    occupancy = _parse_occupancy(_req(doc, "occupancy", ""))
    map_layers = _parse_map(_req(doc, "map", ""))

    gt_traj = None
    if doc.get("gt_trajectory") is not None:
        raw_traj = doc["gt_trajectory"]
        if not isinstance(raw_traj, list) or len(raw_traj) != HORIZON_STEPS:
            raise ValidationError("gt_trajectory", f"expected {HORIZON_STEPS} waypoints")
        gt_traj = Trajectory(tuple(_point(p, f"gt_trajectory[{i}]") for i, p in enumerate(raw_traj)))

    gt_boxes = None
    if doc.get("gt_boxes_per_step") is not None:
        gt_boxes = _parse_gt_boxes(doc["gt_boxes_per_step"], "gt_boxes_per_step")

    snap = SceneSnapshot(
        scene_id=scene_id,
        ego=ego,
        detections=detections,
        predictions=predictions,
        occupancy=occupancy,
        map=map_layers,
        gt_trajectory=gt_traj,
        gt_boxes_per_step=gt_boxes,
    )
    snap._by_id.update({d.object_id: d for d in detections})
    return snap


def load_snapshot(path: str | Path, history_length: int = HISTORY_LENGTH) -> SceneSnapshot:
    """Load and fully validate one scene file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scene file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scene file {path} is not valid JSON: {exc}") from exc
    return snapshot_from_dict(doc)


def snapshot_to_dict(snap: SceneSnapshot) -> dict:
    """Inverse of snapshot_from_dict; floats round-trip bit-exactly."""
    doc: dict = {
        "schema": SCHEMA_ID,
        "scene_id": snap.scene_id,
        "ego": {
            "position": [0.0, 0.0],
            "heading": snap.ego.heading,
            "velocity": list(snap.ego.velocity),
            "acceleration": list(snap.ego.acceleration),
            "history": [list(p) for p in snap.ego.history],
            "mission_goal": snap.ego.mission_goal,
            "can_bus_extras": list(snap.ego.can_bus_extras),
        },
        "detections": [
            {
                "object_id": d.object_id,
                "category": d.category,
                "center": list(d.center),
                "size": list(d.size),
                "heading": d.heading,
            }
            for d in snap.detections
        ],
        "predictions": [
            {"object_id": p.object_id, "waypoints": [[t, list(pt)] for t, pt in p.waypoints]}
            for p in snap.predictions
        ],
        "occupancy": {
            "origin": list(snap.occupancy.origin),
            "resolution": snap.occupancy.resolution,
            "dims": list(snap.occupancy.dims),
            "steps": HORIZON_STEPS,
            "values": snap.occupancy.values.tolist(),
        },
        "map": {
            "origin": list(snap.map.origin),
            "resolution": snap.map.resolution,
            "dims": list(snap.map.dims),
            "drivable": snap.map.drivable.astype(int).tolist(),
            "lane_category_names": list(snap.map.lane_category_names),
            "lane_category": snap.map.lane_category.tolist(),
            "shoulder_distance": snap.map.shoulder_distance.tolist(),
            "divider_distance": snap.map.divider_distance.tolist(),
            "ped_crossings": [list(p) for p in snap.map.ped_crossings],
        },
    }
    if snap.gt_trajectory is not None:
        doc["gt_trajectory"] = snap.gt_trajectory.to_list()
    if snap.gt_boxes_per_step is not None:
        doc["gt_boxes_per_step"] = [
            [
                {"center": list(b.center), "size": list(b.size), "heading": b.heading, "category": b.category}
                for b in step
            ]
            for step in snap.gt_boxes_per_step
        ]
    return doc


def serialize_snapshot(snap: SceneSnapshot) -> str:
    return json.dumps(snapshot_to_dict(snap), indent=2, sort_keys=True)
