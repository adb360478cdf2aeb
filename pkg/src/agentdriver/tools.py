"""Tool library: spatial queries over a scene snapshot plus the dispatcher.

Every tool is a pure query. The dispatcher validates an LLM-issued call
against the tool's parameter schema, runs the query, and renders a
deterministic text observation (templates documented in
docs/observation_templates.md). Errors never escape dispatch: unknown
tools and bad arguments come back as observations so a conversation can
continue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    AgentDriverError,
    ArgumentError,
    BadTimestep,
    UnknownLayer,
    UnknownObject,
    UnknownTool,
)
from .geometry import (
    FRONT_RECT,
    SURROUNDING_RECT,
    OrientedBox,
    Point,
    RectRegion,
    ego_frame_rect,
    euclidean,
    headings_for_trajectory,
)
from .scene import Detection, PredictedTrajectory, SceneSnapshot
from .trajectory import HORIZON_STEPS, Trajectory

# Lane-corridor rule for "leading": nearest detection strictly ahead with
# |x| within half a lane width.
DEFAULT_CORRIDOR_HALF_WIDTH = 1.75

# Collision-check defaults; both are configuration, not dataset facts.
DEFAULT_COLLISION_THRESHOLD = 0.1
DEFAULT_COLLISION_MARGIN = 0.5
DEFAULT_EGO_LENGTH = 4.08
DEFAULT_EGO_WIDTH = 1.73


@dataclass(frozen=True)
class ToolConfig:
    corridor_half_width: float = DEFAULT_CORRIDOR_HALF_WIDTH
    collision_threshold: float = DEFAULT_COLLISION_THRESHOLD
    collision_margin: float = DEFAULT_COLLISION_MARGIN
    ego_length: float = DEFAULT_EGO_LENGTH
    ego_width: float = DEFAULT_EGO_WIDTH


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ToolResult:
    """Rendered observation plus a structured mirror of the same data.

    none_flag marks "return None" outcomes: nothing matched the query and
    the text says so explicitly.
    """

    text: str
    data: dict = field(default_factory=dict)
    none_flag: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _fmt_point(p: Point) -> str:
    return f"({_fmt(p[0])},{_fmt(p[1])})"


def _detection_line(d: Detection) -> str:
    return (
        f"{d.object_id} ({d.category}) at {_fmt_point(d.center)}, "
        f"size {_fmt(d.size[0])}m x {_fmt(d.size[1])}m, heading {_fmt(d.heading)} rad"
    )


def _detection_payload(d: Detection) -> dict:
    return {
        "object_id": d.object_id,
        "category": d.category,
        "center": list(d.center),
        "size": list(d.size),
        "heading": d.heading,
    }


def _trajectory_payload(p: PredictedTrajectory) -> dict:
    return {"object_id": p.object_id, "waypoints": [[t, list(pt)] for t, pt in p.waypoints]}


def _sorted_by_distance(dets: list[Detection]) -> list[Detection]:
    # Deterministic ordering: ascending ego distance, ties by object_id.
    return sorted(dets, key=lambda d: (euclidean(d.center), d.object_id))


# ---------------------------------------------------------------------------
# core queries


def detections_in_rect(snap: SceneSnapshot, rect: RectRegion) -> list[Detection]:
    return _sorted_by_distance([d for d in snap.detections if rect.contains(*d.center)])


def all_detections(snap: SceneSnapshot) -> list[Detection]:
    return _sorted_by_distance(list(snap.detections))


def leading_detection(snap: SceneSnapshot, config: ToolConfig = ToolConfig()) -> Detection | None:
    candidates = [
        d
        for d in snap.detections
        if abs(d.center[0]) <= config.corridor_half_width and d.center[1] > 0.0
    ]
    ordered = _sorted_by_distance(candidates)
    return ordered[0] if ordered else None


def trajectories_for_objects(snap: SceneSnapshot, ids: list[str]) -> list[PredictedTrajectory | None]:
    """One entry per requested id; None where the object has no prediction."""
    results: list[PredictedTrajectory | None] = []
    for object_id in ids:
        if snap.detection_by_id(object_id) is None:
            raise UnknownObject(f"object {object_id!r} is not detected in this scene")
        results.append(snap.prediction_for(object_id))
    return results


def trajectories_in_rect(snap: SceneSnapshot, rect: RectRegion) -> list[PredictedTrajectory]:
    hits = [
        p for p in snap.predictions if any(rect.contains(*pt) for _, pt in p.waypoints)
    ]
    return sorted(hits, key=lambda p: p.object_id)


def all_trajectories(snap: SceneSnapshot) -> list[PredictedTrajectory]:
    return sorted(snap.predictions, key=lambda p: p.object_id)


def waypoints_at_timestep(
    snap: SceneSnapshot, ids: list[str], t: int
) -> list[tuple[str, Point | None]]:
    if not (1 <= t <= HORIZON_STEPS):
        raise BadTimestep(f"timestep {t} outside 1..{HORIZON_STEPS}")
    results: list[tuple[str, Point | None]] = []
    for object_id in ids:
        if snap.detection_by_id(object_id) is None:
            raise UnknownObject(f"object {object_id!r} is not detected in this scene")
        pred = snap.prediction_for(object_id)
        results.append((object_id, pred.point_at(t) if pred else None))
    return results


def occupancy_at(snap: SceneSnapshot, points: list[Point], t: int) -> list[float | None]:
    """Per-point occupation probability; None marks out-of-scope points."""
    if not (1 <= t <= HORIZON_STEPS):
        raise BadTimestep(f"timestep {t} outside 1..{HORIZON_STEPS}")
    return [snap.occupancy.probability_at(x, y, t) for x, y in points]


def ego_footprints(traj: Trajectory, config: ToolConfig) -> list[OrientedBox]:
    """Ego box at each waypoint, heading from consecutive waypoints."""
    headings = headings_for_trajectory(list(traj.points))
    return [
        OrientedBox(p, config.ego_length, config.ego_width, h)
        for p, h in zip(traj.points, headings)
    ]


def collision_probability(
    snap: SceneSnapshot, traj: Trajectory, config: ToolConfig = ToolConfig()
) -> tuple[list[float], bool, list[int]]:
    """Per-step max occupancy under the inflated ego footprint.

    A cell counts when its center falls inside the footprint inflated by
    the safety margin. Out-of-extent cells are ignored; steps whose
    footprint pokes outside the raster are reported so the caller can note
    it. Returns (per-step maxima, any-step-above-threshold flag,
    steps with partial coverage).
    """
    occ = snap.occupancy
    maxima: list[float] = []
    partial: list[int] = []
    for t, box in enumerate(ego_footprints(traj, config), start=1):
        aabb = box.aabb(config.collision_margin)
        ext = occ.extent()
        if aabb[0] < ext[0] or aabb[1] < ext[1] or aabb[2] > ext[2] or aabb[3] > ext[3]:
            partial.append(t)
        best = 0.0
        for ix, iy in occ.cells_in_aabb(*aabb):
            cx, cy = occ.cell_center(ix, iy)
            if box.contains(cx, cy, margin=config.collision_margin):
                v = float(occ.values[t - 1, ix, iy])
                if v > best:
                    best = v
        maxima.append(best)
    flag = any(m > config.collision_threshold for m in maxima)
    return maxima, flag, partial


MAP_LAYERS = ("drivable", "lane_category", "shoulder", "divider")


def map_value_at(snap: SceneSnapshot, layer: str, points: list[Point], ret_prob: bool = False) -> list:
    """Nearest-cell map lookup; None marks out-of-scope points."""
    if layer not in MAP_LAYERS:
        raise UnknownLayer(f"unknown map layer {layer!r}")
    values: list = []
    for x, y in points:
        idx = snap.map.cell_index(x, y)
        if idx is None:
            values.append(None)
            continue
        ix, iy = idx
        if layer == "drivable":
            values.append(bool(snap.map.drivable[ix, iy]))
        elif layer == "lane_category":
            probs = snap.map.lane_category[ix, iy]
            name = snap.map.lane_category_names[int(probs.argmax())]
            if ret_prob:
                values.append((name, [float(p) for p in probs]))
            else:
                values.append(name)
        elif layer == "shoulder":
            left, right = snap.map.shoulder_distance[ix, iy]
            values.append((float(left), float(right)))
        else:
            left, right = snap.map.divider_distance[ix, iy]
            values.append((float(left), float(right)))
    return values


def nearest_ped_crossing(snap: SceneSnapshot) -> tuple[Point, float] | None:
    if not snap.map.ped_crossings:
        return None
    best = min(snap.map.ped_crossings, key=lambda p: (euclidean(p), p))
    return best, euclidean(best)


def drivable_check_for_trajectory(snap: SceneSnapshot, traj: Trajectory) -> list[tuple[bool, bool]]:
    """Per-waypoint (drivable, in_extent); out-of-extent counts as not drivable."""
    results: list[tuple[bool, bool]] = []
    for value in map_value_at(snap, "drivable", list(traj.points)):
        if value is None:
            results.append((False, False))
        else:
            results.append((bool(value), True))
    return results


# ---------------------------------------------------------------------------
# registry

_LOCATIONS_PARAM = {
    "type": "array",
    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "description": "list of (x, y) locations in meters, ego frame",
}
_TRAJECTORY_PARAM = {
    "type": "array",
    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "minItems": HORIZON_STEPS,
    "maxItems": HORIZON_STEPS,
    "description": "planned trajectory as 6 (x, y) waypoints",
}
_RANGE_PARAMS = {
    "x_start": {"type": "number"},
    "x_end": {"type": "number"},
    "y_start": {"type": "number"},
    "y_end": {"type": "number"},
}


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    parameters: dict
    module: str  # detection | prediction | map | occupancy


def _descriptor(name: str, description: str, module: str, properties: dict | None = None, required: list[str] | None = None) -> ToolDescriptor:
    return ToolDescriptor(
        name=name,
        description=description,
        parameters={
            "type": "object",
            "properties": properties or {},
            "required": required or [],
        },
        module=module,
    )


TOOL_DESCRIPTORS: tuple[ToolDescriptor, ...] = (
    _descriptor(
        "get_leading_object_detection",
        "Get the detection of the leading object, the function will return the leading "
        "object id and its position and size. If there is no leading object, return None.",
        "detection",
    ),
    _descriptor(
        "get_surrounding_object_detections",
        "Get the detections of the surrounding objects in a 20m*20m range, the function "
        "will return a list of surrounding object ids and their positions and sizes. "
        "If there is no surrounding object, return None.",
        "detection",
    ),
    _descriptor(
        "get_front_object_detections",
        "Get the detections of the objects in front of you in a 20m*40m range, the "
        "function will return a list of front object ids and their positions and sizes. "
        "If there is no front object, return None.",
        "detection",
    ),
    _descriptor(
        "get_object_detections_in_range",
        "Get the detections of the objects in a customized range "
        "(x_start, x_end)*(y_start, y_end)m^2, the function will return a list of object "
        "ids and their positions and sizes. If there is no object, return None.",
        "detection",
        dict(_RANGE_PARAMS),
        ["x_start", "x_end", "y_start", "y_end"],
    ),
    _descriptor(
        "get_all_object_detections",
        "Get the detections of all objects in the whole scene, the function will return "
        "a list of object ids and their positions and sizes. Always avoid using this "
        "function if there are other choices.",
        "detection",
    ),
    _descriptor(
        "get_leading_object_future_trajectory",
        "Get the predicted future trajectory of the leading object, the function will "
        "return a trajectory containing a series of waypoints. If there is no leading "
        "vehicle, return None.",
        "prediction",
    ),
    _descriptor(
        "get_future_trajectories_for_specific_objects",
        "Get the future trajectories of specific objects (specified by a List of object "
        "ids), the function will return trajectories for each object. If there is no "
        "object, return None.",
        "prediction",
        {"object_ids": {"type": "array", "items": {"type": "string"}}},
        ["object_ids"],
    ),
    _descriptor(
        "get_future_trajectories_in_range",
        "Get the future trajectories where any waypoint in this trajectory falls into a "
        "given range (x_start, x_end)*(y_start, y_end)m^2, the function will return each "
        "trajectory that satisfies the condition. If there is no trajectory satisfied, "
        "return None",
        "prediction",
        dict(_RANGE_PARAMS),
        ["x_start", "x_end", "y_start", "y_end"],
    ),
    _descriptor(
        "get_future_waypoint_of_specific_objects_at_timestep",
        "Get the future waypoints of specific objects at a specific timestep, the "
        "function will return a list of waypoints. If there is no object or the object "
        "does not have a waypoint at the given timestep, return None.",
        "prediction",
        {
            "object_ids": {"type": "array", "items": {"type": "string"}},
            "timestep": {"type": "integer"},
        },
        ["object_ids", "timestep"],
    ),
    _descriptor(
        "get_all_future_trajectories",
        "Get the predicted future trajectories of all objects in the whole scene, the "
        "function will return a list of object ids and their future trajectories. "
        "Always avoid using this function if there are other choices.",
        "prediction",
    ),
    _descriptor(
        "get_drivable_at_locations",
        "Get the drivability at the locations [(x_1, y_1), ..., (x_n, y_n)]. If the "
        "location is out of the map scope, return None.",
        "map",
        {"locations": _LOCATIONS_PARAM},
        ["locations"],
    ),
    _descriptor(
        "check_drivable_of_planned_trajectory",
        "Check the drivability at the planned trajectory.",
        "map",
        {"trajectory": _TRAJECTORY_PARAM},
        ["trajectory"],
    ),
    _descriptor(
        "get_lane_category_at_locations",
        "Get the lane category at the locations [(x_1, y_1), ..., (x_n, y_n)]. If the "
        "location is out of the map scope, return None.",
        "map",
        {"locations": _LOCATIONS_PARAM, "ret_prob": {"type": "boolean"}},
        ["locations"],
    ),
    _descriptor(
        "get_distance_to_shoulder_at_locations",
        "Get the distance to both sides of road shoulders at the locations "
        "[(x_1, y_1), ..., (x_n, y_n)]. If the location is out of the map scope, "
        "return None.",
        "map",
        {"locations": _LOCATIONS_PARAM},
        ["locations"],
    ),
    _descriptor(
        "get_current_shoulder",
        "Get the distance to both sides of road shoulders for the current ego-vehicle "
        "location.",
        "map",
    ),
    _descriptor(
        "get_distance_to_lane_divider_at_locations",
        "Get the distance to both sides of road lane dividers at the locations "
        "[(x_1, y_1), ..., (x_n, y_n)]. If the location is out of the map scope, "
        "return None.",
        "map",
        {"locations": _LOCATIONS_PARAM},
        ["locations"],
    ),
    _descriptor(
        "get_current_lane_divider",
        "Get the distance to both sides of road lane dividers for the current "
        "ego-vehicle location.",
        "map",
    ),
    _descriptor(
        "get_nearest_pedestrian_crossing",
        "Get the location of the nearest pedestrian crossing to the ego-vehicle. If "
        "there is no such pedestrian crossing, return None.",
        "map",
    ),
    _descriptor(
        "get_occupancy_at_locations_for_timestep",
        "Get the probability whether a list of locations [(x_1, y_1), ..., (x_n, y_n)] "
        "is occupied at the timestep t. If the location is out of the occupancy "
        "prediction scope, return None.",
        "occupancy",
        {"locations": _LOCATIONS_PARAM, "timestep": {"type": "integer"}},
        ["locations", "timestep"],
    ),
    _descriptor(
        "check_collision_for_planned_trajectory",
        "Check the probability of whether a planned trajectory "
        "[(x_1, y_1), ..., (x_n, y_n)] collides with other objects.",
        "occupancy",
        {"trajectory": _TRAJECTORY_PARAM},
        ["trajectory"],
    ),
)


class ToolRegistry:
    """Immutable ordered registry of the 20 tool descriptors."""

    def __init__(self, descriptors: tuple[ToolDescriptor, ...] = TOOL_DESCRIPTORS):
        self.descriptors = descriptors
        self._by_name = {d.name: d for d in descriptors}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ToolDescriptor:
        if name not in self._by_name:
            raise UnknownTool(f"unknown tool {name!r}")
        return self._by_name[name]

    def names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    def for_module(self, module: str) -> list[ToolDescriptor]:
        return [d for d in self.descriptors if d.module == module]

    def export_functions(self, module: str | None = None) -> list[dict]:
        """Chat-function-schema export consumed by the LLM interface."""
        descriptors = self.descriptors if module is None else self.for_module(module)
        return [
            {"name": d.name, "description": d.description, "parameters": d.parameters}
            for d in descriptors
        ]


DEFAULT_REGISTRY = ToolRegistry()


# ---------------------------------------------------------------------------
# argument validation (small subset of JSON Schema, enough for our tools)


def _check_type(value, schema: dict, path: str) -> None:
    kind = schema.get("type")
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ArgumentError(f"{path}: expected a number")
        if not math.isfinite(float(value)):
            raise ArgumentError(f"{path}: must be finite")
    elif kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ArgumentError(f"{path}: expected an integer")
    elif kind == "boolean":
        if not isinstance(value, bool):
            raise ArgumentError(f"{path}: expected a boolean")
    elif kind == "string":
        if not isinstance(value, str):
            raise ArgumentError(f"{path}: expected a string")
    elif kind == "array":
        if not isinstance(value, list):
            raise ArgumentError(f"{path}: expected an array")
        if "minItems" in schema and len(value) < schema["minItems"]:
            raise ArgumentError(f"{path}: expected at least {schema['minItems']} items")
        if "maxItems" in schema and len(value) > schema["maxItems"]:
            raise ArgumentError(f"{path}: expected at most {schema['maxItems']} items")
        item_schema = schema.get("items")
        if item_schema:
            for i, item in enumerate(value):
                _check_type(item, item_schema, f"{path}[{i}]")
    elif kind == "object":
        if not isinstance(value, dict):
            raise ArgumentError(f"{path}: expected an object")


def validate_arguments(descriptor: ToolDescriptor, arguments: dict) -> dict:
    if not isinstance(arguments, dict):
        raise ArgumentError("arguments: expected an object")
    properties = descriptor.parameters.get("properties", {})
    for key in descriptor.parameters.get("required", []):
        if key not in arguments:
            raise ArgumentError(f"missing required argument {key!r}")
    for key, value in arguments.items():
        if key not in properties:
            raise ArgumentError(f"unexpected argument {key!r}")
        _check_type(value, properties[key], key)
    return arguments


# ---------------------------------------------------------------------------
# rendering


def _render_detections(dets: list[Detection], header: str, empty: str) -> ToolResult:
    if not dets:
        return ToolResult(text=empty, none_flag=True)
    lines = [header] + [f"- {_detection_line(d)}" for d in dets]
    return ToolResult(text="\n".join(lines), data={"detections": [_detection_payload(d) for d in dets]})


def _render_trajectory_lines(entries: list[tuple[str, PredictedTrajectory | None]]) -> list[str]:
    lines = []
    for object_id, pred in entries:
        if pred is None:
            lines.append(f"- {object_id}: None")
        else:
            pts = ", ".join(f"{_fmt_point(p)}@t{t}" for t, p in pred.waypoints)
            lines.append(f"- {object_id}: {pts}")
    return lines


def _points_arg(arguments: dict) -> list[Point]:
    return [(float(p[0]), float(p[1])) for p in arguments["locations"]]


def _trajectory_arg(arguments: dict) -> Trajectory:
    try:
        return Trajectory.from_list(arguments["trajectory"])
    except Exception as exc:
        raise ArgumentError(f"trajectory: {exc}") from exc


def dispatch(
    snap: SceneSnapshot,
    call: ToolCall,
    registry: ToolRegistry = DEFAULT_REGISTRY,
    config: ToolConfig = ToolConfig(),
) -> ToolResult:
    """Execute a tool call; always returns an observation, never raises."""
    try:
        descriptor = registry.get(call.name)
        arguments = validate_arguments(descriptor, call.arguments or {})
        return _execute(snap, call.name, arguments, config)
    except UnknownTool:
        return ToolResult(
            text=f"Error: unknown tool {call.name!r}.",
            data={"error": {"type": "UnknownTool", "tool": call.name}},
        )
    except ArgumentError as exc:
        return ToolResult(
            text=f"Error: invalid arguments for {call.name!r}: {exc}.",
            data={"error": {"type": "ArgumentError", "tool": call.name, "message": str(exc)}},
        )
    except AgentDriverError as exc:
        return ToolResult(
            text=f"Error: {call.name} failed: {exc}.",
            data={"error": {"type": type(exc).__name__, "tool": call.name, "message": str(exc)}},
        )
    except Exception as exc:  # totality: any valid ToolCall yields a ToolResult
        return ToolResult(
            text=f"Error: {call.name} failed: {exc}.",
            data={"error": {"type": "InternalError", "tool": call.name, "message": str(exc)}},
        )


def _execute(snap: SceneSnapshot, name: str, arguments: dict, config: ToolConfig) -> ToolResult:
    if name == "get_leading_object_detection":
        det = leading_detection(snap, config)
        if det is None:
            return ToolResult(text="No leading object.", none_flag=True)
        return ToolResult(
            text=f"Leading object: {_detection_line(det)}.",
            data={"detection": _detection_payload(det)},
        )

    if name == "get_surrounding_object_detections":
        dets = detections_in_rect(snap, SURROUNDING_RECT)
        return _render_detections(
            dets, "Surrounding objects within 20m x 20m:", "No surrounding objects within 20m x 20m."
        )

    if name == "get_front_object_detections":
        dets = detections_in_rect(snap, FRONT_RECT)
        return _render_detections(
            dets, "Front objects within 20m x 40m:", "No front objects within 20m x 40m."
        )

    if name == "get_object_detections_in_range":
        rect = ego_frame_rect(
            arguments["x_start"], arguments["x_end"], arguments["y_start"], arguments["y_end"]
        )
        dets = detections_in_rect(snap, rect)
        rng = (
            f"({_fmt(rect.x_start)},{_fmt(rect.x_end)})x({_fmt(rect.y_start)},{_fmt(rect.y_end)})"
        )
        return _render_detections(dets, f"Objects in range {rng}:", f"No objects in range {rng}.")

    if name == "get_all_object_detections":
        dets = all_detections(snap)
        return _render_detections(dets, "All detected objects:", "No objects detected in the scene.")

    if name == "get_leading_object_future_trajectory":
        det = leading_detection(snap, config)
        if det is None:
            return ToolResult(text="No leading object.", none_flag=True)
        pred = snap.prediction_for(det.object_id)
        if pred is None:
            return ToolResult(
                text=f"No predicted trajectory for leading object {det.object_id}.", none_flag=True
            )
        lines = ["Leading object future trajectory:"] + _render_trajectory_lines([(det.object_id, pred)])
        return ToolResult(text="\n".join(lines), data={"trajectories": [_trajectory_payload(pred)]})

    if name == "get_future_trajectories_for_specific_objects":
        ids = arguments["object_ids"]
        if not ids:
            return ToolResult(text="No objects specified.", none_flag=True)
        preds = trajectories_for_objects(snap, ids)
        lines = ["Future trajectories:"] + _render_trajectory_lines(list(zip(ids, preds)))
        found = [_trajectory_payload(p) for p in preds if p is not None]
        return ToolResult(text="\n".join(lines), data={"trajectories": found})

    if name == "get_future_trajectories_in_range":
        rect = ego_frame_rect(
            arguments["x_start"], arguments["x_end"], arguments["y_start"], arguments["y_end"]
        )
        preds = trajectories_in_rect(snap, rect)
        if not preds:
            return ToolResult(text="No predicted trajectories in the given range.", none_flag=True)
        lines = ["Trajectories with waypoints in range:"] + _render_trajectory_lines(
            [(p.object_id, p) for p in preds]
        )
        return ToolResult(
            text="\n".join(lines), data={"trajectories": [_trajectory_payload(p) for p in preds]}
        )

    if name == "get_future_waypoint_of_specific_objects_at_timestep":
        ids = arguments["object_ids"]
        t = arguments["timestep"]
        if not ids:
            return ToolResult(text="No objects specified.", none_flag=True)
        entries = waypoints_at_timestep(snap, ids, t)
        lines = [f"Waypoints at timestep {t}:"]
        payload = []
        for object_id, point in entries:
            if point is None:
                lines.append(f"- {object_id}: None")
            else:
                lines.append(f"- {object_id}: {_fmt_point(point)}")
                payload.append({"object_id": object_id, "point": list(point)})
        return ToolResult(text="\n".join(lines), data={"waypoints": payload})

    if name == "get_all_future_trajectories":
        preds = all_trajectories(snap)
        if not preds:
            return ToolResult(text="No predicted trajectories in the scene.", none_flag=True)
        lines = ["All predicted trajectories:"] + _render_trajectory_lines(
            [(p.object_id, p) for p in preds]
        )
        return ToolResult(
            text="\n".join(lines), data={"trajectories": [_trajectory_payload(p) for p in preds]}
        )

    if name == "get_drivable_at_locations":
        points = _points_arg(arguments)
        values = map_value_at(snap, "drivable", points)
        lines = ["Drivability:"]
        payload = []
        for p, v in zip(points, values):
            if v is None:
                lines.append(f"- {_fmt_point(p)}: out of scope")
            else:
                lines.append(f"- {_fmt_point(p)}: {'drivable' if v else 'not drivable'}")
            payload.append({"point": list(p), "drivable": v})
        return ToolResult(text="\n".join(lines), data={"values": payload})

    if name == "check_drivable_of_planned_trajectory":
        traj = _trajectory_arg(arguments)
        results = drivable_check_for_trajectory(snap, traj)
        lines = ["Drivability of planned trajectory:"]
        payload = []
        for i, ((ok, in_extent), p) in enumerate(zip(results, traj.points), start=1):
            if not in_extent:
                lines.append(f"- waypoint {i} {_fmt_point(p)}: out of scope (treated as not drivable)")
            else:
                lines.append(f"- waypoint {i} {_fmt_point(p)}: {'drivable' if ok else 'not drivable'}")
            payload.append({"waypoint": i, "drivable": ok, "in_extent": in_extent})
        return ToolResult(text="\n".join(lines), data={"values": payload})

    if name == "get_lane_category_at_locations":
        points = _points_arg(arguments)
        ret_prob = bool(arguments.get("ret_prob", False))
        values = map_value_at(snap, "lane_category", points, ret_prob=ret_prob)
        lines = ["Lane category:"]
        payload = []
        for p, v in zip(points, values):
            if v is None:
                lines.append(f"- {_fmt_point(p)}: out of scope")
                payload.append({"point": list(p), "category": None})
            elif ret_prob:
                name_, probs = v
                probs_text = ", ".join(
                    f"{n}: {_fmt(q)}" for n, q in zip(snap.map.lane_category_names, probs)
                )
                lines.append(f"- {_fmt_point(p)}: {name_} [{probs_text}]")
                payload.append({"point": list(p), "category": name_, "probabilities": probs})
            else:
                lines.append(f"- {_fmt_point(p)}: {v}")
                payload.append({"point": list(p), "category": v})
        return ToolResult(text="\n".join(lines), data={"values": payload})

    if name in ("get_distance_to_shoulder_at_locations", "get_distance_to_lane_divider_at_locations"):
        layer = "shoulder" if "shoulder" in name else "divider"
        label = "road shoulders" if layer == "shoulder" else "lane dividers"
        points = _points_arg(arguments)
        values = map_value_at(snap, layer, points)
        lines = [f"Distance to {label}:"]
        payload = []
        for p, v in zip(points, values):
            if v is None:
                lines.append(f"- {_fmt_point(p)}: out of scope")
                payload.append({"point": list(p), "left": None, "right": None})
            else:
                lines.append(f"- {_fmt_point(p)}: left {_fmt(v[0])}m, right {_fmt(v[1])}m")
                payload.append({"point": list(p), "left": v[0], "right": v[1]})
        return ToolResult(text="\n".join(lines), data={"values": payload})

    if name in ("get_current_shoulder", "get_current_lane_divider"):
        layer = "shoulder" if "shoulder" in name else "divider"
        label = "road shoulders" if layer == "shoulder" else "lane dividers"
        value = map_value_at(snap, layer, [(0.0, 0.0)])[0]
        if value is None:
            return ToolResult(text=f"Current position is out of the map scope for {label}.", none_flag=True)
        return ToolResult(
            text=f"Distance to {label} from current position: left {_fmt(value[0])}m, right {_fmt(value[1])}m.",
            data={"left": value[0], "right": value[1]},
        )

    if name == "get_nearest_pedestrian_crossing":
        found = nearest_ped_crossing(snap)
        if found is None:
            return ToolResult(text="No pedestrian crossing found.", none_flag=True)
        point, distance = found
        return ToolResult(
            text=f"Nearest pedestrian crossing at {_fmt_point(point)}, distance {_fmt(distance)}m.",
            data={"point": list(point), "distance": distance},
        )

    if name == "get_occupancy_at_locations_for_timestep":
        points = _points_arg(arguments)
        t = arguments["timestep"]
        values = occupancy_at(snap, points, t)
        lines = [f"Occupancy at timestep {t}:"]
        payload = []
        for p, v in zip(points, values):
            if v is None:
                lines.append(f"- {_fmt_point(p)}: out of scope")
            else:
                lines.append(f"- {_fmt_point(p)}: {_fmt(v)}")
            payload.append({"point": list(p), "probability": v})
        return ToolResult(text="\n".join(lines), data={"values": payload})

    if name == "check_collision_for_planned_trajectory":
        traj = _trajectory_arg(arguments)
        maxima, flag, partial = collision_probability(snap, traj, config)
        lines = [
            f"Collision check (threshold {_fmt(config.collision_threshold)}, "
            f"margin {_fmt(config.collision_margin)}m):"
        ]
        for t, m in enumerate(maxima, start=1):
            note = " (footprint partially out of occupancy extent)" if t in partial else ""
            lines.append(f"- step {t}: max probability {_fmt(m)}{note}")
        lines.append("Result: collision detected." if flag else "Result: no collision detected.")
        return ToolResult(
            text="\n".join(lines),
            data={"max_probability_per_step": maxima, "collision": flag, "partial_steps": partial},
        )

    raise UnknownTool(f"unknown tool {name!r}")  # defensive: registry covers all names
