"""Planned-trajectory type and its text codec.

A trajectory is 6 planar waypoints covering a 3 s horizon at 0.5 s spacing.
The text form is the exchange format with the motion-planning LLM: six
parenthesized pairs with two decimals, e.g. ``(1.23,0.32), (2.46,0.60), ...``.
Decoding is strict — it is also the detector for invalid planner output.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import DecodeError, ValidationError

HORIZON_STEPS = 6
STEP_SECONDS = 0.5

_PAIR_GROUP = re.compile(r"\(([^()]*)\)")


@dataclass(frozen=True)
class Trajectory:
    """Exactly 6 finite (x, y) waypoints in the ego frame."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.points) != HORIZON_STEPS:
            raise ValidationError("trajectory", f"expected {HORIZON_STEPS} waypoints, got {len(self.points)}")
        for i, (x, y) in enumerate(self.points):
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValidationError(f"trajectory[{i}]", "non-finite coordinate")

    @staticmethod
    def from_list(raw: list) -> "Trajectory":
        return Trajectory(tuple((float(p[0]), float(p[1])) for p in raw))

    def to_list(self) -> list[list[float]]:
        return [[x, y] for x, y in self.points]


def encode_trajectory(traj: Trajectory) -> str:
    """Render a trajectory as six 2-decimal pairs, comma-space separated."""
    return ", ".join(f"({x:.2f},{y:.2f})" for x, y in traj.points)


def decode_trajectory(text: str) -> Trajectory:
    """Parse the text form back into a trajectory.

    Accepts optional whitespace inside pairs. Every parenthesized group in
    the text must be a valid numeric pair and there must be exactly 6 of
    them; anything else raises DecodeError describing what was found.
    """
    groups = _PAIR_GROUP.findall(text)
    pairs: list[tuple[float, float]] = []
    bad_token: str | None = None
    for body in groups:
        tokens = [t.strip() for t in body.split(",")]
        if len(tokens) != 2:
            if bad_token is None:
                bad_token = body.strip() or "()"
            continue
        try:
            x, y = float(tokens[0]), float(tokens[1])
        except ValueError:
            if bad_token is None:
                bad_token = tokens[0] if _is_bad_number(tokens[0]) else tokens[1]
            continue
        if not (math.isfinite(x) and math.isfinite(y)):
            if bad_token is None:
                bad_token = tokens[0] if not math.isfinite(x) else tokens[1]
            continue
        pairs.append((x, y))
    if bad_token is not None or len(pairs) != HORIZON_STEPS:
        detail = f"found {len(pairs)} valid coordinate pairs, expected {HORIZON_STEPS}"
        if bad_token is not None:
            detail += f"; invalid token {bad_token!r}"
        raise DecodeError(detail, pairs_found=len(pairs), bad_token=bad_token)
    return Trajectory(tuple(pairs))


def _is_bad_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return True
    return False


def constant_velocity_trajectory(velocity: tuple[float, float]) -> Trajectory:
    """Straight-line extrapolation of the current velocity over the horizon."""
    vx, vy = velocity
    return Trajectory(tuple((vx * STEP_SECONDS * k, vy * STEP_SECONDS * k) for k in range(1, HORIZON_STEPS + 1)))
