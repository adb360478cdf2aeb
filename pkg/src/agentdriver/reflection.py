"""Trajectory self-reflection: collision check and numerical rectification.

A planned trajectory that fails the occupancy collision check is repaired
waypoint by waypoint. For waypoint t with anchor a (the original waypoint)
and nearby obstacle points O_t, the per-waypoint cost is

    c(p) = ||p - a||^2 + sum_{o in O_t} A * exp(-||p - o||^2 / (2 sigma^2))

with amplitude A = lambda / (sigma * sqrt(2 pi)). The squared deviation
keeps c twice continuously differentiable so Newton iteration applies; the
report also records the unsquared-deviation convention for reference.
Each waypoint is minimized independently with a damped Newton method that
falls back to gradient descent whenever the Hessian is not positive
definite; every accepted step strictly decreases the cost, so the final
cost never exceeds the cost at the anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .scene import SceneSnapshot
from .tools import ToolConfig, collision_probability
from .trajectory import HORIZON_STEPS, Trajectory


@dataclass(frozen=True)
class ReflectionConfig:
    repulsion_weight: float = 1.0  # lambda
    kernel_sigma: float = 1.0  # meters
    safety_margin: float = 0.5  # meters beyond the ego footprint
    occupancy_threshold: float = 0.1
    sample_radius: float = 5.0  # meters around each waypoint
    max_iterations: int = 20
    tolerance: float = 1e-4  # meters of waypoint movement
    damping: float = 0.5
    obstacle_cap: int = 128

    def __post_init__(self) -> None:
        for name in ("repulsion_weight", "kernel_sigma", "safety_margin", "occupancy_threshold", "sample_radius"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"reflection.{name}", "must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("reflection.max_iterations", "must be >= 1")

    @property
    def amplitude(self) -> float:
        return self.repulsion_weight / (self.kernel_sigma * math.sqrt(2.0 * math.pi))

    def to_dict(self) -> dict:
        return {
            "repulsion_weight": self.repulsion_weight,
            "kernel_sigma": self.kernel_sigma,
            "safety_margin": self.safety_margin,
            "occupancy_threshold": self.occupancy_threshold,
            "sample_radius": self.sample_radius,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "damping": self.damping,
            "obstacle_cap": self.obstacle_cap,
        }


@dataclass
class ObstaclePointSet:
    """Per timestep, obstacle points sampled from hot occupancy cells."""

    per_step: list[np.ndarray]  # 6 arrays of shape (n_t, 2)

    def nonempty_steps(self) -> list[int]:
        return [t for t, pts in enumerate(self.per_step, start=1) if len(pts)]


def sample_obstacles(snap: SceneSnapshot, traj: Trajectory, config: ReflectionConfig) -> ObstaclePointSet:
    """Centers of cells above the occupancy threshold near each waypoint.

    Order is row-major over (ix, iy); the cap truncates in that order.
    """
    occ = snap.occupancy
    per_step: list[np.ndarray] = []
    for t, (wx, wy) in enumerate(traj.points, start=1):
        r = config.sample_radius
        cells = occ.cells_in_aabb(wx - r, wy - r, wx + r, wy + r)
        points: list[tuple[float, float]] = []
        for ix, iy in cells:
            if occ.values[t - 1, ix, iy] > config.occupancy_threshold:
                cx, cy = occ.cell_center(ix, iy)
                if math.hypot(cx - wx, cy - wy) <= r:
                    points.append((cx, cy))
                    if len(points) >= config.obstacle_cap:
                        break
        per_step.append(np.array(points, dtype=np.float64).reshape(len(points), 2))
    return ObstaclePointSet(per_step)


def waypoint_cost(p: np.ndarray, anchor: np.ndarray, obstacles: np.ndarray, config: ReflectionConfig) -> float:
    d = p - anchor
    cost = float(d @ d)
    if len(obstacles):
        diffs = p[None, :] - obstacles
        sq = np.einsum("ij,ij->i", diffs, diffs)
        cost += float(config.amplitude * np.exp(-sq / (2.0 * config.kernel_sigma**2)).sum())
    return cost


def waypoint_gradient(p: np.ndarray, anchor: np.ndarray, obstacles: np.ndarray, config: ReflectionConfig) -> np.ndarray:
    g = 2.0 * (p - anchor)
    if len(obstacles):
        sigma_sq = config.kernel_sigma**2
        diffs = p[None, :] - obstacles
        sq = np.einsum("ij,ij->i", diffs, diffs)
        weights = config.amplitude * np.exp(-sq / (2.0 * sigma_sq)) / sigma_sq
        g -= (weights[:, None] * diffs).sum(axis=0)
    return g


def waypoint_hessian(p: np.ndarray, anchor: np.ndarray, obstacles: np.ndarray, config: ReflectionConfig) -> np.ndarray:
    h = 2.0 * np.eye(2)
    if len(obstacles):
        sigma_sq = config.kernel_sigma**2
        diffs = p[None, :] - obstacles
        sq = np.einsum("ij,ij->i", diffs, diffs)
        weights = config.amplitude * np.exp(-sq / (2.0 * sigma_sq)) / sigma_sq
        outer = np.einsum("i,ij,ik->jk", weights / sigma_sq, diffs, diffs)
        h += outer - weights.sum() * np.eye(2)
    return h


@dataclass
class WaypointOptimization:
    iterations: int
    initial_cost: float
    final_cost: float
    displacement: float
    converged: bool
    cost_history: list[float] = field(default_factory=list)  # cost after each accepted step


_NUDGE = 1e-3
_MIN_STEP_SCALE = 1e-12


def _rectify_waypoint(
    anchor: np.ndarray, obstacles: np.ndarray, config: ReflectionConfig
) -> tuple[np.ndarray, WaypointOptimization]:
    initial_cost = waypoint_cost(anchor, anchor, obstacles, config)
    if not len(obstacles):
        return anchor.copy(), WaypointOptimization(0, initial_cost, initial_cost, 0.0, True)
    history: list[float] = []

    p = anchor.copy()
    grad = waypoint_gradient(p, anchor, obstacles, config)
    if float(np.linalg.norm(grad)) <= 1e-12:
        dists = np.linalg.norm(obstacles - p[None, :], axis=1)
        nearest = int(np.argmin(dists))
        if dists[nearest] <= config.safety_margin:
            # stationary start on top of an obstacle: nudge off it so the
            # iteration has a descent direction to follow
            away = p - obstacles[nearest]
            norm = float(np.linalg.norm(away))
            p = p + (_NUDGE * away / norm if norm > 0 else np.array([_NUDGE, 0.0]))

    best_p = anchor.copy()
    best_cost = initial_cost
    cost = waypoint_cost(p, anchor, obstacles, config)
    if cost < best_cost:
        best_p, best_cost = p.copy(), cost

    iterations = 0
    converged = False
    for _ in range(config.max_iterations):
        iterations += 1
        grad = waypoint_gradient(p, anchor, obstacles, config)
        hess = waypoint_hessian(p, anchor, obstacles, config)
        step = None
        if hess[0, 0] > 0.0 and float(np.linalg.det(hess)) > 0.0:
            step = np.linalg.solve(hess, -grad)
        if step is None or not np.all(np.isfinite(step)):
            step = -grad  # Hessian not positive definite: gradient descent
        scale = 1.0
        moved = False
        while scale > _MIN_STEP_SCALE:
            candidate = p + scale * step
            candidate_cost = waypoint_cost(candidate, anchor, obstacles, config)
            if candidate_cost < cost:
                movement = float(np.linalg.norm(scale * step))
                p, cost = candidate, candidate_cost
                history.append(cost)
                moved = True
                if cost < best_cost:
                    best_p, best_cost = p.copy(), cost
                if movement < config.tolerance:
                    converged = True
                break
            scale *= config.damping
        if not moved:
            converged = True  # no improving step in this direction
            break
        if converged:
            break

    displacement = float(np.linalg.norm(best_p - anchor))
    return best_p, WaypointOptimization(iterations, initial_cost, best_cost, displacement, converged, history)


def rectify(
    traj: Trajectory, obstacles: ObstaclePointSet, config: ReflectionConfig
) -> tuple[Trajectory, list[WaypointOptimization]]:
    """Minimize the per-waypoint cost independently for each waypoint.

    With no obstacles anywhere this is the identity map with zero
    iterations. Non-convergence is reported, never raised; the best
    iterate found is returned and its cost never exceeds the anchor cost.
    """
    new_points: list[tuple[float, float]] = []
    details: list[WaypointOptimization] = []
    for t, point in enumerate(traj.points, start=1):
        anchor = np.array(point, dtype=np.float64)
        moved, info = _rectify_waypoint(anchor, obstacles.per_step[t - 1], config)
        new_points.append((float(moved[0]), float(moved[1])))
        details.append(info)
    return Trajectory(tuple(new_points)), details


@dataclass
class ReflectionReport:
    collided_before: bool
    collided_after: bool
    max_probability_before: list[float]
    max_probability_after: list[float]
    iterations_per_waypoint: list[int]
    initial_cost: float
    final_cost: float
    initial_cost_l2_convention: float
    final_cost_l2_convention: float
    waypoint_displacements: list[float]
    rectified: bool
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "collided_before": self.collided_before,
            "collided_after": self.collided_after,
            "max_probability_before": self.max_probability_before,
            "max_probability_after": self.max_probability_after,
            "iterations_per_waypoint": self.iterations_per_waypoint,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "initial_cost_l2_convention": self.initial_cost_l2_convention,
            "final_cost_l2_convention": self.final_cost_l2_convention,
            "waypoint_displacements": self.waypoint_displacements,
            "rectified": self.rectified,
            "config": self.config,
        }


def _total_costs(
    original: Trajectory, final: Trajectory, obstacles: ObstaclePointSet, config: ReflectionConfig
) -> tuple[float, float]:
    """(squared-fidelity cost, unsquared-fidelity cost) of the final trajectory."""
    fidelity_sq = 0.0
    repulsion = 0.0
    for t in range(HORIZON_STEPS):
        a = np.array(original.points[t])
        p = np.array(final.points[t])
        fidelity_sq += float((p - a) @ (p - a))
        pts = obstacles.per_step[t]
        if len(pts):
            diffs = p[None, :] - pts
            sq = np.einsum("ij,ij->i", diffs, diffs)
            repulsion += float(config.amplitude * np.exp(-sq / (2.0 * config.kernel_sigma**2)).sum())
    return fidelity_sq + repulsion, math.sqrt(fidelity_sq) + repulsion


def collision_check(
    snap: SceneSnapshot, traj: Trajectory, config: ReflectionConfig, tool_config: ToolConfig = ToolConfig()
) -> tuple[bool, list[float]]:
    """Occupancy collision check with this module's margin and threshold."""
    effective = replace(
        tool_config,
        collision_margin=config.safety_margin,
        collision_threshold=config.occupancy_threshold,
    )
    maxima, flag, _ = collision_probability(snap, traj, effective)
    return flag, maxima


def reflect(
    snap: SceneSnapshot,
    traj: Trajectory,
    config: ReflectionConfig = ReflectionConfig(),
    tool_config: ToolConfig = ToolConfig(),
) -> tuple[Trajectory, ReflectionReport]:
    """Check the trajectory; if it collides, rectify and re-check.

    Collision-free inputs pass through unchanged. A trajectory that still
    collides after rectification is returned best-effort with
    collided_after set honestly.
    """
    collided, maxima = collision_check(snap, traj, config, tool_config)
    if not collided:
        report = ReflectionReport(
            collided_before=False,
            collided_after=False,
            max_probability_before=maxima,
            max_probability_after=maxima,
            iterations_per_waypoint=[0] * HORIZON_STEPS,
            initial_cost=0.0,
            final_cost=0.0,
            initial_cost_l2_convention=0.0,
            final_cost_l2_convention=0.0,
            waypoint_displacements=[0.0] * HORIZON_STEPS,
            rectified=False,
            config=config.to_dict(),
        )
        return traj, report

    obstacles = sample_obstacles(snap, traj, config)
    rectified, details = rectify(traj, obstacles, config)
    collided_after, maxima_after = collision_check(snap, rectified, config, tool_config)
    final_cost, final_cost_l2 = _total_costs(traj, rectified, obstacles, config)
    initial_cost, initial_cost_l2 = _total_costs(traj, traj, obstacles, config)
    report = ReflectionReport(
        collided_before=True,
        collided_after=collided_after,
        max_probability_before=maxima,
        max_probability_after=maxima_after,
        iterations_per_waypoint=[d.iterations for d in details],
        initial_cost=initial_cost,
        final_cost=final_cost,
        initial_cost_l2_convention=initial_cost_l2,
        final_cost_l2_convention=final_cost_l2,
        waypoint_displacements=[d.displacement for d in details],
        rectified=True,
        config=config.to_dict(),
    )
    return rectified, report
