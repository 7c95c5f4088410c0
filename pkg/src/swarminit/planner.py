"""Local motion planning for the initialization loop.

Each drone plans from its own odometry frame only: the latest epoch's
relative observations, known obstacle circles, and a private random
stream. The strategy trades exploration (seeded random heading, small
probability) against exploitation (step toward the farthest observed
drone), with all steps capped so no waypoint comes closer than d_safe to
any observed neighbor. Obstacles are vertical cylinders given as circles;
planning is 2D at the drone's current altitude.

Randomized per-drone headings are what break rotation-symmetric
formations: identical deterministic policies would preserve the symmetry
that makes the rotation problem ambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle

__all__ = [
    "NoValidPosition",
    "PathNotFound",
    "PlanContext",
    "PlannerParams",
    "adjust_for_obstacles",
    "plan_move",
    "plan_path",
    "select_target",
]

_TOL = 1e-9


class NoValidPosition(RuntimeError):
    """Obstacle push-out failed to reach free space."""


class PathNotFound(RuntimeError):
    """Detour budget exhausted before all segments cleared."""


@dataclass(frozen=True)
class PlannerParams:
    d_safe: float = 1.0
    move_cap_ratio: float = 0.4
    p_explore: float = 0.15
    clearance: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.move_cap_ratio < 0.5:
            raise ValueError("move_cap_ratio must lie in (0, 0.5)")
        if not 0.0 <= self.p_explore <= 1.0:
            raise ValueError("p_explore must lie in [0, 1]")
        if self.d_safe <= 0.0:
            raise ValueError("d_safe must be positive")
        if self.clearance < 0.0:
            raise ValueError("clearance must be non-negative")

    def to_dict(self) -> dict:
        return {
            "d_safe": self.d_safe,
            "move_cap_ratio": self.move_cap_ratio,
            "p_explore": self.p_explore,
            "clearance": self.clearance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerParams":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValueError(f"bad planner params: {exc}") from None


@dataclass(eq=False)
class PlanContext:
    """Everything one drone knows when planning: strictly local state."""

    self_position: np.ndarray
    local_observations: list
    obstacles: list
    rng: np.random.Generator
    params: PlannerParams = field(default_factory=PlannerParams)

    def neighbor_positions(self) -> np.ndarray:
        if not self.local_observations:
            return np.zeros((0, 3))
        obs = np.stack([np.asarray(o, dtype=float) for o in self.local_observations])
        return self.self_position[None, :] + obs


def _entry_cap(
    origin: np.ndarray, direction: np.ndarray, length: float,
    centers: np.ndarray, radii: np.ndarray,
) -> float:
    """Longest step along direction before entering any of the balls.

    Starting inside a ball forbids approaching its center but never
    blocks receding; without that a drone boxed in by stale neighbor
    positions could not move at all.
    """
    capped = length
    for c, r in zip(centers, radii):
        d = origin - c
        b = float(direction @ d)
        c0 = float(d @ d) - r * r
        if c0 <= 0.0:
            if b < 0.0:
                return 0.0
            continue
        disc = b * b - c0
        if disc <= 0.0:
            continue
        t_enter = -b - np.sqrt(disc)
        if 0.0 <= t_enter < capped:
            capped = t_enter
    return max(capped, 0.0)


def select_target(ctx: PlanContext) -> np.ndarray:
    """Next observation position in the drone's own frame.

    Exploration picks a random heading; exploitation heads for the
    farthest neighbor. Either way the step is bounded by
    move_cap_ratio times the nearest-neighbor distance and stops at the
    d_safe ball of every neighbor. The returned point keeps the current
    altitude.
    """
    params = ctx.params
    pos = np.asarray(ctx.self_position, dtype=float)
    neighbors = ctx.neighbor_positions()
    u = float(ctx.rng.random())
    if neighbors.shape[0] == 0:
        phi = float(ctx.rng.uniform(0.0, 2.0 * np.pi))
        step = np.array([np.cos(phi), np.sin(phi), 0.0])
        return pos + params.d_safe * step

    dists = np.linalg.norm(neighbors - pos[None, :], axis=1)
    nearest = float(dists.min())
    # Everyone at the safety boundary means the swarm is packed tight;
    # safety dominates and the drone holds regardless of branch.
    if float(dists.max()) <= params.d_safe * (1.0 + 1e-3):
        return pos.copy()
    move_cap = params.move_cap_ratio * nearest
    if u < params.p_explore:
        phi = float(ctx.rng.uniform(0.0, 2.0 * np.pi))
        direction = np.array([np.cos(phi), np.sin(phi), 0.0])
        length = move_cap
    else:
        far = int(np.argmax(dists))
        direction = neighbors[far] - pos
        direction[2] = 0.0
        norm = float(np.linalg.norm(direction))
        if norm < _TOL:
            return pos.copy()
        direction = direction / norm
        length = move_cap
    # Neighbors move at the same time, each bounded by the same cap rule,
    # so their balls are inflated by the step they could take toward us.
    radii = params.d_safe + params.move_cap_ratio * dists
    length = _entry_cap(pos, direction, length, neighbors, radii)
    return pos + length * direction


def _containing_circle(point: np.ndarray, obstacles, clearance: float):
    for circ in obstacles:
        r = circ.radius + clearance
        if np.linalg.norm(point[:2] - circ.center) < r - _TOL:
            return circ
    return None


def adjust_for_obstacles(
    target: np.ndarray, obstacles, clearance: float, origin=None
) -> np.ndarray:
    """Push a target out of inflated obstacles to the nearest free point.

    The push goes radially away from the offending center; a target
    exactly at a center breaks the tie toward origin (the planning drone's
    position) when one is given. Iterates to a fixed point; overlapping
    obstacles can make that impossible, which raises NoValidPosition
    after 10 rounds.
    """
    out = np.asarray(target, dtype=float).copy()
    for _ in range(10):
        circ = _containing_circle(out, obstacles, clearance)
        if circ is None:
            return out
        r = circ.radius + clearance
        d = out[:2] - circ.center
        if np.linalg.norm(d) < _TOL and origin is not None:
            d = np.asarray(origin, dtype=float)[:2] - circ.center
        if np.linalg.norm(d) < _TOL:
            d = np.array([1.0, 0.0])
        out[:2] = circ.center + r * d / np.linalg.norm(d)
    if _containing_circle(out, obstacles, clearance) is not None:
        raise NoValidPosition("obstacle push-out did not converge")
    return out


def _segment_blocked(a: np.ndarray, b: np.ndarray, circ: Circle, clearance: float):
    """Earliest parameter where segment a-b enters the inflated circle.

    None when the segment stays outside; tangential touching counts as
    outside.
    """
    r = circ.radius + clearance
    d = b[:2] - a[:2]
    f = a[:2] - circ.center
    aa = float(d @ d)
    if aa < _TOL * _TOL:
        return None
    bb = float(f @ d)
    cc = float(f @ f) - r * r
    disc = bb * bb - aa * cc
    if disc <= 0.0:
        return None
    sq = np.sqrt(disc)
    t0 = (-bb - sq) / aa
    t1 = (-bb + sq) / aa
    if t1 <= _TOL or t0 >= 1.0 - _TOL:
        return None
    # Entering at depth below tolerance is tangency, not a crossing.
    mid = np.clip(-bb / aa, 0.0, 1.0)
    closest = float(np.linalg.norm(f + mid * d))
    if closest >= r - 1e-7:
        return None
    return max(t0, 0.0)


def _first_blocker(a: np.ndarray, b: np.ndarray, obstacles, clearance: float):
    best = None
    best_t = None
    for circ in obstacles:
        t = _segment_blocked(a, b, circ, clearance)
        if t is not None and (best_t is None or t < best_t):
            best, best_t = circ, t
    return best


def plan_path(
    start: np.ndarray, target: np.ndarray, obstacles, clearance: float
) -> list[np.ndarray]:
    """Polyline from start to target clearing all inflated obstacles.

    Straight when possible; otherwise a via point near the tangent of the
    earliest blocking circle splits the segment and both halves are
    planned recursively. At most 3 via insertions; beyond that raises
    PathNotFound.
    """
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    if np.linalg.norm(target - start) < _TOL:
        return [start.copy()]
    budget = [3]

    def solve(a: np.ndarray, b: np.ndarray) -> list[np.ndarray]:
        circ = _first_blocker(a, b, obstacles, clearance)
        if circ is None:
            return [a, b]
        if budget[0] <= 0:
            raise PathNotFound("detour budget exhausted")
        budget[0] -= 1
        r = circ.radius + clearance
        d = b[:2] - a[:2]
        seg_len2 = float(d @ d)
        t_close = float(np.clip((circ.center - a[:2]) @ d / seg_len2, 0.0, 1.0))
        away = a[:2] + t_close * d - circ.center
        if np.linalg.norm(away) < _TOL:
            # Center sits on the segment; detour to its left side.
            away = np.array([-d[1], d[0]])
        away = away / np.linalg.norm(away)
        z = a[2] + t_close * (b[2] - a[2])
        via = None
        grow = 0.05
        for _ in range(10):
            cand = np.array([*(circ.center + r * (1.0 + grow) * away), z])
            if (
                _segment_blocked(a, cand, circ, clearance) is None
                and _segment_blocked(cand, b, circ, clearance) is None
            ):
                via = cand
                break
            grow *= 2.0
        if via is None:
            raise PathNotFound("no tangent standoff clears the circle")
        left = solve(a, via)
        right = solve(via, b)
        return left[:-1] + [via] + right[1:]

    return solve(start, target)


def plan_move(ctx: PlanContext) -> list[np.ndarray]:
    """Full planning step: target, obstacle adjust, path, safety check.

    Any failure (no valid position, no path, or a waypoint landing inside
    a neighbor's d_safe ball) degrades to holding position, which is
    always safe.
    """
    pos = np.asarray(ctx.self_position, dtype=float)
    hold = [pos.copy()]
    target = select_target(ctx)
    if np.linalg.norm(target - pos) < _TOL:
        return hold
    try:
        target = adjust_for_obstacles(target, ctx.obstacles, ctx.params.clearance, pos)
        path = plan_path(pos, target, ctx.obstacles, ctx.params.clearance)
    except (NoValidPosition, PathNotFound):
        return hold
    neighbors = ctx.neighbor_positions()
    if neighbors.shape[0]:
        for wp in path[1:]:
            dmin = float(np.linalg.norm(neighbors - wp[None, :], axis=1).min())
            if dmin < ctx.params.d_safe - 1e-7:
                return hold
    return path
