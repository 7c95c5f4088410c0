"""Deterministic swarm observation simulator.

World state lives in an internal arena frame. Reported ground truth and all
downstream estimates are expressed in the frame of drone 0 at the first
epoch, so ground-truth pose 0 is always the identity. Each drone's odometry
is expressed in that drone's own first-epoch frame; odometry yaw accumulates
Gaussian drift per epoch, odometry positions are exact.

Observations are anonymous: per epoch each observer reports one vector per
visible drone, in the observer's body frame, with shuffled track indices.
Visibility uses the true symmetric distance, so mutuality is exact even
under measurement noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Circle, Pose, Rotation2, YawVector, rotate_xy, wrap_angle

_FORMATIONS = ("random", "rotation_symmetric")


class ArenaTooSmall(RuntimeError):
    """Spawning could not satisfy the separation/obstacle constraints."""


@dataclass(frozen=True, eq=False)
class Arena:
    """Axis-aligned box in meters."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3).copy()
        hi = np.asarray(self.hi, dtype=float).reshape(3).copy()
        if np.any(hi < lo):
            raise ValueError("arena hi must be >= lo componentwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def to_json_dict(self) -> dict:
        return {"lo": [float(x) for x in self.lo], "hi": [float(x) for x in self.hi]}


@dataclass(frozen=True, eq=False)
class WorldConfig:
    """Scenario description; loadable from the "world" config section."""

    n_drones: int
    arena: Arena
    min_spawn_separation: float = 1.2
    sensor_range: float = 8.0
    obs_noise_sigma: float = 0.0
    odom_yaw_drift_sigma: float = 0.0
    seed: int = 0
    obstacles: tuple = ()
    formation: str = "random"
    formation_radius: float = 3.0

    def __post_init__(self):
        if not 2 <= self.n_drones <= 64:
            raise ValueError("n_drones must be in [2, 64]")
        if self.min_spawn_separation <= 0:
            raise ValueError("min_spawn_separation must be positive")
        if self.sensor_range <= 0:
            raise ValueError("sensor_range must be positive")
        if self.obs_noise_sigma < 0 or self.odom_yaw_drift_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.formation not in _FORMATIONS:
            raise ValueError(f"formation must be one of {_FORMATIONS}")
        if self.formation_radius <= 0:
            raise ValueError("formation_radius must be positive")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        try:
            arena = Arena(d["arena"]["lo"], d["arena"]["hi"])
            obstacles = tuple(
                Circle(o["center"], float(o["radius"]))
                for o in d.get("obstacles", [])
            )
            return cls(
                n_drones=int(d["n_drones"]),
                arena=arena,
                min_spawn_separation=float(
                    d.get("min_spawn_separation", cls.min_spawn_separation)
                ),
                sensor_range=float(d.get("sensor_range", cls.sensor_range)),
                obs_noise_sigma=float(d.get("obs_noise_sigma", cls.obs_noise_sigma)),
                odom_yaw_drift_sigma=float(
                    d.get("odom_yaw_drift_sigma", cls.odom_yaw_drift_sigma)
                ),
                seed=int(d.get("seed", cls.seed)),
                obstacles=obstacles,
                formation=str(d.get("formation", cls.formation)),
                formation_radius=float(
                    d.get("formation_radius", cls.formation_radius)
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid world config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "n_drones": self.n_drones,
            "arena": self.arena.to_json_dict(),
            "min_spawn_separation": self.min_spawn_separation,
            "sensor_range": self.sensor_range,
            "obs_noise_sigma": self.obs_noise_sigma,
            "odom_yaw_drift_sigma": self.odom_yaw_drift_sigma,
            "seed": self.seed,
            "obstacles": [
                {"center": [float(c) for c in o.center], "radius": float(o.radius)}
                for o in self.obstacles
            ],
            "formation": self.formation,
            "formation_radius": self.formation_radius,
        }


def load_world_config(path) -> WorldConfig:
    with open(path) as f:
        return WorldConfig.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class Observation:
    """One anonymous bearing-and-range vector in the observer's body frame."""

    observer: int
    epoch: int
    vector: np.ndarray
    track: int

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(3).copy()
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)

    def to_json_dict(self) -> dict:
        return {
            "observer": self.observer,
            "epoch": self.epoch,
            "vector": [float(x) for x in self.vector],
            "track": self.track,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Observation":
        return cls(int(d["observer"]), int(d["epoch"]), d["vector"], int(d["track"]))


@dataclass(frozen=True, eq=False)
class OdometryState:
    """Per-drone pose relative to that drone's own first-epoch frame."""

    yaws: YawVector
    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(len(self.yaws), 3).copy()
        p.flags.writeable = False
        object.__setattr__(self, "positions", p)

    def to_json_dict(self) -> dict:
        return {
            "yaws": [float(t) for t in self.yaws.yaws],
            "positions": [[float(x) for x in row] for row in self.positions],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "OdometryState":
        return cls(YawVector(np.array(d["yaws"], dtype=float)), d["positions"])


@dataclass(frozen=True, eq=False)
class EpochRecord:
    """Everything one observation epoch broadcasts to the estimator."""

    epoch: int
    odometry: OdometryState
    observations: tuple

    def __post_init__(self):
        obs = tuple(
            sorted(self.observations, key=lambda o: (o.observer, o.track))
        )
        object.__setattr__(self, "observations", obs)

    def by_observer(self) -> dict:
        """Observations keyed by observer id; every drone gets a key."""
        out = {j: [] for j in range(len(self.odometry.yaws))}
        for o in self.observations:
            out[o.observer].append(o)
        return out

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "odometry": self.odometry.to_json_dict(),
            "observations": [o.to_json_dict() for o in self.observations],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EpochRecord":
        return cls(
            int(d["epoch"]),
            OdometryState.from_json_dict(d["odometry"]),
            tuple(Observation.from_json_dict(o) for o in d["observations"]),
        )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """First-epoch poses in the frame of drone 0 (entry 0 is the identity)."""

    poses_t0: tuple

    def yaw_vector(self) -> YawVector:
        return YawVector(np.array([p.yaw.theta for p in self.poses_t0]))

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses_t0])

    def to_json_dict(self) -> dict:
        return {
            "poses_t0": [
                {
                    "position": [float(x) for x in p.position],
                    "yaw": float(p.yaw.theta),
                }
                for p in self.poses_t0
            ]
        }


class World:
    """Mutable simulation state. Use spawn() to construct one."""

    def __init__(self, config, pos0, yaw0, ground_truth):
        self.config = config
        self._rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
        self._pos0 = pos0
        self._yaw0 = yaw0
        self._pos = pos0.copy()
        self._drift = np.zeros(config.n_drones)
        self._next_epoch = 0
        self.ground_truth = ground_truth
        self._true_ids = {}

    # -- truth-side accessors (tests and sensing plumbing, not the estimator)

    def true_identity(self, epoch: int, observer: int, track: int) -> int:
        return self._true_ids[(epoch, observer)][track]

    def true_identities(self, epoch: int, observer: int) -> tuple:
        return self._true_ids[(epoch, observer)]

    def odometry_position(self, drone: int) -> np.ndarray:
        return rotate_xy(-self._yaw0[drone], self._pos[drone] - self._pos0[drone])

    def obstacles_near(self, drone: int) -> list:
        """Config obstacles within sensor range, in the drone's own frame."""
        out = []
        p = self._pos[drone]
        for ob in self.config.obstacles:
            d = float(np.hypot(*(ob.center - p[:2])))
            if d <= self.config.sensor_range + ob.radius:
                local = rotate_xy(-self._yaw0[drone], ob.center - self._pos0[drone][:2])
                out.append(Circle(local, ob.radius))
        return out


def _spawn_positions(config: WorldConfig, rng) -> tuple:
    n = config.n_drones
    arena = config.arena
    if config.formation == "rotation_symmetric":
        center = arena.center
        ang = 2.0 * np.pi * np.arange(n) / n
        pos = np.tile(center, (n, 1))
        pos[:, 0] += config.formation_radius * np.cos(ang)
        pos[:, 1] += config.formation_radius * np.sin(ang)
        yaw = wrap_angle(ang + 0.5 * np.pi)
        chord = 2.0 * config.formation_radius * np.sin(np.pi / n)
        if chord < config.min_spawn_separation:
            raise ArenaTooSmall("formation circle violates minimum separation")
        if np.any(pos < arena.lo) or np.any(pos > arena.hi):
            raise ArenaTooSmall("formation circle does not fit in the arena")
        for ob in config.obstacles:
            if np.any(np.hypot(*(pos[:, :2] - ob.center).T) < ob.radius):
                raise ArenaTooSmall("formation circle intersects an obstacle")
        return pos, yaw

    pos = np.zeros((n, 3))
    yaw = rng.uniform(-np.pi, np.pi, size=n)
    span = arena.hi - arena.lo
    for i in range(n):
        for _ in range(10_000):
            cand = arena.lo + rng.uniform(size=3) * span
            if i > 0:
                d = np.linalg.norm(pos[:i] - cand, axis=1)
                if np.any(d < config.min_spawn_separation):
                    continue
            if any(
                np.hypot(*(cand[:2] - ob.center)) < ob.radius
                for ob in config.obstacles
            ):
                continue
            pos[i] = cand
            break
        else:
            raise ArenaTooSmall(
                f"could not place drone {i} after 10000 attempts"
            )
    return pos, wrap_angle(yaw)


def spawn(config: WorldConfig) -> tuple:
    """Create a world and its ground truth. Deterministic in config.seed."""
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    pos0, yaw0 = _spawn_positions(config, rng)
    rel_yaw = wrap_angle(yaw0 - yaw0[0])
    poses = [Pose.identity()]
    for i in range(1, config.n_drones):
        rel_pos = rotate_xy(-yaw0[0], pos0[i] - pos0[0])
        poses.append(Pose(rel_pos, Rotation2(float(rel_yaw[i]))))
    truth = GroundTruth(tuple(poses))
    return World(config, pos0, yaw0, truth), truth


def scan_epoch(world: World, epoch_index: int) -> EpochRecord:
    """Run one full-coverage detection sweep and report it anonymously.

    Every drone detects every other drone within sensor range (true
    symmetric distance, so mutuality is exact), reports the relative
    vector in its own body frame with additive Gaussian noise, and
    shuffles its track indices. Odometry yaw picks up one increment of
    cumulative drift per call.
    """
    cfg = world.config
    if epoch_index != world._next_epoch:
        raise ValueError(
            f"epochs must be scanned in order; expected {world._next_epoch}, "
            f"got {epoch_index}"
        )
    n = cfg.n_drones
    rng = world._rng
    world._drift = world._drift + rng.normal(0.0, cfg.odom_yaw_drift_sigma, size=n)

    pos = world._pos
    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(diff, axis=2)
    visible = (dist <= cfg.sensor_range) & ~np.eye(n, dtype=bool)

    observations = []
    sigma = cfg.obs_noise_sigma
    for j in range(n):
        targets = np.flatnonzero(visible[j])
        vecs = []
        for i in targets:
            v = rotate_xy(-world._yaw0[j], pos[i] - pos[j])
            eps = rng.normal(0.0, sigma, size=3)
            if sigma > 0.0:
                norm = float(np.linalg.norm(eps))
                if norm > 6.0 * sigma:
                    eps *= 6.0 * sigma / norm
            vecs.append(v + eps)
        order = rng.permutation(len(targets))
        shuffled_ids = [int(targets[k]) for k in order]
        world._true_ids[(epoch_index, j)] = tuple(shuffled_ids)
        for t, k in enumerate(order):
            observations.append(Observation(j, epoch_index, vecs[k], t))

    odom_pos = np.array(
        [world.odometry_position(i) for i in range(n)]
    )
    odometry = OdometryState(YawVector(wrap_angle(world._drift)), odom_pos)
    world._next_epoch = epoch_index + 1
    return EpochRecord(epoch_index, odometry, tuple(observations))


def move_drone(world: World, drone: int, waypoints) -> None:
    """Teleport a drone along a polyline given in its own first-epoch frame.

    Only the final waypoint affects state; intermediate points exist for
    collision semantics upstream. An empty list holds position.
    """
    wps = [np.asarray(w, dtype=float).reshape(3) for w in waypoints]
    if not wps:
        return
    target_own = wps[-1]
    world._pos[drone] = world._pos0[drone] + rotate_xy(
        world._yaw0[drone], target_own
    )


def inject_false_positive(record: EpochRecord, observer: int, vectors) -> EpochRecord:
    """Append spurious observations to one observer, bypassing range gating.

    vectors may be a single 3-vector or an array of shape (k, 3); k = 0
    returns an identical record. Track indices continue after the
    observer's existing ones. Test hook: mutuality is intentionally broken.
    """
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    arr = arr.reshape(-1, 3)
    if arr.shape[0] == 0:
        return record
    existing = [o for o in record.observations if o.observer == observer]
    next_track = max((o.track for o in existing), default=-1) + 1
    extra = tuple(
        Observation(observer, record.epoch, v, next_track + k)
        for k, v in enumerate(arr)
    )
    return replace(record, observations=record.observations + extra)


def dump_trace(records, path) -> None:
    """Write epoch records as one JSON object per line."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json_dict()) + "\n")


def load_trace(path) -> list:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(EpochRecord.from_json_dict(json.loads(line)))
    return records
