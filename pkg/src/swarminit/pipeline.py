"""End-to-end runs: the initialization loop, benchmarks, and replay.

run_init drives the full loop inside the simulator: scan, solve the
rotation relaxation once enough epochs accumulated, match observations,
recover translations, and move the drones between epochs until the
objective and rank certificates both fire. run_benchmark sweeps a
(n_drones, sigma, trials) grid and feeds the identical problem matrix to
the relaxation and both local baselines. Everything is deterministic
under a fixed seed, including CSV and JSON bytes when timing capture is
turned off.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import solve_gn, solve_lm
from .correspondence import (
    DisconnectedGraph,
    MatchResult,
    compute_gate,
    filter_confirmed,
    fuse_and_recover,
    match_records,
)
from .geometry import DegenerateBlock, YawVector, wrap_angle, yaw_mae
from .ipm import SolverDiverged
from .planner import PlanContext, PlannerParams, plan_move
from .rotation_sdp import QMatrix, SdpSolution, build_q, solve_sdp
from .simulator import (
    Arena,
    EpochRecord,
    World,
    WorldConfig,
    dump_trace,
    move_drone,
    scan_epoch,
    spawn,
)
from .geometry import rotate_xy

__all__ = [
    "BenchmarkParams",
    "BenchmarkRow",
    "MaxEpochsExceeded",
    "PipelineParams",
    "RunReport",
    "ScenarioConfig",
    "SceneSolution",
    "load_config",
    "replay_records",
    "run_benchmark",
    "run_init",
    "solve_scene",
    "write_benchmark_csv",
]


class MaxEpochsExceeded(RuntimeError):
    """Epoch cap hit before the stopping rule fired.

    The partial report is attached as .report so callers can still
    inspect and persist it.
    """

    def __init__(self, report: "RunReport"):
        super().__init__(
            f"no convergence within {len(report.iterations)} solve attempts"
        )
        self.report = report


@dataclass(frozen=True)
class PipelineParams:
    min_num_observations: int = 2
    max_epochs: int = 30
    tau: float = 1e-3
    include_timings: bool = True
    refine_unmatched: bool = True

    def __post_init__(self):
        if self.min_num_observations < 1:
            raise ValueError("min_num_observations must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> dict:
        return {
            "min_num_observations": self.min_num_observations,
            "max_epochs": self.max_epochs,
            "tau": self.tau,
            "include_timings": self.include_timings,
            "refine_unmatched": self.refine_unmatched,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineParams":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValueError(f"bad pipeline params: {exc}") from None


@dataclass(frozen=True)
class BenchmarkParams:
    n_drones: tuple = (2, 4, 8)
    sigmas: tuple = (0.0, 0.02, 0.05)
    trials: int = 20
    # 0 means twice the drone count, enough epochs that noiseless
    # instances pin a unique optimal face.
    epochs_per_trial: int = 0
    # 0 keeps the template arena for every swarm size; a positive value
    # draws each trial in a square arena of that XY area per drone, so
    # density stays constant as the grid sweeps swarm sizes.
    arena_area_per_drone: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "n_drones", tuple(int(n) for n in self.n_drones))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if not self.n_drones or any(n < 2 for n in self.n_drones):
            raise ValueError("n_drones must be a non-empty list of ints >= 2")
        if any(s < 0 for s in self.sigmas) or not self.sigmas:
            raise ValueError("sigmas must be a non-empty list of floats >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.epochs_per_trial < 0:
            raise ValueError("epochs_per_trial must be >= 0")
        if self.arena_area_per_drone < 0:
            raise ValueError("arena_area_per_drone must be >= 0")

    def epochs_for(self, n_drones: int) -> int:
        return self.epochs_per_trial if self.epochs_per_trial else 2 * n_drones

    def arena_for(self, template: Arena, n_drones: int) -> Arena:
        if not self.arena_area_per_drone:
            return template
        half = 0.5 * np.sqrt(n_drones * self.arena_area_per_drone)
        cx, cy = template.center[:2]
        return Arena(
            (cx - half, cy - half, template.lo[2]),
            (cx + half, cy + half, template.hi[2]),
        )

    def to_dict(self) -> dict:
        return {
            "n_drones": list(self.n_drones),
            "sigmas": list(self.sigmas),
            "trials": self.trials,
            "epochs_per_trial": self.epochs_per_trial,
            "arena_area_per_drone": self.arena_area_per_drone,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkParams":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValueError(f"bad benchmark params: {exc}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    world: WorldConfig
    planner: PlannerParams = field(default_factory=PlannerParams)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    benchmark: BenchmarkParams = field(default_factory=BenchmarkParams)

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "planner": self.planner.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "benchmark": self.benchmark.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if "world" not in d:
            raise ValueError('config must have a "world" section')
        return cls(
            world=WorldConfig.from_dict(d["world"]),
            planner=PlannerParams.from_dict(d.get("planner", {})),
            pipeline=PipelineParams.from_dict(d.get("pipeline", {})),
            benchmark=BenchmarkParams.from_dict(d.get("benchmark", {})),
        )


def load_config(path) -> ScenarioConfig:
    with open(path) as f:
        return ScenarioConfig.from_dict(json.load(f))


@dataclass(eq=False)
class SceneSolution:
    """One solve over an accumulated record set."""

    sdp: SdpSolution
    matches: MatchResult
    graph: object
    translations: np.ndarray | None
    gate: float
    refined: bool
    solve_time: float
    match_time: float


def _range_screen(records, sigma: float):
    # Detection is mutual, yaw rotation preserves XY norms and leaves z
    # alone, and per-observation noise is clipped at six sigma. A true
    # detection therefore always has a counterpart, in the same epoch at
    # another observer, whose XY norm agrees within twelve sigma and
    # whose z component cancels its own to within twelve sigma. A
    # detection with no such counterpart cannot be part of any mutual
    # pair; drop it before it pollutes the per-observer sums. True
    # detections are never dropped.
    tol = 12.0 * sigma + 1e-6
    out = []
    for rec in records:
        items = [
            (o, float(np.hypot(o.vector[0], o.vector[1])), float(o.vector[2]))
            for o in rec.observations
        ]
        keep = []
        for o, rxy, z in items:
            partnered = any(
                other.observer != o.observer
                and abs(rxy2 - rxy) <= tol
                and abs(z2 + z) <= tol
                for other, rxy2, z2 in items
            )
            if partnered:
                keep.append(o)
        if len(keep) != len(rec.observations):
            rec = replace(rec, observations=tuple(keep))
        out.append(rec)
    return out


def _observation_scores(records, rotations) -> dict:
    # Squared residual of each detection's best mutual pairing under the
    # current rotations: a true detection has a counterpart at another
    # observer whose rotated XY vector cancels its own and whose z
    # component does too, up to noise and rotation error. A fabricated
    # detection pairs with whatever lies nearest, typically metres away,
    # so it scores far above the field.
    th = rotations.yaws
    scores: dict[tuple[int, int, int], float] = {}
    for rec in records:
        psi = rec.odometry.yaws.yaws
        items = []
        for j, obs_list in rec.by_observer().items():
            for o in obs_list:
                w = rotate_xy(th[j] + psi[j], o.vector[:2])
                items.append(((rec.epoch, j, o.track), j, w, float(o.vector[2])))
        for key, j, w, z in items:
            best = np.inf
            for key2, j2, w2, z2 in items:
                if j2 == j:
                    continue
                s = w + w2
                r = float(s @ s) + (z + z2) ** 2
                if r < best:
                    best = r
            if np.isfinite(best):
                scores[key] = best
    return scores


def _strip_observation(rec: EpochRecord, observer: int, track: int) -> EpochRecord:
    return replace(
        rec,
        observations=tuple(
            o
            for o in rec.observations
            if not (o.observer == observer and o.track == track)
        ),
    )


def solve_scene(
    records, sigma: float, refine: bool = True
) -> SceneSolution:
    """Rotations, correspondences, and translations from raw records.

    The rotation solve consumes anonymous per-observer sums, so a single
    spurious detection pollutes its observer's whole epoch. Two defences
    run before matching. First, detections whose measured range matches
    no other observer's detection in the same epoch are dropped: mutual
    detection guarantees every true observation a range-compatible
    counterpart, so the screen only ever removes fabricated ones. Second,
    if the remaining residual still exceeds what the noise level can
    explain, single observations are greedily removed by how much of the
    residual they carry, re-solving after each removal, until the noise
    model is satisfied. Matching still runs over the full records. When
    matching then leaves unconfirmed observations, the confirmed subset
    is re-solved and the original records re-matched under the refined
    rotations; spurious detections then stop polluting the rotation
    estimate without being silently dropped from the match report. A
    disconnected observation graph leaves translations as None rather
    than failing the whole scene.
    """
    t0 = time.perf_counter()
    base = list(records)
    hunted = False
    if refine:
        screened = _range_screen(records, sigma)
        if sum(len(r.observations) for r in screened) > 0:
            hunted = any(
                len(s.observations) != len(r.observations)
                for s, r in zip(screened, records)
            )
            base = screened
    q = build_q(base)
    sol = solve_sdp(q)
    t1 = time.perf_counter()
    if refine:
        kept = list(base)
        total_obs = sum(len(r.observations) for r in kept)
        budget = max(1, total_obs // 4)
        for _ in range(budget):
            n_obs = sum(len(r.observations) for r in kept)
            # At the true rotations the residual concentrates around
            # 2 sigma^2 per observation (XY noise enters the epoch sum
            # unattenuated); four times that plus an absolute floor
            # separates outliers from ordinary noise.
            if n_obs == 0 or sol.objective <= 8.0 * sigma * sigma * n_obs + 1e-6:
                break
            scores = _observation_scores(kept, sol.rotations)
            if not scores:
                break
            worst = max(scores, key=scores.get)
            # Demand clear separation from the field before removing
            # anything; a pairing residual explained by noise at the
            # twelve-sigma clip is not evidence of fabrication.
            med = float(np.median(list(scores.values())))
            if scores[worst] <= 9.0 * med + 144.0 * sigma * sigma + 1e-9:
                break
            trial_kept = [
                _strip_observation(r, worst[1], worst[2])
                if r.epoch == worst[0]
                else r
                for r in kept
            ]
            if sum(len(r.observations) for r in trial_kept) == 0:
                break
            try:
                t_h = time.perf_counter()
                sol_h = solve_sdp(build_q(trial_kept))
                t1 += time.perf_counter() - t_h
            except (SolverDiverged, DegenerateBlock, ValueError):
                break
            # Removing an observation that truly carries residual must
            # lower the optimum; if it does not, the pick was wrong.
            if sol_h.objective >= sol.objective:
                break
            kept = trial_kept
            sol = sol_h
            hunted = True
    gate = compute_gate(records, sol.objective, sigma)
    result = match_records(records, sol.rotations, gate)
    refined = hunted
    if refine and result.n_unconfirmed > 0:
        kept = filter_confirmed(records, result)
        if sum(len(r.observations) for r in kept) > 0:
            try:
                t_r = time.perf_counter()
                sol2 = solve_sdp(build_q(kept))
                t1 += time.perf_counter() - t_r
                gate2 = compute_gate(records, sol2.objective, sigma)
                result2 = match_records(records, sol2.rotations, gate2)
                sol, result, gate, refined = sol2, result2, gate2, True
            except (SolverDiverged, DegenerateBlock, ValueError):
                pass
    try:
        graph, translations = fuse_and_recover(result.confirmed, records, sol.rotations)
    except DisconnectedGraph:
        graph, translations = None, None
    t2 = time.perf_counter()
    return SceneSolution(
        sdp=sol,
        matches=result,
        graph=graph,
        translations=translations,
        gate=gate,
        refined=refined,
        solve_time=t1 - t0,
        match_time=t2 - t1,
    )


@dataclass(eq=False)
class RunReport:
    """Full record of one initialization run, JSON-serializable."""

    config: dict
    iterations: list
    final: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "iterations": self.iterations,
            "final": self.final,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _planner_streams(seed: int, n: int) -> list:
    # One private stream per drone; identical policies with shared
    # randomness would keep symmetric formations symmetric forever.
    return [
        np.random.default_rng(np.random.SeedSequence((seed, 2, i)))
        for i in range(n)
    ]


def _plan_and_move(world: World, record: EpochRecord, rngs, params: PlannerParams):
    n = world.config.n_drones
    psi = record.odometry.yaws.yaws
    grouped = record.by_observer()
    for i in range(n):
        local = [rotate_xy(psi[i], o.vector) for o in grouped[i]]
        ctx = PlanContext(
            self_position=world.odometry_position(i),
            local_observations=local,
            obstacles=world.obstacles_near(i),
            rng=rngs[i],
            params=params,
        )
        path = plan_move(ctx)
        move_drone(world, i, path[1:])


def run_init(config: ScenarioConfig, trace_path=None) -> RunReport:
    """Run the initialization loop until its certificates fire.

    Stops once the solution is complete (rank certificate) with a
    per-epoch objective below tau and translations recovered. Raises
    MaxEpochsExceeded past the epoch cap, with the partial report
    attached.
    """
    pp = config.pipeline
    world, truth = spawn(config.world)
    n = config.world.n_drones
    rngs = _planner_streams(config.world.seed, n)
    records: list[EpochRecord] = []
    iterations: list[dict] = []
    timings = {"scan": 0.0, "solve": 0.0, "match": 0.0, "plan": 0.0}
    scene: SceneSolution | None = None
    stop_reason = "max_epochs"
    t_start = time.perf_counter()
    for k in range(pp.max_epochs):
        t0 = time.perf_counter()
        record = scan_epoch(world, k)
        records.append(record)
        timings["scan"] += time.perf_counter() - t0
        if len(records) >= pp.min_num_observations:
            entry = {
                "epoch_count": len(records),
                "objective": None,
                "numeric_rank": None,
                "complete": False,
            }
            try:
                sc = solve_scene(
                    records, config.world.obs_noise_sigma, pp.refine_unmatched
                )
            except (SolverDiverged, DegenerateBlock):
                iterations.append(entry)
            else:
                timings["solve"] += sc.solve_time
                timings["match"] += sc.match_time
                scene = sc
                entry["objective"] = float(sc.sdp.objective)
                entry["numeric_rank"] = int(sc.sdp.numeric_rank)
                entry["complete"] = bool(sc.sdp.complete)
                iterations.append(entry)
                if (
                    sc.sdp.complete
                    and sc.sdp.objective <= pp.tau * len(records)
                    and sc.translations is not None
                ):
                    stop_reason = "converged"
                    break
        t0 = time.perf_counter()
        _plan_and_move(world, record, rngs, config.planner)
        timings["plan"] += time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    if trace_path is not None:
        dump_trace(records, trace_path)

    final = {
        "rotations": None,
        "translations": None,
        "graph": None,
        "yaw_mae": None,
        "translation_rmse": None,
        "epochs_used": len(records),
        "stop_reason": stop_reason,
        "timings": timings if pp.include_timings else dict.fromkeys(timings, 0.0),
    }
    if scene is not None:
        final["rotations"] = [float(t) for t in scene.sdp.rotations.yaws]
        final["yaw_mae"] = float(yaw_mae(scene.sdp.rotations, truth.yaw_vector()))
        if scene.graph is not None:
            final["graph"] = scene.graph.to_json_dict()
            final["translations"] = [
                [float(x) for x in row] for row in scene.translations
            ]
            err = scene.translations[1:] - truth.positions()[1:]
            final["translation_rmse"] = float(
                np.sqrt(np.mean(np.sum(err * err, axis=1)))
            )
    report = RunReport(config.to_dict(), iterations, final)
    if stop_reason == "max_epochs":
        raise MaxEpochsExceeded(report)
    return report


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    n_drones: int
    sigma: float
    trial: int
    yaw_mae: float
    solve_time: float
    converged: bool

    def to_csv_row(self) -> str:
        return ",".join(
            (
                self.method,
                str(self.n_drones),
                repr(self.sigma),
                str(self.trial),
                repr(self.yaw_mae),
                repr(self.solve_time),
                "true" if self.converged else "false",
            )
        )


_CSV_HEADER = "method,n_drones,sigma,trial,yaw_mae,solve_time,converged"


def _trial_world(
    template: WorldConfig, n: int, sigma: float, seed: int,
    bench: BenchmarkParams | None = None,
) -> WorldConfig:
    arena = template.arena
    if bench is not None:
        arena = bench.arena_for(arena, n)
    return replace(
        template,
        n_drones=n,
        arena=arena,
        obs_noise_sigma=sigma,
        seed=seed,
        formation="random",
    )


def _random_init(n: int, rng) -> YawVector:
    th = rng.uniform(-np.pi, np.pi, size=n)
    th[0] = 0.0
    return YawVector(wrap_angle(th))


def run_benchmark(config: ScenarioConfig, detail_sink: list | None = None) -> list:
    """Sweep the benchmark grid; one shared scene per trial, three rows out.

    Every trial spawns an independent world, runs planner-driven motion
    between scans, builds a single problem matrix, and feeds it to the
    relaxation plus both local solvers started from one shared random
    guess. Rows come back in deterministic grid order. detail_sink, when
    given, collects per-solve diagnostics that the CSV schema does not
    carry.
    """
    bench = config.benchmark
    include_t = config.pipeline.include_timings
    rows: list[BenchmarkRow] = []
    for n in bench.n_drones:
        epochs = bench.epochs_for(n)
        for sigma in bench.sigmas:
            sig_code = int(round(sigma * 1e6))
            for trial in range(bench.trials):
                root = np.random.SeedSequence(
                    (config.world.seed, n, sig_code, trial)
                )
                world_seed, init_seed = (
                    int(s) for s in root.generate_state(2, dtype=np.uint32)
                )
                wc = _trial_world(config.world, n, sigma, world_seed, bench)
                world, truth = spawn(wc)
                rngs = _planner_streams(world_seed, n)
                records = []
                for k in range(epochs):
                    rec = scan_epoch(world, k)
                    records.append(rec)
                    if k + 1 < epochs:
                        _plan_and_move(world, rec, rngs, config.planner)
                q = build_q(records)
                truth_yaws = truth.yaw_vector()

                t0 = time.perf_counter()
                try:
                    sol = solve_sdp(q)
                    dt = time.perf_counter() - t0
                    sdp_row = BenchmarkRow(
                        "SDP", n, sigma, trial,
                        float(yaw_mae(sol.rotations, truth_yaws)),
                        dt if include_t else 0.0, True,
                    )
                    sdp_detail = sol
                except SolverDiverged:
                    sdp_row = BenchmarkRow(
                        "SDP", n, sigma, trial, float("nan"),
                        float("nan") if include_t else 0.0, False,
                    )
                    sdp_detail = None
                rows.append(sdp_row)

                init = _random_init(n, np.random.default_rng(init_seed))
                lm = solve_lm(q, init)
                rows.append(BenchmarkRow(
                    "LM", n, sigma, trial,
                    float(yaw_mae(lm.yaws, truth_yaws)),
                    lm.wall_time if include_t else 0.0, lm.converged,
                ))
                gn = solve_gn(q, init)
                rows.append(BenchmarkRow(
                    "GN", n, sigma, trial,
                    float(yaw_mae(gn.yaws, truth_yaws)),
                    gn.wall_time if include_t else 0.0, gn.converged,
                ))
                if detail_sink is not None:
                    detail_sink.append({
                        "n_drones": n, "sigma": sigma, "trial": trial,
                        "q": q, "truth": truth_yaws, "sdp": sdp_detail,
                        "lm": lm, "gn": gn, "init": init,
                    })
    return rows


def write_benchmark_csv(rows, path) -> None:
    """Write rows as CSV; the file appears atomically."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(_CSV_HEADER + "\n")
        for row in rows:
            f.write(row.to_csv_row() + "\n")
    os.replace(tmp, path)


def replay_records(records, sigma: float = 0.0, refine: bool = True) -> dict:
    """Re-solve a dumped epoch trace; returns a JSON-ready summary."""
    if not records:
        raise ValueError("empty trace")
    scene = solve_scene(records, sigma, refine)
    out = {
        "n_drones": len(records[0].odometry.yaws),
        "n_epochs": len(records),
        "objective": float(scene.sdp.objective),
        "numeric_rank": int(scene.sdp.numeric_rank),
        "complete": bool(scene.sdp.complete),
        "gate": float(scene.gate),
        "refined": bool(scene.refined),
        "rotations": [float(t) for t in scene.sdp.rotations.yaws],
        "translations": None,
        "graph": None,
        "n_confirmed": len(scene.matches.confirmed),
        "n_observations": scene.matches.n_observations,
    }
    if scene.graph is not None:
        out["graph"] = scene.graph.to_json_dict()
        out["translations"] = [
            [float(x) for x in row] for row in scene.translations
        ]
    return out
