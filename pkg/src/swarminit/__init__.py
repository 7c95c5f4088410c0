"""Relative pose initialization for drone swarms.

Recovers the initial relative yaw and translation of every drone in a
swarm from anonymous, mutually observed relative position measurements,
without landmarks or a shared map. The rotation part is solved globally
through a semidefinite relaxation with a rank certificate; translations
follow in closed form once observations are matched to identities.
"""

from .baselines import LocalSolveReport, objective_and_jacobian, solve_gn, solve_lm
from .correspondence import (
    AssignmentMatrix,
    CorrespondenceGraph,
    CostBlock,
    DisconnectedGraph,
    GraphEdge,
    MatchedPair,
    MatchResult,
    assign,
    build_cost_blocks,
    compute_gate,
    filter_confirmed,
    fuse_and_recover,
    match_epoch,
    match_records,
)
from .geometry import (
    Circle,
    DegenerateBlock,
    LengthMismatch,
    Pose,
    Rotation2,
    YawVector,
    project_to_so2,
    rotate_xy,
    wrap_angle,
    yaw_mae,
)
from .ipm import IpmResult, SolverDiverged, solve_block_identity_sdp
from .pipeline import (
    BenchmarkParams,
    BenchmarkRow,
    MaxEpochsExceeded,
    PipelineParams,
    RunReport,
    ScenarioConfig,
    SceneSolution,
    load_config,
    replay_records,
    run_benchmark,
    run_init,
    solve_scene,
    write_benchmark_csv,
)
from .planner import (
    NoValidPosition,
    PathNotFound,
    PlanContext,
    PlannerParams,
    adjust_for_obstacles,
    plan_move,
    plan_path,
    select_target,
)
from .rotation_sdp import (
    EmptyInput,
    QMatrix,
    SdpSolution,
    build_q,
    extract_rotations,
    identity_rotation,
    numeric_rank,
    objective_at_yaws,
    solve_sdp,
)
from .simulator import (
    Arena,
    ArenaTooSmall,
    EpochRecord,
    GroundTruth,
    Observation,
    OdometryState,
    World,
    WorldConfig,
    dump_trace,
    inject_false_positive,
    load_trace,
    move_drone,
    scan_epoch,
    spawn,
)

__version__ = "0.1.0"

__all__ = [
    "Arena",
    "ArenaTooSmall",
    "AssignmentMatrix",
    "BenchmarkParams",
    "BenchmarkRow",
    "Circle",
    "CorrespondenceGraph",
    "CostBlock",
    "DegenerateBlock",
    "DisconnectedGraph",
    "EmptyInput",
    "EpochRecord",
    "GraphEdge",
    "GroundTruth",
    "IpmResult",
    "LengthMismatch",
    "LocalSolveReport",
    "MatchResult",
    "MatchedPair",
    "MaxEpochsExceeded",
    "NoValidPosition",
    "Observation",
    "OdometryState",
    "PathNotFound",
    "PipelineParams",
    "PlanContext",
    "PlannerParams",
    "Pose",
    "QMatrix",
    "Rotation2",
    "RunReport",
    "ScenarioConfig",
    "SceneSolution",
    "SdpSolution",
    "SolverDiverged",
    "World",
    "WorldConfig",
    "YawVector",
    "adjust_for_obstacles",
    "assign",
    "build_cost_blocks",
    "build_q",
    "compute_gate",
    "dump_trace",
    "extract_rotations",
    "filter_confirmed",
    "fuse_and_recover",
    "identity_rotation",
    "inject_false_positive",
    "load_config",
    "load_trace",
    "match_epoch",
    "match_records",
    "move_drone",
    "numeric_rank",
    "objective_and_jacobian",
    "objective_at_yaws",
    "plan_move",
    "plan_path",
    "project_to_so2",
    "replay_records",
    "rotate_xy",
    "run_benchmark",
    "run_init",
    "scan_epoch",
    "select_target",
    "solve_block_identity_sdp",
    "solve_gn",
    "solve_lm",
    "solve_scene",
    "solve_sdp",
    "spawn",
    "wrap_angle",
    "write_benchmark_csv",
    "yaw_mae",
]
