"""Initial-yaw recovery from anonymous mutual observations.

Per epoch, every observer's observation vectors are summed (no identities
needed), rotated back through that observer's odometry yaw into its initial
body frame, and stacked into a length-2N vector v_k. At the true initial
yaws the per-epoch world-frame residual sum(R(theta_j) v_k[j]) vanishes
because mutual observations cancel pairwise, so the yaws minimize

    F(theta) = sum_k | X(theta) v_k |^2 = tr(q Z),   q = sum_k v_k v_k^T,

where X stacks R(theta_j) blocks and Z = X^T X has identity diagonal
blocks. Dropping the rank-2 condition on Z gives the semidefinite
relaxation solved here; its solution rank certifies whether the collected
epochs determine the yaws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Rotation2, YawVector, project_to_so2, rotate_xy, wrap_angle
from .ipm import SolverDiverged, solve_block_identity_sdp

__all__ = [
    "EmptyInput",
    "QMatrix",
    "SdpSolution",
    "SolverDiverged",
    "build_q",
    "numeric_rank",
    "objective_at_yaws",
    "solve_sdp",
]


class EmptyInput(ValueError):
    """No epoch records were supplied."""


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Accumulated rotation-cost matrix for an N-drone problem."""

    q: np.ndarray
    n: int
    n_epochs: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (2 * self.n, 2 * self.n):
            raise ValueError(f"cost matrix shape {q.shape} does not match n={self.n}")
        q = 0.5 * (q + q.T)
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    @classmethod
    def zeros(cls, n: int, n_epochs: int = 0) -> "QMatrix":
        return cls(np.zeros((2 * n, 2 * n)), n, n_epochs)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "n_epochs": self.n_epochs,
            "q": [[float(x) for x in row] for row in self.q],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "QMatrix":
        return cls(np.array(d["q"], dtype=float), int(d["n"]), int(d["n_epochs"]))


def build_q(records) -> QMatrix:
    """Accumulate the rotation cost from a sequence of epoch records.

    Uses only anonymous data: per-observer sums of observation vectors
    (XY projection) and odometry yaws. Observers with no observations in
    an epoch contribute a zero segment.
    """
    records = list(records)
    if not records:
        raise EmptyInput("at least one epoch record is required")
    n = len(records[0].odometry.yaws)
    q = np.zeros((2 * n, 2 * n))
    for rec in records:
        if len(rec.odometry.yaws) != n:
            raise ValueError("epoch records disagree on swarm size")
        v = np.zeros(2 * n)
        psi = rec.odometry.yaws.yaws
        for j, obs_list in rec.by_observer().items():
            if not obs_list:
                continue
            sxy = np.sum([o.vector[:2] for o in obs_list], axis=0)
            # Odometry yaw carries the current body frame back to the
            # initial one; the unknown initial yaw does the rest.
            v[2 * j : 2 * j + 2] = rotate_xy(psi[j], sxy)
        q += np.outer(v, v)
    return QMatrix(q, n, len(records))


def objective_at_yaws(q: QMatrix, yaws: YawVector) -> float:
    """Evaluate tr(q Z) at the rank-2 Z induced by concrete yaw angles."""
    th = yaws.yaws
    if th.shape[0] != q.n:
        raise ValueError(f"expected {q.n} yaws, got {th.shape[0]}")
    x = np.zeros((2, 2 * q.n))
    c, s = np.cos(th), np.sin(th)
    x[0, 0::2], x[0, 1::2] = c, -s
    x[1, 0::2], x[1, 1::2] = s, c
    return float(np.sum(q.q * (x.T @ x)))


def numeric_rank(z: np.ndarray, tol: float = 1e-6) -> int:
    """Count eigenvalues above tol times the largest one."""
    w = np.linalg.eigvalsh(np.asarray(z, dtype=float))
    top = float(w[-1])
    if top <= 0.0:
        return 0
    return int(np.sum(w > tol * top))


@dataclass(frozen=True, eq=False)
class SdpSolution:
    """Relaxation output plus the rotations extracted from it."""

    z: np.ndarray
    objective: float
    numeric_rank: int
    complete: bool
    rotations: YawVector
    gap: float
    iterations: int

    def to_json_dict(self) -> dict:
        return {
            "objective": float(self.objective),
            "numeric_rank": int(self.numeric_rank),
            "complete": bool(self.complete),
            "rotations": [float(t) for t in self.rotations.yaws],
            "gap": float(self.gap),
            "iterations": int(self.iterations),
            "z": [[float(x) for x in row] for row in self.z],
        }


def _objective_terms(qarr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduce q to the N x N cosine/sine coefficient matrices.

    With d[m, n] = theta_n - theta_m, the objective is
    sum(p * cos(d) + s * sin(d)): each 2x2 block of q couples one yaw
    difference through its trace and skew parts.
    """
    n = qarr.shape[0] // 2
    qb = qarr.reshape(n, 2, n, 2)
    p = qb[:, 0, :, 0] + qb[:, 1, :, 1]
    s = qb[:, 1, :, 0] - qb[:, 0, :, 1]
    return p, s


def _polish_yaws(qarr: np.ndarray, angles: np.ndarray, max_iter: int = 8) -> np.ndarray:
    """Damped Newton descent of the yaw objective, gauge frozen at index 0.

    Extraction from an eigenbasis carries the solver's residual error into
    the angles; a few descent steps on the exact objective remove it.
    Steps are accepted only when the objective decreases.
    """
    th = angles.copy()
    n = th.shape[0]
    if n < 2:
        return th
    p, s = _objective_terms(qarr)

    def value(t):
        d = t[None, :] - t[:, None]
        return float(np.sum(p * np.cos(d) + s * np.sin(d)))

    f = value(th)
    scale = max(1.0, float(np.abs(p).sum()))
    for _ in range(max_iter):
        d = th[None, :] - th[:, None]
        g_mat = -p * np.sin(d) + s * np.cos(d)
        grad = g_mat.sum(axis=0) - g_mat.sum(axis=1)
        if np.linalg.norm(grad[1:]) <= 1e-14 * scale:
            break
        t_mat = -p * np.cos(d) - s * np.sin(d)
        np.fill_diagonal(t_mat, 0.0)
        hess = np.diag(t_mat.sum(axis=0) + t_mat.sum(axis=1)) - (t_mat + t_mat.T)
        hl = hess[1:, 1:]
        try:
            step = np.linalg.solve(hl + 1e-12 * scale * np.eye(n - 1), -grad[1:])
        except np.linalg.LinAlgError:
            step = -grad[1:] / scale
        improved = False
        for _ in range(12):
            cand = th.copy()
            cand[1:] += step
            fc = value(cand)
            if fc < f:
                th, f, improved = cand, fc, True
                break
            step *= 0.5
        if not improved:
            break
    return wrap_angle(th - th[0])


def extract_rotations(z: np.ndarray, n: int) -> YawVector:
    """Gauge-fixed yaws from the top-2 eigenpairs of a relaxation solution.

    The two leading eigenvectors, scaled by sqrt(eigenvalue), give one
    2x2 frame per drone. A common reflection (negative determinant on
    drone 0's frame) is removed by flipping the second column everywhere;
    each frame is then projected to the nearest rotation and gauge-fixed
    so drone 0 maps to the identity. Raises DegenerateBlock when a frame
    carries no rotation information.
    """
    w, v = np.linalg.eigh(z)
    scale = np.sqrt(np.maximum(w[[-1, -2]], 0.0))
    frames = v[:, [-1, -2]] * scale
    if np.linalg.det(frames[0:2, :]) < 0.0:
        frames[:, 1] *= -1.0
    angles = np.array(
        [project_to_so2(frames[2 * i : 2 * i + 2, :]).theta for i in range(n)]
    )
    # Frame i carries R(-theta_i) times a shared rotation, so differencing
    # against drone 0 and negating yields gauge-fixed yaws.
    return YawVector(wrap_angle(angles[0] - angles))


def _certified_rounding(q: QMatrix, partial) -> SdpSolution | None:
    """Round a feasible but uncertified iterate and prove it optimal.

    The numeric floor of the interior-point endgame sits near 1e-12 of
    the cost norm, which benchmark-sized costs (norms up to ~1e5) can
    place above the absolute gap a caller needs. When the relaxation is
    tight the exact optimum is still reachable: extract yaw angles from
    the iterate, polish them on the exact objective, and build the dual
    matching them through complementary slackness, which decouples into
    one closed-form 2x2 solve per block. The rounded objective minus the
    dual bound is then a true certified gap; the rounding is accepted
    only when it meets the same window the solver itself enforces. On a
    loose instance (symmetric formation, underdetermined geometry) the
    certificate comes out wide and None is returned.
    """
    n = q.n
    th = extract_rotations(partial.z, n)
    th = _polish_yaws(q.q, th.yaws)
    fval = objective_at_yaws(q, YawVector(th))

    x = _rotation_stack(YawVector(th))
    g = x.T
    qg = q.q @ g
    y_blocks = np.empty((n, 2, 2))
    for i in range(n):
        # At the optimum (Q - At(y)) G = 0 and At(y) is block diagonal
        # with blocks [[2a, c], [c, 2b]]; G blocks are rotations, so
        # m = (QG)_i R(theta_i) solves it, symmetrized.
        m = qg[2 * i : 2 * i + 2, :] @ x[:, 2 * i : 2 * i + 2]
        y_blocks[i] = 0.5 * (m + m.T)
    s = q.q.copy()
    for i in range(n):
        s[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] -= y_blocks[i]
    smin = float(np.linalg.eigvalsh(s)[0])
    if smin < 0.0:
        # Shift the diagonal multipliers to restore dual feasibility;
        # the dual objective pays 2n times the shift.
        for i in range(n):
            y_blocks[i, 0, 0] += smin
            y_blocks[i, 1, 1] += smin
        s = s - smin * np.eye(2 * n)
    dobj = float(sum(yb[0, 0] + yb[1, 1] for yb in y_blocks))
    gap = fval - dobj
    if gap > min(1e-7 * (1.0 + abs(fval)), 9e-7) or gap < -1e-9 * (1.0 + abs(fval)):
        return None
    return SdpSolution(
        z=g @ g.T,
        objective=fval,
        numeric_rank=2,
        complete=True,
        rotations=YawVector(th),
        gap=max(gap, 0.0),
        iterations=partial.iterations,
    )


def solve_sdp(
    q: QMatrix,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
    rank_tol: float = 1e-6,
) -> SdpSolution:
    """Solve the rotation relaxation and extract gauge-fixed yaws.

    A zero cost matrix (no informative observations yet) short-circuits to
    z = I with identity rotations and complete=False. Otherwise the
    interior-point solver runs and the solution is marked complete when its
    numeric rank is at most n + 1, the certificate that the collected
    observations pin down the yaws. If the solver stalls feasible but
    outside its gap window, the iterate is rounded to angles and accepted
    with a complementary-slackness certificate when that proves tightness.
    """
    n = q.n
    if not np.any(q.q):
        return SdpSolution(
            z=np.eye(2 * n),
            objective=0.0,
            numeric_rank=2 * n,
            complete=False,
            rotations=YawVector(np.zeros(n)),
            gap=0.0,
            iterations=0,
        )
    try:
        res = solve_block_identity_sdp(q.q, tol=tol, max_iter=max_iter)
    except SolverDiverged as err:
        if err.partial is None:
            raise
        rounded = _certified_rounding(q, err.partial)
        if rounded is None:
            raise
        return rounded
    rank = numeric_rank(res.z, rank_tol)
    rotations = extract_rotations(res.z, n)
    rotations = YawVector(_polish_yaws(q.q, rotations.yaws))
    return SdpSolution(
        z=res.z,
        objective=res.objective,
        numeric_rank=rank,
        complete=rank <= n + 1,
        rotations=rotations,
        gap=res.gap,
        iterations=res.iterations,
    )


def identity_rotation(n: int) -> YawVector:
    return YawVector(np.zeros(n))


def _rotation_stack(yaws: YawVector) -> np.ndarray:
    """2x2N stack of R(theta_j) blocks, mostly for tests and diagnostics."""
    th = yaws.yaws
    x = np.zeros((2, 2 * th.shape[0]))
    c, s = np.cos(th), np.sin(th)
    x[0, 0::2], x[0, 1::2] = c, -s
    x[1, 0::2], x[1, 1::2] = s, c
    return x
