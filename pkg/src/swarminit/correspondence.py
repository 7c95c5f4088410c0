"""Observation-identity matching and translation recovery.

Matching exploits mutuality: when drone i's observation a and drone x's
observation c are views of each other, their world-rotated vectors are
negatives, so |w_i[a] + w_x[c]| is zero up to noise. Per epoch and per
observer, a gated Hungarian assignment against all other drones'
observations yields identity hypotheses; the matched observation's owner
is the claimed identity. Translations then propagate outward from drone 0
through the directed match graph, averaging every available estimate.

Costs compare observations from the same epoch, so drone motion cancels.
Translation edges do not get that cancellation: each one rotates the
observation into the shared frame and subtracts both drones' odometry
displacements before averaging across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import YawVector, rotate_xy
from .simulator import EpochRecord

__all__ = [
    "AssignmentMatrix",
    "CorrespondenceGraph",
    "CostBlock",
    "DisconnectedGraph",
    "GraphEdge",
    "MatchResult",
    "MatchedPair",
    "assign",
    "build_cost_blocks",
    "compute_gate",
    "filter_confirmed",
    "fuse_and_recover",
    "match_epoch",
    "match_records",
]


class DisconnectedGraph(RuntimeError):
    """Some drones have no observation path from drone 0."""

    def __init__(self, unreachable):
        self.unreachable = tuple(sorted(unreachable))
        super().__init__(f"no path from drone 0 to drones {list(self.unreachable)}")


@dataclass(frozen=True, eq=False)
class CostBlock:
    """Mutual-consistency costs for one observer at one epoch.

    Rows follow the observer's own observations (track order); each column
    is another drone's observation, labeled by (owner, track). Cells are
    metric distances |w_row + w_col| of world-rotated vectors.
    """

    observer: int
    epoch: int
    rows: tuple[int, ...]
    columns: tuple[tuple[int, int], ...]
    cost: np.ndarray


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """Binary observation-to-identity matrix for one observer and epoch."""

    owner: int
    epoch: int
    rows: tuple[int, ...]
    entries: np.ndarray

    def identity_of(self, track: int) -> int | None:
        """Matched identity for one of the owner's observation tracks."""
        idx = self.rows.index(track)
        hits = np.flatnonzero(self.entries[idx])
        return int(hits[0]) if hits.size else None


@dataclass(frozen=True, eq=False)
class MatchedPair:
    """One gated match: observer's observation paired to an identity."""

    epoch: int
    observer: int
    track: int
    identity: int
    identity_track: int
    cost: float

    def key(self) -> tuple[int, int, int]:
        return (self.epoch, self.observer, self.track)

    def reverse_key(self) -> tuple[int, int, int]:
        return (self.epoch, self.identity, self.identity_track)


@dataclass(frozen=True, eq=False)
class MatchResult:
    """All per-epoch assignments plus the reciprocity analysis."""

    assignments: tuple[AssignmentMatrix, ...]
    pairs: tuple[MatchedPair, ...]
    confirmed: tuple[MatchedPair, ...]
    n_observations: int

    @property
    def n_unconfirmed(self) -> int:
        return len(self.pairs) - len(self.confirmed)


@dataclass(frozen=True, eq=False)
class GraphEdge:
    source: int
    target: int
    vector: np.ndarray
    epochs: int
    mean_cost: float

    def to_json_dict(self) -> dict:
        return {
            "source": int(self.source),
            "target": int(self.target),
            "vector": [float(x) for x in self.vector],
            "epochs": int(self.epochs),
            "mean_cost": float(self.mean_cost),
        }


@dataclass(frozen=True, eq=False)
class CorrespondenceGraph:
    """Directed observer-to-identity graph with fused relative vectors."""

    nodes: tuple[int, ...]
    edges: tuple[GraphEdge, ...]
    spread: float

    def to_json_dict(self) -> dict:
        return {
            "nodes": [int(v) for v in self.nodes],
            "edges": [e.to_json_dict() for e in self.edges],
            "spread": float(self.spread),
        }


def compute_gate(records, objective: float, sigma: float) -> float:
    """Match acceptance radius from noise level and rotation residual.

    The solver residual, spread over the epochs and normalized by the mean
    range, approximates the rotation uncertainty; the longest range then
    converts it back to meters of induced mismatch.
    """
    ranges = [
        float(np.linalg.norm(o.vector)) for rec in records for o in rec.observations
    ]
    if not ranges:
        return 0.5
    d_max = max(ranges)
    d_mean = float(np.mean(ranges))
    n_o = max(len(list(records)), 1)
    theta_err = 0.0
    if d_mean > 0.0:
        theta_err = np.sqrt(max(objective, 0.0) / n_o) / d_mean
    return max(0.5, 5.0 * sigma + 2.0 * d_max * theta_err)


def _world_vectors(record: EpochRecord, rotations: YawVector) -> dict[int, list]:
    psi = record.odometry.yaws.yaws
    th = rotations.yaws
    out: dict[int, list] = {}
    for j, obs_list in record.by_observer().items():
        out[j] = [
            (o.track, rotate_xy(th[j] + psi[j], o.vector)) for o in obs_list
        ]
    return out


def build_cost_blocks(records, rotations: YawVector) -> list[CostBlock]:
    """Per-epoch, per-observer mutual-consistency cost matrices.

    Observers without observations in an epoch produce no block. Columns
    never include the observer's own observations, so self-pairings are
    impossible by construction.
    """
    blocks: list[CostBlock] = []
    for rec in records:
        world = _world_vectors(rec, rotations)
        for i, own in world.items():
            if not own:
                continue
            columns = []
            col_vecs = []
            for x, others in world.items():
                if x == i:
                    continue
                for track, w in others:
                    columns.append((x, track))
                    col_vecs.append(w)
            if not columns:
                continue
            own_mat = np.stack([w for _, w in own])
            col_mat = np.stack(col_vecs)
            cost = np.linalg.norm(
                own_mat[:, None, :] + col_mat[None, :, :], axis=2
            )
            blocks.append(
                CostBlock(
                    observer=i,
                    epoch=rec.epoch,
                    rows=tuple(t for t, _ in own),
                    columns=tuple(columns),
                    cost=cost,
                )
            )
    return blocks


def assign(cost: np.ndarray, gate: float) -> np.ndarray:
    """Gated minimum-cost assignment; returns a column index per row, -1 if
    the row priced out.

    Padding the matrix with one dummy column of cost `gate` per row makes
    "leave unmatched" an explicit option of the exact Hungarian solve, so
    the gated total is still the global minimum.
    """
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape
    padded = np.concatenate(
        [cost, np.full((n_rows, n_rows), gate)], axis=1
    )
    row_ind, col_ind = linear_sum_assignment(padded)
    out = np.full(n_rows, -1, dtype=int)
    for r, c in zip(row_ind, col_ind):
        if c < n_cols and cost[r, c] <= gate:
            out[r] = c
    return out


def match_epoch(
    record: EpochRecord, rotations: YawVector, gate: float
) -> tuple[list[AssignmentMatrix], list[MatchedPair]]:
    """Assign one epoch's observations to identities, gated and deduplicated.

    Two rows of one observer can claim the same identity through different
    observations of it; only the cheaper claim survives, keeping identity
    columns binary.
    """
    n = len(rotations)
    blocks = build_cost_blocks([record], rotations)
    assignments: list[AssignmentMatrix] = []
    pairs: list[MatchedPair] = []
    for block in blocks:
        row_to_col = assign(block.cost, gate)
        chosen: dict[int, tuple[float, int, int]] = {}
        for r, c in enumerate(row_to_col):
            if c < 0:
                continue
            identity, identity_track = block.columns[c]
            cell = float(block.cost[r, c])
            prev = chosen.get(identity)
            if prev is None or cell < prev[0]:
                chosen[identity] = (cell, r, identity_track)
        entries = np.zeros((len(block.rows), n), dtype=int)
        for identity, (cell, r, identity_track) in sorted(chosen.items()):
            entries[r, identity] = 1
            pairs.append(
                MatchedPair(
                    epoch=block.epoch,
                    observer=block.observer,
                    track=block.rows[r],
                    identity=identity,
                    identity_track=identity_track,
                    cost=cell,
                )
            )
        assignments.append(
            AssignmentMatrix(
                owner=block.observer,
                epoch=block.epoch,
                rows=block.rows,
                entries=entries,
            )
        )
    return assignments, pairs


def match_records(records, rotations: YawVector, gate: float) -> MatchResult:
    """Match every epoch and mark reciprocal pairs as confirmed."""
    assignments: list[AssignmentMatrix] = []
    pairs: list[MatchedPair] = []
    n_obs = 0
    for rec in records:
        n_obs += len(rec.observations)
        a, p = match_epoch(rec, rotations, gate)
        assignments.extend(a)
        pairs.extend(p)
    by_key = {pair.key(): pair for pair in pairs}
    confirmed = []
    for pair in pairs:
        mate = by_key.get(pair.reverse_key())
        if (
            mate is not None
            and mate.identity == pair.observer
            and mate.identity_track == pair.track
        ):
            confirmed.append(pair)
    return MatchResult(
        assignments=tuple(assignments),
        pairs=tuple(pairs),
        confirmed=tuple(confirmed),
        n_observations=n_obs,
    )


def filter_confirmed(records, result: MatchResult) -> list[EpochRecord]:
    """Keep only observations that belong to reciprocally confirmed pairs.

    Confirmation is symmetric, so the filtered records still satisfy
    mutuality and can seed a cleaner re-solve.
    """
    keep = {pair.key() for pair in result.confirmed}
    out = []
    for rec in records:
        kept = tuple(
            o
            for o in rec.observations
            if (rec.epoch, o.observer, o.track) in keep
        )
        out.append(
            EpochRecord(epoch=rec.epoch, odometry=rec.odometry, observations=kept)
        )
    return out


def fuse_and_recover(
    pairs, records, rotations: YawVector
) -> tuple[CorrespondenceGraph, np.ndarray]:
    """Average per-pair translation estimates and chain them from drone 0.

    Every matched pair at epoch k gives one estimate of t_target - t_source:
    the observation rotated into the shared frame, corrected by both
    drones' odometry displacements at that epoch. Nodes are settled
    breadth-first from drone 0, each one averaging over all edges into the
    settled set; the maximum disagreement between contributing estimates is
    reported as the spread. Raises DisconnectedGraph when some drone has
    no path from drone 0.
    """
    n = len(rotations)
    th = rotations.yaws
    by_epoch = {rec.epoch: rec for rec in records}
    deltas: dict[tuple[int, int], list[np.ndarray]] = {}
    costs: dict[tuple[int, int], list[float]] = {}
    for pair in pairs:
        rec = by_epoch[pair.epoch]
        psi = rec.odometry.yaws.yaws
        pos = rec.odometry.positions
        obs = next(
            o
            for o in rec.observations
            if o.observer == pair.observer and o.track == pair.track
        )
        i, x = pair.observer, pair.identity
        delta = (
            rotate_xy(th[i] + psi[i], obs.vector)
            + rotate_xy(th[i], pos[i])
            - rotate_xy(th[x], pos[x])
        )
        deltas.setdefault((i, x), []).append(delta)
        costs.setdefault((i, x), []).append(pair.cost)

    edges = tuple(
        GraphEdge(
            source=i,
            target=x,
            vector=np.mean(np.stack(vs), axis=0),
            epochs=len(vs),
            mean_cost=float(np.mean(costs[(i, x)])),
        )
        for (i, x), vs in sorted(deltas.items())
    )

    adjacency: dict[int, list[tuple[int, np.ndarray]]] = {v: [] for v in range(n)}
    for e in edges:
        adjacency[e.source].append((e.target, e.vector))
        adjacency[e.target].append((e.source, -e.vector))

    translations = np.zeros((n, 3))
    settled = {0}
    spread = 0.0
    frontier = [0]
    while frontier:
        candidates: dict[int, list[np.ndarray]] = {}
        for u in settled:
            for v, delta in adjacency[u]:
                if v in settled:
                    continue
                candidates.setdefault(v, []).append(translations[u] + delta)
        if not candidates:
            break
        for v, ests in candidates.items():
            translations[v] = np.mean(np.stack(ests), axis=0)
            if len(ests) > 1:
                for a in range(len(ests)):
                    for b_ in range(a + 1, len(ests)):
                        spread = max(
                            spread, float(np.linalg.norm(ests[a] - ests[b_]))
                        )
        settled.update(candidates)
        frontier = list(candidates)
    unreachable = [v for v in range(n) if v not in settled]
    if unreachable:
        raise DisconnectedGraph(unreachable)
    graph = CorrespondenceGraph(
        nodes=tuple(range(n)), edges=edges, spread=spread
    )
    return graph, translations
