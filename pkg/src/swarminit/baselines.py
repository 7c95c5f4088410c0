"""Local yaw solvers used as benchmark comparators.

Both methods descend the same accumulated objective the relaxation bounds
from below, parameterized directly by angles. The global shift is a flat
direction of that objective, so drone 0's angle is frozen and only the
remaining N-1 angles move. Gauss-Newton works on the residual form
r(theta) = X(theta) W with q = W W^T, so that |r|^2 equals the objective;
Levenberg-Marquardt adds the classic additive damping on the normal
equations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import LengthMismatch, YawVector, wrap_angle
from .rotation_sdp import QMatrix, _objective_terms

__all__ = [
    "LocalSolveReport",
    "objective_and_jacobian",
    "solve_gn",
    "solve_lm",
]

_STEP_TOL = 1e-10
_GRAD_TOL = 1e-9
_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class LocalSolveReport:
    """Outcome of one local descent run."""

    yaws: YawVector
    objective: float
    iterations: int
    converged: bool
    wall_time: float
    used_gradient_fallback: bool = False

    def to_json_dict(self) -> dict:
        return {
            "yaws": [float(t) for t in self.yaws.yaws],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "wall_time": float(self.wall_time),
            "used_gradient_fallback": bool(self.used_gradient_fallback),
        }


def objective_and_jacobian(thetas: YawVector, q: QMatrix) -> tuple[float, np.ndarray]:
    """Objective value and its full analytic gradient in angle space."""
    th = thetas.yaws
    if th.shape[0] != q.n:
        raise LengthMismatch(f"expected {q.n} yaws, got {th.shape[0]}")
    p, s = _objective_terms(q.q)
    d = th[None, :] - th[:, None]
    value = float(np.sum(p * np.cos(d) + s * np.sin(d)))
    g = -p * np.sin(d) + s * np.cos(d)
    grad = g.sum(axis=0) - g.sum(axis=1)
    return value, grad


def _objective_only(th: np.ndarray, p: np.ndarray, s: np.ndarray) -> float:
    d = th[None, :] - th[:, None]
    return float(np.sum(p * np.cos(d) + s * np.sin(d)))


def _residual_factor(qarr: np.ndarray) -> np.ndarray:
    # q = W W^T up to eigenvalue clipping; tiny negatives are solver noise.
    w, v = np.linalg.eigh(qarr)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _residual_and_jacobian(
    th: np.ndarray, wmat: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n = th.shape[0]
    c, s = np.cos(th), np.sin(th)
    x = np.zeros((2, 2 * n))
    x[0, 0::2], x[0, 1::2] = c, -s
    x[1, 0::2], x[1, 1::2] = s, c
    r = (x @ wmat).ravel()
    jac = np.empty((r.shape[0], n))
    for l in range(n):
        rot = np.array([[-s[l], -c[l]], [c[l], -s[l]]])
        jac[:, l] = (rot @ wmat[2 * l : 2 * l + 2, :]).ravel()
    return r, jac


def _finish(
    th: np.ndarray,
    p: np.ndarray,
    s: np.ndarray,
    iterations: int,
    converged: bool,
    t0: float,
    fallback: bool,
) -> LocalSolveReport:
    gauge_fixed = YawVector(wrap_angle(th - th[0]))
    return LocalSolveReport(
        yaws=gauge_fixed,
        objective=_objective_only(th, p, s),
        iterations=iterations,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        used_gradient_fallback=fallback,
    )


def solve_gn(q: QMatrix, init: YawVector) -> LocalSolveReport:
    """Gauss-Newton descent with backtracking; accepted steps are monotone.

    Singular normal equations fall back to a scaled gradient step and are
    flagged in the report.
    """
    t0 = time.perf_counter()
    if len(init) != q.n:
        raise LengthMismatch(f"expected {q.n} initial yaws, got {len(init)}")
    p, srt = _objective_terms(q.q)
    th = init.yaws.copy()
    n = q.n
    if n < 2:
        return _finish(th, p, srt, 0, True, t0, False)
    wmat = _residual_factor(q.q)
    scale = max(1.0, float(np.abs(p).sum()))
    fallback = False
    converged = False
    it = 0
    f = _objective_only(th, p, srt)
    while it < _MAX_ITER:
        r, jac = _residual_and_jacobian(th, wmat)
        grad = 2.0 * (jac.T @ r)
        if np.linalg.norm(grad) < _GRAD_TOL:
            converged = True
            break
        jf = jac[:, 1:]
        try:
            step = np.linalg.solve(jf.T @ jf, -(jf.T @ r))
        except np.linalg.LinAlgError:
            fallback = True
            step = -grad[1:] / scale
        it += 1
        accepted = False
        for _ in range(30):
            cand = th.copy()
            cand[1:] += step
            fc = _objective_only(cand, p, srt)
            if fc < f:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        th, f = cand, fc
        if np.linalg.norm(step) < _STEP_TOL:
            converged = True
            break
    return _finish(th, p, srt, it, converged, t0, fallback)


def solve_lm(q: QMatrix, init: YawVector) -> LocalSolveReport:
    """Levenberg-Marquardt on the same residuals, additive damping.

    lambda starts at 1e-3, grows tenfold on a rejected step and shrinks
    tenfold on an accepted one; rejected trials consume iterations.
    """
    t0 = time.perf_counter()
    if len(init) != q.n:
        raise LengthMismatch(f"expected {q.n} initial yaws, got {len(init)}")
    p, srt = _objective_terms(q.q)
    th = init.yaws.copy()
    n = q.n
    if n < 2:
        return _finish(th, p, srt, 0, True, t0, False)
    wmat = _residual_factor(q.q)
    lam = 1e-3
    converged = False
    it = 0
    f = _objective_only(th, p, srt)
    while it < _MAX_ITER:
        r, jac = _residual_and_jacobian(th, wmat)
        grad = 2.0 * (jac.T @ r)
        if np.linalg.norm(grad) < _GRAD_TOL:
            converged = True
            break
        jf = jac[:, 1:]
        jtj = jf.T @ jf
        step = np.linalg.solve(jtj + lam * np.eye(n - 1), -(jf.T @ r))
        it += 1
        if np.linalg.norm(step) < _STEP_TOL:
            converged = True
            break
        cand = th.copy()
        cand[1:] += step
        fc = _objective_only(cand, p, srt)
        if fc < f:
            th, f = cand, fc
            lam = max(lam / 10.0, 1e-12)
        else:
            lam = min(lam * 10.0, 1e12)
    return _finish(th, p, srt, it, converged, t0, False)
