"""Planar rotation and pose primitives.

Yaw angles in radians are the canonical representation; 2x2 matrices are
derived views. Every stored angle lives in (-pi, pi].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateBlock(ValueError):
    """A 2x2 block carries no usable rotation information."""


class LengthMismatch(ValueError):
    """Yaw vectors for different swarm sizes were combined."""


def wrap_angle(theta):
    """Map angles (scalar or array) to the interval (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    w = np.fmod(theta + np.pi, 2.0 * np.pi)
    w = np.where(w <= 0.0, w + 2.0 * np.pi, w) - np.pi
    if w.ndim == 0:
        return float(w)
    return w


def rotate_xy(theta, vectors):
    """Rotate the XY components of vectors by theta about +Z.

    Accepts shape (2,), (3,), or any (..., 2|3) batch; trailing Z components
    pass through unchanged. theta may be scalar or broadcastable over the
    batch dimensions.
    """
    v = np.asarray(vectors, dtype=float)
    c = np.cos(theta)
    s = np.sin(theta)
    out = v.copy()
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    return out


@dataclass(frozen=True)
class Rotation2:
    """Rotation about +Z by ``theta`` radians."""

    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "Rotation2":
        return cls(0.0)

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def inverse(self) -> "Rotation2":
        return Rotation2(-self.theta)

    def apply(self, v) -> np.ndarray:
        return rotate_xy(self.theta, v)


def compose(a: Rotation2, b: Rotation2) -> Rotation2:
    """Rotation equivalent to applying b first, then a."""
    return Rotation2(a.theta + b.theta)


def apply_yaw(r: Rotation2, v) -> np.ndarray:
    """Rotate a 3-vector's XY part by r; Z passes through."""
    v = np.asarray(v, dtype=float)
    return rotate_xy(r.theta, v)


def project_to_so2(m) -> Rotation2:
    """Nearest planar rotation to a 2x2 matrix in the Frobenius sense.

    The optimal angle is atan2(m21 - m12, m11 + m22). When both arguments
    vanish (to 1e-12) no direction is preferred and DegenerateBlock is raised.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    c = m[0, 0] + m[1, 1]
    s = m[1, 0] - m[0, 1]
    if abs(c) < 1e-12 and abs(s) < 1e-12:
        raise DegenerateBlock("block has no identifiable nearest rotation")
    return Rotation2(float(np.arctan2(s, c)))


@dataclass(frozen=True, eq=False)
class YawVector:
    """Per-drone yaw angles, entry i belonging to drone i."""

    yaws: np.ndarray

    def __post_init__(self):
        arr = wrap_angle(np.asarray(self.yaws, dtype=float).reshape(-1))
        arr = np.atleast_1d(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "yaws", arr)

    def __len__(self) -> int:
        return self.yaws.shape[0]

    def __getitem__(self, i: int) -> Rotation2:
        return Rotation2(float(self.yaws[i]))

    def gauge_fixed(self) -> "YawVector":
        """Shift all yaws so entry 0 becomes exactly zero."""
        return YawVector(self.yaws - self.yaws[0])


@dataclass(frozen=True, eq=False)
class Pose:
    """Position in meters plus planar yaw."""

    position: np.ndarray
    yaw: Rotation2

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3).copy()
        p.flags.writeable = False
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), Rotation2.identity())


@dataclass(frozen=True, eq=False)
class Circle:
    """Vertical cylindrical obstacle: XY center and radius in meters."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2).copy()
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        if self.radius < 0.0:
            raise ValueError("obstacle radius must be non-negative")


def yaw_mae(estimated: YawVector, truth: YawVector) -> float:
    """Mean absolute wrapped yaw difference between two gauge-fixed vectors.

    The mean runs over all entries, the gauge-pinned slot included, so the
    value understates the per-estimated-angle error by (n-1)/n.
    """
    if len(estimated) != len(truth):
        raise LengthMismatch(
            f"yaw vectors have sizes {len(estimated)} and {len(truth)}"
        )
    d = wrap_angle(estimated.yaws - truth.yaws)
    return float(np.mean(np.abs(d)))
