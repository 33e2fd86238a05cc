"""Homographies, camera poses, reprojection and pose-error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateWarp,
    EmptyInput,
    InvalidDepth,
    ValidationError,
    ZeroTranslation,
)

EPS_T = 1e-9


@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(h)) <= 1e-12:
            raise ValidationError("homography is singular")
        if h[2, 2] != 0:
            h = h / h[2, 2]
        object.__setattr__(self, "h", h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def compose(self, other: "Homography") -> "Homography":
        """``self ∘ other``: apply ``other`` first."""
        return Homography(self.h @ other.h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class CameraPose:
    """Maps camera-A coordinates into camera B: ``X_b = R @ X_a + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValidationError("R is not a rotation matrix")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def inverse(self) -> "CameraPose":
        return CameraPose(self.R.T, -self.R.T @ self.t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [[1 / self.fx, 0, -self.cx / self.fx], [0, 1 / self.fy, -self.cy / self.fy], [0, 0, 1.0]]
        )

    def scaled(self, s: float) -> "Intrinsics":
        return Intrinsics(self.fx * s, self.fy * s, self.cx * s, self.cy * s)


@dataclass(frozen=True)
class PoseError:
    rot_deg: float
    trans_deg: float
    max_deg: float

    @classmethod
    def failure(cls) -> "PoseError":
        return cls(np.inf, np.inf, np.inf)


def warp_point(h: Homography, p) -> np.ndarray:
    x, y = float(p[0]), float(p[1])
    H = h.h
    w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    if abs(w) <= 1e-12:
        raise DegenerateWarp(f"point ({x}, {y}) maps to infinity")
    return np.array([(H[0, 0] * x + H[0, 1] * y + H[0, 2]) / w, (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / w])


def warp_points(h: Homography, pts) -> np.ndarray:
    """Vectorised :func:`warp_point` over an (N, 2) array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    ph = np.c_[pts, np.ones(len(pts))] @ h.h.T
    if np.any(np.abs(ph[:, 2]) <= 1e-12):
        raise DegenerateWarp("a point maps to infinity")
    return ph[:, :2] / ph[:, 2:]


def reproject(p, d: float, ka: Intrinsics, kb: Intrinsics, t_ab: CameraPose) -> np.ndarray:
    if not d > 0:
        raise InvalidDepth(f"depth {d} is not positive")
    X = d * (ka.K_inv @ np.array([p[0], p[1], 1.0]))
    Xb = t_ab.R @ X + t_ab.t
    if Xb[2] <= 1e-9:
        raise BehindCamera("point lands behind camera B")
    return np.array([kb.fx * Xb[0] / Xb[2] + kb.cx, kb.fy * Xb[1] / Xb[2] + kb.cy])


def reproject_many(pts, depths, ka: Intrinsics, kb: Intrinsics, t_ab: CameraPose) -> np.ndarray:
    """Vectorised reprojection; invalid depth or points behind B give NaN rows."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    out = np.full((len(pts), 2), np.nan)
    ok = np.isfinite(d) & (d > 0)
    if not ok.any():
        return out
    X = d[ok, None] * (np.c_[pts[ok], np.ones(ok.sum())] @ ka.K_inv.T)
    Xb = X @ t_ab.R.T + t_ab.t
    front = Xb[:, 2] > 1e-9
    uv = np.full((len(Xb), 2), np.nan)
    z = np.where(front, Xb[:, 2], 1.0)
    uv[:, 0] = kb.fx * Xb[:, 0] / z + kb.cx
    uv[:, 1] = kb.fy * Xb[:, 1] / z + kb.cy
    uv[~front] = np.nan
    out[ok] = uv
    return out


def rotation_angle(r) -> float:
    r = np.asarray(r, dtype=np.float64)
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def translation_angle(t_est, t_gt, eps: float = EPS_T) -> float:
    a = np.asarray(t_est, dtype=np.float64)
    b = np.asarray(t_gt, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= eps or nb <= eps:
        raise ZeroTranslation("translation norm too small for an angle")
    c = np.clip(abs(a @ b) / (na * nb), 0.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def pose_error(est: CameraPose, gt: CameraPose) -> PoseError:
    rot = rotation_angle(est.R @ gt.R.T)
    trans = translation_angle(est.t, gt.t)
    return PoseError(rot, trans, max(rot, trans))


def auc(errors, thresholds) -> list[float]:
    """Normalised area under the empirical error CDF up to each threshold.

    Failed pairs are infinite errors. The CDF is a step function, so the
    integral is summed exactly over its steps.
    """
    e = np.sort(np.asarray(list(errors), dtype=np.float64))
    if e.size == 0:
        raise EmptyInput("no errors to aggregate")
    th = [float(t) for t in thresholds]
    if any(t <= 0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
        raise ValidationError("thresholds must be positive and ascending")
    n = e.size
    out = []
    for tau in th:
        k = np.searchsorted(e, tau, side="right")
        # F(t) = i/n on [e_(i), e_(i+1)); integrate up to tau
        edges = np.concatenate([e[:k], [tau]])
        widths = np.diff(edges)
        counts = np.arange(1, k + 1)
        out.append(float(np.sum(widths * counts) / (n * tau)))
    return out


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0.0]])


def essential_from_pose(pose: CameraPose) -> np.ndarray:
    n = np.linalg.norm(pose.t)
    if n <= EPS_T:
        raise ZeroTranslation("essential matrix undefined for zero translation")
    return skew(pose.t / n) @ pose.R


def rotation_from_axis_angle(axis, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    a = np.radians(angle_deg)
    K = skew(axis)
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
