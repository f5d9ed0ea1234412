"""SO(3) and SE(3) primitives.

Rotations are stored as 3x3 matrices.  Perturbations are applied on the
right everywhere: ``R ⊞ r = R @ exp_so3(r)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-7


def skew(v) -> np.ndarray:
    """Matrix such that ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    K = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta2) * (K @ K)
    )


def log_so3(R) -> np.ndarray:
    """Principal rotation vector of ``R`` (norm in ``[0, pi]``)."""
    R = np.asarray(R, dtype=float)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = 0.5 * np.linalg.norm(vee)
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(sin_theta, cos_theta)
    if theta < SMALL_ANGLE:
        # R ~ I + [w]x + [w]x^2/2, whose antisymmetric part is [w]x
        return 0.5 * vee
    if np.pi - theta < 1e-3:
        # axis from the symmetric part: (R + R^T)/2 = c I + (1 - c) a a^T
        B = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ vee < 0.0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * sin_theta)) * vee


def right_jacobian(w) -> np.ndarray:
    """Right Jacobian of SO(3): ``exp(w + d) ~ exp(w) exp(Jr(w) d)``."""
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    K = skew(w)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta2) * K
        + ((theta - np.sin(theta)) / (theta2 * theta)) * (K @ K)
    )


def right_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    K = skew(w)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    theta = np.sqrt(theta2)
    coef = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def rotation_angle(Ra, Rb) -> float:
    """Geodesic angle between two rotations."""
    return float(np.linalg.norm(log_so3(np.asarray(Ra).T @ np.asarray(Rb))))


def project_to_so3(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``T o p = R p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.array(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.array(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def apply(self, p) -> np.ndarray:
        """Transform a point (3,) or a stack of points (n, 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def boxplus(self, d) -> "Pose":
        d = np.asarray(d, dtype=float)
        return Pose(self.R @ exp_so3(d[:3]), self.t + d[3:6])

    def boxminus(self, other: "Pose") -> np.ndarray:
        return np.concatenate([log_so3(other.R.T @ self.R), self.t - other.t])

    def error_to(self, other: "Pose") -> tuple[float, float]:
        """(translation distance, rotation angle) between two poses."""
        return float(np.linalg.norm(self.t - other.t)), rotation_angle(self.R, other.R)

    def as_vector(self) -> np.ndarray:
        """[rotation vector, translation]."""
        return np.concatenate([log_so3(self.R), self.t])

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(exp_so3(v[:3]), v[3:6])

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy())


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion [w, x, y, z] with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def mean_rotation(rotations, iters: int = 10, tol: float = 1e-12) -> np.ndarray:
    """Karcher (log-mean) average of a list of rotations."""
    rotations = [np.asarray(R, dtype=float) for R in rotations]
    Rm = rotations[0]
    for _ in range(iters):
        d = np.mean([log_so3(Rm.T @ R) for R in rotations], axis=0)
        Rm = Rm @ exp_so3(d)
        if np.linalg.norm(d) < tol:
            break
    return Rm


def mean_pose(poses) -> Pose:
    poses = list(poses)
    return Pose(mean_rotation([p.R for p in poses]), np.mean([p.t for p in poses], axis=0))
