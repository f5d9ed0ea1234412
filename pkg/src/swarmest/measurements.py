"""Measurement models: point-to-plane, active and passive mutual observations,
and the LiDAR degeneration metric.

Jacobians are of the *predicted measurement* with respect to right
perturbations of the state (see :mod:`swarmest.state` for the layout).
Mutual-observation residuals are ``measured - predicted``; the point model
returns the signed point-to-plane distance (its measurement is zero).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, skew
from .state import EGO_DIM, POS, ROT, VEL, NavState


@dataclass(frozen=True)
class PlaneCorrespondence:
    point: np.ndarray  # body frame
    normal: np.ndarray  # global frame, unit
    anchor: np.ndarray  # global frame, a point on the plane

    def __post_init__(self):
        for name in ("point", "normal", "anchor"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))


@dataclass(frozen=True)
class PlaneBatch:
    """Array form of a list of correspondences, shape (n, 3) each."""

    points: np.ndarray
    normals: np.ndarray
    anchors: np.ndarray

    @classmethod
    def from_list(cls, corrs) -> "PlaneBatch":
        if isinstance(corrs, PlaneBatch):
            return corrs
        corrs = list(corrs)
        if not corrs:
            z = np.zeros((0, 3))
            return cls(z, z.copy(), z.copy())
        return cls(
            np.array([c.point for c in corrs]),
            np.array([c.normal for c in corrs]),
            np.array([c.anchor for c in corrs]),
        )

    def __len__(self) -> int:
        return len(self.points)

    def to_list(self) -> list[PlaneCorrespondence]:
        return [PlaneCorrespondence(p, u, q) for p, u, q in zip(self.points, self.normals, self.anchors)]


@dataclass(frozen=True)
class MutualObservation:
    kind: str  # "active" or "passive" from the consumer's point of view
    observer: int
    observed: int
    position: np.ndarray  # observed UAV in the observer's body frame
    stamp: float  # observer's scan-end time, observer's clock
    cov: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class TeammateStatePacket:
    sender: int
    stamp: float  # sender's clock
    pose: Pose  # sender body in sender's global frame
    velocity: np.ndarray
    pose_cov: np.ndarray  # 6x6, [rotation, position]
    extrinsics: dict = field(default_factory=dict)  # teammate id -> Pose (sender frame <- teammate frame)
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        object.__setattr__(self, "pose_cov", np.asarray(self.pose_cov, dtype=float).reshape(6, 6))

    @property
    def position_cov(self) -> np.ndarray:
        return self.pose_cov[3:6, 3:6]


@dataclass
class Residual:
    """One stacked measurement: ``r`` is measured minus predicted."""

    r: np.ndarray
    H_ego: np.ndarray  # (m, 18)
    H_ext: np.ndarray | None  # (m, 6) w.r.t. the extrinsic block, if any
    cov: np.ndarray  # (m, m) effective noise
    ext_id: int | None = None

    def full_jacobian(self, x: NavState) -> np.ndarray:
        H = np.zeros((len(self.r), x.dim))
        H[:, :EGO_DIM] = self.H_ego
        if self.ext_id is not None and self.ext_id in x.extrinsics:
            H[:, x.ext_slice(self.ext_id)] = self.H_ext
        return H


# ---------------------------------------------------------------- point-to-plane


def plane_rows(R, t, batch: PlaneBatch):
    """Signed distances and (n, 6) pose Jacobians ``[-u^T R [p]x, u^T]``."""
    world = batch.points @ R.T + t
    h = np.einsum("ij,ij->i", batch.normals, world - batch.anchors)
    uR = batch.normals @ R  # rows u^T R
    # (u^T R) [p]x = -(p x (R^T u))^T  =>  -u^T R [p]x = p x (R^T u)
    J = np.empty((len(batch), 6))
    J[:, :3] = np.cross(batch.points, uR)
    J[:, 3:] = batch.normals
    return h, J


def point_residual(x: NavState, c: PlaneCorrespondence, point_cov=None):
    """Return ``(distance, jacobian_row, effective_variance)`` for one point."""
    h, J6 = plane_rows(x.R, x.p, PlaneBatch.from_list([c]))
    J = np.zeros(x.dim)
    J[ROT] = J6[0, :3]
    J[POS] = J6[0, 3:]
    if point_cov is None:
        var = 0.0
    else:
        uR = c.normal @ x.R
        var = float(uR @ np.asarray(point_cov) @ uR)
    return float(h[0]), J, var


def degeneration_metric(x: NavState, correspondences) -> float:
    """Smallest singular value of the stacked pose Jacobian, rows scaled by 1/sqrt(n)."""
    batch = PlaneBatch.from_list(correspondences)
    n = len(batch)
    if n == 0:
        return 0.0
    _, J = plane_rows(x.R, x.p, batch)
    J = J / np.sqrt(n)
    s = np.linalg.svd(J, compute_uv=False)
    if len(s) < 6:
        return 0.0
    return float(s[-1])


# ---------------------------------------------------------------- mutual observations


def resolve_extrinsic(x: NavState, j: int, extrinsic=None):
    """Pose and (optional) covariance of teammate ``j``'s extrinsic.

    ``extrinsic`` may be a Pose or a ``(Pose, cov6)`` pair for blocks that live
    outside ``x`` (marginalized, treated as exogenous noise).
    """
    if extrinsic is not None:
        if isinstance(extrinsic, Pose):
            return extrinsic, None, False
        return extrinsic[0], np.asarray(extrinsic[1]), False
    if j in x.extrinsics:
        return x.extrinsics[j], None, True
    return None, None, False


def active_obs_residual(
    x: NavState,
    obs: MutualObservation,
    pkt: TeammateStatePacket,
    tau: float,
    *,
    extrinsic=None,
    obs_cov=None,
    compensate: bool = True,
):
    """Teammate position seen by the self LiDAR, predicted from its broadcast state.

    ``tau`` is the teammate's clock minus ours. Returns ``None`` when no
    extrinsic is known for the observed teammate.
    """
    j = obs.observed
    Te, Pe, in_state = resolve_extrinsic(x, j, extrinsic)
    if Te is None:
        return None
    # without compensation the raw stamps are trusted, i.e. the clocks are assumed aligned
    dt = obs.stamp - pkt.stamp + (tau if compensate else 0.0)
    p_comp = pkt.pose.t + pkt.velocity * dt
    M = x.R.T @ Te.R
    h = x.R.T @ (Te.R @ p_comp + Te.t - x.p)
    H_ego = np.zeros((3, EGO_DIM))
    H_ego[:, ROT] = skew(h)
    H_ego[:, POS] = -x.R.T
    H_ext = np.hstack([-M @ skew(p_comp), x.R.T])
    cov = (obs.cov if obs_cov is None else obs_cov) + M @ pkt.position_cov @ M.T
    if not in_state and Pe is not None:
        cov = cov + H_ext @ Pe @ H_ext.T
    return Residual(obs.position - h, H_ego, H_ext, cov, j if in_state else None)


def passive_obs_residual(
    x: NavState,
    obs: MutualObservation,
    pkt: TeammateStatePacket,
    tau: float,
    t_ego: float,
    *,
    extrinsic=None,
    obs_cov=None,
    compensate: bool = True,
):
    """Our own position as seen by teammate ``obs.observer`` in its body frame.

    ``pkt`` is the observer's ego state at (or near) the observation time and
    ``t_ego`` the time of ``x`` on our clock.
    """
    j = obs.observer
    Te, Pe, in_state = resolve_extrinsic(x, j, extrinsic)
    if Te is None:
        return None
    dt = obs.stamp - t_ego - (tau if compensate else 0.0)
    p_comp = x.p + x.v * dt
    m = Te.R.T @ (p_comp - Te.t)  # in teammate global frame
    Rj, tj = pkt.pose.R, pkt.pose.t
    h = Rj.T @ (m - tj)
    A = Rj.T @ Te.R.T
    H_ego = np.zeros((3, EGO_DIM))
    H_ego[:, POS] = A
    H_ego[:, VEL] = A * dt
    H_ext = np.hstack([Rj.T @ skew(m), -A])
    G = np.hstack([skew(h), -Rj.T])  # w.r.t. teammate pose noise
    cov = (obs.cov if obs_cov is None else obs_cov) + G @ pkt.pose_cov @ G.T
    if not in_state and Pe is not None:
        cov = cov + H_ext @ Pe @ H_ext.T
    return Residual(obs.position - h, H_ego, H_ext, cov, j if in_state else None)
