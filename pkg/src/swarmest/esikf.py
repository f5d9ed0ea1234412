"""Error-state iterated Kalman filter on the swarm state manifold."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .geometry import exp_so3, right_jacobian, skew
from .measurements import (
    PlaneBatch,
    active_obs_residual,
    passive_obs_residual,
    plane_rows,
)
from .state import BA, BG, EGO_DIM, GRAV, POS, ROT, VEL, NavState, boxminus, boxplus


@dataclass(frozen=True)
class ImuSample:
    stamp: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time IMU noise densities plus measurement noises."""

    gyro_noise: float = 2e-3  # rad/s/sqrt(Hz)
    accel_noise: float = 2e-2  # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-4  # rad/s^2/sqrt(Hz)
    accel_bias_rw: float = 1e-3  # m/s^3/sqrt(Hz)
    point_sigma: float = 0.02  # m
    active_cov: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(3))
    passive_cov: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(3))

    def __post_init__(self):
        for name in ("gyro_noise", "accel_noise", "gyro_bias_rw", "accel_bias_rw", "point_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        object.__setattr__(self, "active_cov", np.asarray(self.active_cov, dtype=float).reshape(3, 3))
        object.__setattr__(self, "passive_cov", np.asarray(self.passive_cov, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class MutualTerm:
    """A mutual observation paired with the teammate packet it is evaluated against."""

    obs: object  # MutualObservation
    packet: object  # TeammateStatePacket
    tau: float  # teammate clock minus self clock


@dataclass
class MeasurementBundle:
    stamp: float
    planes: object = field(default_factory=list)  # list[PlaneCorrespondence] or PlaneBatch
    active: list = field(default_factory=list)  # list[MutualTerm]
    passive: list = field(default_factory=list)  # list[MutualTerm]

    def is_empty(self) -> bool:
        return len(self.planes) == 0 and not self.active and not self.passive


@dataclass
class UpdateResult:
    x: NavState
    P: np.ndarray
    updated: bool
    iterations: int = 0
    costs: list = field(default_factory=list)
    rows: int = 0
    flagged: bool = False  # cost increased on more than one iteration


class NonFiniteInput(ValueError):
    pass


# ---------------------------------------------------------------- prediction


def transition_jacobians(x: NavState, imu: ImuSample, dt: float):
    """Error-state Jacobians (F_x, F_w) of the ego block, each 18 x {18, 12}."""
    w = imu.gyro - x.bg
    a = imu.accel - x.ba
    phi = w * dt
    Jr = right_jacobian(phi)
    Ra = x.R @ skew(a)
    eye = np.eye(3)
    F = np.eye(EGO_DIM)
    F[ROT, ROT] = exp_so3(-phi)
    F[ROT, BG] = -Jr * dt
    F[POS, VEL] = eye * dt
    F[POS, ROT] = -0.5 * Ra * dt**2
    F[POS, BA] = -0.5 * x.R * dt**2
    F[POS, GRAV] = 0.5 * eye * dt**2
    F[VEL, ROT] = -Ra * dt
    F[VEL, BA] = -x.R * dt
    F[VEL, GRAV] = eye * dt
    Fw = np.zeros((EGO_DIM, 12))
    Fw[ROT, 0:3] = -Jr * dt
    Fw[POS, 3:6] = -0.5 * x.R * dt**2
    Fw[VEL, 3:6] = -x.R * dt
    Fw[BG, 6:9] = eye * dt
    Fw[BA, 9:12] = eye * dt
    return F, Fw


def propagate_mean(x: NavState, imu: ImuSample, dt: float) -> NavState:
    """Discrete kinematics with process noise set to zero; extrinsics are constant."""
    w = imu.gyro - x.bg
    acc = x.R @ (imu.accel - x.ba) + x.g
    return NavState(
        R=x.R @ exp_so3(w * dt),
        p=x.p + x.v * dt + 0.5 * acc * dt**2,
        v=x.v + acc * dt,
        bg=x.bg,
        ba=x.ba,
        g=x.g,
        extrinsics=x.extrinsics,
    )


def process_noise(q: NoiseParams, dt: float) -> np.ndarray:
    """Per-sample covariance of w for noise entering as dt * f(x, u, w)."""
    return np.diag(
        np.repeat([q.gyro_noise**2, q.accel_noise**2, q.gyro_bias_rw**2, q.accel_bias_rw**2], 3) / dt
    )


def predict(x: NavState, P, imu: ImuSample, dt: float, q: NoiseParams):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(imu.gyro)) and np.all(np.isfinite(imu.accel))):
        raise NonFiniteInput("non-finite IMU sample rejected")
    F, Fw = transition_jacobians(x, imu, dt)
    x_new = propagate_mean(x, imu, dt)
    P = np.array(P, dtype=float, copy=True)
    # extrinsic rows of F are identity: only the ego rows/cols change
    P[:EGO_DIM, :] = F @ P[:EGO_DIM, :]
    P[:, :EGO_DIM] = P[:, :EGO_DIM] @ F.T
    P[:EGO_DIM, :EGO_DIM] += Fw @ process_noise(q, dt) @ Fw.T
    return x_new, P


# ---------------------------------------------------------------- update


def _tangent_jacobian(x: NavState, e: np.ndarray) -> np.ndarray:
    """d(x (+) d (-) x_prior)/dd inverted: block Jr(e_rot) on every rotation block."""
    Jinv = np.eye(x.dim)
    Jinv[ROT, ROT] = right_jacobian(e[ROT])
    for j in x.ext_ids:
        s = x.ext_index(j)
        Jinv[s : s + 3, s : s + 3] = right_jacobian(e[s : s + 3])
    return Jinv


def stack_measurements(
    x: NavState,
    bundle: MeasurementBundle,
    q: NoiseParams,
    *,
    exogenous: dict | None = None,
    mutual_scale: float = 1.0,
    compensate: bool = True,
):
    """Whitened residual vector and Jacobian for all measurements at ``x``."""
    exogenous = exogenous or {}
    r_parts, H_parts = [], []
    batch = PlaneBatch.from_list(bundle.planes)
    if len(batch):
        h, J6 = plane_rows(x.R, x.p, batch)
        H = np.zeros((len(batch), x.dim))
        H[:, ROT] = J6[:, :3]
        H[:, POS] = J6[:, 3:]
        sigma = q.point_sigma if q.point_sigma > 0 else 1e-9
        r_parts.append(-h / sigma)
        H_parts.append(H / sigma)
    for kind, terms in (("active", bundle.active), ("passive", bundle.passive)):
        for term in terms:
            if kind == "active":
                j = term.obs.observed
                res = active_obs_residual(
                    x, term.obs, term.packet, term.tau,
                    extrinsic=None if j in x.extrinsics else exogenous.get(j),
                    obs_cov=q.active_cov * mutual_scale,
                    compensate=compensate,
                )
            else:
                j = term.obs.observer
                res = passive_obs_residual(
                    x, term.obs, term.packet, term.tau, bundle.stamp,
                    extrinsic=None if j in x.extrinsics else exogenous.get(j),
                    obs_cov=q.passive_cov * mutual_scale,
                    compensate=compensate,
                )
            if res is None:
                continue
            L = np.linalg.cholesky(0.5 * (res.cov + res.cov.T))
            r_parts.append(solve_triangular(L, res.r, lower=True))
            H_parts.append(solve_triangular(L, res.full_jacobian(x), lower=True))
    if not r_parts:
        return np.zeros(0), np.zeros((0, x.dim))
    return np.concatenate(r_parts), np.vstack(H_parts)


def iterated_update(
    x_prior: NavState,
    P_prior,
    bundle: MeasurementBundle,
    q: NoiseParams,
    max_iters: int = 5,
    tol: float = 1e-6,
    *,
    exogenous: dict | None = None,
    mutual_scale: float = 1.0,
    compensate: bool = True,
) -> UpdateResult:
    """Iterated error-state update (Gauss-Newton on the MAP cost).

    ``exogenous`` maps teammate IDs that are not in ``x_prior`` to
    ``(Pose, 6x6 cov)``; their uncertainty is folded into the measurement noise.
    """
    P_prior = np.asarray(P_prior, dtype=float)
    if bundle.is_empty():
        return UpdateResult(x_prior, P_prior.copy(), updated=False)
    kw = dict(exogenous=exogenous, mutual_scale=mutual_scale, compensate=compensate)
    x = x_prior
    costs = []
    increases = 0
    n = x_prior.dim
    P_post = P_prior.copy()
    it = 0
    for it in range(1, max_iters + 1):
        r, H = stack_measurements(x, bundle, q, **kw)
        if len(r) == 0:
            return UpdateResult(x_prior, P_prior.copy(), updated=False)
        e = boxminus(x, x_prior)
        Jinv = _tangent_jacobian(x, e)
        P_lin = Jinv @ P_prior @ Jinv.T
        c, low = cho_factor(0.5 * (P_lin + P_lin.T))
        prior_cost = float(e @ cho_solve(cho_factor(P_prior), e))
        costs.append(prior_cost + float(r @ r))
        if len(costs) > 1 and costs[-1] > costs[-2] * (1 + 1e-12) + 1e-12:
            increases += 1
        info = cho_solve((c, low), np.eye(n)) + H.T @ H
        info = 0.5 * (info + info.T)
        ci = cho_factor(info)
        d_prior = -Jinv @ e
        delta = d_prior + cho_solve(ci, H.T @ (r + H @ (Jinv @ e)))
        P_post = cho_solve(ci, np.eye(n))
        x = boxplus(x, delta)
        if np.linalg.norm(delta) < tol:
            break
    P_post = 0.5 * (P_post + P_post.T)
    return UpdateResult(x, P_post, updated=True, iterations=it, costs=costs, rows=len(r), flagged=increases > 1)
