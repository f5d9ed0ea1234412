"""Ground truth generation: trajectories, IMU, plane correspondences and markers.

World coordinates are z-up with gravity ``[0, 0, -9.81]``.  Each UAV's global
frame ``G_i`` is its true body pose at the moment it starts estimating.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .esikf import ImuSample, NoiseParams
from .geometry import Pose, exp_so3, log_so3, rot_z
from .initialization import MarkerReturn
from .measurements import PlaneBatch
from .state import GRAVITY


# ---------------------------------------------------------------- world


@dataclass(frozen=True)
class Patch:
    """Bounded rectangle on an infinite plane ``normal . x = normal . center``."""

    center: np.ndarray
    normal: np.ndarray
    axis_u: np.ndarray
    half_u: float
    half_v: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if not nn > 0:
            raise ValueError("patch normal must be nonzero")
        n = n / nn
        u = np.asarray(self.axis_u, dtype=float).reshape(3)
        u = u - (u @ n) * n
        u /= np.linalg.norm(u)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "axis_u", u)

    @property
    def axis_v(self) -> np.ndarray:
        return np.cross(self.normal, self.axis_u)

    @property
    def offset(self) -> float:
        return float(self.normal @ self.center)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(3))

    def faces(self) -> list[Patch]:
        c = 0.5 * (self.lo + self.hi)
        h = 0.5 * (self.hi - self.lo)
        out = []
        for ax in range(3):
            u_ax, v_ax = (ax + 1) % 3, (ax + 2) % 3
            for sgn in (-1.0, 1.0):
                n = np.zeros(3)
                n[ax] = sgn
                u = np.zeros(3)
                u[u_ax] = 1.0
                center = c.copy()
                center[ax] += sgn * h[ax]
                half_u, half_v = h[u_ax], h[v_ax]
                p = Patch(center, n, u, half_u, half_v)
                # axis_v = n x u may point along -v_ax; extents are symmetric either way
                out.append(p)
        return out


@dataclass
class World:
    patches: list = field(default_factory=list)
    occluders: list = field(default_factory=list)  # list[Box]
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self._pack()

    def _pack(self):
        ps = self.all_patches()
        self._C = np.array([p.center for p in ps]).reshape(-1, 3)
        self._N = np.array([p.normal for p in ps]).reshape(-1, 3)
        self._U = np.array([p.axis_u for p in ps]).reshape(-1, 3)
        self._V = np.array([p.axis_v for p in ps]).reshape(-1, 3)
        self._HU = np.array([p.half_u for p in ps])
        self._HV = np.array([p.half_v for p in ps])

    def all_patches(self) -> list[Patch]:
        out = list(self.patches)
        for b in self.occluders:
            out.extend(b.faces())
        return out

    def add(self, *, patches=(), occluders=()):
        self.patches.extend(patches)
        self.occluders.extend(occluders)
        self._pack()

    def raycast(self, origin, dirs, max_range: float):
        """Nearest patch hit per ray: (distance, patch index); distance inf on miss."""
        o = np.asarray(origin, dtype=float)
        d = np.asarray(dirs, dtype=float).reshape(-1, 3)
        if len(self._C) == 0:
            return np.full(len(d), np.inf), np.full(len(d), -1)
        denom = d @ self._N.T  # (r, p)
        num = np.einsum("pj,pj->p", self._C - o, self._N)  # (p,)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num[None, :] / denom
            valid = (np.abs(denom) > 1e-12) & (t > 1e-6) & (t <= max_range)
            t = np.where(valid, t, 0.0)
        hit = o[None, None, :] + t[..., None] * d[:, None, :]  # (r, p, 3)
        rel = hit - self._C[None]
        cu = np.abs(np.einsum("rpj,pj->rp", rel, self._U))
        cv = np.abs(np.einsum("rpj,pj->rp", rel, self._V))
        valid &= (cu <= self._HU[None] + 1e-9) & (cv <= self._HV[None] + 1e-9)
        t = np.where(valid, t, np.inf)
        idx = np.argmin(t, axis=1)
        dist = t[np.arange(len(d)), idx]
        idx = np.where(np.isfinite(dist), idx, -1)
        return dist, idx

    def segment_blocked(self, a, b) -> bool:
        return bool(segments_blocked(np.asarray(a)[None], np.asarray(b)[None], self.occluders)[0])


def segments_blocked(a, b, boxes, margin: float = 1e-6) -> np.ndarray:
    """Slab test: True where segment a->b passes through any box."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    out = np.zeros(len(a), dtype=bool)
    if not boxes:
        return out
    lo = np.array([bx.lo for bx in boxes])
    hi = np.array([bx.hi for bx in boxes])
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo[None] - a[:, None]) * inv[:, None]
        t2 = (hi[None] - a[:, None]) * inv[:, None]
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # parallel rays outside a slab never enter it
    par = d[:, None, :] == 0
    inside = (a[:, None, :] >= lo[None]) & (a[:, None, :] <= hi[None])
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    enter = np.max(tmin, axis=2)
    leave = np.min(tmax, axis=2)
    hit = (enter <= leave) & (leave > margin) & (enter < 1.0 - margin)
    return np.any(hit, axis=1)


def room(size=(20.0, 20.0, 6.0), center=(0.0, 0.0, 0.0)) -> World:
    """Closed box: floor at ``center.z``, four walls and a ceiling."""
    sx, sy, sz = size
    c = np.asarray(center, dtype=float)
    mid = c + [0.0, 0.0, sz / 2]
    pats = [
        Patch(c, [0, 0, 1], [1, 0, 0], sx / 2, sy / 2),
        Patch(c + [0, 0, sz], [0, 0, -1], [1, 0, 0], sx / 2, sy / 2),
        Patch(mid + [sx / 2, 0, 0], [-1, 0, 0], [0, 1, 0], sy / 2, sz / 2),
        Patch(mid - [sx / 2, 0, 0], [1, 0, 0], [0, 1, 0], sy / 2, sz / 2),
        Patch(mid + [0, sy / 2, 0], [0, -1, 0], [1, 0, 0], sx / 2, sz / 2),
        Patch(mid - [0, sy / 2, 0], [0, 1, 0], [1, 0, 0], sx / 2, sz / 2),
    ]
    return World(pats)


def corridor(length=120.0, width=4.0, height=3.0, hall=None) -> World:
    """Straight corridor along +x from x=0, optionally opening into a hall at x<0.

    ``hall`` = dict(length, width, height, pillars=[(x, y), ...]) adds a
    feature-rich room whose back wall and pillars constrain all axes.
    """
    hw, L = width / 2, length
    mid_x = L / 2
    pats = [
        Patch([mid_x, 0, 0], [0, 0, 1], [1, 0, 0], L / 2, hw),
        Patch([mid_x, 0, height], [0, 0, -1], [1, 0, 0], L / 2, hw),
        Patch([mid_x, hw, height / 2], [0, -1, 0], [1, 0, 0], L / 2, height / 2),
        Patch([mid_x, -hw, height / 2], [0, 1, 0], [1, 0, 0], L / 2, height / 2),
    ]
    boxes = []
    if hall is not None:
        hl, hwid, hh = hall.get("length", 15.0), hall.get("width", 16.0), hall.get("height", 6.0)
        cx = -hl / 2
        pats += [
            Patch([cx, 0, 0], [0, 0, 1], [1, 0, 0], hl / 2, hwid / 2),
            Patch([cx, 0, hh], [0, 0, -1], [1, 0, 0], hl / 2, hwid / 2),
            Patch([-hl, 0, hh / 2], [1, 0, 0], [0, 1, 0], hwid / 2, hh / 2),
            Patch([cx, hwid / 2, hh / 2], [0, -1, 0], [1, 0, 0], hl / 2, hh / 2),
            Patch([cx, -hwid / 2, hh / 2], [0, 1, 0], [1, 0, 0], hl / 2, hh / 2),
        ]
        # front wall of the hall around the corridor mouth
        side = (hwid / 2 - hw) / 2
        pats += [
            Patch([0, hw + side, hh / 2], [-1, 0, 0], [0, 1, 0], side, hh / 2),
            Patch([0, -hw - side, hh / 2], [-1, 0, 0], [0, 1, 0], side, hh / 2),
        ]
        for px, py in hall.get("pillars", []):
            boxes.append(Box([px - 0.4, py - 0.4, 0.0], [px + 0.4, py + 0.4, hh]))
    return World(pats, boxes)


def forest(extent=(60.0, 40.0), n_trees: int = 40, tree_size: float = 0.6, height: float = 8.0,
           seed: int = 0, keep_clear=(), clear_radius: float = 1.5) -> World:
    """Ground plane plus randomly placed box trunks (occluders)."""
    rng = np.random.default_rng(seed)
    ex, ey = extent
    ground = Patch([0, 0, 0], [0, 0, 1], [1, 0, 0], ex / 2 + 20, ey / 2 + 20)
    clear = np.asarray(keep_clear, dtype=float).reshape(-1, 3)
    boxes = []
    tries = 0
    while len(boxes) < n_trees and tries < 50 * n_trees:
        tries += 1
        xy = rng.uniform([-ex / 2, -ey / 2], [ex / 2, ey / 2])
        if len(clear) and np.min(np.linalg.norm(clear[:, :2] - xy, axis=1)) < clear_radius + tree_size:
            continue
        h = tree_size / 2
        boxes.append(Box([xy[0] - h, xy[1] - h, 0.0], [xy[0] + h, xy[1] + h, height]))
    return World([ground], boxes)


# ---------------------------------------------------------------- trajectories


def figure8(scale: float, period: float, height: float, t: float):
    """Lissajous figure-8 with yaw along the path: (pose, velocity, acceleration)."""
    if not period > 0:
        raise ValueError("period must be positive")
    w = 2 * np.pi / period
    A = scale
    p = np.array([A * np.sin(w * t), 0.5 * A * np.sin(2 * w * t), height])
    v = np.array([A * w * np.cos(w * t), A * w * np.cos(2 * w * t), 0.0])
    a = np.array([-A * w**2 * np.sin(w * t), -2 * A * w**2 * np.sin(2 * w * t), 0.0])
    yaw = np.arctan2(v[1], v[0])
    return Pose(rot_z(yaw), p), v, a


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u**2)


def _smoothstep_int(u):
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (2.5 - 3 * u + u**2)


def _smoothstep_d(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30 * u**2 * (1 - u) ** 2, 0.0)


class Trajectory:
    """Truth path in world coordinates; ``state(t)`` returns (R, p, v, a)."""

    def state(self, t: float):
        raise NotImplementedError

    def pose(self, t: float) -> Pose:
        R, p, _, _ = self.state(t)
        return Pose(R, p)

    def path_length(self, t0: float, t1: float, dt: float = 0.01) -> float:
        if t1 <= t0:
            return 0.0
        ts = np.arange(t0, t1, dt)
        return float(sum(np.linalg.norm(self.state(t)[2]) for t in ts) * dt)


@dataclass
class Hover(Trajectory):
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    def state(self, t):
        return rot_z(self.yaw), self.position.copy(), np.zeros(3), np.zeros(3)


@dataclass
class Figure8(Trajectory):
    """Figure-8 started at ``start``, ``loops`` laps, smooth speed ramps at both ends.

    Before start and after the last lap the UAV hovers at the crossing point.
    """

    center: np.ndarray
    scale: float = 3.0
    duration: float = 20.0
    start: float = 0.0
    loops: int = 1
    ramp: float = 2.0
    yaw_offset: float = 0.0
    tangent_yaw: bool = True

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if not self.duration > 2 * self.ramp >= 0:
            raise ValueError("duration must exceed twice the ramp time")
        self.omega = 2 * np.pi * self.loops / (self.duration - self.ramp)

    def _phase(self, t):
        tau = t - self.start
        D, r, w = self.duration, self.ramp, self.omega
        if tau <= 0:
            return 0.0, 0.0, 0.0
        if tau >= D:
            return 2 * np.pi * self.loops, 0.0, 0.0
        if r == 0:
            return w * tau, w, 0.0
        # speed factor: ramp up on [0, r], ramp down on [D - r, D]
        up = tau / r
        dn = (tau - (D - r)) / r
        th = w * (r * _smoothstep_int(up) + max(tau - r, 0.0)) if tau < D - r else None
        if th is None:
            th = w * (r * 0.5 + (D - 2 * r) + r * (dn - _smoothstep_int(dn)))
            rate = w * (1 - _smoothstep(dn))
            acc = -w * _smoothstep_d(dn) / r
        elif tau < r:
            rate = w * _smoothstep(up)
            acc = w * _smoothstep_d(up) / r
        else:
            rate, acc = w, 0.0
        return float(th), float(rate), float(acc)

    def state(self, t):
        th, rate, acc = self._phase(t)
        A = self.scale
        f = np.array([A * np.sin(th), 0.5 * A * np.sin(2 * th), 0.0])
        df = np.array([A * np.cos(th), A * np.cos(2 * th), 0.0])
        ddf = np.array([-A * np.sin(th), -2 * A * np.sin(2 * th), 0.0])
        p = self.center + f
        v = df * rate
        a = ddf * rate**2 + df * acc
        yaw = self.yaw_offset + (np.arctan2(df[1], df[0]) if self.tangent_yaw else 0.0)
        return rot_z(yaw), p, v, a

    def lap_length(self) -> float:
        th = np.linspace(0, 2 * np.pi, 4001)
        A = self.scale
        speed = np.hypot(A * np.cos(th), A * np.cos(2 * th))
        trap = getattr(np, "trapezoid", None) or np.trapz
        return float(trap(speed, th))


@dataclass
class Waypoints(Trajectory):
    """Rest-to-rest minimum-jerk segments through timed waypoints; fixed yaw."""

    times: list
    points: list
    yaw: float = 0.0

    def __post_init__(self):
        self.times = [float(t) for t in self.times]
        self.points = [np.asarray(p, dtype=float).reshape(3) for p in self.points]
        if len(self.times) != len(self.points) or len(self.times) < 1:
            raise ValueError("waypoint times and points must align")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("waypoint times must increase")

    def state(self, t):
        R = rot_z(self.yaw)
        ts, ps = self.times, self.points
        if t <= ts[0]:
            return R, ps[0].copy(), np.zeros(3), np.zeros(3)
        if t >= ts[-1]:
            return R, ps[-1].copy(), np.zeros(3), np.zeros(3)
        k = int(np.searchsorted(ts, t, side="right")) - 1
        T = ts[k + 1] - ts[k]
        u = (t - ts[k]) / T
        d = ps[k + 1] - ps[k]
        s = _smoothstep(u)
        ds = _smoothstep_d(u) / T
        dds = (60 * u - 180 * u**2 + 120 * u**3) / T**2
        return R, ps[k] + s * d, ds * d, dds * d


@dataclass
class Lissajous(Trajectory):
    """Sinusoidal motion about a (possibly drifting) center with oscillating yaw."""

    center: np.ndarray
    amplitude: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 0.5]))
    frequency: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.07, 0.1]))  # Hz
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    yaw_amplitude: float = 0.0
    yaw_frequency: float = 0.05

    def __post_init__(self):
        for name in ("center", "amplitude", "frequency", "phase", "drift"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def state(self, t):
        w = 2 * np.pi * self.frequency
        arg = w * t + self.phase
        p = self.center + self.drift * t + self.amplitude * np.sin(arg)
        v = self.drift + self.amplitude * w * np.cos(arg)
        a = -self.amplitude * w**2 * np.sin(arg)
        wy = 2 * np.pi * self.yaw_frequency
        yaw = self.yaw + self.yaw_amplitude * np.sin(wy * t)
        return rot_z(yaw), p, v, a


@dataclass
class TruthTrajectory:
    """A UAV's truth: path, clock offset (local = true + offset), frame anchor time."""

    path: Trajectory
    clock_offset: float = 0.0
    frame_time: float = 0.0

    @property
    def frame(self) -> Pose:
        """World <- G_i."""
        return self.path.pose(self.frame_time)

    def pose_in_frame(self, t: float) -> Pose:
        return self.frame.inverse() @ self.path.pose(t)

    def local(self, t_true: float) -> float:
        return t_true + self.clock_offset


# ---------------------------------------------------------------- sensors


@dataclass(frozen=True)
class SensorRig:
    scan_rate: float = 10.0
    imu_rate: float = 200.0
    fov_azimuth: tuple = (-180.0, 180.0)
    fov_elevation: tuple = (-35.0, 52.0)
    max_range: float = 30.0
    points_per_scan: int = 120
    point_sigma: float = 0.0  # simulated range noise along the plane normal
    marker_range: float = 40.0
    marker_sigma: float = 0.05
    marker_reflectivity: float = 250.0
    marker_points: int = 6
    marker_spread: float = 0.08
    clutter_points: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.imu_rate < self.scan_rate:
            raise ValueError("IMU rate must be at least the scan rate")
        if self.scan_rate <= 0 or self.points_per_scan < 0:
            raise ValueError("invalid rig rates")

    def in_fov(self, dirs_body) -> np.ndarray:
        d = np.asarray(dirs_body, dtype=float).reshape(-1, 3)
        az = np.degrees(np.arctan2(d[:, 1], d[:, 0]))
        el = np.degrees(np.arctan2(d[:, 2], np.hypot(d[:, 0], d[:, 1])))
        a0, a1 = self.fov_azimuth
        e0, e1 = self.fov_elevation
        return (az >= a0) & (az <= a1) & (el >= e0) & (el <= e1)


def sample_imu(traj: Trajectory, t: float, noise: NoiseParams | None = None, biases=None,
               rng: np.random.Generator | None = None, dt: float | None = None,
               gravity=GRAVITY) -> ImuSample:
    """IMU reading at ``t``.

    With ``dt`` the reading is the interval average over ``[t, t + dt]`` that
    reproduces the true rotation and velocity increments under the filter's
    discrete kinematics; without it, the instantaneous values.  Noise is drawn
    from the densities in ``noise`` (std = density / sqrt(dt)).
    """
    R, _, v, a = traj.state(t)
    g = np.asarray(gravity, dtype=float)
    if dt is None:
        h = 1e-5
        R1 = traj.state(t + h)[0]
        R0 = traj.state(t - h)[0]
        omega = log_so3(R0.T @ R1) / (2 * h)
        accel = R.T @ (a - g)
    else:
        R1, _, v1, _ = traj.state(t + dt)
        omega = log_so3(R.T @ R1) / dt
        accel = R.T @ ((v1 - v) / dt - g)
    if biases is not None:
        bg, ba = biases
        omega = omega + np.asarray(bg, dtype=float)
        accel = accel + np.asarray(ba, dtype=float)
    if noise is not None and rng is not None:
        step = dt if dt is not None else 1.0
        omega = omega + noise.gyro_noise / np.sqrt(step) * rng.standard_normal(3)
        accel = accel + noise.accel_noise / np.sqrt(step) * rng.standard_normal(3)
    return ImuSample(t, omega, accel)


def sample_planes(world: World, true_pose: Pose, rig: SensorRig, rng: np.random.Generator,
                  frame: Pose | None = None, sigma: float | None = None) -> PlaneBatch:
    """Simulated plane correspondences for a body at ``true_pose`` (world frame).

    Normals and anchors are expressed in ``frame`` (world <- G_i), default world.
    """
    n = rig.points_per_scan
    sigma = rig.point_sigma if sigma is None else sigma
    az = np.radians(rng.uniform(*rig.fov_azimuth, size=n))
    el = np.radians(rng.uniform(*rig.fov_elevation, size=n))
    dirs_b = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    dirs_w = dirs_b @ true_pose.R.T
    dist, idx = world.raycast(true_pose.t, dirs_w, rig.max_range)
    keep = idx >= 0
    noise = sigma * rng.standard_normal(n) if sigma > 0 else np.zeros(n)
    if not np.any(keep):
        z = np.zeros((0, 3))
        return PlaneBatch(z, z.copy(), z.copy())
    hit = true_pose.t + dist[keep, None] * dirs_w[keep]
    normals = world._N[idx[keep]]
    anchors = world._C[idx[keep]]
    hit = hit + noise[keep, None] * normals
    pts_b = (hit - true_pose.t) @ true_pose.R
    if frame is not None:
        normals = normals @ frame.R  # R^T n per row
        anchors = (anchors - frame.t) @ frame.R
    return PlaneBatch(pts_b, normals, anchors)


def visible_teammates(observer_pose: Pose, positions: dict, rig: SensorRig, occluders) -> list:
    ids = sorted(positions)
    if not ids:
        return []
    P = np.array([positions[j] for j in ids], dtype=float)
    rel_b = (P - observer_pose.t) @ observer_pose.R
    rng_ok = np.linalg.norm(rel_b, axis=1) <= rig.marker_range
    fov_ok = rig.in_fov(rel_b)
    blocked = segments_blocked(np.repeat(observer_pose.t[None], len(ids), axis=0), P, occluders)
    return [j for j, ok in zip(ids, rng_ok & fov_ok & ~blocked) if ok]


def sample_markers(observer_pose: Pose, teammate_positions: dict, rig: SensorRig, occluders,
                   rng: np.random.Generator, sigma: float | None = None) -> list:
    """``[(teammate id, noisy centroid in observer body frame), ...]`` for visible teammates."""
    sigma = rig.marker_sigma if sigma is None else sigma
    out = []
    for j in visible_teammates(observer_pose, teammate_positions, rig, occluders):
        c = observer_pose.R.T @ (np.asarray(teammate_positions[j], dtype=float) - observer_pose.t)
        if sigma > 0:
            c = c + sigma * rng.standard_normal(3)
        out.append((j, c))
    return out


def marker_returns(markers, rig: SensorRig, rng: np.random.Generator) -> list[MarkerReturn]:
    """Expand centroids into reflective points (symmetric about the centroid) plus dim clutter."""
    out = []
    k = rig.marker_points
    s = rig.marker_spread
    base = np.vstack([np.eye(3), -np.eye(3)]) * s
    pattern = np.vstack([base] * (k // 6 + 1))[: max(k - k % 2, 2)]
    pattern = pattern - pattern.mean(axis=0)
    for _, c in markers:
        for q in pattern:
            out.append(MarkerReturn(c + q, min(255.0, rig.marker_reflectivity + rng.uniform(0, 5))))
    for _ in range(rig.clutter_points):
        p = rng.uniform([-10, -10, -2], [10, 10, 3])
        out.append(MarkerReturn(p, rng.uniform(0, 120)))
    return out
