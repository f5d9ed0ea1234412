"""Teammate detection, identification and global-extrinsic calibration.

Covers the marker pipeline (reflectivity filtering, Euclidean clustering,
constant-velocity temporary tracking), the excitation gate, closed-form
trajectory matching, and the extrinsic pose graph shared across the swarm.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import Pose, exp_so3, log_so3, mean_pose, right_jacobian_inv, skew


@dataclass(frozen=True)
class MarkerReturn:
    point: np.ndarray  # body frame
    reflectivity: float

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        if not 0.0 <= self.reflectivity <= 255.0:
            raise ValueError("reflectivity must lie in [0, 255]")


def reflectivity_filter(points, threshold: float) -> list:
    """Keep returns brighter than ``threshold``, preserving order."""
    return [m for m in points if m.reflectivity > threshold]


@dataclass
class Cluster:
    centroid: np.ndarray
    extent: float  # largest side of the axis-aligned bounding box
    size: int
    indices: np.ndarray


def euclidean_cluster(points, radius: float, min_size: int = 1, max_extent: float = np.inf) -> list[Cluster]:
    """Connected components under ``|a - b| <= radius``; small or oversized clusters dropped."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.array([m.point if isinstance(m, MarkerReturn) else m for m in points], dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    clusters = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if len(idx) < min_size:
            continue
        sub = pts[idx]
        extent = float(np.max(sub.max(axis=0) - sub.min(axis=0)))
        if extent > max_extent:
            continue
        clusters.append(Cluster(sub.mean(axis=0), extent, len(idx), idx))
    return clusters


# ---------------------------------------------------------------- temporary tracking


@dataclass
class TemporaryTracker:
    """Constant-velocity Kalman tracker of an unidentified object in the self global frame."""

    id: int
    x: np.ndarray  # [position, velocity]
    P: np.ndarray
    window: int = 100
    buffer: deque = field(default=None)
    misses: int = 0
    retired: bool = False
    accel_sigma: float = 1.0
    meas_sigma: float = 0.05

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(6)
        self.P = np.asarray(self.P, dtype=float).reshape(6, 6)
        if self.buffer is None:
            self.buffer = deque(maxlen=self.window)

    @classmethod
    def start(cls, id: int, stamp: float, position, **kw) -> "TemporaryTracker":
        P = np.diag([kw.get("meas_sigma", 0.05) ** 2] * 3 + [1.0] * 3)
        tr = cls(id, np.concatenate([position, np.zeros(3)]), P, **kw)
        tr.buffer.append((stamp, np.asarray(position, dtype=float)))
        return tr

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:]

    def trajectory(self):
        """(stamps, positions) of the sliding window."""
        if not self.buffer:
            return np.zeros(0), np.zeros((0, 3))
        t, p = zip(*self.buffer)
        return np.array(t), np.array(p)


def tracker_step(
    tr: TemporaryTracker,
    dt: float,
    measurement=None,
    stamp: float | None = None,
    gate: float = 0.5,
    max_misses: int = 10,
) -> TemporaryTracker:
    """Predict by ``dt`` and fuse ``measurement`` if it lies inside the gate (in place)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = np.eye(6)
    F[:3, 3:] = np.eye(3) * dt
    G = np.vstack([0.5 * dt**2 * np.eye(3), dt * np.eye(3)])
    tr.x = F @ tr.x
    tr.P = F @ tr.P @ F.T + tr.accel_sigma**2 * (G @ G.T)
    if measurement is not None and np.linalg.norm(np.asarray(measurement) - tr.position) <= gate:
        H = np.hstack([np.eye(3), np.zeros((3, 3))])
        S = H @ tr.P @ H.T + tr.meas_sigma**2 * np.eye(3)
        K = tr.P @ H.T @ np.linalg.inv(S)
        tr.x = tr.x + K @ (np.asarray(measurement, dtype=float) - tr.position)
        tr.P = (np.eye(6) - K @ H) @ tr.P
        tr.misses = 0
        if stamp is not None:
            # raw samples keep the matcher unbiased; the filtered track lags on curves
            tr.buffer.append((stamp, np.asarray(measurement, dtype=float).copy()))
    else:
        tr.misses += 1
        if tr.misses > max_misses:
            tr.retired = True
    return tr


# ---------------------------------------------------------------- excitation and matching


def scatter_singular_values(traj) -> np.ndarray:
    p = np.asarray(traj, dtype=float).reshape(-1, 3)
    d = p - p.mean(axis=0)
    return np.linalg.svd(d.T @ d, compute_uv=False)


def excitation_check(traj, threshold: float = 1.0) -> bool:
    """True iff the second largest singular value of the scatter matrix exceeds ``threshold``."""
    traj = np.asarray(traj, dtype=float).reshape(-1, 3)
    if len(traj) < 3:
        return False
    return bool(scatter_singular_values(traj)[1] > threshold)


class NoMatch(ValueError):
    pass


def pair_by_time(self_stamps, teammate_stamps, time_tol: float):
    """Index pairs (i, j) whose stamps differ by less than ``time_tol`` (nearest neighbour)."""
    a = np.asarray(self_stamps, dtype=float)
    b = np.asarray(teammate_stamps, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    order = np.argsort(b)
    bs = b[order]
    k = np.clip(np.searchsorted(bs, a), 1, len(bs) - 1) if len(bs) > 1 else np.zeros(len(a), dtype=int)
    if len(bs) > 1:
        left = np.abs(a - bs[k - 1])
        right = np.abs(a - bs[k])
        k = np.where(left <= right, k - 1, k)
    gap = np.abs(a - bs[k])
    keep = gap < time_tol
    return np.flatnonzero(keep), order[k[keep]]


def align_points(src, dst) -> Pose:
    """Least-squares rigid transform ``T`` with ``dst ~ T o src`` (reflection-corrected)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    Hm = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return Pose(R, cd - R @ cs)


def match_trajectories(self_traj, teammate_traj, time_tol: float = 0.03, excitation_threshold: float | None = None):
    """Extrinsic mapping the teammate's frame into ours and the RMS alignment residual.

    Both trajectories are ``(stamps, positions)`` on the self clock; only
    samples with close stamps are paired.
    """
    ts, ps = (np.asarray(a, dtype=float) for a in self_traj)
    tt, pt = (np.asarray(a, dtype=float) for a in teammate_traj)
    i, j = pair_by_time(ts, tt, time_tol)
    if len(i) < 3:
        raise NoMatch(f"only {len(i)} time-paired samples")
    dst, src = ps[i].reshape(-1, 3), pt[j].reshape(-1, 3)
    if excitation_threshold is not None and not excitation_check(dst, excitation_threshold):
        raise NoMatch("trajectory not excited")
    if scatter_singular_values(dst)[1] <= 1e-12 * max(1.0, scatter_singular_values(dst)[0]):
        raise NoMatch("degenerate (collinear) trajectory")
    T = align_points(src, dst)
    res = dst - T.apply(src)
    return T, float(np.sqrt(np.mean(np.sum(res**2, axis=1))))


# ---------------------------------------------------------------- extrinsic pose graph


@dataclass
class EdgeFactor:
    T: Pose  # frame a <- frame b for the canonical key (a, b), a < b
    estimates: dict = field(default_factory=dict)  # direction (k, l) -> Pose expressed as a <- b


class ExtrinsicGraph:
    """Pose graph over UAV global frames with the self frame pinned to identity."""

    def __init__(self, self_id: int, rot_sigma: float = 0.05, trans_sigma: float = 0.1):
        if self_id is None:
            raise ValueError("self_id required")
        self.self_id = int(self_id)
        self.nodes = {self.self_id}
        self.edges: dict[tuple, EdgeFactor] = {}
        self.weights = np.concatenate([np.full(3, 1.0 / rot_sigma), np.full(3, 1.0 / trans_sigma)])

    def __len__(self) -> int:
        return len(self.edges)

    def factor(self, k: int, l: int) -> Pose | None:
        """Current factor expressed as frame k <- frame l."""
        a, b = min(k, l), max(k, l)
        e = self.edges.get((a, b))
        if e is None:
            return None
        return e.T if (k, l) == (a, b) else e.T.inverse()

    def insert(self, k: int, l: int, T: Pose, average: bool = True) -> bool:
        """Add the estimate ``T`` (frame k <- frame l); returns True if the graph changed.

        A direction already seen on an edge is dumped.  A new direction on an
        existing edge is averaged in when ``average`` is set, otherwise dumped.
        """
        k, l = int(k), int(l)
        if k == l:
            raise ValueError("self-loop edge rejected")
        a, b = min(k, l), max(k, l)
        canon = T if (k, l) == (a, b) else T.inverse()
        edge = self.edges.get((a, b))
        if edge is None:
            self.edges[(a, b)] = EdgeFactor(canon, {(k, l): canon})
            self.nodes.update((k, l))
            return True
        if (k, l) in edge.estimates or not average:
            return False
        edge.estimates[(k, l)] = canon
        edge.T = mean_pose(edge.estimates.values())
        return True

    def connected(self) -> set:
        seen = {self.self_id}
        frontier = [self.self_id]
        adj = self._adjacency()
        while frontier:
            n = frontier.pop()
            for m in adj.get(n, ()):
                if m not in seen:
                    seen.add(m)
                    frontier.append(m)
        return seen

    def _adjacency(self):
        adj = {}
        for a, b in self.edges:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        return adj

    def _initial_guess(self, nodes):
        X = {self.self_id: Pose.identity()}
        adj = self._adjacency()
        queue = deque([self.self_id])
        while queue:
            n = queue.popleft()
            for m in sorted(adj.get(n, ())):
                if m in X or m not in nodes:
                    continue
                X[m] = X[n] @ self.factor(n, m)
                queue.append(m)
        return X

    def residuals(self, X: dict) -> dict:
        """Per-edge [rotation, translation] residuals for frames ``X`` (self <- node)."""
        out = {}
        for (a, b), e in self.edges.items():
            if a in X and b in X:
                out[(a, b)] = _edge_residual(X[a], X[b], e.T)[0]
        return out

    def optimize(self, max_iters: int = 20, tol: float = 1e-10) -> dict:
        """Gauss-Newton over connected frames; returns {id: self <- id} excluding self."""
        nodes = self.connected()
        if len(nodes) <= 1:
            return {}
        X = self._initial_guess(nodes)
        free = sorted(n for n in nodes if n != self.self_id)
        col = {n: 6 * i for i, n in enumerate(free)}
        W = self.weights
        edges = [(a, b, e.T) for (a, b), e in self.edges.items() if a in nodes and b in nodes]
        for _ in range(max_iters):
            dim = 6 * len(free)
            Hm = np.zeros((dim, dim))
            g = np.zeros(dim)
            for a, b, Z in edges:
                res, Ja, Jb = _edge_residual(X[a], X[b], Z)
                res, Ja, Jb = W * res, W[:, None] * Ja, W[:, None] * Jb
                blocks = [(col.get(a), Ja), (col.get(b), Jb)]
                for ci, Ji in blocks:
                    if ci is None:
                        continue
                    g[ci : ci + 6] += Ji.T @ res
                    for cj, Jj in blocks:
                        if cj is None:
                            continue
                        Hm[ci : ci + 6, cj : cj + 6] += Ji.T @ Jj
            dx = -np.linalg.solve(Hm, g)
            for n in free:
                c = col[n]
                X[n] = Pose(X[n].R @ exp_so3(dx[c : c + 3]), X[n].t + dx[c + 3 : c + 6])
            if np.linalg.norm(dx) < tol:
                break
        return {n: X[n] for n in free}


def _edge_residual(Xa: Pose, Xb: Pose, Z: Pose):
    """Residual of factor Z (a <- b) and its Jacobians w.r.t. right perturbations of Xa, Xb."""
    E = Z.R.T @ Xa.R.T @ Xb.R
    er = log_so3(E)
    d = Xb.t - Xa.t
    et = Xa.R.T @ d - Z.t
    Jri = right_jacobian_inv(er)
    Ja = np.zeros((6, 6))
    Jb = np.zeros((6, 6))
    Ja[:3, :3] = -Jri @ Xb.R.T @ Xa.R
    Ja[3:, :3] = skew(Xa.R.T @ d)
    Ja[3:, 3:] = -Xa.R.T
    Jb[:3, :3] = Jri
    Jb[3:, 3:] = Xa.R.T
    return np.concatenate([er, et]), Ja, Jb


def graph_optimize(g: ExtrinsicGraph, self_id: int | None = None) -> dict:
    if self_id is not None and self_id != g.self_id:
        raise ValueError("graph is pinned to a different self frame")
    return g.optimize()


def graph_insert(g: ExtrinsicGraph, k: int, l: int, T: Pose) -> ExtrinsicGraph:
    g.insert(k, l, T)
    return g
