"""One UAV's estimator: sensor ingestion, initialization, marginalized update, broadcast."""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .esikf import ImuSample, MeasurementBundle, MutualTerm, NoiseParams, iterated_update, predict
from .geometry import Pose
from .initialization import (
    ExtrinsicGraph,
    NoMatch,
    TemporaryTracker,
    euclidean_cluster,
    excitation_check,
    match_trajectories,
    tracker_step,
)
from .measurements import (
    MutualObservation,
    PlaneBatch,
    TeammateStatePacket,
    active_obs_residual,
    degeneration_metric,
)
from .netsim import ActiveObs, EgoState, ExtrinsicEdge, Heartbeat, SwarmMessage, SyncRequest, SyncResponse
from .simworld import SensorRig
from .state import (
    DEFAULT_EXTRINSIC_COV,
    EGO_DIM,
    ContractError,
    NavState,
    append_extrinsic,
    partition,
    reinitialize,
)
from .timesync import CONNECTED, SyncSession, TeammateTable


@dataclass
class AgentConfig:
    id: int
    rig: SensorRig = field(default_factory=SensorRig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    # initialization
    reflectivity_threshold: float = 200.0
    cluster_radius: float = 0.3
    cluster_min_size: int = 3
    cluster_max_extent: float = 0.6
    tracker_gate: float = 0.5
    tracker_max_misses: int = 10
    tracker_window: int = 100
    excitation_threshold: float = 1.0
    min_match_samples: int = 30
    match_residual: float = 0.2
    match_time_tol: float = 0.03
    extrinsic_cov: np.ndarray = field(default_factory=lambda: DEFAULT_EXTRINSIC_COV.copy())
    # estimation
    eps_d: float = 0.05
    degenerate_scale: float = 0.01
    max_iters: int = 5
    iter_tol: float = 1e-6
    obs_radius: float = 0.5
    max_observed: int | None = None
    divergence_jump: float = 5.0
    # network
    heartbeat_period: float = 1.0
    heartbeat_jitter: float = 0.05
    connection_timeout: float = 2.0
    sync_rounds: int = 30
    sync_period: float = 0.1
    stale_limit: float = 2.0
    # feature toggles
    marginalization: bool = True
    degeneration_handling: bool = True
    temporal_compensation: bool = True
    fgo: bool = True
    mutual: bool = True
    online_init: bool = True


@dataclass(frozen=True)
class MutualEstimate:
    teammate: int
    pose: Pose  # teammate body in our global frame
    velocity: np.ndarray
    staleness: float
    source: str  # "projected" or "predicted"


@dataclass
class ScanOutput:
    x: NavState
    mutual: list
    outgoing: list
    telemetry: dict


def initial_covariance() -> np.ndarray:
    return np.diag(
        [1e-8] * 3 + [1e-8] * 3 + [1e-4] * 3 + [1e-6] * 3 + [0.05**2] * 3 + [1e-8] * 3
    )


class Agent:
    def __init__(self, cfg: AgentConfig, x0: NavState | None = None, P0=None, start_time: float = 0.0,
                 seed: int | np.random.Generator = 0):
        self.cfg = cfg
        self.id = int(cfg.id)
        self.x = x0 if x0 is not None else NavState()
        self.P = np.array(P0, dtype=float) if P0 is not None else initial_covariance()
        if self.P.shape != (self.x.dim, self.x.dim):
            raise ContractError("initial covariance does not match state layout")
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.table = TeammateTable(timeout=cfg.connection_timeout)
        self.sync: dict[int, SyncSession] = {}
        self.packets: dict[int, deque] = {}
        self.traj_hist: dict[int, deque] = {}
        self.passive_inbox: list = []
        self.trackers: list[TemporaryTracker] = []
        self._next_tracker = 0
        self._last_scan: float | None = None
        self.graph = ExtrinsicGraph(self.id)
        self.direct: set = set()
        self.frozen: set = set()
        self.diverged = False
        self.scan_index = 0
        self.events: list = []  # (local time, kind, teammate)
        self.extrinsic_log: list = []  # (local time, teammate, Pose) at first calibration
        self.next_heartbeat = start_time + self._hb_jitter()
        self._time = start_time
        self._pending: list = []

    # ------------------------------------------------------------ helpers

    def _hb_jitter(self) -> float:
        j = self.cfg.heartbeat_jitter
        return self.rng.uniform(-j, j) if j > 0 else 0.0

    def _msg(self, payload, now, recipient=None) -> SwarmMessage:
        return SwarmMessage(self.id, now, payload, recipient)

    def preload_extrinsic(self, j: int, T: Pose, cov=None) -> None:
        cov = self.cfg.extrinsic_cov if cov is None else cov
        self.x, self.P = append_extrinsic(self.x, self.P, j, T, cov)
        self.events.append((self._time, "preloaded", j))

    def tau(self, j: int):
        return self.table.offset(j)

    def connected(self, j: int) -> bool:
        e = self.table.get(j)
        return e is not None and e.status == CONNECTED

    # ------------------------------------------------------------ IMU and clock

    def propagate(self, imu: ImuSample, dt: float) -> None:
        if self.diverged:
            return
        self.x, self.P = predict(self.x, self.P, imu, dt, self.cfg.noise)

    def tick(self, now: float) -> list[SwarmMessage]:
        """Heartbeats, timeouts and clock-sync requests due at ``now``."""
        self._time = now
        out = list(self._pending)
        self._pending.clear()
        if now >= self.next_heartbeat:
            out.append(self._msg(Heartbeat(self.id, self.id), now))
            self.next_heartbeat += self.cfg.heartbeat_period + self._hb_jitter()
        for j in self.table.timeout_scan(now):
            self.frozen.add(j)
            self.events.append((now, "disconnected", j))
        for j in sorted(self.sync):
            s = self.sync[j]
            if s.due(now):
                seq, t1 = s.make_request(now)
                out.append(self._msg(SyncRequest(seq, t1), now, recipient=j))
        return out

    # ------------------------------------------------------------ inbox

    def receive(self, msg: SwarmMessage, now: float) -> list[SwarmMessage]:
        """Handle one delivered message; returns immediate replies."""
        self._time = now
        j = msg.sender
        p = msg.payload
        out = []
        if isinstance(p, Heartbeat) or j in self.table:
            # any traffic counts as a sign of life
            if self.table.process_heartbeat(j, getattr(p, "addr", j), now):
                self.events.append((now, "discovered", j))
                self.frozen.discard(j)
                if self.table.offset(j) is None and j not in self.sync:
                    self.sync[j] = SyncSession(j, self.cfg.sync_rounds, self.cfg.sync_period, next_time=now)
        if isinstance(p, SyncRequest):
            out.append(self._msg(SyncResponse(p.seq, p.t1, now, now), now, recipient=j))
        elif isinstance(p, SyncResponse):
            s = self.sync.get(j)
            if s is not None and s.on_response(p.seq, p.t1, p.t2, p.t3, now):
                self.table.set_offset(j, s.offset())
                self.events.append((now, "synced", j))
                del self.sync[j]
        elif isinstance(p, EgoState):
            pk = p.packet
            self.packets.setdefault(j, deque(maxlen=20)).append(pk)
            self.traj_hist.setdefault(j, deque(maxlen=4 * self.cfg.tracker_window)).append((pk.stamp, pk.pose.t.copy()))
            if self.cfg.fgo and self.cfg.online_init and pk.extrinsics:
                changed = False
                for l, T in pk.extrinsics.items():
                    if l != j:
                        changed |= self.graph.insert(j, l, T, average=False)
                if changed:
                    self._apply_graph(now)
        elif isinstance(p, ActiveObs):
            if p.obs.observed == self.id:
                self.passive_inbox.append((p.obs, now))
        elif isinstance(p, ExtrinsicEdge):
            if self.cfg.fgo and self.cfg.online_init and self.graph.insert(p.k, p.l, p.pose):
                self._apply_graph(now)
        return out

    def _apply_graph(self, now: float) -> None:
        # the graph only seeds teammates we have no extrinsic for yet
        if not self.graph.connected() - {self.id} - set(self.x.extrinsics):
            return
        for j, T in self.graph.optimize().items():
            if j == self.id or j in self.x.extrinsics:
                continue
            self.x, self.P = append_extrinsic(self.x, self.P, j, T, self.cfg.extrinsic_cov)
            kind = "identified" if j in self.direct else "graph"
            self.events.append((now, kind, j))
            self.extrinsic_log.append((now, j, T))

    # ------------------------------------------------------------ scan

    def _latest_packet(self, j):
        d = self.packets.get(j)
        return d[-1] if d else None

    def _packet_at(self, j, stamp, tol=0.05):
        d = self.packets.get(j)
        if not d:
            return None
        best = min(d, key=lambda pk: abs(pk.stamp - stamp))
        return best if abs(best.stamp - stamp) <= tol else None

    def _usable(self, j) -> bool:
        return j in self.x.extrinsics and j not in self.frozen and self.tau(j) is not None and self.connected(j)

    def _predict_teammate(self, j, now, pose: Pose):
        pk = self._latest_packet(j)
        if pk is None:
            return None
        dt = now - pk.stamp + (self.tau(j) if self.cfg.temporal_compensation else 0.0)
        Te = self.x.extrinsics[j]
        g = Te.apply(pk.pose.t + pk.velocity * dt)
        return pose.inverse().apply(g), pk

    def on_scan(self, now: float, planes=None, markers=None) -> ScanOutput:
        cfg = self.cfg
        self._time = now
        planes = PlaneBatch.from_list(planes if planes is not None else [])
        markers = list(markers or [])
        x_prior, P_prior = self.x, self.P
        pose_prior = x_prior.pose
        period = 1.0 / cfg.rig.scan_rate

        pts = np.array([m.point for m in markers]).reshape(-1, 3)
        refl = np.array([m.reflectivity for m in markers])
        bright = refl > cfg.reflectivity_threshold if len(markers) else np.zeros(0, dtype=bool)
        free = bright.copy()

        # (2) active observations around predicted teammate positions
        active = []
        if cfg.mutual and not self.diverged:
            for j in self.x.ext_ids:
                if not self._usable(j):
                    continue
                pred = self._predict_teammate(j, now, pose_prior)
                if pred is None:
                    continue
                p_hat, pk = pred
                near = free & (np.linalg.norm(pts - p_hat, axis=1) < cfg.obs_radius) if len(pts) else free
                if np.count_nonzero(near) < cfg.cluster_min_size:
                    continue
                free &= ~near
                obs = MutualObservation("active", self.id, j, pts[near].mean(axis=0), now, cfg.noise.active_cov)
                active.append((float(np.linalg.norm(p_hat)), MutualTerm(obs, pk, self.tau(j))))

        # passive observations received since the last scan
        passive = []
        if cfg.mutual and not self.diverged:
            for obs, arrived in self.passive_inbox:
                k = obs.observer
                if now - arrived > period + 1e-9 or not self._usable(k):
                    continue
                pk = self._packet_at(k, obs.stamp)
                if pk is None:
                    continue
                passive.append((float(np.linalg.norm(obs.position)), MutualTerm(obs, pk, self.tau(k))))
        self.passive_inbox.clear()

        if cfg.max_observed is not None:
            ranked = sorted(
                [(d, t.obs.observed) for d, t in active] + [(d, t.obs.observer) for d, t in passive]
            )
            keep = []
            for _, j in ranked:
                if j not in keep and len(keep) < cfg.max_observed:
                    keep.append(j)
            active = [a for a in active if a[1].obs.observed in keep]
            passive = [b for b in passive if b[1].obs.observer in keep]
        active = [t for _, t in active]
        passive = [t for _, t in passive]

        # pre-update innovation of active observations (diagnostic)
        innov_sq = 0.0
        for term in active:
            r = active_obs_residual(x_prior, term.obs, term.packet, term.tau, compensate=cfg.temporal_compensation)
            innov_sq += float(r.r @ r.r)

        sigma_min = degeneration_metric(x_prior, planes)
        degenerate = sigma_min < cfg.eps_d
        bundle = MeasurementBundle(now, planes, active, passive)
        observed = sorted({t.obs.observed for t in active} | {t.obs.observer for t in passive})

        t0 = time.perf_counter()
        K = 0
        rows = 0
        updated = False
        if not self.diverged:
            kw = dict(max_iters=cfg.max_iters, tol=cfg.iter_tol, compensate=cfg.temporal_compensation)
            if degenerate and cfg.degeneration_handling:
                part = partition(self.x, self.P, [])
                res = iterated_update(part.x1, part.P11, bundle, cfg.noise, exogenous=part.exogenous(),
                                      mutual_scale=cfg.degenerate_scale, **kw)
                x_new, P_new = reinitialize(res.x, res.P, part.x2, part.P22)
            elif cfg.marginalization:
                part = partition(self.x, self.P, observed)
                K = len(part.observed)
                if part.x1.dim != EGO_DIM + 6 * K:
                    raise ContractError("update state dimension must be 18 + 6K")
                res = iterated_update(part.x1, part.P11, bundle, cfg.noise, **kw)
                x_new, P_new = reinitialize(res.x, res.P, part.x2, part.P22)
            else:
                K = len(self.x.ext_ids)
                res = iterated_update(self.x, self.P, bundle, cfg.noise, **kw)
                x_new, P_new = res.x, res.P
            rows, updated = res.rows, res.updated
            if np.linalg.norm(x_new.p - x_prior.p) > cfg.divergence_jump or not np.all(np.isfinite(P_new)):
                self.diverged = True
                self.events.append((now, "diverged", self.id))
            else:
                self.x, self.P = x_new, P_new
        update_time = time.perf_counter() - t0

        out: list[SwarmMessage] = []
        if not self.diverged:
            if cfg.online_init:
                out.extend(self._init_step(now, pts[free], self.x.pose))
            pk = TeammateStatePacket(
                self.id, now, self.x.pose, self.x.v, self.P[:6, :6].copy(),
                dict(self.x.extrinsics), bool(degenerate),
            )
            out.append(self._msg(EgoState(pk), now))
            for term in active:
                out.append(self._msg(ActiveObs(term.obs), now))
        self._last_scan = now
        self.scan_index += 1
        tel = dict(
            scan=self.scan_index - 1, time=now, agent=self.id, K=K, sigma_min=sigma_min,
            degenerate=int(degenerate), rows=rows, updated=int(updated), diverged=int(self.diverged),
            n_active=len(active), n_passive=len(passive), innov_sq=innov_sq, update_time=update_time,
        )
        return ScanOutput(self.x, self.mutual_states(now), out, tel)

    # ------------------------------------------------------------ initialization path

    def _init_step(self, now, body_points, pose: Pose) -> list[SwarmMessage]:
        cfg = self.cfg
        clusters = euclidean_cluster(body_points, cfg.cluster_radius, cfg.cluster_min_size, cfg.cluster_max_extent)
        cents = [pose.apply(c.centroid) for c in clusters]
        dt = now - self._last_scan if self._last_scan is not None else 1.0 / cfg.rig.scan_rate
        dt = max(dt, 1e-3)
        live = [tr for tr in self.trackers if not tr.retired]
        pred = np.array([tr.position + tr.velocity * dt for tr in live]).reshape(-1, 3)
        assigned = {}
        if len(live) and cents:
            C = np.array(cents)
            D = np.linalg.norm(pred[:, None, :] - C[None, :, :], axis=2)
            for flat in np.argsort(D, axis=None):
                a, b = np.unravel_index(flat, D.shape)
                if D[a, b] > cfg.tracker_gate:
                    break
                if a in assigned or b in assigned.values():
                    continue
                assigned[a] = b
        for a, tr in enumerate(live):
            meas = cents[assigned[a]] if a in assigned else None
            tracker_step(tr, dt, meas, stamp=now, gate=cfg.tracker_gate, max_misses=cfg.tracker_max_misses)
        taken = set(assigned.values())
        for b, c in enumerate(cents):
            if b not in taken:
                self.trackers.append(TemporaryTracker.start(self._next_tracker, now, c, window=cfg.tracker_window,
                                                            meas_sigma=max(cfg.rig.marker_sigma, 1e-3)))
                self._next_tracker += 1
        self.trackers = [tr for tr in self.trackers if not tr.retired]

        out = []
        candidates = [j for j in sorted(self.traj_hist)
                      if j not in self.x.extrinsics and j not in self.direct and self.tau(j) is not None]
        if not candidates:
            return out
        for tr in list(self.trackers):
            if len(tr.buffer) < cfg.min_match_samples:
                continue
            ts, ps = tr.trajectory()
            if not excitation_check(ps, cfg.excitation_threshold):
                continue
            best = None
            for j in candidates:
                hist = self.traj_hist[j]
                tj = np.array([h[0] for h in hist]) - self.tau(j)
                pj = np.array([h[1] for h in hist])
                try:
                    T, rms = match_trajectories((ts, ps), (tj, pj), cfg.match_time_tol)
                except NoMatch:
                    continue
                if rms < cfg.match_residual and (best is None or rms < best[1]):
                    best = (j, rms, T)
            if best is None:
                continue
            j, rms, T = best
            self.trackers.remove(tr)
            candidates.remove(j)
            self.direct.add(j)
            self.events.append((now, "matched", j))
            if cfg.fgo:
                self.graph.insert(self.id, j, T)
                out.append(self._msg(ExtrinsicEdge(self.id, j, T), now))
                self._apply_graph(now)
            elif j not in self.x.extrinsics:
                self.x, self.P = append_extrinsic(self.x, self.P, j, T, cfg.extrinsic_cov)
                self.events.append((now, "identified", j))
                self.extrinsic_log.append((now, j, T))
            if not candidates:
                break
        return out

    # ------------------------------------------------------------ outputs

    def mutual_states(self, now: float) -> list[MutualEstimate]:
        out = []
        period = 1.0 / self.cfg.rig.scan_rate
        for j in self.x.ext_ids:
            if j in self.frozen or not self.connected(j) or self.tau(j) is None:
                continue
            pk = self._latest_packet(j)
            if pk is None:
                continue
            age = now - (pk.stamp - self.tau(j))
            if age > self.cfg.stale_limit:
                continue
            Te = self.x.extrinsics[j]
            dt = max(age, 0.0)
            body = Pose(pk.pose.R, pk.pose.t + pk.velocity * dt)
            src = "projected" if age <= 1.5 * period else "predicted"
            out.append(MutualEstimate(j, Te @ body, Te.R @ pk.velocity, float(age), src))
        return out
