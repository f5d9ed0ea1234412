"""Scenario ingestion, deterministic execution, metrics and CSV output."""
from __future__ import annotations

import copy
import csv
import json
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .agent import Agent, AgentConfig, initial_covariance
from .esikf import NoiseParams
from .geometry import Pose, exp_so3, log_so3, rotation_angle
from .netsim import Bus, LinkModel
from .simworld import (
    Box,
    Figure8,
    Hover,
    Lissajous,
    Patch,
    SensorRig,
    TruthTrajectory,
    Waypoints,
    World,
    corridor,
    forest,
    marker_returns,
    room,
    sample_imu,
    sample_markers,
    sample_planes,
)
from .state import NavState

TOGGLES = ("marginalization", "degeneration_handling", "temporal_compensation", "fgo", "mutual", "online_init")

# stream tags for per-UAV random generators
_IMU, _LIDAR, _MARKER, _AGENT, _PRELOAD, _NET, _BIAS = range(7)


class ScenarioError(ValueError):
    """Parse or schema error; ``field`` is a dotted path, ``line`` 1-based when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field, self.line = field, line
        where = ""
        if line is not None:
            where += f"line {line}: "
        if field:
            where += f"{field}: "
        super().__init__(where + message)


# ---------------------------------------------------------------- scenario schema


@dataclass
class UavSpec:
    id: int
    trajectory: dict
    clock_offset: float = 0.0
    join_time: float = 0.0
    kill_time: float | None = None
    bias_gyro: tuple = (0.0, 0.0, 0.0)
    bias_accel: tuple = (0.0, 0.0, 0.0)


@dataclass
class Scenario:
    name: str
    duration: float
    uavs: list
    seed: int = 0
    world: dict = field(default_factory=lambda: {"type": "room"})
    rig: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    imu_noise: bool = True
    network: dict = field(default_factory=dict)
    links: list = field(default_factory=list)
    init: dict = field(default_factory=lambda: {"mode": "online"})
    toggles: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    trace: bool = True

    def with_overrides(self, **kw) -> "Scenario":
        return replace(copy.deepcopy(self), **kw)


def _line_map(text: str) -> dict:
    """Dotted key path -> 1-based line of its value in the YAML source."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    if root is not None:
        walk(root, "")
    return out


def _expand_formation(f: dict, path: str) -> list:
    """Generate UAV dicts for large swarms: ring/grid/line layouts of a trajectory template."""
    n = int(f.get("count", 0))
    if n <= 0:
        raise ScenarioError("formation count must be positive", f"{path}.count")
    kind = f.get("type", "grid")
    spacing = float(f.get("spacing", 4.0))
    center = np.asarray(f.get("center", [0.0, 0.0, 1.5]), dtype=float)
    template = f.get("trajectory", {"type": "hover"})
    out = []
    cols = int(np.ceil(np.sqrt(n)))
    for k in range(n):
        if kind == "ring":
            ang = 2 * np.pi * k / n
            rad = float(f.get("radius", spacing * n / (2 * np.pi)))
            pos = center + rad * np.array([np.cos(ang), np.sin(ang), 0.0])
        elif kind == "line":
            pos = center + np.array([k * spacing, 0.0, 0.0])
        elif kind == "grid":
            pos = center + spacing * np.array([k % cols, k // cols, 0.0])
        else:
            raise ScenarioError(f"unknown formation type {kind!r}", f"{path}.type")
        traj = copy.deepcopy(template)
        key = "center" if traj.get("type", "hover") in ("figure8", "lissajous") else "position"
        traj[key] = pos.tolist()
        if traj.get("type") == "lissajous":
            phase = np.asarray(traj.get("phase", [0, 0, 0]), dtype=float) + 2 * np.pi * k / n * np.array([1, 1, 1])
            traj["phase"] = phase.tolist()
        co = f.get("clock_offsets", 0.0)
        out.append({
            "id": int(f.get("first_id", 1)) + k,
            "trajectory": traj,
            "clock_offset": float(co[k % len(co)]) if isinstance(co, list) else float(co),
        })
    return out


_SCENARIO_KEYS = {f.name for f in fields(Scenario)} | {"formation"}
_UAV_KEYS = {f.name for f in fields(UavSpec)}


def scenario_from_dict(d: dict, lines: dict | None = None) -> Scenario:
    lines = lines or {}

    def err(msg, path):
        return ScenarioError(msg, path, lines.get(path))

    if not isinstance(d, dict):
        raise err("scenario must be a mapping", "")
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise err(f"unknown key {k!r}", k)
    for req in ("name", "duration"):
        if req not in d:
            raise err("required field missing", req)
    try:
        duration = float(d["duration"])
    except (TypeError, ValueError):
        raise err("must be a number", "duration") from None
    if not duration > 0:
        raise err("must be positive", "duration")
    raw = list(d.get("uavs") or [])
    if "formation" in d:
        raw += _expand_formation(d["formation"], "formation")
    uavs = []
    seen = set()
    for i, u in enumerate(raw):
        p = f"uavs[{i}]"
        if not isinstance(u, dict):
            raise err("UAV entry must be a mapping", p)
        bad = set(u) - _UAV_KEYS
        if bad:
            raise err(f"unknown key {sorted(bad)[0]!r}", f"{p}.{sorted(bad)[0]}")
        if "id" not in u or "trajectory" not in u:
            raise err("UAV needs 'id' and 'trajectory'", p)
        uid = int(u["id"])
        if uid in seen:
            raise err(f"duplicate UAV id {uid}", f"{p}.id")
        seen.add(uid)
        try:
            build_trajectory(u["trajectory"])
        except (TypeError, ValueError, KeyError) as e:
            raise err(str(e), f"{p}.trajectory") from None
        spec = UavSpec(**{**u, "id": uid})
        if spec.kill_time is not None and spec.kill_time <= spec.join_time:
            raise err("kill_time must be after join_time", f"{p}.kill_time")
        uavs.append(spec)
    toggles = {}
    for k, v in (d.get("toggles") or {}).items():
        if k not in TOGGLES:
            raise err(f"unknown toggle {k!r}", f"toggles.{k}")
        toggles[k] = _as_bool(v, f"toggles.{k}", lines)
    try:
        LinkModel(**_link_kwargs(d.get("network") or {}))
    except (TypeError, ValueError) as e:
        raise err(str(e), "network") from None
    kw = {k: d[k] for k in d if k in {f.name for f in fields(Scenario)}}
    kw.update(duration=duration, uavs=uavs, toggles=toggles, seed=int(d.get("seed", 0)))
    return Scenario(**kw)


def _as_bool(v, path, lines):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("on", "off", "true", "false", "yes", "no"):
        return v.lower() in ("on", "true", "yes")
    raise ScenarioError("toggle must be on/off", path, lines.get(path))


def load_scenario(path_or_text) -> Scenario:
    """Parse a scenario file (YAML); errors carry line and field diagnostics."""
    if isinstance(path_or_text, Scenario):
        return path_or_text
    text = str(path_or_text)
    if os.path.exists(text):
        with open(text) as f:
            text = f.read()
    elif "\n" not in text and text.endswith((".yaml", ".yml")):
        raise FileNotFoundError(f"scenario file not found: {text}")
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {getattr(e, 'problem', e)}", None,
                            mark.line + 1 if mark is not None else None) from None
    return scenario_from_dict(d, _line_map(text))


# ---------------------------------------------------------------- builders


def build_trajectory(spec: dict):
    spec = dict(spec)
    kind = spec.pop("type", "hover")
    if kind == "hover":
        return Hover(spec.pop("position", [0, 0, 1.5]), spec.pop("yaw", 0.0), **spec)
    if kind == "figure8":
        return Figure8(**spec)
    if kind == "waypoints":
        return Waypoints(**spec)
    if kind == "lissajous":
        return Lissajous(**spec)
    raise ValueError(f"unknown trajectory type {kind!r}")


def build_world(spec: dict, seed: int) -> World:
    spec = dict(spec or {})
    kind = spec.pop("type", "room")
    extra_boxes = [Box(b[0], b[1]) for b in spec.pop("boxes", [])]
    extra_patches = [Patch(**p) for p in spec.pop("patches", [])]
    if kind == "room":
        w = room(**spec)
    elif kind == "corridor":
        w = corridor(**spec)
    elif kind == "forest":
        w = forest(seed=spec.pop("seed", seed), **spec)
    elif kind == "empty":
        w = World([])
    else:
        raise ScenarioError(f"unknown world type {kind!r}", "world.type")
    if extra_boxes or extra_patches:
        w.add(patches=extra_patches, occluders=extra_boxes)
    return w


def _link_kwargs(net: dict) -> dict:
    net = dict(net)
    kw = {}
    for k in ("latency", "jitter", "jitter_dist", "plr"):
        if k in net:
            kw[k] = net[k]
    if "occlusions" in net:
        kw["occlusions"] = tuple(tuple(iv) for iv in net["occlusions"])
    return kw


def _noise(spec: dict) -> NoiseParams:
    spec = dict(spec or {})
    for k in ("active_cov", "passive_cov"):
        if k in spec and np.isscalar(spec[k]):
            spec[k] = float(spec[k]) * np.eye(3)
    if "active_sigma" in spec:
        spec["active_cov"] = float(spec.pop("active_sigma")) ** 2 * np.eye(3)
    if "passive_sigma" in spec:
        spec["passive_cov"] = float(spec.pop("passive_sigma")) ** 2 * np.eye(3)
    return NoiseParams(**spec)


# ---------------------------------------------------------------- report


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    rmse: dict = field(default_factory=dict)  # (estimator, subject) -> (pos m, rot rad, n)
    extrinsic_series: dict = field(default_factory=dict)  # (i, j) -> [(t, trans err, rot err)]
    initial_extrinsic_error: dict = field(default_factory=dict)  # (i, j) -> (t, trans, rot, kind)
    update_time: dict = field(default_factory=dict)  # agent -> (mean s, max s)
    update_times: dict = field(default_factory=dict)  # agent -> list of s
    bandwidth: dict = field(default_factory=dict)  # agent -> (tx, rx) B/s over its lifetime
    events: list = field(default_factory=list)  # (true time, agent, kind, teammate)
    init_complete_time: float = float("inf")
    distance_at: list = field(default_factory=list)  # (t, cumulative total path length)
    final_error: dict = field(default_factory=dict)  # agent -> final ego position error
    innovation_rms: dict = field(default_factory=dict)  # agent -> active innovation RMS
    telemetry: list = field(default_factory=list)
    diverged: dict = field(default_factory=dict)
    frozen_check: dict = field(default_factory=dict)  # agent -> extrinsics constant on flagged scans
    degenerate_scans: dict = field(default_factory=dict)
    clock_offset_error: dict = field(default_factory=dict)  # (i, j) -> estimated minus true offset, s

    def ego_rmse(self, agent: int):
        return self.rmse.get((agent, agent))

    def mean_ego_rmse(self) -> float:
        vals = [v[0] for (i, j), v in self.rmse.items() if i == j]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_mutual_rmse(self) -> float:
        vals = [v[0] for (i, j), v in self.rmse.items() if i != j]
        return float(np.mean(vals)) if vals else float("nan")


def rmse(est, truth, frame_align: Pose | None = None):
    """Position/rotation RMSE of timestamped poses against a trajectory.

    ``est`` is ``[(t, Pose), ...]`` in the estimator frame; ``truth`` is a
    :class:`Trajectory` (world) or a callable ``t -> Pose``; ``frame_align``
    maps the estimator frame to the truth frame.
    """
    est = list(est)
    if not est:
        raise ValueError("no estimated samples overlap the truth")
    A = frame_align or Pose.identity()
    f = truth.pose if hasattr(truth, "pose") else truth
    dp, dr = [], []
    for t, P in est:
        T = f(t)
        E = A @ P
        dp.append(np.sum((E.t - T.t) ** 2))
        dr.append(rotation_angle(E.R, T.R) ** 2)
    return float(np.sqrt(np.mean(dp))), float(np.sqrt(np.mean(dr)))


def init_flight_distance(report: MetricsReport) -> float:
    """Total truth path length flown until every pair was calibrated (inf if never)."""
    if not np.isfinite(report.init_complete_time):
        return float("inf")
    dist = 0.0
    for t, d in report.distance_at:
        if t > report.init_complete_time + 1e-9:
            break
        dist = d
    return dist


# ---------------------------------------------------------------- execution


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class _Sim:
    """Mutable per-run bookkeeping."""

    def __init__(self, sc: Scenario, toggles: dict):
        self.sc = sc
        self.world = build_world(sc.world, sc.seed)
        self.rig = SensorRig(**sc.rig)
        self.noise = _noise(sc.noise)
        self.truth_noise = self.noise if sc.imu_noise else None
        tg = {k: True for k in TOGGLES}
        tg.update(sc.toggles)
        tg.update(toggles or {})
        self.toggles = tg
        self.truth = {u.id: TruthTrajectory(build_trajectory(u.trajectory), u.clock_offset, u.join_time) for u in sc.uavs}
        self.specs = {u.id: u for u in sc.uavs}
        self.bus = Bus(np.random.default_rng([sc.seed, 0, _NET]), LinkModel(**_link_kwargs(sc.network)),
                       record_trace=sc.trace)
        for ln in sc.links:
            self.bus.set_link(int(ln["sender"]), int(ln["recipient"]), LinkModel(**_link_kwargs(ln)))
        self.agents: dict[int, Agent] = {}
        self.rngs = {}
        self.bias = {}
        for u in sc.uavs:
            self.rngs[u.id] = {s: np.random.default_rng([sc.seed, u.id, s]) for s in (_IMU, _LIDAR, _MARKER, _AGENT, _PRELOAD, _BIAS)}
            self.bias[u.id] = (np.array(u.bias_gyro, dtype=float), np.array(u.bias_accel, dtype=float))

    def agent_config(self, uid: int) -> AgentConfig:
        ag = dict(self.sc.agent)
        if "extrinsic_cov" in ag:
            v = ag["extrinsic_cov"]
            ag["extrinsic_cov"] = np.diag(np.asarray(v, dtype=float) ** 2) if np.ndim(v) == 1 else np.asarray(v)
        return AgentConfig(id=uid, rig=self.rig, noise=self.noise, **ag, **self.toggles)


def run(scenario, out_dir=None, seed: int | None = None, toggles: dict | None = None) -> MetricsReport:
    """Execute a scenario deterministically; writes CSV outputs when ``out_dir`` is given."""
    sc = load_scenario(scenario)
    if seed is not None:
        sc = sc.with_overrides(seed=int(seed))
    sim = _Sim(sc, toggles)
    rig = sim.rig
    world = sim.world
    dt = 1.0 / rig.imu_rate
    ratio = rig.imu_rate / rig.scan_rate
    per_scan = int(round(ratio))
    if abs(per_scan - ratio) > 1e-9:
        raise ScenarioError("IMU rate must be an integer multiple of the scan rate", "rig")
    n_steps = int(round(sc.duration * rig.imu_rate))
    report = MetricsReport(sc.name, sc.seed)

    traj_rows, ext_rows, metric_rows, tel_rows = [], [], [], []
    err_acc: dict = {}
    innov: dict = {}
    frames = {uid: tr.frame for uid, tr in sim.truth.items()}
    killed: set = set()
    path_len = {uid: 0.0 for uid in sim.truth}
    prev_pos = {}
    first_cal: dict = {}
    frozen_ok: dict = {}
    n_event_seen: dict = {}

    def alive_ids():
        return sorted(sim.agents)

    def pos_world(uid, t):
        return sim.truth[uid].path.state(t)[1]

    def send_all(msgs):
        for m in msgs:
            sim.bus.send(m)

    def deliver(ds=None):
        while True:
            ds = sim.bus.flush() if ds is None else ds
            if not ds:
                return
            for d in ds:
                ag = sim.agents.get(d.recipient)
                if ag is not None:
                    send_all(ag.receive(d.msg, d.arrival))
            ds = None

    def spawn(uid, t):
        tr = sim.truth[uid]
        Fr = frames[uid]
        _, _, v, _ = tr.path.state(t)
        x0 = NavState(v=Fr.R.T @ v, g=Fr.R.T @ world.gravity)
        cfg = sim.agent_config(uid)
        ag = Agent(cfg, x0, initial_covariance(), start_time=tr.local(t), seed=sim.rngs[uid][_AGENT])
        sim.bus.register(uid, tr.clock_offset)
        if sc.init.get("mode", "online") == "preloaded":
            err_t = float(sc.init.get("translation_error", 0.0))
            err_r = float(sc.init.get("rotation_error", 0.0))
            for j in sorted(sim.truth):
                if j == uid or j in killed:
                    continue
                if sim.specs[j].join_time > t + 1e-12:
                    continue
                true_T = Fr.inverse() @ frames[j]
                rg = sim.rngs[uid][_PRELOAD]
                T = Pose(true_T.R @ exp_so3(err_r * rg.standard_normal(3)), true_T.t + err_t * rg.standard_normal(3))
                ag.preload_extrinsic(j, T)
        sim.agents[uid] = ag

    def check_complete(t):
        if np.isfinite(report.init_complete_time):
            return
        ids = alive_ids()
        if len(ids) < 2:
            if len(sim.truth) == 1:
                report.init_complete_time = 0.0
            return
        if all(set(ids) - {i} <= set(sim.agents[i].x.ext_ids) for i in ids):
            report.init_complete_time = t

    for k in range(n_steps + 1):
        t = k * dt
        for uid, u in sim.specs.items():
            if uid not in sim.agents and uid not in killed and abs(u.join_time - t) < 0.5 * dt:
                spawn(uid, t)
                prev_pos[uid] = pos_world(uid, t)
            if uid in sim.agents and u.kill_time is not None and t >= u.kill_time - 1e-12:
                del sim.agents[uid]
                sim.bus.unregister(uid)
                killed.add(uid)
        if not sim.agents:
            continue
        deliver(sim.bus.advance_to(t))
        for uid in alive_ids():
            send_all(sim.agents[uid].tick(sim.truth[uid].local(t)))
        deliver()

        if k % per_scan == 0:
            truth_pose = {uid: sim.truth[uid].path.pose(t) for uid in alive_ids()}
            for uid in alive_ids():
                ag = sim.agents[uid]
                tr = sim.truth[uid]
                Tw = truth_pose[uid]
                planes = sample_planes(world, Tw, rig, sim.rngs[uid][_LIDAR], frame=frames[uid])
                others = {j: truth_pose[j].t for j in truth_pose if j != uid}
                mk = sample_markers(Tw, others, rig, world.occluders, sim.rngs[uid][_MARKER])
                pts = marker_returns(mk, rig, sim.rngs[uid][_MARKER])
                ext_before = dict(ag.x.extrinsics)
                outp = ag.on_scan(tr.local(t), planes, pts)
                send_all(outp.outgoing)
                tel = outp.telemetry
                report.update_times.setdefault(uid, []).append(tel["update_time"])
                if tel["degenerate"] and sim.toggles["degeneration_handling"]:
                    report.degenerate_scans[uid] = report.degenerate_scans.get(uid, 0) + 1
                    same = all(
                        j in ag.x.extrinsics
                        and np.array_equal(ag.x.extrinsics[j].R, T.R)
                        and np.array_equal(ag.x.extrinsics[j].t, T.t)
                        for j, T in ext_before.items()
                    )
                    frozen_ok[uid] = frozen_ok.get(uid, True) and same
                s, c = innov.get(uid, (0.0, 0))
                innov[uid] = (s + tel["innov_sq"], c + 3 * tel["n_active"])
                # ego accuracy against truth in G_i
                truth_i = frames[uid].inverse() @ Tw
                est = ag.x.pose
                rows = [(uid, uid, est, truth_i, "ego", 0.0)]
                for me in outp.mutual:
                    if me.teammate in truth_pose:
                        rows.append((uid, me.teammate, me.pose, frames[uid].inverse() @ truth_pose[me.teammate], me.source, me.staleness))
                for i, j, E, T, src, stale in rows:
                    ep = float(np.linalg.norm(E.t - T.t))
                    er = rotation_angle(E.R, T.R)
                    a = err_acc.setdefault((i, j), [0.0, 0.0, 0])
                    a[0] += ep**2
                    a[1] += er**2
                    a[2] += 1
                    traj_rows.append((t, i, j, *E.t, *log_so3(E.R), *T.t, *log_so3(T.R), src, stale))
                report.final_error[uid] = float(np.linalg.norm(est.t - truth_i.t))
                for j, Te in ag.x.extrinsics.items():
                    true_T = frames[uid].inverse() @ frames[j]
                    et = float(np.linalg.norm(Te.t - true_T.t))
                    er = rotation_angle(Te.R, true_T.R)
                    report.extrinsic_series.setdefault((uid, j), []).append((t, et, er))
                    ext_rows.append((t, uid, j, *Te.t, *log_so3(Te.R), et, er))
                for (tl, j, T) in ag.extrinsic_log[len(first_cal.get(uid, [])):]:
                    first_cal.setdefault(uid, []).append(j)
                    true_T = frames[uid].inverse() @ frames[j]
                    kind = "direct" if j in ag.direct else "graph"
                    report.initial_extrinsic_error[(uid, j)] = (
                        t, float(np.linalg.norm(T.t - true_T.t)), rotation_angle(T.R, true_T.R), kind)
                metric_rows.append((k // per_scan, t, uid, report.final_error[uid],
                                    rotation_angle(est.R, truth_i.R), tel["K"], tel["sigma_min"],
                                    tel["degenerate"], tel["n_active"], tel["n_passive"], len(ag.x.ext_ids)))
                tel_rows.append((tel["scan"], t, uid, *est.t, *log_so3(est.R), tel["K"], tel["sigma_min"],
                                 tel["degenerate"], tel["rows"], tel["updated"], tel["diverged"]))
            check_complete(t)
            report.distance_at.append((t, float(sum(path_len.values()))))

        # IMU propagation over [t, t + dt]
        if k < n_steps:
            for uid in alive_ids():
                tr = sim.truth[uid]
                bg, ba = sim.bias[uid]
                imu = sample_imu(tr.path, t, sim.truth_noise, (bg, ba), sim.rngs[uid][_IMU], dt=dt, gravity=world.gravity)
                imu = type(imu)(tr.local(t), imu.gyro, imu.accel)
                sim.agents[uid].propagate(imu, dt)
                if sim.truth_noise is not None:
                    rb = sim.rngs[uid][_BIAS]
                    sim.bias[uid] = (bg + sim.noise.gyro_bias_rw * np.sqrt(dt) * rb.standard_normal(3),
                                     ba + sim.noise.accel_bias_rw * np.sqrt(dt) * rb.standard_normal(3))
                p1 = pos_world(uid, t + dt)
                path_len[uid] += float(np.linalg.norm(p1 - prev_pos[uid]))
                prev_pos[uid] = p1

    # events from every agent, converted to true time
    all_agents = dict(sim.agents)
    report.events = []
    for uid in sorted(all_agents):
        ag = all_agents[uid]
        off = sim.truth[uid].clock_offset
        for tl, kind, j in ag.events:
            report.events.append((tl - off, uid, kind, j))
        report.diverged[uid] = ag.diverged
        for j in sorted(sim.truth):
            tau = ag.tau(j) if j != uid and j in ag.table else None
            if tau is not None:
                report.clock_offset_error[(uid, j)] = tau - (sim.truth[j].clock_offset - off)
    report.events.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for key, (sp, sr, n) in sorted(err_acc.items()):
        report.rmse[key] = (float(np.sqrt(sp / n)), float(np.sqrt(sr / n)), n)
    for uid, ts in report.update_times.items():
        report.update_time[uid] = (float(np.mean(ts)), float(np.max(ts)))
    end = n_steps * dt
    for uid, u in sim.specs.items():
        life = (min(end, u.kill_time) if u.kill_time is not None else end) - u.join_time
        if life > 0 and uid in sim.bus.tx_log:
            tx = sum(s for _, s in sim.bus.tx_log[uid]) / life
            rx = sum(s for _, s in sim.bus.rx_log[uid]) / life
            report.bandwidth[uid] = (tx, rx)
    for uid, (s, c) in innov.items():
        report.innovation_rms[uid] = float(np.sqrt(s / c)) if c else float("nan")
    report.frozen_check = frozen_ok
    report.telemetry = tel_rows

    if out_dir is not None:
        write_outputs(report, sim, out_dir, traj_rows, ext_rows, metric_rows, tel_rows)
    return report


def write_outputs(report, sim, out_dir, traj_rows, ext_rows, metric_rows, tel_rows) -> None:
    os.makedirs(out_dir, exist_ok=True)
    j = os.path.join
    _write_csv(j(out_dir, "trajectories.csv"),
               ["time", "estimator", "subject", "x", "y", "z", "rx", "ry", "rz",
                "true_x", "true_y", "true_z", "true_rx", "true_ry", "true_rz", "source", "staleness"], traj_rows)
    _write_csv(j(out_dir, "extrinsics.csv"),
               ["time", "agent", "teammate", "x", "y", "z", "rx", "ry", "rz", "trans_err", "rot_err"], ext_rows)
    _write_csv(j(out_dir, "metrics.csv"),
               ["scan", "time", "agent", "pos_err", "rot_err", "K", "sigma_min", "degenerate",
                "n_active", "n_passive", "n_extrinsics"], metric_rows)
    _write_csv(j(out_dir, "telemetry.csv"),
               ["scan", "time", "agent", "x", "y", "z", "rx", "ry", "rz", "K", "sigma_min", "degenerate",
                "rows", "updated", "diverged"], tel_rows)
    summary = []
    for (a, b), (p, r, n) in sorted(report.rmse.items()):
        summary.append(("rmse", a, b, p, r, n))
    for (a, b), (t, et, er, kind) in sorted(report.initial_extrinsic_error.items()):
        summary.append((f"init_{kind}", a, b, et, er, t))
    for a, (tx, rx) in sorted(report.bandwidth.items()):
        summary.append(("bandwidth", a, a, tx, rx, 0))
    summary.append(("init_distance", 0, 0, init_flight_distance(report), report.init_complete_time, 0))
    _write_csv(j(out_dir, "summary.csv"), ["metric", "a", "b", "value1", "value2", "value3"], summary)
    _write_csv(j(out_dir, "events.csv"), ["time", "agent", "kind", "teammate"], report.events)
    from .netsim import write_trace

    write_trace(sim.bus.trace, j(out_dir, "net_trace.csv"))
    timing = {str(a): {"mean_s": m, "max_s": x} for a, (m, x) in sorted(report.update_time.items())}
    with open(j(out_dir, "timing.json"), "w") as f:
        json.dump(timing, f, indent=1, sort_keys=True)


def set_path(d: dict, dotted: str, value) -> dict:
    """Return a deep copy of ``d`` with ``dotted`` key path set to ``value``."""
    d = copy.deepcopy(d)
    cur = d
    parts = dotted.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return d


def sweep(scenario, param: str, values, out_dir=None, seed=None, toggles=None) -> list:
    """One run per value. ``plr`` values are percentages; other params are dotted scenario paths."""
    sc = load_scenario(scenario)
    reports = []
    for v in values:
        if param == "plr":
            net = dict(sc.network)
            net["plr"] = float(v) / 100.0
            run_sc = sc.with_overrides(network=net)
        else:
            top, _, rest = param.partition(".")
            if not hasattr(sc, top):
                raise ScenarioError(f"unknown sweep parameter {param!r}", param)
            cur = getattr(sc, top)
            new = set_path(cur, rest, v) if rest else v
            run_sc = sc.with_overrides(**{top: new})
        sub = None if out_dir is None else os.path.join(out_dir, f"{param}={v}")
        reports.append(run(run_sc, sub, seed=seed, toggles=toggles))
    return reports
