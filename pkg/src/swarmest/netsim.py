"""Deterministic simulated broadcast network with latency, loss and byte accounting."""
from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .measurements import MutualObservation, TeammateStatePacket

SCALAR_BYTES = 8
HEADER_BYTES = 16


# ---------------------------------------------------------------- payload variants


@dataclass(frozen=True)
class Heartbeat:
    id: int
    addr: int


@dataclass(frozen=True)
class SyncRequest:
    seq: int
    t1: float


@dataclass(frozen=True)
class SyncResponse:
    seq: int
    t1: float
    t2: float
    t3: float


@dataclass(frozen=True)
class EgoState:
    packet: TeammateStatePacket


@dataclass(frozen=True)
class ActiveObs:
    obs: MutualObservation


@dataclass(frozen=True)
class ExtrinsicEdge:
    k: int
    l: int
    pose: Pose  # frame k <- frame l


@dataclass(frozen=True)
class TrajectorySample:
    id: int
    stamp: float
    position: np.ndarray


POSE_SCALARS = 7  # quaternion + translation
COV6_SCALARS = 21
COV3_SCALARS = 6


def scalar_count(payload) -> int:
    """Number of 8-byte fields a payload would serialize to."""
    if isinstance(payload, Heartbeat):
        return 2
    if isinstance(payload, SyncRequest):
        return 2
    if isinstance(payload, SyncResponse):
        return 4
    if isinstance(payload, EgoState):
        # stamp, pose, velocity, pose covariance, degenerate flag; then (id, pose) per extrinsic
        return 1 + POSE_SCALARS + 3 + COV6_SCALARS + 1 + (1 + POSE_SCALARS) * len(payload.packet.extrinsics)
    if isinstance(payload, ActiveObs):
        return 3 + 3 + COV3_SCALARS  # observer, observed, stamp; position; covariance
    if isinstance(payload, ExtrinsicEdge):
        return 2 + POSE_SCALARS
    if isinstance(payload, TrajectorySample):
        return 2 + 3
    raise TypeError(f"unknown payload variant {type(payload).__name__}")


def payload_size(payload) -> int:
    return HEADER_BYTES + SCALAR_BYTES * scalar_count(payload)


@dataclass(frozen=True)
class SwarmMessage:
    sender: int
    send_time: float  # sender clock
    payload: object
    recipient: int | None = None  # None: broadcast
    size_override: int | None = None

    @property
    def variant(self) -> str:
        return type(self.payload).__name__

    @property
    def size(self) -> int:
        return self.size_override if self.size_override is not None else payload_size(self.payload)


# ---------------------------------------------------------------- links


@dataclass(frozen=True)
class LinkModel:
    latency: float = 0.005
    jitter: float = 0.002
    jitter_dist: str = "uniform"  # uniform: +-jitter; normal: std jitter
    plr: float = 0.0
    occlusions: tuple = ()  # ((t_start, t_end), ...) in true time, total loss

    def __post_init__(self):
        if not 0.0 <= self.plr <= 1.0:
            raise ValueError(f"packet loss rate {self.plr} outside [0, 1]")
        if self.latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be nonnegative")
        if self.jitter_dist not in ("uniform", "normal"):
            raise ValueError(f"unknown jitter distribution {self.jitter_dist!r}")
        object.__setattr__(self, "occlusions", tuple(tuple(map(float, iv)) for iv in self.occlusions))

    def occluded(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.occlusions)

    def draw(self, rng: np.random.Generator, t_send: float):
        """(dropped, latency) for one (message, recipient) pair."""
        drop_draw = rng.random()
        if self.jitter_dist == "uniform":
            lat = self.latency + self.jitter * (2.0 * rng.random() - 1.0)
        else:
            lat = self.latency + self.jitter * rng.standard_normal()
        dropped = drop_draw < self.plr or self.occluded(t_send)
        return dropped, max(lat, 0.0)


@dataclass(frozen=True)
class Delivery:
    recipient: int
    msg: SwarmMessage
    arrival: float  # recipient clock
    arrival_true: float


@dataclass
class TraceRow:
    send_time: float  # true time
    arrival_time: float  # true time, nan when dropped
    sender: int
    recipient: int
    variant: str
    bytes: int
    dropped: bool


class Bus:
    """Message bus connecting registered agents.

    Times passed to ``broadcast``/``send`` are on the sender's clock; the bus
    converts them with the registered clock offsets (local = true + offset).
    """

    def __init__(self, seed: int | np.random.Generator = 0, default_link: LinkModel | None = None, record_trace: bool = True):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.default_link = default_link or LinkModel()
        self.links: dict[tuple, LinkModel] = {}
        self.offsets: dict[int, float] = {}
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.record_trace = record_trace
        self.trace: list[TraceRow] = []
        self.tx_log: dict[int, list] = {}
        self.rx_log: dict[int, list] = {}

    # -- membership
    def register(self, agent_id: int, clock_offset: float = 0.0) -> None:
        self.offsets[int(agent_id)] = float(clock_offset)
        self.tx_log.setdefault(int(agent_id), [])
        self.rx_log.setdefault(int(agent_id), [])

    def unregister(self, agent_id: int) -> None:
        self.offsets.pop(int(agent_id), None)

    def set_link(self, sender: int, recipient: int, link: LinkModel) -> None:
        self.links[(sender, recipient)] = link

    def link(self, sender: int, recipient: int) -> LinkModel:
        return self.links.get((sender, recipient), self.default_link)

    def true_time(self, agent_id: int, local: float) -> float:
        return local - self.offsets[agent_id]

    def local_time(self, agent_id: int, true: float) -> float:
        return true + self.offsets[agent_id]

    # -- sending
    def broadcast(self, msg: SwarmMessage) -> None:
        self._send(msg, [a for a in sorted(self.offsets) if a != msg.sender])

    def send(self, msg: SwarmMessage) -> None:
        if msg.recipient is None:
            return self.broadcast(msg)
        targets = [msg.recipient] if msg.recipient in self.offsets and msg.recipient != msg.sender else []
        self._send(msg, targets)

    def _send(self, msg: SwarmMessage, recipients) -> None:
        if msg.sender not in self.offsets:
            raise KeyError(f"sender {msg.sender} not registered")
        t_send = self.true_time(msg.sender, msg.send_time)
        size = msg.size
        self.tx_log[msg.sender].append((t_send, size))
        for r in recipients:
            dropped, lat = self.link(msg.sender, r).draw(self.rng, t_send)
            self._seq += 1
            if dropped:
                self._log(TraceRow(t_send, float("nan"), msg.sender, r, msg.variant, size, True))
                continue
            heapq.heappush(self._queue, (t_send + lat, self._seq, r, msg, t_send))

    def _log(self, row: TraceRow) -> None:
        if self.record_trace:
            self.trace.append(row)

    # -- delivery
    def advance(self, dt: float) -> list[Delivery]:
        if not dt > 0:
            raise ValueError("dt must be positive")
        return self.advance_to(self.now + dt)

    def advance_to(self, t: float) -> list[Delivery]:
        self.now = max(self.now, float(t))
        return self.flush()

    def flush(self) -> list[Delivery]:
        """Deliver everything due at or before the current time."""
        out = []
        while self._queue and self._queue[0][0] <= self.now:
            arrival, _, r, msg, t_send = heapq.heappop(self._queue)
            if r not in self.offsets:  # recipient left the swarm
                self._log(TraceRow(t_send, float("nan"), msg.sender, r, msg.variant, msg.size, True))
                continue
            self._log(TraceRow(t_send, arrival, msg.sender, r, msg.variant, msg.size, False))
            self.rx_log[r].append((arrival, msg.size))
            out.append(Delivery(r, msg, self.local_time(r, arrival), arrival))
        return out

    def pending(self) -> int:
        return len(self._queue)

    # -- accounting
    def bandwidth_report(self, agent: int, window: float, now: float | None = None) -> tuple[float, float]:
        """Average (tx, rx) bytes/s over ``(now - window, now]`` in true time."""
        if not window > 0:
            raise ValueError("window must be positive")
        now = self.now if now is None else now
        lo = now - window

        def rate(log):
            return sum(s for t, s in log if lo < t <= now) / window

        return rate(self.tx_log.get(agent, [])), rate(self.rx_log.get(agent, []))

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


def bandwidth_report(bus: Bus, agent: int, window: float, now: float | None = None):
    return bus.bandwidth_report(agent, window, now)


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["send_time", "arrival_time", "sender", "recipient", "variant", "bytes", "dropped"])
        for r in rows:
            w.writerow([f"{r.send_time:.9g}", f"{r.arrival_time:.9g}", r.sender, r.recipient, r.variant, r.bytes, int(r.dropped)])
