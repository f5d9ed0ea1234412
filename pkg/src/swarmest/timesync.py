"""Teammate discovery via heartbeats and PTP-style clock offset estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONNECTED = "connected"
DISCONNECTED = "disconnected"


@dataclass(frozen=True)
class SyncExchange:
    """One request/response round: t1, t4 on the requester clock, t2, t3 on the responder's."""

    t1: float
    t2: float
    t3: float
    t4: float

    @property
    def offset(self) -> float:
        """Responder clock minus requester clock, assuming symmetric link delay."""
        return 0.5 * ((self.t2 - self.t1) + (self.t3 - self.t4))

    @property
    def round_trip(self) -> float:
        return (self.t4 - self.t1) - (self.t3 - self.t2)


def ptp_offset(exchanges) -> float:
    """Mean single-exchange offset over a calibration batch."""
    exchanges = list(exchanges)
    if not exchanges:
        raise ValueError("no sync exchanges to average")
    return float(np.mean([e.offset for e in exchanges]))


@dataclass
class TeammateEntry:
    id: int
    address: object
    status: str = CONNECTED
    last_heartbeat: float = 0.0
    offset: float | None = None  # teammate clock minus self clock
    first_seen: float = 0.0


@dataclass
class TeammateTable:
    """Hash table of teammates keyed by ID."""

    timeout: float = 2.0
    entries: dict = field(default_factory=dict)

    def __contains__(self, j) -> bool:
        return j in self.entries

    def __getitem__(self, j) -> TeammateEntry:
        return self.entries[j]

    def get(self, j):
        return self.entries.get(j)

    def connected(self) -> list[int]:
        return sorted(j for j, e in self.entries.items() if e.status == CONNECTED)

    def process_heartbeat(self, sender: int, address, now: float) -> bool:
        """Refresh or create ``sender``'s entry; True if it is new (or was disconnected).

        A returned True means a clock calibration should be scheduled.
        """
        e = self.entries.get(sender)
        if e is None:
            self.entries[sender] = TeammateEntry(sender, address, CONNECTED, now, first_seen=now)
            return True
        e.last_heartbeat = max(e.last_heartbeat, now)
        e.address = address
        if e.status == DISCONNECTED:
            e.status = CONNECTED
            return True
        return False

    def timeout_scan(self, now: float) -> list[int]:
        """Mark entries silent for more than the timeout as disconnected; return them."""
        dropped = []
        for j, e in self.entries.items():
            if e.status == CONNECTED and now - e.last_heartbeat > self.timeout:
                e.status = DISCONNECTED
                dropped.append(j)
        return sorted(dropped)

    def set_offset(self, j: int, tau: float) -> None:
        self.entries[j].offset = float(tau)

    def offset(self, j: int) -> float | None:
        e = self.entries.get(j)
        return None if e is None else e.offset

    def to_self_clock(self, j: int, t_j: float) -> float:
        tau = self.offset(j)
        if tau is None:
            raise KeyError(f"no clock offset for teammate {j}")
        return t_j - tau


def process_heartbeat(table: TeammateTable, sender: int, address, now: float):
    new = table.process_heartbeat(sender, address, now)
    return table, new


def timeout_scan(table: TeammateTable, now: float, timeout: float | None = None):
    if timeout is not None:
        table.timeout = timeout
    return table, table.timeout_scan(now)


@dataclass
class SyncSession:
    """Requester-side bookkeeping for one teammate's calibration batch."""

    peer: int
    rounds: int = 30
    period: float = 0.1
    next_time: float = 0.0
    seq: int = 0
    attempts: int = 0
    max_attempts: int = 300
    pending: dict = field(default_factory=dict)  # seq -> t1
    exchanges: list = field(default_factory=list)

    @property
    def done(self) -> bool:
        return len(self.exchanges) >= self.rounds

    @property
    def exhausted(self) -> bool:
        return self.attempts >= self.max_attempts

    def due(self, now: float) -> bool:
        return not self.done and not self.exhausted and now >= self.next_time

    def make_request(self, now: float) -> tuple[int, float]:
        self.seq += 1
        self.attempts += 1
        self.pending[self.seq] = now
        self.next_time = now + self.period
        return self.seq, now

    def on_response(self, seq: int, t1: float, t2: float, t3: float, t4: float) -> bool:
        """Record a response; True once the batch is complete."""
        if seq not in self.pending or self.done:
            return False
        del self.pending[seq]
        self.exchanges.append(SyncExchange(t1, t2, t3, t4))
        return self.done

    def offset(self) -> float:
        return ptp_offset(self.exchanges)
