"""Swarm navigation state, its manifold calculus and the marginalization algebra.

Tangent layout: ego block first (18), then one 6-vector per extrinsic in
ascending teammate-ID order::

    [0:3] rotation  [3:6] position  [6:9] velocity
    [9:12] gyro bias  [12:15] accel bias  [15:18] gravity
    [18+6k : 18+6k+3] extrinsic rotation, [18+6k+3 : 18+6k+6] extrinsic translation
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, exp_so3, log_so3

EGO_DIM = 18
ROT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
GRAV = slice(15, 18)

GRAVITY = np.array([0.0, 0.0, -9.81])

# (5 deg)^2 on rotation, (0.3 m)^2 on translation
DEFAULT_EXTRINSIC_COV = np.diag([np.deg2rad(5.0) ** 2] * 3 + [0.3**2] * 3)


class ContractError(ValueError):
    """Raised when operands violate a layout or dimension contract."""


class DuplicateExtrinsicError(ContractError):
    pass


@dataclass(frozen=True)
class NavState:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    extrinsics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("p", "v", "bg", "ba", "g"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))
        object.__setattr__(self, "R", np.array(self.R, dtype=float).reshape(3, 3))
        ordered = {int(k): self.extrinsics[k] for k in sorted(self.extrinsics)}
        object.__setattr__(self, "extrinsics", ordered)

    @property
    def ext_ids(self) -> list[int]:
        return list(self.extrinsics)

    @property
    def dim(self) -> int:
        return EGO_DIM + 6 * len(self.extrinsics)

    @property
    def pose(self) -> Pose:
        return Pose(self.R, self.p)

    def ext_index(self, j: int) -> int:
        """Start of teammate ``j``'s 6-block in the tangent vector."""
        try:
            k = self.ext_ids.index(j)
        except ValueError:
            raise ContractError(f"no extrinsic block for teammate {j}") from None
        return EGO_DIM + 6 * k

    def ext_slice(self, j: int) -> slice:
        s = self.ext_index(j)
        return slice(s, s + 6)

    def ego(self) -> "NavState":
        return replace(self, extrinsics={})

    def with_extrinsics(self, extrinsics: dict) -> "NavState":
        return replace(self, extrinsics=dict(extrinsics))

    def layout(self) -> tuple:
        return tuple(self.ext_ids)


def boxplus(x: NavState, delta) -> NavState:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (x.dim,):
        raise ContractError(f"tangent of length {delta.shape} does not match state dim {x.dim}")
    ext = {}
    for k, (j, T) in enumerate(x.extrinsics.items()):
        s = EGO_DIM + 6 * k
        ext[j] = Pose(T.R @ exp_so3(delta[s : s + 3]), T.t + delta[s + 3 : s + 6])
    return NavState(
        R=x.R @ exp_so3(delta[ROT]),
        p=x.p + delta[POS],
        v=x.v + delta[VEL],
        bg=x.bg + delta[BG],
        ba=x.ba + delta[BA],
        g=x.g + delta[GRAV],
        extrinsics=ext,
    )


def boxminus(a: NavState, b: NavState) -> np.ndarray:
    if a.layout() != b.layout():
        raise ContractError(f"layout mismatch: {a.layout()} vs {b.layout()}")
    out = np.empty(a.dim)
    out[ROT] = log_so3(b.R.T @ a.R)
    out[POS] = a.p - b.p
    out[VEL] = a.v - b.v
    out[BG] = a.bg - b.bg
    out[BA] = a.ba - b.ba
    out[GRAV] = a.g - b.g
    for k, j in enumerate(a.ext_ids):
        s = EGO_DIM + 6 * k
        Ta, Tb = a.extrinsics[j], b.extrinsics[j]
        out[s : s + 3] = log_so3(Tb.R.T @ Ta.R)
        out[s + 3 : s + 6] = Ta.t - Tb.t
    return out


def append_extrinsic(x: NavState, P, j: int, T0: Pose, cov0=None):
    """Add teammate ``j``'s global extrinsic with zero cross-covariance."""
    if j in x.extrinsics:
        raise DuplicateExtrinsicError(f"teammate {j} already has an extrinsic block")
    cov0 = DEFAULT_EXTRINSIC_COV if cov0 is None else np.asarray(cov0, dtype=float)
    ext = dict(x.extrinsics)
    ext[int(j)] = T0
    x_new = x.with_extrinsics(ext)
    P = np.asarray(P, dtype=float)
    n = x_new.dim
    P_new = np.zeros((n, n))
    old_idx = state_indices(x_new, [i for i in x.ext_ids])
    P_new[np.ix_(old_idx, old_idx)] = P
    s = x_new.ext_slice(j)
    P_new[s, s] = cov0
    return x_new, P_new


def state_indices(x: NavState, ext_ids, ego: bool = True) -> np.ndarray:
    """Tangent indices of the ego block (optional) plus the listed extrinsics."""
    parts = [np.arange(EGO_DIM)] if ego else []
    for j in sorted(ext_ids):
        s = x.ext_index(j)
        parts.append(np.arange(s, s + 6))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


@dataclass
class Partition:
    observed: tuple
    unobserved: tuple
    x1: NavState
    P11: np.ndarray
    x2: dict
    P22: np.ndarray
    idx1: np.ndarray
    idx2: np.ndarray

    def exogenous(self) -> dict:
        """Marginalized extrinsics with their 6x6 covariance, keyed by teammate ID."""
        out = {}
        for k, j in enumerate(sorted(self.x2)):
            s = slice(6 * k, 6 * k + 6)
            out[j] = (self.x2[j], self.P22[s, s])
        return out


def partition(x: NavState, P, observed) -> Partition:
    observed = set(int(j) for j in observed)
    unknown = observed - set(x.ext_ids)
    if unknown:
        raise ContractError(f"observed teammates without extrinsic block: {sorted(unknown)}")
    A = tuple(j for j in x.ext_ids if j in observed)
    B = tuple(j for j in x.ext_ids if j not in observed)
    idx1 = state_indices(x, A)
    idx2 = state_indices(x, B, ego=False)
    P = np.asarray(P, dtype=float)
    return Partition(
        observed=A,
        unobserved=B,
        x1=x.with_extrinsics({j: x.extrinsics[j] for j in A}),
        P11=P[np.ix_(idx1, idx1)].copy(),
        x2={j: x.extrinsics[j] for j in B},
        P22=P[np.ix_(idx2, idx2)].copy(),
        idx1=idx1,
        idx2=idx2,
    )


def reinitialize(x1: NavState, P11, x2: dict, P22):
    """Stack the updated sub-state with the untouched one, block-diagonal covariance."""
    overlap = set(x1.ext_ids) & set(x2)
    if overlap:
        raise ContractError(f"teammates present in both sub-states: {sorted(overlap)}")
    P11 = np.asarray(P11, dtype=float)
    P22 = np.asarray(P22, dtype=float)
    if P11.shape != (x1.dim, x1.dim) or P22.shape != (6 * len(x2), 6 * len(x2)):
        raise ContractError("covariance shapes do not match sub-state layouts")
    ext = dict(x1.extrinsics)
    ext.update(x2)
    x = x1.with_extrinsics(ext)
    idx1 = state_indices(x, x1.ext_ids)
    idx2 = state_indices(x, list(x2), ego=False)
    P = np.zeros((x.dim, x.dim))
    P[np.ix_(idx1, idx1)] = P11
    P[np.ix_(idx2, idx2)] = P22
    return x, P
