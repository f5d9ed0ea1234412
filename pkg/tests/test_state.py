import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose, random_spd, random_state
from swarmest.geometry import Pose, rotation_angle
from swarmest.state import (
    DEFAULT_EXTRINSIC_COV,
    EGO_DIM,
    ContractError,
    DuplicateExtrinsicError,
    NavState,
    append_extrinsic,
    boxminus,
    boxplus,
    partition,
    reinitialize,
    state_indices,
)

seeds = st.integers(0, 2**32 - 1)


def unit_ball_tangent(rng, n):
    d = rng.normal(size=n)
    return d / np.linalg.norm(d) * rng.uniform(0, 1)


def test_boxplus_zero_is_identity():
    x = random_state(np.random.default_rng(0))
    y = boxplus(x, np.zeros(x.dim))
    assert np.allclose(boxminus(y, x), 0)


def test_two_extrinsics_consume_30_dim_tangent():
    x = random_state(np.random.default_rng(1), ext_ids=(3, 7))
    assert x.dim == 30
    boxplus(x, np.zeros(30))
    with pytest.raises(ContractError):
        boxplus(x, np.zeros(24))


@settings(max_examples=100)
@given(seeds)
def test_boxminus_after_boxplus(seed):
    rng = np.random.default_rng(seed)
    x = random_state(rng)
    d = unit_ball_tangent(rng, x.dim)
    assert np.allclose(boxminus(boxplus(x, d), x), d, atol=1e-8)


@settings(max_examples=100)
@given(seeds)
def test_boxplus_of_difference_recovers_state(seed):
    rng = np.random.default_rng(seed)
    x, y = random_state(rng), random_state(rng)
    z = boxplus(y, boxminus(x, y))
    assert rotation_angle(z.R, x.R) < 1e-8
    assert np.allclose(z.p, x.p, atol=1e-8) and np.allclose(z.g, x.g, atol=1e-8)
    for j in x.ext_ids:
        assert rotation_angle(z.extrinsics[j].R, x.extrinsics[j].R) < 1e-8
        assert np.allclose(z.extrinsics[j].t, x.extrinsics[j].t, atol=1e-8)


def test_boxminus_layout_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ContractError):
        boxminus(random_state(rng, (1,)), random_state(rng, (2,)))


def test_pure_translation_difference_has_zero_rotation():
    x = random_state(np.random.default_rng(3))
    y = NavState(x.R, x.p + 1.0, x.v, x.bg, x.ba, x.g, x.extrinsics)
    d = boxminus(y, x)
    assert np.allclose(d[:3], 0) and np.allclose(d[3:6], 1.0)


def test_extrinsics_are_kept_sorted():
    x = NavState(extrinsics={9: Pose.identity(), 2: Pose.identity(), 5: Pose.identity()})
    assert x.ext_ids == [2, 5, 9]
    assert x.ext_index(5) == EGO_DIM + 6


def test_append_extrinsic():
    x, P = NavState(), np.eye(18)
    T0 = random_pose(np.random.default_rng(4))
    x2, P2 = append_extrinsic(x, P, 4, T0)
    assert x2.dim == 24 and P2.shape == (24, 24)
    assert x2.extrinsics[4] is T0
    assert np.all(P2[:18, 18:] == 0) and np.all(P2[18:, :18] == 0)
    assert np.array_equal(P2[18:, 18:], DEFAULT_EXTRINSIC_COV)
    with pytest.raises(DuplicateExtrinsicError):
        append_extrinsic(x2, P2, 4, T0)


def test_append_keeps_existing_blocks_in_place():
    rng = np.random.default_rng(5)
    x = random_state(rng, (2, 8))
    P = random_spd(rng, x.dim)
    x2, P2 = append_extrinsic(x, P, 5, random_pose(rng))
    idx = state_indices(x2, [2, 8])
    assert np.array_equal(P2[np.ix_(idx, idx)], P)
    s = x2.ext_slice(5)
    assert np.all(P2[s, :][:, idx] == 0)


def test_partition_all_and_none():
    rng = np.random.default_rng(6)
    x = random_state(rng, (2, 5))
    P = random_spd(rng, x.dim)
    full = partition(x, P, [2, 5])
    assert full.P22.shape == (0, 0) and not full.x2
    none = partition(x, P, [])
    assert none.x1.dim == 18
    with pytest.raises(ContractError):
        partition(x, P, [3])


def test_partition_matches_permutation_oracle():
    rng = np.random.default_rng(7)
    x = random_state(rng, (2, 5))
    P = random_spd(rng, x.dim)
    part = partition(x, P, [5])
    # oracle: permute rows/cols as [ego, ext5, ext2] and take leading 24x24 block
    perm = np.r_[0:18, 24:30, 18:24]
    Pp = P[np.ix_(perm, perm)]
    assert np.array_equal(part.P11, Pp[:24, :24])
    assert np.array_equal(part.P22, Pp[24:, 24:])


@settings(max_examples=50)
@given(seeds, st.sets(st.sampled_from([1, 4, 6]), max_size=3))
def test_partition_reinitialize_keeps_means_and_diagonal_blocks(seed, observed):
    rng = np.random.default_rng(seed)
    x = random_state(rng, (1, 4, 6))
    P = random_spd(rng, x.dim)
    part = partition(x, P, observed)
    assert part.x1.dim + 6 * len(part.x2) == x.dim
    assert not set(part.observed) & set(part.unobserved)
    y, Q = reinitialize(part.x1, part.P11, part.x2, part.P22)
    assert np.array_equal(boxminus(y, x), np.zeros(x.dim))
    i1 = state_indices(x, part.observed)
    i2 = state_indices(x, part.unobserved, ego=False)
    assert np.array_equal(Q[np.ix_(i1, i1)], P[np.ix_(i1, i1)])
    assert np.array_equal(Q[np.ix_(i2, i2)], P[np.ix_(i2, i2)])
    assert np.all(Q[np.ix_(i1, i2)] == 0)
    assert np.allclose(Q, Q.T)
    assert np.min(np.linalg.eigvalsh(Q)) > -1e-10


def test_reinitialize_rejects_overlap_and_shapes():
    rng = np.random.default_rng(8)
    x = random_state(rng, (1, 2))
    part = partition(x, np.eye(x.dim), [1])
    with pytest.raises(ContractError):
        reinitialize(part.x1, part.P11, {1: Pose.identity()}, np.eye(6))
    with pytest.raises(ContractError):
        reinitialize(part.x1, np.eye(3), part.x2, part.P22)
