import numpy as np
import pytest

from conftest import random_pose, random_rotation, random_spd, random_state
from swarmest.geometry import Pose, exp_so3, rot_z
from swarmest.measurements import (
    MutualObservation,
    PlaneBatch,
    PlaneCorrespondence,
    TeammateStatePacket,
    active_obs_residual,
    degeneration_metric,
    passive_obs_residual,
    point_residual,
)
from swarmest.state import NavState, boxplus

EPS = 1e-6


def fd_jacobian(f, x, eps=EPS):
    """Central differences of f(x (+) d) w.r.t. the tangent d."""
    cols = []
    for k in range(x.dim):
        d = np.zeros(x.dim)
        d[k] = eps
        cols.append((np.atleast_1d(f(boxplus(x, d))) - np.atleast_1d(f(boxplus(x, -d)))) / (2 * eps))
    return np.stack(cols, axis=-1)


def rel_err(A, B):
    return np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-12)


def random_packet(rng, sender=2):
    return TeammateStatePacket(sender, rng.uniform(0, 10), random_pose(rng), rng.normal(size=3),
                               random_spd(rng, 6, 0.01))


def random_corr(rng):
    u = rng.normal(size=3)
    return PlaneCorrespondence(rng.normal(size=3) * 5, u / np.linalg.norm(u), rng.normal(size=3) * 5)


# ---------------------------------------------------------------- point-to-plane


def test_point_residual_direct_substitution():
    c = PlaneCorrespondence([1, 2, 3], [0, 0, 1], [0, 0, 0])
    h, J, _ = point_residual(NavState(), c)
    assert h == pytest.approx(3.0)


def test_point_on_plane_at_true_pose_is_zero():
    rng = np.random.default_rng(0)
    x = random_state(rng)
    q = rng.normal(size=3)
    u = np.array([0.0, 0.6, 0.8])
    w = q + np.cross(u, rng.normal(size=3))  # world point on the plane
    c = PlaneCorrespondence(x.R.T @ (w - x.p), u, q)
    assert abs(point_residual(x, c)[0]) < 1e-12


def test_point_jacobian_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = random_state(rng)
        c = random_corr(rng)
        J = point_residual(x, c)[1]
        Jfd = fd_jacobian(lambda y: point_residual(y, c)[0], x)[0]
        worst = max(worst, rel_err(J, Jfd))
    assert worst < 1e-5


def test_point_effective_variance():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    c = random_corr(rng)
    S = random_spd(rng, 3, 1e-4)
    _, _, var = point_residual(x, c, S)
    a = c.normal @ x.R
    assert var == pytest.approx(a @ S @ a)


# ---------------------------------------------------------------- active


def test_active_identity_zero_residual():
    x = NavState(extrinsics={2: Pose.identity()})
    pk = TeammateStatePacket(2, 1.0, Pose(np.eye(3), [1, 0, 0]), np.zeros(3), np.zeros((6, 6)))
    obs = MutualObservation("active", 1, 2, [1, 0, 0], 1.0)
    res = active_obs_residual(x, obs, pk, 0.0)
    assert np.allclose(res.r, 0)


def test_active_compensation_shift():
    x = NavState(extrinsics={2: Pose.identity()})
    pk = TeammateStatePacket(2, 1.0, Pose(np.eye(3), [1, 0, 0]), [1, 0, 0], np.zeros((6, 6)))
    obs = MutualObservation("active", 1, 2, [1, 0, 0], 1.05)
    # stamp gap 0.05 s plus tau 0.05 s -> 0.1 s of constant velocity
    res = active_obs_residual(x, obs, pk, 0.05)
    assert np.allclose(obs.position - res.r, [1.1, 0, 0])
    # uncompensated: the clock offset is ignored, the stamp gap is not
    off = active_obs_residual(x, obs, pk, 0.05, compensate=False)
    assert np.allclose(obs.position - off.r, [1.05, 0, 0])


def test_active_matches_brute_force_frame_chain():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = random_state(rng, (2,))
        pk = random_packet(rng)
        obs = MutualObservation("active", 1, 2, rng.normal(size=3), pk.stamp + 0.03)
        tau = rng.uniform(-0.5, 0.5)
        res = active_obs_residual(x, obs, pk, tau)
        dt = obs.stamp - pk.stamp + tau
        # compose 4x4 homogeneous transforms independently
        def H(T):
            M = np.eye(4)
            M[:3, :3], M[:3, 3] = T.R, T.t
            return M
        chain = np.linalg.inv(H(x.pose)) @ H(x.extrinsics[2])
        pred = (chain @ np.r_[pk.pose.t + pk.velocity * dt, 1.0])[:3]
        assert np.allclose(obs.position - res.r, pred, atol=1e-10)


def test_active_missing_extrinsic_returns_none():
    rng = np.random.default_rng(4)
    obs = MutualObservation("active", 1, 9, [1, 0, 0], 0.0)
    assert active_obs_residual(random_state(rng, (2,)), obs, random_packet(rng, 9), 0.0) is None


def _active_h(x, obs, pk, tau):
    return obs.position - active_obs_residual(x, obs, pk, tau).r


def test_active_jacobian_finite_differences():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        x = random_state(rng, (2, 4))
        pk = random_packet(rng)
        obs = MutualObservation("active", 1, 2, rng.normal(size=3), pk.stamp + rng.uniform(-0.1, 0.1))
        tau = rng.uniform(-0.5, 0.5)
        J = active_obs_residual(x, obs, pk, tau).full_jacobian(x)
        Jfd = fd_jacobian(lambda y: _active_h(y, obs, pk, tau), x)
        worst = max(worst, rel_err(J, Jfd))
    assert worst < 1e-5


def test_active_noise_projection_matches_teammate_position_jacobian():
    rng = np.random.default_rng(6)
    x = random_state(rng, (2,))
    pk = random_packet(rng)
    obs = MutualObservation("active", 1, 2, rng.normal(size=3), pk.stamp, np.zeros((3, 3)))
    res = active_obs_residual(x, obs, pk, 0.0)
    M = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = EPS
        up = TeammateStatePacket(2, pk.stamp, Pose(pk.pose.R, pk.pose.t + e), pk.velocity, pk.pose_cov)
        dn = TeammateStatePacket(2, pk.stamp, Pose(pk.pose.R, pk.pose.t - e), pk.velocity, pk.pose_cov)
        M[:, k] = (_active_h(x, obs, up, 0.0) - _active_h(x, obs, dn, 0.0)) / (2 * EPS)
    assert np.allclose(res.cov, M @ pk.position_cov @ M.T, atol=1e-9)


def test_exogenous_extrinsic_inflates_covariance():
    rng = np.random.default_rng(7)
    x = random_state(rng, ())
    T = random_pose(rng)
    Pe = random_spd(rng, 6, 1e-3)
    pk = random_packet(rng)
    obs = MutualObservation("active", 1, 2, rng.normal(size=3), pk.stamp)
    base = active_obs_residual(x, obs, pk, 0.0, extrinsic=T)
    infl = active_obs_residual(x, obs, pk, 0.0, extrinsic=(T, Pe))
    assert infl.ext_id is None and np.allclose(base.r, infl.r)
    assert np.allclose(infl.cov - base.cov, infl.H_ext @ Pe @ infl.H_ext.T)


# ---------------------------------------------------------------- passive


def test_passive_identity_zero_residual():
    x = NavState(p=[2, 0, 0], extrinsics={3: Pose.identity()})
    pk = TeammateStatePacket(3, 0.0, Pose.identity(), np.zeros(3), np.zeros((6, 6)))
    obs = MutualObservation("passive", 3, 1, [2, 0, 0], 0.0)
    assert np.allclose(passive_obs_residual(x, obs, pk, 0.0, 0.0).r, 0)


def test_passive_compensation_shift_along_y():
    x = NavState(v=[0, 1, 0], extrinsics={3: Pose.identity()})
    pk = TeammateStatePacket(3, 0.05, Pose.identity(), np.zeros(3), np.zeros((6, 6)))
    obs = MutualObservation("passive", 3, 1, [0, 0, 0], 0.05)
    res = passive_obs_residual(x, obs, pk, 0.0, 0.0)
    assert np.allclose(obs.position - res.r, [0, 0.05, 0])


def test_passive_velocity_jacobian_iff_mismatch():
    rng = np.random.default_rng(8)
    x = random_state(rng, (3,))
    pk = random_packet(rng, 3)
    obs = MutualObservation("passive", 3, 1, rng.normal(size=3), 4.0)
    J0 = passive_obs_residual(x, obs, pk, 0.0, 4.0).H_ego[:, 6:9]
    J1 = passive_obs_residual(x, obs, pk, 0.0, 3.9).H_ego[:, 6:9]
    assert np.all(J0 == 0) and np.linalg.norm(J1) > 0


def _passive_h(x, obs, pk, tau, t):
    return obs.position - passive_obs_residual(x, obs, pk, tau, t).r


def test_passive_jacobian_finite_differences():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        x = random_state(rng, (1, 3))
        pk = random_packet(rng, 3)
        obs = MutualObservation("passive", 3, 7, rng.normal(size=3), pk.stamp)
        tau, t = rng.uniform(-0.5, 0.5), pk.stamp + rng.uniform(-0.2, 0.2)
        J = passive_obs_residual(x, obs, pk, tau, t).full_jacobian(x)
        Jfd = fd_jacobian(lambda y: _passive_h(y, obs, pk, tau, t), x)
        worst = max(worst, rel_err(J, Jfd))
    assert worst < 1e-5


def test_passive_noise_projection_matches_teammate_pose_jacobian():
    rng = np.random.default_rng(10)
    x = random_state(rng, (3,))
    pk = random_packet(rng, 3)
    obs = MutualObservation("passive", 3, 1, rng.normal(size=3), pk.stamp, np.zeros((3, 3)))
    res = passive_obs_residual(x, obs, pk, 0.0, pk.stamp)
    G = np.zeros((3, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = EPS
        f = lambda T: _passive_h(x, obs, TeammateStatePacket(3, pk.stamp, T, pk.velocity, pk.pose_cov), 0.0, pk.stamp)
        G[:, k] = (f(pk.pose.boxplus(d)) - f(pk.pose.boxplus(-d))) / (2 * EPS)
    assert np.allclose(res.cov, G @ pk.pose_cov @ G.T, atol=1e-9)


def test_mutual_residuals_equivariant_under_common_frame_change():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = random_state(rng, (2,))
        pk = random_packet(rng)
        S = random_pose(rng)
        # re-express our global frame by S: poses and the extrinsic both move
        xs = NavState((S @ x.pose).R, (S @ x.pose).t, S.R @ x.v, x.bg, x.ba, S.R @ x.g,
                      {2: S @ x.extrinsics[2]})
        obs = MutualObservation("active", 1, 2, rng.normal(size=3), pk.stamp + 0.02)
        assert np.allclose(active_obs_residual(x, obs, pk, 0.01).r, active_obs_residual(xs, obs, pk, 0.01).r, atol=1e-9)
        pobs = MutualObservation("passive", 2, 1, rng.normal(size=3), pk.stamp)
        a = passive_obs_residual(x, pobs, pk, 0.01, pk.stamp - 0.05).r
        b = passive_obs_residual(xs, pobs, pk, 0.01, pk.stamp - 0.05).r
        assert np.allclose(a, b, atol=1e-9)


# ---------------------------------------------------------------- degeneration


def _six_planes(x, rng, n=60):
    corrs = []
    normals = [np.eye(3)[k] * s for k in range(3) for s in (1, -1)]
    for i in range(n):
        u = normals[i % 6]
        q = -5 * u + rng.normal(size=3) * 0.1
        w = q + np.cross(u, rng.normal(size=3) * 3)
        corrs.append(PlaneCorrespondence(x.R.T @ (w - x.p), u, q))
    return corrs


def test_degeneration_empty_is_zero():
    assert degeneration_metric(NavState(), []) == 0.0


def test_degeneration_single_plane_is_degenerate():
    rng = np.random.default_rng(12)
    corrs = [PlaneCorrespondence([*rng.normal(size=2), 0.0], [0, 0, 1], [0, 0, 0]) for _ in range(50)]
    J = PlaneBatch.from_list(corrs)
    assert degeneration_metric(NavState(), corrs) < 1e-12
    # SVD oracle on the stacked 6-column matrix
    rows = np.hstack([np.cross(J.points, J.normals), J.normals]) / np.sqrt(len(corrs))
    assert np.linalg.svd(rows, compute_uv=False)[-1] < 1e-12


def test_degeneration_six_planes_well_conditioned():
    rng = np.random.default_rng(13)
    x = random_state(rng, ())
    assert degeneration_metric(x, _six_planes(x, rng)) > 0.1


def test_degeneration_invariant_to_frame_rotation():
    rng = np.random.default_rng(14)
    x = random_state(rng, ())
    corrs = _six_planes(x, rng)
    Q = random_rotation(rng)
    xq = NavState(Q @ x.R, Q @ x.p, extrinsics={})
    rot = [PlaneCorrespondence(c.point, Q @ c.normal, Q @ c.anchor) for c in corrs]
    assert degeneration_metric(x, corrs) == pytest.approx(degeneration_metric(xq, rot), rel=1e-9)


def test_corridor_is_degenerate_along_axis():
    from swarmest.simworld import SensorRig, corridor, sample_planes

    w = corridor(length=200)
    T = Pose(rot_z(0.3), [100, 0.2, 1.5])
    b = sample_planes(w, T, SensorRig(points_per_scan=200), np.random.default_rng(0))
    x = NavState(T.R, T.t)
    assert degeneration_metric(x, b) < 1e-9
    # the null direction is pure x translation
    _, s, Vt = np.linalg.svd(np.hstack([np.cross(b.points, b.normals @ x.R), b.normals]))
    null = Vt[-1]
    assert abs(abs(null[3]) - 1) < 1e-6
