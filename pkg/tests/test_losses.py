import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiralarm.losses import (
    LossConfig,
    base_distances,
    dynamic_loss,
    huber,
    internal_error,
    static_loss,
)
from spiralarm.trajectory import Trajectory


def traj_from_pos(pos, rate=120.0):
    pos = np.asarray(pos, dtype=float)
    F, N = pos.shape[:2]
    quat = np.zeros((F, N, 4))
    quat[:, :, 0] = 1.0
    return Trajectory(rate, np.arange(F) / rate, pos, quat)


def random_rigid_transform(rng):
    A = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(A)
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    t = rng.normal(0.0, 2.0, 3)
    return q, t


class TestHuber:
    def test_zero(self):
        assert huber(0.0, 1.0) == 0.0

    def test_quadratic_branch(self):
        assert huber(0.5, 1.0) == pytest.approx(0.125, abs=1e-15)

    def test_linear_branch(self):
        assert huber(3.0, 1.0) == pytest.approx(2.5, abs=1e-15)

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            huber(1.0, 0.0)

    @given(r=st.floats(-50, 50), delta=st.floats(0.01, 10))
    @settings(max_examples=200, deadline=None)
    def test_even_and_nonnegative(self, r, delta):
        assert huber(r, delta) == huber(-r, delta)
        assert huber(r, delta) >= 0.0

    @given(delta=st.floats(0.01, 10))
    @settings(max_examples=50, deadline=None)
    def test_continuity_and_smoothness_at_delta(self, delta):
        eps = 1e-9 * delta
        below = huber(delta - eps, delta)
        above = huber(delta + eps, delta)
        assert abs(above - below) < 1e-6 * max(delta * delta, 1e-12)
        # one-sided slopes both approach delta
        slope_below = (huber(delta, delta) - huber(delta - 1e-6, delta)) / 1e-6
        slope_above = (huber(delta + 1e-6, delta) - huber(delta, delta)) / 1e-6
        assert slope_below == pytest.approx(delta, rel=1e-3)
        assert slope_above == pytest.approx(delta, rel=1e-3)

    @given(delta=st.floats(0.1, 5), rs=st.lists(st.floats(0, 20), min_size=2,
                                                max_size=10))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_abs(self, delta, rs):
        rs = sorted(rs)
        vals = [huber(r, delta) for r in rs]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


class TestStaticLoss:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        pose = rng.normal(size=(5, 3))
        assert static_loss(pose, pose) == 0.0

    def test_hand_computed(self):
        # d_sim = [1.1, 2.0], d_real = [1.0, 2.0]: (huber(0.1) + 0)/2 = 0.0025
        sim = np.array([[0.0, 0, 0], [1.1, 0, 0], [0, 2.0, 0]])
        real = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0]])
        cfg = LossConfig(epsilon=1e-300)
        assert static_loss(sim, real, cfg) == pytest.approx(0.0025, abs=1e-12)

    def test_isometry_invariance(self):
        rng = np.random.default_rng(1)
        sim = rng.normal(size=(6, 3))
        real = rng.normal(size=(6, 3))
        base = static_loss(sim, real)
        for _ in range(20):
            R, t = random_rigid_transform(rng)
            assert static_loss(sim @ R.T + t, real @ R.T + t) == pytest.approx(
                base, rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            static_loss(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_multi_condition_mean(self):
        rng = np.random.default_rng(2)
        sims = [rng.normal(size=(4, 3)) for _ in range(3)]
        reals = [rng.normal(size=(4, 3)) for _ in range(3)]
        per = [static_loss(s, r) for s, r in zip(sims, reals)]
        assert static_loss(sims, reals) == pytest.approx(np.mean(per), rel=1e-12)


class TestDynamicLoss:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(3)
        traj = traj_from_pos(rng.normal(size=(10, 4, 3)))
        assert dynamic_loss(traj, traj) == 0.0

    def test_single_frame_has_no_velocity_term(self):
        rng = np.random.default_rng(4)
        sim = traj_from_pos(rng.normal(size=(1, 3, 3)))
        real = traj_from_pos(rng.normal(size=(1, 3, 3)))
        cfg = LossConfig()
        ds = base_distances(sim.pos)[0]
        dr = base_distances(real.pos)[0]
        r = (ds - dr) / (np.abs(dr) + cfg.epsilon)
        expect = cfg.w_pos * float(np.mean(huber(r, cfg.delta_pos)))
        assert dynamic_loss(sim, real, cfg) == pytest.approx(expect, rel=1e-12)

    def test_hand_computed_two_frames(self):
        # one base distance: d_sim = [1.0, 1.2], d_real = [1.1, 1.0];
        # value frozen from arbitrary-precision evaluation with eps=1e-6
        sim = traj_from_pos([[[0, 0, 0], [1.0, 0, 0]],
                             [[0, 0, 0], [1.2, 0, 0]]])
        real = traj_from_pos([[[0, 0, 0], [1.1, 0, 0]],
                              [[0, 0, 0], [1.0, 0, 0]]])
        got = dynamic_loss(sim, real, LossConfig())
        assert got == pytest.approx(0.3834417644071579, abs=1e-9)

    def test_unaligned_rejected(self):
        rng = np.random.default_rng(5)
        sim = traj_from_pos(rng.normal(size=(5, 3, 3)))
        real = traj_from_pos(rng.normal(size=(6, 3, 3)))
        with pytest.raises(ValueError):
            dynamic_loss(sim, real)
        shifted = Trajectory(sim.rate_hz, sim.t + 0.5, sim.pos, sim.quat)
        with pytest.raises(ValueError, match="align"):
            dynamic_loss(sim, shifted)

    def test_velocity_term_can_be_disabled(self):
        rng = np.random.default_rng(6)
        sim = traj_from_pos(rng.normal(size=(8, 3, 3)))
        real = traj_from_pos(rng.normal(size=(8, 3, 3)))
        cfg = LossConfig(w_pos=1.0, w_vel=0.0)
        assert cfg.validate().velocity_term_disabled
        got = dynamic_loss(sim, real, cfg)
        assert np.isfinite(got)

    def test_trial_averaging(self):
        rng = np.random.default_rng(7)
        sims = [traj_from_pos(rng.normal(size=(6, 3, 3))) for _ in range(2)]
        reals = [traj_from_pos(rng.normal(size=(6, 3, 3))) for _ in range(2)]
        per = [dynamic_loss(s, r) for s, r in zip(sims, reals)]
        assert dynamic_loss(sims, reals) == pytest.approx(np.mean(per), rel=1e-12)


class TestInternalError:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(8)
        traj = traj_from_pos(rng.normal(size=(7, 5, 3)))
        assert internal_error(traj, traj) == 0.0

    def test_uniform_stretch_closed_form(self):
        # straight chain with unit inter-segment distances, stretched by
        # 1.1: mean_i |0.1 * (i-1)| for i=2..5 equals 0.25
        N = 5
        pos = np.zeros((1, N, 3))
        pos[0, :, 2] = np.arange(N)
        stretched = pos * 1.1
        sim = traj_from_pos(pos)
        real = traj_from_pos(stretched)
        assert internal_error(sim, real) == pytest.approx(0.25, abs=1e-12)

    def test_common_isometry_invariance(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(4, 6, 3))
        b = rng.normal(size=(4, 6, 3))
        base = internal_error(traj_from_pos(a), traj_from_pos(b))
        R, t = random_rigid_transform(rng)
        got = internal_error(traj_from_pos(a @ R.T + t),
                             traj_from_pos(b @ R.T + t))
        assert got == pytest.approx(base, rel=1e-9)

    def test_one_sided_transform_changes_it(self):
        # distances are measured to segment 1, which moves with the arm:
        # transforming only one trajectory is NOT an invariance in general
        rng = np.random.default_rng(10)
        a = rng.normal(size=(2, 4, 3))
        b = rng.normal(size=(2, 4, 3))
        base = internal_error(traj_from_pos(a), traj_from_pos(b))
        S = a * 1.5    # non-rigid scaling of one side
        got = internal_error(traj_from_pos(S), traj_from_pos(b))
        assert got != pytest.approx(base, rel=1e-6)


class TestZeroIffMatching:
    @given(seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_losses_zero_iff_distance_sets_match(self, seed):
        rng = np.random.default_rng(seed)
        pos = rng.normal(size=(3, 4, 3))
        traj = traj_from_pos(pos)
        # rotating each frame rigidly keeps all base distances: loss 0
        R, t = random_rigid_transform(rng)
        rot = traj_from_pos(pos @ R.T + t)
        assert dynamic_loss(rot, traj) < 1e-24
        assert internal_error(rot, traj) < 1e-13
        # perturbing one non-base segment changes a distance: loss > 0
        pos2 = pos.copy()
        pos2[1, 2] += 0.05
        assert internal_error(traj_from_pos(pos2), traj) > 1e-6


class TestLossConfig:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            LossConfig(w_pos=0.5, w_vel=0.4).validate()

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(delta_pos=-1.0).validate()
        with pytest.raises(ValueError):
            LossConfig(w_pos=1.2, w_vel=-0.2).validate()
