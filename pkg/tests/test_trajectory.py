import math

import numpy as np
import pytest

from spiralarm.trajectory import (
    AlignmentError,
    Trajectory,
    TrajectoryError,
    align,
    butterworth_lowpass,
    equilibrium_poses,
    hemispherize,
    load_csv,
    save_csv,
    with_position_noise,
)


def make_traj(F=24, N=3, rate=120.0, seed=0, t0=0.0):
    rng = np.random.default_rng(seed)
    t = t0 + np.arange(F) / rate
    pos = rng.normal(0.0, 0.1, (F, N, 3))
    quat = rng.normal(size=(F, N, 4))
    quat /= np.linalg.norm(quat, axis=2, keepdims=True)
    return Trajectory(rate_hz=rate, t=t, pos=pos, quat=quat)


def sinusoid_traj(freq_hz, F=600, rate=120.0, N=1):
    t = np.arange(F) / rate
    pos = np.zeros((F, N, 3))
    pos[:, 0, 0] = np.sin(2 * np.pi * freq_hz * t)
    quat = np.zeros((F, N, 4))
    quat[:, :, 0] = 1.0
    return Trajectory(rate_hz=rate, t=t, pos=pos, quat=quat)


class TestCsv:
    def test_round_trip(self, tmp_path):
        traj = make_traj()
        path = tmp_path / "t.csv"
        save_csv(traj, path)
        back = load_csv(path)
        assert back.rate_hz == traj.rate_hz
        assert np.allclose(back.t, traj.t, atol=1e-9)
        assert np.allclose(back.pos, traj.pos, rtol=1e-8, atol=1e-9)
        assert np.allclose(back.quat, traj.quat, rtol=1e-8, atol=1e-9)

    def test_save_is_deterministic(self, tmp_path):
        traj = make_traj()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(traj, p1)
        save_csv(traj, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file_errors_line_1(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(TrajectoryError) as err:
            load_csv(path)
        assert err.value.line == 1

    def test_missing_segment(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(
            "t,seg,x,y,z,qw,qx,qy,qz\n"
            "0,1,0,0,0,1,0,0,0\n"
            "0,2,0,0,0.1,1,0,0,0\n"
            "0.1,1,0,0,0,1,0,0,0\n"
        )
        with pytest.raises(TrajectoryError, match="missing segment"):
            load_csv(path)

    def test_shuffled_segments_normalized(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(
            "t,seg,x,y,z,qw,qx,qy,qz\n"
            "0,2,0,0,0.2,1,0,0,0\n"
            "0,1,0,0,0.1,1,0,0,0\n"
        )
        traj = load_csv(path)
        assert traj.pos[0, 0, 2] == 0.1
        assert traj.pos[0, 1, 2] == 0.2

    def test_non_monotone_time(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text(
            "t,seg,x,y,z,qw,qx,qy,qz\n"
            "0.1,1,0,0,0,1,0,0,0\n"
            "0.0,1,0,0,0,1,0,0,0\n"
        )
        with pytest.raises(TrajectoryError, match="increasing"):
            load_csv(path)

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(
            "# a comment\n"
            "# rate_hz=60\n"
            "t,seg,x,y,z,qw,qx,qy,qz\n"
            "\n"
            "0,1,0,0,0,1,0,0,0\n"
            "# trailing comment\n"
            "0.0166666667,1,0,0,0,1,0,0,0\n"
        )
        traj = load_csv(path)
        assert traj.rate_hz == 60.0
        assert traj.n_frames == 2

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("t,seg,x,y,z,qw,qx,qy,qz\n0,1,0,0\n")
        with pytest.raises(TrajectoryError) as err:
            load_csv(path)
        assert err.value.line == 2


class TestValidate:
    def test_non_uniform_spacing(self):
        traj = make_traj()
        t = traj.t.copy()
        t[-1] += 5e-3
        with pytest.raises(TrajectoryError, match="non-uniform"):
            Trajectory(traj.rate_hz, t, traj.pos, traj.quat).validate()

    def test_bad_quaternion_norm(self):
        traj = make_traj()
        quat = traj.quat.copy()
        quat[0, 0] *= 1.5
        with pytest.raises(TrajectoryError, match="unit-norm"):
            Trajectory(traj.rate_hz, traj.t, traj.pos, quat).validate()


class TestButterworth:
    def test_constant_signal_unchanged(self):
        traj = sinusoid_traj(1.0)
        const = Trajectory(traj.rate_hz, traj.t,
                           np.full_like(traj.pos, 0.37), traj.quat)
        out = butterworth_lowpass(const, 10.0, 2)
        assert np.max(np.abs(out.pos - 0.37)) < 1e-6

    def test_passband_amplitude_preserved(self):
        # sinusoid at cutoff/10: amplitude within 1%
        cutoff = 10.0
        traj = sinusoid_traj(cutoff / 10.0)
        out = butterworth_lowpass(traj, cutoff, 2)
        mid = slice(100, 500)
        amp = np.max(np.abs(out.pos[mid, 0, 0]))
        assert amp == pytest.approx(1.0, rel=0.01)

    def test_nyquist_attenuation_matches_analytic(self):
        # alternating +-1 at Nyquist, cutoff rate/8, order 2: the
        # forward-backward pass squares the analog magnitude response
        rate = 120.0
        F = 600
        t = np.arange(F) / rate
        pos = np.zeros((F, 1, 3))
        pos[:, 0, 0] = np.where(np.arange(F) % 2 == 0, 1.0, -1.0)
        quat = np.zeros((F, 1, 4))
        quat[:, :, 0] = 1.0
        traj = Trajectory(rate, t, pos, quat)
        out = butterworth_lowpass(traj, rate / 8.0, 2)
        residual = np.max(np.abs(out.pos[100:500, 0, 0]))
        analytic = 1.0 / (1.0 + (60.0 / 15.0) ** 4)   # |H|^2 at Nyquist
        assert residual < 0.05
        assert abs(residual - analytic) < 0.05

    def test_frame_count_and_timestamps_exact(self):
        traj = make_traj(F=50)
        out = butterworth_lowpass(traj, 10.0, 4)
        assert out.n_frames == traj.n_frames
        assert np.array_equal(out.t, traj.t)

    def test_quaternions_renormalized(self):
        traj = make_traj(F=50, seed=3)
        out = butterworth_lowpass(traj, 10.0, 2)
        assert np.allclose(np.linalg.norm(out.quat, axis=2), 1.0, atol=1e-12)

    def test_cutoff_out_of_range(self):
        traj = make_traj()
        with pytest.raises(ValueError):
            butterworth_lowpass(traj, 60.0, 2)
        with pytest.raises(ValueError):
            butterworth_lowpass(traj, 10.0, 3)

    def test_idempotent_on_constants(self):
        traj = sinusoid_traj(1.0)
        const = Trajectory(traj.rate_hz, traj.t,
                           np.full_like(traj.pos, -0.2), traj.quat)
        once = butterworth_lowpass(const, 10.0, 2)
        twice = butterworth_lowpass(once, 10.0, 2)
        assert np.max(np.abs(once.pos - twice.pos)) < 1e-9


class TestHemispherize:
    def test_sign_flips_removed(self):
        traj = make_traj(F=10, N=1)
        q = traj.quat.copy()
        q[5:] *= -1.0
        fixed = hemispherize(q)
        dots = np.einsum("fsj,fsj->fs", fixed[1:], fixed[:-1])
        assert np.all(dots > 0.0)


class TestAlign:
    def test_identical_unchanged(self):
        traj = make_traj()
        s, r = align(traj, traj)
        assert np.array_equal(s.t, traj.t)
        assert np.allclose(s.pos, traj.pos, atol=1e-15)
        assert np.array_equal(r.pos, traj.pos)

    def test_projection_property(self):
        sim = make_traj(F=40, seed=1)
        real = make_traj(F=30, seed=2, t0=0.05)
        s1, r1 = align(sim, real)
        s2, r2 = align(s1, r1)
        assert np.array_equal(s1.t, s2.t)
        assert np.allclose(s1.pos, s2.pos, atol=1e-14)

    def test_downsampling_shapes(self):
        rng_rate = 1000.0
        F = 1001
        t = np.arange(F) / rng_rate
        pos = np.zeros((F, 2, 3))
        quat = np.zeros((F, 2, 4))
        quat[:, :, 0] = 1.0
        sim = Trajectory(rng_rate, t, pos, quat)
        real = make_traj(F=100, N=2, rate=120.0)
        s, r = align(sim, real)
        assert s.n_frames == r.n_frames
        assert s.rate_hz == 120.0
        assert s.t[-1] <= min(sim.t[-1], real.t[-1]) + 1e-9

    def test_linear_motion_exact(self):
        # linear interpolation is exact for linear motion
        t_s = np.linspace(0.0, 1.0, 11)
        v = np.array([0.1, -0.2, 0.3])
        pos_s = t_s[:, None, None] * v[None, None, :]
        quat_s = np.zeros((11, 1, 4))
        quat_s[:, :, 0] = 1.0
        sim = Trajectory(10.0, t_s, pos_s, quat_s)
        t_r = np.linspace(0.05, 0.95, 10)
        real = Trajectory(10.0, t_r, t_r[:, None, None] * v[None, None, :],
                          np.broadcast_to([1.0, 0, 0, 0], (10, 1, 4)).copy())
        s, r = align(sim, real)
        assert np.max(np.abs(s.pos - r.pos)) < 1e-12

    def test_no_overlap(self):
        a = make_traj(F=10, t0=0.0)
        b = make_traj(F=10, t0=50.0)
        with pytest.raises(AlignmentError):
            align(a, b)


def test_equilibrium_poses_tail_mean():
    traj = make_traj(F=120)
    eq = equilibrium_poses(traj, window_s=0.2)
    tail = traj.pos[-24:].mean(axis=0)
    assert np.allclose(eq, tail, atol=1e-12)


def test_with_position_noise_seeded():
    traj = make_traj()
    a = with_position_noise(traj, 1e-3, seed=9)
    b = with_position_noise(traj, 1e-3, seed=9)
    assert np.array_equal(a.pos, b.pos)
    assert np.std(a.pos - traj.pos) == pytest.approx(1e-3, rel=0.2)
