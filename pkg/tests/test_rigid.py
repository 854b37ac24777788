import math

import numpy as np
import pytest

from spiralarm.reach import voxelize, ReachMap
from spiralarm.rigid import (
    RigidArm,
    default_rigid_arm,
    downward_rotation,
    rigid_arm_from_dict,
    rigid_ik,
    sample_downward_poses,
)


@pytest.fixture(scope="module")
def arm():
    return default_rigid_arm()


class TestFk:
    def test_home_pose_stacks_offsets(self, arm):
        p, R = arm.fk(np.zeros(7))
        expect_z = 0.34 + 0.40 + 0.40 + 0.126 + 0.08
        assert p == pytest.approx([0.0, 0.0, expect_z], abs=1e-12)
        assert R == pytest.approx(np.eye(3), abs=1e-12)

    def test_seven_joints_required(self):
        with pytest.raises(ValueError):
            RigidArm(
                axes=np.tile([0.0, 0.0, 1.0], (6, 1)),
                offsets=np.zeros((6, 3)),
                tool_offset=np.zeros(3),
                lower=-np.ones(6), upper=np.ones(6),
            )

    def test_jacobian_matches_finite_difference(self, arm):
        rng = np.random.default_rng(0)
        q = rng.uniform(-1.0, 1.0, 7)
        J = arm.jacobian(q)
        h = 1e-7
        for i in range(7):
            qp, qm = q.copy(), q.copy()
            qp[i] += h
            qm[i] -= h
            pp, Rp = arm.fk(qp)
            pm, Rm = arm.fk(qm)
            fd = (pp - pm) / (2 * h)
            assert J[:3, i] == pytest.approx(fd, abs=1e-5)


class TestIk:
    def test_target_at_initial_pose_returns_immediately(self, arm):
        q0 = np.array([0.3, 0.6, 0.1, -1.2, 0.2, 0.8, 0.1])
        p, R = arm.fk(q0)
        sol = rigid_ik(arm, p, R, q0)
        assert sol.converged
        assert sol.iterations == 0
        assert np.array_equal(sol.q, q0)

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_fk_round_trip(self, arm, seed):
        rng = np.random.default_rng(seed)
        q_goal = 0.8 * rng.uniform(arm.lower, arm.upper)
        p, R = arm.fk(q_goal)
        q_init = np.clip(q_goal + rng.normal(0.0, 0.3, 7), arm.lower, arm.upper)
        sol = rigid_ik(arm, p, R, q_init)
        assert sol.converged
        assert sol.pos_err < 1e-4
        assert sol.rot_err < 1e-3

    def test_unreachable_flagged(self, arm):
        sol = rigid_ik(arm, np.array([3.0, 0.0, 0.5]), np.eye(3), np.zeros(7))
        assert not sol.converged
        assert sol.pos_err > 0.1

    def test_limits_respected(self, arm):
        sol = rigid_ik(arm, np.array([0.4, 0.3, 0.5]), downward_rotation(0.2),
                       np.zeros(7))
        assert np.all(sol.q >= arm.lower - 1e-12)
        assert np.all(sol.q <= arm.upper + 1e-12)


class TestDownwardSampling:
    def test_cone_postcondition(self, arm):
        rng = np.random.default_rng(5)
        qs = rng.uniform(arm.lower, arm.upper, size=(500, 7))
        pts = sample_downward_poses(arm, 0, joint_samples=qs)
        # re-check every retained point by re-running FK over the samples
        down = np.array([0.0, 0.0, -1.0])
        kept = 0
        for q in qs:
            p, R = arm.fk(q)
            if float(R[:, 2] @ down) >= math.cos(math.radians(10.0)):
                kept += 1
        assert len(pts) == kept

    def test_base_region_unoccupied(self, arm):
        pts = sample_downward_poses(arm, 6000, seed=1)
        assert len(pts) > 30
        # tool-down poses cannot fold back into the mount: the base voxel
        # stays clear
        assert np.min(np.linalg.norm(pts, axis=1)) > 0.05
        origin, occ = voxelize(pts, 0.01)
        m = ReachMap(None, 0.01, origin, occ, len(pts))
        assert not m.contains([0.0, 0.0, 0.0])

    def test_yaw_symmetry_on_idealized_chain(self, arm):
        # full-circle base yaw on a 90-degree-closed joint grid: rotating
        # the retained poses by 90 degrees maps the voxel set to itself
        n_yaw = 32
        q1 = np.linspace(-math.pi, math.pi, n_yaw, endpoint=False)
        rest = np.array([0.7, 0.0, -1.1, 0.0, 0.6, 0.0])
        grid = np.zeros((n_yaw, 7))
        grid[:, 0] = q1
        grid[:, 1:] = rest
        ideal = rigid_arm_from_dict({
            "axes": [[0, 0, 1], [0, 1, 0], [0, 0, 1], [0, -1, 0],
                     [0, 0, 1], [0, 1, 0], [0, 0, 1]],
            "offsets": [[0, 0, 0.34], [0, 0, 0], [0, 0, 0.40], [0, 0, 0],
                        [0, 0, 0.40], [0, 0, 0], [0, 0, 0.126]],
            "tool_offset": [0, 0, 0.08],
            "lower_deg": [-180, -120, -170, -120, -170, -120, -175],
            "upper_deg": [180, 120, 170, 120, 170, 120, 175],
        })
        pts = sample_downward_poses(ideal, 0, joint_samples=grid, cone_deg=60.0)
        assert len(pts) == n_yaw
        Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        rotated = pts @ Rz.T
        vox = lambda p: tuple(np.round(np.asarray(p) / 0.01).astype(int))
        set_a = {vox(p) for p in pts}
        set_b = {vox(p) for p in rotated}
        assert set_a == set_b


def test_downward_rotation_points_down():
    for yaw in (0.0, 0.5, 2.0):
        R = downward_rotation(yaw)
        assert R[:, 2] == pytest.approx([0.0, 0.0, -1.0], abs=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        assert R[:2, 0] == pytest.approx([math.cos(yaw), math.sin(yaw)], abs=1e-12)
