"""Generic 7-DoF rigid serial chain: FK, damped-least-squares IK,
and the restricted (tool-down) reachability map."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DLS_LAMBDA = 0.05
IK_MAX_ITERS = 200
IK_POS_TOL = 1e-4    # m
IK_ROT_TOL = 1e-3    # rad


def _rot_axis_angle(axis, angle):
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [x * x * C + c, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, y * y * C + c, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, z * z * C + c],
    ])


@dataclass(frozen=True)
class RigidArm:
    """Serial chain of 7 revolute joints.

    Joint i rotates about ``axes[i]`` (unit, in the parent frame) located
    at ``offsets[i]`` from the previous joint; the tool sits at
    ``tool_offset`` from the last joint frame.
    """

    axes: np.ndarray        # (7, 3)
    offsets: np.ndarray     # (7, 3)
    tool_offset: np.ndarray  # (3,)
    lower: np.ndarray       # (7,) joint limits, rad
    upper: np.ndarray

    def __post_init__(self):
        if self.axes.shape != (7, 3):
            raise ValueError("rigid arm must have exactly 7 revolute joints")
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("joint axes must be unit vectors")
        if np.any(self.lower >= self.upper):
            raise ValueError("joint limits must satisfy lower < upper")

    @property
    def n_joints(self):
        return 7

    def clamp(self, q):
        return np.clip(q, self.lower, self.upper)

    def fk(self, q):
        """Tool pose -> (position (3,), rotation (3,3))."""
        p = np.zeros(3)
        R = np.eye(3)
        for i in range(7):
            p = p + R @ self.offsets[i]
            R = R @ _rot_axis_angle(self.axes[i], q[i])
        p = p + R @ self.tool_offset
        return p, R

    def fk_frames(self, q):
        """Joint origins and axes in world (for the Jacobian)."""
        p = np.zeros(3)
        R = np.eye(3)
        origins = np.empty((7, 3))
        waxes = np.empty((7, 3))
        for i in range(7):
            p = p + R @ self.offsets[i]
            origins[i] = p
            waxes[i] = R @ self.axes[i]
            R = R @ _rot_axis_angle(self.axes[i], q[i])
        tool = p + R @ self.tool_offset
        return origins, waxes, tool, R

    def jacobian(self, q):
        """Geometric Jacobian (6, 7): linear rows then angular rows."""
        origins, waxes, tool, _ = self.fk_frames(q)
        J = np.empty((6, 7))
        for i in range(7):
            J[:3, i] = np.cross(waxes[i], tool - origins[i])
            J[3:, i] = waxes[i]
        return J


def rigid_arm_from_dict(doc) -> RigidArm:
    return RigidArm(
        axes=np.asarray(doc["axes"], dtype=float),
        offsets=np.asarray(doc["offsets"], dtype=float),
        tool_offset=np.asarray(doc["tool_offset"], dtype=float),
        lower=np.radians(np.asarray(doc["lower_deg"], dtype=float)),
        upper=np.radians(np.asarray(doc["upper_deg"], dtype=float)),
    )


def load_rigid_arm(path) -> RigidArm:
    with open(path, encoding="utf-8") as fh:
        return rigid_arm_from_dict(json.load(fh))


def default_rigid_arm() -> RigidArm:
    """Anthropomorphic 7R chain, iiwa-like proportions."""
    return rigid_arm_from_dict({
        "axes": [[0, 0, 1], [0, 1, 0], [0, 0, 1], [0, -1, 0],
                 [0, 0, 1], [0, 1, 0], [0, 0, 1]],
        "offsets": [[0, 0, 0.34], [0, 0, 0], [0, 0, 0.40], [0, 0, 0],
                    [0, 0, 0.40], [0, 0, 0], [0, 0, 0.126]],
        "tool_offset": [0, 0, 0.08],
        "lower_deg": [-170, -120, -170, -120, -170, -120, -175],
        "upper_deg": [170, 120, 170, 120, 170, 120, 175],
    })


def _rotation_error(R_target, R):
    """Axis-angle of R_target @ R.T as a 3-vector."""
    Re = R_target @ R.T
    cos_a = max(-1.0, min(1.0, (np.trace(Re) - 1.0) / 2.0))
    angle = math.acos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    axis = np.array([Re[2, 1] - Re[1, 2], Re[0, 2] - Re[2, 0],
                     Re[1, 0] - Re[0, 1]])
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        # 180-degree rotation: extract axis from the diagonal
        axis = np.sqrt(np.maximum((np.diag(Re) + 1.0) / 2.0, 0.0))
        axis *= np.where(axis > 0, 1.0, 0.0)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            return np.zeros(3)
    return axis / norm * angle


@dataclass
class IkSolution:
    q: np.ndarray
    converged: bool
    pos_err: float
    rot_err: float
    iterations: int


def rigid_ik(arm: RigidArm, target_pos, target_rot, q_init) -> IkSolution:
    """Damped-least-squares IK on the 6x7 Jacobian.

    Joint limits are enforced by clamping each iterate; non-convergence
    returns the best iterate flagged unconverged.
    """
    q = arm.clamp(np.asarray(q_init, dtype=float).copy())
    target_pos = np.asarray(target_pos, dtype=float)
    best = None
    lam2 = DLS_LAMBDA**2
    for it in range(IK_MAX_ITERS + 1):
        p, R = arm.fk(q)
        e = np.concatenate([target_pos - p, _rotation_error(target_rot, R)])
        pos_err = float(np.linalg.norm(e[:3]))
        rot_err = float(np.linalg.norm(e[3:]))
        if best is None or pos_err + 0.1 * rot_err < best[1] + 0.1 * best[2]:
            best = (q.copy(), pos_err, rot_err, it)
        if pos_err < IK_POS_TOL and rot_err < IK_ROT_TOL:
            return IkSolution(q, True, pos_err, rot_err, it)
        if it == IK_MAX_ITERS:
            break
        J = arm.jacobian(q)
        JJt = J @ J.T + lam2 * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, e)
        q = arm.clamp(q + dq)
    bq, bp, br, bi = best
    return IkSolution(bq, False, bp, br, bi)


def downward_rotation(yaw):
    """Tool frame with z pointing straight down, x rotated by yaw."""
    return _rot_axis_angle(np.array([0.0, 0.0, 1.0]), yaw) @ np.array([
        [1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
    ])


def sample_downward_poses(arm: RigidArm, samples, seed=0, cone_deg=10.0,
                          joint_samples=None):
    """FK over joint-space samples, keeping tool-down poses.

    Returns retained tool positions (M, 3).  ``joint_samples`` overrides
    the seeded uniform sampling (used by symmetry audits).
    """
    if joint_samples is None:
        rng = np.random.default_rng(seed)
        joint_samples = arm.lower + rng.uniform(
            size=(int(samples), 7)) * (arm.upper - arm.lower)
    cos_cone = math.cos(math.radians(cone_deg))
    down = np.array([0.0, 0.0, -1.0])
    kept = []
    for q in joint_samples:
        p, R = arm.fk(q)
        if float(R[:, 2] @ down) >= cos_cone:
            kept.append(p)
    return np.array(kept).reshape(-1, 3)
