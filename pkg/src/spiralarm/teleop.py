"""Preview-confirm teleoperation session.

Ray endpoints specify the rigid-arm mount target (left hand) and the soft
arm tip target (right hand).  Target resolution yaws the mount so the soft
arm's bending plane contains the target direction, validates both targets
against their reachability maps, and runs the learned IK.  A plan is
previewed on the virtual model (including a geometric grasp check) and,
once confirmed, replayed on the "physical" channel: a second simulation
instance with its own parameter file standing in for hardware.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from spiralarm.arm import ArmModel
from spiralarm.dynamics import (
    SimConfig,
    Simulation,
    SimulationUnstableError,
    SettleTimeoutError,
    TendonCommand,
    fast_settle_model,
)
from spiralarm.ikmlp import MlpIkModel, ik_infer
from spiralarm.kernels import SimKernel
from spiralarm.losses import internal_error
from spiralarm.reach import ReachMap, labels_to_command, query_reach, soft_fk
from spiralarm.rigid import IkSolution, RigidArm, downward_rotation, rigid_ik
from spiralarm.trajectory import Trajectory, align

RAY_LENGTH_MIN = 0.05
RAY_LENGTH_MAX = 3.0

PHASES = ("idle", "target_set", "previewing", "preview_ready",
          "executing", "done", "error")

# legal phase transitions (invariants of the session state machine)
_TRANSITIONS = {
    ("idle", "target_set"),
    ("target_set", "target_set"),
    ("target_set", "previewing"),
    ("previewing", "preview_ready"),
    ("previewing", "error"),
    ("preview_ready", "target_set"),
    ("preview_ready", "executing"),
    ("executing", "done"),
    ("executing", "error"),
    ("done", "idle"),
    ("error", "idle"),
}


class TeleopError(RuntimeError):
    """Protocol-level error with a wire error code."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray   # unit
    length: float

    @property
    def endpoint(self):
        return self.origin + self.length * self.direction


@dataclass(frozen=True)
class SceneObject:
    shape: str               # sphere | box
    center: np.ndarray
    radius: float = 0.05     # sphere radius or box half-extent


@dataclass(frozen=True)
class GraspConfig:
    margin: float = 0.02         # m beyond the object radius
    min_segments: int = 3
    wrap_min_deg: float = 180.0


@dataclass(frozen=True)
class TeleopConfig:
    rigid_speed: float = 0.7      # rad/s joint-space preview motion
    preview_curl_s: float = 3.0
    stream_hz: float = 60.0
    delay_s: float = 0.5          # designed virtual-to-physical delay
    grasp: GraspConfig = GraspConfig()


@dataclass
class MotionPlan:
    rigid_q: np.ndarray
    mount_pos: np.ndarray
    mount_rot: np.ndarray          # (3,3)
    gravity_angle: float
    tendon_cmd: TendonCommand
    predicted_tip_local: np.ndarray
    predicted_tip_world: np.ndarray


@dataclass
class GraspVerdict:
    grasped: bool
    reason: str
    object_index: int = -1
    wrap_deg: float = 0.0
    close_segments: int = 0


@dataclass
class PreviewResult:
    rigid_path: np.ndarray         # (F, 7) joint trajectory of the approach
    soft_local: Trajectory         # soft-arm frames in the mount frame
    verdict: GraspVerdict


def _world_frames(traj: Trajectory, mount_pos, mount_rot):
    pos = traj.pos @ mount_rot.T + mount_pos
    return pos


class TeleopSession:
    """Single-operator session; commands are processed strictly in order."""

    def __init__(self, model: ArmModel, physical_model: ArmModel,
                 rigid_arm: RigidArm, rigid_map: ReachMap,
                 soft_maps, ik_model: MlpIkModel,
                 simcfg: SimConfig = SimConfig(),
                 config: TeleopConfig = TeleopConfig(),
                 q_home=None):
        self.model = model
        self.physical_model = physical_model
        self.rigid_arm = rigid_arm
        self.rigid_map = rigid_map
        self.soft_maps = list(soft_maps)
        self.ik_model = ik_model
        self.simcfg = simcfg
        self.config = config
        self.phase = "idle"
        self.rays = {}
        self.rigid_target = None
        self.soft_target = None
        self.scene = []
        self.plan = None
        self.preview = None
        self.executed = None
        self.exec_report = None
        self.rigid_q = (np.asarray(q_home, dtype=float) if q_home is not None
                        else np.zeros(7))
        self.last_error = None
        self._rest_state = None

    # -- state machine -----------------------------------------------------

    def _goto(self, phase):
        if (self.phase, phase) not in _TRANSITIONS:
            raise TeleopError(
                "bad_phase",
                f"illegal transition {self.phase} -> {phase}",
            )
        self.phase = phase

    def reset(self):
        """Any phase back to idle; targets and previews cleared."""
        self.phase = "idle"
        self.rays = {}
        self.rigid_target = None
        self.soft_target = None
        self.plan = None
        self.preview = None
        self.executed = None
        self.exec_report = None
        self.last_error = None

    # -- ray targets ---------------------------------------------------------

    def set_ray(self, hand, origin, direction, length):
        if hand not in ("left", "right"):
            raise TeleopError("bad_message", f"unknown hand {hand!r}")
        if self.phase not in ("idle", "target_set", "preview_ready"):
            raise TeleopError("bad_phase", f"cannot aim rays in {self.phase}")
        direction = np.asarray(direction, dtype=float)
        norm = float(np.linalg.norm(direction))
        if norm < 1e-12:
            raise TeleopError("bad_message", "ray direction must be non-zero")
        if not (RAY_LENGTH_MIN <= length <= RAY_LENGTH_MAX):
            raise TeleopError(
                "out_of_range",
                f"ray length {length} outside [{RAY_LENGTH_MIN}, {RAY_LENGTH_MAX}]",
            )
        ray = Ray(np.asarray(origin, dtype=float), direction / norm, float(length))
        self.rays[hand] = ray
        if hand == "left":
            self.rigid_target = ray.endpoint
        else:
            self.soft_target = ray.endpoint
        # any target edit invalidates an existing preview
        self.plan = None
        self.preview = None
        if self.rigid_target is not None and self.soft_target is not None:
            self._goto("target_set")

    def add_object(self, shape, center, radius):
        if self.phase in ("previewing", "executing"):
            raise TeleopError("bad_phase", f"cannot edit scene in {self.phase}")
        if shape not in ("sphere", "box"):
            raise TeleopError("bad_message", f"unknown shape {shape!r}")
        self.scene.append(SceneObject(shape, np.asarray(center, dtype=float),
                                      float(radius)))

    # -- planning ------------------------------------------------------------

    def resolve_targets(self) -> MotionPlan:
        """Mount IK with bending-plane alignment, reach checks, soft IK."""
        if self.phase != "target_set":
            raise TeleopError("bad_phase", f"resolve requires target_set, "
                                           f"got {self.phase}")
        rigid_target = self.rigid_target
        soft_target = self.soft_target

        if not self.rigid_map.contains(rigid_target):
            raise TeleopError("unreachable_rigid",
                              "mount target outside the rigid reach map")

        # yaw the mount so the bending plane contains the target direction
        dxy = soft_target[:2] - rigid_target[:2]
        if np.linalg.norm(dxy) < 1e-9:
            _, R_now = self.rigid_arm.fk(self.rigid_q)
            yaw = math.atan2(R_now[1, 0], R_now[0, 0])
        else:
            yaw = math.atan2(dxy[1], dxy[0])
        R_target = downward_rotation(yaw)

        sol = rigid_ik(self.rigid_arm, rigid_target, R_target, self.rigid_q)
        if not sol.converged:
            raise TeleopError("unreachable_rigid",
                              f"rigid IK failed (pos_err {sol.pos_err:.3g} m)")
        mount_pos, mount_rot = self.rigid_arm.fk(sol.q)

        # soft target in the mount frame; gravity angle from the mount axis
        p_local = mount_rot.T @ (soft_target - mount_pos)
        g_world = np.array([0.0, 0.0, -1.0])
        cosg = float(np.clip(mount_rot[:, 2] @ g_world, -1.0, 1.0))
        gravity_angle = math.acos(cosg)

        if not query_reach(self.soft_maps, gravity_angle, p_local):
            raise TeleopError("unreachable_soft",
                              "soft target outside the reach map")

        # the learned IK wants the tip orientation, which the ray cannot
        # give; start from an in-plane arc guess and run the prediction
        # through quasi-static FK twice so the orientation input converges
        # onto the pose manifold
        beta = math.atan2(math.hypot(p_local[0], p_local[1]), p_local[2])
        phi = math.atan2(p_local[1], p_local[0])
        axis = np.array([-math.sin(phi), math.cos(phi), 0.0])
        quat = np.concatenate([[math.cos(beta)], math.sin(beta) * axis])
        quat /= np.linalg.norm(quat)
        tip = None
        try:
            for _ in range(3):
                lengths = ik_infer(self.ik_model, gravity_angle, p_local, quat)
                cmd = labels_to_command(self.model, lengths)
                tip, quat = soft_fk(self.model, cmd, gravity_angle,
                                    self.simcfg)
        except (SimulationUnstableError, SettleTimeoutError) as err:
            raise TeleopError("sim_error", f"FK during planning failed: {err}")

        plan = MotionPlan(
            rigid_q=sol.q,
            mount_pos=mount_pos,
            mount_rot=mount_rot,
            gravity_angle=gravity_angle,
            tendon_cmd=cmd,
            predicted_tip_local=tip,
            predicted_tip_world=mount_pos + mount_rot @ tip,
        )
        self.plan = plan
        return plan

    # -- preview -------------------------------------------------------------

    def _rigid_path(self, q_target):
        dq = q_target - self.rigid_q
        t_move = float(np.max(np.abs(dq))) / self.config.rigid_speed
        n = max(2, int(math.ceil(t_move * self.config.stream_hz)) + 1)
        w = np.linspace(0.0, 1.0, n)[:, None]
        return self.rigid_q[None, :] * (1.0 - w) + q_target[None, :] * w

    def _simulate_soft(self, model, plan, record_s):
        cfg = replace(self.simcfg, gravity_tilt=plan.gravity_angle)
        sim = Simulation(model, cfg)
        try:
            pre = Simulation(fast_settle_model(model), cfg)
            pre.settle(TendonCommand(), record=False)
            sim.state.theta[:] = pre.state.theta
            sim.state.tendon_act_lengths[:] = pre.state.tendon_act_lengths
            _, traj = sim.rollout(plan.tendon_cmd, record_s)
        except (SimulationUnstableError, SettleTimeoutError) as err:
            raise TeleopError("sim_error", f"soft simulation failed: {err}")
        return traj, sim.state

    def _grasp_check(self, world_pos_final):
        if not self.scene:
            return GraspVerdict(False, "no-object")
        gcfg = self.config.grasp
        target = self.soft_target
        dists = [float(np.linalg.norm(o.center - target)) for o in self.scene]
        oi = int(np.argmin(dists))
        obj = self.scene[oi]
        rel = world_pos_final - obj.center
        close = np.linalg.norm(rel, axis=1) <= obj.radius + gcfg.margin
        n_close = int(np.sum(close))
        if n_close < gcfg.min_segments:
            return GraspVerdict(False, "too-few-contacts", oi, 0.0, n_close)
        # wrap: angular coverage of the close centroids around the object
        # center, measured in the bending plane of the final shape
        pts = rel[close]
        centroid_dir = pts - pts.mean(axis=0)
        u, s, vt = np.linalg.svd(centroid_dir, full_matrices=False)
        e1, e2 = vt[0], vt[1]
        ang = np.sort(np.arctan2(pts @ e2, pts @ e1))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * math.pi]]))
        wrap_deg = math.degrees(2.0 * math.pi - float(np.max(gaps)))
        if wrap_deg <= gcfg.wrap_min_deg:
            return GraspVerdict(False, "insufficient-wrap", oi, wrap_deg, n_close)
        return GraspVerdict(True, "wrapped", oi, wrap_deg, n_close)

    def start_preview(self) -> PreviewResult:
        """Simulate the full plan on the virtual model; grasp verdict."""
        if self.phase != "target_set":
            raise TeleopError("bad_phase",
                              f"preview requires target_set, got {self.phase}")
        if self.plan is None:
            self.resolve_targets()
        plan = self.plan
        self._goto("previewing")
        try:
            rigid_path = self._rigid_path(plan.rigid_q)
            traj, state = self._simulate_soft(self.model, plan,
                                              self.config.preview_curl_s)
            world_final = _world_frames(traj, plan.mount_pos, plan.mount_rot)[-1]
            verdict = self._grasp_check(world_final)
        except TeleopError:
            self.phase = "error"
            raise
        self.preview = PreviewResult(rigid_path, traj, verdict)
        self._goto("preview_ready")
        return self.preview

    def abort(self):
        if self.phase not in ("previewing", "preview_ready"):
            raise TeleopError("bad_phase", f"nothing to abort in {self.phase}")
        self.plan = None
        self.preview = None
        self.phase = "target_set" if (self.rigid_target is not None and
                                      self.soft_target is not None) else "idle"

    # -- execute -------------------------------------------------------------

    def confirm_execute(self, on_frame=None) -> dict:
        """Replay the previewed plan on the physical channel.

        ``on_frame(phase, t, rigid_q, soft_world_pos, soft_quat, lengths)``
        is invoked for every streamed frame.  Returns the execution report
        (preview-vs-executed internal shape error).
        """
        if self.phase != "preview_ready":
            raise TeleopError("bad_phase",
                              f"confirm requires preview_ready, got {self.phase}")
        plan = self.plan
        preview = self.preview
        self._goto("executing")
        try:
            traj, _ = self._simulate_soft(self.physical_model, plan,
                                          self.config.preview_curl_s)
        except TeleopError:
            self.phase = "error"
            raise
        self.executed = traj
        self.rigid_q = plan.rigid_q.copy()

        stride = max(1, int(round(self.simcfg.rate_hz / self.config.stream_hz)))
        if on_frame is not None:
            kern = SimKernel(self.physical_model)
            for qi in preview.rigid_path:
                on_frame("executing", 0.0, qi, None, None, None)
            world = _world_frames(traj, plan.mount_pos, plan.mount_rot)
            for f in range(0, traj.n_frames, stride):
                on_frame("executing", float(traj.t[f]), plan.rigid_q,
                         world[f], traj.quat[f], None)

        s_al, e_al = align(preview.soft_local, traj)
        report = {
            "e_internal_preview_exec_m": internal_error(s_al, e_al),
            "grasped_preview": preview.verdict.grasped,
        }
        self.exec_report = report
        self._goto("done")
        return report

    def finish(self):
        """Done -> idle, keeping the scene."""
        if self.phase == "done":
            self._goto("idle")
            self.rays = {}
            self.rigid_target = None
            self.soft_target = None
            self.plan = None
