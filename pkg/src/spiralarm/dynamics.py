"""Time-stepping of the pseudo-rigid-body chain and the experiment protocols.

The chain moves under gravity, passive viscoelastic joint torques, tendon
tensions from PD position actuators with force saturation and first-order
lag, and capstan-style tendon friction.  The inner loop lives in the kernel
backend (see spiralarm.kernels); this module owns the value-level API:
states, commands, configs, settling and the three identification protocols.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from spiralarm.arm import ArmModel, ArmParameters
from spiralarm.kernels import (
    STATUS_OK,
    STATUS_TIMEOUT,
    STATUS_UNSTABLE,
    SimKernel,
)
from spiralarm.trajectory import Trajectory


class SimulationUnstableError(RuntimeError):
    """Integration diverged (some |theta_dot| exceeded 1e3 rad/s)."""


class SettleTimeoutError(RuntimeError):
    """Settle hit the timeout; carries the last state and partial trajectory."""

    def __init__(self, state, trajectory):
        super().__init__("settle did not converge before timeout")
        self.state = state
        self.trajectory = trajectory


@dataclass(frozen=True)
class TendonCommand:
    """Absolute commanded tendon lengths; None disengages a tendon (slack).

    Engaged entries must be positive and no longer than the straight-arm
    tendon length (commands are contractions).
    """

    target_lengths: tuple = (None, None, None)
    timestamp: float = 0.0

    def validate(self, model: ArmModel):
        slack = model.tendon_slack_length
        for i, v in enumerate(self.target_lengths):
            if v is None:
                continue
            if not (0.0 < v <= slack):
                raise ValueError(
                    f"tendon {i + 1} command {v} outside (0, {slack:.6f}]"
                )

    def arrays(self, model: ArmModel):
        engaged = np.array(
            [v is not None for v in self.target_lengths], dtype=np.uint8
        )
        lengths = np.array(
            [model.tendon_slack_length if v is None else v
             for v in self.target_lengths]
        )
        return engaged, lengths


RELEASE = TendonCommand()   # all tendons slack


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3               # s, integration step (snapped to frames)
    gravity_tilt: float = 0.0      # rad, base axis vs gravity
    gravity_mag: float = 9.81      # m/s^2
    settle_vel_tol: float = 1e-3   # rad/s
    settle_hold: float = 0.2       # s below tolerance before convergence
    timeout: float = 20.0          # s
    rate_hz: float = 120.0         # recording rate

    def validate(self):
        if not (0.0 < self.dt <= 5e-3):
            raise ValueError(f"dt must be in (0, 5e-3], got {self.dt}")
        for name in ("settle_vel_tol", "settle_hold", "timeout", "rate_hz"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def gravity_vec(self):
        # tilt rotates gravity into the +x half-plane of the base frame;
        # tilt = 0 means the arm hangs along its own axis.
        return self.gravity_mag * np.array(
            [math.sin(self.gravity_tilt), 0.0, math.cos(self.gravity_tilt)]
        )

    @property
    def frame_dt(self):
        return 1.0 / self.rate_hz

    @property
    def steps_per_frame(self):
        return max(1, math.ceil(self.frame_dt / self.dt - 1e-12))

    @property
    def snapped_dt(self):
        # integer number of steps lands exactly on every recording frame
        return self.frame_dt / self.steps_per_frame


@dataclass
class ArmState:
    """Generalized coordinates (2 bending DoF per joint) plus actuator state."""

    theta: np.ndarray              # (2n,)
    theta_dot: np.ndarray          # (2n,)
    tendon_act_lengths: np.ndarray  # (3,)
    sim_time: float = 0.0

    def copy(self):
        return ArmState(
            self.theta.copy(),
            self.theta_dot.copy(),
            self.tendon_act_lengths.copy(),
            self.sim_time,
        )


def initial_state(model: ArmModel) -> ArmState:
    """Straight arm at rest with actuators at the slack length."""
    n2 = model.n_coords
    return ArmState(
        theta=np.zeros(n2),
        theta_dot=np.zeros(n2),
        tendon_act_lengths=np.full(3, model.tendon_slack_length),
        sim_time=0.0,
    )


# ---------------------------------------------------------------------------
# Constitutive pieces, exposed for direct use and testing

def passive_torque(K, D, theta, theta0, theta_dot):
    """Viscoelastic joint torque: -K*(theta - theta0) - D*theta_dot."""
    return -K * (theta - theta0) - D * theta_dot


def friction_attenuate(F, bend_angles_upstream, mu_t):
    """Capstan attenuation: F * exp(-mu_t * sum |upstream bend angles|)."""
    if F < 0.0 or mu_t < 0.0:
        raise ValueError("force and friction coefficient must be >= 0")
    total = float(np.sum(np.abs(np.asarray(bend_angles_upstream, dtype=float))))
    return F * math.exp(-mu_t * total)


def tendon_tensions(cmd: TendonCommand, act_lengths, measured_lengths,
                    measured_rates, params: ArmParameters):
    """PD tensions clamped to [0, F_range]; disengaged tendons carry zero.

    Expressed in tension form (positive pulls, shortening the cable):
    kp * (l_meas - l_act) + kv * dl_meas/dt.  The velocity term brakes the
    approach to the commanded length, the critically damped sign.
    """
    act = np.asarray(act_lengths, dtype=float)
    meas = np.asarray(measured_lengths, dtype=float)
    rates = np.asarray(measured_rates, dtype=float)
    raw = params.kp * (meas - act) + params.kv * rates
    out = np.clip(raw, 0.0, params.F_range)
    for i, v in enumerate(cmd.target_lengths):
        if v is None:
            out[i] = 0.0
    return out


def tendon_length(model: ArmModel, theta) -> np.ndarray:
    """Per-tendon path length: sum of consecutive anchor-point distances."""
    return SimKernel(model).tendon_lengths(np.asarray(theta, dtype=float))


def mechanical_energy(model: ArmModel, state: ArmState, config: SimConfig):
    """Kinetic + elastic + gravitational energy under the model's inertia."""
    kern = SimKernel(model)
    pos, _ = kern.fk_pose(state.theta)
    Id = np.repeat(model.inertia, 2)
    Kd = np.repeat(model.K, 2)
    kin = 0.5 * float(np.sum(Id * state.theta_dot**2))
    ela = 0.5 * float(np.sum(Kd * (state.theta - model.theta0) ** 2))
    grav = -float(np.sum(model.masses * (pos @ config.gravity_vec)))
    return kin + ela + grav


# ---------------------------------------------------------------------------
# Integration

def _frames_to_traj(model, config, t0, pos0, quat0, out_t, out_pos, out_quat, nf):
    t = np.concatenate([[t0], out_t[:nf]])
    pos = np.concatenate([pos0[None], out_pos[:nf]])
    quat = np.concatenate([quat0[None], out_quat[:nf]])
    return Trajectory(rate_hz=config.rate_hz, t=t, pos=pos, quat=quat)


class Simulation:
    """Single-threaded simulation instance owning one ArmState.

    Many instances may run concurrently against one shared ArmModel.
    """

    def __init__(self, model: ArmModel, config: SimConfig = SimConfig(),
                 state: ArmState | None = None, backend=None):
        config.validate()
        self.model = model
        self.config = config
        self.kernel = SimKernel(model, backend=backend)
        self.state = state.copy() if state is not None else initial_state(model)
        self._gvec = config.gravity_vec
        self.tension_min = 0.0     # over everything this instance has run
        self.tension_max = 0.0
        self._no_frames = (
            np.empty(0),
            np.empty((0, model.n_segments, 3)),
            np.empty((0, model.n_segments, 4)),
        )

    def _run(self, cmd, dt, max_steps, steps_per_frame, hold_steps,
             record, frame_cap, t_start):
        cmd.validate(self.model)
        engaged, l_cmd = cmd.arrays(self.model)
        s = self.state
        if record:
            n = self.model.n_segments
            out_t = np.empty(frame_cap)
            out_pos = np.empty((frame_cap, n, 3))
            out_quat = np.empty((frame_cap, n, 4))
        else:
            out_t, out_pos, out_quat = self._no_frames
        stat, nf, nsteps = self.kernel.run(
            s.theta, s.theta_dot, s.tendon_act_lengths, engaged, l_cmd,
            self._gvec, dt, max_steps, steps_per_frame,
            self.config.settle_vel_tol, hold_steps,
            out_t, out_pos, out_quat, t_start, record,
        )
        s.sim_time += nsteps * dt
        self.tension_min = min(self.tension_min, float(self.kernel.last_stats[0]))
        self.tension_max = max(self.tension_max, float(self.kernel.last_stats[1]))
        return stat, nf, nsteps, out_t, out_pos, out_quat

    def step(self, cmd: TendonCommand) -> ArmState:
        """One integration step of config.dt; returns the new state."""
        stat, *_ = self._run(cmd, self.config.dt, 1, 1, 0, False, 0, 0.0)
        if stat == STATUS_UNSTABLE:
            raise SimulationUnstableError(
                f"diverged at t={self.state.sim_time:.4f}s"
            )
        return self.state.copy()

    def settle(self, cmd: TendonCommand, record=True,
               t_start=0.0) -> tuple[ArmState, Trajectory | None]:
        """Step until velocities stay below tolerance, recording frames.

        Raises SettleTimeoutError (carrying state and partial trajectory)
        when the timeout elapses first.
        """
        cfg = self.config
        dt = cfg.snapped_dt
        spf = cfg.steps_per_frame
        hold_steps = max(1, round(cfg.settle_hold / dt))
        max_frames = math.ceil(cfg.timeout / cfg.frame_dt) + 1
        max_steps = max_frames * spf
        traj0 = self.kernel.fk_pose(self.state.theta) if record else None
        stat, nf, nsteps, out_t, out_pos, out_quat = self._run(
            cmd, dt, max_steps, spf, hold_steps, record, max_frames, t_start)
        if stat == STATUS_UNSTABLE:
            raise SimulationUnstableError(
                f"diverged at t={self.state.sim_time:.4f}s"
            )
        traj = None
        if record:
            pos0, quat0 = traj0
            traj = _frames_to_traj(self.model, cfg, t_start, pos0, quat0,
                                   out_t, out_pos, out_quat, nf)
        if stat == STATUS_TIMEOUT:
            raise SettleTimeoutError(self.state.copy(), traj)
        return self.state.copy(), traj

    def rollout(self, cmd: TendonCommand, duration,
                record=True, t_start=0.0) -> tuple[ArmState, Trajectory | None]:
        """Run for a fixed duration (rounded to whole recording frames)."""
        cfg = self.config
        dt = cfg.snapped_dt
        spf = cfg.steps_per_frame
        n_frames = max(1, round(duration / cfg.frame_dt))
        traj0 = self.kernel.fk_pose(self.state.theta) if record else None
        stat, nf, nsteps, out_t, out_pos, out_quat = self._run(
            cmd, dt, n_frames * spf, spf, 0, record, n_frames, t_start)
        if stat == STATUS_UNSTABLE:
            raise SimulationUnstableError(
                f"diverged at t={self.state.sim_time:.4f}s"
            )
        traj = None
        if record:
            pos0, quat0 = traj0
            traj = _frames_to_traj(self.model, cfg, t_start, pos0, quat0,
                                   out_t, out_pos, out_quat, nf)
        return self.state.copy(), traj


def step(model: ArmModel, state: ArmState, cmd: TendonCommand,
         config: SimConfig) -> ArmState:
    """One semi-implicit Euler step of config.dt."""
    sim = Simulation(model, config, state=state)
    return sim.step(cmd)


def settle(model: ArmModel, state: ArmState, cmd: TendonCommand,
           config: SimConfig) -> tuple[ArmState, Trajectory]:
    """Settle to rest from the given state; returns state and trajectory."""
    sim = Simulation(model, config, state=state)
    return sim.settle(cmd)


def fast_settle_model(model: ArmModel) -> ArmModel:
    """Same model with damping retuned for fast settling.

    Sets the damping ratio so the base joint is effectively critically
    damped.  Equilibria are damping-independent, so quasi-static settles
    (FK sampling, pre-conditioning phases) may use this freely.
    """
    zeta_crit = math.sqrt(model.inertia[0] / model.masses[0])
    return model.with_params(replace(model.params, zeta=zeta_crit))


# ---------------------------------------------------------------------------
# Experiment protocols

@dataclass(frozen=True)
class StaticTilt:
    """Settle the passive arm at each base tilt and record the motion."""

    angles_deg: tuple = (0.0, 30.0, 60.0, 90.0)


@dataclass(frozen=True)
class FreeRelease:
    """Bend with symmetric dual-cable ventral actuation, release, record."""

    initial_contraction: float = 0.06   # m, per active cable
    record_s: float = 5.0
    dorsal: bool = False                # single-cable variant

    def command(self, model: ArmModel) -> TendonCommand:
        slack = model.tendon_slack_length
        pulled = slack - self.initial_contraction
        if self.dorsal:
            return TendonCommand((pulled, None, None))
        return TendonCommand((None, pulled, pulled))


@dataclass(frozen=True)
class ActuationCycle:
    """Curl to each actuation level, then command back to straight."""

    levels_mm: tuple = (20.0, 40.0, 60.0, 80.0, 100.0)
    curl_s: float = 4.0
    uncurl_s: float = 4.0

    def commands(self, model: ArmModel, level_mm):
        slack = model.tendon_slack_length
        pulled = slack - level_mm * 1e-3
        curl = TendonCommand((None, pulled, pulled))
        uncurl = TendonCommand((slack, slack, slack))
        return curl, uncurl


def protocol_from_dict(doc) -> object:
    kind = doc.get("protocol")
    if kind == "static_tilt":
        return StaticTilt(angles_deg=tuple(doc.get("angles_deg",
                                                   (0.0, 30.0, 60.0, 90.0))))
    if kind == "free_release":
        return FreeRelease(
            initial_contraction=float(doc.get("initial_contraction", 0.06)),
            record_s=float(doc.get("record_s", 5.0)),
            dorsal=bool(doc.get("dorsal", False)),
        )
    if kind == "actuation_cycle":
        return ActuationCycle(
            levels_mm=tuple(doc.get("levels_mm", (20.0, 40.0, 60.0, 80.0, 100.0))),
            curl_s=float(doc.get("curl_s", 4.0)),
            uncurl_s=float(doc.get("uncurl_s", 4.0)),
        )
    raise ValueError(
        f"unknown protocol {kind!r}; valid: static_tilt, free_release, "
        "actuation_cycle"
    )


def protocol_condition_names(protocol) -> list:
    if isinstance(protocol, StaticTilt):
        return [f"tilt{int(round(a)):02d}" for a in protocol.angles_deg]
    if isinstance(protocol, FreeRelease):
        return [f"release{int(round(protocol.initial_contraction * 1e3)):03d}mm"]
    if isinstance(protocol, ActuationCycle):
        return [f"cycle{int(round(lv)):03d}mm" for lv in protocol.levels_mm]
    raise TypeError(f"not a protocol: {protocol!r}")


def run_protocol(model: ArmModel, protocol, config: SimConfig,
                 backend=None) -> list:
    """Run one experiment protocol; one Trajectory per condition."""
    if isinstance(protocol, StaticTilt):
        out = []
        for ang in protocol.angles_deg:
            cfg = replace(config, gravity_tilt=math.radians(ang))
            sim = Simulation(model, cfg, backend=backend)
            _, traj = sim.settle(RELEASE)
            out.append(traj)
        return out

    if isinstance(protocol, FreeRelease):
        # reach the bent equilibrium with retuned damping (equilibria are
        # damping-independent), then release at rest with the true model
        fast = fast_settle_model(model)
        pre = Simulation(fast, config, backend=backend)
        pre.settle(protocol.command(fast), record=False)
        sim = Simulation(model, config, backend=backend)
        sim.state.theta[:] = pre.state.theta
        sim.state.tendon_act_lengths[:] = pre.state.tendon_act_lengths
        _, traj = sim.rollout(RELEASE, protocol.record_s)
        return [traj]

    if isinstance(protocol, ActuationCycle):
        out = []
        for lv in protocol.levels_mm:
            curl, uncurl = protocol.commands(model, lv)
            sim = Simulation(model, config, backend=backend)
            _, tc = sim.rollout(curl, protocol.curl_s, t_start=0.0)
            _, tu = sim.rollout(uncurl, protocol.uncurl_s,
                                t_start=protocol.curl_s)
            out.append(Trajectory(
                rate_hz=config.rate_hz,
                t=np.concatenate([tc.t, tu.t[1:]]),
                pos=np.concatenate([tc.pos, tu.pos[1:]]),
                quat=np.concatenate([tc.quat, tu.quat[1:]]),
            ))
        return out

    raise TypeError(f"not a protocol: {protocol!r}")
