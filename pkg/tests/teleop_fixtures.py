"""Shared teleoperation fixtures: small maps, a small IK model, and target
placement helpers used by the session, server and acceptance tests."""

import math
from dataclasses import replace

import numpy as np

from spiralarm.arm import ArmParameters, build_arm
from spiralarm.dynamics import SimConfig
from spiralarm.ikmlp import TrainConfig, train_ik
from spiralarm.reach import (
    ReachMap,
    bend_command,
    build_reach_map,
    gen_ik_dataset,
    soft_fk,
    voxelize,
)
from spiralarm.rigid import default_rigid_arm, downward_rotation, sample_downward_poses
from spiralarm.teleop import TeleopConfig, TeleopSession


def build_teleop_kit(desk_model, simcfg, stiffness_factor=1.0):
    """Everything a TeleopSession needs, at desk scale."""
    arm = default_rigid_arm()

    soft_map = build_reach_map(desk_model, 0.0, 800, simcfg=simcfg, workers=2)

    pts = sample_downward_poses(arm, 20000, seed=3)
    origin, occ = voxelize(pts, 0.02)
    rigid_map = ReachMap(None, 0.02, origin, occ, len(pts))

    ds = gen_ik_dataset(desk_model, 6000, gravity_angles_deg=(0.0, 60.0, 120.0),
                        seed=8, simcfg=simcfg, workers=2)
    slack = desk_model.tendon_slack_length
    ik_model, _ = train_ik(ds, TrainConfig(epochs=300, seed=8),
                           output_bounds=(np.full(3, slack - 0.12),
                                          np.full(3, slack)))

    physical = desk_model if stiffness_factor == 1.0 else build_arm(
        desk_model.geometry,
        replace(desk_model.params, K0=desk_model.params.K0 * stiffness_factor))

    # a mount target the rigid arm can reach tool-down, from the map samples
    mount_target = pts[np.argmin(np.linalg.norm(
        pts - np.array([0.45, 0.1, 0.55]), axis=1))]
    return {
        "arm": arm,
        "soft_map": soft_map,
        "rigid_map": rigid_map,
        "ik_model": ik_model,
        "physical": physical,
        "mount_target": mount_target,
        "dataset": ds,
    }


def make_session(desk_model, simcfg, kit, physical=None, **cfg):
    return TeleopSession(
        desk_model, physical if physical is not None else kit["physical"],
        kit["arm"], kit["rigid_map"], [kit["soft_map"]], kit["ik_model"],
        simcfg=simcfg, config=TeleopConfig(**cfg) if cfg else TeleopConfig(),
        q_home=[0.0, 0.6, 0.0, -1.6, 0.0, 1.0, 0.0],
    )


def place_targets(session, kit, desk_model, simcfg, contraction=0.06,
                  yaw=0.4):
    """Aim both rays: mount at a reachable map sample, soft tip at the FK
    pose of a dorsal bend expressed in the would-be mount frame."""
    mount = kit["mount_target"]
    p_local, _ = soft_fk(desk_model, bend_command(desk_model, 0.0, contraction),
                         0.0, simcfg)
    R = downward_rotation(yaw)
    soft_world = mount + R @ p_local
    session.set_ray("left", mount + np.array([0.0, 0.0, 0.3]),
                    [0.0, 0.0, -1.0], 0.3)
    session.set_ray("right", soft_world + np.array([0.0, 0.0, 0.2]),
                    [0.0, 0.0, -1.0], 0.2)
    return mount, soft_world


def full_curl_sphere(desk_model, simcfg, mount, yaw=0.4):
    """Sphere centered on the wrap region of a full 100 mm dorsal curl."""
    from spiralarm.dynamics import Simulation, fast_settle_model

    cmd = bend_command(desk_model, 0.0, 0.1)
    sim = Simulation(fast_settle_model(desk_model),
                     replace(simcfg, gravity_tilt=0.0))
    state, _ = sim.settle(cmd, record=False)
    pos, _ = sim.kernel.fk_pose(state.theta)
    center_local = pos[2:].mean(axis=0)
    R = downward_rotation(yaw)
    center_world = mount + R @ center_local
    dists = np.linalg.norm(pos[2:] - center_local, axis=1)
    radius = max(float(np.median(dists)) - 0.005, 0.02)
    tip_local, _ = soft_fk(desk_model, cmd, 0.0, simcfg)
    tip_world = mount + R @ tip_local
    return center_world, radius, tip_world
