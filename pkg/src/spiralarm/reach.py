"""Gravity-conditioned reachability maps and IK dataset generation.

The soft arm's reachable volume depends on the gravity direction relative
to its base axis, so maps are built per sampled gravity angle and queried
by nearest angle.  Occupancy is a voxel grid dilated by one voxel to close
sampling gaps.
"""

from __future__ import annotations

import base64
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import binary_dilation

from spiralarm.arm import ArmModel
from spiralarm.dynamics import (
    SettleTimeoutError,
    SimConfig,
    Simulation,
    SimulationUnstableError,
    TendonCommand,
    fast_settle_model,
)
from spiralarm.kernels import SimKernel


@dataclass(frozen=True)
class ReachMap:
    gravity_angle_deg: float | None    # None for the rigid-arm map
    voxel_size: float
    origin: np.ndarray                 # (3,) center of voxel [0,0,0]
    occupancy: np.ndarray              # (nx, ny, nz) bool
    sample_count: int
    failed_count: int = 0

    @property
    def dims(self):
        return self.occupancy.shape

    def point_to_index(self, point):
        rel = (np.asarray(point, dtype=float) - self.origin) / self.voxel_size
        return np.round(rel).astype(int)

    def contains(self, point) -> bool:
        idx = self.point_to_index(point)
        if np.any(idx < 0) or np.any(idx >= np.array(self.occupancy.shape)):
            return False
        return bool(self.occupancy[tuple(idx)])


def voxelize(points, voxel_size=0.01, dilate=1, margin=1):
    """Build an occupancy grid enclosing the points, dilated to close gaps."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("no points to voxelize")
    lo = np.floor(points.min(axis=0) / voxel_size).astype(int) - margin - dilate
    hi = np.ceil(points.max(axis=0) / voxel_size).astype(int) + margin + dilate
    dims = hi - lo + 1
    occ = np.zeros(tuple(dims), dtype=bool)
    idx = np.round(points / voxel_size).astype(int) - lo
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if dilate:
        occ = binary_dilation(occ, structure=np.ones((3, 3, 3), dtype=bool),
                              iterations=dilate)
    origin = lo.astype(float) * voxel_size
    return origin, occ


def save_reach_map(m: ReachMap, path):
    packed = np.packbits(m.occupancy.astype(np.uint8).ravel())
    doc = {
        "gravity_angle_deg": m.gravity_angle_deg,
        "voxel_size": m.voxel_size,
        "origin": [float(v) for v in m.origin],
        "dims": [int(v) for v in m.occupancy.shape],
        "occupancy_b64": base64.b64encode(packed.tobytes()).decode("ascii"),
        "sample_count": m.sample_count,
        "failed_count": m.failed_count,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_reach_map(path) -> ReachMap:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    dims = tuple(int(v) for v in doc["dims"])
    n = dims[0] * dims[1] * dims[2]
    raw = base64.b64decode(doc["occupancy_b64"])
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n]
    occ = bits.astype(bool).reshape(dims)
    return ReachMap(
        gravity_angle_deg=doc["gravity_angle_deg"],
        voxel_size=float(doc["voxel_size"]),
        origin=np.asarray(doc["origin"], dtype=float),
        occupancy=occ,
        sample_count=int(doc["sample_count"]),
        failed_count=int(doc.get("failed_count", 0)),
    )


# ---------------------------------------------------------------------------
# Soft-arm quasi-static FK and command sampling

# Pulls below this snap to slack, both when building commands and when
# decoding predicted lengths.  The tip joints are soft enough that stray
# sub-millimeter engagements visibly distort the distal shape, so the snap
# doubles as an inference noise gate.
SLACK_SNAP = 2e-3      # m
CONTRACTION_MAX = 0.1  # m, per-cable command range for sampling


def bend_command(model: ArmModel, azimuth, contraction) -> TendonCommand:
    """Tendon command bending toward ``azimuth`` with the given contraction.

    Each tendon is pulled by contraction * max(0, cos(azimuth - station));
    tendons with negligible weight stay slack.  azimuth 0 is single-cable
    dorsal, pi is symmetric dual-cable ventral.
    """
    slack = model.tendon_slack_length
    stations = np.arctan2(model.station_sin, model.station_cos)
    targets = []
    for st in stations:
        w = max(0.0, math.cos(azimuth - st))
        if w * contraction > SLACK_SNAP:
            targets.append(slack - contraction * w)
        else:
            targets.append(None)
    return TendonCommand(tuple(targets))


def command_to_labels(model: ArmModel, cmd: TendonCommand) -> np.ndarray:
    """Training labels: commanded lengths with slack encoded as the
    straight-configuration length."""
    slack = model.tendon_slack_length
    return np.array([slack if v is None else v for v in cmd.target_lengths])


def labels_to_command(model: ArmModel, lengths,
                      slack_margin=SLACK_SNAP) -> TendonCommand:
    """Inverse of command_to_labels: lengths within ``slack_margin`` of the
    straight length disengage that tendon (same snap bend_command uses, so
    the round trip through labels is exact)."""
    slack = model.tendon_slack_length
    targets = []
    for v in lengths:
        v = float(min(v, slack))
        targets.append(None if v >= slack - slack_margin else v)
    return TendonCommand(tuple(targets))


def soft_fk(model: ArmModel, cmd: TendonCommand, gravity_angle,
            simcfg: SimConfig = SimConfig(), fast=True, strict=False):
    """Quasi-static FK: settle under the tilted gravity, return tip pose.

    Returns (position (3,), quat (4,)) of the distal end of the last
    segment.  A settle that times out within 10x the velocity tolerance
    (clamp-boundary micro-chatter under co-contraction) is accepted unless
    ``strict``; real failures raise SettleTimeoutError or
    SimulationUnstableError.
    """
    mdl = fast_settle_model(model) if fast else model
    cfg = replace(simcfg, gravity_tilt=float(gravity_angle))
    sim = Simulation(mdl, cfg)
    try:
        state, _ = sim.settle(cmd, record=False)
    except SettleTimeoutError as err:
        residual = float(np.max(np.abs(err.state.theta_dot)))
        if strict or residual > 10.0 * cfg.settle_vel_tol:
            raise
        state = err.state
    kern = SimKernel(model)
    disks, _ = kern.fk_points(state.theta)
    _, quats = kern.fk_pose(state.theta)
    return disks[-1].copy(), quats[-1].copy()


def _fk_grid_commands(model, samples):
    """Uniform grid over bending azimuth x contraction level.

    The tip sweeps roughly 8 m per meter of contraction at the sensitive
    end of the range versus ~1.6 m per azimuth revolution, so the grid
    puts ~2x the resolution on azimuth to balance tip-space sample
    spacing (keeps gaps within the one-voxel dilation).
    """
    if samples <= 1:
        return [(0.0, 0.0)]
    n_c = max(2, int(round(math.sqrt(samples / 2.0))))
    n_az = max(1, int(math.ceil(samples / n_c)))
    pairs = []
    for ic in range(n_c):
        c = CONTRACTION_MAX * ic / (n_c - 1)
        for ia in range(n_az):
            pairs.append((2.0 * math.pi * ia / n_az, c))
    return pairs


def build_reach_map(model: ArmModel, gravity_angle, samples,
                    voxel_size=0.01, simcfg: SimConfig = SimConfig(),
                    workers=1) -> ReachMap:
    """Sample quasi-static FK over the bending command grid and voxelize."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pairs = _fk_grid_commands(model, samples)

    def one(pair):
        az, c = pair
        try:
            pos, _ = soft_fk(model, bend_command(model, az, c),
                             gravity_angle, simcfg)
            return pos
        except (SettleTimeoutError, SimulationUnstableError):
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    pts = [r for r in results if r is not None]
    failed = len(results) - len(pts)
    if not pts:
        raise RuntimeError("every FK sample failed to settle")
    origin, occ = voxelize(np.array(pts), voxel_size)
    return ReachMap(
        gravity_angle_deg=math.degrees(gravity_angle),
        voxel_size=voxel_size,
        origin=origin,
        occupancy=occ,
        sample_count=len(pts),
        failed_count=failed,
    )


def query_reach(maps, gravity_angle, point) -> bool:
    """Occupancy at ``point`` in the map with the nearest gravity angle."""
    if not maps:
        raise ValueError("no reach maps given")
    deg = math.degrees(gravity_angle)
    best = min(maps, key=lambda m: abs((m.gravity_angle_deg or 0.0) - deg))
    return best.contains(point)


# ---------------------------------------------------------------------------
# IK dataset

DATASET_HEADER = "theta_g,x,y,z,qw,qx,qy,qz,l1,l2,l3"


@dataclass
class IkDataset:
    inputs: np.ndarray    # (M, 8): theta_g, x, y, z, qw, qx, qy, qz
    labels: np.ndarray    # (M, 3): tendon lengths
    train_idx: np.ndarray
    val_idx: np.ndarray
    skipped: int = 0

    @property
    def train(self):
        return self.inputs[self.train_idx], self.labels[self.train_idx]

    @property
    def val(self):
        return self.inputs[self.val_idx], self.labels[self.val_idx]


def split_indices(n, seed, val_fraction=0.2):
    """Seeded shuffle, 80/20 by default."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return order[n_val:], order[:n_val]


def gen_ik_dataset(model: ArmModel, n_samples, gravity_angles_deg=(0.0, 60.0, 120.0),
                   seed=0, simcfg: SimConfig = SimConfig(), workers=1,
                   contraction_max=CONTRACTION_MAX) -> IkDataset:
    """Random bending commands and gravity angles -> (pose, lengths) rows.

    Settle failures are skipped and counted.  The 80/20 train/validation
    split is a seeded shuffle.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    az = rng.uniform(0.0, 2.0 * math.pi, size=n_samples)
    con = rng.uniform(0.0, contraction_max, size=n_samples)
    gidx = rng.integers(0, len(gravity_angles_deg), size=n_samples)
    gdeg = np.asarray(gravity_angles_deg, dtype=float)[gidx]

    def one(i):
        cmd = bend_command(model, az[i], con[i])
        g = math.radians(gdeg[i])
        try:
            pos, quat = soft_fk(model, cmd, g, simcfg)
        except (SettleTimeoutError, SimulationUnstableError):
            return None
        row = np.concatenate([[g], pos, quat])
        return row, command_to_labels(model, cmd)

    idx = list(range(n_samples))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, idx))
    else:
        results = [one(i) for i in idx]
    rows = [r for r in results if r is not None]
    skipped = len(results) - len(rows)
    if not rows:
        raise RuntimeError("every dataset sample failed to settle")
    inputs = np.array([r[0] for r in rows])
    labels = np.array([r[1] for r in rows])
    train_idx, val_idx = split_indices(len(rows), seed)
    return IkDataset(inputs, labels, train_idx, val_idx, skipped)


def save_dataset_csv(ds: IkDataset, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(DATASET_HEADER + "\n")
        for x, y in zip(ds.inputs, ds.labels):
            fh.write(",".join(f"{v:.9g}" for v in np.concatenate([x, y])) + "\n")
    os.replace(tmp, path)


def load_dataset_csv(path, seed=0) -> IkDataset:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    if data.shape[1] != 11:
        raise ValueError(f"expected 11 columns, got {data.shape[1]}")
    inputs, labels = data[:, :8], data[:, 8:]
    train_idx, val_idx = split_indices(len(inputs), seed)
    return IkDataset(inputs, labels, train_idx, val_idx)
