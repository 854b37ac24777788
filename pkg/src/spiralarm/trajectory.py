"""Trajectory data model, CSV I/O, filtering and time alignment.

A trajectory is the common currency between simulation, recording,
filtering and the fit losses: time-stamped per-segment centroid poses
(position + unit quaternion) at a uniform rate, 120 Hz by default.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import butter, sosfiltfilt

CSV_HEADER = "t,seg,x,y,z,qw,qx,qy,qz"


class TrajectoryError(ValueError):
    """Parse or shape error; carries the 1-based file line when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Trajectory:
    rate_hz: float
    t: np.ndarray      # (F,) strictly increasing, uniformly spaced
    pos: np.ndarray    # (F, N, 3) segment centroid positions, meters
    quat: np.ndarray   # (F, N, 4) segment orientations (w, x, y, z)

    @property
    def n_frames(self):
        return self.t.shape[0]

    @property
    def n_segments(self):
        return self.pos.shape[1]

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0]) if self.n_frames else 0.0

    def validate(self, dt_tol=1e-6, quat_tol=1e-6):
        if self.t.shape[0] != self.pos.shape[0] or self.t.shape[0] != self.quat.shape[0]:
            raise TrajectoryError("frame count mismatch between t, pos, quat")
        if self.n_frames >= 2:
            dt = np.diff(self.t)
            if np.any(dt <= 0.0):
                raise TrajectoryError("timestamps not strictly increasing")
            if np.max(dt) - np.min(dt) > dt_tol:
                raise TrajectoryError(
                    f"non-uniform frame spacing (spread {np.max(dt) - np.min(dt):.3g}s)"
                )
        norms = np.linalg.norm(self.quat, axis=2)
        if np.any(np.abs(norms - 1.0) > quat_tol):
            raise TrajectoryError("quaternions not unit-norm")
        return self


def save_csv(traj: Trajectory, path):
    """Write `t,seg,x,y,z,qw,qx,qy,qz` rows at 9 significant digits."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# rate_hz={traj.rate_hz:.9g}\n")
        fh.write(CSV_HEADER + "\n")
        for f in range(traj.n_frames):
            for s in range(traj.n_segments):
                p = traj.pos[f, s]
                q = traj.quat[f, s]
                fh.write(
                    f"{traj.t[f]:.9g},{s + 1},"
                    f"{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
                    f"{q[0]:.9g},{q[1]:.9g},{q[2]:.9g},{q[3]:.9g}\n"
                )
    os.replace(tmp, path)


def load_csv(path) -> Trajectory:
    """Parse a trajectory CSV; `#` comment lines are skipped.

    Frames must be complete (every segment 1..N exactly once per
    timestamp); segment order within a frame is normalized ascending.
    """
    rate_hz = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    header_seen = False
    for lineno, rawline in enumerate(lines, start=1):
        stripped = rawline.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if body.startswith("rate_hz="):
                try:
                    rate_hz = float(body.split("=", 1)[1])
                except ValueError:
                    raise TrajectoryError("bad rate_hz comment", line=lineno)
            continue
        if not header_seen:
            if stripped != CSV_HEADER:
                raise TrajectoryError(
                    f"expected header {CSV_HEADER!r}, got {stripped!r}",
                    line=lineno,
                )
            header_seen = True
            continue
        parts = stripped.split(",")
        if len(parts) != 9:
            raise TrajectoryError(
                f"expected 9 fields, got {len(parts)}", line=lineno
            )
        try:
            t = float(parts[0])
            seg = int(parts[1])
            vals = [float(x) for x in parts[2:]]
        except ValueError as exc:
            raise TrajectoryError(str(exc), line=lineno) from exc
        if seg < 1:
            raise TrajectoryError(f"segment index {seg} < 1", line=lineno)
        rows.append((t, seg, vals, lineno))
    if not header_seen:
        raise TrajectoryError("empty file (no header)", line=1)
    if not rows:
        raise TrajectoryError("no data rows", line=len(lines) or 1)

    n_seg = max(r[1] for r in rows)
    frames: dict = {}
    order = []
    for t, seg, vals, lineno in rows:
        if t not in frames:
            frames[t] = {}
            order.append(t)
        if seg in frames[t]:
            raise TrajectoryError(
                f"duplicate segment {seg} at t={t:.9g}", line=lineno
            )
        frames[t][seg] = vals

    tarr = np.array(order)
    if np.any(np.diff(tarr) <= 0.0):
        raise TrajectoryError("timestamps not strictly increasing")

    F = len(order)
    pos = np.empty((F, n_seg, 3))
    quat = np.empty((F, n_seg, 4))
    for f, t in enumerate(order):
        got = frames[t]
        missing = [s for s in range(1, n_seg + 1) if s not in got]
        if missing:
            raise TrajectoryError(
                f"frame t={t:.9g} missing segment(s) {missing}"
            )
        for seg in range(1, n_seg + 1):
            vals = got[seg]
            pos[f, seg - 1] = vals[:3]
            quat[f, seg - 1] = vals[3:]

    if rate_hz is None:
        rate_hz = 1.0 / float(np.median(np.diff(tarr))) if F >= 2 else 120.0
    traj = Trajectory(rate_hz=rate_hz, t=tarr, pos=pos, quat=quat)
    return traj.validate(quat_tol=1e-3)


def hemispherize(quat):
    """Flip quaternion signs for frame-to-frame continuity per segment."""
    q = quat.copy()
    for f in range(1, q.shape[0]):
        dots = np.einsum("sj,sj->s", q[f], q[f - 1])
        q[f, dots < 0.0] *= -1.0
    return q


def butterworth_lowpass(traj: Trajectory, cutoff_hz, order=2) -> Trajectory:
    """Zero-phase (forward-backward) Butterworth low-pass, per coordinate.

    Quaternions are sign-aligned, filtered componentwise and renormalized;
    timestamps and frame count are preserved exactly.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    if not (0.0 < cutoff_hz < traj.rate_hz / 2.0):
        raise ValueError(
            f"cutoff {cutoff_hz} Hz outside (0, {traj.rate_hz / 2.0}) Hz"
        )
    sos = butter(order, cutoff_hz, btype="low", fs=traj.rate_hz, output="sos")
    F, N, _ = traj.pos.shape
    pos = sosfiltfilt(sos, traj.pos.reshape(F, -1), axis=0).reshape(F, N, 3)
    q = hemispherize(traj.quat)
    qf = sosfiltfilt(sos, q.reshape(F, -1), axis=0).reshape(F, N, 4)
    qf /= np.linalg.norm(qf, axis=2, keepdims=True)
    return Trajectory(rate_hz=traj.rate_hz, t=traj.t.copy(), pos=pos, quat=qf)


class AlignmentError(ValueError):
    pass


def _nlerp(q0, q1, w):
    dots = np.einsum("...j,...j->...", q0, q1)
    q1 = np.where(dots[..., None] < 0.0, -q1, q1)
    out = (1.0 - w[..., None, None]) * q0 + w[..., None, None] * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def align(sim: Trajectory, real: Trajectory) -> tuple[Trajectory, Trajectory]:
    """Crop to the common time window, resample sim onto real's timestamps.

    Positions interpolate linearly, quaternions by normalized lerp; the
    outputs have identical frame counts.
    """
    if sim.n_frames == 0 or real.n_frames == 0:
        raise AlignmentError("empty trajectory")
    t0 = max(sim.t[0], real.t[0])
    t1 = min(sim.t[-1], real.t[-1])
    if t1 < t0 - 1e-12:
        raise AlignmentError(
            f"no overlap: sim [{sim.t[0]:.6g},{sim.t[-1]:.6g}] vs "
            f"real [{real.t[0]:.6g},{real.t[-1]:.6g}]"
        )
    eps = 1e-9
    mask = (real.t >= t0 - eps) & (real.t <= t1 + eps)
    if not np.any(mask):
        raise AlignmentError("no real frames inside the overlap window")
    tq = real.t[mask]

    i1 = np.searchsorted(sim.t, tq, side="left")
    i1 = np.clip(i1, 0, sim.n_frames - 1)
    i0 = np.maximum(i1 - 1, 0)
    exact = np.abs(sim.t[i1] - tq) <= eps
    i0 = np.where(exact, i1, i0)
    denom = np.where(i1 > i0, sim.t[i1] - sim.t[i0], 1.0)
    w = np.where(i1 > i0, (tq - sim.t[i0]) / denom, 0.0)

    pos = (1.0 - w[:, None, None]) * sim.pos[i0] + w[:, None, None] * sim.pos[i1]
    quat = _nlerp(sim.quat[i0], sim.quat[i1], w)

    sim_out = Trajectory(rate_hz=real.rate_hz, t=tq.copy(), pos=pos, quat=quat)
    real_out = Trajectory(
        rate_hz=real.rate_hz, t=tq.copy(),
        pos=real.pos[mask].copy(), quat=real.quat[mask].copy(),
    )
    return sim_out, real_out


def equilibrium_poses(traj: Trajectory, window_s=0.2) -> np.ndarray:
    """Mean segment positions over the trailing window (settled tail)."""
    if traj.n_frames == 0:
        raise TrajectoryError("empty trajectory")
    t_last = traj.t[-1]
    mask = traj.t >= t_last - window_s
    return traj.pos[mask].mean(axis=0)


def with_position_noise(traj: Trajectory, sigma, seed) -> Trajectory:
    """Additive Gaussian marker noise on positions (synthetic-twin tests)."""
    rng = np.random.default_rng(seed)
    noisy = traj.pos + rng.normal(0.0, sigma, size=traj.pos.shape)
    return replace(traj, pos=noisy)
