"""Fit losses on base-to-segment distances, and the internal shape error.

All metrics compare trajectories through the distances between segment 1
and every other segment, so they measure internal shape consistency and
are invariant under isometries applied jointly to both pose sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spiralarm.trajectory import Trajectory


@dataclass(frozen=True)
class LossConfig:
    delta_pos: float = 1.0
    delta_vel: float = 1.0
    epsilon: float = 1e-6
    w_pos: float = 0.7
    w_vel: float = 0.3

    def validate(self):
        for name in ("delta_pos", "delta_vel", "epsilon", "w_pos"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        # w_vel = 0 is allowed: it disables the velocity term (flagged in
        # identification reports)
        if self.w_vel < 0.0:
            raise ValueError("w_vel must be >= 0")
        if abs(self.w_pos + self.w_vel - 1.0) > 1e-12:
            raise ValueError("w_pos + w_vel must equal 1")
        return self

    @property
    def velocity_term_disabled(self):
        return self.w_vel == 0.0


def huber(r, delta):
    """Quadratic below delta, linear above: 0.5 r^2 or delta(|r| - delta/2)."""
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    r = np.abs(np.asarray(r, dtype=float))
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return out if out.ndim else float(out)


def base_distances(pos):
    """d_i = ||P_1 - P_i|| for i = 2..N; pos is (..., N, 3) -> (..., N-1)."""
    pos = np.asarray(pos, dtype=float)
    rel = pos[..., 1:, :] - pos[..., :1, :]
    return np.linalg.norm(rel, axis=-1)


def static_loss(sim_eq, real_eq, cfg: LossConfig = LossConfig()):
    """Huber loss on relative base-distance residuals of equilibrium poses.

    Accepts single (N, 3) pose arrays or lists of them (one per condition);
    per-condition losses are averaged.
    """
    cfg.validate()
    if isinstance(sim_eq, (list, tuple)):
        if len(sim_eq) != len(real_eq):
            raise ValueError("condition count mismatch")
        vals = [static_loss(s, r, cfg) for s, r in zip(sim_eq, real_eq)]
        return float(np.mean(vals))
    sim_eq = np.asarray(sim_eq, dtype=float)
    real_eq = np.asarray(real_eq, dtype=float)
    if sim_eq.shape != real_eq.shape:
        raise ValueError(f"shape mismatch {sim_eq.shape} vs {real_eq.shape}")
    if sim_eq.shape[0] < 2:
        raise ValueError("need at least 2 segments")
    ds = base_distances(sim_eq)
    dr = base_distances(real_eq)
    r = (ds - dr) / (np.abs(dr) + cfg.epsilon)
    return float(np.mean(huber(r, cfg.delta_pos)))


def _check_aligned(sim: Trajectory, real: Trajectory):
    if sim.pos.shape != real.pos.shape:
        raise ValueError(
            f"shape mismatch {sim.pos.shape} vs {real.pos.shape}; align first"
        )
    if np.max(np.abs(sim.t - real.t)) > 1e-9:
        raise ValueError("timestamps differ; align first")


def dynamic_loss(sim, real, cfg: LossConfig = LossConfig()):
    """Weighted per-frame position + velocity loss, averaged over frames.

    The velocity term penalizes discrepancies in the frame-to-frame change
    of the base distances and is zero at the first frame.  Lists of
    aligned trajectory pairs average their per-trial losses.
    """
    cfg.validate()
    if isinstance(sim, (list, tuple)):
        if len(sim) != len(real):
            raise ValueError("trial count mismatch")
        vals = [dynamic_loss(s, r, cfg) for s, r in zip(sim, real)]
        return float(np.mean(vals))
    _check_aligned(sim, real)
    ds = base_distances(sim.pos)       # (T, N-1)
    dr = base_distances(real.pos)
    r_pos = (ds - dr) / (np.abs(dr) + cfg.epsilon)
    L_pos = huber(r_pos, cfg.delta_pos).mean(axis=1)      # (T,)

    L_vel = np.zeros_like(L_pos)
    if ds.shape[0] >= 2:
        dds = np.diff(ds, axis=0)
        ddr = np.diff(dr, axis=0)
        r_vel = (dds - ddr) / (np.abs(ddr) + cfg.epsilon)
        L_vel[1:] = huber(r_vel, cfg.delta_vel).mean(axis=1)

    L_sum = cfg.w_pos * L_pos + cfg.w_vel * L_vel
    return float(L_sum.mean())


def internal_error(sim, real):
    """Mean absolute base-distance discrepancy, in meters.

    E = 1/((N-1) T) * sum_t sum_i |  ||P1-Pi||_sim - ||P1-Pi||_real  |
    """
    if isinstance(sim, (list, tuple)):
        vals = [internal_error(s, r) for s, r in zip(sim, real)]
        return float(np.mean(vals))
    _check_aligned(sim, real)
    ds = base_distances(sim.pos)
    dr = base_distances(real.pos)
    return float(np.mean(np.abs(ds - dr)))
