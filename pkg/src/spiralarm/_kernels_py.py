"""Pure-Python (numpy) fallback for the compiled simulation kernel.

Same function surface and semantics as the Cython extension in
``_kernels.pyx``; used when the extension is unavailable.  Slower by a
large factor (see benchmarks/), intended for correctness checks and
environments without a compiler.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-6
VEL_LIMIT = 1e3

STATUS_OK = 0
STATUS_UNSTABLE = 1
STATUS_TIMEOUT = 2


def scratch_size(n):
    # kept for interface parity; the fallback allocates internally
    return 0


def _joint_rot_batch(tx, ty):
    """Stacked Rx(tx) @ Ry(ty) for 1-d angle arrays -> (B, 3, 3)."""
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    B = len(tx)
    R = np.empty((B, 3, 3))
    R[:, 0, 0] = cy
    R[:, 0, 1] = 0.0
    R[:, 0, 2] = sy
    R[:, 1, 0] = sx * sy
    R[:, 1, 1] = cx
    R[:, 1, 2] = -sx * cy
    R[:, 2, 0] = -cx * sy
    R[:, 2, 1] = sx
    R[:, 2, 2] = cx * cy
    return R


def _quat_from_mat(R):
    q = np.empty(4)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q[:] = (0.25 * s, (R[2, 1] - R[1, 2]) / s,
                (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q[:] = ((R[2, 1] - R[1, 2]) / s, 0.25 * s,
                (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q[:] = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q[:] = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    if q[0] < 0.0:
        q = -q
    return q


class _Scratch:
    def __init__(self, n):
        self.Rw = np.empty((n + 1, 3, 3))
        self.disks = np.empty((n + 1, 3))
        self.cen = np.empty((n, 3))
        self.ax = np.empty((n, 3))
        self.ay = np.empty((n, 3))
        self.anch = np.empty((3, n + 1, 3))
        self.lenpre = np.empty((3, n + 1))
        self.l3 = np.empty(3)
        self.jac = np.empty((3, 2 * n))


def _fk(n, L, rad, scos, ssin, th, sc):
    sc.Rw[0] = np.eye(3)
    sc.disks[0] = 0.0
    sc.anch[:, 0, 0] = rad[0] * scos
    sc.anch[:, 0, 1] = rad[0] * ssin
    sc.anch[:, 0, 2] = 0.0
    Rj = _joint_rot_batch(th[0::2], th[1::2])
    cx, sx = np.cos(th[0::2]), np.sin(th[0::2])
    for s in range(n):
        sc.Rw[s + 1] = sc.Rw[s] @ Rj[s]
        sc.ax[s] = sc.Rw[s, :, 0]
        sc.ay[s] = cx[s] * sc.Rw[s, :, 1] + sx[s] * sc.Rw[s, :, 2]
        axis = sc.Rw[s + 1, :, 2]
        sc.disks[s + 1] = sc.disks[s] + L[s] * axis
        sc.cen[s] = sc.disks[s] + 0.5 * L[s] * axis
        off = rad[s + 1] * (np.outer(scos, sc.Rw[s + 1, :, 0])
                            + np.outer(ssin, sc.Rw[s + 1, :, 1]))
        sc.anch[:, s + 1] = sc.disks[s + 1] + off
    spans = np.linalg.norm(np.diff(sc.anch, axis=1), axis=2)
    sc.lenpre[:, 0] = 0.0
    np.cumsum(spans, axis=1, out=sc.lenpre[:, 1:])
    sc.l3[:] = sc.lenpre[:, -1]


def _tendon_lengths_batch(n, L, rad, scos, ssin, TH):
    """Tendon lengths for a batch of configurations TH (B, 2n) -> (B, 3)."""
    B = TH.shape[0]
    R = np.broadcast_to(np.eye(3), (B, 3, 3)).copy()
    p = np.zeros((B, 3))
    ap = np.empty((B, 3, 3))        # previous anchor per tendon
    ap[:, :, 0] = rad[0] * scos
    ap[:, :, 1] = rad[0] * ssin
    ap[:, :, 2] = 0.0
    lens = np.zeros((B, 3))
    for s in range(n):
        R = R @ _joint_rot_batch(TH[:, 2 * s], TH[:, 2 * s + 1])
        p = p + L[s] * R[:, :, 2]
        a = (p[:, None, :]
             + rad[s + 1] * (scos[None, :, None] * R[:, None, :, 0]
                             + ssin[None, :, None] * R[:, None, :, 1]))
        lens += np.linalg.norm(a - ap, axis=2)
        ap = a
    return lens


def _tendon_jacobian(n, L, rad, scos, ssin, th, sc):
    nd = 2 * n
    TH = np.tile(th, (2 * nd, 1))
    idx = np.arange(nd)
    TH[2 * idx, idx] += FD_STEP
    TH[2 * idx + 1, idx] -= FD_STEP
    lens = _tendon_lengths_batch(n, L, rad, scos, ssin, TH)
    sc.jac[:] = ((lens[0::2] - lens[1::2]) / (2.0 * FD_STEP)).T


def run_sim(L, rad, m, scos, ssin, K, D, inertia, theta0,
            mu_t, kp, kv, F_range, tau_m, slack_len, gvec,
            engaged, l_cmd, th, thd, l_act,
            dt, max_steps, steps_per_frame, vel_tol, hold_steps,
            out_t, out_pos, out_quat, t_start, record,
            scratch=None, stats=None):
    """Advance the state in place, optionally recording frames.

    Returns (status, n_frames, n_steps); status 0 = ok/converged,
    1 = unstable, 2 = settle timeout.  ``stats`` receives
    [min applied tension, max applied tension, max |theta_dot|].
    """
    n = len(L)
    sc = _Scratch(n)
    Dd = np.repeat(D, 2)
    Kd = np.repeat(K, 2)
    Id = np.repeat(inertia, 2)
    eng = np.asarray(engaged, dtype=bool)
    frame_cap = out_t.shape[0]
    gvec = np.asarray(gvec, dtype=float)
    if stats is None:
        stats = np.zeros(3)
    stats[:3] = 0.0

    step = 0
    nframes = 0
    hold = 0
    stat = -1
    while step < max_steps:
        _fk(n, L, rad, scos, ssin, th, sc)
        _tendon_jacobian(n, L, rad, scos, ssin, th, sc)

        # tension regimes from current velocities; the velocity-gain
        # coupling of unclamped tendons is handled implicitly below
        ldot = sc.jac @ thd
        raw = kp * (sc.l3 - l_act) + kv * ldot
        free = eng & (raw > 0.0) & (raw < F_range)
        ften = np.where(eng, np.clip(raw, 0.0, F_range), 0.0)
        ften[free] = (kp * (sc.l3 - l_act))[free]    # position part only

        bends = np.hypot(th[0::2], th[1::2])
        wrap = np.concatenate([[0.0], np.cumsum(bends[:-1])])
        fric = np.exp(-mu_t * wrap)

        # gravity torques via distal mass-moment accumulation
        S = np.cumsum((m[:, None] * sc.cen)[::-1], axis=0)[::-1]
        Mm = np.cumsum(m[::-1])[::-1]
        r = S - Mm[:, None] * sc.disks[:-1]
        c = np.cross(r, gvec[None, :])
        tq = np.empty(2 * n)
        tq[0::2] = np.einsum("ij,ij->i", sc.ax, c)
        tq[1::2] = np.einsum("ij,ij->i", sc.ay, c)

        tq -= Kd * (th - theta0)
        feff = np.repeat(ften[:, None] * fric[None, :], 2, axis=1)   # (3, 2n)
        tq -= np.einsum("td,td->d", feff, sc.jac)

        # implicit joint damping plus implicit velocity-gain coupling
        # (tip joints are too stiff relative to inertia to do it explicitly)
        rhs = Id * thd + dt * tq
        if np.any(free):
            fric_d = np.repeat(fric, 2)
            A = np.diag(Id + dt * Dd)
            for t in range(3):
                if free[t]:
                    A += dt * kv * np.outer(fric_d * sc.jac[t], sc.jac[t])
            thd[:] = np.linalg.solve(A, rhs)
        else:
            thd[:] = rhs / (Id + dt * Dd)
        th += dt * thd

        vmax = float(np.max(np.abs(thd)))
        if vmax > stats[2]:
            stats[2] = vmax

        # applied tensions (clamped PD law at the updated velocities)
        applied = np.where(
            eng,
            np.clip(kp * (sc.l3 - l_act) + kv * (sc.jac @ thd), 0.0, F_range),
            0.0,
        )
        stats[0] = min(stats[0], float(applied.min()))
        stats[1] = max(stats[1], float(applied.max()))

        target = np.where(eng, l_cmd, sc.l3)
        l_act += dt * (target - l_act) / tau_m
        np.clip(l_act, 0.1 * slack_len, 2.0 * slack_len, out=l_act)

        step += 1
        if vmax > VEL_LIMIT:
            stat = STATUS_UNSTABLE
            break
        hold = hold + 1 if vmax < vel_tol else 0

        if record and step % steps_per_frame == 0:
            if nframes < frame_cap:
                out_t[nframes] = t_start + step * dt
                _fk(n, L, rad, scos, ssin, th, sc)
                out_pos[nframes] = sc.cen
                for s in range(n):
                    out_quat[nframes, s] = _quat_from_mat(sc.Rw[s + 1])
                nframes += 1
            if hold_steps > 0 and hold >= hold_steps:
                stat = STATUS_OK
                break
        elif not record and hold_steps > 0 and hold >= hold_steps:
            stat = STATUS_OK
            break

    if stat < 0:
        stat = STATUS_OK if hold_steps == 0 else STATUS_TIMEOUT
    return stat, nframes, step


def fk_pose(L, rad, scos, ssin, th, out_pos, out_quat):
    """Segment centroid positions and frame quaternions for one state."""
    n = len(L)
    sc = _Scratch(n)
    _fk(n, L, rad, scos, ssin, th, sc)
    out_pos[:] = sc.cen
    for s in range(n):
        out_quat[s] = _quat_from_mat(sc.Rw[s + 1])


def fk_points(L, rad, scos, ssin, th, out_disks, out_anchors):
    """Disk centers and per-tendon anchor points (diagnostics, tests)."""
    n = len(L)
    sc = _Scratch(n)
    _fk(n, L, rad, scos, ssin, th, sc)
    out_disks[:] = sc.disks
    out_anchors[:] = sc.anch


def tendon_lengths(L, rad, scos, ssin, th, out_l):
    n = len(L)
    sc = _Scratch(n)
    _fk(n, L, rad, scos, ssin, th, sc)
    out_l[:] = sc.l3
