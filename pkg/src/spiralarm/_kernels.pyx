# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled simulation kernel: chain kinematics and the integration loop.

Mirrors spiralarm._kernels_py function for function; selected at import by
spiralarm.kernels.  The integration loop releases the GIL so concurrent
evaluators can run on threads against one shared, immutable model.
"""

from libc.math cimport cos, sin, sqrt, exp, hypot, fabs

import numpy as np

cdef double FD_STEP = 1e-6          # rad, central-difference step for dl/dq
cdef double VEL_LIMIT = 1e3         # rad/s, divergence guard

STATUS_OK = 0
STATUS_UNSTABLE = 1
STATUS_TIMEOUT = 2


def scratch_size(n):
    """Doubles needed by run_sim scratch for an n-segment arm."""
    return ((n + 1) * 9        # Rw
            + (n + 1) * 3      # disks
            + n * 3            # cen
            + n * 3            # ax
            + n * 3            # ay
            + 3 * (n + 1) * 3  # anchors
            + 3 * (n + 1)      # tendon length prefix sums
            + 3 * 2 * n        # jacobian
            + 3                # tensions
            + n                # friction factors
            + 2 * n            # torques
            + 2 * n            # perturbed theta
            + 3                # tendon lengths
            + 4 * n * n        # velocity-solve matrix
            + 2 * n)           # velocity-solve rhs


cdef inline void _joint_rot(double tx, double ty, double *R) noexcept nogil:
    # Rx(tx) @ Ry(ty): bending joint, x then y axis.
    cdef double cx = cos(tx)
    cdef double sx = sin(tx)
    cdef double cy = cos(ty)
    cdef double sy = sin(ty)
    R[0] = cy;       R[1] = 0.0;  R[2] = sy
    R[3] = sx * sy;  R[4] = cx;   R[5] = -sx * cy
    R[6] = -cx * sy; R[7] = sx;   R[8] = cx * cy


cdef inline void _mat33_mul(const double *A, const double *B, double *C) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            C[3 * i + j] = (A[3 * i + 0] * B[0 + j]
                            + A[3 * i + 1] * B[3 + j]
                            + A[3 * i + 2] * B[6 + j])


cdef inline void _quat_from_mat(const double *R, double *q) noexcept nogil:
    # (w, x, y, z), canonical w >= 0.
    cdef double tr = R[0] + R[4] + R[8]
    cdef double s
    if tr > 0.0:
        s = sqrt(tr + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (R[7] - R[5]) / s
        q[2] = (R[2] - R[6]) / s
        q[3] = (R[3] - R[1]) / s
    elif R[0] >= R[4] and R[0] >= R[8]:
        s = sqrt(1.0 + R[0] - R[4] - R[8]) * 2.0
        q[0] = (R[7] - R[5]) / s
        q[1] = 0.25 * s
        q[2] = (R[1] + R[3]) / s
        q[3] = (R[2] + R[6]) / s
    elif R[4] >= R[8]:
        s = sqrt(1.0 + R[4] - R[0] - R[8]) * 2.0
        q[0] = (R[2] - R[6]) / s
        q[1] = (R[1] + R[3]) / s
        q[2] = 0.25 * s
        q[3] = (R[5] + R[7]) / s
    else:
        s = sqrt(1.0 + R[8] - R[0] - R[4]) * 2.0
        q[0] = (R[3] - R[1]) / s
        q[1] = (R[2] + R[6]) / s
        q[2] = (R[5] + R[7]) / s
        q[3] = 0.25 * s
    if q[0] < 0.0:
        q[0] = -q[0]; q[1] = -q[1]; q[2] = -q[2]; q[3] = -q[3]


cdef void _fk(int n, const double *L, const double *rad,
              const double *scos, const double *ssin,
              const double *th,
              double *Rw, double *disks, double *cen,
              double *ax, double *ay,
              double *anch, double *lenpre, double *l3) noexcept nogil:
    """Full forward pass: frames, disk centers, centroids, joint axes,
    anchor points and per-tendon length prefix sums."""
    cdef int s, t, k
    cdef double Rj[9]
    cdef double cx, sx, half
    cdef double dx, dy, dz
    # base disk frame = identity at origin
    for k in range(9):
        Rw[k] = 0.0
    Rw[0] = 1.0; Rw[4] = 1.0; Rw[8] = 1.0
    disks[0] = 0.0; disks[1] = 0.0; disks[2] = 0.0
    for t in range(3):
        anch[t * (n + 1) * 3 + 0] = rad[0] * scos[t]
        anch[t * (n + 1) * 3 + 1] = rad[0] * ssin[t]
        anch[t * (n + 1) * 3 + 2] = 0.0
        lenpre[t * (n + 1)] = 0.0
    for s in range(n):
        _joint_rot(th[2 * s], th[2 * s + 1], Rj)
        _mat33_mul(&Rw[9 * s], Rj, &Rw[9 * (s + 1)])
        # joint axes: x of parent frame; y of parent frame rotated by Rx
        cx = cos(th[2 * s]); sx = sin(th[2 * s])
        ax[3 * s + 0] = Rw[9 * s + 0]
        ax[3 * s + 1] = Rw[9 * s + 3]
        ax[3 * s + 2] = Rw[9 * s + 6]
        ay[3 * s + 0] = cx * Rw[9 * s + 1] + sx * Rw[9 * s + 2]
        ay[3 * s + 1] = cx * Rw[9 * s + 4] + sx * Rw[9 * s + 5]
        ay[3 * s + 2] = cx * Rw[9 * s + 7] + sx * Rw[9 * s + 8]
        # segment axis = third column of world rotation
        disks[3 * (s + 1) + 0] = disks[3 * s + 0] + L[s] * Rw[9 * (s + 1) + 2]
        disks[3 * (s + 1) + 1] = disks[3 * s + 1] + L[s] * Rw[9 * (s + 1) + 5]
        disks[3 * (s + 1) + 2] = disks[3 * s + 2] + L[s] * Rw[9 * (s + 1) + 8]
        half = 0.5 * L[s]
        cen[3 * s + 0] = disks[3 * s + 0] + half * Rw[9 * (s + 1) + 2]
        cen[3 * s + 1] = disks[3 * s + 1] + half * Rw[9 * (s + 1) + 5]
        cen[3 * s + 2] = disks[3 * s + 2] + half * Rw[9 * (s + 1) + 8]
        for t in range(3):
            anch[(t * (n + 1) + s + 1) * 3 + 0] = (
                disks[3 * (s + 1) + 0]
                + rad[s + 1] * (scos[t] * Rw[9 * (s + 1) + 0] + ssin[t] * Rw[9 * (s + 1) + 1]))
            anch[(t * (n + 1) + s + 1) * 3 + 1] = (
                disks[3 * (s + 1) + 1]
                + rad[s + 1] * (scos[t] * Rw[9 * (s + 1) + 3] + ssin[t] * Rw[9 * (s + 1) + 4]))
            anch[(t * (n + 1) + s + 1) * 3 + 2] = (
                disks[3 * (s + 1) + 2]
                + rad[s + 1] * (scos[t] * Rw[9 * (s + 1) + 6] + ssin[t] * Rw[9 * (s + 1) + 7]))
    for t in range(3):
        for k in range(1, n + 1):
            dx = anch[(t * (n + 1) + k) * 3 + 0] - anch[(t * (n + 1) + k - 1) * 3 + 0]
            dy = anch[(t * (n + 1) + k) * 3 + 1] - anch[(t * (n + 1) + k - 1) * 3 + 1]
            dz = anch[(t * (n + 1) + k) * 3 + 2] - anch[(t * (n + 1) + k - 1) * 3 + 2]
            lenpre[t * (n + 1) + k] = lenpre[t * (n + 1) + k - 1] + sqrt(dx * dx + dy * dy + dz * dz)
        l3[t] = lenpre[t * (n + 1) + n]


cdef double _suffix_length(int n, int s0, int t,
                           const double *L, const double *rad,
                           const double *scos, const double *ssin,
                           const double *th,
                           const double *Rw, const double *disks,
                           const double *anch) noexcept nogil:
    """Tendon-t length over spans s0+1..n with frames recomputed from joint
    s0 using (possibly perturbed) th; prefix geometry is reused."""
    cdef double Rp[9]
    cdef double Rc[9]
    cdef double Rj[9]
    cdef double p[3]
    cdef double ap[3]
    cdef double a[3]
    cdef int k, i
    cdef double acc = 0.0
    cdef double dx, dy, dz
    for i in range(9):
        Rp[i] = Rw[9 * s0 + i]
    for i in range(3):
        p[i] = disks[3 * s0 + i]
        ap[i] = anch[(t * (n + 1) + s0) * 3 + i]
    for k in range(s0, n):
        _joint_rot(th[2 * k], th[2 * k + 1], Rj)
        _mat33_mul(Rp, Rj, Rc)
        p[0] += L[k] * Rc[2]
        p[1] += L[k] * Rc[5]
        p[2] += L[k] * Rc[8]
        a[0] = p[0] + rad[k + 1] * (scos[t] * Rc[0] + ssin[t] * Rc[1])
        a[1] = p[1] + rad[k + 1] * (scos[t] * Rc[3] + ssin[t] * Rc[4])
        a[2] = p[2] + rad[k + 1] * (scos[t] * Rc[6] + ssin[t] * Rc[7])
        dx = a[0] - ap[0]; dy = a[1] - ap[1]; dz = a[2] - ap[2]
        acc += sqrt(dx * dx + dy * dy + dz * dz)
        ap[0] = a[0]; ap[1] = a[1]; ap[2] = a[2]
        for i in range(9):
            Rp[i] = Rc[i]
    return acc


cdef void _tendon_jacobian(int n, const double *L, const double *rad,
                           const double *scos, const double *ssin,
                           const double *th, double *thp,
                           const double *Rw, const double *disks,
                           const double *anch, const double *lenpre,
                           double *jac) noexcept nogil:
    """Central finite-difference d(length)/d(theta), one column per DoF."""
    cdef int d, s, t
    cdef double lm
    for d in range(2 * n):
        thp[d] = th[d]
    for d in range(2 * n):
        s = d // 2
        thp[d] = th[d] + FD_STEP
        for t in range(3):
            jac[t * 2 * n + d] = lenpre[t * (n + 1) + s] + _suffix_length(
                n, s, t, L, rad, scos, ssin, thp, Rw, disks, anch)
        thp[d] = th[d] - FD_STEP
        for t in range(3):
            lm = lenpre[t * (n + 1) + s] + _suffix_length(
                n, s, t, L, rad, scos, ssin, thp, Rw, disks, anch)
            jac[t * 2 * n + d] = (jac[t * 2 * n + d] - lm) / (2.0 * FD_STEP)
        thp[d] = th[d]


cdef int _gauss_solve(int mdim, double *A, double *b) noexcept nogil:
    """In-place Gaussian elimination with partial pivoting; result in b."""
    cdef int col, r, c2, piv
    cdef double amax, v, f, inv, acc
    for col in range(mdim):
        piv = col
        amax = fabs(A[col * mdim + col])
        for r in range(col + 1, mdim):
            v = fabs(A[r * mdim + col])
            if v > amax:
                amax = v
                piv = r
        if amax == 0.0:
            return 1
        if piv != col:
            for c2 in range(col, mdim):
                v = A[col * mdim + c2]
                A[col * mdim + c2] = A[piv * mdim + c2]
                A[piv * mdim + c2] = v
            v = b[col]; b[col] = b[piv]; b[piv] = v
        inv = 1.0 / A[col * mdim + col]
        for r in range(col + 1, mdim):
            f = A[r * mdim + col] * inv
            if f != 0.0:
                for c2 in range(col + 1, mdim):
                    A[r * mdim + c2] -= f * A[col * mdim + c2]
                b[r] -= f * b[col]
    for col in range(mdim - 1, -1, -1):
        acc = b[col]
        for c2 in range(col + 1, mdim):
            acc -= A[col * mdim + c2] * b[c2]
        b[col] = acc / A[col * mdim + col]
    return 0


cdef int _run(int n,
              const double *L, const double *rad, const double *m,
              const double *scos, const double *ssin,
              const double *K, const double *D, const double *inertia,
              const double *theta0,
              double mu_t, double kp, double kv, double F_range, double tau_m,
              double slack_len, const double *gvec,
              const unsigned char *engaged, const double *l_cmd,
              double *th, double *thd, double *l_act,
              double dt, long max_steps, long steps_per_frame,
              double vel_tol, long hold_steps,
              double *out_t, double *out_pos, double *out_quat,
              long frame_cap, double t_start, int record,
              double *scr, long *counters, double *stats) noexcept nogil:
    cdef double *Rw = scr
    cdef double *disks = Rw + (n + 1) * 9
    cdef double *cen = disks + (n + 1) * 3
    cdef double *ax = cen + n * 3
    cdef double *ay = ax + n * 3
    cdef double *anch = ay + n * 3
    cdef double *lenpre = anch + 3 * (n + 1) * 3
    cdef double *jac = lenpre + 3 * (n + 1)
    cdef double *ften = jac + 3 * 2 * n
    cdef double *fric = ften + 3
    cdef double *tq = fric + n
    cdef double *thp = tq + 2 * n
    cdef double *l3 = thp + 2 * n
    cdef double *Amat = l3 + 3
    cdef double *rhs = Amat + 4 * n * n

    cdef long step = 0, nframes = 0, hold = 0
    cdef int s, t, d, i, nd = 2 * n, any_free
    cdef int mode[3]
    cdef double ldot, raw, wrap, Sx, Sy, Sz, Mm, rx, ry, rz, cxv, cyv, czv
    cdef double vnew, vmax, target, ci
    cdef double q[4]
    cdef int stat = -1

    stats[0] = 0.0    # min applied tension
    stats[1] = 0.0    # max applied tension
    stats[2] = 0.0    # max |theta_dot|

    while step < max_steps:
        _fk(n, L, rad, scos, ssin, th, Rw, disks, cen, ax, ay, anch, lenpre, l3)
        _tendon_jacobian(n, L, rad, scos, ssin, th, thp, Rw, disks, anch, lenpre, jac)

        # tension regimes from the current velocities; the velocity-gain
        # coupling of unclamped tendons is handled implicitly below
        any_free = 0
        for t in range(3):
            if engaged[t]:
                ldot = 0.0
                for d in range(nd):
                    ldot += jac[t * nd + d] * thd[d]
                raw = kp * (l3[t] - l_act[t]) + kv * ldot
                if raw <= 0.0:
                    mode[t] = 0
                    ften[t] = 0.0
                elif raw >= F_range:
                    mode[t] = 2
                    ften[t] = F_range
                else:
                    mode[t] = 1
                    ften[t] = kp * (l3[t] - l_act[t])   # position part only
                    any_free = 1
            else:
                mode[t] = 0
                ften[t] = 0.0

        # capstan attenuation factors per joint (wrap of upstream bends)
        wrap = 0.0
        for s in range(n):
            fric[s] = exp(-mu_t * wrap)
            wrap += hypot(th[2 * s], th[2 * s + 1])

        # gravity torques by backward accumulation of distal mass moments
        Sx = 0.0; Sy = 0.0; Sz = 0.0; Mm = 0.0
        for s in range(n - 1, -1, -1):
            Sx += m[s] * cen[3 * s + 0]
            Sy += m[s] * cen[3 * s + 1]
            Sz += m[s] * cen[3 * s + 2]
            Mm += m[s]
            rx = Sx - Mm * disks[3 * s + 0]
            ry = Sy - Mm * disks[3 * s + 1]
            rz = Sz - Mm * disks[3 * s + 2]
            # c = r x g
            cxv = ry * gvec[2] - rz * gvec[1]
            cyv = rz * gvec[0] - rx * gvec[2]
            czv = rx * gvec[1] - ry * gvec[0]
            tq[2 * s] = ax[3 * s + 0] * cxv + ax[3 * s + 1] * cyv + ax[3 * s + 2] * czv
            tq[2 * s + 1] = ay[3 * s + 0] * cxv + ay[3 * s + 1] * cyv + ay[3 * s + 2] * czv

        # spring + tendon torques (position parts)
        for d in range(nd):
            s = d // 2
            tq[d] -= K[s] * (th[d] - theta0[d])
            for t in range(3):
                if ften[t] != 0.0:
                    tq[d] -= ften[t] * fric[s] * jac[t * nd + d]

        # velocity update: joint damping and the velocity-gain coupling of
        # unclamped tendons are implicit (the tip joints are far too stiff
        # relative to their inertia for an explicit treatment)
        vmax = 0.0
        if any_free:
            for d in range(nd):
                s = d // 2
                for i in range(nd):
                    Amat[d * nd + i] = 0.0
                Amat[d * nd + d] = inertia[s] + dt * D[s]
                rhs[d] = inertia[s] * thd[d] + dt * tq[d]
            for t in range(3):
                if mode[t] == 1:
                    for d in range(nd):
                        s = d // 2
                        ci = dt * kv * fric[s] * jac[t * nd + d]
                        if ci != 0.0:
                            for i in range(nd):
                                Amat[d * nd + i] += ci * jac[t * nd + i]
            if _gauss_solve(nd, Amat, rhs) != 0:
                stat = 1
                break
            for d in range(nd):
                thd[d] = rhs[d]
        else:
            for d in range(nd):
                s = d // 2
                thd[d] = (inertia[s] * thd[d] + dt * tq[d]) / (inertia[s] + dt * D[s])

        for d in range(nd):
            vnew = thd[d]
            th[d] += dt * vnew
            if fabs(vnew) > vmax:
                vmax = fabs(vnew)
        if vmax > stats[2]:
            stats[2] = vmax

        # applied tensions (clamped PD law at the updated velocities)
        for t in range(3):
            if engaged[t]:
                ldot = 0.0
                for d in range(nd):
                    ldot += jac[t * nd + d] * thd[d]
                raw = kp * (l3[t] - l_act[t]) + kv * ldot
                if raw < 0.0:
                    raw = 0.0
                elif raw > F_range:
                    raw = F_range
                if raw < stats[0]:
                    stats[0] = raw
                if raw > stats[1]:
                    stats[1] = raw

        # actuator first-order lag toward command (or measured when slack)
        for t in range(3):
            target = l_cmd[t] if engaged[t] else l3[t]
            l_act[t] += dt * (target - l_act[t]) / tau_m
            if l_act[t] < 0.1 * slack_len:
                l_act[t] = 0.1 * slack_len
            elif l_act[t] > 2.0 * slack_len:
                l_act[t] = 2.0 * slack_len

        step += 1
        if vmax > VEL_LIMIT:
            stat = 1
            break

        if vmax < vel_tol:
            hold += 1
        else:
            hold = 0

        if record and step % steps_per_frame == 0:
            if nframes < frame_cap:
                out_t[nframes] = t_start + step * dt
                _fk(n, L, rad, scos, ssin, th, Rw, disks, cen, ax, ay, anch, lenpre, l3)
                for s in range(n):
                    for i in range(3):
                        out_pos[(nframes * n + s) * 3 + i] = cen[3 * s + i]
                    _quat_from_mat(&Rw[9 * (s + 1)], q)
                    for i in range(4):
                        out_quat[(nframes * n + s) * 4 + i] = q[i]
                nframes += 1
            if hold_steps > 0 and hold >= hold_steps:
                stat = 0
                break
        elif not record and hold_steps > 0 and hold >= hold_steps:
            stat = 0
            break

    if stat < 0:
        stat = 0 if hold_steps == 0 else 2
    counters[0] = nframes
    counters[1] = step
    return stat


def run_sim(const double[::1] L, const double[::1] rad, const double[::1] m,
            const double[::1] scos, const double[::1] ssin,
            const double[::1] K, const double[::1] D, const double[::1] inertia,
            const double[::1] theta0,
            double mu_t, double kp, double kv, double F_range, double tau_m,
            double slack_len, const double[::1] gvec,
            const unsigned char[::1] engaged, const double[::1] l_cmd,
            double[::1] th, double[::1] thd, double[::1] l_act,
            double dt, long max_steps, long steps_per_frame,
            double vel_tol, long hold_steps,
            double[::1] out_t, double[:, :, ::1] out_pos, double[:, :, ::1] out_quat,
            double t_start, bint record,
            double[::1] scratch, double[::1] stats):
    """Advance the state in place, optionally recording frames.

    Returns (status, n_frames, n_steps); status 0 = ok/converged,
    1 = unstable, 2 = settle timeout.  ``stats`` receives
    [min applied tension, max applied tension, max |theta_dot|].
    """
    cdef int n = L.shape[0]
    cdef long counters[2]
    cdef long frame_cap = out_t.shape[0]
    cdef int stat
    with nogil:
        stat = _run(n, &L[0], &rad[0], &m[0], &scos[0], &ssin[0],
                    &K[0], &D[0], &inertia[0], &theta0[0],
                    mu_t, kp, kv, F_range, tau_m, slack_len, &gvec[0],
                    &engaged[0], &l_cmd[0], &th[0], &thd[0], &l_act[0],
                    dt, max_steps, steps_per_frame, vel_tol, hold_steps,
                    &out_t[0], &out_pos[0, 0, 0], &out_quat[0, 0, 0],
                    frame_cap, t_start, 1 if record else 0,
                    &scratch[0], counters, &stats[0])
    return stat, counters[0], counters[1]


def fk_pose(const double[::1] L, const double[::1] rad,
            const double[::1] scos, const double[::1] ssin, const double[::1] th,
            double[:, ::1] out_pos, double[:, ::1] out_quat):
    """Segment centroid positions and frame quaternions for one state."""
    cdef int n = L.shape[0]
    scr = np.empty(scratch_size(n), dtype=np.float64)
    cdef double[::1] sv = scr
    cdef double *Rw = &sv[0]
    cdef double *disks = Rw + (n + 1) * 9
    cdef double *cen = disks + (n + 1) * 3
    cdef double *ax = cen + n * 3
    cdef double *ay = ax + n * 3
    cdef double *anch = ay + n * 3
    cdef double *lenpre = anch + 3 * (n + 1) * 3
    cdef double l3[3]
    cdef double q[4]
    cdef int s, i
    with nogil:
        _fk(n, &L[0], &rad[0], &scos[0], &ssin[0], &th[0],
            Rw, disks, cen, ax, ay, anch, lenpre, l3)
        for s in range(n):
            for i in range(3):
                out_pos[s, i] = cen[3 * s + i]
            _quat_from_mat(&Rw[9 * (s + 1)], q)
            for i in range(4):
                out_quat[s, i] = q[i]


def fk_points(const double[::1] L, const double[::1] rad,
              const double[::1] scos, const double[::1] ssin, const double[::1] th,
              double[:, ::1] out_disks, double[:, :, ::1] out_anchors):
    """Disk centers and per-tendon anchor points (diagnostics, tests)."""
    cdef int n = L.shape[0]
    scr = np.empty(scratch_size(n), dtype=np.float64)
    cdef double[::1] sv = scr
    cdef double *Rw = &sv[0]
    cdef double *disks = Rw + (n + 1) * 9
    cdef double *cen = disks + (n + 1) * 3
    cdef double *ax = cen + n * 3
    cdef double *ay = ax + n * 3
    cdef double *anch = ay + n * 3
    cdef double *lenpre = anch + 3 * (n + 1) * 3
    cdef double l3[3]
    cdef int k, t, i
    with nogil:
        _fk(n, &L[0], &rad[0], &scos[0], &ssin[0], &th[0],
            Rw, disks, cen, ax, ay, anch, lenpre, l3)
        for k in range(n + 1):
            for i in range(3):
                out_disks[k, i] = disks[3 * k + i]
        for t in range(3):
            for k in range(n + 1):
                for i in range(3):
                    out_anchors[t, k, i] = anch[(t * (n + 1) + k) * 3 + i]


def tendon_lengths(const double[::1] L, const double[::1] rad,
                   const double[::1] scos, const double[::1] ssin,
                   const double[::1] th, double[::1] out_l):
    cdef int n = L.shape[0]
    scr = np.empty(scratch_size(n), dtype=np.float64)
    cdef double[::1] sv = scr
    cdef double *Rw = &sv[0]
    cdef double *disks = Rw + (n + 1) * 9
    cdef double *cen = disks + (n + 1) * 3
    cdef double *ax = cen + n * 3
    cdef double *ay = ax + n * 3
    cdef double *anch = ay + n * 3
    cdef double *lenpre = anch + 3 * (n + 1) * 3
    cdef double l3[3]
    cdef int t
    with nogil:
        _fk(n, &L[0], &rad[0], &scos[0], &ssin[0], &th[0],
            Rw, disks, cen, ax, ay, anch, lenpre, l3)
        for t in range(3):
            out_l[t] = l3[t]
