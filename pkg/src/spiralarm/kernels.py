"""Kernel backend selection: compiled extension with pure-Python fallback.

The compiled backend (``spiralarm._kernels``, Cython) and the numpy
fallback (``spiralarm._kernels_py``) expose the same functions.  The
compiled one is preferred at import; set ``SPIRALARM_PURE_PYTHON=1`` to
force the fallback.  ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

from spiralarm import _kernels_py

if os.environ.get("SPIRALARM_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from spiralarm import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

STATUS_OK = 0
STATUS_UNSTABLE = 1
STATUS_TIMEOUT = 2


def available_backends():
    out = {"python": _kernels_py}
    try:
        from spiralarm import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out


def get_backend(name=None):
    """Backend module by name ('compiled' / 'python'); default = active."""
    if name is None:
        return _impl
    backends = available_backends()
    if name not in backends:
        raise KeyError(f"backend {name!r} not available, have {sorted(backends)}")
    return backends[name]


class SimKernel:
    """Binds an ArmModel's arrays for kernel calls.

    The model arrays are immutable and shared; each SimKernel owns its own
    scratch buffer, so use one instance per concurrent simulation.
    """

    def __init__(self, model, backend=None):
        self.model = model
        self.impl = get_backend(backend)
        m = model
        self._geom = (m.lengths, m.radii, m.station_cos, m.station_sin)
        self._model_args = (
            m.lengths, m.radii, m.masses, m.station_cos, m.station_sin,
            m.K, m.D, m.inertia, m.theta0,
        )
        self._scratch = np.empty(max(1, self.impl.scratch_size(m.n_segments)))
        self.last_stats = np.zeros(3)   # min/max applied tension, max |vel|

    def run(self, th, thd, l_act, engaged, l_cmd, gvec, dt, max_steps,
            steps_per_frame, vel_tol, hold_steps, out_t, out_pos, out_quat,
            t_start=0.0, record=True):
        p = self.model.params
        return self.impl.run_sim(
            *self._model_args,
            p.mu_t, p.kp, p.kv, p.F_range, p.tau_m,
            self.model.tendon_slack_length, gvec, engaged, l_cmd,
            th, thd, l_act, dt, int(max_steps), int(steps_per_frame),
            vel_tol, int(hold_steps), out_t, out_pos, out_quat,
            t_start, record, self._scratch, self.last_stats,
        )

    def fk_pose(self, th):
        n = self.model.n_segments
        pos = np.empty((n, 3))
        quat = np.empty((n, 4))
        self.impl.fk_pose(*self._geom, np.ascontiguousarray(th), pos, quat)
        return pos, quat

    def fk_points(self, th):
        n = self.model.n_segments
        disks = np.empty((n + 1, 3))
        anchors = np.empty((3, n + 1, 3))
        self.impl.fk_points(*self._geom, np.ascontiguousarray(th), disks, anchors)
        return disks, anchors

    def tendon_lengths(self, th):
        out = np.empty(3)
        self.impl.tendon_lengths(*self._geom, np.ascontiguousarray(th), out)
        return out
