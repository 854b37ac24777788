"""Arm description: geometry, identifiable parameters, assembled model.

The arm is a chain of ``n_segments`` rigid segments whose dimensions follow
a fixed taper ratio ``alpha``: segment i (1-based) has length
``L0 * alpha**(i-1)``, anchor-disk radius ``r0 * alpha**(i-1)`` and mass
``m0 * alpha**(3*(i-1))``.  Every inter-segment connection is a torsional
spring-damper joint with two bending degrees of freedom, so joint stiffness
inherits the cubic taper and joint damping follows from a common damping
ratio.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

PARAM_FILE_VERSION = 1

TENDON_COUNT = 3
TENDON_ANGLES = (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)


class ArmValidationError(ValueError):
    """Raised by build_arm with the full list of violated invariants."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid arm description: " + "; ".join(self.problems))


@dataclass(frozen=True)
class ArmGeometry:
    """Geometric description of the tapered arm."""

    n_segments: int = 18
    L0: float = 0.0803       # m, base segment length
    r0: float = 0.018        # m, base anchor radius
    alpha: float = 0.85      # taper ratio per segment, in (0, 1)
    m0: float = 0.012        # kg, base segment mass

    def validate(self):
        problems = []
        if self.n_segments < 2:
            problems.append(f"n_segments must be >= 2, got {self.n_segments}")
        if not (0.0 < self.alpha < 1.0):
            problems.append(f"alpha must be in (0, 1), got {self.alpha}")
        for name in ("L0", "r0", "m0"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                problems.append(f"{name} must be positive and finite, got {v}")
        return problems

    @property
    def segment_lengths(self):
        i = np.arange(self.n_segments)
        return self.L0 * self.alpha**i

    @property
    def segment_masses(self):
        i = np.arange(self.n_segments)
        return self.m0 * self.alpha ** (3 * i)

    @property
    def total_length(self):
        return self.L0 * (1.0 - self.alpha**self.n_segments) / (1.0 - self.alpha)


@dataclass(frozen=True)
class ArmParameters:
    """Identifiable physical and control parameters.

    The per-joint multipliers are the fine-identification degrees of
    freedom; coarse identification moves only the scalars.
    """

    K0: float = 0.05          # N*m/rad, base joint stiffness
    stiffness_multipliers: tuple = ()   # per joint, defaults to all ones
    zeta: float = 0.15        # damping ratio
    damping_multipliers: tuple = ()     # per joint, defaults to all ones
    mu_t: float = 0.1         # tendon friction coefficient, >= 0
    kp: float = 500.0         # N/m, actuator proportional gain
    kv: float = 10.0          # N*s/m, actuator velocity gain
    F_range: float = 40.0     # N, max cable tension
    tau_m: float = 0.05       # s, actuator time constant

    def validate(self, n_joints=None):
        problems = []
        for name in ("K0", "zeta", "kp", "kv", "F_range", "tau_m"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                problems.append(f"{name} must be positive and finite, got {v}")
        if not (self.mu_t >= 0.0 and math.isfinite(self.mu_t)):
            problems.append(f"mu_t must be >= 0, got {self.mu_t}")
        for name in ("stiffness_multipliers", "damping_multipliers"):
            mults = getattr(self, name)
            if mults and n_joints is not None and len(mults) != n_joints:
                problems.append(
                    f"{name} has {len(mults)} entries for {n_joints} joints"
                )
            if any(not (m > 0.0 and math.isfinite(m)) for m in mults):
                problems.append(f"{name} entries must be positive")
        return problems


def scaled_stiffness(K0, alpha, i):
    """Joint stiffness under the cubic taper law: K0 * alpha**(3*(i-1)).

    ``i`` is the 1-based joint index counted from the base.
    """
    if i < 1:
        raise ValueError(f"joint index must be >= 1, got {i}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not K0 > 0.0:
        raise ValueError(f"K0 must be positive, got {K0}")
    return K0 * alpha ** (3 * (i - 1))


def damping_from_ratio(zeta, K, m):
    """Joint damping D = 2 * zeta * sqrt(K * m) for segment mass m."""
    if K <= 0.0 or m <= 0.0:
        raise ValueError(f"K and m must be positive, got K={K}, m={m}")
    if zeta < 0.0:
        raise ValueError(f"zeta must be >= 0, got {zeta}")
    return 2.0 * zeta * math.sqrt(K * m)


def init_kv(kp, m_ref):
    """Critically damped velocity gain kv = 2 * sqrt(kp * m_ref).

    ``m_ref`` is the total moved mass (the whole arm for a cable actuator).
    """
    if kp <= 0.0 or m_ref <= 0.0:
        raise ValueError(f"kp and m_ref must be positive, got kp={kp}, m_ref={m_ref}")
    return 2.0 * math.sqrt(kp * m_ref)


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ArmModel:
    """Assembled, immutable arm model with all per-joint arrays precomputed.

    Safe to share across concurrent simulation instances.  Disk index k runs
    0..n: disk 0 is the base mount plate, disk k is the distal end of
    segment k.  Tendon anchor radii continue the taper through the mount
    plate (``r0 / alpha`` at disk 0) so that a straight arm has collinear
    anchors per tendon.
    """

    geometry: ArmGeometry
    params: ArmParameters
    lengths: np.ndarray        # (n,)   segment lengths
    masses: np.ndarray         # (n,)   segment masses (lumped at centroids)
    radii: np.ndarray          # (n+1,) anchor radius per disk
    K: np.ndarray              # (n,)   joint stiffness, both DoF of joint i
    D: np.ndarray              # (n,)   joint damping
    inertia: np.ndarray        # (n,)   effective per-DoF inertia about joint i
    theta0: np.ndarray         # (2n,)  rest coordinates (straight arm: zeros)
    station_cos: np.ndarray    # (3,)   tendon angular stations
    station_sin: np.ndarray
    tendon_slack_length: float  # straight-configuration tendon length

    @property
    def n_segments(self):
        return self.geometry.n_segments

    @property
    def n_coords(self):
        return 2 * self.geometry.n_segments

    @property
    def total_mass(self):
        return float(np.sum(self.masses))

    @property
    def total_length(self):
        return float(np.sum(self.lengths))

    def with_params(self, params: ArmParameters) -> "ArmModel":
        """Rebuild with new parameters on the same geometry."""
        return build_arm(self.geometry, params)


def straight_tendon_length(geometry: ArmGeometry) -> float:
    """Tendon length of the straight arm: sum of per-disk anchor spans."""
    n = geometry.n_segments
    radii = np.empty(n + 1)
    radii[0] = geometry.r0 / geometry.alpha
    radii[1:] = geometry.r0 * geometry.alpha ** np.arange(n)
    lengths = geometry.segment_lengths
    return float(np.sum(np.hypot(radii[1:] - radii[:-1], lengths)))


def build_arm(geometry: ArmGeometry, params: ArmParameters) -> ArmModel:
    """Validate both inputs and assemble the immutable model.

    Raises ArmValidationError listing every violated invariant.
    """
    problems = geometry.validate()
    problems += params.validate(n_joints=geometry.n_segments)
    if problems:
        raise ArmValidationError(problems)

    n = geometry.n_segments
    lengths = geometry.segment_lengths
    masses = geometry.segment_masses

    radii = np.empty(n + 1)
    radii[0] = geometry.r0 / geometry.alpha
    radii[1:] = geometry.r0 * geometry.alpha ** np.arange(n)

    c_mult = np.asarray(params.stiffness_multipliers or np.ones(n), dtype=float)
    b_mult = np.asarray(params.damping_multipliers or np.ones(n), dtype=float)
    K = np.array([c_mult[i] * scaled_stiffness(params.K0, geometry.alpha, i + 1)
                  for i in range(n)])
    D = np.array([b_mult[i] * damping_from_ratio(params.zeta, K[i], masses[i])
                  for i in range(n)])

    # Effective per-DoF inertia about each joint: distal point masses at
    # their straight-configuration centroid offsets.  Constant by design;
    # both bending DoF of a joint share it.
    disk_z = np.concatenate([[0.0], np.cumsum(lengths)])
    cen_z = disk_z[:-1] + 0.5 * lengths
    inertia = np.empty(n)
    for j in range(n):
        d = cen_z[j:] - disk_z[j]
        inertia[j] = float(np.sum(masses[j:] * d * d))

    # Stations 2 and 3 are an exact mirror pair about the x-z plane so that
    # symmetric dual-cable actuation cancels out-of-plane torques bitwise.
    c23 = math.cos(2.0 * math.pi / 3.0)
    s23 = math.sin(2.0 * math.pi / 3.0)
    station_cos = np.array([1.0, c23, c23])
    station_sin = np.array([0.0, s23, -s23])

    return ArmModel(
        geometry=geometry,
        params=params,
        lengths=_readonly(lengths),
        masses=_readonly(masses),
        radii=_readonly(radii),
        K=_readonly(K),
        D=_readonly(D),
        inertia=_readonly(inertia),
        theta0=_readonly(np.zeros(2 * n)),
        station_cos=_readonly(station_cos),
        station_sin=_readonly(station_sin),
        tendon_slack_length=straight_tendon_length(geometry),
    )


# ---------------------------------------------------------------------------
# Parameter file I/O (JSON, SI units)

def params_to_dict(geometry: ArmGeometry, params: ArmParameters, seed=0):
    n = geometry.n_segments
    c = list(params.stiffness_multipliers) or [1.0] * n
    b = list(params.damping_multipliers) or [1.0] * n
    return {
        "geometry": {
            "n_segments": geometry.n_segments,
            "L0": geometry.L0,
            "r0": geometry.r0,
            "alpha": geometry.alpha,
            "m0": geometry.m0,
        },
        "stiffness": {"K0": params.K0, "multipliers": c},
        "damping": {"zeta": params.zeta, "multipliers": b, "mu_t": params.mu_t},
        "control": {
            "kp": params.kp,
            "kv": params.kv,
            "F_range": params.F_range,
            "tau_m": params.tau_m,
        },
        "meta": {"version": PARAM_FILE_VERSION, "seed": seed},
    }


def params_from_dict(doc):
    geo = doc["geometry"]
    sti = doc["stiffness"]
    dam = doc["damping"]
    ctl = doc["control"]
    geometry = ArmGeometry(
        n_segments=int(geo["n_segments"]),
        L0=float(geo["L0"]),
        r0=float(geo["r0"]),
        alpha=float(geo["alpha"]),
        m0=float(geo["m0"]),
    )
    params = ArmParameters(
        K0=float(sti["K0"]),
        stiffness_multipliers=tuple(float(x) for x in sti["multipliers"]),
        zeta=float(dam["zeta"]),
        damping_multipliers=tuple(float(x) for x in dam["multipliers"]),
        mu_t=float(dam["mu_t"]),
        kp=float(ctl["kp"]),
        kv=float(ctl["kv"]),
        F_range=float(ctl["F_range"]),
        tau_m=float(ctl["tau_m"]),
    )
    return geometry, params


def save_params(path, geometry: ArmGeometry, params: ArmParameters, seed=0):
    doc = params_to_dict(geometry, params, seed=seed)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


def perturb_parameters(params: ArmParameters, seed, lo=0.3, hi=3.0) -> ArmParameters:
    """Multiply each identifiable scalar by a seeded factor in [lo, hi].

    Used to fabricate a miscalibrated starting model for twin-recovery
    experiments; multipliers stay at 1 (they are fine-stage corrections).
    """
    rng = np.random.default_rng(seed)
    factors = {
        name: float(rng.uniform(lo, hi))
        for name in ("K0", "zeta", "mu_t", "kp", "kv", "F_range", "tau_m")
    }
    return replace(
        params,
        K0=params.K0 * factors["K0"],
        zeta=params.zeta * factors["zeta"],
        mu_t=params.mu_t * factors["mu_t"],
        kp=params.kp * factors["kp"],
        kv=params.kv * factors["kv"],
        F_range=params.F_range * factors["F_range"],
        tau_m=params.tau_m * factors["tau_m"],
    )
