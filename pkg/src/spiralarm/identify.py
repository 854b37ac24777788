"""Staged parameter identification: stiffness, damping/friction, control.

Each stage runs a coarse global differential-evolution pass over a small
set of scalars (the taper law fixes the per-joint distribution), followed
by a fine DE pass over per-joint multipliers restricted to a +/-10% box
around the coarse solution.  Stages run strictly in order, each consuming
the previous stage's parameters.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from spiralarm.arm import ArmModel, ArmParameters, init_kv, params_to_dict
from spiralarm.de import DEConfig, DEResult, de_minimize
from spiralarm.dynamics import (
    ActuationCycle,
    FreeRelease,
    RELEASE,
    SimConfig,
    Simulation,
    SimulationUnstableError,
    SettleTimeoutError,
    StaticTilt,
    fast_settle_model,
    run_protocol,
)
from spiralarm.losses import LossConfig, dynamic_loss, internal_error, static_loss
from spiralarm.trajectory import Trajectory, align, equilibrium_poses

STAGE_ORDER = ("stiffness", "damping", "control")


class StageError(RuntimeError):
    """Unrecoverable failure inside one identification stage."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage {stage!r}: {message}")


@dataclass(frozen=True)
class StageSpec:
    """Search box and DE settings for one stage."""

    stage: str                       # stiffness | damping | control
    bounds: dict                     # parameter name -> (lo, hi)
    loss: str                        # static | dynamic
    coarse: DEConfig
    fine: DEConfig
    fine_range: tuple = (0.9, 1.1)   # per-joint multiplier box

    def validate(self):
        if self.stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")
        for name, (lo, hi) in self.bounds.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad bounds for {name}: [{lo}, {hi}]")
        return self


def default_stage_specs(seed=0, parallel=1):
    """Desk-scale defaults; coarse dims are 1 / 2 / 4 per the staging."""
    mk = lambda pop, gens, s: DEConfig(population=pop, max_gens=gens,
                                       seed=s, parallel_evals=parallel)
    return {
        "stiffness": StageSpec(
            stage="stiffness",
            bounds={"K0": (0.002, 1.0)},
            loss="static",
            coarse=mk(10, 24, seed + 1),
            fine=mk(12, 10, seed + 2),
        ),
        "damping": StageSpec(
            stage="damping",
            bounds={"zeta": (0.01, 1.2), "mu_t": (0.0, 1.0)},
            loss="dynamic",
            coarse=mk(12, 28, seed + 3),
            fine=mk(12, 8, seed + 4),
        ),
        "control": StageSpec(
            stage="control",
            bounds={"kp": (50.0, 2000.0), "F_range": (1.0, 100.0),
                    "tau_m": (0.005, 0.5), "kv": (0.5, 200.0)},
            loss="dynamic",
            coarse=mk(16, 30, seed + 5),
            fine=mk(12, 6, seed + 6),
        ),
    }


@dataclass
class IdentBundle:
    """Experiment datasets plus the protocol definitions that produced them."""

    static_protocol: StaticTilt | None = None
    static_trajs: list = field(default_factory=list)
    release_protocols: list = field(default_factory=list)
    release_trajs: list = field(default_factory=list)
    cycle_protocol: ActuationCycle | None = None
    cycle_trajs: list = field(default_factory=list)
    holdout_protocol: FreeRelease | None = None
    holdout_traj: Trajectory | None = None

    def require(self, stage, what, ok):
        if not ok:
            raise StageError(stage, f"missing dataset: {what}")


@dataclass
class StageOutput:
    stage: str
    coarse_x: np.ndarray
    coarse_loss: float
    coarse_trace: np.ndarray
    fine_x: np.ndarray
    fine_loss: float
    fine_trace: np.ndarray
    n_nonfinite: int
    params_after: ArmParameters

    @property
    def best_loss(self):
        return min(self.coarse_loss, self.fine_loss)


@dataclass
class IdentResult:
    stages: dict
    final_params: ArmParameters
    report: dict
    provenance: dict


# ---------------------------------------------------------------------------
# Simulation helpers shared by the stage objectives

def _simulate_release(model, protocol: FreeRelease, simcfg: SimConfig):
    """Actuate to the bent equilibrium (retuned damping), release, record.

    Identical code path to run_protocol's FreeRelease branch, so a model
    with the generating parameters reproduces its dataset exactly.
    """
    return run_protocol(model, protocol, simcfg)[0]


def _static_equilibria(model, protocol: StaticTilt, simcfg: SimConfig,
                       window_s):
    """Settled equilibrium poses per tilt angle, via fast-settling damping."""
    fast = fast_settle_model(model)
    trajs = run_protocol(fast, protocol, simcfg)
    return [equilibrium_poses(t, window_s) for t in trajs]


def _guarded(fn):
    """Simulation failures score +inf so the DE population keeps searching."""
    def wrapped(x):
        try:
            return fn(x)
        except (SimulationUnstableError, SettleTimeoutError):
            return np.inf
    return wrapped


# ---------------------------------------------------------------------------
# Stages

def identify_stiffness(bundle: IdentBundle, model: ArmModel, spec: StageSpec,
                       simcfg: SimConfig, loss_cfg: LossConfig,
                       eq_window_s=0.2) -> StageOutput:
    """Coarse K0 under the cubic taper, then per-joint multipliers."""
    spec.validate()
    bundle.require("stiffness", "static tilt trajectories",
                   bundle.static_protocol is not None and bundle.static_trajs)
    protocol = bundle.static_protocol
    if len(bundle.static_trajs) != len(protocol.angles_deg):
        raise StageError("stiffness", "one trajectory per tilt angle required")
    real_eq = [equilibrium_poses(t, eq_window_s) for t in bundle.static_trajs]
    params0 = model.params

    def coarse_obj(x):
        cand = model.with_params(replace(
            params0, K0=float(x[0]),
            stiffness_multipliers=(), damping_multipliers=()))
        sim_eq = _static_equilibria(cand, protocol, simcfg, eq_window_s)
        return static_loss(sim_eq, real_eq, loss_cfg)

    lo, hi = spec.bounds["K0"]
    res_c = de_minimize(_guarded(coarse_obj), [(lo, hi)], spec.coarse,
                        x0=[[params0.K0]])
    K0_hat = float(res_c.x[0])

    n = model.n_segments

    def fine_obj(c):
        cand = model.with_params(replace(
            params0, K0=K0_hat,
            stiffness_multipliers=tuple(c), damping_multipliers=()))
        sim_eq = _static_equilibria(cand, protocol, simcfg, eq_window_s)
        return static_loss(sim_eq, real_eq, loss_cfg)

    fb = [spec.fine_range] * n
    res_f = de_minimize(_guarded(fine_obj), fb, spec.fine, x0=[np.ones(n)])

    params_after = replace(
        params0, K0=K0_hat, stiffness_multipliers=tuple(float(v) for v in res_f.x))
    return StageOutput(
        stage="stiffness",
        coarse_x=res_c.x, coarse_loss=res_c.fun, coarse_trace=res_c.trace,
        fine_x=res_f.x, fine_loss=res_f.fun, fine_trace=res_f.trace,
        n_nonfinite=res_c.n_nonfinite + res_f.n_nonfinite,
        params_after=params_after,
    )


def identify_damping(bundle: IdentBundle, model: ArmModel, spec: StageSpec,
                     simcfg: SimConfig, loss_cfg: LossConfig) -> StageOutput:
    """Coarse (zeta, mu_t) from free-release decay, then multipliers."""
    spec.validate()
    bundle.require("damping", "free release trajectories",
                   bool(bundle.release_protocols) and bool(bundle.release_trajs))
    params0 = model.params
    pairs = list(zip(bundle.release_protocols, bundle.release_trajs))

    def run_losses(cand):
        total = []
        for protocol, real in pairs:
            sim_traj = _simulate_release(cand, protocol, simcfg)
            s, r = align(sim_traj, real)
            total.append(dynamic_loss(s, r, loss_cfg))
        return float(np.mean(total))

    def coarse_obj(x):
        cand = model.with_params(replace(
            params0, zeta=float(x[0]), mu_t=float(x[1]),
            damping_multipliers=()))
        return run_losses(cand)

    b = [spec.bounds["zeta"], spec.bounds["mu_t"]]
    res_c = de_minimize(_guarded(coarse_obj), b, spec.coarse,
                        x0=[[params0.zeta, params0.mu_t]])
    zeta_hat, mu_hat = float(res_c.x[0]), float(res_c.x[1])

    n = model.n_segments

    def fine_obj(bm):
        cand = model.with_params(replace(
            params0, zeta=zeta_hat, mu_t=mu_hat,
            damping_multipliers=tuple(bm)))
        return run_losses(cand)

    fb = [spec.fine_range] * n
    res_f = de_minimize(_guarded(fine_obj), fb, spec.fine, x0=[np.ones(n)])

    params_after = replace(
        params0, zeta=zeta_hat, mu_t=mu_hat,
        damping_multipliers=tuple(float(v) for v in res_f.x))
    return StageOutput(
        stage="damping",
        coarse_x=res_c.x, coarse_loss=res_c.fun, coarse_trace=res_c.trace,
        fine_x=res_f.x, fine_loss=res_f.fun, fine_trace=res_f.trace,
        n_nonfinite=res_c.n_nonfinite + res_f.n_nonfinite,
        params_after=params_after,
    )


def identify_control(bundle: IdentBundle, model: ArmModel, spec: StageSpec,
                     simcfg: SimConfig, loss_cfg: LossConfig) -> StageOutput:
    """(kp, F_range, tau_m) plus kv seeded at the critically damped value."""
    spec.validate()
    bundle.require("control", "actuation cycle trajectories",
                   bundle.cycle_protocol is not None and bundle.cycle_trajs)
    protocol = bundle.cycle_protocol
    if len(bundle.cycle_trajs) != len(protocol.levels_mm):
        raise StageError("control", "one trajectory per actuation level required")
    params0 = model.params

    def objective(x):
        kp, F_range, tau_m, kv = (float(v) for v in x)
        cand = model.with_params(replace(
            params0, kp=kp, F_range=F_range, tau_m=tau_m, kv=kv))
        sims = run_protocol(cand, protocol, simcfg)
        vals = []
        for sim_traj, real in zip(sims, bundle.cycle_trajs):
            s, r = align(sim_traj, real)
            vals.append(dynamic_loss(s, r, loss_cfg))
        return float(np.mean(vals))

    b = [spec.bounds["kp"], spec.bounds["F_range"],
         spec.bounds["tau_m"], spec.bounds["kv"]]
    kv_seed = init_kv(params0.kp, model.total_mass)
    seeds = [
        [params0.kp, params0.F_range, params0.tau_m, kv_seed],
        [params0.kp, params0.F_range, params0.tau_m, params0.kv],
    ]
    res_c = de_minimize(_guarded(objective), b, spec.coarse, x0=seeds)

    # control has no per-joint multipliers; the fine pass polishes the same
    # four scalars inside a +/-10% box around the coarse solution
    lo = res_c.x * spec.fine_range[0]
    hi = res_c.x * spec.fine_range[1]
    fb = np.stack([np.minimum(lo, hi), np.maximum(lo, hi)], axis=1)
    glo = np.array([v[0] for v in b])
    ghi = np.array([v[1] for v in b])
    fb[:, 0] = np.maximum(fb[:, 0], glo)
    fb[:, 1] = np.minimum(fb[:, 1], ghi)
    res_f = de_minimize(_guarded(objective), fb, spec.fine, x0=[res_c.x])

    best = res_f.x if res_f.fun <= res_c.fun else res_c.x
    kp, F_range, tau_m, kv = (float(v) for v in best)
    params_after = replace(params0, kp=kp, F_range=F_range, tau_m=tau_m, kv=kv)
    return StageOutput(
        stage="control",
        coarse_x=res_c.x, coarse_loss=res_c.fun, coarse_trace=res_c.trace,
        fine_x=res_f.x, fine_loss=res_f.fun, fine_trace=res_f.trace,
        n_nonfinite=res_c.n_nonfinite + res_f.n_nonfinite,
        params_after=params_after,
    )


# ---------------------------------------------------------------------------
# Pipeline

def run_pipeline(bundle: IdentBundle, model: ArmModel, specs: dict,
                 simcfg: SimConfig, loss_cfg: LossConfig = LossConfig(),
                 stages=STAGE_ORDER, progress=None) -> IdentResult:
    """Run the staged pipeline; each stage consumes the previous output.

    Reports the internal shape error on the held-out free-release
    trajectory before and after identification when the bundle carries one.
    """
    initial_params = model.params
    current = model
    outputs = {}
    runners = {
        "stiffness": identify_stiffness,
        "damping": identify_damping,
        "control": identify_control,
    }
    for name in stages:
        if name not in STAGE_ORDER:
            raise StageError(name, "unknown stage")
    for name in STAGE_ORDER:
        if name not in stages:
            continue
        if progress:
            progress(f"stage {name}: starting")
        out = runners[name](bundle, current, specs[name], simcfg, loss_cfg)
        outputs[name] = out
        current = current.with_params(out.params_after)
        if progress:
            progress(f"stage {name}: loss {out.best_loss:.3e}")

    report = {
        "per_stage_loss": {k: v.best_loss for k, v in outputs.items()},
        "e_internal_before_m": None,
        "e_internal_after_m": None,
        "e_internal_ratio": None,
    }
    if bundle.holdout_traj is not None and bundle.holdout_protocol is not None:
        real = bundle.holdout_traj

        def holdout_error(mdl):
            sim_traj = _simulate_release(mdl, bundle.holdout_protocol, simcfg)
            s, r = align(sim_traj, real)
            return internal_error(s, r)

        before = holdout_error(model.with_params(initial_params))
        after = holdout_error(current)
        report["e_internal_before_m"] = before
        report["e_internal_after_m"] = after
        report["e_internal_ratio"] = after / before if before > 0 else None

    provenance = {
        "seeds": {k: {"coarse": specs[k].coarse.seed, "fine": specs[k].fine.seed}
                  for k in outputs},
        "de": {k: {"coarse": asdict(specs[k].coarse),
                   "fine": asdict(specs[k].fine)} for k in outputs},
        "bounds": {k: {p: list(v) for p, v in specs[k].bounds.items()}
                   for k in outputs},
        "loss": asdict(loss_cfg),
        "velocity_term_disabled": loss_cfg.velocity_term_disabled,
        "sim": asdict(simcfg),
        "stages_run": [k for k in STAGE_ORDER if k in outputs],
    }
    return IdentResult(
        stages=outputs,
        final_params=current.params,
        report=report,
        provenance=provenance,
    )


def save_result(result: IdentResult, model: ArmModel, out_dir, seed=0):
    """Write report JSON, identified parameter file, loss-trace CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    params_path = os.path.join(out_dir, "identified_params.json")
    doc = params_to_dict(model.geometry, result.final_params, seed=seed)
    with open(params_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    written.append(params_path)

    report_path = os.path.join(out_dir, "ident_report.json")
    stages_doc = {
        k: {
            "coarse_x": [float(v) for v in s.coarse_x],
            "coarse_loss": s.coarse_loss,
            "fine_x": [float(v) for v in s.fine_x],
            "fine_loss": s.fine_loss,
            "n_nonfinite": s.n_nonfinite,
        }
        for k, s in result.stages.items()
    }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({
            "report": result.report,
            "stages": stages_doc,
            "provenance": result.provenance,
        }, fh, indent=2)
        fh.write("\n")
    written.append(report_path)

    for name, s in result.stages.items():
        trace_path = os.path.join(out_dir, f"loss_trace_{name}.csv")
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "coarse_best", "fine_best"])
            gmax = max(len(s.coarse_trace), len(s.fine_trace))
            for g in range(gmax):
                cv = s.coarse_trace[g] if g < len(s.coarse_trace) else ""
                fv = s.fine_trace[g] if g < len(s.fine_trace) else ""
                w.writerow([g, cv, fv])
        written.append(trace_path)
    return written
