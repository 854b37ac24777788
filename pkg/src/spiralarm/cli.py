"""Command-line entry point.

Subcommands: simulate, identify, ik, reachmap, eval, filter, serve.
Structured inputs come from JSON config files; flags cover paths, seeds
and ports only, so a run is reproducible from its manifest.  Exit codes:
0 ok, 2 usage/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from spiralarm import __version__
from spiralarm.arm import (
    ArmGeometry,
    ArmParameters,
    build_arm,
    load_params,
    params_from_dict,
    save_params,
)
from spiralarm.de import DEConfig
from spiralarm.dynamics import (
    ActuationCycle,
    FreeRelease,
    SimConfig,
    StaticTilt,
    protocol_condition_names,
    protocol_from_dict,
    run_protocol,
)
from spiralarm.identify import (
    IdentBundle,
    STAGE_ORDER,
    StageError,
    StageSpec,
    default_stage_specs,
    run_pipeline,
    save_result,
)
from spiralarm.ikmlp import TrainConfig, load_model, save_model, train_ik
from spiralarm.losses import LossConfig, dynamic_loss, internal_error
from spiralarm.reach import (
    build_reach_map,
    gen_ik_dataset,
    load_dataset_csv,
    load_reach_map,
    save_dataset_csv,
    save_reach_map,
    voxelize,
    ReachMap,
)
from spiralarm.rigid import (
    default_rigid_arm,
    rigid_arm_from_dict,
    sample_downward_poses,
)
from spiralarm.trajectory import (
    Trajectory,
    butterworth_lowpass,
    load_csv,
    save_csv,
    align,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Configuration problem; message carries a JSON-pointer-ish path."""


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})")


def _need(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}/{key}: missing required field")
    return doc[key]


def _arm_from_config(doc, where="/arm", base_dir="."):
    """Arm spec: inline parameter-file dict or a path to one."""
    if isinstance(doc, str):
        path = doc if os.path.isabs(doc) else os.path.join(base_dir, doc)
        try:
            geometry, params = load_params(path)
        except FileNotFoundError:
            raise ConfigError(f"{where}: parameter file not found: {path}")
        return build_arm(geometry, params)
    if isinstance(doc, dict):
        geometry, params = params_from_dict(doc)
        return build_arm(geometry, params)
    raise ConfigError(f"{where}: expected path or parameter object")


def _simcfg_from_config(doc):
    doc = doc or {}
    cfg = SimConfig(
        dt=float(doc.get("dt", 1e-3)),
        gravity_tilt=math.radians(float(doc.get("gravity_tilt_deg", 0.0))),
        gravity_mag=float(doc.get("gravity_mag", 9.81)),
        settle_vel_tol=float(doc.get("settle_vel_tol", 1e-3)),
        settle_hold=float(doc.get("settle_hold", 0.2)),
        timeout=float(doc.get("timeout", 20.0)),
        rate_hz=float(doc.get("rate_hz", 120.0)),
    )
    cfg.validate()
    return cfg


def _loss_from_config(doc):
    doc = doc or {}
    return LossConfig(
        delta_pos=float(doc.get("delta_pos", 1.0)),
        delta_vel=float(doc.get("delta_vel", 1.0)),
        epsilon=float(doc.get("epsilon", 1e-6)),
        w_pos=float(doc.get("w_pos", 0.7)),
        w_vel=float(doc.get("w_vel", 0.3)),
    ).validate()


def _deconfig_from_config(doc, seed, parallel):
    doc = doc or {}
    return DEConfig(
        population=doc.get("population"),
        F=float(doc.get("F", 0.6)),
        CR=float(doc.get("CR", 0.9)),
        max_gens=int(doc.get("max_gens", 150)),
        seed=int(doc.get("seed", seed)),
        parallel_evals=int(doc.get("parallel_evals", parallel)),
    ).validate()


def write_manifest(out_dir, command, config_path, seed, outputs, started):
    doc = {
        "command": command,
        "config": os.path.abspath(config_path) if config_path else None,
        "out_dir": os.path.abspath(out_dir),
        "seed": seed,
        "started_unix": started,
        "finished_unix": time.time(),
        "toolkit_version": __version__,
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    started = time.time()
    cfg = _load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    model = _arm_from_config(_need(cfg, "arm", ""), base_dir=base)
    simcfg = _simcfg_from_config(cfg.get("sim"))
    try:
        protocol = protocol_from_dict(_need(cfg, "protocol", ""))
    except ValueError as err:
        raise ConfigError(f"/protocol: {err}")
    os.makedirs(args.out, exist_ok=True)
    trajs = run_protocol(model, protocol, simcfg)
    names = protocol_condition_names(protocol)
    outputs = []
    for name, traj in zip(names, trajs):
        path = os.path.join(args.out, f"{name}.csv")
        save_csv(traj, path)
        outputs.append(path)
        print(f"wrote {path} ({traj.n_frames} frames)")
    outputs.append(write_manifest(args.out, "simulate", args.config,
                                  args.seed, outputs, started))
    return EXIT_OK


def _load_bundle(cfg, base, simcfg, filter_cfg):
    ds = _need(cfg, "datasets", "")

    def load_traj(path, where):
        full = path if os.path.isabs(path) else os.path.join(base, path)
        if not os.path.exists(full):
            raise ConfigError(f"{where}: dataset file not found: {full}")
        traj = load_csv(full)
        if filter_cfg.get("enabled", False):
            traj = butterworth_lowpass(
                traj,
                float(filter_cfg.get("cutoff_hz", 10.0)),
                int(filter_cfg.get("order", 2)),
            )
        return traj

    bundle = IdentBundle()
    if "static_tilt" in ds:
        st = ds["static_tilt"]
        bundle.static_protocol = StaticTilt(
            angles_deg=tuple(st.get("angles_deg", (0, 30, 60, 90))))
        bundle.static_trajs = [
            load_traj(p, f"/datasets/static_tilt/paths/{i}")
            for i, p in enumerate(_need(st, "paths", "/datasets/static_tilt"))
        ]
    if "free_release" in ds:
        for i, rel in enumerate(ds["free_release"]):
            proto = FreeRelease(
                initial_contraction=float(rel.get("initial_contraction", 0.06)),
                record_s=float(rel.get("record_s", 5.0)),
                dorsal=bool(rel.get("dorsal", False)),
            )
            bundle.release_protocols.append(proto)
            bundle.release_trajs.append(
                load_traj(_need(rel, "path", f"/datasets/free_release/{i}"),
                          f"/datasets/free_release/{i}/path"))
    if "actuation_cycle" in ds:
        ac = ds["actuation_cycle"]
        bundle.cycle_protocol = ActuationCycle(
            levels_mm=tuple(ac.get("levels_mm", (20, 40, 60, 80, 100))),
            curl_s=float(ac.get("curl_s", 4.0)),
            uncurl_s=float(ac.get("uncurl_s", 4.0)),
        )
        bundle.cycle_trajs = [
            load_traj(p, f"/datasets/actuation_cycle/paths/{i}")
            for i, p in enumerate(_need(ac, "paths", "/datasets/actuation_cycle"))
        ]
    if "holdout" in ds:
        ho = ds["holdout"]
        bundle.holdout_protocol = FreeRelease(
            initial_contraction=float(ho.get("initial_contraction", 0.06)),
            record_s=float(ho.get("record_s", 5.0)),
            dorsal=bool(ho.get("dorsal", False)),
        )
        bundle.holdout_traj = load_traj(
            _need(ho, "path", "/datasets/holdout"), "/datasets/holdout/path")
    return bundle


def cmd_identify(args):
    started = time.time()
    cfg = _load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    model = _arm_from_config(_need(cfg, "arm", ""), base_dir=base)
    simcfg = _simcfg_from_config(cfg.get("sim"))
    loss_cfg = _loss_from_config(cfg.get("loss"))
    parallel = int(cfg.get("parallel", 1))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))

    bundle = _load_bundle(cfg, base, simcfg, cfg.get("filter", {}))

    specs = default_stage_specs(seed=seed, parallel=parallel)
    for name, sdoc in (cfg.get("stages") or {}).items():
        if name not in STAGE_ORDER:
            raise ConfigError(f"/stages/{name}: unknown stage")
        prev = specs[name]
        bounds = {k: tuple(float(x) for x in v)
                  for k, v in (sdoc.get("bounds") or {}).items()}
        specs[name] = StageSpec(
            stage=name,
            bounds={**prev.bounds, **bounds},
            loss=prev.loss,
            coarse=_deconfig_from_config(sdoc.get("coarse"),
                                         prev.coarse.seed, parallel),
            fine=_deconfig_from_config(sdoc.get("fine"),
                                       prev.fine.seed, parallel),
            fine_range=tuple(sdoc.get("fine_range", prev.fine_range)),
        )

    stages = STAGE_ORDER if args.stage is None else (args.stage,)
    if args.stage is not None and args.stage not in STAGE_ORDER:
        raise ConfigError(
            f"--stage {args.stage!r}: valid names: {', '.join(STAGE_ORDER)}")

    os.makedirs(args.out, exist_ok=True)
    try:
        result = run_pipeline(bundle, model, specs, simcfg, loss_cfg,
                              stages=stages,
                              progress=lambda m: print(m, flush=True))
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    outputs = save_result(result, model, args.out, seed=seed)
    rep = result.report
    if rep["e_internal_ratio"] is not None:
        print(f"E_internal before/after: {rep['e_internal_before_m']:.4f} m"
              f" -> {rep['e_internal_after_m']:.4f} m"
              f" (ratio {rep['e_internal_ratio']:.3f})")
    outputs.append(write_manifest(args.out, "identify", args.config, seed,
                                  outputs, started))
    return EXIT_OK


def cmd_ik(args):
    started = time.time()
    cfg = _load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    model = _arm_from_config(_need(cfg, "arm", ""), base_dir=base)
    simcfg = _simcfg_from_config(cfg.get("sim"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    workers = int(cfg.get("workers", 1))
    os.makedirs(args.out, exist_ok=True)
    outputs = []

    ds_path = cfg.get("dataset_csv")
    if ds_path:
        full = ds_path if os.path.isabs(ds_path) else os.path.join(base, ds_path)
        dataset = load_dataset_csv(full, seed=seed)
        print(f"loaded dataset: {len(dataset.inputs)} rows")
    else:
        n = int(cfg.get("n_samples", 20000))
        angles = tuple(float(a) for a in cfg.get("gravity_angles_deg",
                                                 (0.0, 60.0, 120.0)))
        dataset = gen_ik_dataset(
            model, n, gravity_angles_deg=angles, seed=seed, simcfg=simcfg,
            workers=workers,
            contraction_max=float(cfg.get("contraction_max", 0.1)))
        print(f"dataset: {len(dataset.inputs)} rows "
              f"({dataset.skipped} skipped)")
        out_csv = os.path.join(args.out, "ik_dataset.csv")
        save_dataset_csv(dataset, out_csv)
        outputs.append(out_csv)

    tr = cfg.get("train") or {}
    hyper = TrainConfig(
        lr=float(tr.get("lr", 1e-3)),
        batch=int(tr.get("batch", 128)),
        epochs=int(tr.get("epochs", 300)),
        seed=int(tr.get("seed", seed)),
    )
    slack = model.tendon_slack_length
    cmax = float(cfg.get("contraction_max", 0.1))
    mlp, history = train_ik(
        dataset, hyper, hidden=int(tr.get("hidden", 64)),
        output_bounds=(np.full(3, slack - 1.2 * cmax), np.full(3, slack)))
    model_path = os.path.join(args.out, "ik_model.json")
    save_model(mlp, model_path)
    outputs.append(model_path)
    metrics = {
        "rows": int(len(dataset.inputs)),
        "train_rows": int(len(dataset.train_idx)),
        "val_rows": int(len(dataset.val_idx)),
        "final_train_mse": history["train_mse"][-1],
        "final_val_mse": history["val_mse"][-1],
    }
    print(json.dumps(metrics))
    metrics_path = os.path.join(args.out, "ik_metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    outputs.append(metrics_path)
    outputs.append(write_manifest(args.out, "ik", args.config, seed,
                                  outputs, started))
    return EXIT_OK


def cmd_reachmap(args):
    started = time.time()
    cfg = _load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    simcfg = _simcfg_from_config(cfg.get("sim"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    kind = cfg.get("kind", "soft")
    samples = int(cfg.get("samples", 2000))
    voxel = float(cfg.get("voxel_size", 0.01))
    workers = int(cfg.get("workers", 1))
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    if kind == "soft":
        model = _arm_from_config(_need(cfg, "arm", ""), base_dir=base)
        for deg in cfg.get("gravity_angles_deg", (0.0, 60.0, 120.0)):
            m = build_reach_map(model, math.radians(float(deg)), samples,
                                voxel_size=voxel, simcfg=simcfg,
                                workers=workers)
            path = os.path.join(args.out, f"soft_reach_{int(round(deg)):03d}.json")
            save_reach_map(m, path)
            outputs.append(path)
            print(f"wrote {path} ({int(m.occupancy.sum())} voxels, "
                  f"{m.failed_count} failed samples)")
    elif kind == "rigid":
        arm = (rigid_arm_from_dict(cfg["rigid"]) if "rigid" in cfg
               else default_rigid_arm())
        pts = sample_downward_poses(arm, samples, seed=seed,
                                    cone_deg=float(cfg.get("cone_deg", 10.0)))
        if len(pts) == 0:
            print("error: no downward poses found", file=sys.stderr)
            return EXIT_RUNTIME
        origin, occ = voxelize(pts, voxel)
        m = ReachMap(gravity_angle_deg=None, voxel_size=voxel, origin=origin,
                     occupancy=occ, sample_count=len(pts))
        path = os.path.join(args.out, "rigid_reach.json")
        save_reach_map(m, path)
        outputs.append(path)
        print(f"wrote {path} ({int(occ.sum())} voxels from {len(pts)} poses)")
    else:
        raise ConfigError(f"/kind: expected 'soft' or 'rigid', got {kind!r}")
    outputs.append(write_manifest(args.out, "reachmap", args.config, seed,
                                  outputs, started))
    return EXIT_OK


def cmd_eval(args):
    sim = load_csv(args.simulated)
    ref = load_csv(args.reference)
    s, r = align(sim, ref)
    doc = {
        "e_internal_m": internal_error(s, r),
        "dynamic_loss": dynamic_loss(s, r, LossConfig()),
        "frames": int(s.n_frames),
        "segments": int(s.n_segments),
    }
    print(json.dumps(doc))
    return EXIT_OK


def cmd_filter(args):
    traj = load_csv(args.input)
    out = butterworth_lowpass(traj, args.cutoff, args.order)
    save_csv(out, args.output)
    print(f"wrote {args.output} ({out.n_frames} frames, "
          f"cutoff {args.cutoff} Hz, order {args.order})")
    return EXIT_OK


def cmd_serve(args):
    from spiralarm.server import TeleopServer
    from spiralarm.teleop import TeleopConfig, GraspConfig, TeleopSession
    from spiralarm.ikmlp import load_model as load_ik_model
    cfg = _load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))

    def full(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    model = _arm_from_config(_need(cfg, "arm", ""), base_dir=base)
    physical = _arm_from_config(cfg.get("physical_arm", _need(cfg, "arm", "")),
                                base_dir=base)
    simcfg = _simcfg_from_config(cfg.get("sim"))
    arm = (rigid_arm_from_dict(cfg["rigid"]) if "rigid" in cfg
           else default_rigid_arm())
    soft_maps = [load_reach_map(full(p)) for p in _need(cfg, "soft_maps", "")]
    rigid_map = load_reach_map(full(_need(cfg, "rigid_map", "")))
    ik_model = load_ik_model(full(_need(cfg, "ik_model", "")))
    tcfg_doc = cfg.get("teleop") or {}
    tcfg = TeleopConfig(
        rigid_speed=float(tcfg_doc.get("rigid_speed", 0.7)),
        preview_curl_s=float(tcfg_doc.get("preview_curl_s", 3.0)),
        stream_hz=float(tcfg_doc.get("stream_hz", 60.0)),
        delay_s=float(tcfg_doc.get("delay_s", 0.5)),
        grasp=GraspConfig(
            margin=float(tcfg_doc.get("grasp_margin", 0.02)),
            min_segments=int(tcfg_doc.get("grasp_min_segments", 3)),
            wrap_min_deg=float(tcfg_doc.get("grasp_wrap_min_deg", 180.0)),
        ),
    )
    session = TeleopSession(model, physical, arm, rigid_map, soft_maps,
                            ik_model, simcfg=simcfg, config=tcfg,
                            q_home=cfg.get("q_home"))
    port = args.port if args.port is not None else int(cfg.get("port", 8765))
    server = TeleopServer(session, host=cfg.get("host", "127.0.0.1"),
                          port=port,
                          time_scale=float(cfg.get("time_scale", 1.0)))
    print(f"teleop server on ws://{server.host}:{port}", flush=True)
    asyncio.run(server.serve_forever())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="spiralarm",
        description="Digital-twin toolkit for a cable-driven spiral soft arm",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="JSON config path")
        if out:
            sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")

    sp = sub.add_parser("simulate", help="run an experiment protocol")
    common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("identify", help="staged parameter identification")
    common(sp)
    sp.add_argument("--stage", default=None,
                    help="run a single stage (stiffness|damping|control)")
    sp.set_defaults(fn=cmd_identify)

    sp = sub.add_parser("ik", help="generate IK dataset and train the model")
    common(sp)
    sp.set_defaults(fn=cmd_ik)

    sp = sub.add_parser("reachmap", help="build reachability maps")
    common(sp)
    sp.set_defaults(fn=cmd_reachmap)

    sp = sub.add_parser("eval", help="internal shape error between two CSVs")
    sp.add_argument("simulated")
    sp.add_argument("reference")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("filter", help="zero-phase Butterworth low-pass")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--cutoff", type=float, default=10.0)
    sp.add_argument("--order", type=int, default=2, choices=(2, 4))
    sp.set_defaults(fn=cmd_filter)

    sp = sub.add_parser("serve", help="run the teleoperation server")
    sp.add_argument("--config", required=True)
    sp.add_argument("--port", type=int, default=None)
    sp.set_defaults(fn=cmd_serve)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
