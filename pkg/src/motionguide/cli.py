"""Command line entry point: ``motionguide <command> [--config FILE] [flags]``.

Each command resolves its options as built-in defaults < JSON config file <
explicit flags, rejects unknown keys, writes its outputs plus a manifest that
records the resolved config, its hash and the output digests.

Exit codes: 0 success, 2 bad config / input, 3 file-system failure,
4 numeric failure (divergence, failed gradient check).
"""
import argparse
import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import MotionGuideError, TrainingDivergedError
from .generation import (BASE_FILE, CALIBRATED_STEPS, CALIBRATED_TAU, CONTROLNET_FILE, generate, load_bundle,
                         save_base, save_controlnet)
from .gradcheck import DEFAULT_SPARSITIES, run_gradcheck
from .guidance import ControlSpec, GuidanceConfig
from .io import (bvh_text, load_frame_pose, load_motion, overlay_csv, save_frame_pose, save_motion,
                 spec_from_dict, spec_to_dict)
from .metrics import evaluate_sweep
from .networks import NetConfig
from .planner import CurveSpec, compose, plan, trajectory_csv
from .pose_import import JointMapTable, RawPoseFile, import_pose
from .synthetic import N_CLASSES
from .training import RotationAug, TrainConfig, cached_dataset, train_base, train_controlnet, write_log

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "MOTIONGUIDE_OUT"


class ConfigError(MotionGuideError):
    pass


class NumericFailure(MotionGuideError):
    pass


DEFAULTS = {
    "train": {
        "out_dir": None, "cache_dir": None, "n_samples": 2000, "n_frames": 64, "seed": 0,
        "batch_size": 64, "learning_rate": 1e-3, "base_steps": 4000, "controlnet_steps": 3000, "epochs": None,
        "optimizer": "adamw", "grad_clip": 1.0, "T": 100, "schedule": "cosine",
        "rotation_aug": {"enabled": True, "max_yaw": math.pi / 6},
        "net": {"d_model": 64, "n_layers": 4, "n_heads": 4, "ff_dim": 128},
    },
    "generate": {
        "checkpoint_dir": None, "spec": None, "out": None, "seed": 0, "condition": 0,
        "use_controlnet": True, "bvh": False, "overlay": False,
        "guidance": {"enabled": True, "tau": CALIBRATED_TAU, "steps_per_denoise": CALIBRATED_STEPS, "apply_from_t": None, "apply_until_t": 1},
    },
    "eval": {"generated_dir": None, "specs_dir": None, "out_dir": None, "threshold": 0.5},
    "plan-traj": {"curve": None, "segments": None, "out_dir": None, "every": 1, "poses": []},
    "import-pose": {"input": None, "joint_map": None, "floor_contact": True, "out": None},
    "gradcheck": {"seed": 0, "cases": 20, "sparsities": list(DEFAULT_SPARSITIES), "n_frames": 196,
                  "h": 1e-5, "tol": 1e-4, "out": None},
}


# -- config plumbing ---------------------------------------------------------------

def _merge(base, override, where):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and base[key] and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(command, config_file=None, overrides=None):
    cfg = DEFAULTS[command]
    if config_file is not None:
        try:
            loaded = json.loads(Path(config_file).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{config_file}: invalid JSON ({err})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_file}: top level must be an object")
        cfg = _merge(cfg, loaded, "")
    flat = {k: v for k, v in (overrides or {}).items() if v is not None}
    nested = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            nested.setdefault(head, {})[tail] = value
        else:
            nested[key] = value
    return _merge(cfg, nested, "")


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_root(sub):
    return Path(os.environ.get(OUT_ENV, "runs")) / sub


def _write_manifest(path, command, cfg, outputs):
    manifest = {
        "command": command, "version": __version__, "config": cfg, "config_sha256": config_hash(cfg),
        "seed": cfg.get("seed"), "outputs": {str(Path(p).name): _digest(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ConfigError(f"missing required option {k!r}")


# -- commands -----------------------------------------------------------------

def cmd_train(cfg, log=print):
    out = Path(cfg["out_dir"] or _out_root("train"))
    out.mkdir(parents=True, exist_ok=True)
    try:
        tcfg = TrainConfig(batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"], steps=cfg["base_steps"],
                           epochs=cfg["epochs"], seed=cfg["seed"], rotation_aug=RotationAug(**cfg["rotation_aug"]),
                           optimizer=cfg["optimizer"], grad_clip=cfg["grad_clip"], T=cfg["T"],
                           schedule=cfg["schedule"])
        net_cfg = NetConfig(n_classes=N_CLASSES, T=cfg["T"], **cfg["net"])
    except TypeError as err:
        raise ConfigError(str(err)) from None
    torch.set_num_threads(1)
    data = cached_dataset(cfg["cache_dir"] or out / "cache", cfg["n_samples"], cfg["n_frames"], cfg["seed"])

    def progress(tag):
        def fn(step, loss):
            if step % 250 == 0:
                log(f"{tag} step {step} loss {loss:.5f}")
        return fn

    base, normalizer = train_base(data, tcfg, net_cfg, log=progress("base"))
    write_log(out / "train_base.csv", base.history)
    save_base(out / BASE_FILE, base.model, normalizer, cfg["schedule"], {"seed": cfg["seed"]})
    outputs = [out / BASE_FILE]
    if cfg["controlnet_steps"]:
        cn = train_controlnet(data, base.model, normalizer, replace(tcfg, steps=cfg["controlnet_steps"], epochs=None),
                              log=progress("controlnet"))
        write_log(out / "train_controlnet.csv", cn.history)
        save_controlnet(out / CONTROLNET_FILE, cn.model, {"seed": cfg["seed"]})
        outputs.append(out / CONTROLNET_FILE)
    _write_manifest(out / "manifest.json", "train", cfg, outputs)
    return outputs


def _guidance(cfg, T):
    g = cfg["guidance"]
    if not g["enabled"]:
        return None
    return GuidanceConfig(tau=g["tau"], steps_per_denoise=g["steps_per_denoise"],
                          apply_from_t=g["apply_from_t"] or T, apply_until_t=g["apply_until_t"])


def _read_spec_file(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    extras = {k: d.pop(k) for k in ("condition", "sparsity") if k in d}
    return spec_from_dict(d), extras


def cmd_generate(cfg):
    _require(cfg, "checkpoint_dir", "spec")
    bundle = load_bundle(cfg["checkpoint_dir"], with_controlnet=cfg["use_controlnet"])
    guidance = _guidance(cfg, bundle.T)
    spec_path = Path(cfg["spec"])
    if spec_path.is_dir():
        files = sorted(spec_path.glob("*.json"))
        if not files:
            raise ConfigError(f"no spec files in {spec_path}")
        out_dir = Path(cfg["out"] or _out_root("generate"))
        targets = [out_dir / f.name for f in files]
    else:
        files = [spec_path]
        target = Path(cfg["out"] or _out_root("generate") / "motion.json")
        out_dir, targets = target.parent, [target]
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = []
    for i, (src, dst) in enumerate(zip(files, targets)):
        spec, extras = _read_spec_file(src)
        label = int(extras.get("condition", cfg["condition"]))
        if not 0 <= label < bundle.base.cfg.n_classes:
            raise ConfigError(f"condition {label} outside [0, {bundle.base.cfg.n_classes})")
        _, motions = generate(bundle, [spec], seed=cfg["seed"], guidance=guidance,
                              use_controlnet=cfg["use_controlnet"], conditions=[label], stream_offset=i)
        save_motion(dst, motions[0], {"seed": cfg["seed"], "stream": i, "spec": src.name, "condition": label})
        outputs.append(dst)
        if cfg["bvh"]:
            bvh = dst.with_suffix(".bvh")
            bvh.write_text(bvh_text(motions[0]))
            outputs.append(bvh)
        if cfg["overlay"]:
            ov = dst.with_name(dst.stem + "_overlay.csv")
            ov.write_text(overlay_csv(motions[0], spec))
            outputs.append(ov)
    manifest = targets[0].with_name("manifest.json") if len(files) > 1 else targets[0].with_suffix(".manifest.json")
    _write_manifest(manifest, "generate", cfg, outputs)
    return outputs


def _sparsity_of(spec, extras):
    if "sparsity" in extras:
        return int(extras["sparsity"])
    return int(max(spec.traj_mask.sum(), spec.pose_mask.sum()))


def cmd_eval(cfg):
    _require(cfg, "generated_dir", "specs_dir")
    gen_dir, spec_dir = Path(cfg["generated_dir"]), Path(cfg["specs_dir"])
    spec_files = {p.stem: p for p in sorted(spec_dir.glob("*.json"))}
    gen_files = {p.stem: p for p in sorted(gen_dir.glob("*.json")) if not p.name.endswith(".manifest.json")
                 and p.name != "manifest.json"}
    missing = sorted(set(spec_files) ^ set(gen_files))
    if missing or not spec_files:
        raise ConfigError(f"unpaired files: {missing}" if missing else "no spec files found")
    groups = {}
    for stem in sorted(spec_files):
        spec, extras = _read_spec_file(spec_files[stem])
        motion = load_motion(gen_files[stem])
        motions, specs = groups.setdefault(_sparsity_of(spec, extras), ([], []))
        motions.append(motion)
        specs.append(spec)
    report = evaluate_sweep(groups, cfg["threshold"])
    out = Path(cfg["out_dir"] or _out_root("eval"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    _write_manifest(out / "manifest.json", "eval", cfg, [out / "report.json", out / "report.csv"])
    return report


def cmd_plan_traj(cfg):
    if (cfg["curve"] is None) == (cfg["segments"] is None):
        raise ConfigError("give exactly one of 'curve' or 'segments'")
    if cfg["curve"] is not None:
        traj = plan(CurveSpec.from_dict(cfg["curve"]))
    else:
        traj = compose([CurveSpec.from_dict(s) for s in cfg["segments"]])
    every = int(cfg["every"])
    if every < 1:
        raise ConfigError("'every' must be >= 1")
    n = len(traj)
    tmask = np.zeros(n, bool)
    tmask[::every] = True
    pose = np.zeros((n, 22, 3))
    pmask = np.zeros(n, bool)
    for item in cfg["poses"]:
        f = int(item["frame"])
        if not 0 <= f < n:
            raise ConfigError(f"pose frame {f} outside [0, {n})")
        pose[f] = load_frame_pose(item["file"])
        pmask[f] = True
    spec = ControlSpec.from_arrays(traj, tmask, pose, pmask)
    out = Path(cfg["out_dir"] or _out_root("plan"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(trajectory_csv(traj))
    (out / "spec.json").write_text(json.dumps(spec_to_dict(spec), indent=1, sort_keys=True) + "\n")
    _write_manifest(out / "manifest.json", "plan-traj", cfg, [out / "trajectory.csv", out / "spec.json"])
    return spec


def cmd_import_pose(cfg):
    _require(cfg, "input")
    raw = RawPoseFile.load(cfg["input"])
    table = JointMapTable.load(cfg["joint_map"])
    pose = import_pose(raw, table, floor_contact=cfg["floor_contact"])
    out = Path(cfg["out"] or _out_root("pose") / "pose.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_frame_pose(out, pose, raw.source)
    _write_manifest(out.with_suffix(".manifest.json"), "import-pose", cfg, [out])
    return pose


def cmd_gradcheck(cfg, gradient_fn=None):
    report = run_gradcheck(seed=cfg["seed"], cases=cfg["cases"], sparsities=cfg["sparsities"],
                           n_frames=cfg["n_frames"], h=cfg["h"], tol=cfg["tol"], gradient_fn=gradient_fn)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report


# -- argument parsing ---------------------------------------------------------------

def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    p = argparse.ArgumentParser(prog="motionguide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, opts):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON config file")
        for flag, key, kind in opts:
            sp.add_argument(flag, dest=key, type=kind, default=None)
        return sp

    add("train", "generate the synthetic corpus and train base + ControlNet", [
        ("--out-dir", "out_dir", str), ("--cache-dir", "cache_dir", str), ("--n-samples", "n_samples", int),
        ("--n-frames", "n_frames", int), ("--seed", "seed", int), ("--batch-size", "batch_size", int),
        ("--lr", "learning_rate", float), ("--base-steps", "base_steps", int),
        ("--controlnet-steps", "controlnet_steps", int), ("--optimizer", "optimizer", str),
        ("--rotation-aug", "rotation_aug.enabled", _bool), ("--max-yaw", "rotation_aug.max_yaw", float),
    ])
    add("generate", "sample motions for control spec file(s)", [
        ("--checkpoint-dir", "checkpoint_dir", str), ("--spec", "spec", str), ("--out", "out", str),
        ("--seed", "seed", int), ("--condition", "condition", int), ("--tau", "guidance.tau", float),
        ("--guidance", "guidance.enabled", _bool), ("--guidance-steps", "guidance.steps_per_denoise", int),
        ("--controlnet", "use_controlnet", _bool), ("--bvh", "bvh", _bool), ("--overlay", "overlay", _bool),
    ])
    add("eval", "score generated motions against their control specs", [
        ("--generated-dir", "generated_dir", str), ("--specs-dir", "specs_dir", str),
        ("--out-dir", "out_dir", str), ("--threshold", "threshold", float),
    ])
    add("plan-traj", "sample a parametric root trajectory into CSV and a control spec", [
        ("--out-dir", "out_dir", str), ("--every", "every", int),
    ])
    add("import-pose", "convert an estimator pose file to a canonical 22-joint pose", [
        ("--input", "input", str), ("--joint-map", "joint_map", str), ("--out", "out", str),
        ("--floor-contact", "floor_contact", _bool),
    ])
    add("gradcheck", "compare the analytic guidance gradient with finite differences", [
        ("--seed", "seed", int), ("--cases", "cases", int), ("--sparsities", "sparsities", _int_list),
        ("--n-frames", "n_frames", int), ("--h", "h", float), ("--tol", "tol", float), ("--out", "out", str),
    ])
    return p


def main(argv=None, gradient_fn=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "generate":
            for path in cmd_generate(cfg):
                print(path)
        elif args.command == "eval":
            print(cmd_eval(cfg).to_csv(), end="")
        elif args.command == "plan-traj":
            cmd_plan_traj(cfg)
        elif args.command == "import-pose":
            cmd_import_pose(cfg)
        elif args.command == "gradcheck":
            report = cmd_gradcheck(cfg, gradient_fn)
            w = report["worst"]
            status = "PASS" if report["passed"] else "FAIL"
            print(f"gradcheck {status}: max rel err {report['max_rel_err']:.3e} at sparsity {w['sparsity']} "
                  f"case {w['case']} frame {w['worst_frame']} channel {w['worst_channel']}")
            if not report["passed"]:
                raise NumericFailure("gradient check failed")
    except (NumericFailure, TrainingDivergedError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MotionGuideError, KeyError, TypeError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
