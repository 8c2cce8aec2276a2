import json

import numpy as np
import pytest

from motionguide import cli
from motionguide.generation import generate, load_bundle
from motionguide.guidance import loss_gradient
from motionguide.io import load_motion, save_frame_pose, save_motion, spec_to_dict
from motionguide.kinematics import REST_POSE
from motionguide.synthetic import gen_dataset
from motionguide.training import sample_control

SMOKE = {"n_samples": 8, "n_frames": 16, "batch_size": 8, "base_steps": 20, "controlnet_steps": 10, "T": 10,
         "net": {"d_model": 32, "n_layers": 2, "n_heads": 2, "ff_dim": 64}}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    config = root / "smoke.json"
    config.write_text(json.dumps(SMOKE))
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(config), "--out-dir", str(root / name),
                         "--cache-dir", str(root / "cache")]) == 0
    return root


def write_spec(path, spec, **extra):
    path.write_text(json.dumps({**spec_to_dict(spec), **extra}))


def test_config_resolution_order(tmp_path):
    cfg = cli.resolve_config("gradcheck")
    assert cfg["cases"] == 20 and cfg["sparsities"] == [1, 2, 5, 49, 196]
    (tmp_path / "c.json").write_text(json.dumps({"cases": 3, "seed": 7}))
    cfg = cli.resolve_config("gradcheck", tmp_path / "c.json", {"cases": 2, "seed": None})
    assert cfg["cases"] == 2 and cfg["seed"] == 7
    cfg = cli.resolve_config("generate", None, {"guidance.tau": 0.5})
    assert cfg["guidance"]["tau"] == 0.5 and cfg["guidance"]["steps_per_denoise"] == cli.CALIBRATED_STEPS


@pytest.mark.parametrize("payload", [{"cases": 1, "bogus": 2}, {"rotation_aug": {"angle": 1}}, [1, 2], "{"])
def test_unknown_or_malformed_config_is_rejected(tmp_path, payload):
    path = tmp_path / "c.json"
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    command = "train" if isinstance(payload, dict) and "rotation_aug" in payload else "gradcheck"
    assert cli.main([command, "--config", str(path)]) == cli.EXIT_CONFIG


def test_missing_files_give_io_exit(tmp_path):
    assert cli.main(["import-pose", "--input", str(tmp_path / "none.json")]) == cli.EXIT_IO
    assert cli.main(["gradcheck", "--config", str(tmp_path / "none.json")]) == cli.EXIT_IO


def test_gradcheck_passes_and_reports(tmp_path, capsys):
    out = tmp_path / "gc.json"
    assert cli.main(["gradcheck", "--cases", "2", "--n-frames", "24", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["cases"]) == 10
    assert all("max_rel_err" in c for c in report["cases"])
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_catches_an_injected_bug(tmp_path, capsys):
    def buggy(x, spec, normalizer):
        g = np.array(loss_gradient(x, spec, normalizer))
        g[..., 3] *= 1.01
        return g

    out = tmp_path / "gc.json"
    code = cli.main(["gradcheck", "--cases", "1", "--n-frames", "16", "--out", str(out)], gradient_fn=buggy)
    assert code == cli.EXIT_NUMERIC
    report = json.loads(out.read_text())
    assert not report["passed"] and report["worst"]["worst_channel"] == 3
    assert "FAIL" in capsys.readouterr().out


def test_train_is_byte_deterministic(trained):
    for name in ("base.ckpt", "controlnet.ckpt"):
        assert (trained / "a" / name).read_bytes() == (trained / "b" / name).read_bytes()
    manifest = json.loads((trained / "a" / "manifest.json").read_text())
    assert manifest["config_sha256"] == cli.config_hash(manifest["config"]) and manifest["seed"] == 0
    assert set(manifest["outputs"]) == {"base.ckpt", "controlnet.ckpt"}
    rows = (trained / "a" / "train_base.csv").read_text().splitlines()
    assert rows[0] == "step,loss,wall_time" and len(rows) == 21


def test_generate_outputs(trained, tmp_path):
    sample = gen_dataset(1, 16, 5)[0]
    spec = sample_control(sample, 5, np.random.default_rng(0))
    write_spec(tmp_path / "spec.json", spec, condition=2)
    ckpt = str(trained / "a")
    args = ["generate", "--checkpoint-dir", ckpt, "--spec", str(tmp_path / "spec.json"), "--seed", "3",
            "--bvh", "true", "--overlay", "true"]
    assert cli.main(args + ["--out", str(tmp_path / "one" / "m.json")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "two" / "m.json")]) == 0
    for name in ("m.json", "m.bvh", "m_overlay.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    motion = load_motion(tmp_path / "one" / "m.json")
    assert motion.shape == (16, 22, 3)
    rows = (tmp_path / "one" / "m_overlay.csv").read_text().strip().split("\n")
    assert len(rows) == 17 and rows[0] == "frame,gen_x,gen_z,ref_x,ref_z,masked"
    assert json.loads((tmp_path / "one" / "m.manifest.json").read_text())["command"] == "generate"


def test_generate_guidance_off_matches_unguided_sampling(trained, tmp_path):
    sample = gen_dataset(1, 16, 6)[0]
    spec = sample_control(sample, 2, np.random.default_rng(1))
    write_spec(tmp_path / "spec.json", spec)
    out = tmp_path / "m.json"
    assert cli.main(["generate", "--checkpoint-dir", str(trained / "a"), "--spec", str(tmp_path / "spec.json"),
                     "--guidance", "off", "--out", str(out)]) == 0
    _, direct = generate(load_bundle(trained / "a"), [spec], seed=0, guidance=None, conditions=[0])
    assert np.array_equal(load_motion(out), direct[0])


def test_generate_rejects_bad_inputs(trained, tmp_path):
    spec = sample_control(gen_dataset(1, 16, 0)[0], 1, np.random.default_rng(0))
    write_spec(tmp_path / "spec.json", spec, condition=9)
    base = ["generate", "--checkpoint-dir", str(trained / "a"), "--out", str(tmp_path / "o.json")]
    assert cli.main(base + ["--spec", str(tmp_path / "spec.json")]) == cli.EXIT_CONFIG
    d = spec_to_dict(spec)
    d["n_frames"] = 300
    (tmp_path / "long.json").write_text(json.dumps(d))
    assert cli.main(base + ["--spec", str(tmp_path / "long.json")]) == cli.EXIT_CONFIG
    assert cli.main(["generate", "--checkpoint-dir", str(trained / "a")]) == cli.EXIT_CONFIG


def test_eval_ground_truth_against_itself(tmp_path):
    gen_dir, spec_dir, out = tmp_path / "gen", tmp_path / "specs", tmp_path / "report"
    gen_dir.mkdir()
    spec_dir.mkdir()
    samples = gen_dataset(10, 196, 2)
    rng = np.random.default_rng(0)
    for i, s in enumerate(samples):
        level = (1, 2, 5, 49, 196)[i % 5]
        save_motion(gen_dir / f"seq{i}.json", s.motion)
        write_spec(spec_dir / f"seq{i}.json", sample_control(s, level, rng), sparsity=level)
    assert cli.main(["eval", "--generated-dir", str(gen_dir), "--specs-dir", str(spec_dir),
                     "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_sparsity"]) == {"1", "2", "5", "49", "196"}
    for row in [report, *report["per_sparsity"].values()]:
        for k in ("traj_err_50cm", "loc_err_50cm", "avg_err", "pose_dist"):
            assert row[k] == 0.0
    rows = (out / "report.csv").read_text().strip().split("\n")
    assert len(rows) == 7 and rows[-1].startswith("all,")
    skate = [r["foot_skating_ratio"] for r in report["per_sparsity"].values()]
    assert abs(report["foot_skating_ratio"] - np.mean(skate)) < 1e-12

    (gen_dir / "seq0.json").unlink()
    assert cli.main(["eval", "--generated-dir", str(gen_dir), "--specs-dir", str(spec_dir)]) == cli.EXIT_CONFIG


def test_plan_traj_and_import_pose(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "runs"))
    pose = REST_POSE - np.array([0, REST_POSE[:, 1].min(), 0])
    save_frame_pose(tmp_path / "pose.json", pose)
    cfg = {"curve": {"kind": "circle", "params": {"radius": 2.0}, "n_frames": 40},
           "every": 4, "poses": [{"frame": 8, "file": str(tmp_path / "pose.json")}]}
    (tmp_path / "plan.json").write_text(json.dumps(cfg))
    assert cli.main(["plan-traj", "--config", str(tmp_path / "plan.json")]) == 0
    spec = json.loads((tmp_path / "runs" / "plan" / "spec.json").read_text())
    assert spec["n_frames"] == 40 and len(spec["traj"]) == 10 and spec["poses"][0]["frame"] == 8
    csv_rows = (tmp_path / "runs" / "plan" / "trajectory.csv").read_text().strip().split("\n")
    assert len(csv_rows) == 41

    bad = {"segments": [{"kind": "line", "params": {"start": [0, 0], "end": [0, 1]}},
                        {"kind": "line", "params": {"start": [0, 3], "end": [0, 4]}}]}
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert cli.main(["plan-traj", "--config", str(tmp_path / "bad.json")]) == cli.EXIT_CONFIG

    raw = {"source": "est", "joints": (pose * np.array([1, -1, -1]) + 2.0).tolist()}
    (tmp_path / "raw.json").write_text(json.dumps(raw))
    assert cli.main(["import-pose", "--input", str(tmp_path / "raw.json")]) == 0
    from motionguide.io import load_frame_pose
    out = load_frame_pose(tmp_path / "runs" / "pose" / "pose.json")
    assert np.allclose(out, pose - np.array([pose[0, 0], 0, pose[0, 2]]), atol=1e-12)
