import dataclasses
import math

import numpy as np
import pytest
import torch

from motionguide.errors import InvalidInputError, TrainingDivergedError
from motionguide.kinematics import from_global, to_global
from motionguide.metrics import foot_skating_ratio
from motionguide.networks import MotionDenoiser, NetConfig
from motionguide.synthetic import CLASS_NAMES, gen_dataset, stack_dataset
from motionguide.training import (SPARSITY_LEVELS, RotationAug, TrainConfig, augment_rotation, cached_dataset,
                                  iterate_batches, load_dataset, sample_control, save_dataset, train_base,
                                  train_controlnet, write_log)

SMALL = dict(batch_size=8, T=20)


@pytest.fixture(scope="module")
def corpus():
    return gen_dataset(20, 32, seed=3)


def circle_fit_residual(xz):
    # algebraic least-squares circle: x^2 + z^2 + D x + E z + F = 0
    a = np.column_stack([xz[:, 0], xz[:, 1], np.ones(len(xz))])
    b = -(xz ** 2).sum(axis=1)
    (d, e, f), *_ = np.linalg.lstsq(a, b, rcond=None)
    c = -0.5 * np.array([d, e])
    r = math.sqrt(c @ c - f)
    return np.max(np.abs(np.linalg.norm(xz - c, axis=1) - r))


def test_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 64
    assert SPARSITY_LEVELS == (1, 2, 5, 49, 196)
    assert cfg.rotation_aug == RotationAug(True, math.pi / 6)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert TrainConfig(epochs=3, batch_size=64).total_steps(100) == 6
    for bad in (dict(batch_size=0), dict(optimizer="rmsprop"), dict(rotation_aug=RotationAug(max_yaw=-1.0)),
                dict(learning_rate=0.0), dict(epochs=0)):
        with pytest.raises(InvalidInputError):
            TrainConfig(**bad)


def test_dataset_is_deterministic_and_round_trips(corpus):
    again = gen_dataset(20, 32, seed=3)
    for a, b in zip(corpus, again):
        assert a.label == b.label and a.motion.tobytes() == b.motion.tobytes()
    assert {s.label for s in corpus} == set(range(len(CLASS_NAMES)))
    for s in corpus:
        assert np.max(np.abs(to_global(s.features) - s.motion)) < 1e-6
        assert np.max(np.abs(from_global(s.motion) - s.features)) < 1e-6
    assert not np.array_equal(corpus[0].motion, gen_dataset(1, 32, seed=4)[0].motion)
    with pytest.raises(ValueError):
        gen_dataset(1, 15, 0)


def test_walk_circle_roots_lie_on_a_circle():
    samples = [s for s in gen_dataset(25, 196, seed=0) if CLASS_NAMES[s.label] == "walk-circle"]
    assert len(samples) == 5
    for s in samples:
        assert circle_fit_residual(s.motion[:, 0, [0, 2]]) < 1e-6


def test_ground_truth_gait_is_skate_free():
    motions = np.stack([s.motion for s in gen_dataset(30, 196, seed=1)])
    assert foot_skating_ratio(motions) < 0.02


@pytest.mark.parametrize("sparsity", [1, 2, 5, 49, 196])
def test_sample_control_masks(sparsity):
    sample = gen_dataset(1, 196, seed=0)[0]
    spec = sample_control(sample, sparsity, np.random.default_rng(sparsity))
    assert spec.traj_mask.sum() == sparsity and spec.pose_mask.sum() == sparsity
    assert np.array_equal(spec.traj[spec.traj_mask], sample.motion[spec.traj_mask, 0])
    assert np.array_equal(spec.pose[spec.pose_mask], sample.motion[spec.pose_mask])


def test_sample_control_draws_masks_independently_and_validates():
    motion = gen_dataset(1, 64, seed=0)[0].motion
    rng = np.random.default_rng(0)
    differ = sum(not np.array_equal(s.traj_mask, s.pose_mask)
                 for s in (sample_control(motion, 5, rng) for _ in range(20)))
    assert differ == 20
    with pytest.raises(InvalidInputError):
        sample_control(motion, 65, rng)
    with pytest.raises(InvalidInputError):
        sample_control(motion, 0, rng)


def test_augment_rotation_is_an_isometry_about_the_pelvis():
    sample = gen_dataset(1, 64, seed=2)[0]
    spec = sample_control(sample, 49, np.random.default_rng(0))
    assert augment_rotation(spec, np.random.default_rng(1), 0.0) is spec
    out = augment_rotation(spec, np.random.default_rng(1), math.pi / 6)
    assert np.array_equal(out.traj, spec.traj) and np.array_equal(out.traj_mask, spec.traj_mask)
    m = spec.pose_mask
    assert np.array_equal(out.pose[m, 0], spec.pose[m, 0])
    for a, b in zip(spec.pose[m], out.pose[m]):
        da = np.linalg.norm((a - a[0])[:, None] - (a - a[0])[None], axis=-1)
        db = np.linalg.norm((b - b[0])[:, None] - (b - b[0])[None], axis=-1)
        assert np.max(np.abs(da - db)) < 1e-9
        assert np.allclose(a[:, 1], b[:, 1], atol=1e-12)
    # angles stay within the configured bound
    for a, b in zip(spec.pose[m], out.pose[m]):
        va, vb = a[4, [0, 2]] - a[0, [0, 2]], b[4, [0, 2]] - b[0, [0, 2]]
        ang = math.atan2(va[0] * vb[1] - va[1] * vb[0], va @ vb)
        assert abs(ang) <= math.pi / 6 + 1e-9
    with pytest.raises(InvalidInputError):
        augment_rotation(spec, np.random.default_rng(0), -0.1)


def test_batches_are_reproducible(corpus):
    from motionguide.training import fit_normalizer
    data = stack_dataset(corpus)
    norm = fit_normalizer(data["features"])
    cfg = TrainConfig(seed=5, **SMALL)
    a = next(iterate_batches(data, norm, cfg, controls=True))
    b = next(iterate_batches(data, norm, cfg, controls=True))
    for k in ("x0", "x_t", "t", "labels"):
        assert torch.equal(a[k], b[k])
    assert np.array_equal(a["control"].pose, b["control"].pose)
    assert a["x_t"].shape == (8, 32, 67) and int(a["t"].min()) >= 1 and int(a["t"].max()) <= 20


def test_training_is_deterministic(corpus):
    cfg = TrainConfig(steps=5, seed=1, **SMALL)
    (ra, _), (rb, _) = train_base(corpus, cfg), train_base(corpus, cfg)
    assert [h[1] for h in ra.history] == [h[1] for h in rb.history]
    for pa, pb in zip(ra.model.parameters(), rb.model.parameters()):
        assert torch.equal(pa, pb)


def test_overfit_small_corpus():
    torch.manual_seed(0)
    samples = gen_dataset(8, 16, seed=0)
    cfg = TrainConfig(steps=2000, batch_size=8, T=20, seed=0)
    result, _ = train_base(samples, cfg, net_cfg=NetConfig(T=20))
    losses = np.array([h[1] for h in result.history])
    assert losses[-100:].mean() < 0.05 * losses[0]


def test_controlnet_starts_at_base_loss_and_leaves_base_untouched(corpus):
    cfg = TrainConfig(steps=3, seed=2, **SMALL)
    base_result, norm = train_base(corpus, cfg)
    base = base_result.model
    before = {k: v.clone() for k, v in base.state_dict().items()}
    data = stack_dataset(corpus)
    batch = next(iterate_batches(data, norm, cfg, controls=True, stream=2))
    with torch.no_grad():
        base_loss = torch.mean((base(batch["x_t"], batch["t"], batch["labels"]) - batch["x0"]) ** 2).item()
    cn = train_controlnet(corpus, base, norm, cfg)
    assert cn.history[0][1] == base_loss
    for k, v in base.state_dict().items():
        assert v.numpy().tobytes() == before[k].numpy().tobytes()


def test_divergence_raises_with_diagnostics(corpus):
    cfg = TrainConfig(steps=3, **SMALL)
    data = stack_dataset(corpus)
    data["features"] = data["features"].copy()
    data["features"][0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train_base(data, dataclasses.replace(cfg, batch_size=64))
    assert info.value.step == 0


def test_sgd_option_runs(corpus):
    result, _ = train_base(corpus, TrainConfig(steps=2, optimizer="sgd", learning_rate=1e-2, **SMALL))
    assert len(result.history) == 2


def test_dataset_cache(tmp_path, corpus):
    save_dataset(tmp_path / "d.npz", corpus, 3, 32)
    data, meta = load_dataset(tmp_path / "d.npz")
    assert meta == {"version": 1, "seed": 3, "n_frames": 32, "n_samples": 20}
    assert np.array_equal(data["motion"], stack_dataset(corpus)["motion"])
    first = cached_dataset(tmp_path, 4, 16, 0)
    files = list(tmp_path.glob("synthetic_*.npz"))
    assert len(files) == 1 and "s0" in files[0].name
    assert np.array_equal(cached_dataset(tmp_path, 4, 16, 0)["features"], first["features"])


def test_write_log(tmp_path):
    write_log(tmp_path / "log.csv", [(0, 1.5, 0.25), (1, 0.5, 0.5)])
    rows = (tmp_path / "log.csv").read_text().splitlines()
    assert rows == ["step,loss,wall_time", "0,1.5,0.250", "1,0.5,0.500"]
