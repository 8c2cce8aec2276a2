"""Control sampling, rotation augmentation and the two training phases.

Phase one fits the x0-predicting denoiser with the plain diffusion MSE. Phase
two freezes it and fits a ControlNet branch on randomly sparsified
ground-truth trajectory and pose constraints.
"""
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import DESK_T, make_schedule
from .errors import InvalidInputError, TrainingDivergedError
from .guidance import ControlSpec, Normalizer, stack_specs
from .kinematics import rotate_global_yaw
from .networks import MotionControlNet, MotionDenoiser, NetConfig, controlled_denoise
from .synthetic import N_CLASSES, SyntheticSample, gen_dataset, stack_dataset

SPARSITY_LEVELS = (1, 2, 5, 49, 196)
DATASET_VERSION = 1
# full-scale GPU training rate; far too slow for the desk step budget
FULL_SCALE_LR = 1e-5
DESK_LR = 1e-3

__all__ = [
    "SPARSITY_LEVELS", "RotationAug", "TrainConfig", "TrainResult", "SyntheticSample",
    "gen_dataset", "sample_control", "augment_rotation", "fit_normalizer", "iterate_batches",
    "train_base", "train_controlnet", "save_dataset", "load_dataset", "cached_dataset", "write_log",
]


@dataclass(frozen=True)
class RotationAug:
    enabled: bool = True
    max_yaw: float = math.pi / 6


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = DESK_LR
    steps: int = 2000
    epochs: int = None       # when set, overrides steps: epochs * ceil(n_samples / batch_size)
    seed: int = 0
    rotation_aug: RotationAug = field(default_factory=RotationAug)
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    T: int = DESK_T
    schedule: str = "cosine"

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1 or not self.learning_rate > 0:
            raise InvalidInputError("batch_size, steps and learning_rate must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise InvalidInputError("epochs must be positive")
        if self.rotation_aug.max_yaw < 0:
            raise InvalidInputError("max_yaw must be non-negative")
        if self.optimizer not in ("adamw", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if not self.grad_clip > 0:
            raise InvalidInputError("grad_clip must be positive")

    def total_steps(self, n_samples):
        if self.epochs is None:
            return self.steps
        return self.epochs * math.ceil(n_samples / self.batch_size)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("rotation_aug"), dict):
            d["rotation_aug"] = RotationAug(**d["rotation_aug"])
        return cls(**d)


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list           # (step, loss, wall_time)


# -- controls ---------------------------------------------------------------

def sample_control(sample, sparsity, rng):
    """Ground-truth constraints on ``sparsity`` random frames, drawn separately for each mask.

    ``sample`` is a SyntheticSample or a global motion array ``(N, 22, 3)``.
    """
    motion = np.asarray(sample.motion if isinstance(sample, SyntheticSample) else sample, dtype=np.float64)
    n = motion.shape[0]
    if not 1 <= sparsity <= n:
        raise InvalidInputError(f"sparsity {sparsity} outside [1, {n}]")
    traj_mask = np.zeros(n, bool)
    traj_mask[rng.choice(n, size=sparsity, replace=False)] = True
    pose_mask = np.zeros(n, bool)
    pose_mask[rng.choice(n, size=sparsity, replace=False)] = True
    return ControlSpec.from_arrays(motion[:, 0], traj_mask, motion, pose_mask)


def augment_rotation(spec, rng, max_yaw):
    """Spin every constrained pose about its own pelvis by an independent yaw in [-max_yaw, max_yaw]."""
    if max_yaw < 0:
        raise InvalidInputError("max_yaw must be non-negative")
    if max_yaw == 0:
        return spec
    frames = np.flatnonzero(spec.pose_mask)
    angles = rng.uniform(-max_yaw, max_yaw, size=len(frames))
    pose = spec.pose.copy()
    for f, a in zip(frames, angles):
        pose[f] = rotate_global_yaw(pose[f], a, pose[f, 0])
    return ControlSpec(spec.traj, spec.traj_mask, pose, spec.pose_mask)


# -- data -------------------------------------------------------------------

def _as_arrays(dataset):
    if isinstance(dataset, dict):
        return dataset
    if not dataset:
        raise InvalidInputError("dataset is empty")
    return stack_dataset(dataset)


def fit_normalizer(features, floor=1e-3):
    flat = np.asarray(features, dtype=np.float64).reshape(-1, features.shape[-1])
    return Normalizer(flat.mean(axis=0), np.maximum(flat.std(axis=0), floor))


def iterate_batches(data, normalizer, cfg, controls=False, stream=0):
    """Endless deterministic stream of training batches.

    Yields dicts with ``x0``, ``x_t`` (float32 tensors, model space), ``t``,
    ``labels`` and, when ``controls`` is set, a stacked ControlSpec.
    """
    rng = np.random.default_rng([cfg.seed, stream])
    sched = make_schedule(cfg.T, cfg.schedule)
    feats = normalizer.normalize(data["features"])
    n_seq, n_frames = feats.shape[:2]
    levels = [min(s, n_frames) for s in SPARSITY_LEVELS]
    while True:
        idx = rng.integers(0, n_seq, size=cfg.batch_size)
        t = rng.integers(1, cfg.T + 1, size=cfg.batch_size)
        noise = rng.standard_normal((cfg.batch_size, n_frames, feats.shape[-1]))
        ab = sched.alpha_bar[t - 1][:, None, None]
        x0 = feats[idx]
        batch = {
            "x0": torch.as_tensor(x0, dtype=torch.float32),
            "x_t": torch.as_tensor(np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise, dtype=torch.float32),
            "t": torch.as_tensor(t),
            "labels": torch.as_tensor(data["labels"][idx]),
        }
        if controls:
            specs = []
            for i in idx:
                spec = sample_control(data["motion"][i], levels[rng.integers(len(levels))], rng)
                if cfg.rotation_aug.enabled:
                    spec = augment_rotation(spec, rng, cfg.rotation_aug.max_yaw)
                specs.append(spec)
            batch["control"] = stack_specs(specs)
        yield batch


def _optimizer(params, cfg):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.learning_rate)
    return torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def _fit(model, params, loss_fn, batches, cfg, n_steps, log=None):
    opt = _optimizer(params, cfg)
    history = []
    start = time.perf_counter()
    for step in range(n_steps):
        batch = next(batches)
        loss = loss_fn(batch)
        value = loss.detach().item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value, [h[1] for h in history[-20:]])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        history.append((step, value, time.perf_counter() - start))
        if log is not None:
            log(step, value)
    return history


def train_base(dataset, cfg=TrainConfig(), net_cfg=None, normalizer=None, log=None):
    """Fit the unconditioned-on-controls denoiser. Returns ``(TrainResult, Normalizer)``."""
    data = _as_arrays(dataset)
    net_cfg = net_cfg or NetConfig(n_classes=N_CLASSES, T=cfg.T)
    if net_cfg.T != cfg.T:
        raise InvalidInputError("network and training disagree on T")
    normalizer = normalizer or fit_normalizer(data["features"])
    torch.manual_seed(cfg.seed)
    model = MotionDenoiser(net_cfg).train()

    def loss_fn(b):
        return torch.mean((model(b["x_t"], b["t"], b["labels"]) - b["x0"]) ** 2)

    batches = iterate_batches(data, normalizer, cfg, stream=1)
    history = _fit(model, list(model.parameters()), loss_fn, batches, cfg, cfg.total_steps(len(data["labels"])), log)
    return TrainResult(model.eval(), history), normalizer


def train_controlnet(dataset, base, normalizer, cfg=TrainConfig(), log=None):
    """Fit a ControlNet on top of the frozen ``base``."""
    data = _as_arrays(dataset)
    base.eval()
    for p in base.parameters():
        p.requires_grad_(False)
    torch.manual_seed(cfg.seed + 1)
    net = MotionControlNet(base).train()

    def loss_fn(b):
        pred = controlled_denoise(b["x_t"], b["t"], b["labels"], b["control"], base, net)
        return torch.mean((pred - b["x0"]) ** 2)

    batches = iterate_batches(data, normalizer, cfg, controls=True, stream=2)
    history = _fit(net, list(net.parameters()), loss_fn, batches, cfg, cfg.total_steps(len(data["labels"])), log)
    return TrainResult(net.eval(), history)


# -- files ------------------------------------------------------------------

def save_dataset(path, samples, seed, n_frames):
    arrays = stack_dataset(samples)
    meta = {"version": DATASET_VERSION, "seed": int(seed), "n_frames": int(n_frames), "n_samples": len(samples)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_dataset(path):
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("version") != DATASET_VERSION:
            raise InvalidInputError(f"dataset cache version {meta.get('version')} != {DATASET_VERSION}")
        return {k: z[k] for k in ("features", "motion", "labels")}, meta


def cached_dataset(cache_dir, n_samples, n_frames, seed):
    """Load the stacked corpus for these parameters, generating and caching it if absent."""
    path = Path(cache_dir) / f"synthetic_v{DATASET_VERSION}_n{n_samples}_f{n_frames}_s{seed}.npz"
    if path.exists():
        return load_dataset(path)[0]
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = gen_dataset(n_samples, n_frames, seed)
    tmp = path.with_suffix(".tmp")
    save_dataset(tmp, samples, seed, n_frames)
    tmp.replace(path)
    return stack_dataset(samples)


def write_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "wall_time"])
        for step, loss, wall in history:
            w.writerow([step, repr(loss), f"{wall:.3f}"])
