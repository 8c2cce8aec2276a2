"""Noise schedules, forward noising, the x0-prediction posterior and the sampling loop."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import InvalidInputError
from .guidance import GuidanceConfig, perturb
from .kinematics import FEATURE_DIM

PAPER_T = 1000
DESK_T = 100


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables indexed by step ``t`` in ``1..T`` (stored at ``t - 1``)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "cosine"

    @property
    def T(self):
        return len(self.beta)

    def alpha_bar_prev(self, t):
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def check_step(self, t):
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"step {t} outside [1, {self.T}]")


def make_schedule(T, kind="cosine", cosine_offset=0.008):
    if T < 1:
        raise InvalidInputError("a schedule needs T >= 1 steps")
    if kind == "linear":
        beta = np.linspace(1e-4, 0.02, T)
    elif kind == "cosine":
        s = np.arange(T + 1) / T
        f = np.cos((s + cosine_offset) / (1 + cosine_offset) * np.pi / 2) ** 2
        beta = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise InvalidInputError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha), kind=kind)


def forward_noise(x0, t, noise, sched):
    """Closed-form q(x_t | x0)."""
    sched.check_step(t)
    if np.shape(x0) != np.shape(noise):
        raise InvalidInputError(f"noise shape {np.shape(noise)} does not match x0 shape {np.shape(x0)}")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_coefficients(t, sched):
    sched.check_step(t)
    ab = sched.alpha_bar[t - 1]
    ab_prev = sched.alpha_bar_prev(t)
    beta = sched.beta[t - 1]
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = np.sqrt(sched.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0, ct


def posterior_step(x0_pred, x_t, t, sched, noise=None):
    """One reverse step from the predicted clean motion. t = 1 returns the mean."""
    c0, ct = posterior_coefficients(t, sched)
    mean = c0 * x0_pred + ct * x_t
    if t == 1 or noise is None:
        return mean
    return mean + np.sqrt(1.0 - sched.alpha[t - 1]) * noise


def sequence_rng(seed, index):
    """Counter-based generator for sequence ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass
class SampleConfig:
    seed: int = 0
    T: int = PAPER_T
    schedule: str = "cosine"
    guidance: Optional[GuidanceConfig] = None
    condition: int = 0
    n_frames: int = 196
    batch_size: int = 1
    conditions: Optional[list] = field(default=None)
    stream_offset: int = 0      # sequence i draws from stream (seed, stream_offset + i)

    def __post_init__(self):
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")
        if not 1 <= self.n_frames <= 196:
            raise InvalidInputError("n_frames must lie in [1, 196]")


def sample(denoiser, cfg, control=None, normalizer=None, schedule=None, gradient_fn=None, trace=None):
    """Ancestral sampling with optional guidance perturbation of x_t.

    ``denoiser(x_t, t, labels, control)`` returns the clean-motion estimate for a
    ``(B, N, 67)`` float64 array. ``control`` is a (batched) ControlSpec or None;
    when guidance is enabled it drives the perturbation, and it is passed to the
    denoiser either way. ``normalizer`` maps the model space to feature space for
    the guidance loss. Returns ``(B, N, 67)`` in model space.
    """
    sched = schedule or make_schedule(cfg.T, cfg.schedule)
    if sched.T != cfg.T:
        raise InvalidInputError("schedule length disagrees with cfg.T")
    b, n = cfg.batch_size, cfg.n_frames
    labels = np.asarray(cfg.conditions if cfg.conditions is not None else [cfg.condition] * b, dtype=np.int64)
    if labels.shape != (b,):
        raise InvalidInputError("need one condition label per sequence")
    if control is not None and (control.n_frames != n or control.batch_shape not in ((b,), ())):
        raise InvalidInputError("control spec does not match the requested batch / frame count")

    rngs = [sequence_rng(cfg.seed, cfg.stream_offset + i) for i in range(b)]
    x = np.stack([r.standard_normal((n, FEATURE_DIM)) for r in rngs])
    guided = cfg.guidance is not None and control is not None
    for t in range(sched.T, 0, -1):
        if guided and cfg.guidance.active(t):
            x = perturb(x, control, cfg.guidance, normalizer=normalizer, gradient_fn=gradient_fn)
        x0 = denoiser(x, t, labels, control)
        noise = np.stack([r.standard_normal((n, FEATURE_DIM)) for r in rngs]) if t > 1 else None
        x = posterior_step(x0, x, t, sched, noise)
        if trace is not None:
            trace.append((t, x0))
    return x
