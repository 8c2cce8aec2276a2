"""Analytic trajectory/pose guidance losses and the gradient perturbation of x_t.

Every function accepts unbatched inputs (features ``(N, 67)``, one
:class:`ControlSpec`) or batched ones (``(B, N, 67)`` with a spec whose arrays
carry the same leading ``B``). Per-sample losses are independent, so the
gradient of their sum is the per-sample gradient.
"""
from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import EmptyControlError, InvalidInputError, NoConstraintError
from . import oracle
from .kinematics import N_JOINTS, to_global


@dataclass(frozen=True)
class ControlSpec:
    """Pelvis trajectory and keyframe pose constraints over ``n_frames``.

    Masked-off entries are ignored; they are zero-filled by the constructors.
    """

    traj: np.ndarray        # (..., N, 3)
    traj_mask: np.ndarray   # (..., N) bool
    pose: np.ndarray        # (..., N, 22, 3)
    pose_mask: np.ndarray   # (..., N) bool

    def __post_init__(self):
        n = self.traj_mask.shape[-1]
        if (self.traj.shape[-2:] != (n, 3) or self.pose.shape[-3:] != (n, N_JOINTS, 3)
                or self.pose_mask.shape[-1] != n):
            raise InvalidInputError("control arrays disagree on the frame count")
        for name in ("traj", "pose"):
            arr = getattr(self, name)
            mask = getattr(self, name + "_mask")
            if not np.isfinite(arr[mask]).all():
                raise InvalidInputError(f"controlled {name} entries must be finite")

    @property
    def n_frames(self):
        return self.traj_mask.shape[-1]

    @property
    def batch_shape(self):
        return self.traj_mask.shape[:-1]

    @classmethod
    def empty(cls, n_frames):
        return cls(np.zeros((n_frames, 3)), np.zeros(n_frames, bool),
                   np.zeros((n_frames, N_JOINTS, 3)), np.zeros(n_frames, bool))

    @classmethod
    def from_arrays(cls, traj, traj_mask, pose, pose_mask):
        traj_mask = np.asarray(traj_mask, dtype=bool)
        pose_mask = np.asarray(pose_mask, dtype=bool)
        traj = np.where(traj_mask[..., None], np.asarray(traj, dtype=np.float64), 0.0)
        pose = np.where(pose_mask[..., None, None], np.asarray(pose, dtype=np.float64), 0.0)
        return cls(traj, traj_mask, pose, pose_mask)

    def with_poses(self, pose):
        return replace(self, pose=np.where(self.pose_mask[..., None, None], pose, 0.0))


def stack_specs(specs):
    return ControlSpec(np.stack([s.traj for s in specs]), np.stack([s.traj_mask for s in specs]),
                       np.stack([s.pose for s in specs]), np.stack([s.pose_mask for s in specs]))


@dataclass(frozen=True)
class GuidanceConfig:
    tau: float = 0.01
    steps_per_denoise: int = 1
    apply_from_t: int = 1000
    apply_until_t: int = 1

    def __post_init__(self):
        if not self.tau >= 0:
            raise InvalidInputError("tau must be non-negative")
        if self.steps_per_denoise < 1:
            raise InvalidInputError("steps_per_denoise must be >= 1")
        if not 1 <= self.apply_until_t <= self.apply_from_t:
            raise InvalidInputError("guidance window must satisfy 1 <= apply_until_t <= apply_from_t")

    def active(self, t):
        return self.apply_until_t <= t <= self.apply_from_t


def _spec_tensors(spec, dtype):
    return (torch.as_tensor(spec.traj, dtype=dtype), torch.as_tensor(spec.traj_mask, dtype=dtype),
            torch.as_tensor(spec.pose, dtype=dtype), torch.as_tensor(spec.pose_mask, dtype=dtype))


def _safe_norm(v):
    # zero-length vectors get a zero (not NaN) gradient
    sq = (v * v).sum(dim=-1)
    nonzero = sq > 0
    return torch.where(nonzero, torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def _masked_mean(values, mask):
    count = mask.sum(dim=-1)
    return (values * mask).sum(dim=-1) / torch.clamp(count, min=1.0)


def _traj_loss(g, traj, traj_mask):
    err = _safe_norm(traj - g[..., 0, :])
    return _masked_mean(err, traj_mask)


def _aligned_poses(g, traj, traj_mask, pose):
    """Translate each constraint pose onto the trajectory point or the motion's root.

    The root slot is written with the anchor itself so it lands there bit for
    bit; without a trajectory point the heights pass through untouched.
    """
    pose_root, root = torch.broadcast_tensors(pose[..., 0, :], g[..., 0, :])
    flat = torch.stack([root[..., 0], pose_root[..., 1], root[..., 2]], dim=-1)
    anchor = torch.where(traj_mask[..., None] > 0, traj, flat)
    delta = anchor - pose_root
    return torch.cat([anchor[..., None, :], pose[..., 1:, :] + delta[..., None, :]], dim=-2)


def _pose_loss(g, traj, traj_mask, pose, pose_mask):
    aligned = _aligned_poses(g, traj, traj_mask, pose)
    diff = (aligned - g).flatten(-2)
    return _masked_mean(_safe_norm(diff), pose_mask)


def _require(mask, what):
    if not np.asarray(mask).any():
        raise EmptyControlError(f"{what} mask has no frames set")


def _scalar(t):
    return float(t) if t.dim() == 0 else t.detach().numpy()


def traj_loss(motion, spec):
    """Masked mean Euclidean distance between the root and the trajectory targets."""
    _require(spec.traj_mask, "trajectory")
    g = torch.as_tensor(np.asarray(motion, dtype=np.float64))
    traj, tmask, _, _ = _spec_tensors(spec, g.dtype)
    return _scalar(_traj_loss(g, traj, tmask))


def align_pose(n, motion, spec):
    """Constraint pose at frame ``n`` translated per the alignment rule."""
    if not spec.pose_mask[n]:
        raise NoConstraintError(f"frame {n} has no pose constraint")
    pose = np.asarray(spec.pose[n], dtype=np.float64)
    if spec.traj_mask[n]:
        anchor = np.asarray(spec.traj[n], dtype=np.float64)
    else:
        root = np.asarray(motion, dtype=np.float64)[n, 0]
        anchor = np.array([root[0], pose[0, 1], root[2]])
    out = pose + (anchor - pose[0])
    out[0] = anchor
    return out


def pose_loss(motion, spec):
    """Masked mean Frobenius distance between aligned constraint poses and the motion."""
    _require(spec.pose_mask, "pose")
    g = torch.as_tensor(np.asarray(motion, dtype=np.float64))
    return _scalar(_pose_loss(g, *_spec_tensors(spec, g.dtype)))


def combined_alpha(l_traj, l_pose):
    """Relative trajectory weight; 0.5 when both losses vanish (gradient is zero there)."""
    if l_traj < 0 or l_pose < 0:
        raise InvalidInputError("losses must be non-negative")
    total = l_traj + l_pose
    if total == 0:
        return 0.5
    return l_traj / total


def _alpha_tensor(lt, lp):
    total = lt + lp
    return torch.where(total > 0, lt / torch.where(total > 0, total, torch.ones_like(total)),
                       torch.full_like(total, 0.5))


class Normalizer:
    """Per-channel affine map between model space and feature space."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    def denormalize(self, z):
        if isinstance(z, torch.Tensor):
            return z * torch.as_tensor(self.std, dtype=z.dtype) + torch.as_tensor(self.mean, dtype=z.dtype)
        return z * self.std + self.mean

    def normalize(self, x):
        if isinstance(x, torch.Tensor):
            return (x - torch.as_tensor(self.mean, dtype=x.dtype)) / torch.as_tensor(self.std, dtype=x.dtype)
        return (x - self.mean) / self.std


def guidance_terms(x, spec, normalizer=None):
    """Per-sample (l_traj, l_pose, alpha) as float64 tensors for features ``x``."""
    z = torch.as_tensor(x, dtype=torch.float64)
    feats = normalizer.denormalize(z) if normalizer is not None else z
    g = to_global(feats)
    traj, tmask, pose, pmask = _spec_tensors(spec, torch.float64)
    lt = _traj_loss(g, traj, tmask)
    lp = _pose_loss(g, traj, tmask, pose, pmask)
    return lt, lp, _alpha_tensor(lt.detach(), lp.detach())


def combined_loss(x, spec, alpha=None, normalizer=None):
    """alpha * L_traj + (1 - alpha) * L_pose, summed over the batch.

    ``alpha`` defaults to the value computed from ``x`` itself.
    """
    lt, lp, a = guidance_terms(x, spec, normalizer)
    if alpha is not None:
        a = torch.as_tensor(alpha, dtype=torch.float64)
    return (a * lt + (1 - a) * lp).sum()


def _check_nonempty(spec):
    if not (np.asarray(spec.traj_mask).any() or np.asarray(spec.pose_mask).any()):
        raise EmptyControlError("control spec has neither trajectory nor pose constraints")


def loss_gradient(x, spec, normalizer=None):
    """Gradient of the weighted guidance loss w.r.t. every feature entry.

    alpha is evaluated at ``x`` and held constant. Returns an array shaped like
    ``x`` (numpy in, numpy out; tensors in, float64 tensor out).
    """
    _check_nonempty(spec)
    is_tensor = isinstance(x, torch.Tensor)
    z = torch.as_tensor(x, dtype=torch.float64).detach().clone().requires_grad_(True)
    lt, lp, a = guidance_terms(z, spec, normalizer)
    total = (a * lt + (1 - a) * lp).sum()
    (grad,) = torch.autograd.grad(total, z)
    return grad if is_tensor else grad.numpy()


def perturb(x_t, spec, cfg, normalizer=None, gradient_fn=None):
    """Apply ``x_t - tau * grad`` ``cfg.steps_per_denoise`` times."""
    gradient_fn = gradient_fn or loss_gradient
    x = x_t
    for _ in range(cfg.steps_per_denoise):
        x = x - cfg.tau * gradient_fn(x, spec, normalizer)
    return x


def fd_gradient(x, spec=None, h=1e-5, alpha=None, normalizer=None, indices=None, loss_fn=None, order=4):
    """Central-difference gradient of the combined guidance loss.

    ``order`` 4 uses the five-point stencil
    ``(8 [L(x+h) - L(x-h)] - [L(x+2h) - L(x-2h)]) / 12h``, order 2 the
    two-point one. The loss is evaluated by the compiled reference
    implementation in :mod:`motionguide.oracle`; ``alpha`` is frozen at its
    value at ``x`` as in :func:`loss_gradient`. ``indices`` restricts
    differencing to those flat entries (the rest are NaN). ``loss_fn(copies)
    -> values`` replaces the guidance loss entirely; copies are stacked along
    a new leading axis.
    """
    if not 1e-7 <= h <= 1e-3:
        raise InvalidInputError("step h must lie in [1e-7, 1e-3]")
    if order not in (2, 4):
        raise InvalidInputError("order must be 2 or 4")
    x0 = np.asarray(x, dtype=np.float64)
    todo = np.arange(x0.size) if indices is None else np.asarray(indices, dtype=np.int64)
    grad = np.full(x0.size, np.nan)

    if loss_fn is not None:
        flat = x0.reshape(-1)
        rows = np.arange(todo.size)
        steps = (h,) if order == 2 else (h, 2 * h)
        diffs = []
        for step in steps:
            plus = np.repeat(flat[None], todo.size, axis=0)
            minus = plus.copy()
            plus[rows, todo] += step
            minus[rows, todo] -= step
            vals = np.asarray(loss_fn(np.concatenate([plus, minus]).reshape(2 * todo.size, *x0.shape)))
            diffs.append(vals[:todo.size] - vals[todo.size:])
        grad[todo] = diffs[0] / (2 * h) if order == 2 else (8 * diffs[0] - diffs[1]) / (12 * h)
        return grad.reshape(x0.shape)

    if x0.ndim != 2 or spec.traj_mask.ndim != 1:
        raise InvalidInputError("fd_gradient on the guidance loss takes one unbatched case")
    if normalizer is not None:
        # chain through the affine map: dL/dz = dL/dx * std
        feats = normalizer.denormalize(x0)
        return fd_gradient(feats, spec, h, alpha, indices=todo, order=order) * normalizer.std
    if alpha is None:
        lt, lp = oracle.reference_losses(x0, spec)
        alpha = combined_alpha(lt, lp)
    grad[todo] = oracle.reference_fd(x0, spec, alpha, h, todo, order)
    return grad.reshape(x0.shape)
