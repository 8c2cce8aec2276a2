"""Transformer-encoder x0 denoiser and the Motion ControlNet branch."""
import copy
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError
from .kinematics import FEATURE_DIM, N_JOINTS


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 128
    n_classes: int = 5
    T: int = 100

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InvalidInputError("d_model must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)


def sinusoidal_encoding(n, d, dtype=torch.float32):
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    enc = torch.zeros(n, d, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(pos * freq)
    enc[:, 1::2] = torch.cos(pos * freq)
    return enc.to(dtype)


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, d_model, n_heads, ff_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, ff_dim), nn.GELU(), nn.Linear(ff_dim, d_model))

    def forward(self, h):
        a = self.norm1(h)
        h = h + self.attn(a, a, a, need_weights=False)[0]
        return h + self.ff(self.norm2(h))


class MotionDenoiser(nn.Module):
    """Predicts the clean feature sequence from ``x_t``, the step and a class label."""

    def __init__(self, cfg=NetConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.input_proj = nn.Linear(FEATURE_DIM, d)
        self.time_embed = nn.Embedding(cfg.T + 1, d)
        self.cond_embed = nn.Embedding(cfg.n_classes, d)
        self.blocks = nn.ModuleList(EncoderBlock(d, cfg.n_heads, cfg.ff_dim) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(d)
        self.output_proj = nn.Linear(d, FEATURE_DIM)

    def embed(self, x_t, t, cond, positions=None):
        """Token sequence ``[time, condition, frame_1..frame_N]`` before the blocks."""
        if x_t.dim() != 3 or x_t.shape[-1] != FEATURE_DIM:
            raise InvalidInputError(f"expected (B, N, {FEATURE_DIM}) input, got {tuple(x_t.shape)}")
        b, n, _ = x_t.shape
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(b)
        if int(t.min()) < 1 or int(t.max()) > self.cfg.T:
            raise InvalidInputError(f"step outside [1, {self.cfg.T}]")
        cond = torch.as_tensor(cond, dtype=torch.long).reshape(-1).expand(b)
        if positions is None:
            pe = sinusoidal_encoding(n, self.cfg.d_model, x_t.dtype)
        else:
            pe = sinusoidal_encoding(int(max(positions)) + 1, self.cfg.d_model, x_t.dtype)[list(positions)]
        frames = self.input_proj(x_t) + pe
        prefix = torch.stack([self.time_embed(t), self.cond_embed(cond)], dim=1)
        return torch.cat([prefix, frames], dim=1)

    def head(self, h):
        return self.output_proj(self.final_norm(h[:, 2:]))

    def forward(self, x_t, t, cond, injections=None, positions=None):
        h = self.embed(x_t, t, cond, positions)
        for i, block in enumerate(self.blocks):
            if injections is not None:
                h = h + injections[i]
            h = block(h)
        return self.head(h)


class MotionControlNet(nn.Module):
    """Trainable copy of the denoiser blocks driven by fused trajectory/pose features.

    Per-layer outputs pass through zero-initialised projections, so a fresh
    ControlNet leaves the base denoiser's output unchanged.
    """

    def __init__(self, base):
        super().__init__()
        d = base.cfg.d_model
        self.blocks = copy.deepcopy(base.blocks)
        self.traj_encoder = nn.Sequential(nn.Linear(3 + 1, d), nn.SiLU(), nn.Linear(d, d))
        self.pose_encoder = nn.Sequential(nn.Linear(3 * N_JOINTS + 1, d), nn.SiLU(), nn.Linear(d, d))
        self.fusion = nn.Linear(2 * d, d)
        self.zero_proj = nn.ModuleList(nn.Linear(d, d) for _ in base.blocks)
        for proj in self.zero_proj:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def encode_controls(self, traj, traj_mask, pose, pose_mask):
        """Fused per-frame features ``(B, N, d_model)`` from masked constraints.

        Poses are pelvis-centred before encoding; absolute placement reaches
        the network only through the trajectory branch.
        """
        tm = traj_mask.to(traj.dtype)[..., None]
        pm = pose_mask.to(pose.dtype)[..., None]
        local = (pose - pose[..., :1, :]).flatten(-2) * pm
        t_feat = self.traj_encoder(torch.cat([traj * tm, tm], dim=-1))
        p_feat = self.pose_encoder(torch.cat([local, pm], dim=-1))
        return self.fusion(torch.cat([t_feat, p_feat], dim=-1))

    def injections(self, base_tokens, control_features):
        h = base_tokens + torch.cat([torch.zeros_like(base_tokens[:, :2]), control_features], dim=1)
        out = []
        for block, proj in zip(self.blocks, self.zero_proj):
            h = block(h)
            out.append(proj(h))
        return out


def control_tensors(spec, dtype=torch.float32, batch=None):
    """ControlSpec -> (traj, traj_mask, pose, pose_mask) tensors with a batch axis."""
    traj = torch.as_tensor(np.asarray(spec.traj), dtype=dtype)
    tmask = torch.as_tensor(np.asarray(spec.traj_mask))
    pose = torch.as_tensor(np.asarray(spec.pose), dtype=dtype)
    pmask = torch.as_tensor(np.asarray(spec.pose_mask))
    if tmask.dim() == 1:
        traj, tmask, pose, pmask = traj[None], tmask[None], pose[None], pmask[None]
    if batch is not None and tmask.shape[0] != batch:
        traj, tmask = traj.expand(batch, *traj.shape[1:]), tmask.expand(batch, *tmask.shape[1:])
        pose, pmask = pose.expand(batch, *pose.shape[1:]), pmask.expand(batch, *pmask.shape[1:])
    return traj, tmask, pose, pmask


def denoise(x_t, t, cond, base):
    return base(x_t, t, cond)


def controlled_denoise(x_t, t, cond, spec, base, controlnet):
    """Base denoiser with ControlNet residuals added at every block input."""
    dtype = x_t.dtype
    tokens = base.embed(x_t, t, cond)
    feats = controlnet.encode_controls(*control_tensors(spec, dtype, batch=x_t.shape[0]))
    inj = controlnet.injections(tokens, feats)
    h = tokens
    for block, extra in zip(base.blocks, inj):
        h = block(h + extra)
    return base.head(h)


class Denoiser:
    """Sampler-facing wrapper: numpy float64 in/out, optional ControlNet."""

    def __init__(self, base, controlnet=None):
        self.base = base.eval()
        self.controlnet = controlnet.eval() if controlnet is not None else None
        self.dtype = next(base.parameters()).dtype

    @torch.no_grad()
    def __call__(self, x_t, t, labels, control=None):
        x = torch.as_tensor(np.asarray(x_t), dtype=self.dtype)
        cond = torch.as_tensor(labels)
        if self.controlnet is None or control is None:
            out = self.base(x, t, cond)
        else:
            out = controlled_denoise(x, t, cond, control, self.base, self.controlnet)
        return out.double().numpy()
