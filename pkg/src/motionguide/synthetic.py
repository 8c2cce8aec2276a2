"""Procedural walking corpus.

Each sequence walks the root along a planned curve at constant speed. Feet
are placed on footprints beside the path and held still for the whole stance
phase, so the ground-truth motion is essentially free of foot skating. Knees
come from two-bone IK; arms swing against the legs (or wave, for class 4).
"""
from dataclasses import dataclass, field

import numpy as np

from .kinematics import FPS, REST_POSE, SKELETON, canonicalize_motion, from_global, rotate_yaw_xz
from .planner import CurveSpec, plan

CLASS_NAMES = ("walk-line", "walk-circle", "walk-s-curve", "walk-arc", "wave-while-walking")
N_CLASSES = len(CLASS_NAMES)
_PAD = 30
_STANCE = 0.6


@dataclass
class SyntheticSample:
    motion: np.ndarray      # (N, 22, 3), canonical gauge
    features: np.ndarray    # (N, 67)
    label: int
    params: dict = field(default_factory=dict)


def _root_curve(label, length, rng, n):
    heading = rng.uniform(-np.pi, np.pi)
    turn = rng.choice([-1.0, 1.0])
    if label in (0, 4):
        end = length * np.array([np.sin(heading), np.cos(heading)])
        return CurveSpec("line", {"start": (0.0, 0.0), "end": tuple(end)}, n_frames=n)
    if label == 1:
        r = rng.uniform(1.5, 3.5)
        return CurveSpec("circle", {"center": (0.0, 0.0), "radius": r, "start_angle": heading,
                                    "turns": turn * length / (2 * np.pi * r)}, n_frames=n)
    if label == 2:
        r = rng.uniform(2.0, 4.0)
        return CurveSpec("s_curve", {"start": (0.0, 0.0), "heading": heading, "radius": r,
                                     "sweep": length / (2 * r)}, n_frames=n)
    r = rng.uniform(4.0, 10.0)
    return CurveSpec("arc", {"center": (0.0, 0.0), "radius": r, "start_angle": heading,
                             "end_angle": heading + turn * length / r}, n_frames=n)


def _smootherstep(u):
    return u * u * u * (u * (6 * u - 15) + 10)


def _rot(theta, v):
    """Rotate body-frame vectors ``(..., 3)`` by per-frame yaw ``theta``."""
    x, z = rotate_yaw_xz(v[..., 0], v[..., 2], theta)
    return np.stack([x, v[..., 1], z], axis=-1)


def _feet(root_xz, heading, side, cycle, phase, scale):
    """Ankle and toe trajectories for one foot, ``side`` = +1 (left) or -1 (right)."""
    m = len(root_xz)
    frames = np.arange(m, dtype=float)
    centers = np.arange(phase - 2 * cycle, m + 2 * cycle, cycle)
    cx = np.interp(centers, frames, root_xz[:, 0])
    cz = np.interp(centers, frames, root_xz[:, 1])
    ch = np.interp(centers, frames, np.unwrap(heading))
    lat_x, lat_z = rotate_yaw_xz(1.0, 0.0, ch)
    plant = np.stack([cx + side * 0.1 * scale * lat_x, cz + side * 0.1 * scale * lat_z], axis=-1)

    half = 0.5 * _STANCE * cycle
    k = np.clip(np.searchsorted(centers, frames, side="right") - 1, 0, len(centers) - 2)
    since = frames - centers[k]
    swing_len = cycle - 2 * half
    u = np.clip((since - half) / swing_len, 0.0, 1.0)
    stance_next = since > cycle - half
    k_next = np.where(stance_next, k + 1, k)
    u = np.where(stance_next, 0.0, u)
    # the toe clears the contact height before it starts to travel
    s = _smootherstep(np.clip((u - 0.2) / 0.6, 0.0, 1.0))[:, None]
    xz = plant[k_next] * (1 - s) + plant[np.minimum(k_next + 1, len(plant) - 1)] * s
    yaw = ch[k_next] * (1 - s[:, 0]) + ch[np.minimum(k_next + 1, len(ch) - 1)] * s[:, 0]
    lift = 0.1 * scale * np.sin(np.pi * u)

    ankle = np.stack([xz[:, 0], 0.08 * scale + lift, xz[:, 1]], axis=-1)
    fwd_x, fwd_z = rotate_yaw_xz(0.0, 1.0, yaw)
    toe = np.stack([xz[:, 0] + 0.13 * scale * fwd_x, 0.02 * scale + lift, xz[:, 1] + 0.13 * scale * fwd_z], axis=-1)
    return ankle, toe


def _knee(hip, ankle, l1, l2, forward):
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    u = d_vec / d
    dc = np.clip(d, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-4)
    a = (l1 ** 2 - l2 ** 2 + dc ** 2) / (2 * dc)
    h = np.sqrt(np.maximum(l1 ** 2 - a ** 2, 0.0))
    bend = forward - (forward * u).sum(-1, keepdims=True) * u
    bend /= np.linalg.norm(bend, axis=-1, keepdims=True)
    return hip + a * u + h * bend


def synth_motion(label, n_frames, rng):
    """One canonical global motion ``(n_frames, 22, 3)`` and its parameters."""
    m = n_frames + 2 * _PAD
    speed = rng.uniform(0.5, 0.9) if label == 4 else rng.uniform(0.8, 1.3)
    step = speed / FPS
    curve = _root_curve(label, (m - 1) * step, rng, m)
    root_xz = plan(curve)[:, [0, 2]]
    tangent = np.gradient(root_xz, axis=0)
    heading = np.arctan2(tangent[:, 0], tangent[:, 1])

    scale = rng.uniform(0.92, 1.08)
    # cadence follows speed so the stride stays within leg reach
    step_length = rng.uniform(0.38, 0.45) * scale
    cycle = 2 * step_length / step
    phase = rng.uniform(0.0, cycle)
    frames = np.arange(m)
    gait = 2 * np.pi * (frames - phase) / cycle
    rest = (REST_POSE - REST_POSE[0]) * scale
    root_y = (REST_POSE[0, 1] - 0.07) * scale + 0.01 * np.cos(2 * gait)

    g = np.empty((m, 22, 3))
    g[:, 0] = np.stack([root_xz[:, 0], root_y, root_xz[:, 1]], axis=-1)
    torso = [1, 2, 3, 6, 9, 12, 13, 14, 15, 16, 17]
    g[:, torso] = g[:, :1] + _rot(heading[:, None], np.broadcast_to(rest[torso], (m, len(torso), 3)))

    forward = _rot(heading, np.broadcast_to(np.array([0.0, 0.0, 1.0]), (m, 3)))
    thigh = np.linalg.norm(rest[4] - rest[1])
    shin = np.linalg.norm(rest[7] - rest[4])
    for side, hip, knee, ankle, toe, foot_phase in ((1, 1, 4, 7, 10, phase), (-1, 2, 5, 8, 11, phase + cycle / 2)):
        g[:, ankle], g[:, toe] = _feet(root_xz, heading, side, cycle, foot_phase, scale)
        g[:, knee] = _knee(g[:, hip], g[:, ankle], thigh, shin, forward)

    upper = np.linalg.norm(rest[18] - rest[16])
    fore = np.linalg.norm(rest[20] - rest[18])
    for side, shoulder, elbow, wrist in ((1, 16, 18, 20), (-1, 17, 19, 21)):
        # each arm swings with the opposite leg
        psi = -side * 0.35 * np.sin(gait)
        if label == 4 and side == -1:
            wave = 0.6 * np.sin(2 * np.pi * 2.0 * frames / FPS + rng.uniform(0, 2 * np.pi))
            e_local = np.broadcast_to(np.array([-0.6, 0.55, 0.2]) / np.linalg.norm([-0.6, 0.55, 0.2]) * upper, (m, 3))
            w_local = np.stack([-fore * np.sin(wave), fore * np.cos(wave), np.zeros(m)], axis=-1)
        else:
            e_local = np.stack([np.zeros(m), -upper * np.cos(psi), upper * np.sin(psi)], axis=-1)
            w_local = np.stack([np.zeros(m), -fore * np.cos(psi + 0.3), fore * np.sin(psi + 0.3)], axis=-1)
        g[:, elbow] = g[:, shoulder] + _rot(heading, e_local)
        g[:, wrist] = g[:, elbow] + _rot(heading, w_local)

    motion = canonicalize_motion(g[_PAD:_PAD + n_frames])
    params = {"class": CLASS_NAMES[label], "speed": speed, "scale": scale, "cycle": cycle,
              "phase": phase, "curve": curve.to_dict()}
    return motion, params


def gen_dataset(n_samples, n_frames, seed):
    """Deterministic corpus; sample ``i`` depends only on ``(seed, i)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 16 <= n_frames <= 196:
        raise ValueError("n_frames must lie in [16, 196]")
    out = []
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        label = i % N_CLASSES
        motion, params = synth_motion(label, n_frames, rng)
        out.append(SyntheticSample(motion=motion, features=from_global(motion, SKELETON), label=label, params=params))
    return out


def stack_dataset(samples):
    return {
        "features": np.stack([s.features for s in samples]),
        "motion": np.stack([s.motion for s in samples]),
        "labels": np.array([s.label for s in samples], dtype=np.int64),
    }
