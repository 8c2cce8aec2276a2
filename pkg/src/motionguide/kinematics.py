"""Skeleton definition and the root-relative <-> global motion transforms.

Feature layout per frame (67 values):

    [0]      root yaw velocity, rad/frame
    [1:3]    root linear velocity (x, z) in the root's yaw-aligned frame, m/frame
    [3]      root height y, m
    [4:67]   21 non-root joints relative to the root, yaw-aligned, m

Global frames are Y-up with the ground at y = 0. A yaw angle ``theta`` rotates
the local +z axis onto ``(sin theta, 0, cos theta)``. Frame 0 always has yaw 0
and root xz at the origin.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegeneratePoseError, InvalidInputError

FPS = 20
N_JOINTS = 22
FEATURE_DIM = 67
MAX_FRAMES = 196

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
PARENTS = (0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple = JOINT_NAMES
    parent_index: tuple = PARENTS
    root_index: int = 0
    left_hip: int = 1
    right_hip: int = 2
    left_foot: int = 10
    right_foot: int = 11

    def __post_init__(self):
        if len(self.joint_names) != N_JOINTS or len(self.parent_index) != N_JOINTS:
            raise InvalidInputError("skeleton must have exactly 22 joints")
        if self.root_index != 0 or self.parent_index[0] != 0:
            raise InvalidInputError("root must be joint 0 and be its own parent")
        for j in range(1, N_JOINTS):
            if not 0 <= self.parent_index[j] < j:
                raise InvalidInputError(f"joint {j} has parent {self.parent_index[j]}; parents must precede children")

    @property
    def joint_count(self):
        return len(self.joint_names)

    @property
    def foot_indices(self):
        return (self.left_foot, self.right_foot)

    def children(self, j):
        return [k for k in range(1, N_JOINTS) if self.parent_index[k] == j]


SKELETON = Skeleton()

# Neutral standing pose facing +z (left side of the body is +x).
REST_POSE = np.array([
    [0.00, 0.93, 0.00],    # pelvis
    [0.09, 0.85, 0.00],    # left_hip
    [-0.09, 0.85, 0.00],   # right_hip
    [0.00, 1.04, -0.01],   # spine1
    [0.10, 0.47, 0.01],    # left_knee
    [-0.10, 0.47, 0.01],   # right_knee
    [0.00, 1.17, -0.01],   # spine2
    [0.10, 0.08, -0.03],   # left_ankle
    [-0.10, 0.08, -0.03],  # right_ankle
    [0.00, 1.23, 0.00],    # spine3
    [0.11, 0.02, 0.10],    # left_foot
    [-0.11, 0.02, 0.10],   # right_foot
    [0.00, 1.44, -0.01],   # neck
    [0.07, 1.36, 0.00],    # left_collar
    [-0.07, 1.36, 0.00],   # right_collar
    [0.00, 1.58, 0.03],    # head
    [0.18, 1.38, -0.01],   # left_shoulder
    [-0.18, 1.38, -0.01],  # right_shoulder
    [0.20, 1.12, -0.02],   # left_elbow
    [-0.20, 1.12, -0.02],  # right_elbow
    [0.21, 0.88, 0.01],    # left_wrist
    [-0.21, 0.88, 0.01],   # right_wrist
])


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def _check_finite(x, name):
    finite = torch.isfinite(x).all() if isinstance(x, torch.Tensor) else np.isfinite(x).all()
    if not finite:
        raise InvalidInputError(f"{name} contains non-finite values")


def rotate_yaw_xz(x, z, theta):
    """Rotate horizontal components (x, z) by yaw ``theta`` (numpy or torch)."""
    lib = torch if isinstance(theta, torch.Tensor) else np
    c, s = lib.cos(theta), lib.sin(theta)
    return c * x + s * z, c * z - s * x


def _exclusive_cumsum(v):
    total = torch.cumsum(v, dim=-1)
    return torch.cat([torch.zeros_like(v[..., :1]), total[..., :-1]], dim=-1)


def to_global(features):
    """Integrate root-relative features into global joint positions.

    Accepts ``(..., N, 67)`` numpy arrays or torch tensors and returns
    ``(..., N, 22, 3)`` of the same kind. Torch inputs keep their autograd graph.
    """
    x, was_numpy = _as_tensor(features)
    if x.shape[-1] != FEATURE_DIM or x.dim() < 2 or x.shape[-2] < 1:
        raise InvalidInputError(f"expected (..., N, {FEATURE_DIM}) features, got {tuple(x.shape)}")
    _check_finite(x.detach(), "features")

    yaw = _exclusive_cumsum(x[..., 0])
    vx, vz = rotate_yaw_xz(x[..., 1], x[..., 2], yaw)
    root_x = _exclusive_cumsum(vx)
    root_z = _exclusive_cumsum(vz)
    root = torch.stack([root_x, x[..., 3], root_z], dim=-1)

    local = x[..., 4:].reshape(*x.shape[:-1], N_JOINTS - 1, 3)
    ox, oz = rotate_yaw_xz(local[..., 0], local[..., 2], yaw[..., None])
    offsets = torch.stack([ox, local[..., 1], oz], dim=-1)
    joints = torch.cat([root[..., None, :], root[..., None, :] + offsets], dim=-2)
    return joints.numpy() if was_numpy else joints


def heading_angles(motion, skeleton=SKELETON):
    """Per-frame facing yaw from the hip axis, with previous-frame fallback."""
    g = np.asarray(motion, dtype=np.float64)
    across = g[:, skeleton.right_hip] - g[:, skeleton.left_hip]
    fx, fz = across[:, 2], -across[:, 0]
    degenerate = np.hypot(fx, fz) < 1e-9
    if degenerate[0]:
        raise DegeneratePoseError("hip axis of frame 0 has no horizontal extent; heading undefined")
    theta = np.arctan2(fx, fz)
    for n in np.flatnonzero(degenerate):
        theta[n] = theta[n - 1]
    return theta


def from_global(motion, skeleton=SKELETON):
    """Convert ``(N, 22, 3)`` global positions into ``(N, 67)`` features.

    The inverse of :func:`to_global` up to the gauge: features carry no
    absolute horizontal position or initial heading, so the round trip
    reproduces ``motion`` exactly when its frame-0 root sits at x = z = 0.
    """
    g = np.asarray(motion, dtype=np.float64)
    if g.ndim != 3 or g.shape[1:] != (N_JOINTS, 3) or g.shape[0] < 1:
        raise InvalidInputError(f"expected (N, {N_JOINTS}, 3) motion, got {g.shape}")
    _check_finite(g, "motion")
    n = g.shape[0]

    theta = heading_angles(g, skeleton)
    omega = np.zeros(n)
    if n > 1:
        omega[:-1] = np.angle(np.exp(1j * np.diff(theta)))
        omega[-1] = omega[-2]
    # same integration as to_global so the rotation angles match bit for bit
    yaw = _exclusive_cumsum(torch.from_numpy(omega)).numpy()

    root = g[:, 0]
    vel = np.zeros((n, 2))
    if n > 1:
        step = np.diff(root, axis=0)
        vel[:-1, 0], vel[:-1, 1] = rotate_yaw_xz(step[:, 0], step[:, 2], -yaw[:-1])
        vel[-1] = vel[-2]

    rel = g[:, 1:] - root[:, None]
    lx, lz = rotate_yaw_xz(rel[..., 0], rel[..., 2], -yaw[:, None])
    local = np.stack([lx, rel[..., 1], lz], axis=-1)

    feats = np.empty((n, FEATURE_DIM))
    feats[:, 0] = omega
    feats[:, 1:3] = vel
    feats[:, 3] = root[:, 1]
    feats[:, 4:] = local.reshape(n, -1)
    return feats


def canonicalize_motion(motion, skeleton=SKELETON):
    """Move frame-0 root to x = z = 0 and turn it to face +z."""
    g = np.asarray(motion, dtype=np.float64)
    theta0 = heading_angles(g[:1], skeleton)[0]
    start = np.array([g[0, 0, 0], 0.0, g[0, 0, 2]])
    return rotate_global_yaw(g - start, -theta0, np.zeros(3))


def pelvis_center(pose):
    """Subtract the pelvis from every joint of ``(..., 22, 3)`` poses."""
    p = np.asarray(pose, dtype=np.float64)
    return p - p[..., :1, :]


def rotate_global_yaw(points, angle, center):
    """Rotate ``(..., 3)`` points about the vertical axis through ``center``."""
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    _check_finite(np.asarray(angle, dtype=np.float64), "angle")
    if np.all(np.asarray(angle) == 0):
        return p.copy()
    d = p - c
    rx, rz = rotate_yaw_xz(d[..., 0], d[..., 2], np.asarray(angle, dtype=np.float64))
    out = np.stack([rx, d[..., 1], rz], axis=-1)
    return out + c


def validate_features(features):
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != FEATURE_DIM or not 1 <= x.shape[0] <= MAX_FRAMES:
        raise InvalidInputError(f"expected (N, {FEATURE_DIM}) features with 1 <= N <= {MAX_FRAMES}, got {x.shape}")
    _check_finite(x, "features")
    return x


def validate_motion(motion):
    g = np.asarray(motion)
    if g.ndim != 3 or g.shape[1:] != (N_JOINTS, 3):
        raise InvalidInputError(f"expected (N, {N_JOINTS}, 3) motion, got {g.shape}")
    _check_finite(g, "motion")
    return g
