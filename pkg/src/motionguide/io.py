"""File formats: motions, control specs, poses, checkpoints, BVH and overlay CSV."""
import csv
import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidInputError
from .guidance import ControlSpec
from .kinematics import FPS, JOINT_NAMES, N_JOINTS, PARENTS, REST_POSE

MOTION_FORMAT = "motionguide.motion"
SPEC_FORMAT = "motionguide.control"
CHECKPOINT_MAGIC = b"MGCK"
CHECKPOINT_VERSION = 1


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise InvalidInputError(f"{path}: not valid JSON ({err})") from None


def _finite_array(values, shape_tail, what):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[-len(shape_tail):] != shape_tail or not np.isfinite(arr).all():
        raise InvalidInputError(f"{what} must be finite with trailing shape {shape_tail}")
    return arr


# -- motions ------------------------------------------------------------------

def motion_to_dict(motion, meta=None):
    m = _finite_array(motion, (N_JOINTS, 3), "motion")
    return {"format": MOTION_FORMAT, "version": 1, "fps": FPS, "joint_names": list(JOINT_NAMES),
            "n_frames": int(m.shape[0]), "frames": m.tolist(), "meta": meta or {}}


def save_motion(path, motion, meta=None):
    _dump(path, motion_to_dict(motion, meta))


def load_motion(path):
    d = _load(path)
    if d.get("format") != MOTION_FORMAT:
        raise InvalidInputError(f"{path}: not a motion file")
    m = _finite_array(d["frames"], (N_JOINTS, 3), "motion")
    if m.ndim != 3:
        raise InvalidInputError(f"{path}: frames must be (N, 22, 3)")
    return m


def save_frame_pose(path, pose, source=None):
    p = _finite_array(pose, (N_JOINTS, 3), "pose")
    _dump(path, {"format": "motionguide.pose", "joint_names": list(JOINT_NAMES), "joints": p.tolist(),
                 "source": source})


def load_frame_pose(path):
    d = _load(path)
    return _finite_array(d["joints"], (N_JOINTS, 3), "pose")


# -- control specs ------------------------------------------------------------

def spec_to_dict(spec):
    traj = [{"frame": int(f), "pos": spec.traj[f].tolist()} for f in np.flatnonzero(spec.traj_mask)]
    poses = [{"frame": int(f), "joints": spec.pose[f].tolist()} for f in np.flatnonzero(spec.pose_mask)]
    return {"format": SPEC_FORMAT, "version": 1, "n_frames": int(spec.n_frames), "traj": traj, "poses": poses}


def spec_from_dict(d):
    unknown = set(d) - {"format", "version", "n_frames", "traj", "poses", "condition"}
    if unknown:
        raise InvalidInputError(f"unknown control spec fields: {sorted(unknown)}")
    n = int(d["n_frames"])
    traj = np.zeros((n, 3))
    pose = np.zeros((n, N_JOINTS, 3))
    tmask = np.zeros(n, bool)
    pmask = np.zeros(n, bool)
    for item in d.get("traj", []):
        f = int(item["frame"])
        if not 0 <= f < n:
            raise InvalidInputError(f"trajectory frame {f} outside [0, {n})")
        traj[f] = _finite_array(item["pos"], (3,), "trajectory point")
        tmask[f] = True
    for item in d.get("poses", []):
        f = int(item["frame"])
        if not 0 <= f < n:
            raise InvalidInputError(f"pose frame {f} outside [0, {n})")
        pose[f] = _finite_array(item["joints"], (N_JOINTS, 3), "pose")
        pmask[f] = True
    return ControlSpec(traj, tmask, pose, pmask)


def save_spec(path, spec):
    _dump(path, spec_to_dict(spec))


def load_spec(path):
    d = _load(path)
    if d.get("format", SPEC_FORMAT) != SPEC_FORMAT:
        raise InvalidInputError(f"{path}: not a control spec file")
    return spec_from_dict(d)


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, tensors, meta=None):
    """Write named arrays in a fixed byte layout (same input -> same bytes).

    Layout: magic, u32 version, u32 header length, JSON header, raw
    little-endian array data in header order.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        value = tensors[name]
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path}: checkpoint version {version} unsupported")
    header = json.loads(raw[12:12 + hlen])
    base = 12 + hlen
    out = {}
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        out[e["name"]] = np.frombuffer(raw, dtype=dt, count=count, offset=start).reshape(e["shape"]).copy()
    return out, header["meta"]


def state_tensors(module, prefix):
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_state(module, tensors, prefix):
    sub = {k[len(prefix) + 1:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(prefix + ".")}
    module.load_state_dict(sub)
    return module


# -- exports ------------------------------------------------------------------

def bvh_text(motion, fps=FPS, scale=100.0):
    """Positions-only BVH: every joint carries translation channels, no rotations.

    Each joint's channels hold its offset from the parent in that frame, so a
    BVH reader reproduces the global positions exactly (units: cm by default).
    """
    m = _finite_array(motion, (N_JOINTS, 3), "motion") * scale
    children = {j: [c for c in range(1, N_JOINTS) if PARENTS[c] == j] for j in range(N_JOINTS)}
    rest = (REST_POSE - REST_POSE[0]) * scale
    lines = ["HIERARCHY"]

    def emit(j, depth):
        pad = "  " * depth
        head = "ROOT" if j == 0 else "JOINT"
        off = rest[j] - rest[PARENTS[j]] if j else np.zeros(3)
        lines.append(f"{pad}{head} {JOINT_NAMES[j]}")
        lines.append(f"{pad}{{")
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        lines.append(f"{pad}  CHANNELS 3 Xposition Yposition Zposition")
        for c in children[j]:
            emit(c, depth + 1)
        if not children[j]:
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(f"{pad}  }}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    order = []

    def walk(j):
        order.append(j)
        for c in children[j]:
            walk(c)

    walk(0)
    local = m.copy()
    local[:, 1:] = m[:, 1:] - m[:, list(PARENTS[1:])]
    lines += ["MOTION", f"Frames: {len(m)}", f"Frame Time: {1.0 / fps:.6f}"]
    for frame in local:
        lines.append(" ".join(f"{v:.6f}" for j in order for v in frame[j]))
    return "\n".join(lines) + "\n"


def overlay_csv(motion, spec):
    """Generated root path beside the constraint trajectory, one row per frame."""
    m = np.asarray(motion, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "gen_x", "gen_z", "ref_x", "ref_z", "masked"])
    for f in range(len(m)):
        masked = bool(spec.traj_mask[f])
        ref = (repr(float(spec.traj[f, 0])), repr(float(spec.traj[f, 2]))) if masked else ("", "")
        w.writerow([f, repr(float(m[f, 0, 0])), repr(float(m[f, 0, 2])), *ref, int(masked)])
    return buf.getvalue()
