"""Bring externally estimated 3D poses into the canonical 22-joint frame.

Pipeline: pick the 22 canonical joints out of the estimator's joint list
(:func:`map_joints`), flip from the camera convention (y down, z forward)
to Y-up (:func:`axis_transform`), then translate the pelvis over the origin
and optionally onto the floor (:func:`canonicalize`).
"""
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError, MappingError
from .kinematics import JOINT_NAMES, N_JOINTS


@dataclass(frozen=True)
class RawPoseFile:
    joints: np.ndarray              # (K, 3) in the estimator's convention
    names: Optional[tuple] = None
    source: Optional[str] = None

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise InvalidInputError(f"raw joints must be (K, 3), got {j.shape}")
        if not np.isfinite(j).all():
            raise InvalidInputError("raw joints must be finite")
        if self.names is not None and len(self.names) != len(j):
            raise InvalidInputError("names list length differs from the joint count")
        object.__setattr__(self, "joints", j)

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        unknown = set(d) - {"source", "joints", "names"}
        if unknown:
            raise InvalidInputError(f"unknown pose file fields: {sorted(unknown)}")
        names = tuple(d["names"]) if d.get("names") is not None else None
        return cls(np.asarray(d["joints"], dtype=np.float64), names, d.get("source"))


@dataclass(frozen=True)
class JointMapTable:
    """For each canonical joint, the raw index (int) or raw joint name (str) to take."""

    entries: tuple
    name: str = "custom"

    def __post_init__(self):
        if len(self.entries) != N_JOINTS:
            raise MappingError(f"joint map needs {N_JOINTS} entries, got {len(self.entries)}")
        if len(set(self.entries)) != N_JOINTS:
            raise MappingError("joint map entries must be unique")

    def indices(self, raw):
        out = []
        for e in self.entries:
            if isinstance(e, str):
                if raw.names is None or e not in raw.names:
                    raise MappingError(f"raw pose has no joint named {e!r}")
                out.append(raw.names.index(e))
            else:
                if not 0 <= int(e) < len(raw.joints):
                    raise MappingError(f"raw index {e} out of range for {len(raw.joints)} joints")
                out.append(int(e))
        return out

    @classmethod
    def from_dict(cls, d):
        by_name = {item["canonical"]: item["raw"] for item in d["joints"]}
        missing = [n for n in JOINT_NAMES if n not in by_name]
        if missing or len(by_name) != len(d["joints"]):
            raise MappingError(f"joint map must name each canonical joint once; missing {missing}")
        return cls(tuple(by_name[n] for n in JOINT_NAMES), d.get("name", "custom"))

    @classmethod
    def load(cls, path=None):
        """Read a table file; with no path, the packaged default."""
        if path is None:
            text = resources.files("motionguide").joinpath("data/joint_map_default.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))


def map_joints(raw, table):
    """Canonical ``(22, 3)`` joints; joint ``i`` is raw joint ``table[i]``."""
    return raw.joints[table.indices(raw)].copy()


def axis_transform(joints):
    """(x, y, z) -> (x, -y, -z): camera axes to Y-up, facing the viewer."""
    j = np.asarray(joints, dtype=np.float64)
    if not np.isfinite(j).all():
        raise InvalidInputError("joints must be finite")
    return j * np.array([1.0, -1.0, -1.0])


def canonicalize(joints, floor_contact=True):
    """Translate so the pelvis sits over the origin; with ``floor_contact`` the lowest joint touches y = 0."""
    j = np.asarray(joints, dtype=np.float64)
    if j.shape != (N_JOINTS, 3) or not np.isfinite(j).all():
        raise InvalidInputError("expected finite (22, 3) joints")
    shift = np.array([j[0, 0], j[:, 1].min() if floor_contact else 0.0, j[0, 2]])
    return j - shift


def import_pose(raw, table=None, floor_contact=True):
    table = table or JointMapTable.load()
    return canonicalize(axis_transform(map_joints(raw, table)), floor_contact)
