import json

import numpy as np
import pytest

from motionguide.errors import InvalidInputError, MappingError
from motionguide.kinematics import JOINT_NAMES, REST_POSE
from motionguide.pose_import import (JointMapTable, RawPoseFile, axis_transform, canonicalize, import_pose,
                                     map_joints)


def pairwise(j):
    return np.linalg.norm(j[:, None] - j[None], axis=-1)


def test_identity_prefix_passthrough():
    raw = RawPoseFile(np.random.default_rng(0).normal(size=(22, 3)))
    table = JointMapTable.load()
    assert table.name == "smpl-body-prefix"
    assert np.array_equal(map_joints(raw, table), raw.joints)


def test_permuted_table_and_wide_input():
    rng = np.random.default_rng(1)
    raw = RawPoseFile(rng.normal(size=(64, 3)))
    perm = rng.permutation(64)[:22]
    out = map_joints(raw, JointMapTable(tuple(int(i) for i in perm)))
    assert out.shape == (22, 3)
    assert np.array_equal(out, raw.joints[perm])


def test_mapping_by_name():
    names = tuple(f"j{i}" for i in range(30))
    raw = RawPoseFile(np.arange(90, dtype=float).reshape(30, 3), names)
    table = JointMapTable(tuple(f"j{29 - i}" for i in range(22)))
    assert np.array_equal(map_joints(raw, table), raw.joints[29:7:-1])
    with pytest.raises(MappingError):
        map_joints(RawPoseFile(raw.joints), table)


def test_mapping_errors():
    with pytest.raises(MappingError):
        JointMapTable(tuple(range(21)))
    with pytest.raises(MappingError):
        JointMapTable((0,) * 22)
    with pytest.raises(MappingError):
        map_joints(RawPoseFile(np.zeros((22, 3))), JointMapTable(tuple(range(1, 23))))
    with pytest.raises(MappingError):
        JointMapTable.from_dict({"joints": [{"canonical": "pelvis", "raw": 0}]})


def test_axis_transform():
    assert np.array_equal(axis_transform([[1.0, 2.0, 3.0]]), [[1.0, -2.0, -3.0]])
    j = np.random.default_rng(2).normal(size=(22, 3))
    assert np.array_equal(axis_transform(axis_transform(j)), j)
    assert np.array_equal(axis_transform(np.zeros((22, 3))), np.zeros((22, 3)))
    assert np.allclose(np.linalg.norm(axis_transform(j), axis=-1), np.linalg.norm(j, axis=-1), atol=0)
    with pytest.raises(InvalidInputError):
        axis_transform([[np.nan, 0, 0]])


def test_canonicalize():
    pose = REST_POSE - np.array([REST_POSE[0, 0], 0, REST_POSE[0, 2]])
    pose = pose - np.array([0, pose[:, 1].min(), 0])
    assert np.array_equal(canonicalize(pose), pose)
    floating = pose + np.array([0, 0.3, 0])
    assert np.allclose(canonicalize(floating), pose, atol=1e-15)
    moved = pose + np.array([1.5, 0.3, -2.0])
    assert np.array_equal(canonicalize(moved, floor_contact=False)[:, 1], moved[:, 1])
    assert np.max(np.abs(pairwise(canonicalize(moved)) - pairwise(moved))) < 1e-12
    out = canonicalize(moved)
    assert out[0, 0] == 0 and out[0, 2] == 0 and out[:, 1].min() == 0
    with pytest.raises(InvalidInputError):
        canonicalize(np.zeros((21, 3)))


def test_import_pose_end_to_end(tmp_path):
    rng = np.random.default_rng(3)
    canonical = REST_POSE + rng.normal(0, 0.01, (22, 3))
    camera = axis_transform(canonical) + np.array([0.4, -1.0, 3.0])
    raw_joints = np.concatenate([camera, rng.normal(size=(42, 3))])
    path = tmp_path / "pose.json"
    path.write_text(json.dumps({"source": "est", "joints": raw_joints.tolist()}))
    raw = RawPoseFile.load(path)
    out = import_pose(raw)
    assert np.max(np.abs(pairwise(out) - pairwise(canonical))) < 1e-12
    assert np.allclose(out[1:] - out[0], canonical[1:] - canonical[0], atol=1e-12)
    path.write_text(json.dumps({"joints": raw_joints.tolist(), "confidence": 1}))
    with pytest.raises(InvalidInputError):
        RawPoseFile.load(path)


def test_table_file_round_trip(tmp_path):
    d = {"name": "reversed", "joints": [{"canonical": n, "raw": 21 - i} for i, n in enumerate(JOINT_NAMES)]}
    (tmp_path / "map.json").write_text(json.dumps(d))
    table = JointMapTable.load(tmp_path / "map.json")
    assert table.name == "reversed" and table.entries == tuple(range(21, -1, -1))
