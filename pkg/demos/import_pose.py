"""Bring a single-frame pose from a camera-space estimator into the motion frame.

Estimators commonly report y down and z into the scene; the import flips both,
reorders joints through a mapping table and puts the pelvis over the origin
with the lowest joint on the floor.

    python demos/import_pose.py
"""
import numpy as np

from motionguide.kinematics import JOINT_NAMES, REST_POSE
from motionguide.pose_import import JointMapTable, RawPoseFile, axis_transform, import_pose

# fake estimator output: the rest pose in camera axes, 2 m in front of the lens,
# with two extra joints and the body joints in reverse order
rng = np.random.default_rng(1)
camera = axis_transform(REST_POSE) + np.array([0.1, -0.3, 2.0])
raw = np.concatenate([camera[::-1], rng.normal(size=(2, 3))])
names = list(JOINT_NAMES[::-1]) + ["nose", "left_eye"]

pose = import_pose(RawPoseFile(raw, tuple(names)), JointMapTable(tuple(JOINT_NAMES)))

print("pelvis:", np.round(pose[0], 4))
print("lowest joint height:", pose[:, 1].min())
# the result is the rest pose up to a translation
print("max deviation from rest pose shape: %.1e" % np.abs((pose - pose[0]) - (REST_POSE - REST_POSE[0])).max())
