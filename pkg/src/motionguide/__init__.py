"""Trajectory and keyframe-pose guided motion diffusion.

Motions are 22-joint skeletons at 20 fps. A small transformer denoiser is
steered toward pelvis trajectories and full-body keyframe poses twice over:
a ControlNet branch conditions the network on the constraints, and at every
denoising step the noisy sample is nudged down the gradient of an analytic
constraint loss.
"""
__version__ = "0.1.0"

from .errors import (CompositionError, DegeneratePoseError, EmptyControlError, InvalidInputError, MappingError,
                     MotionGuideError, NoConstraintError, SpecError, TrainingDivergedError)
from .kinematics import (FEATURE_DIM, FPS, JOINT_NAMES, N_JOINTS, SKELETON, Skeleton, canonicalize_motion,
                         from_global, to_global)
from .guidance import (ControlSpec, GuidanceConfig, Normalizer, align_pose, combined_alpha, combined_loss,
                       fd_gradient, loss_gradient, perturb, pose_loss, traj_loss)
from .diffusion import SampleConfig, forward_noise, make_schedule, posterior_step, sample
from .networks import MotionControlNet, MotionDenoiser, NetConfig, controlled_denoise, denoise
from .planner import CurveSpec, compose, plan
from .metrics import EvalReport, avg_err, foot_skating_ratio, loc_err, pose_dist, traj_err
from .pose_import import JointMapTable, RawPoseFile, axis_transform, canonicalize, map_joints
from .training import TrainConfig, augment_rotation, gen_dataset, sample_control, train_base, train_controlnet
