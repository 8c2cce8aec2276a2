"""Guidance gradient vs. finite differences, then a few guided steps on one motion.

    python demos/gradient_check.py
"""
import numpy as np

from motionguide.gradcheck import random_case, relative_error
from motionguide.guidance import GuidanceConfig, fd_gradient, guidance_terms, loss_gradient, perturb

rng = np.random.default_rng(0)
x, spec = random_case(rng, n_frames=48, sparsity=5)

analytic = loss_gradient(x, spec)
numeric = fd_gradient(x, spec)
print("max relative error vs finite differences: %.2e" % relative_error(analytic, numeric).max())

# the three root-velocity channels are 3 of 67 but move every later frame
per_channel = np.abs(analytic).sum(axis=0)
print("gradient mass in yaw / vx / vz channels: %.1f%%" % (100 * per_channel[:3].sum() / per_channel.sum()))

cfg = GuidanceConfig(tau=2e-3, steps_per_denoise=1)
for step in range(6):
    lt, lp, alpha = guidance_terms(x, spec)
    print(f"step {step}: traj loss {float(lt):.4f}  pose loss {float(lp):.4f}  alpha {float(alpha):.3f}")
    x = perturb(x, spec, cfg)
