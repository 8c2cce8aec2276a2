"""Plan a circular path and sample along it with and without guidance.

Uses the given checkpoint directory, else the desk-scale pair that the test
suite caches under .cache/, else trains a tiny pair on the spot (a few CPU
minutes; too small to follow the path well, guided or not).

    python demos/plan_and_generate.py [checkpoint_dir]
"""
import sys
from pathlib import Path

import numpy as np
import torch

from motionguide.generation import ModelBundle, default_guidance, generate, load_bundle
from motionguide.guidance import ControlSpec
from motionguide.metrics import avg_err, foot_skating_ratio
from motionguide.planner import CurveSpec, plan
from motionguide.synthetic import gen_dataset
from motionguide.training import TrainConfig, train_base, train_controlnet

torch.set_num_threads(1)

cached = sorted((Path(__file__).resolve().parents[1] / ".cache").glob("desk-*/controlnet.ckpt"))
if len(sys.argv) > 1:
    bundle = load_bundle(sys.argv[1])
elif cached:
    print("using", cached[-1].parent)
    bundle = load_bundle(cached[-1].parent)
else:
    data = gen_dataset(300, 64, seed=0)
    cfg = TrainConfig(steps=600, seed=0)
    def show(step, loss):
        if step % 200 == 0:
            print(f"base step {step}: {loss:.3f}")

    base, norm = train_base(data, cfg, log=show)
    cn = train_controlnet(data, base.model, norm, TrainConfig(steps=300, seed=0))
    bundle = ModelBundle(base.model, norm, cn.model)

# a quarter of a 2 m radius circle from the origin (about 1 m/s, walking pace);
# constrain every 8th frame
traj = plan(CurveSpec("circle", {"center": (2.0, 0.0), "radius": 2.0, "start_angle": -np.pi / 2, "turns": 0.25},
                      n_frames=64))
mask = np.zeros(64, bool)
mask[::8] = True
spec = ControlSpec.from_arrays(traj, mask, np.zeros((64, 22, 3)), np.zeros(64, bool))

specs = [spec] * 4
_, plain = generate(bundle, specs, seed=0, conditions=[2] * 4)
_, guided = generate(bundle, specs, seed=0, guidance=default_guidance(T=bundle.T), conditions=[2] * 4)

for name, m in (("unguided", plain), ("guided", guided)):
    print(f"{name:9s} avg_err {avg_err(m, specs):.3f} m   foot skating {foot_skating_ratio(list(m)):.3f}")
