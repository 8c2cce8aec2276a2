"""Analytic guidance gradient vs. central differences over a random case matrix."""
import time

import numpy as np

from .guidance import ControlSpec, fd_gradient, loss_gradient
from .kinematics import FEATURE_DIM, REST_POSE, to_global

DEFAULT_SPARSITIES = (1, 2, 5, 49, 196)
REL_TOL = 1e-4
# entries smaller than this are compared on an absolute scale of FLOOR * REL_TOL
FLOOR = 1e-8


def random_case(rng, n_frames, sparsity, target_noise=0.3):
    """Plausible features near the rest pose and perturbed ground-truth targets."""
    n = n_frames
    x = np.zeros((n, FEATURE_DIM))
    x[:, 0] = rng.normal(0.0, 0.05, n)
    x[:, 1:3] = rng.normal(0.0, 0.03, (n, 2))
    x[:, 2] += 0.05
    x[:, 3] = 0.9 + rng.normal(0.0, 0.02, n)
    x[:, 4:] = (REST_POSE[1:] - REST_POSE[0]).reshape(-1) + rng.normal(0.0, 0.05, (n, FEATURE_DIM - 4))
    g = to_global(x)
    target = g + rng.normal(0.0, target_noise, g.shape)
    tmask = np.zeros(n, bool)
    tmask[rng.choice(n, sparsity, replace=False)] = True
    pmask = np.zeros(n, bool)
    pmask[rng.choice(n, sparsity, replace=False)] = True
    return x, ControlSpec.from_arrays(target[:, 0], tmask, target, pmask)


def relative_error(analytic, numeric, floor=FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def check_case(x, spec, h=1e-5, gradient_fn=None):
    gradient_fn = gradient_fn or loss_gradient
    analytic = np.asarray(gradient_fn(x, spec, None))
    numeric = fd_gradient(x, spec, h=h)
    rel = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return float(rel.max()), (int(worst[0]), int(worst[1]))


def run_gradcheck(seed=0, cases=20, sparsities=DEFAULT_SPARSITIES, n_frames=196, h=1e-5, tol=REL_TOL,
                  gradient_fn=None):
    """Returns a JSON-ready report; ``report["passed"]`` is the overall verdict.

    ``gradient_fn(x, spec, normalizer)`` replaces the analytic gradient under test.
    """
    start = time.perf_counter()
    rows = []
    for sparsity in sparsities:
        level = min(int(sparsity), n_frames)
        for case in range(cases):
            rng = np.random.default_rng([seed, level, case])
            x, spec = random_case(rng, n_frames, level)
            err, (frame, channel) = check_case(x, spec, h, gradient_fn)
            rows.append({"sparsity": level, "case": case, "max_rel_err": err,
                         "worst_frame": frame, "worst_channel": channel, "passed": err < tol})
    worst = max(rows, key=lambda r: r["max_rel_err"])
    return {
        "passed": all(r["passed"] for r in rows),
        "tolerance": tol,
        "h": h,
        "seed": seed,
        "n_frames": n_frames,
        "max_rel_err": worst["max_rel_err"],
        "worst": {k: worst[k] for k in ("sparsity", "case", "worst_frame", "worst_channel")},
        "seconds": time.perf_counter() - start,
        "cases": rows,
    }
