"""Control-accuracy metrics and the foot-skating realism proxy.

All functions take a list of global motions ``(N, 22, 3)`` and (where
relevant) the aligned list of ControlSpecs. Threshold comparisons are strict.
"""
import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyControlError, InvalidInputError
from .kinematics import SKELETON

ERR_THRESHOLD = 0.5
SKATE_DISPLACEMENT = 0.025
SKATE_HEIGHT = 0.05
METRIC_NAMES = ("traj_err_50cm", "loc_err_50cm", "avg_err", "foot_skating_ratio", "pose_dist")


def _pairs(gen, specs):
    gen = [np.asarray(g, dtype=np.float64) for g in gen]
    if not gen:
        raise InvalidInputError("no sequences to evaluate")
    if len(gen) != len(specs):
        raise InvalidInputError(f"{len(gen)} motions but {len(specs)} control specs")
    for g, s in zip(gen, specs):
        if g.shape[0] != s.n_frames:
            raise InvalidInputError("motion and control spec disagree on the frame count")
    return list(zip(gen, specs))


def _root_errors(g, spec):
    frames = np.flatnonzero(spec.traj_mask)
    return np.linalg.norm(g[frames, 0] - spec.traj[frames], axis=-1)


def traj_err(gen, specs, threshold=ERR_THRESHOLD):
    """Fraction of sequences with at least one controlled root error above ``threshold``."""
    pairs = _pairs(gen, specs)
    return sum(bool((_root_errors(g, s) > threshold).any()) for g, s in pairs) / len(pairs)


def loc_err(gen, specs, threshold=ERR_THRESHOLD):
    """Fraction of controlled frames whose root error exceeds ``threshold``."""
    errs = np.concatenate([_root_errors(g, s) for g, s in _pairs(gen, specs)])
    if errs.size == 0:
        raise EmptyControlError("no trajectory-controlled frames")
    return float((errs > threshold).mean())


def avg_err(gen, specs):
    """Mean root error over every controlled frame."""
    errs = np.concatenate([_root_errors(g, s) for g, s in _pairs(gen, specs)])
    if errs.size == 0:
        raise EmptyControlError("no trajectory-controlled frames")
    return float(errs.mean())


def foot_skating_ratio(gen, skeleton=SKELETON, displacement=SKATE_DISPLACEMENT, height=SKATE_HEIGHT):
    """Share of (frame, foot) events where a grounded foot slides.

    An event is frame ``n >= 1`` for one foot; it skates when the foot's
    horizontal displacement since frame ``n - 1`` exceeds ``displacement``
    while its height is below ``height`` in both frames.
    """
    if isinstance(gen, np.ndarray) and gen.ndim == 3:
        gen = [gen]
    skating = events = 0
    for g in gen:
        feet = np.asarray(g, dtype=np.float64)[:, list(skeleton.foot_indices)]
        if len(feet) < 2:
            continue
        step = np.linalg.norm(feet[1:, :, [0, 2]] - feet[:-1, :, [0, 2]], axis=-1)
        low = (feet[1:, :, 1] < height) & (feet[:-1, :, 1] < height)
        skating += int(((step > displacement) & low).sum())
        events += step.size
    return skating / events if events else 0.0


def pose_dist(gen, specs):
    """Mean pelvis-centred joint distance at pose-controlled frames."""
    per_frame = []
    for g, s in _pairs(gen, specs):
        frames = np.flatnonzero(s.pose_mask)
        a = g[frames] - g[frames, :1]
        b = s.pose[frames] - s.pose[frames, :1]
        per_frame.append(np.linalg.norm(a - b, axis=-1).mean(axis=-1))
    per_frame = np.concatenate(per_frame)
    if per_frame.size == 0:
        raise EmptyControlError("no pose-controlled frames")
    return float(per_frame.mean())


@dataclass
class EvalReport:
    traj_err_50cm: float
    loc_err_50cm: float
    avg_err: float
    foot_skating_ratio: float
    pose_dist: float
    n_sequences: int
    per_sparsity: dict = field(default_factory=dict)   # level -> EvalReport

    def row(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self):
        out = asdict(self)
        out["per_sparsity"] = {str(k): v.to_dict() for k, v in self.per_sparsity.items()}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        """One row per sparsity level plus the aggregate (or just the aggregate)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sparsity", *METRIC_NAMES, "n_sequences"])
        for level, rep in self.per_sparsity.items():
            w.writerow([level, *(repr(v) for v in rep.row().values()), rep.n_sequences])
        w.writerow(["all", *(repr(v) for v in self.row().values()), self.n_sequences])
        return buf.getvalue()


def evaluate(gen, specs, threshold=ERR_THRESHOLD):
    return EvalReport(
        traj_err_50cm=traj_err(gen, specs, threshold),
        loc_err_50cm=loc_err(gen, specs, threshold),
        avg_err=avg_err(gen, specs),
        foot_skating_ratio=foot_skating_ratio(gen),
        pose_dist=pose_dist(gen, specs),
        n_sequences=len(gen),
    )


def evaluate_sweep(groups, threshold=ERR_THRESHOLD):
    """``groups``: {sparsity: (motions, specs)}. Aggregate = mean of the level rows."""
    if not groups:
        raise InvalidInputError("no sparsity groups")
    rows = {level: evaluate(g, s, threshold) for level, (g, s) in sorted(groups.items())}
    means = {k: float(np.mean([r.row()[k] for r in rows.values()])) for k in METRIC_NAMES}
    return EvalReport(**means, n_sequences=sum(r.n_sequences for r in rows.values()), per_sparsity=rows)
