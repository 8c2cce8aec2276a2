import json

import numpy as np
import pytest

from motionguide.errors import EmptyControlError, InvalidInputError
from motionguide.guidance import ControlSpec
from motionguide.kinematics import REST_POSE, rotate_global_yaw
from motionguide.metrics import (avg_err, evaluate, evaluate_sweep, foot_skating_ratio, loc_err, pose_dist,
                                 traj_err)

from metric_oracles import (FEET, bf_avg_err, bf_loc_err, bf_pose_dist, bf_skating, bf_traj_err,
                            random_instance, spec_for, still)


def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        gen, specs = random_instance(rng)
        assert traj_err(gen, specs) == bf_traj_err(gen, specs)
        assert loc_err(gen, specs) == bf_loc_err(gen, specs)
        assert abs(avg_err(gen, specs) - bf_avg_err(gen, specs)) < 1e-12
        assert abs(foot_skating_ratio(gen) - bf_skating(gen)) < 1e-12
        assert abs(pose_dist(gen, specs) - bf_pose_dist(gen, specs)) < 1e-12


def test_error_counting_examples():
    m = still(10)
    perfect = spec_for(m, [0, 5])
    assert traj_err([m] * 4, [perfect] * 4) == 0.0
    assert loc_err([m], [perfect]) == 0.0 and avg_err([m], [perfect]) == 0.0

    off = m.copy()
    off[5, 0, 0] += 0.6
    assert traj_err([off, m, m, m], [perfect] * 4) == 0.25

    frames = list(range(10))
    bad = m.copy()
    bad[[2, 7], 0, 2] += 0.8
    assert loc_err([bad], [spec_for(m, frames)]) == pytest.approx(0.2, abs=0)

    two = m.copy()
    two[0, 0, 0] += 0.1
    two[5, 0, 0] += 0.3
    assert avg_err([two], [perfect]) == pytest.approx(0.2, abs=1e-15)


def test_threshold_is_strict():
    m = still(3)
    edge = m.copy()
    edge[1, 0] = m[1, 0] + np.array([0.3, 0.0, 0.4])
    spec = spec_for(m, [1])
    assert np.linalg.norm(edge[1, 0] - m[1, 0]) == 0.5
    assert traj_err([edge], [spec]) == 0.0 and loc_err([edge], [spec]) == 0.0


def test_skating_examples():
    m = still(20)
    assert foot_skating_ratio([m]) == 0.0
    slide = m.copy()
    slide[:, list(FEET), 1] = 0.02
    slide[:, list(FEET), 0] += 0.03 * np.arange(20)[:, None]
    assert foot_skating_ratio([slide]) == 1.0
    assert foot_skating_ratio([m[:1]]) == 0.0
    lifted = slide.copy()
    lifted[::2, list(FEET), 1] = 0.2
    assert foot_skating_ratio([lifted]) == 0.0


def test_pose_dist_examples_and_invariances():
    rng = np.random.default_rng(1)
    ref = REST_POSE[None] + rng.normal(0, 0.05, (6, 22, 3))
    spec = spec_for(ref, [0, 3], [1, 2, 4])
    assert pose_dist([ref], [spec]) == 0.0
    assert pose_dist([ref + np.array([5.0, 0.0, 5.0])], [spec]) < 1e-13
    moved = ref + rng.normal(0, 1.0, (6, 1, 3))
    assert pose_dist([moved], [spec]) < 1e-13

    one = ref.copy()
    one[2, 7] += np.array([0.0, 0.22, 0.0])
    only = spec_for(ref, [0], [2])
    assert pose_dist([one], [only]) == pytest.approx(0.01, abs=1e-15)

    gen = ref + rng.normal(0, 0.1, ref.shape)
    yaw = 0.7
    rot_gen = np.stack([rotate_global_yaw(p, yaw, np.zeros(3)) for p in gen])
    rot_ref = np.stack([rotate_global_yaw(p, yaw, np.zeros(3)) for p in ref])
    assert abs(pose_dist([rot_gen], [spec_for(rot_ref, [0, 3], [1, 2, 4])]) - pose_dist([gen], [spec])) < 1e-12


def test_avg_err_is_monotone_in_each_error():
    rng = np.random.default_rng(2)
    gen, specs = random_instance(rng)
    base = avg_err(gen, specs)
    for i, s in enumerate(specs):
        f = int(np.flatnonzero(s.traj_mask)[0])
        g = [x.copy() for x in gen]
        direction = g[i][f, 0] - s.traj[f]
        norm = np.linalg.norm(direction)
        g[i][f, 0] += 0.1 * (direction / norm if norm > 0 else np.array([1.0, 0, 0]))
        assert avg_err(g, specs) >= base


def test_validation():
    m = still(4)
    with pytest.raises(InvalidInputError):
        traj_err([], [])
    with pytest.raises(InvalidInputError):
        avg_err([m], [])
    with pytest.raises(InvalidInputError):
        avg_err([m], [spec_for(still(5), [0])])
    with pytest.raises(EmptyControlError):
        avg_err([m], [ControlSpec.empty(4)])
    with pytest.raises(EmptyControlError):
        pose_dist([m], [ControlSpec.empty(4)])


def test_report_serialization():
    rng = np.random.default_rng(3)
    groups = {}
    for level in (1, 2, 5, 49, 196):
        gen, specs = random_instance(rng)
        groups[level] = (gen, specs)
    rep = evaluate_sweep(groups)
    rows = rep.to_csv().strip().split("\n")
    assert rows[0].split(",")[0] == "sparsity" and len(rows) == 7 and rows[-1].startswith("all,")
    assert rep.avg_err == pytest.approx(np.mean([r.avg_err for r in rep.per_sparsity.values()]), abs=1e-15)
    d = json.loads(rep.to_json())
    assert set(d["per_sparsity"]) == {"1", "2", "5", "49", "196"}
    for r in [rep, *rep.per_sparsity.values()]:
        for k in ("traj_err_50cm", "loc_err_50cm", "foot_skating_ratio"):
            assert 0.0 <= getattr(r, k) <= 1.0
        assert r.avg_err >= 0 and r.pose_dist >= 0
    single = evaluate(*groups[5])
    assert single.row() == rep.per_sparsity[5].row()
