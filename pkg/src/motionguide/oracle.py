"""Compiled reference evaluation of the guidance loss for finite differencing.

The guidance gradient is checked against central differences of this
implementation, which shares no code with the torch path. Differences of
nearly equal losses lose digits to rounding, so cumulative sums are carried
as (hi, lo) pairs, differences are formed before large magnitudes enter
(the root position cancels out of every local term), and the per-frame
terms are accumulated with Neumaier summation.

A perturbation of frame i cannot reach earlier frames, and only the three
root-velocity channels reach later ones, so each difference is taken over
that window alone: frames outside it would contribute identical terms to
both sides.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _two_sum_acc(hi, lo, v):
    t = hi + v
    if abs(hi) >= abs(v):
        lo += (hi - t) + v
    else:
        lo += (v - t) + hi
    return t, lo


@njit(cache=True)
def _scan(x, traj, traj_mask, pose, pose_mask, first, last, yh, yl, xh, xl, zh, zl):
    """Split sums of the trajectory and pose terms over frames ``first..last``.

    ``(yh, yl, xh, xl, zh, zl)`` is the heading / root state at the start of
    frame ``first``; the scan integrates forward from there.
    """
    lt_hi, lt_lo, lp_hi, lp_lo = 0.0, 0.0, 0.0, 0.0
    for f in range(first, last + 1):
        c0, s0 = math.cos(yh), math.sin(yh)
        c = c0 - s0 * yl
        s = s0 + c0 * yl
        if traj_mask[f]:
            dx = (traj[f, 0] - xh) - xl
            dy = traj[f, 1] - x[f, 3]
            dz = (traj[f, 2] - zh) - zl
            lt_hi, lt_lo = _two_sum_acc(lt_hi, lt_lo, math.sqrt(dx * dx + dy * dy + dz * dz))
        if pose_mask[f]:
            # (sx, sy, sz): aligned constraint root minus motion root
            if traj_mask[f]:
                # constraint pose pinned to the trajectory point
                sx = (traj[f, 0] - xh) - xl
                sy = traj[f, 1] - x[f, 3]
                sz = (traj[f, 2] - zh) - zl
            else:
                # constraint pose follows the motion's root horizontally
                sx = 0.0
                sy = pose[f, 0, 1] - x[f, 3]
                sz = 0.0
            acc = sx * sx + sy * sy + sz * sz
            for j in range(1, 22):
                ox = x[f, 4 + 3 * (j - 1)]
                oy = x[f, 5 + 3 * (j - 1)]
                oz = x[f, 6 + 3 * (j - 1)]
                dx = (pose[f, j, 0] - pose[f, 0, 0]) + sx - (c * ox + s * oz)
                dy = (pose[f, j, 1] - pose[f, 0, 1]) + sy - oy
                dz = (pose[f, j, 2] - pose[f, 0, 2]) + sz - (c * oz - s * ox)
                acc += dx * dx + dy * dy + dz * dz
            lp_hi, lp_lo = _two_sum_acc(lp_hi, lp_lo, math.sqrt(acc))
        xh, xl = _two_sum_acc(xh, xl, c * x[f, 1] + s * x[f, 2])
        zh, zl = _two_sum_acc(zh, zl, c * x[f, 2] - s * x[f, 1])
        yh, yl = _two_sum_acc(yh, yl, x[f, 0])
    return lt_hi, lt_lo, lp_hi, lp_lo


@njit(cache=True)
def _states(x):
    """Heading / root split sums at the start of every frame, shape (N, 6)."""
    n = x.shape[0]
    out = np.zeros((n, 6))
    yh, yl, xh, xl, zh, zl = 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    for f in range(n):
        out[f, 0], out[f, 1], out[f, 2], out[f, 3], out[f, 4], out[f, 5] = yh, yl, xh, xl, zh, zl
        c0, s0 = math.cos(yh), math.sin(yh)
        c = c0 - s0 * yl
        s = s0 + c0 * yl
        xh, xl = _two_sum_acc(xh, xl, c * x[f, 1] + s * x[f, 2])
        zh, zl = _two_sum_acc(zh, zl, c * x[f, 2] - s * x[f, 1])
        yh, yl = _two_sum_acc(yh, yl, x[f, 0])
    return out


@njit(cache=True)
def _window_delta(x, traj, traj_mask, pose, pose_mask, st, i, j, last, h):
    """Split-sum difference of the losses between x[i, j] + h and x[i, j] - h."""
    orig = x[i, j]
    x[i, j] = orig + h
    a = _scan(x, traj, traj_mask, pose, pose_mask, i, last, st[i, 0], st[i, 1], st[i, 2], st[i, 3], st[i, 4], st[i, 5])
    x[i, j] = orig - h
    b = _scan(x, traj, traj_mask, pose, pose_mask, i, last, st[i, 0], st[i, 1], st[i, 2], st[i, 3], st[i, 4], st[i, 5])
    x[i, j] = orig
    # difference the split sums before they are rounded into one number
    return (a[0] - b[0]) + (a[1] - b[1]), (a[2] - b[2]) + (a[3] - b[3])


@njit(cache=True)
def _fd_kernel(x, traj, traj_mask, pose, pose_mask, alpha, h, order, flat_indices):
    out = np.empty(len(flat_indices))
    n, d = x.shape
    nt = max(traj_mask.sum(), 1)
    np_ = max(pose_mask.sum(), 1)
    st = _states(x)
    for k in range(len(flat_indices)):
        i = flat_indices[k] // d
        j = flat_indices[k] % d
        # frames before i never see x[i]; only the root channels reach past frame i
        last = n - 1 if j < 3 else i
        dt1, dp1 = _window_delta(x, traj, traj_mask, pose, pose_mask, st, i, j, last, h)
        if order == 2:
            dt, dp, denom = dt1, dp1, 2.0 * h
        else:
            dt2, dp2 = _window_delta(x, traj, traj_mask, pose, pose_mask, st, i, j, last, 2.0 * h)
            dt, dp, denom = 8.0 * dt1 - dt2, 8.0 * dp1 - dp2, 12.0 * h
        out[k] = (alpha * dt / nt + (1.0 - alpha) * dp / np_) / denom
    return out


def _prepared(spec):
    return (np.ascontiguousarray(spec.traj, dtype=np.float64),
            np.ascontiguousarray(spec.traj_mask, dtype=np.bool_),
            np.ascontiguousarray(spec.pose, dtype=np.float64),
            np.ascontiguousarray(spec.pose_mask, dtype=np.bool_))


def reference_losses(x, spec):
    """(l_traj, l_pose) of one ``(N, 67)`` feature matrix."""
    prepared = _prepared(spec)
    x = np.ascontiguousarray(x, dtype=np.float64)
    th, tl, ph, pl = _scan(x, *prepared, 0, len(x) - 1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return (th + tl) / max(prepared[1].sum(), 1), (ph + pl) / max(prepared[3].sum(), 1)


def reference_fd(x, spec, alpha, h, flat_indices, order=4):
    """Central differences of order 2 (two-point) or 4 (five-point stencil)."""
    work = np.array(x, dtype=np.float64, copy=True, order="C")
    return _fd_kernel(work, *_prepared(spec), float(alpha), float(h), int(order),
                      np.asarray(flat_indices, dtype=np.int64))
