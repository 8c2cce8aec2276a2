"""Parametric root trajectories sampled at constant speed.

Curves live in the ground plane (x, z) at a constant height y. Every curve
is a chain of pieces with closed-form arclength (straight lines and circular
arcs), so equal-arclength sampling is exact.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import CompositionError, SpecError
from .kinematics import FPS

DEFAULT_HEIGHT = 0.9
CONTINUITY_TOL = 1e-6


@dataclass(frozen=True)
class CurveSpec:
    """One curve segment.

    kind / params:
      line     start (x, z), end (x, z)
      circle   center (x, z), radius, start_angle, turns (negative = clockwise)
      arc      center (x, z), radius, start_angle, end_angle
      s_curve  start (x, z), heading, radius, sweep (per arc, default pi)

    Angles on circles are measured so that angle ``a`` is the point
    ``center + radius * (sin a, cos a)``; headings use the same convention.
    ``speed`` (m/s), when given, overrides ``n_frames``: samples are spaced by
    ``speed / fps`` and the curve is cut at the last whole step.
    """

    kind: str
    params: dict = field(default_factory=dict)
    n_frames: int = 64
    height: float = DEFAULT_HEIGHT
    speed: float = None
    fps: int = FPS

    def to_dict(self):
        out = {"kind": self.kind, "params": {k: _plain(v) for k, v in self.params.items()},
               "n_frames": self.n_frames, "height": self.height, "fps": self.fps}
        if self.speed is not None:
            out["speed"] = self.speed
        return out

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "params", "n_frames", "height", "speed", "fps"}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown curve fields: {sorted(unknown)}")
        return cls(kind=d["kind"], params=dict(d.get("params", {})), n_frames=d.get("n_frames", 64),
                   height=d.get("height", DEFAULT_HEIGHT), speed=d.get("speed"), fps=d.get("fps", FPS))


def _plain(v):
    return list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else v


def _direction(angle):
    return np.array([np.sin(angle), np.cos(angle)])


class _Line:
    def __init__(self, a, b):
        self.a, self.b = np.asarray(a, float), np.asarray(b, float)
        self.length = float(np.linalg.norm(self.b - self.a))

    def at(self, s):
        u = s / self.length if self.length > 0 else np.zeros_like(s)
        return self.a + u[:, None] * (self.b - self.a)


class _Arc:
    def __init__(self, center, radius, a0, a1):
        self.center, self.radius = np.asarray(center, float), float(radius)
        self.a0, self.a1 = float(a0), float(a1)
        self.length = abs(self.a1 - self.a0) * self.radius

    def at(self, s):
        a = self.a0 + np.sign(self.a1 - self.a0) * s / self.radius
        return self.center + self.radius * np.stack([np.sin(a), np.cos(a)], axis=-1)


def _pieces(spec):
    p = spec.params
    try:
        if spec.kind == "line":
            return [_Line(p["start"], p["end"])]
        radius = float(p["radius"])
        if not radius > 0:
            raise SpecError("radius must be positive")
        if spec.kind == "circle":
            a0 = float(p.get("start_angle", 0.0))
            return [_Arc(p.get("center", (0.0, 0.0)), radius, a0, a0 + 2 * np.pi * float(p.get("turns", 1.0)))]
        if spec.kind == "arc":
            return [_Arc(p.get("center", (0.0, 0.0)), radius, p["start_angle"], p["end_angle"])]
        if spec.kind == "s_curve":
            start = np.asarray(p.get("start", (0.0, 0.0)), float)
            heading = float(p.get("heading", 0.0))
            sweep = float(p.get("sweep", np.pi))
            # the second arc mirrors the first through their shared point
            c1 = start + radius * _direction(heading + np.pi / 2)
            a_start = heading - np.pi / 2
            first = _Arc(c1, radius, a_start, a_start + sweep)
            joint = first.at(np.array([first.length]))[0]
            c2 = 2 * joint - c1
            b_start = a_start + sweep - np.pi
            return [first, _Arc(c2, radius, b_start, b_start - sweep)]
    except KeyError as err:
        raise SpecError(f"{spec.kind} curve missing parameter {err}") from None
    raise SpecError(f"unknown curve kind {spec.kind!r}")


def curve_length(spec):
    return sum(piece.length for piece in _pieces(spec))


def _evaluate(pieces, s):
    out = np.empty((len(s), 2))
    bounds = np.cumsum([0.0] + [piece.length for piece in pieces])
    which = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(pieces) - 1)
    for k, piece in enumerate(pieces):
        sel = which == k
        if sel.any():
            out[sel] = piece.at(np.minimum(s[sel] - bounds[k], piece.length))
    return out


def plan(spec):
    """Sample ``spec`` at equal arclength; returns ``(N, 3)`` positions."""
    pieces = _pieces(spec)
    total = sum(piece.length for piece in pieces)
    if spec.speed is not None:
        if not spec.speed > 0:
            raise SpecError("speed must be positive")
        step = spec.speed / spec.fps
        n = int(np.floor(total / step + 1e-9)) + 1
        s = np.arange(n) * step
    else:
        n = spec.n_frames
        if n < 2:
            raise SpecError("a trajectory needs at least 2 frames")
        s = np.linspace(0.0, total, n)
    xz = _evaluate(pieces, s)
    if not np.isfinite(xz).all():
        raise SpecError("curve parameters produce non-finite points")
    return np.stack([xz[:, 0], np.full(len(s), float(spec.height)), xz[:, 1]], axis=-1)


def compose(segments):
    """Concatenate planned segments, dropping each duplicated boundary frame."""
    if not segments:
        raise SpecError("nothing to compose")
    parts = [plan(segments[0])]
    for i, seg in enumerate(segments[1:], start=1):
        nxt = plan(seg)
        gap = float(np.linalg.norm(nxt[0] - parts[-1][-1]))
        if gap > CONTINUITY_TOL:
            raise CompositionError(i, gap)
        parts.append(nxt[1:])
    return np.concatenate(parts)


def trajectory_csv(traj):
    lines = ["frame,x,y,z"]
    lines += [f"{i},{x:.9g},{y:.9g},{z:.9g}" for i, (x, y, z) in enumerate(np.asarray(traj))]
    return "\n".join(lines) + "\n"
