"""The court symmetry group D2 and its action on player features.

The four elements act on centered court coordinates as planar sign flips
with the vertical coordinate left alone.  Each element also carries the
axis/angle pair of the 3D rotation it is named after, so that
:func:`rotation_matrix` can be checked against the planar action.
"""
from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from .data import CHANNEL_SLICES, FEATURE_WIDTH, GameSequence, PlayerFrame
from .errors import ValidationError

TWO_PI = 2.0 * math.pi


class SymmetryElement(enum.Enum):
    # tag: (axis, angle, sign on x, sign on y)
    IDENTITY = ("identity", (0.0, 0.0, 1.0), 0.0, 1, 1)
    FLIP_X = ("flip_x", (0.0, 1.0, 0.0), math.pi, -1, 1)
    FLIP_Y = ("flip_y", (1.0, 0.0, 0.0), math.pi, 1, -1)
    ROT180 = ("rot180", (0.0, 0.0, 1.0), math.pi, -1, -1)

    def __init__(self, tag, axis, angle, sx, sy):
        self.tag = tag
        self.axis = axis
        self.angle = angle
        self.signs = (sx, sy)

    @classmethod
    def from_tag(cls, tag: str) -> "SymmetryElement":
        for g in cls:
            if g.tag == tag:
                return g
        raise ValidationError(f"unknown symmetry element {tag!r}")

    @classmethod
    def from_signs(cls, signs) -> "SymmetryElement":
        for g in cls:
            if g.signs == tuple(signs):
                return g
        raise ValidationError(f"no D2 element with signs {signs}")

    @property
    def index(self) -> int:
        return D2.index(self)

    def __repr__(self):
        return f"<{self.tag}>"


D2 = tuple(SymmetryElement)
IDENTITY, FLIP_X, FLIP_Y, ROT180 = D2


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation by ``angle`` radians about the unit vector ``axis``."""
    a, b, c = (float(v) for v in axis)
    if abs(math.sqrt(a * a + b * b + c * c) - 1.0) > 1e-9:
        raise ValidationError(f"rotation axis must have unit norm, got {axis}")
    cos, sin = math.cos(angle), math.sin(angle)
    # sin(pi) evaluates to 1.2e-16; snap roundoff so D2 matrices come out exact
    cos = 0.0 if abs(cos) < 1e-15 else cos
    sin = 0.0 if abs(sin) < 1e-15 else sin
    k = 1.0 - cos
    return np.array(
        [
            [a * a * k + cos, a * b * k - c * sin, a * c * k + b * sin],
            [a * b * k + c * sin, b * b * k + cos, b * c * k - a * sin],
            [a * c * k - b * sin, b * c * k + a * sin, c * c * k + cos],
        ]
    )


def element_matrix(g: SymmetryElement) -> np.ndarray:
    return rotation_matrix(g.axis, g.angle)


def compose(g: SymmetryElement, h: SymmetryElement) -> SymmetryElement:
    return SymmetryElement.from_signs((g.signs[0] * h.signs[0], g.signs[1] * h.signs[1]))


def inverse(g: SymmetryElement) -> SymmetryElement:
    return g


# (g, h) -> index of g.h, over D2 order
COMPOSE_TABLE = np.array([[compose(g, h).index for h in D2] for g in D2])


def remap_angle(g: SymmetryElement, theta: float) -> float:
    sx, sy = g.signs
    if sx == 1 and sy == 1:
        return theta
    if sx == -1 and sy == 1:
        out = math.pi - theta
    elif sx == 1:
        out = -theta
    else:
        out = theta + math.pi
    out %= TWO_PI
    # (-tiny) % 2pi rounds to exactly 2pi
    return 0.0 if out >= TWO_PI else out


def apply_action(g: SymmetryElement, frame: PlayerFrame) -> PlayerFrame:
    """Transform one centered player frame by ``g``."""
    if g is IDENTITY:
        return frame
    sx, sy = g.signs

    def flip2(p):
        return (sx * p[0], sy * p[1])

    return dataclasses.replace(
        frame,
        head=(sx * frame.head[0], sy * frame.head[1], frame.head[2]),
        headOrientation=remap_angle(g, frame.headOrientation),
        hips=flip2(frame.hips),
        foot1=flip2(frame.foot1),
        foot2=flip2(frame.foot2),
    )


def feature_signs(g: SymmetryElement) -> np.ndarray:
    """Per-column multipliers realising ``g`` on an encoded feature vector.

    Sign flips of x/y act on (sin, cos) of the head angle the same way they
    act on a direction vector: flipping x negates cos, flipping y negates sin.
    """
    sx, sy = g.signs
    s = np.ones(FEATURE_WIDTH)
    for key in ("head", "hips", "foot1", "foot2"):
        sl = CHANNEL_SLICES[key]
        s[sl.start] = sx
        s[sl.start + 1] = sy
    ang = CHANNEL_SLICES["headOrientation"]
    s[ang.start] = sy
    s[ang.start + 1] = sx
    return s


FEATURE_SIGNS = np.stack([feature_signs(g) for g in D2])


def augment_d2(seq: GameSequence, g: SymmetryElement) -> GameSequence:
    """Apply ``g`` to every frame; labels and transitions are untouched."""
    if g is IDENTITY:
        return seq
    frames = tuple(tuple(apply_action(g, p) for p in frame) for frame in seq.frames)
    return dataclasses.replace(seq, frames=frames)
