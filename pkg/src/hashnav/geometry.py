from __future__ import annotations

import math
from dataclasses import dataclass

from .hashing import wrap_pi


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError(f"non-finite pose {self.x, self.y, self.theta}")
        object.__setattr__(self, "theta", wrap_pi(self.theta))

    @property
    def xy(self):
        return (self.x, self.y)

    def to_global(self, p):
        """Robot-frame point -> global point."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1])

    def to_local(self, p):
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = p[0] - self.x, p[1] - self.y
        return (c * dx + s * dy, -s * dx + c * dy)

    def compose(self, dx, dy, dth):
        """Apply a robot-frame increment."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.theta + dth)

    def distance(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)


def rotate(v, theta):
    c, s = math.cos(theta), math.sin(theta)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])
