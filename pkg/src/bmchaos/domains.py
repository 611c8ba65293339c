"""Bounded planar domains: discs and axis-aligned squares.

Points are passed as length-2 sequences or complex numbers.  Squares are
handled through the Schwarz-Christoffel map from the unit disc

    f(w) = C * w * 2F1(1/4, 1/2; 5/4; -w^4),   f'(w) = C / sqrt(1 + w^4),

with C chosen so that the image is the square of half-side 1 (f(1) = 1).  The
inverse map is evaluated by Newton iteration and cached per point.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.special import hyp2f1


def as_complex(p) -> complex:
    if isinstance(p, (complex, np.complexfloating)):
        return complex(p)
    x, y = p
    return complex(float(x), float(y))


@dataclass(frozen=True)
class Disc:
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    kind = "disc"

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    def bounding_box(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r

    def distance_to_boundary(self, pts) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        pts = np.asarray(pts, dtype=float)
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return self.radius - d

    def contains(self, pts) -> np.ndarray:
        return self.distance_to_boundary(pts) > 0

    def _local(self, x) -> complex:
        return (as_complex(x) - complex(*self.center)) / self.radius

    def conformal_radius(self, x) -> float:
        """(R^2 - |x - c|^2) / R."""
        z = self._local(x)
        if abs(z) >= 1:
            raise ValueError("point must lie inside the disc")
        return self.radius * (1.0 - abs(z) ** 2)

    def green(self, x0, x) -> float:
        """Dirichlet Green function normalised as -log|x0 - x| near the diagonal."""
        a, b = self._local(x0), self._local(x)
        if abs(a) >= 1 or abs(b) >= 1:
            return 0.0
        if a == b:
            return math.inf
        return math.log(abs(1.0 - a.conjugate() * b) / abs(a - b))

    def describe(self) -> dict:
        return {"shape": "disc", "center": list(self.center), "radius": self.radius}


# integral_0^1 (1 + t^4)^(-1/2) dt = 2F1(1/4, 1/2; 5/4; -1)
# it is also the conformal radius of that square seen from its centre
SC_SCALE = 1.0 / float(hyp2f1(0.25, 0.5, 1.25, -1.0))


def _sc_map(w: complex) -> complex:
    return SC_SCALE * w * complex(hyp2f1(0.25, 0.5, 1.25, -(w ** 4)))


def _sc_deriv(w: complex) -> complex:
    return SC_SCALE / np.sqrt(1.0 + w ** 4)


@lru_cache(maxsize=4096)
def _sc_inverse(z: complex) -> complex:
    """Preimage of ``z`` (in the square of half-side 1) under the SC map."""
    if z == 0:
        return 0j
    w = z / SC_SCALE
    for _ in range(100):
        step = (_sc_map(w) - z) / _sc_deriv(w)
        w = w - step
        if abs(w) >= 1:
            w = w / abs(w) * (1 - 1e-12)
        if abs(step) < 1e-15:
            break
    return complex(w)


@dataclass(frozen=True)
class Square:
    center: tuple = (0.0, 0.0)
    half_side: float = 1.0

    def __post_init__(self):
        if not self.half_side > 0:
            raise ValueError("half-side must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    kind = "square"

    @property
    def diameter(self) -> float:
        return 2.0 * math.sqrt(2.0) * self.half_side

    @property
    def area(self) -> float:
        return 4.0 * self.half_side ** 2

    def bounding_box(self):
        cx, cy = self.center
        h = self.half_side
        return cx - h, cx + h, cy - h, cy + h

    def distance_to_boundary(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        dx = self.half_side - np.abs(pts[..., 0] - self.center[0])
        dy = self.half_side - np.abs(pts[..., 1] - self.center[1])
        return np.minimum(dx, dy)

    def contains(self, pts) -> np.ndarray:
        return self.distance_to_boundary(pts) > 0

    def _local(self, x) -> complex:
        return (as_complex(x) - complex(*self.center)) / self.half_side

    def conformal_radius(self, x) -> float:
        """|f'(w)| (1 - |w|^2) at the preimage w of ``x``, scaled by the half-side."""
        z = self._local(x)
        if max(abs(z.real), abs(z.imag)) >= 1:
            raise ValueError("point must lie inside the square")
        w = _sc_inverse(z)
        return self.half_side * abs(_sc_deriv(w)) * (1.0 - abs(w) ** 2)

    def green(self, x0, x) -> float:
        a, b = self._local(x0), self._local(x)
        if max(abs(a.real), abs(a.imag)) >= 1 or max(abs(b.real), abs(b.imag)) >= 1:
            return 0.0
        if a == b:
            return math.inf
        wa, wb = _sc_inverse(a), _sc_inverse(b)
        return math.log(abs(1.0 - wa.conjugate() * wb) / abs(wa - wb))

    def describe(self) -> dict:
        return {"shape": "square", "center": list(self.center), "half_side": self.half_side}


Domain = Disc | Square


def domain_from_dict(d: dict):
    d = dict(d)
    shape = d.pop("shape", "disc")
    center = tuple(d.pop("center", (0.0, 0.0)))
    if shape == "disc":
        dom = Disc(center=center, radius=float(d.pop("radius", 1.0)))
    elif shape == "square":
        dom = Square(center=center, half_side=float(d.pop("half_side", 1.0)))
    else:
        raise ValueError(f"unknown domain shape {shape!r}")
    if d:
        raise ValueError(f"unknown domain field(s): {sorted(d)}")
    return dom
