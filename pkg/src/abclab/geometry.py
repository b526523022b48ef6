"""Surfaces, metrics and coordinate changes.

The cylinder T x [-1,1], the unit sphere and the closed unit disk, their
complexified neighbourhoods, the axial and polar symplectic coordinates
with holomorphic extensions, and the involutions generating the doubled
surfaces.  All functions are pure; angles are stored in [0, 1).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import OriginError, PoleError, RangeError

TWO_PI = 2.0 * math.pi


def mod1(x: float) -> float:
    """Reduce into [0, 1); guards against the 1.0 rounding artefact of %."""
    r = x % 1.0
    return r if r < 1.0 else 0.0


def mod1_array(x: np.ndarray) -> np.ndarray:
    r = np.mod(x, 1.0)
    r[r >= 1.0] = 0.0
    return r


def circle_dist(a: float, b: float) -> float:
    """Distance on R/Z."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


@dataclass(frozen=True)
class CylinderPoint:
    """Point (theta, y) of the cylinder; theta reduced mod 1, y unclamped."""

    theta: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "theta", mod1(float(self.theta)))
        object.__setattr__(self, "y", float(self.y))

    @property
    def on_surface(self) -> bool:
        return abs(self.y) <= 1.0


@dataclass(frozen=True)
class ComplexCylinderPoint:
    """Point of C/Z x C; the real part of theta is reduced mod 1."""

    theta: complex
    y: complex

    def __post_init__(self):
        t = complex(self.theta)
        object.__setattr__(self, "theta", complex(mod1(t.real), t.imag))
        object.__setattr__(self, "y", complex(self.y))

    @property
    def is_real(self) -> bool:
        return self.theta.imag == 0.0 and self.y.imag == 0.0

    def real_trace(self) -> CylinderPoint:
        return CylinderPoint(self.theta.real, self.y.real)


@dataclass(frozen=True)
class SpherePoint:
    """Point of the unit sphere in R^3; renormalised on construction."""

    x1: float
    x2: float
    x3: float

    def __post_init__(self):
        n = math.sqrt(self.x1 **2 + self.x2 **2 + self.x3 **2)
        if n == 0.0:
            raise RangeError("cannot normalise the zero vector onto the sphere")
        object.__setattr__(self, "x1", self.x1 / n)
        object.__setattr__(self, "x2", self.x2 / n)
        object.__setattr__(self, "x3", self.x3 / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])


@dataclass(frozen=True)
class ComplexSpherePoint:
    """Point of the complexified sphere {z in C^3 : sum z_i^2 = 1}."""

    z1: complex
    z2: complex
    z3: complex

    def defect(self) -> float:
        """|sum z_i^2 - 1|, zero on the complex sphere."""
        return abs(self.z1 **2 + self.z2 **2 + self.z3 **2 - 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.z1, self.z2, self.z3], dtype=complex)


@dataclass(frozen=True)
class DiskPoint:
    """Point of R^2; on the closed unit disk iff x1^2 + x2^2 <= 1."""

    x1: float
    x2: float

    @property
    def norm_sq(self) -> float:
        return self.x1 **2 + self.x2 **2

    @property
    def on_surface(self) -> bool:
        return self.norm_sq <= 1.0


@dataclass(frozen=True)
class ComplexDiskPoint:
    z1: complex
    z2: complex

    @property
    def norm_sq(self) -> complex:
        return self.z1 **2 + self.z2 **2


@dataclass(frozen=True)
class DomainSpec:
    """Complexified domain of one of the three surfaces, radius rho > 1."""

    surface: str
    rho: float

    def __post_init__(self):
        if self.surface not in ("cylinder", "sphere", "disk"):
            raise RangeError(f"unknown surface tag {self.surface!r}")
        if not self.rho > 1.0:
            raise RangeError("domain radius must satisfy rho > 1")


def cyl_distance(p: CylinderPoint, q: CylinderPoint) -> float:
    """max(circle distance of angles, half the height gap); diameter 1."""
    return max(circle_dist(p.theta, q.theta), 0.5 * abs(p.y - q.y))


def cyl_distance_arrays(theta_a, y_a, theta_b, y_b):
    """Vectorised cyl_distance on coordinate arrays."""
    d = np.abs(np.asarray(theta_a) - np.asarray(theta_b)) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.maximum(d, 0.5 * np.abs(np.asarray(y_a) - np.asarray(y_b)))


def cyl_reflection(p: CylinderPoint) -> CylinderPoint:
    """The involution (theta, y) -> (theta, 2 - y) generating the doubled cylinder."""
    return CylinderPoint(p.theta, 2.0 - p.y)


def sigma_conj(p: ComplexCylinderPoint) -> ComplexCylinderPoint:
    """Coordinatewise complex conjugation; fixes exactly the real cylinder."""
    return ComplexCylinderPoint(p.theta.conjugate(), p.y.conjugate())


# -- axial coordinates on the sphere ----------------------------------------

def axial_project(s):
    """Symplectic coordinates (arg(x1+ix2)/2pi, x3) on the twice punctured sphere.

    Accepts SpherePoint or ComplexSpherePoint and returns the matching
    cylinder point kind.  Complex points use the holomorphic extension
    log((z1+iz2)/sqrt(z1^2+z2^2)) / 2i pi with principal branches.
    """
    if isinstance(s, SpherePoint):
        if abs(s.x3) >= 1.0 - 1e-15:
            raise PoleError("axial projection undefined at the poles")
        theta = math.atan2(s.x2, s.x1) / TWO_PI
        return CylinderPoint(theta, s.x3)
    if isinstance(s, ComplexSpherePoint):
        if abs(s.z3.real) >= 1.0:
            raise PoleError("complex point outside the |Re z3| < 1 strip")
        w = s.z1 **2 + s.z2 **2
        theta = cmath.log((s.z1 + 1j * s.z2) / cmath.sqrt(w)) / (2j * math.pi)
        return ComplexCylinderPoint(theta, s.z3)
    raise TypeError(f"expected a sphere point, got {type(s).__name__}")


def axial_unproject(c):
    """Inverse of axial_project: (sqrt(1-y^2) cos(2 pi theta), ..., y)."""
    if isinstance(c, CylinderPoint):
        if abs(c.y) >= 1.0:
            raise RangeError("axial unprojection needs |y| < 1")
        r = math.sqrt(1.0 - c.y **2)
        a = TWO_PI * c.theta
        return SpherePoint(r * math.cos(a), r * math.sin(a), c.y)
    if isinstance(c, ComplexCylinderPoint):
        if abs(c.y.real) >= 1.0:
            raise RangeError("complex axial unprojection needs |Re y| < 1")
        r = cmath.sqrt(1.0 - c.y **2)
        a = TWO_PI * c.theta
        return ComplexSpherePoint(r * cmath.cos(a), r * cmath.sin(a), c.y)
    raise TypeError(f"expected a cylinder point, got {type(c).__name__}")


# -- polar coordinates on the disk -------------------------------------------

def polar_project(d):
    """Symplectic polar coordinates (arg(x1+ix2)/2pi, 2(x1^2+x2^2)-1)."""
    if isinstance(d, DiskPoint):
        r2 = d.norm_sq
        if r2 <= 0.0:
            raise OriginError("polar coordinates undefined at the origin")
        theta = math.atan2(d.x2, d.x1) / TWO_PI
        return CylinderPoint(theta, 2.0 * r2 - 1.0)
    if isinstance(d, ComplexDiskPoint):
        w = d.norm_sq
        if w.real <= 0.0:
            raise OriginError("complex polar coordinates need Re(z1^2+z2^2) > 0")
        theta = cmath.log((d.z1 + 1j * d.z2) / cmath.sqrt(w)) / (2j * math.pi)
        return ComplexCylinderPoint(theta, 2.0 * w - 1.0)
    raise TypeError(f"expected a disk point, got {type(d).__name__}")


def polar_unproject(c):
    """Inverse of polar_project; needs y > -1 (Re y > -1 in the complex case)."""
    if isinstance(c, CylinderPoint):
        if c.y <= -1.0:
            raise RangeError("polar unprojection needs y > -1")
        r = math.sqrt((c.y + 1.0) / 2.0)
        a = TWO_PI * c.theta
        return DiskPoint(r * math.cos(a), r * math.sin(a))
    if isinstance(c, ComplexCylinderPoint):
        if c.y.real <= -1.0:
            raise RangeError("complex polar unprojection needs Re y > -1")
        r = cmath.sqrt((c.y + 1.0) / 2.0)
        a = TWO_PI * c.theta
        return ComplexDiskPoint(r * cmath.cos(a), r * cmath.sin(a))
    raise TypeError(f"expected a cylinder point, got {type(c).__name__}")


def disk_involution(x):
    """sqrt(2 - |x|^2) x / |x| on the annulus 0 < |x|^2 < 2; fixes the unit circle.

    Conjugate by polar_project to (theta, y) -> (theta, 2 - y).  The complex
    extension uses the principal square root on both factors.
    """
    if isinstance(x, DiskPoint):
        r2 = x.norm_sq
        if not 0.0 < r2 < 2.0:
            raise RangeError("disk involution needs 0 < |x|^2 < 2")
        scale = math.sqrt(2.0 / r2 - 1.0)
        return DiskPoint(scale * x.x1, scale * x.x2)
    if isinstance(x, ComplexDiskPoint):
        w = x.norm_sq
        if not 0.0 < w.real < 2.0:
            raise RangeError("complex disk involution needs 0 < Re(z1^2+z2^2) < 2")
        scale = cmath.sqrt(2.0 - w) / cmath.sqrt(w)
        return ComplexDiskPoint(scale * x.z1, scale * x.z2)
    raise TypeError(f"expected a disk point, got {type(x).__name__}")


# -- domain membership --------------------------------------------------------

def domain_contains(spec: DomainSpec, point) -> bool:
    """Membership in the rho-neighbourhood per the defining inequalities."""
    if spec.surface == "cylinder":
        if isinstance(point, CylinderPoint):
            return 2.0 + point.y **2 <= 3.0 * spec.rho
        if isinstance(point, ComplexCylinderPoint):
            # |exp(i theta)|^2 + |exp(-i theta)|^2 = e^{-2 Im theta} + e^{2 Im theta}
            b = point.theta.imag
            s = math.exp(-2.0 * b) + math.exp(2.0 * b)
            return s + abs(point.y) **2 <= 3.0 * spec.rho
        raise TypeError("cylinder domain expects a cylinder point")
    if spec.surface == "sphere":
        if isinstance(point, SpherePoint):
            return 1.0 <= spec.rho
        if isinstance(point, ComplexSpherePoint):
            s = abs(point.z1) **2 + abs(point.z2) **2 + abs(point.z3) **2
            return s <= spec.rho
        raise TypeError("sphere domain expects a sphere point")
    if isinstance(point, DiskPoint):
        return point.norm_sq <= spec.rho
    if isinstance(point, ComplexDiskPoint):
        return abs(point.z1) **2 + abs(point.z2) **2 <= spec.rho
    raise TypeError("disk domain expects a disk point")


def in_check_strip(point) -> bool:
    """Membership in the punctured strip of the ambient check domain.

    Cylinder points: |Re y| < 1.  Complex sphere points: |Re z3| < 1.
    Complex disk points: 0 < Re(z1^2 + z2^2) < 1.
    """
    if isinstance(point, CylinderPoint):
        return abs(point.y) < 1.0
    if isinstance(point, ComplexCylinderPoint):
        return abs(point.y.real) < 1.0
    if isinstance(point, (SpherePoint,)):
        return abs(point.x3) < 1.0
    if isinstance(point, ComplexSpherePoint):
        return abs(point.z3.real) < 1.0
    if isinstance(point, DiskPoint):
        return 0.0 < point.norm_sq < 1.0
    if isinstance(point, ComplexDiskPoint):
        return 0.0 < point.norm_sq.real < 1.0
    raise TypeError(f"no strip predicate for {type(point).__name__}")
