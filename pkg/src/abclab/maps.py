"""Compositional algebra of area-preserving cylinder maps.

Leaves are rotations, polynomial shears theta -> theta + g(y), trigonometric
twists y -> y + t(theta) with integer frequencies, and Hamiltonian time-one
flows; internal nodes are Compose and Inverse.  Closed-form leaves evaluate
and invert exactly; flows integrate by the implicit midpoint scheme with a
step count frozen in the leaf.  Everything is immutable and evaluation is
pure, on single points or on coordinate arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeError
from .flows import DEFAULT_FLOW_CONFIG, FlowConfig, ham_flow_batch
from .geometry import ComplexCylinderPoint, CylinderPoint, cyl_distance_arrays
from .rational import RationalAngle

TWO_PI = 2.0 * math.pi


class MapExpr:
    """Base class; subclasses implement forward/backward batch evaluation."""

    def apply(self, theta, y, cfg: FlowConfig, backward: bool):
        raise NotImplementedError

    def jacobian_analytic(self, theta, y, cfg: FlowConfig, backward: bool):
        """(theta_out, y_out, J) with J = [j_tt, j_ty, j_yt, j_yy] stacked."""
        raise NotImplementedError

    def leaves(self):
        yield self


@dataclass(frozen=True)
class Rotation(MapExpr):
    angle: RationalAngle | float

    @property
    def angle_float(self) -> float:
        a = self.angle
        return a.to_float() if isinstance(a, RationalAngle) else float(a)

    def apply(self, theta, y, cfg, backward):
        a = -self.angle_float if backward else self.angle_float
        out = theta + a
        re = np.mod(np.real(out), 1.0)
        re = np.where(re >= 1.0, 0.0, re)
        if np.iscomplexobj(out):
            out = re + 1j * np.imag(out)
        else:
            out = re
        return out, y.copy() if hasattr(y, "copy") else y

    def jacobian_analytic(self, theta, y, cfg, backward):
        t, yy = self.apply(theta, y, cfg, backward)
        one = np.ones_like(theta)
        zero = np.zeros_like(theta)
        return t, yy, np.array([one, zero, zero, one])


@dataclass(frozen=True)
class Shear(MapExpr):
    """theta -> theta + g(y) with g a real polynomial, coefficients ascending."""

    coeffs: tuple

    def _g(self, y):
        acc = np.zeros_like(y)
        for c in reversed(self.coeffs):
            acc = acc * y + c
        return acc

    def _g_prime(self, y):
        acc = np.zeros_like(y)
        n = len(self.coeffs)
        for k in range(n - 1, 0, -1):
            acc = acc * y + k * self.coeffs[k]
        return acc

    def apply(self, theta, y, cfg, backward):
        g = self._g(y)
        out = theta - g if backward else theta + g
        re = np.mod(np.real(out), 1.0)
        re = np.where(re >= 1.0, 0.0, re)
        out = re + 1j * np.imag(out) if np.iscomplexobj(out) else re
        return out, y.copy() if hasattr(y, "copy") else y

    def jacobian_analytic(self, theta, y, cfg, backward):
        t, yy = self.apply(theta, y, cfg, backward)
        one = np.ones_like(y)
        zero = np.zeros_like(y)
        gp = self._g_prime(y)
        if backward:
            gp = -gp
        return t, yy, np.array([one, gp, zero, one])


@dataclass(frozen=True)
class Twist(MapExpr):
    """y -> y + t(theta), t a real trigonometric polynomial, integer frequencies.

    terms is a tuple of (freq, cos_coeff, sin_coeff); a0 is the mean shift.
    """

    a0: float = 0.0
    terms: tuple = ()

    def _t(self, theta):
        acc = self.a0 * np.ones_like(theta)
        for k, a, b in self.terms:
            acc = acc + a * np.cos(TWO_PI * k * theta) + b * np.sin(TWO_PI * k * theta)
        return acc

    def _t_prime(self, theta):
        acc = np.zeros_like(theta)
        for k, a, b in self.terms:
            w = TWO_PI * k
            acc = acc + w * (-a * np.sin(w * theta) + b * np.cos(w * theta))
        return acc

    def apply(self, theta, y, cfg, backward):
        t = self._t(theta)
        return theta.copy() if hasattr(theta, "copy") else theta, \
            (y - t if backward else y + t)

    def jacobian_analytic(self, theta, y, cfg, backward):
        t, yy = self.apply(theta, y, cfg, backward)
        one = np.ones_like(theta)
        zero = np.zeros_like(theta)
        tp = self._t_prime(theta)
        if backward:
            tp = -tp
        return t, yy, np.array([one, zero, tp, one])


@dataclass(frozen=True)
class HamFlow(MapExpr):
    """Time-one map of K (1-y^2) c(y) cos(2 pi freq theta).

    steps is the frozen per-unit-time step count of this leaf; collar > 0
    switches on the plateau cutoff c(y) that is identity near |Re y| = 1.
    """

    k: float
    freq: int
    steps: int
    collar: float = 0.0

    def __post_init__(self):
        if self.freq < 1:
            raise RangeError("flow frequency must be a positive integer")
        if self.steps < 16:
            raise RangeError("flow leaf needs at least 16 steps")

    def apply(self, theta, y, cfg, backward):
        return ham_flow_batch(self.k, self.freq, theta, y, cfg,
                              backward=backward, collar=self.collar,
                              n_steps=self.steps)

    def jacobian_analytic(self, theta, y, cfg, backward):
        t, yy, jac = ham_flow_batch(self.k, self.freq, theta, y, cfg,
                                    backward=backward, collar=self.collar,
                                    n_steps=self.steps, with_jacobian=True)
        return t, yy, jac


@dataclass(frozen=True)
class Compose(MapExpr):
    """Composition f1 o f2 o ... o fn, applied right to left."""

    factors: tuple

    def apply(self, theta, y, cfg, backward):
        order = self.factors if backward else reversed(self.factors)
        for m in order:
            theta, y = m.apply(theta, y, cfg, backward)
        return theta, y

    def jacobian_analytic(self, theta, y, cfg, backward):
        order = self.factors if backward else tuple(reversed(self.factors))
        jac = None
        for m in order:
            theta, y, j = m.jacobian_analytic(theta, y, cfg, backward)
            jac = j if jac is None else _jac_mul(j, jac)
        return theta, y, jac

    def leaves(self):
        for m in self.factors:
            yield from m.leaves()


@dataclass(frozen=True)
class Inverse(MapExpr):
    inner: MapExpr

    def apply(self, theta, y, cfg, backward):
        return self.inner.apply(theta, y, cfg, not backward)

    def jacobian_analytic(self, theta, y, cfg, backward):
        return self.inner.jacobian_analytic(theta, y, cfg, not backward)

    def leaves(self):
        yield from self.inner.leaves()


def _jac_mul(a, b):
    """Product of two [tt, ty, yt, yy]-stacked 2x2 Jacobian fields."""
    return np.array([a[0] * b[0] + a[1] * b[2],
                     a[0] * b[1] + a[1] * b[3],
                     a[2] * b[0] + a[3] * b[2],
                     a[2] * b[1] + a[3] * b[3]])


def identity_map() -> MapExpr:
    return Compose(())


def compose(*maps: MapExpr) -> MapExpr:
    """Composition applied right to left; flattens nested Compose nodes."""
    flat = []
    for m in maps:
        if isinstance(m, Compose):
            flat.extend(m.factors)
        else:
            flat.append(m)
    if len(flat) == 1:
        return flat[0]
    return Compose(tuple(flat))


def inverse(m: MapExpr) -> MapExpr:
    if isinstance(m, Inverse):
        return m.inner
    return Inverse(m)


def simplify_rotations(m: MapExpr) -> MapExpr:
    """Merge adjacent rotation factors by exact rational angle addition."""
    if not isinstance(m, Compose):
        return m
    out = []
    for f in m.factors:
        if (out and isinstance(f, Rotation) and isinstance(out[-1], Rotation)
                and isinstance(f.angle, RationalAngle)
                and isinstance(out[-1].angle, RationalAngle)):
            out[-1] = Rotation(out[-1].angle + f.angle)
        else:
            out.append(f)
    return Compose(tuple(out))


# -- evaluation on points and arrays ------------------------------------------

def evaluate_batch(m: MapExpr, theta, y, cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
    """Apply m to coordinate arrays (real or complex); returns new arrays."""
    theta = np.asarray(theta)
    y = np.asarray(y)
    if np.iscomplexobj(theta) or np.iscomplexobj(y):
        theta = theta.astype(complex)
        y = y.astype(complex)
    else:
        theta = theta.astype(float)
        y = y.astype(float)
    return m.apply(theta, y, cfg, backward=False)


def evaluate(m: MapExpr, p, cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
    """Apply m to a CylinderPoint or ComplexCylinderPoint."""
    if isinstance(p, CylinderPoint):
        t, y = evaluate_batch(m, np.array([p.theta]), np.array([p.y]), cfg)
        return CylinderPoint(float(t[0]), float(y[0]))
    if isinstance(p, ComplexCylinderPoint):
        t, y = evaluate_batch(m, np.array([p.theta], dtype=complex),
                              np.array([p.y], dtype=complex), cfg)
        return ComplexCylinderPoint(complex(t[0]), complex(y[0]))
    raise TypeError(f"expected a cylinder point, got {type(p).__name__}")


def jacobian_batch(m: MapExpr, theta, y, cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
    """Analytic/variational Jacobian field of m: (theta_out, y_out, J).

    J is stacked [d theta'/d theta, d theta'/dy, dy'/d theta, dy'/dy]; for
    complex inputs it is the complex 2x2 tangent, valid only where every
    leaf is holomorphic (cutoff flows on complex points are refused by the
    flow layer).
    """
    theta = np.asarray(theta)
    y = np.asarray(y)
    if np.iscomplexobj(theta) or np.iscomplexobj(y):
        theta = theta.astype(complex)
        y = y.astype(complex)
    else:
        theta = theta.astype(float)
        y = y.astype(float)
    t, yy, jac = m.jacobian_analytic(theta, y, cfg, backward=False)
    if jac is None:
        one = np.ones_like(theta)
        zero = np.zeros_like(theta)
        jac = np.array([one, zero, zero, one])
    return t, yy, jac


def jacobian(m: MapExpr, p, step: float = 1e-6,
             cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> np.ndarray:
    """Central finite-difference Jacobian at a point.

    Returns a 2x2 real matrix for real points and the realified 4x4 matrix
    for complexified points (coordinates Re theta, Im theta, Re y, Im y).
    """
    if step <= 0.0:
        raise RangeError("finite-difference step must be positive")
    if isinstance(p, CylinderPoint):
        if abs(p.y) > 1.0 - step:
            raise RangeError("point must be interior to the cylinder by >= step")
        th = np.array([p.theta + step, p.theta - step, p.theta, p.theta])
        yy = np.array([p.y, p.y, p.y + step, p.y - step])
        t, y = evaluate_batch(m, th, yy, cfg)
        dth_p = _theta_gap(t[0], t[1])
        return np.array([
            [dth_p / (2 * step), _theta_gap(t[2], t[3]) / (2 * step)],
            [(y[0] - y[1]) / (2 * step), (y[2] - y[3]) / (2 * step)],
        ])
    if isinstance(p, ComplexCylinderPoint):
        th0, y0 = p.theta, p.y
        offs = [(step, 0, 0, 0), (0, step, 0, 0), (0, 0, step, 0), (0, 0, 0, step)]
        cols = []
        for da, db, dc, dd in offs:
            tp, yp = evaluate_batch(
                m, np.array([th0 + da + 1j * db], dtype=complex),
                np.array([y0 + dc + 1j * dd], dtype=complex), cfg)
            tm, ym = evaluate_batch(
                m, np.array([th0 - da - 1j * db], dtype=complex),
                np.array([y0 - dc - 1j * dd], dtype=complex), cfg)
            dth = _theta_gap_c(tp[0], tm[0]) / (2 * step)
            dy = (yp[0] - ym[0]) / (2 * step)
            cols.append([dth.real, dth.imag, dy.real, dy.imag])
        return np.array(cols).T
    raise TypeError(f"expected a cylinder point, got {type(p).__name__}")


def _theta_gap(a: float, b: float) -> float:
    """Short representative of a - b on R/Z."""
    d = (a - b) % 1.0
    return d if d <= 0.5 else d - 1.0


def _theta_gap_c(a: complex, b: complex) -> complex:
    return _theta_gap(a.real, b.real) + 1j * (a.imag - b.imag)


def commutation_residual(m: MapExpr, alpha: RationalAngle, grid_n: int,
                         cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> float:
    """sup over a grid of cyl_distance(m(Rot_a x), Rot_a(m x))."""
    if grid_n < 8:
        raise RangeError("commutation grid needs grid_n >= 8")
    th = np.repeat(np.arange(grid_n) / grid_n, grid_n)
    yy = np.tile(np.linspace(-1.0, 1.0, grid_n), grid_n)
    a = alpha.to_float()
    t1, y1 = evaluate_batch(m, np.mod(th + a, 1.0), yy, cfg)
    t2, y2 = evaluate_batch(m, th, yy, cfg)
    t2 = np.mod(t2 + a, 1.0)
    return float(np.max(cyl_distance_arrays(t1, y1, t2, y2)))


# -- serialization -------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize(m: MapExpr) -> str:
    """Line-oriented text form of the tree, 17 significant digits, exact."""
    lines: list[str] = []
    _serialize_into(m, lines)
    return "\n".join(lines) + "\n"


def _serialize_into(m: MapExpr, lines: list) -> None:
    if isinstance(m, Rotation):
        if isinstance(m.angle, RationalAngle):
            lines.append(f"rotation {m.angle}")
        else:
            lines.append(f"rotation {_fmt(m.angle)}")
    elif isinstance(m, Shear):
        lines.append("shear " + " ".join(_fmt(c) for c in m.coeffs))
    elif isinstance(m, Twist):
        parts = [f"twist {_fmt(m.a0)}"]
        for k, a, b in m.terms:
            parts.append(f"{k}:{_fmt(a)}:{_fmt(b)}")
        lines.append(" ".join(parts))
    elif isinstance(m, HamFlow):
        lines.append(f"hamflow k={_fmt(m.k)} freq={m.freq} steps={m.steps} "
                     f"collar={_fmt(m.collar)}")
    elif isinstance(m, Compose):
        lines.append(f"compose {len(m.factors)}")
        for f in m.factors:
            _serialize_into(f, lines)
    elif isinstance(m, Inverse):
        lines.append("inverse")
        _serialize_into(m.inner, lines)
    else:
        raise TypeError(f"cannot serialize {type(m).__name__}")


def deserialize(text: str) -> MapExpr:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    expr, rest = _parse_node(lines)
    if rest:
        raise ValueError(f"{len(rest)} trailing lines after map expression")
    return expr


def _parse_node(lines: list):
    if not lines:
        raise ValueError("unexpected end of map expression")
    head, *rest = lines
    tok = head.split()
    kind = tok[0]
    if kind == "rotation":
        if "/" in tok[1]:
            return Rotation(RationalAngle.parse(tok[1])), rest
        return Rotation(float(tok[1])), rest
    if kind == "shear":
        return Shear(tuple(float(t) for t in tok[1:])), rest
    if kind == "twist":
        a0 = float(tok[1])
        terms = []
        for t in tok[2:]:
            k, a, b = t.split(":")
            terms.append((int(k), float(a), float(b)))
        return Twist(a0, tuple(terms)), rest
    if kind == "hamflow":
        kv = dict(t.split("=") for t in tok[1:])
        return HamFlow(float(kv["k"]), int(kv["freq"]), int(kv["steps"]),
                       float(kv.get("collar", "0"))), rest
    if kind == "compose":
        n = int(tok[1])
        factors = []
        for _ in range(n):
            node, rest = _parse_node(rest)
            factors.append(node)
        return Compose(tuple(factors)), rest
    if kind == "inverse":
        node, rest = _parse_node(rest)
        return Inverse(node), rest
    raise ValueError(f"unknown map node {kind!r}")


def ham_time_one(k: float, freq: int, p, cfg: FlowConfig = DEFAULT_FLOW_CONFIG,
                 steps: int | None = None):
    """Time-one Hamiltonian map as a single operation on a point."""
    from .flows import CoveringField

    n = steps if steps is not None else CoveringField(k * freq).suggested_steps(cfg.steps)
    return evaluate(HamFlow(k, freq, n), p, cfg)
