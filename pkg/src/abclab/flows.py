"""Implicit midpoint integration of the conjugator Hamiltonians.

The field of H(theta, y) = K (1 - y^2) c(y) cos(2 pi f theta) is integrated
in the covering coordinate u = f theta, where it equals the f-independent
unit-frequency field of amplitude K f.  This removes the stiffness of high
angular frequencies, and forming u = frac(f theta) exactly keeps
commutation with rotations by multiples of 1/f at roundoff level.  c(y) is
an optional plateau cutoff vanishing near |y| = 1 so flows glue to
rotations across the boundary circles.

The update is x' = x + h F((x + x')/2), solved by Newton iteration; its
exact derivative (I - h/2 DF)^-1 (I + h/2 DF) propagates tangent frames, so
Jacobians of flows are available without finite differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import IntegratorError, RangeError

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

TWO_PI = 2.0 * math.pi

_SPLIT = float(1 << 27)
_EXACT_FREQ_LIMIT = 1 << 26


@dataclass(frozen=True)
class FlowConfig:
    """Integrator policy: base steps per unit time and implicit-solve tolerance."""

    steps: int = 256
    tol: float = 1e-14
    max_newton: int = 160

    def __post_init__(self):
        if self.steps < 16:
            raise RangeError("flow config needs at least 16 steps per unit time")
        if self.tol > 1e-12:
            raise RangeError("flow config tolerance must be <= 1e-12")


DEFAULT_FLOW_CONFIG = FlowConfig()


def exact_frac_mul(freq: int, theta: np.ndarray) -> np.ndarray:
    """frac(freq * theta) with error at the last place of the result.

    freq is an exact nonnegative integer.  For freq < 2^26 the product is
    formed against a 27-bit hi/lo split of theta, so the integer part is
    removed before any rounding.  Larger frequencies fall back to exact
    rational arithmetic per element.
    """
    theta = np.asarray(theta, dtype=float)
    if freq < 0:
        raise RangeError("frequency must be nonnegative")
    if freq <= 1:
        r = np.mod(theta * freq, 1.0)
        r = np.where(r >= 1.0, 0.0, r)
        return r
    if freq < _EXACT_FREQ_LIMIT:
        hi = np.round(theta * _SPLIT) / _SPLIT
        lo = theta - hi
        p1 = freq * hi          # exact: (<=26 bits) * (<=27-bit significand)
        p1 -= np.floor(p1)
        r = np.mod(p1 + freq * lo, 1.0)
        r = np.where(r >= 1.0, 0.0, r)
        return r
    flat = theta.ravel()
    out = np.empty_like(flat)
    for i, t in enumerate(flat):
        out[i] = float(Fraction(freq) * Fraction(t) % 1)
    return out.reshape(theta.shape)


# -- plateau cutoff -----------------------------------------------------------

_TINY = 1e-9


def _smoothstep_all(t):
    """(s, s', s'') of the exp(-1/t) smoothstep, branch-free vector arithmetic."""
    t = np.asarray(t, dtype=float)
    lo = t <= _TINY
    hi = t >= 1.0 - _TINY
    tc = np.clip(t, _TINY, 1.0 - _TINY)
    oc = 1.0 - tc
    a = np.exp(-1.0 / tc)
    b = np.exp(-1.0 / oc)
    it2 = 1.0 / (tc * tc)
    io2 = 1.0 / (oc * oc)
    da = a * it2
    db = -b * io2
    d2a = a * (it2 * it2 - 2.0 * it2 / tc)
    d2b = b * (io2 * io2 - 2.0 * io2 / oc)
    s = a + b
    sp = da + db
    spp = d2a + d2b
    inv_s = 1.0 / s
    val = a * inv_s
    d1 = (da - val * sp) * inv_s
    d2 = (d2a - 2.0 * d1 * sp - val * spp) * inv_s
    val = np.where(lo, 0.0, np.where(hi, 1.0, val))
    d1 = np.where(lo | hi, 0.0, d1)
    d2 = np.where(lo | hi, 0.0, d2)
    return val, d1, d2


def smoothstep(t):
    """C^inf step: 0 for t <= 0, 1 for t >= 1, exp(-1/t)-interpolated between."""
    return _smoothstep_all(t)[0]


def smoothstep_d(t):
    return _smoothstep_all(t)[1]


def cutoff_vals(y, collar: float):
    """(c, dc/dy, d2c/dy2) of the plateau cutoff at Re y."""
    ry = np.real(np.asarray(y))
    if collar <= 0.0:
        one = np.ones_like(ry)
        zero = np.zeros_like(ry)
        return one, zero, zero
    sgn = np.where(ry >= 0.0, 1.0, -1.0)
    t = (1.0 - collar - sgn * ry) / collar
    val, d1, d2 = _smoothstep_all(t)
    dtdy = -sgn / collar
    return val, d1 * dtdy, d2 / (collar * collar)


def plateau_weight(y, collar: float):
    """1 on |Re y| <= 1 - 2 collar, 0 on |Re y| >= 1 - collar, C^inf between."""
    return cutoff_vals(y, collar)[0]


def plateau_weight_dy(y, collar: float):
    return cutoff_vals(y, collar)[1]


# -- the covering field -------------------------------------------------------

class CoveringField:
    """Hamiltonian field of K_eff (1 - y^2) c(y) cos(2 pi u) in (u, y).

    With the form (1/2) du ^ dy the field is (2 dH/dy, -2 dH/du).  For
    complex states the cutoff acts on Re y, so the field is holomorphic
    exactly where the cutoff is locally constant.
    """

    def __init__(self, k_eff: float, collar: float = 0.0):
        self.k_eff = float(k_eff)
        self.collar = float(collar)

    def __call__(self, u, y):
        k = self.k_eff
        c, cp, _ = cutoff_vals(y, self.collar)
        cos_u = np.cos(TWO_PI * u)
        sin_u = np.sin(TWO_PI * u)
        du = 2.0 * k * cos_u * (-2.0 * y * c + (1.0 - y * y) * cp)
        dy = 2.0 * k * TWO_PI * (1.0 - y * y) * c * sin_u
        return du, dy

    def field_and_jacobian(self, u, y):
        """Field plus derivative entries, sharing the trig and cutoff work.

        In the cutoff band for complex y the derivative is the Newton model
        only (the true tangent map there is real-linear, not complex-linear).
        """
        k2 = 2.0 * self.k_eff
        c, cp, cpp = cutoff_vals(y, self.collar)
        cos_u = np.cos(TWO_PI * u)
        sin_u = np.sin(TWO_PI * u)
        w = 1.0 - y * y
        g = -2.0 * y * c + w * cp
        g_y = -2.0 * c - 4.0 * y * cp + w * cpp
        fu = k2 * cos_u * g
        fy = k2 * TWO_PI * w * c * sin_u
        a_uu = -k2 * TWO_PI * sin_u * g
        a_uy = k2 * cos_u * g_y
        a_yu = k2 * TWO_PI **2 * w * c * cos_u
        a_yy = k2 * TWO_PI * sin_u * g
        return fu, fy, a_uu, a_uy, a_yu, a_yy

    def suggested_steps(self, base: int) -> int:
        """Keep h * sup|DF| small enough for a fast frozen-Jacobian solve."""
        return max(base, int(math.ceil(640.0 * abs(self.k_eff))))


def flow_time_one(field: CoveringField, u0, y0, cfg: FlowConfig,
                  backward: bool = False, with_jacobian: bool = False,
                  n_steps: int | None = None):
    """Time-one implicit midpoint map of the field, batched over arrays.

    Returns (u, y) or (u, y, J) with J of shape (4,) + batch holding
    [du/du0, du/dy0, dy/du0, dy/dy0] propagated exactly through the scheme.
    The Jacobian of the implicit solve is frozen per step at the step start;
    iterations correct the exact residual, so the converged state solves the
    true midpoint equations.  The previous step's increment warm-starts the
    solve.
    """
    u = np.array(u0, copy=True)
    y = np.array(y0, copy=True)
    if u.size == 0:
        if with_jacobian:
            return u, y, np.zeros((4,) + u.shape, dtype=u.dtype)
        return u, y
    if n_steps is None:
        n_steps = field.suggested_steps(cfg.steps)
    h = -1.0 / n_steps if backward else 1.0 / n_steps
    if _kernels is not None:
        return _flow_kernel(field, u, y, cfg, h, n_steps, with_jacobian)
    hh = 0.5 * h
    if with_jacobian:
        one = np.ones_like(u)
        zero = np.zeros_like(u)
        jac = [one.copy(), zero.copy(), zero.copy(), one + 0.0]
    inc_u = None
    for _ in range(n_steps):
        fu, fy, a_uu, a_uy, a_yu, a_yy = field.field_and_jacobian(u, y)
        if inc_u is None:
            un = u + h * fu
            yn = y + h * fy
        else:
            un = u + inc_u
            yn = y + inc_y
        b_uu = 1.0 - hh * a_uu
        b_uy = -hh * a_uy
        b_yu = -hh * a_yu
        b_yy = 1.0 - hh * a_yy
        inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
        converged = False
        err = math.inf
        for it in range(cfg.max_newton):
            mu = 0.5 * (u + un)
            my = 0.5 * (y + yn)
            if it > 0 and it % 16 == 0:
                _, _, a_uu, a_uy, a_yu, a_yy = field.field_and_jacobian(mu, my)
                b_uu = 1.0 - hh * a_uu
                b_uy = -hh * a_uy
                b_yu = -hh * a_yu
                b_yy = 1.0 - hh * a_yy
                inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
            fu, fy = field(mu, my)
            ru = un - u - h * fu
            ry = yn - y - h * fy
            du = (b_yy * ru - b_uy * ry) * inv_det
            dy = (b_uu * ry - b_yu * ru) * inv_det
            un -= du
            yn -= dy
            err = float(np.max(np.abs(du)) + np.max(np.abs(dy)))
            if err <= cfg.tol:
                converged = True
                break
        if not converged:
            raise IntegratorError(
                f"implicit solve stalled at residual {err:.3e} (steps={n_steps})")
        inc_u = un - u
        inc_y = yn - y
        if with_jacobian:
            mu = 0.5 * (u + un)
            my = 0.5 * (y + yn)
            _, _, a_uu, a_uy, a_yu, a_yy = field.field_and_jacobian(mu, my)
            p_uu = 1.0 + hh * a_uu
            p_uy = hh * a_uy
            p_yu = hh * a_yu
            p_yy = 1.0 + hh * a_yy
            b_uu = 1.0 - hh * a_uu
            b_uy = -hh * a_uy
            b_yu = -hh * a_yu
            b_yy = 1.0 - hh * a_yy
            inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
            c_uu = (b_yy * p_uu - b_uy * p_yu) * inv_det
            c_uy = (b_yy * p_uy - b_uy * p_yy) * inv_det
            c_yu = (b_uu * p_yu - b_yu * p_uu) * inv_det
            c_yy = (b_uu * p_yy - b_yu * p_uy) * inv_det
            jac = [c_uu * jac[0] + c_uy * jac[2],
                   c_uu * jac[1] + c_uy * jac[3],
                   c_yu * jac[0] + c_yy * jac[2],
                   c_yu * jac[1] + c_yy * jac[3]]
        u, y = un, yn
    if with_jacobian:
        return u, y, np.array(jac)
    return u, y


def _flow_kernel(field: CoveringField, u, y, cfg: FlowConfig, h: float,
                 n_steps: int, with_jacobian: bool):
    """Dispatch one time-one integration to the compiled per-point kernels."""
    shape = u.shape
    is_complex = np.iscomplexobj(u) or np.iscomplexobj(y)
    dtype = complex if is_complex else float
    uf = np.ascontiguousarray(u, dtype=dtype).ravel()
    yf = np.ascontiguousarray(y, dtype=dtype).ravel()
    jac = np.zeros((4, uf.size), dtype=dtype) if with_jacobian \
        else np.zeros((4, 0), dtype=dtype)
    fail = np.zeros(uf.size, dtype=np.int8)
    kern = _kernels.integrate_cplx if is_complex else _kernels.integrate_real
    kern(uf, yf, float(field.k_eff), float(field.collar), h, n_steps,
         cfg.tol, cfg.max_newton, with_jacobian, jac, fail)
    if fail.any():
        raise IntegratorError(
            f"implicit solve stalled on {int(fail.sum())} points (steps={n_steps})")
    u_out = uf.reshape(shape)
    y_out = yf.reshape(shape)
    if with_jacobian:
        return u_out, y_out, jac.reshape((4,) + shape)
    return u_out, y_out


def ham_flow_batch(k: float, freq: int, theta, y, cfg: FlowConfig,
                   backward: bool = False, collar: float = 0.0,
                   with_jacobian: bool = False, n_steps: int | None = None):
    """Time-one map of K (1-y^2) c(y) cos(2 pi freq theta) on coordinate arrays.

    Real or complex batches; the real part of theta is reduced mod 1 on
    output.  Via u = freq * theta this is the unit-frequency field of
    amplitude K * freq integrated for unit time.  n_steps overrides the
    automatic step policy; flows belonging to a named map must always pass
    the step count stored with the map so evaluation stays deterministic.
    """
    theta = np.asarray(theta)
    y = np.asarray(y)
    is_complex = np.iscomplexobj(theta) or np.iscomplexobj(y)
    if with_jacobian and is_complex and collar > 0.0:
        raise RangeError("variational jacobian is complex-linear; use finite "
                         "differences for cutoff flows on complex points")
    field = CoveringField(k * freq, collar)
    if is_complex:
        theta = theta.astype(complex)
        y = y.astype(complex)
        u0 = exact_frac_mul(freq, theta.real) + 1j * (freq * theta.imag)
    else:
        theta = theta.astype(float)
        y = y.astype(float)
        u0 = exact_frac_mul(freq, theta)
    out = flow_time_one(field, u0, y.copy(), cfg, backward=backward,
                        with_jacobian=with_jacobian, n_steps=n_steps)
    if with_jacobian:
        u1, y1, jac = out
    else:
        u1, y1 = out
    theta_out = theta + (u1 - u0) / freq
    if is_complex:
        re = np.mod(theta_out.real, 1.0)
        re = np.where(re >= 1.0, 0.0, re)
        theta_out = re + 1j * theta_out.imag
    else:
        theta_out = np.mod(theta_out, 1.0)
        theta_out = np.where(theta_out >= 1.0, 0.0, theta_out)
    if with_jacobian:
        # d theta_out / d theta = du/du0, d theta_out / dy = (du/dy0)/freq,
        # dy_out / d theta = (dy/du0) * freq, dy_out / dy = dy/dy0
        jac = np.array([jac[0], jac[1] / freq, jac[2] * freq, jac[3]])
        return theta_out, y1, jac
    return theta_out, y1
