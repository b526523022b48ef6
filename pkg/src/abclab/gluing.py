"""Gluing entire symplectic maps to the identity and correcting the volume.

An entire shear/twist map is blended to the identity by a bump in Re(y);
the blend distorts the real-trace area density g = det, which the explicit
corrector (theta, y) -> (theta, cumulative integral of g) followed by a
bump-Hamiltonian flow removes, leaving a map whose real trace is
symplectic, which is the identity outside the bump support, commutes with
coordinatewise conjugation, and is close to holomorphic for small
coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import QuadratureError, RangeError
from .flows import DEFAULT_FLOW_CONFIG, FlowConfig, smoothstep, smoothstep_d
from .geometry import ComplexCylinderPoint
from .maps import MapExpr, Shear, Twist, compose, evaluate_batch, jacobian_batch

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BumpProfile:
    """Plateau bump in the height: 1 on [-1+eps, 1-eps], 0 outside (-1+eta, 1-eta)."""

    eta: float
    eps: float

    def __post_init__(self):
        if not 0.0 < self.eta < self.eps < 1.0:
            raise RangeError("bump profile needs 0 < eta < eps < 1")

    def __call__(self, y):
        """beta at real heights; exactly 0 / 1 outside the transition bands."""
        t = (1.0 - self.eta - np.abs(np.asarray(y, dtype=float))) \
            / (self.eps - self.eta)
        return smoothstep(t)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        t = (1.0 - self.eta - np.abs(y)) / (self.eps - self.eta)
        return smoothstep_d(t) * (-np.sign(y) / (self.eps - self.eta))


@dataclass(frozen=True)
class EntireMapSpec:
    """Alternating shear/twist chain with real coefficients.

    Exactly volume preserving and conjugation equivariant; commutes with
    Rot_{1/q} when commute_q is set and every twist frequency is a multiple
    of it.
    """

    factors: tuple
    commute_q: int | None = None

    def __post_init__(self):
        for f in self.factors:
            if not isinstance(f, (Shear, Twist)):
                raise RangeError("entire family takes Shear and Twist leaves only")
            if self.commute_q and isinstance(f, Twist):
                for k, _, _ in f.terms:
                    if k % self.commute_q:
                        raise RangeError(
                            f"twist frequency {k} is not a multiple of "
                            f"q={self.commute_q}")

    def as_map(self) -> MapExpr:
        return compose(*self.factors) if self.factors else compose()

    def scaled(self, t: float) -> "EntireMapSpec":
        """Same chain with all coefficients multiplied by t."""
        out = []
        for f in self.factors:
            if isinstance(f, Shear):
                out.append(Shear(tuple(t * c for c in f.coeffs)))
            else:
                out.append(Twist(t * f.a0,
                                 tuple((k, t * a, t * b) for k, a, b in f.terms)))
        return EntireMapSpec(tuple(out), self.commute_q)


def default_entire_family(q: int | None = None,
                          amplitude: float = 0.05) -> EntireMapSpec:
    """Small shear/twist pair used as the stand-in entire deformation."""
    k = q if q else 1
    return EntireMapSpec((
        Shear((0.0, amplitude, -0.4 * amplitude)),
        Twist(0.0, ((k, 0.7 * amplitude, 0.3 * amplitude),)),
    ), commute_q=q)


class GluedMap:
    """beta(Re y)-blend of an entire map with the identity on C/Z x C."""

    def __init__(self, spec: EntireMapSpec, beta: BumpProfile,
                 cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
        self.spec = spec
        self.beta = beta
        self.cfg = cfg
        self._map = spec.as_map()

    def apply(self, theta, y):
        """Blend on coordinate arrays; exact endpoints where beta is 0 or 1.

        The theta combination runs along the short circle representative;
        a tie at distance exactly 1/2 resolves toward the entire map.
        """
        theta = np.asarray(theta)
        y = np.asarray(y)
        th_h, y_h = evaluate_batch(self._map, theta, y, self.cfg)
        b = self.beta(np.real(y))
        dth = np.real(th_h) - np.real(theta)
        dth = -(np.mod(-dth + 0.5, 1.0) - 0.5)   # in (-1/2, 1/2], ties to +
        if np.iscomplexobj(theta) or np.iscomplexobj(y):
            dth = dth + 1j * (np.imag(th_h) - np.imag(theta))
        t_out = theta + b * dth
        y_out = y + b * (y_h - y)
        full = b == 1.0
        t_out = np.where(full, th_h, t_out)
        y_out = np.where(full, y_h, y_out)
        re = np.mod(np.real(t_out), 1.0)
        re = np.where(re >= 1.0, 0.0, re)
        t_out = re + 1j * np.imag(t_out) if np.iscomplexobj(t_out) else re
        return t_out, y_out

    def jacobian_real(self, theta, y):
        """Analytic real-trace Jacobian [tt, ty, yt, yy] on real arrays."""
        theta = np.asarray(theta, dtype=float)
        y = np.asarray(y, dtype=float)
        th_h, y_h, jac = jacobian_batch(self._map, theta, y, self.cfg)
        b = self.beta(y)
        bp = self.beta.derivative(y)
        dth = -(np.mod(-(th_h - theta) + 0.5, 1.0) - 0.5)
        dy = y_h - y
        j_tt = 1.0 + b * (jac[0] - 1.0)
        j_ty = b * jac[1] + bp * dth
        j_yt = b * jac[2]
        j_yy = 1.0 + b * (jac[3] - 1.0) + bp * dy
        return np.array([j_tt, j_ty, j_yt, j_yy])

    def jacobian4(self, zt, zy):
        """Analytic realified Jacobian of the blend on complex arrays.

        D = I + beta (Dh - I) + beta'(Re y) (h - id) (x) e_{Re y}, with Dh the
        realified holomorphic tangent of the entire chain.
        """
        from .diagnostics import analytic_jacobian4

        zt = np.asarray(zt, dtype=complex)
        zy = np.asarray(zy, dtype=complex)
        j4 = analytic_jacobian4(self._map, zt, zy, self.cfg)
        th_h, y_h = evaluate_batch(self._map, zt, zy, self.cfg)
        b = self.beta(zy.real)
        bp = self.beta.derivative(zy.real)
        dth_re = -(np.mod(-(th_h.real - zt.real) + 0.5, 1.0) - 0.5)
        disp = np.array([dth_re, th_h.imag - zt.imag,
                         y_h.real - zy.real, y_h.imag - zy.imag])
        eye = np.zeros_like(j4)
        for i in range(4):
            eye[i, i] = 1.0
        out = eye + b * (j4 - eye)
        out[:, 2] += bp * disp
        return out


def blend(h_r: EntireMapSpec, beta: BumpProfile, p: ComplexCylinderPoint,
          cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> ComplexCylinderPoint:
    """Single-point blend of the entire map with the identity."""
    gm = GluedMap(h_r, beta, cfg)
    t, yv = gm.apply(np.array([p.theta], dtype=complex),
                     np.array([p.y], dtype=complex))
    return ComplexCylinderPoint(complex(t[0]), complex(yv[0]))


def area_density(glued: GluedMap, theta: float, y: float) -> float:
    """g(theta, y) = det of the real-trace Jacobian of the glued map."""
    if abs(y) > 1.0:
        raise RangeError("area density is defined on the real cylinder")
    jac = glued.jacobian_real(np.array([theta]), np.array([y]))
    return float(jac[0, 0] * jac[3, 0] - jac[1, 0] * jac[2, 0])


def area_density_batch(glued: GluedMap, theta, y):
    jac = glued.jacobian_real(theta, y)
    return jac[0] * jac[3] - jac[1] * jac[2]


def area_density_sampler(glued: GluedMap):
    def g(theta, y):
        return area_density_batch(glued, theta, y)

    return g


# -- the volume corrector -------------------------------------------------------

def simpson_doubling(f, a: float, b: float, tol: float = 1e-9,
                     start: int = 64, cap: int = 1 << 14) -> float:
    """Composite Simpson with interval doubling until successive values agree."""
    n = start
    prev = None
    while n <= cap:
        x = np.linspace(a, b, n + 1)
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        val = (b - a) / (3.0 * n) * float(np.sum(w * f(x)))
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
        n *= 2
    raise QuadratureError(f"simpson did not reach {tol} by n={cap}")


class VolumeCorrector:
    """phi_r = phi2_hat o phi1_hat removing the real-trace area distortion.

    phi1 maps (theta, y) to (theta, int_0^y g - 1/2 int_-1^1 g + 1); phi2
    undoes the boundary-collar translations via the time-one flow of a bump
    Hamiltonian whose plateau values are the periodic primitives of the
    collar shift curves and a global (0, tau) translation.  The flow's
    plateau shift is the exact spline derivative of those primitives, so
    the composite cancels on {|Re y| >= 1 - eta} and that region is
    short-circuited to the bitwise identity.
    """

    def __init__(self, g_sampler, beta: BumpProfile, quad_n: int = 64,
                 n_theta: int = 1024, tol: float = 1e-9,
                 cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
        if quad_n < 64:
            raise RangeError("volume corrector needs quad_n >= 64")
        self.beta = beta
        self.eta = beta.eta
        self.cfg = cfg
        self.tol = tol
        eta = beta.eta
        ny = max(256 * quad_n, 16384)
        th_grid = np.arange(n_theta + 1) / n_theta
        y_grid = np.linspace(-1.0, 1.0, ny + 1)
        gv = np.empty((n_theta + 1, ny + 1))
        for i, th in enumerate(th_grid[:-1]):
            gv[i] = g_sampler(np.full(ny + 1, th % 1.0), y_grid)
        gv[-1] = gv[0]
        if np.any(gv <= 0.0):
            raise QuadratureError("area density must stay positive")
        self._check_resolution(g_sampler, quad_n, tol)
        cum = cumulative_simpson(gv, x=y_grid, axis=1, initial=0.0)
        i0 = ny // 2                                 # y = 0 node
        cum -= cum[:, i0][:, None]
        # pad three theta columns on each side for a smooth periodic wrap
        pad = 3
        th_ext = np.concatenate([th_grid[:-1][-pad:] - 1.0, th_grid,
                                 th_grid[1:][:pad] + 1.0])
        cum_ext = np.vstack([cum[:-1][-pad:], cum, cum[1:][:pad]])
        self._interp = RectBivariateSpline(th_ext, y_grid, cum_ext, kx=3, ky=3)
        full = cum[:, -1] - cum[:, 0]
        self._full_spline = CubicSpline(th_grid, full, bc_type="periodic")
        gamma_p = cum[:, -1] - 0.5 * full + 1.0      # image height of y = +1
        gamma_m = cum[:, 0] - 0.5 * full + 1.0       # image height of y = -1
        self.mass_integral = float(np.trapezoid(gamma_p - gamma_m, th_grid))
        self.tau = float(np.trapezoid(gamma_p, th_grid)) - 1.0
        s_plus = gamma_p - 1.0 - self.tau
        s_minus = gamma_m + 1.0 - self.tau
        s_plus = s_plus - np.trapezoid(s_plus, th_grid)   # exact zero mean
        s_minus = s_minus - np.trapezoid(s_minus, th_grid)
        self._s_plus = CubicSpline(th_grid, s_plus, bc_type="periodic")
        self._s_minus = CubicSpline(th_grid, s_minus, bc_type="periodic")
        self._cap_p = self._s_plus.antiderivative()
        self._cap_m = self._s_minus.antiderivative()
        # plateau shifts are step-count exact (constant field); the count
        # only resolves the transition bands
        self._flow_steps = max(256, int(16.0 / eta))

    def _check_resolution(self, g_sampler, quad_n: int, tol: float):
        for th in (0.13, 0.57, 0.88):
            simpson_doubling(
                lambda yy: g_sampler(np.full(yy.shape, th), yy),
                -1.0, 1.0, tol=tol, start=quad_n)

    def _w(self, y, sign: float):
        """Plateau weight: 1 beyond sign*(1-2 eta), 0 inside sign*(1-3 eta)."""
        t = (sign * np.asarray(y, dtype=float) - (1.0 - 3.0 * self.eta)) \
            / self.eta
        return smoothstep(t)

    def _w_d(self, y, sign: float):
        t = (sign * np.asarray(y, dtype=float) - (1.0 - 3.0 * self.eta)) \
            / self.eta
        return smoothstep_d(t) * (sign / self.eta)

    def _ham_flow(self, theta, y, backward: bool = False):
        """Time-one implicit midpoint flow of H = -(w+ Cap+ + w- Cap-)/2.

        On the plateaus the field is (0, s_pm(theta)) exactly, so the
        time-one map is the exact collar shift.
        """
        n = self._flow_steps
        h = -1.0 / n if backward else 1.0 / n
        t = np.array(theta, dtype=float)
        yy = np.array(y, dtype=float)
        for _ in range(n):
            tn, yn = t.copy(), yy.copy()
            for _ in range(60):
                mt = np.mod(0.5 * (t + tn), 1.0)
                my = 0.5 * (yy + yn)
                h_y = -0.5 * (self._w_d(my, 1.0) * self._cap_p(mt)
                              + self._w_d(my, -1.0) * self._cap_m(mt))
                h_t = -0.5 * (self._w(my, 1.0) * self._s_plus(mt)
                              + self._w(my, -1.0) * self._s_minus(mt))
                f_t = 2.0 * h_y
                f_y = -2.0 * h_t
                rt = tn - (t + h * f_t)
                ry = yn - (yy + h * f_y)
                tn = tn - rt
                yn = yn - ry
                if float(np.max(np.abs(rt)) + np.max(np.abs(ry))) <= 1e-14:
                    break
            t, yy = tn, yn
        return t, yy

    def phi1(self, theta, y):
        """(theta, int_0^y g - 1/2 int g + 1) on real arrays; g = 1 off the
        cylinder so the integral extends linearly."""
        theta = np.mod(np.asarray(theta, dtype=float), 1.0)
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, -1.0, 1.0)
        val = self._interp.ev(theta, yc) + (y - yc)
        return theta.copy(), val - 0.5 * self._full_spline(theta) + 1.0

    def phi1_inverse(self, theta, yv):
        """Invert the height component (monotone in y) by bisection."""
        theta = np.mod(np.asarray(theta, dtype=float), 1.0)
        target = np.asarray(yv, dtype=float) \
            + 0.5 * self._full_spline(theta) - 1.0
        lo = np.full(theta.shape, -4.0)
        hi = np.full(theta.shape, 4.0)
        for _ in range(70):
            mid = 0.5 * (lo + hi)
            yc = np.clip(mid, -1.0, 1.0)
            val = self._interp.ev(theta, yc) + (mid - yc)
            high = val > target
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
        return theta.copy(), 0.5 * (lo + hi)

    def apply(self, theta, y, backward: bool = False):
        """phi_r (or its inverse) on real or complex arrays.

        Acts on the real trace, identity on imaginary parts, and bitwise
        identity on {|Re y| >= 1 - eta} where the collar shifts provably
        cancel.
        """
        theta = np.asarray(theta)
        y = np.asarray(y)
        cplx = np.iscomplexobj(theta) or np.iscomplexobj(y)
        rt = np.real(theta).astype(float)
        ry = np.real(y).astype(float)
        out_t = rt.copy()
        out_y = ry.copy()
        idx = np.abs(ry) < 1.0 - self.eta
        if np.any(idx):
            t_in, y_in = rt[idx], ry[idx]
            if backward:
                # (phi2 o phi1)^-1 = phi1^-1 o phi2^-1, phi2^-1 = +tau o flow
                ta, ya = self._ham_flow(t_in, y_in, backward=False)
                tb, yb = self.phi1_inverse(ta, ya + self.tau)
            else:
                ta, ya = self.phi1(t_in, y_in)
                tb, yb = self._ham_flow(ta, ya - self.tau, backward=True)
            out_t[idx] = np.mod(tb, 1.0)
            out_y[idx] = yb
        if cplx:
            return out_t + 1j * np.imag(theta), out_y + 1j * np.imag(y)
        return out_t, out_y

    def seam_consistency(self, n: int = 256) -> float:
        """Generic-path vs identity just inside the short-circuit seam."""
        th = np.arange(n) / n
        val = 0.0
        for s in (1.0, -1.0):
            yy = np.full(n, s * (1.0 - self.eta - 1e-9))
            t1, y1 = self.apply(th, yy)
            dt = np.abs(np.mod(t1 - th + 0.5, 1.0) - 0.5)
            val = max(val, float(np.max(dt + np.abs(y1 - yy))))
        return val


def volume_correction(g_sampler, beta: BumpProfile, quad_n: int = 64,
                      cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> VolumeCorrector:
    """Spec operation wrapper; see VolumeCorrector."""
    return VolumeCorrector(g_sampler, beta, quad_n=quad_n, cfg=cfg)


# -- the corrected map and its report ---------------------------------------------

class CorrectedGlueMap:
    """h = glued o phi_r^-1: symplectic real trace, identity off the support."""

    def __init__(self, glued: GluedMap, corrector: VolumeCorrector):
        self.glued = glued
        self.corrector = corrector

    def apply(self, theta, y):
        t1, y1 = self.corrector.apply(theta, y, backward=True)
        return self.glued.apply(t1, y1)


@dataclass
class GlueReport:
    """(M1)-(M4) residuals of a glued-and-corrected map."""

    det_residual: float
    surface_contained: bool
    support_fixed_bitwise: bool
    structure_residual: float
    form_residual: float
    sigma_residual: float
    mass_integral: float
    tau: float
    grid_n: int
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "m1_det_residual": self.det_residual,
            "m1_surface_contained": float(self.surface_contained),
            "m2_support_fixed_bitwise": float(self.support_fixed_bitwise),
            "m3_structure_residual": self.structure_residual,
            "m3_form_residual": self.form_residual,
            "m4_sigma_residual": self.sigma_residual,
            "mass_integral": self.mass_integral,
            "tau": self.tau,
            "grid_n": float(self.grid_n),
            **{f"param_{k}": float(v) for k, v in self.params.items()},
        }


def fd_jacobian_real(apply_fn, theta, y, step: float = 1e-6):
    """Central-difference real Jacobian [tt, ty, yt, yy] of a map callable."""
    tp, yp = apply_fn(theta + step, y)
    tm, ym = apply_fn(theta - step, y)
    tq, yq = apply_fn(theta, y + step)
    tr, yr = apply_fn(theta, y - step)
    d_tt = (np.mod(tp - tm + 0.5, 1.0) - 0.5) / (2 * step)
    d_ty = (np.mod(tq - tr + 0.5, 1.0) - 0.5) / (2 * step)
    d_yt = (yp - ym) / (2 * step)
    d_yy = (yq - yr) / (2 * step)
    return np.array([d_tt, d_ty, d_yt, d_yy])


def glue_and_report(h_r: EntireMapSpec, beta: BumpProfile, big_r: float,
                    grid_n: int = 64, quad_n: int = 64,
                    cfg: FlowConfig = DEFAULT_FLOW_CONFIG):
    """Build h = glued o phi_r^-1 on the radius-R domain and measure (M1)-(M4).

    Returns (CorrectedGlueMap, GlueReport).
    """
    if big_r <= 1.0:
        raise RangeError("glue domain needs R > 1")
    from .diagnostics import (complex_domain_grid, form_pullback_residual,
                              structure_pullback_residual)

    glued = GluedMap(h_r, beta, cfg)
    corrector = VolumeCorrector(area_density_sampler(glued), beta,
                                quad_n=quad_n, cfg=cfg)
    h = CorrectedGlueMap(glued, corrector)

    th = np.repeat(np.arange(grid_n) / grid_n, grid_n)
    yy = np.tile(np.linspace(-1.0, 1.0, grid_n), grid_n)
    t_out, y_out = h.apply(th, yy)
    contained = bool(np.max(np.abs(y_out)) <= 1.0 + 1e-9)
    jac = fd_jacobian_real(h.apply, th, yy)
    det = jac[0] * jac[3] - jac[1] * jac[2]
    det_res = float(np.max(np.abs(det - 1.0)))

    rng = np.random.default_rng(11)
    n_fix = 512
    t_fix = rng.random(n_fix) + 0.3j * rng.standard_normal(n_fix)
    y_mag = np.concatenate([rng.uniform(1.0 - beta.eta, 1.4, n_fix // 2),
                            rng.uniform(-1.4, -1.0 + beta.eta,
                                        n_fix - n_fix // 2)])
    y_fix = y_mag + 0.3j * rng.standard_normal(n_fix)
    t2, y2 = h.apply(t_fix, y_fix)
    fixed = bool(np.array_equal(t2, np.mod(t_fix.real, 1.0) + 1j * t_fix.imag)
                 and np.array_equal(y2, y_fix))

    zt, zy = complex_domain_grid(big_r, per_axis=5)
    s_res = structure_pullback_residual(h.apply, zt, zy)
    f_res = form_pullback_residual(h.apply, zt, zy)

    t3, y3 = h.apply(np.conj(zt), np.conj(zy))
    t4, y4 = h.apply(zt, zy)
    gap = np.abs(np.mod(t3.real - t4.real + 0.5, 1.0) - 0.5) \
        + np.abs(t3.imag + t4.imag) + np.abs(y3 - np.conj(y4))
    sigma_res = float(np.max(gap))

    report = GlueReport(
        det_residual=det_res,
        surface_contained=contained,
        support_fixed_bitwise=fixed,
        structure_residual=s_res,
        form_residual=f_res,
        sigma_residual=sigma_res,
        mass_integral=corrector.mass_integral,
        tau=corrector.tau,
        grid_n=grid_n,
        params={"eta": beta.eta, "eps": beta.eps, "R": big_r,
                "n_factors": len(h_r.factors)},
    )
    return h, report
