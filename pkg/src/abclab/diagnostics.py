"""Numerical differential geometry on the complexified cylinder.

The complexified cylinder is treated as a real 4-manifold with coordinates
(Re theta, Im theta, Re y, Im y).  Almost complex structures are 4x4 real
matrix fields, complex 2-forms are antisymmetric complex 4x4 matrix fields;
pullbacks, Nijenhuis residuals, the closed-plus-i-linearity criterion for
holomorphic 2-forms, conjugation (anti)equivariance and Cauchy-Riemann
defects are all measured by central differences with recorded steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeError, SingularJacobian
from .flows import DEFAULT_FLOW_CONFIG, FlowConfig
from .maps import MapExpr, evaluate_batch, jacobian_batch

# J_o: multiplication by i per complex coordinate pair, ordering (a, b, c, d)
J_O = np.array([
    [0.0, -1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0, 0.0],
])

# Omega_o = (1/2) d theta ^ dy as a complex bivector on the real tangent space
OMEGA_O = 0.5 * np.array([
    [0, 0, 1, 1j],
    [0, 0, 1j, -1],
    [-1, -1j, 0, 0],
    [-1j, 1, 0, 0],
], dtype=complex)

# d sigma for sigma(theta, y) = (conj theta, conj y)
SIGMA_D = np.diag([1.0, -1.0, 1.0, -1.0])

_PAIRS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_TRIPLES = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]


@dataclass(frozen=True)
class Frame4Point:
    """Real 4-coordinates (Re theta, Im theta, Re y, Im y), Re theta mod 1."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a) % 1.0)

    @property
    def theta(self) -> complex:
        return complex(self.a, self.b)

    @property
    def y(self) -> complex:
        return complex(self.c, self.d)

    @classmethod
    def from_complex(cls, theta: complex, y: complex) -> "Frame4Point":
        return cls(theta.real, theta.imag, y.real, y.imag)


@dataclass
class StructureSample:
    """Almost complex structure sampled at a point: a 4x4 real matrix."""

    point: Frame4Point
    J: np.ndarray

    def square_defect(self) -> float:
        """||J^2 + I||_2; zero for genuine almost complex structures."""
        return float(np.linalg.norm(self.J @ self.J + np.eye(4), 2))


@dataclass
class FormSample:
    """Complex 2-form sampled at a point; antisymmetric by construction."""

    point: Frame4Point
    omega: np.ndarray

    def __post_init__(self):
        self.omega = 0.5 * (self.omega - self.omega.T)


def _as_apply(h):
    """Normalise a map argument to a batched (theta, y) -> (theta, y) callable."""
    if isinstance(h, MapExpr):
        cfg = DEFAULT_FLOW_CONFIG

        def apply_fn(theta, y):
            return evaluate_batch(h, theta, y, cfg)

        return apply_fn
    return h


def fd_jacobian4(apply_fn, zt, zy, step: float = 1e-4) -> np.ndarray:
    """Central-difference real Jacobian field, shape (4, 4) + batch.

    Rows/columns ordered (Re theta, Im theta, Re y, Im y); the theta row
    uses the short circle representative.
    """
    apply_fn = _as_apply(apply_fn)
    zt = np.asarray(zt, dtype=complex)
    zy = np.asarray(zy, dtype=complex)
    offs = [(step, 0, 0, 0), (0, step, 0, 0), (0, 0, step, 0), (0, 0, 0, step)]
    cols = []
    for da, db, dc, dd in offs:
        tp, yp = apply_fn(zt + complex(da, db), zy + complex(dc, dd))
        tm, ym = apply_fn(zt - complex(da, db), zy - complex(dc, dd))
        dre = (np.mod(tp.real - tm.real + 0.5, 1.0) - 0.5) / (2 * step)
        dim = (tp.imag - tm.imag) / (2 * step)
        dyr = (yp.real - ym.real) / (2 * step)
        dyi = (yp.imag - ym.imag) / (2 * step)
        cols.append([dre, dim, dyr, dyi])
    arr = np.array(cols)           # (col, row) + batch
    return np.swapaxes(arr, 0, 1)


def analytic_jacobian4(m: MapExpr, zt, zy,
                       cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> np.ndarray:
    """Realified variational Jacobian of a holomorphic map expression."""
    zt = np.asarray(zt, dtype=complex)
    zy = np.asarray(zy, dtype=complex)
    _, _, jc = jacobian_batch(m, zt, zy, cfg)
    out = np.zeros((4, 4) + zt.shape)
    blocks = {(0, 0): jc[0], (0, 1): jc[1], (1, 0): jc[2], (1, 1): jc[3]}
    for (bi, bj), val in blocks.items():
        out[2 * bi, 2 * bj] = val.real
        out[2 * bi, 2 * bj + 1] = -val.imag
        out[2 * bi + 1, 2 * bj] = val.imag
        out[2 * bi + 1, 2 * bj + 1] = val.real
    return out


def _batch_inv4(jac: np.ndarray) -> np.ndarray:
    mats = np.moveaxis(jac.reshape(4, 4, -1), -1, 0)
    conds = np.linalg.cond(mats)
    if np.any(~np.isfinite(conds)) or np.any(conds > 1e6):
        raise SingularJacobian(
            f"jacobian condition number up to {np.max(conds):.3e}")
    inv = np.linalg.inv(mats)
    return np.moveaxis(inv, 0, -1).reshape(jac.shape)


def _mat_apply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(4,4)+batch times (4,4)+batch."""
    return np.einsum("ik...,kj...->ij...", a, b)


def pullback_structure_field(h, zt, zy, step: float = 1e-4,
                             jac=None) -> np.ndarray:
    """h*J_o = Dh^-1 J_o Dh as a (4,4)+batch field."""
    if jac is None:
        jac = fd_jacobian4(h, zt, zy, step)
    inv = _batch_inv4(jac)
    return _mat_apply(inv, _mat_apply(J_O.reshape(4, 4, *(1,) * (jac.ndim - 2)),
                                      jac))


def pullback_structure(h, p: Frame4Point, step: float = 1e-4) -> StructureSample:
    """Spec operation: the pulled-back structure at one point."""
    field = pullback_structure_field(h, np.array([p.theta]), np.array([p.y]),
                                     step)
    return StructureSample(p, field[:, :, 0])


def pullback_form_field(h, zt, zy, step: float = 1e-4, jac=None) -> np.ndarray:
    """h*Omega_o = Dh^T Omega_o Dh as a complex (4,4)+batch field."""
    if jac is None:
        jac = fd_jacobian4(h, zt, zy, step)
    om = OMEGA_O.reshape(4, 4, *(1,) * (jac.ndim - 2))
    jt = np.swapaxes(jac, 0, 1)
    return _mat_apply(jt.astype(complex), _mat_apply(om, jac.astype(complex)))


def structure_pullback_residual(h, zt, zy, step: float = 1e-4) -> float:
    """sup_2-norm of h*J_o - J_o over the batch."""
    field = pullback_structure_field(h, zt, zy, step)
    diff = field - J_O.reshape(4, 4, *(1,) * (field.ndim - 2))
    mats = np.moveaxis(diff.reshape(4, 4, -1), -1, 0)
    return float(np.max(np.linalg.norm(mats, ord=2, axis=(1, 2))))


def form_pullback_residual(h, zt, zy, step: float = 1e-4) -> float:
    """sup over batch and bivector entries of |h*Omega_o - Omega_o|."""
    field = pullback_form_field(h, zt, zy, step)
    diff = field - OMEGA_O.reshape(4, 4, *(1,) * (field.ndim - 2))
    return float(np.max(np.abs(diff)))


# -- Nijenhuis tensor -----------------------------------------------------------

def nijenhuis_residual(j_sampler, p: Frame4Point, step: float = 1e-4) -> float:
    """max over coordinate pairs of |N_J(e_i, e_j)| with FD Lie brackets.

    j_sampler(points4) takes an (n, 4) array of real coordinates and returns
    (n, 4, 4) structure samples.
    """
    x0 = np.array([p.a, p.b, p.c, p.d])
    j0 = j_sampler(x0[None, :])[0]

    def d_along(v):
        vn = np.asarray(v, dtype=float)
        jp = j_sampler((x0 + step * vn)[None, :])[0]
        jm = j_sampler((x0 - step * vn)[None, :])[0]
        return (jp - jm) / (2 * step)

    d_coord = [d_along(np.eye(4)[m]) for m in range(4)]
    worst = 0.0
    for i, j in _PAIRS:
        e_i = np.eye(4)[i]
        e_j = np.eye(4)[j]
        term1 = j0 @ (d_coord[i] @ e_j - d_coord[j] @ e_i)
        term2 = d_along(j0 @ e_i) @ e_j
        term3 = d_along(j0 @ e_j) @ e_i
        n_vec = term1 - term2 + term3
        worst = max(worst, float(np.linalg.norm(n_vec)))
    return worst


def _jac4_of(h, analytic: bool, step: float):
    """Pick the best available tangent evaluator for the map argument."""
    if analytic and isinstance(h, MapExpr):
        return lambda zt, zy: analytic_jacobian4(h, zt, zy)
    if hasattr(h, "jacobian4"):
        return h.jacobian4
    apply_fn = _as_apply(h)
    return lambda zt, zy: fd_jacobian4(apply_fn, zt, zy,
                                       step=min(step / 10.0, 1e-5))


def map_structure_sampler(h, step: float = 1e-4, analytic: bool = False):
    """J-field sampler of h*J_o for use in nijenhuis_residual."""
    jac_of = _jac4_of(h, analytic, step)

    def sampler(points4: np.ndarray) -> np.ndarray:
        zt = points4[:, 0] + 1j * points4[:, 1]
        zy = points4[:, 2] + 1j * points4[:, 3]
        field = pullback_structure_field(None, zt, zy, jac=jac_of(zt, zy))
        return np.moveaxis(field, -1, 0)

    return sampler


def map_form_sampler(h, step: float = 1e-4, analytic: bool = False):
    jac_of = _jac4_of(h, analytic, step)

    def sampler(points4: np.ndarray) -> np.ndarray:
        zt = points4[:, 0] + 1j * points4[:, 1]
        zy = points4[:, 2] + 1j * points4[:, 3]
        field = pullback_form_field(None, zt, zy, jac=jac_of(zt, zy))
        return np.moveaxis(field, -1, 0)

    return sampler


def constant_structure_sampler(j_mat: np.ndarray):
    def sampler(points4: np.ndarray) -> np.ndarray:
        return np.broadcast_to(j_mat, (points4.shape[0], 4, 4)).copy()

    return sampler


def constant_form_sampler(om: np.ndarray):
    def sampler(points4: np.ndarray) -> np.ndarray:
        return np.broadcast_to(om, (points4.shape[0], 4, 4)).copy()

    return sampler


def nonintegrable_structure_sampler(kappa: float = 1.0):
    """Hand-built non-integrable J: conjugate J_o by a height-dependent
    rotation of the (Re theta, Re y) plane, mixing the two complex lines.

    The Nijenhuis tensor of this field is of order kappa, stable under the
    differencing step.
    """

    def sampler(points4: np.ndarray) -> np.ndarray:
        out = np.empty((points4.shape[0], 4, 4))
        for i, pt in enumerate(points4):
            phi = kappa * pt[2]
            a = np.eye(4)
            a[0, 0] = math.cos(phi)
            a[0, 2] = -math.sin(phi)
            a[2, 0] = math.sin(phi)
            a[2, 2] = math.cos(phi)
            out[i] = a @ J_O @ a.T
        return out

    return sampler


# -- holomorphic 2-form criterion --------------------------------------------------

def holomorphic_form_residual(om_sampler, j_sampler, p: Frame4Point,
                              step: float = 1e-4) -> float:
    """max of the i-linearity defect and the FD exterior-derivative norm.

    (a) |Omega(J u, v) - i Omega(u, v)| over coordinate pairs;
    (b) |dOmega(e_i, e_j, e_k)| over coordinate triples by central
        differences of the form field.
    """
    x0 = np.array([p.a, p.b, p.c, p.d])
    om0 = om_sampler(x0[None, :])[0]
    j0 = j_sampler(x0[None, :])[0]
    lin = j0.T.astype(complex) @ om0 - 1j * om0
    res_a = float(np.max(np.abs(lin)))

    d_om = []
    for m in range(4):
        e = np.eye(4)[m]
        op = om_sampler((x0 + step * e)[None, :])[0]
        om_ = om_sampler((x0 - step * e)[None, :])[0]
        d_om.append((op - om_) / (2 * step))
    res_b = 0.0
    for i, j, k in _TRIPLES:
        val = d_om[i][j, k] - d_om[j][i, k] + d_om[k][i, j]
        res_b = max(res_b, abs(val))
    return max(res_a, res_b)


# -- conjugation (anti)equivariance -------------------------------------------------

def sigma_map_residual(h, points_theta, points_y) -> float:
    """sup |sigma(h(z)) - h(sigma(z))| over the sample points."""
    apply_fn = _as_apply(h)
    zt = np.asarray(points_theta, dtype=complex)
    zy = np.asarray(points_y, dtype=complex)
    t1, y1 = apply_fn(np.conj(zt), np.conj(zy))
    t2, y2 = apply_fn(zt, zy)
    gap = np.abs(np.mod(t1.real - t2.real + 0.5, 1.0) - 0.5) \
        + np.abs(t1.imag + t2.imag) + np.abs(y1 - np.conj(y2))
    return float(np.max(gap))


def sigma_structure_residual(j_sampler, p: Frame4Point) -> float:
    """Anticommutation defect |(D sigma)^-1 J(sigma p) D sigma + J(p)|."""
    x0 = np.array([p.a, p.b, p.c, p.d])
    xs = x0 * np.array([1.0, -1.0, 1.0, -1.0])
    j_at = j_sampler(x0[None, :])[0]
    j_sig = j_sampler(xs[None, :])[0]
    return float(np.linalg.norm(SIGMA_D @ j_sig @ SIGMA_D + j_at, 2))


def sigma_residuals(h, p: Frame4Point, step: float = 1e-4) -> tuple:
    """(map residual, structure anticommutation residual) for a map h."""
    map_res = sigma_map_residual(h, np.array([p.theta]), np.array([p.y]))
    sampler = map_structure_sampler(h, step=step)
    struct_res = sigma_structure_residual(sampler, p)
    return map_res, struct_res


# -- Cauchy-Riemann -----------------------------------------------------------------

def cauchy_riemann_residual(h, p: Frame4Point, step: float = 1e-4) -> float:
    """|Dh J_o - J_o Dh| with a central-difference Dh at the point."""
    jac = fd_jacobian4(h, np.array([p.theta]), np.array([p.y]), step)[:, :, 0]
    return float(np.linalg.norm(jac @ J_O - J_O @ jac, 2))


def cauchy_riemann_residual_general(f, z: np.ndarray, step: float = 1e-4) -> float:
    """CR defect of f: C^n -> C^m near z via d f / d conj(z_j) norms.

    f maps an (n,) complex vector to an (m,) complex vector; the residual is
    the max over j of |(d/dx_j + i d/dy_j) f| / 2.
    """
    z = np.asarray(z, dtype=complex)
    worst = 0.0
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = 1.0
        dx = (f(z + step * e) - f(z - step * e)) / (2 * step)
        dy = (f(z + 1j * step * e) - f(z - 1j * step * e)) / (2 * step)
        dbar = 0.5 * (dx + 1j * dy)
        worst = max(worst, float(np.max(np.abs(dbar))))
    return worst


# -- convergence tracking -------------------------------------------------------------

class ConvergenceTracker:
    """Stagewise sup distances of structure/form fields at tracked points.

    Distances are the operator 2-norm for structures and the max bivector
    entry for forms, matching the module norms used everywhere else; the
    budget at stage n is strict inequality against 2^-n.
    """

    def __init__(self, points4: np.ndarray):
        self.points4 = np.asarray(points4, dtype=float)
        self.j_stages: list = []
        self.om_stages: list = []

    def add_stage(self, j_samples: np.ndarray, om_samples: np.ndarray) -> None:
        self.j_stages.append(np.asarray(j_samples))
        self.om_stages.append(np.asarray(om_samples))

    def add_stage_from_map(self, h, step: float = 1e-4,
                           analytic: bool = False) -> None:
        js = map_structure_sampler(h, step=step, analytic=analytic)(self.points4)
        oms = map_form_sampler(h, step=step, analytic=analytic)(self.points4)
        self.add_stage(js, oms)

    def distances(self) -> list:
        out = []
        for n in range(1, len(self.j_stages)):
            dj = self.j_stages[n] - self.j_stages[n - 1]
            dom = self.om_stages[n] - self.om_stages[n - 1]
            d_j = float(np.max(np.linalg.norm(dj, ord=2, axis=(1, 2))))
            d_om = float(np.max(np.abs(dom)))
            out.append({"n": n, "d_J": d_j, "d_Omega": d_om,
                        "budget": 2.0 **(-n),
                        "ok": d_j < 2.0 **(-n) and d_om < 2.0 **(-n)})
        return out

    def report(self) -> dict:
        ds = self.distances()
        return {"stages": len(self.j_stages), "distances": ds,
                "ok": all(d["ok"] for d in ds)}


def convergence_tracker(points4: np.ndarray) -> ConvergenceTracker:
    return ConvergenceTracker(points4)


# -- sample grids -----------------------------------------------------------------------

def complex_domain_grid(rho: float, per_axis: int = 5,
                        seed: int | None = None) -> tuple:
    """Points of the complexified cylinder domain of radius rho.

    Regular grid over the bounding box filtered by the defining inequality
    e^{-2 Im theta} + e^{2 Im theta} + |y|^2 <= 3 rho; with a seed, jittered
    deterministically.
    """
    if rho <= 1.0:
        raise RangeError("complex domain needs rho > 1")
    b_max = 0.5 * math.acosh(max((3.0 * rho - 1.0) / 2.0, 1.0))
    y_max = math.sqrt(max(3.0 * rho - 2.0, 0.0))
    re_t = np.arange(per_axis) / per_axis
    im_t = np.linspace(-0.9 * b_max, 0.9 * b_max, per_axis)
    re_y = np.linspace(-0.95 * y_max, 0.95 * y_max, per_axis)
    im_y = np.linspace(-0.6 * y_max, 0.6 * y_max, per_axis)
    a, b, c, d = np.meshgrid(re_t, im_t, re_y, im_y, indexing="ij")
    a, b, c, d = (v.ravel() for v in (a, b, c, d))
    if seed is not None:
        rng = np.random.default_rng(seed)
        a = np.mod(a + rng.random(a.size) / per_axis, 1.0)
        b = b + (rng.random(b.size) - 0.5) * b_max / per_axis
        c = c + (rng.random(c.size) - 0.5) * y_max / per_axis
        d = d + (rng.random(d.size) - 0.5) * y_max / per_axis
    keep = np.exp(-2 * b) + np.exp(2 * b) + c **2 + d **2 <= 3.0 * rho
    return (a[keep] + 1j * b[keep], c[keep] + 1j * d[keep])


def random_tracking_points(rho: float, count: int, seed: int,
                           y_band: float | None = None) -> np.ndarray:
    """Deterministic tracked-point set in the rho-domain, as (n, 4) reals.

    y_band restricts |Re y| <= y_band (used to keep tracked points off the
    boundary collar where cutoff deformations concentrate).
    """
    rng = np.random.default_rng(seed)
    b_max = 0.5 * math.acosh(max((3.0 * rho - 1.0) / 2.0, 1.0))
    out = []
    while len(out) < count:
        a = rng.random()
        b = rng.uniform(-0.9 * b_max, 0.9 * b_max)
        limit = y_band if y_band is not None else 1.5
        c = rng.uniform(-limit, limit)
        d = rng.uniform(-0.8, 0.8)
        if math.exp(-2 * b) + math.exp(2 * b) + c **2 + d **2 <= 3.0 * rho:
            out.append((a, b, c, d))
    return np.array(out)
