"""The approximation-by-conjugacy induction on the cylinder, with lifts.

Stages carry an exact rational angle, a conjugator stack, and measured
certificates: curve/orbit covering radii, conjugacy-identity residuals,
symplecticity, separation and growth bookkeeping, and the exact Liouville
budget chain.  Denominators explode doubly exponentially (that is the
point), so all angle arithmetic is exact, large steps are dyadic, and
certificates switch from direct enumeration to exact budget arguments once
denominators leave the enumerable range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (CertificateFailure, RangeError, SearchExhausted,
                     WitnessNotFound)
from .flows import DEFAULT_FLOW_CONFIG, CoveringField, FlowConfig
from .geometry import (CylinderPoint, DiskPoint, SpherePoint,
                       cyl_distance_arrays)
from .maps import (Compose, HamFlow, Inverse, MapExpr, Rotation, compose,
                   evaluate_batch, identity_map, inverse, jacobian_batch)
from .rational import (RationalAngle, farey_separation, liouville_budget,
                       liouville_budget_exactly_computable,
                       liouville_budget_log2)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ShiftedAngle:
    """base + 2^-e, exact, for steps too small to keep as one big rational.

    The reduced denominator is odd(base.q) * 2^e; it is never materialised.
    """

    base: RationalAngle
    e: int

    @property
    def q_bit_length(self) -> int:
        return (self.base.q >> _tz(self.base.q)).bit_length() + self.e

    def q_at_least(self, n: int) -> bool:
        # q >= 2^(bits-1), so bits - 1 >= bitlen(n) guarantees q >= n
        return self.q_bit_length - 1 >= n.bit_length()

    def gap_from_base_log2(self) -> float:
        return -float(self.e)

    def to_float(self) -> float:
        # 2^-e underflows for every e used here
        return self.base.to_float()

    def __str__(self) -> str:
        return f"{self.base}+2^-{self.e}"

    @classmethod
    def parse(cls, text: str) -> "ShiftedAngle":
        b, e = text.split("+2^-")
        return cls(RationalAngle.parse(b), int(e))


Angle = RationalAngle  # or ShiftedAngle; union used informally below


def _tz(n: int) -> int:
    return (n & -n).bit_length() - 1


def angle_to_float(a) -> float:
    return a.to_float()


def angle_q_lower_bits(a) -> int:
    """Bit length of the reduced denominator (exact for RationalAngle)."""
    if isinstance(a, ShiftedAngle):
        return a.q_bit_length
    return a.q.bit_length()


def angle_str(a) -> str:
    return str(a)


def parse_angle(text: str):
    if "+2^-" in text:
        return ShiftedAngle.parse(text)
    return RationalAngle.parse(text)


# -- engine policy -------------------------------------------------------------

@dataclass(frozen=True)
class EnginePolicy:
    """Tunable constants of the stage construction; persisted with runs."""

    grid_n: int = 64
    cert_samples: int = 2048        # circle samples for conjugator searches
    curve_samples: int = 8192       # samples for curve covering certificates
    collar: float = 0.02            # plateau cutoff margin of conjugator flows
    base_steps: int = 256
    newton_tol: float = 1e-14
    safety: float = 2.0
    curve_share: float = 0.66       # fraction of a stage level granted to the curve
    stage1_eps: float = 0.10        # density parameter of the first conjugator
    stage1_min_den: int = 6         # density-driven minimum denominator of alpha_1
    k_eff_cap: float = 64.0
    density_retries: int = 4
    orbit_start: int = 256
    orbit_cap: int = 1 << 21
    lookahead: bool = True          # aim the deep refinement at the final level
    stages_planned: int = 3
    dyadic_threshold: int = 1 << 24
    direct_k_cap: int = 64          # enumerate growth/separation for q_n <= cap
    theta0_candidates: int = 64

    @property
    def flow_config(self) -> FlowConfig:
        return FlowConfig(steps=self.base_steps, tol=self.newton_tol)

    def level(self, n: int) -> float:
        return 3.0 **(-n)

    def level_slack(self, n: int) -> float:
        return 3.0 **(-n) + 2.0 / self.grid_n

    def curve_target(self, n: int) -> float:
        return self.curve_share * self.level_slack(n)


DEFAULT_POLICY = EnginePolicy()


# -- covering radii ------------------------------------------------------------

def _grid(grid_n: int):
    th = np.repeat(np.arange(grid_n) / grid_n, grid_n)
    yy = np.tile(np.linspace(-1.0, 1.0, grid_n), grid_n)
    return th, yy


def covering_radius(theta_pts, y_pts, grid_n: int) -> float:
    """max over a grid_n x grid_n grid of the min cyl distance to the points.

    Points are first deduplicated on a 4x finer lattice, keeping one exact
    representative per cell; a subset can only increase the measured radius,
    so the certificate direction is preserved.
    """
    if grid_n < 8:
        raise RangeError("covering grid needs grid_n >= 8")
    theta_pts = np.asarray(theta_pts, dtype=float)
    y_pts = np.asarray(y_pts, dtype=float)
    if theta_pts.size == 0:
        raise RangeError("covering radius needs at least one point")
    fine = 4 * grid_n
    ti = np.floor(theta_pts * fine).astype(np.int64) % fine
    yi = np.clip(((y_pts + 1.0) * 0.5 * fine).astype(np.int64), 0, fine)
    key = ti * (fine + 1) + yi
    _, keep = np.unique(key, return_index=True)
    rt = theta_pts[keep]
    ry = y_pts[keep]
    gt, gy = _grid(grid_n)
    best = np.full(gt.size, np.inf)
    chunk = max(1, (1 << 22) // max(rt.size, 1))
    for i in range(0, gt.size, chunk):
        dt = np.abs(gt[i:i + chunk, None] - rt[None, :]) % 1.0
        dt = np.minimum(dt, 1.0 - dt)
        d = np.maximum(dt, 0.5 * np.abs(gy[i:i + chunk, None] - ry[None, :]))
        best[i:i + chunk] = d.min(axis=1)
    return float(best.max())


def covering_radius_points(points, grid_n: int) -> float:
    theta = np.array([p.theta for p in points])
    y = np.array([p.y for p in points])
    return covering_radius(theta, y, grid_n)


# -- conjugator construction ---------------------------------------------------

def make_conjugator(q: int, eps: float, policy: EnginePolicy = DEFAULT_POLICY):
    """Hamiltonian conjugator commuting with Rot_{1/q} spreading the equator.

    Returns (HamFlow leaf, certificate dict).  The amplitude is found by a
    doubling search on K_eff = K*freq until the flowed equator samples reach
    |y| >= 1 - eps and their covering radius is <= eps; the collar cutoff is
    shrunk below eps/4 so the plateau cannot block the reach.
    """
    if not 0.0 < eps < 1.0:
        raise RangeError("conjugator density eps must be in (0, 1)")
    if q < 1:
        raise RangeError("conjugator needs q >= 1")
    m = math.ceil(1.0 / eps)
    freq = q * m
    collar = min(policy.collar, eps / 4.0)
    cfg = policy.flow_config
    ns = policy.cert_samples
    th = np.arange(ns) / ns
    y0 = np.zeros(ns)
    grid_cert = min(policy.grid_n, max(16, int(2.0 / eps)))
    k_eff = 1.0
    while k_eff <= policy.k_eff_cap:
        steps = CoveringField(k_eff).suggested_steps(policy.base_steps)
        leaf = HamFlow(k_eff / freq, freq, steps, collar)
        t1, y1 = evaluate_batch(leaf, th, y0, cfg)
        reach = min(float(y1.max()), float(-y1.min()))
        if reach >= 1.0 - eps:
            cov = covering_radius(t1, y1, grid_cert)
            if cov <= eps:
                from .maps import commutation_residual

                comm = commutation_residual(leaf, RationalAngle(1, q), 16, cfg) \
                    if q > 1 else 0.0
                cert = {
                    "K": leaf.k, "M": m, "freq": freq, "k_eff": k_eff,
                    "steps": steps, "collar": collar, "reach": reach,
                    "covering": cov, "covering_grid": grid_cert,
                    "commutation_residual": comm,
                }
                if comm > 1e-8:
                    raise CertificateFailure(
                        f"conjugator commutation residual {comm:.3e} > 1e-8", comm)
                return leaf, cert
        k_eff *= 2.0
    raise SearchExhausted(
        f"no К_eff <= {policy.k_eff_cap} reaches 1-eps={1 - eps:.4f} "
        f"with covering <= {eps:.4f}")


# -- scheme stages ---------------------------------------------------------------

@dataclass
class SchemeStage:
    """Full state of the induction at step n, with measured certificates."""

    n: int
    alpha: object                 # RationalAngle | ShiftedAngle
    conjugator: MapExpr           # h_n; f_n = h_n^-1 Rot_alpha h_n
    j: int = 0
    orbit_len: int = 0            # N_n
    nu: Fraction | None = None
    nu_log2: float | None = None
    epsilon: float = 0.0          # modulus used for the newest refinement
    theta0: Fraction = Fraction(0)
    certificates: dict = field(default_factory=dict)

    @property
    def q_bits(self) -> int:
        return angle_q_lower_bits(self.alpha)

    def stage_map(self) -> MapExpr:
        """f_n = h_n^-1 o Rot_{alpha_n} o h_n."""
        rot = Rotation(self.alpha if isinstance(self.alpha, RationalAngle)
                       else self.alpha.to_float())
        return compose(inverse(self.conjugator), rot, self.conjugator)


def initial_stage() -> SchemeStage:
    return SchemeStage(n=0, alpha=RationalAngle(0, 1), conjugator=identity_map(),
                       j=0, orbit_len=1,
                       certificates={"curve_covering": 0.5, "orbit_covering": 1.0,
                                     "conjugacy_residual": 0.0,
                                     "det_residual": 0.0})


# -- measurements ---------------------------------------------------------------

def _metric_opnorms(jac):
    """Operator 2-norms of [tt, ty, yt, yy]-stacked Jacobians in the cylinder
    metric (theta weight 1, y weight 1/2)."""
    a = jac[0]
    b = 2.0 * jac[1]
    c = 0.5 * jac[2]
    d = jac[3]
    m = 0.5 * (a * a + b * b + c * c + d * d)
    det = a * d - b * c
    rad = np.sqrt(np.maximum(m * m - det * det, 0.0))
    return np.sqrt(np.maximum(m + rad, 0.0))


def measure_inverse_lipschitz(conj: MapExpr, policy: EnginePolicy):
    """(sup, 90th percentile) of ||D h^-1|| over the certificate grid."""
    gt, gy = _grid(policy.grid_n)
    _, _, jac = jacobian_batch(inverse(conj), gt, gy, policy.flow_config)
    norms = _metric_opnorms(jac)
    return float(norms.max()), float(np.percentile(norms, 90.0))


def theta_stretch_at(conj: MapExpr, theta, y, policy: EnginePolicy) -> float:
    """max over the points of the metric norm of D(h^-1) e_theta."""
    _, _, jac = jacobian_batch(inverse(conj), theta, y, policy.flow_config)
    col = np.sqrt(jac[0] **2 + (0.5 * jac[2]) **2)
    return float(col.max())


def det_residual(stage: SchemeStage, policy: EnginePolicy) -> float:
    """sup over the grid of |det D f_n - 1| via the variational chain."""
    gt, gy = _grid(policy.grid_n)
    _, _, jac = jacobian_batch(stage.stage_map(), gt, gy, policy.flow_config)
    det = jac[0] * jac[3] - jac[1] * jac[2]
    return float(np.max(np.abs(det - 1.0)))


def conjugacy_residual(old: SchemeStage, new_conj: MapExpr,
                       policy: EnginePolicy) -> float:
    """sup-grid distance of h_new^-1 Rot_a h_new from h_old^-1 Rot_a h_old."""
    gt, gy = _grid(policy.grid_n)
    cfg = policy.flow_config
    a = old.alpha if isinstance(old.alpha, RationalAngle) else None
    rot = Rotation(a if a is not None else old.alpha.to_float())
    f_new = compose(inverse(new_conj), rot, new_conj)
    f_old = compose(inverse(old.conjugator), rot, old.conjugator)
    t1, y1 = evaluate_batch(f_new, gt, gy, cfg)
    t2, y2 = evaluate_batch(f_old, gt, gy, cfg)
    return float(np.max(cyl_distance_arrays(t1, y1, t2, y2)))


def curve_covering(conj: MapExpr, policy: EnginePolicy,
                   samples: int | None = None) -> float:
    """Covering radius of h^-1(T x {0}) sampled at equator points."""
    ns = samples or policy.curve_samples
    th = np.arange(ns) / ns
    t1, y1 = evaluate_batch(inverse(conj), th, np.zeros(ns), policy.flow_config)
    return covering_radius(t1, y1, policy.grid_n)


# -- nu selection and next angle -------------------------------------------------

def select_nu(stage: SchemeStage, new_conj: MapExpr, policy: EnginePolicy,
              sep_lower: float, lip_theta_local: float):
    """Exact-rational budget nu(h_{n+1}, alpha_n) = min of the four terms.

    (i) Farey separation of alpha_n, (ii) the Liouville budget 2^-q q^-q,
    (iii) the separation budget 2^-q sep / (L_theta (q-1)), (iv) the
    iterate-closeness budget 3^-(j+1) / (2 L_theta N).  (iii) and (iv) use
    the measured local theta-stretch of the new stack; (iv) is vacuous at
    j = 0 where the 3^0-covering is the diameter bound.  Returns
    (nu, terms) with nu None when only the log2 form is representable.
    """
    alpha = stage.alpha
    if not isinstance(alpha, RationalAngle):
        raise RangeError("nu budget beyond stage denominators is not computed")
    q = alpha.q
    terms: dict = {}
    farey = farey_separation(alpha)
    terms["farey"] = farey
    if liouville_budget_exactly_computable(alpha):
        liou = liouville_budget(alpha)
        terms["liouville"] = liou
    else:
        liou = None
        terms["liouville_log2"] = liouville_budget_log2(alpha)
    # round the measured constants safely: stretch up, separation down
    lip = Fraction(math.ceil(max(lip_theta_local, 1.0) * (1 << 20)), 1 << 20)
    if q >= 2 and sep_lower > 0.0:
        sep = Fraction(math.floor(sep_lower * (1 << 20)), 1 << 20)
        if sep > 0:
            terms["separation"] = Fraction(1, 2 **q) * sep / (lip * max(q - 1, 1))
    if stage.j >= 1 and stage.orbit_len >= 1:
        terms["iterate"] = (Fraction(1, 3 **(stage.j + 1))
                            / (2 * lip * stage.orbit_len))
    finite = [v for k, v in terms.items()
              if isinstance(v, Fraction) and v > 0]
    if liou is None:
        # the Liouville term dominates every other scale by construction;
        # the caller verifies the dyadic step against the finite terms too
        return None, terms
    nu = min(finite)
    terms["nu"] = nu
    return nu, terms


def dyadic_below_terms(e: int, terms: dict) -> bool:
    """Exact check that 2^-e is below every finite budget term."""
    for v in terms.values():
        if isinstance(v, Fraction) and v > 0:
            # 2^-e < num/den  iff  den < num * 2^e
            if not v.denominator < v.numerator << e:
                return False
    return True


def choose_next_alpha(alpha, nu: Fraction, n_next: int,
                      policy: EnginePolicy = DEFAULT_POLICY, bump: int = 0):
    """alpha + 1/Q with 1/Q < nu, denominator >= n_next (and stage-1 floor).

    Small budgets step dyadically: Q rounds up to a power of two so the
    reduction of the new fraction is closed-form (linear time).  bump asks
    for the next admissible Q beyond the minimal one (certificate retries).
    """
    if not isinstance(alpha, RationalAngle):
        raise RangeError("cannot step beyond a dyadically shifted angle")
    min_den = max(n_next, policy.stage1_min_den if n_next == 1 else 0)
    inv = Fraction(1) / nu
    if inv <= policy.dyadic_threshold:
        q_min = int(inv) + 1
        q_try = q_min + bump
        for _ in range(10_000):
            cand = alpha + RationalAngle(1, q_try)
            if cand.q >= min_den and cand.q > alpha.q:
                return cand
            q_try += 1
        raise SearchExhausted("no admissible next angle found")
    e = _ceil_log2(inv) + 1 + bump
    return _add_dyadic(alpha, e)


def _ceil_log2(x: Fraction) -> int:
    """Smallest e >= 0 with 2^e >= x, for x >= 1."""
    num, den = x.numerator, x.denominator
    if num <= den:
        return 0
    e = max(num.bit_length() - den.bit_length(), 0)
    while (den << e) < num:
        e += 1
    while e > 0 and (den << (e - 1)) >= num:
        e -= 1
    return e


def liouville_dyadic_exponent(alpha: RationalAngle) -> int:
    """Smallest convenient E with 2^-E < 2^-q q^-q, via q < 2^bitlen(q)."""
    q = alpha.q
    return q * (1 + q.bit_length()) + 1


def _add_dyadic(alpha: RationalAngle, e: int):
    """alpha + 2^-e as an exact angle; ShiftedAngle beyond 2^60."""
    if e <= 60:
        return alpha + RationalAngle(1, 1 << e)
    return ShiftedAngle(alpha, e)


# -- orbit certificates -----------------------------------------------------------

def orbit_angles_int(alpha, count: int, theta0: Fraction):
    """Float angles theta0 + k*alpha mod 1 for k < count, exactly reduced.

    For a ShiftedAngle the dyadic part is below float resolution for every
    usable count; the discrepancy bound count * 2^-e is recorded upstream.
    """
    base = alpha.base if isinstance(alpha, ShiftedAngle) else alpha
    p, q = base.p, base.q
    t0 = theta0 % 1
    num0, den0 = t0.numerator, t0.denominator
    qq = q * den0
    pp = p * den0
    if qq.bit_length() <= 62 and (count * pp + num0 * q).bit_length() <= 62:
        k = np.arange(count, dtype=np.int64)
        nums = (num0 * q + k * pp) % qq
        return nums.astype(float) / float(qq)
    step = Fraction(p, q)
    acc = t0
    out = np.empty(count)
    for i in range(count):
        out[i] = float(acc)
        acc = (acc + step) % 1
    return out


def orbit_points(stage: SchemeStage, count: int, theta0: Fraction,
                 policy: EnginePolicy):
    """First `count` orbit points of f_n from the base h_n^-1((theta0, 0))."""
    th = orbit_angles_int(stage.alpha, count, theta0)
    return evaluate_batch(inverse(stage.conjugator), th, np.zeros(count),
                          policy.flow_config)


def orbit_certificate(stage: SchemeStage, level_target: float,
                      policy: EnginePolicy):
    """Minimal-ish orbit length whose covering radius meets the target.

    Searches theta0 candidates when the available distinct angles are few
    (small q); doubles the orbit length otherwise.  Returns a dict with the
    covering value, N, theta0 and the grid used; raises CertificateFailure
    when the cap is reached.
    """
    q_small = None
    if isinstance(stage.alpha, RationalAngle) and stage.alpha.q <= policy.direct_k_cap:
        q_small = stage.alpha.q
    if q_small is not None:
        best = None
        for mcand in range(policy.theta0_candidates):
            theta0 = Fraction(mcand, policy.theta0_candidates * q_small)
            t, y = orbit_points(stage, q_small, theta0, policy)
            cov = covering_radius(t, y, policy.grid_n)
            if best is None or cov < best[0]:
                best = (cov, theta0)
        cov, theta0 = best
        if cov > level_target:
            raise CertificateFailure(
                f"orbit covering {cov:.4f} > target {level_target:.4f} "
                f"with q={q_small} points", cov)
        return {"covering": cov, "N": q_small - 1, "theta0": theta0}
    n = policy.orbit_start
    theta0 = Fraction(0)
    t = y = None
    while n <= policy.orbit_cap:
        if t is None:
            t, y = orbit_points(stage, n, theta0, policy)
        else:
            th_ext = orbit_angles_int(stage.alpha, n, theta0)[t.size:]
            t2, y2 = evaluate_batch(inverse(stage.conjugator), th_ext,
                                    np.zeros(th_ext.size), policy.flow_config)
            t = np.concatenate([t, t2])
            y = np.concatenate([y, y2])
        cov = covering_radius(t, y, policy.grid_n)
        if cov <= level_target:
            lo, hi = n // 2, n
            while hi - lo > max(64, hi // 8):
                mid = (lo + hi) // 2
                cmid = covering_radius(t[:mid], y[:mid], policy.grid_n)
                if cmid <= level_target:
                    hi = mid
                else:
                    lo = mid
            return {"covering": covering_radius(t[:hi], y[:hi], policy.grid_n),
                    "N": hi - 1, "theta0": theta0}
        n *= 2
    raise CertificateFailure(
        f"orbit covering did not reach {level_target:.4f} within "
        f"{policy.orbit_cap} iterates", cov)


# -- separation and growth --------------------------------------------------------

def periodic_separation(f: MapExpr, q: int, grid_n: int,
                        cfg: FlowConfig = DEFAULT_FLOW_CONFIG) -> float:
    """min over grid and 0 < k < q of d(x, f^k(x)) by direct iteration."""
    if q < 2:
        raise RangeError("periodic separation needs q >= 2")
    gt, gy = _grid(grid_n)
    t, y = gt.copy(), gy.copy()
    best = math.inf
    for _ in range(1, q):
        t, y = evaluate_batch(f, t, y, cfg)
        best = min(best, float(np.min(cyl_distance_arrays(t, y, gt, gy))))
    return best


def stage_separation(stage: SchemeStage, policy: EnginePolicy) -> dict:
    """Separation report: direct scan for small q, certified bound otherwise."""
    report: dict = {}
    alpha = stage.alpha
    if stage.n == 0:
        report["kind"] = "trivial"
        return report
    if isinstance(alpha, RationalAngle) and alpha.q <= policy.direct_k_cap:
        f = stage.stage_map()
        val = periodic_separation(f, alpha.q, min(policy.grid_n, 32),
                                  policy.flow_config)
        report["kind"] = "direct"
        report["value"] = val
        return report
    # rotation bound: d(x, f^k x) >= circledist(k alpha) / Lip(h_n)
    lip_sup = stage.certificates.get("lipschitz_sup", 0.0)
    lip = max(lip_sup, 1.0)
    report["kind"] = "certified"
    if isinstance(alpha, RationalAngle):
        report["rotation_gap_log2"] = -float(alpha.q.bit_length())
        report["bound_log2"] = -float(alpha.q.bit_length()) - math.log2(lip)
    else:
        report["rotation_gap_log2"] = -float(alpha.q_bit_length)
        report["bound_log2"] = -float(alpha.q_bit_length) - math.log2(lip)
    report["positive"] = True
    return report


def growth_report(prev: SchemeStage, new: SchemeStage,
                  policy: EnginePolicy, tol: float = 1e-6) -> dict:
    """Appendix-style growth inequality between consecutive stages.

    Direct enumeration of k < q_n for small q_n; otherwise the exact angle
    budget L_theta * q_n * |alpha_{n+1}-alpha_n| <= tol certifies the
    inequality with the additive slack.
    """
    report: dict = {"tol": tol}
    alpha = prev.alpha
    q = alpha.q if isinstance(alpha, RationalAngle) else None
    if q is not None and q < 2:
        report["kind"] = "vacuous"
        report["passed"] = True
        return report
    if q is not None and 2 <= q <= policy.direct_k_cap:
        grid_n = min(policy.grid_n, 32)
        gt, gy = _grid(grid_n)
        cfg = policy.flow_config
        f_old = prev.stage_map()
        f_new = new.stage_map()
        to, yo = gt.copy(), gy.copy()
        tn, yn = gt.copy(), gy.copy()
        factor = 1.0 + 2.0 **(-q)
        worst = -math.inf
        ok = True
        for _ in range(1, q):
            to, yo = evaluate_batch(f_old, to, yo, cfg)
            tn, yn = evaluate_batch(f_new, tn, yn, cfg)
            m_old = float(np.max(cyl_distance_arrays(to, yo, gt, gy)))
            m_new = float(np.max(cyl_distance_arrays(tn, yn, gt, gy)))
            slack = factor * m_old + tol - m_new
            worst = max(worst, m_new - factor * m_old)
            ok = ok and slack >= 0.0
        report["kind"] = "direct"
        report["worst_excess"] = worst
        report["passed"] = ok
        return report
    # certified route
    lip_theta = new.certificates.get("lipschitz_theta_local", 1.0)
    if isinstance(new.alpha, ShiftedAngle):
        gap_log2 = -float(new.alpha.e)
    else:
        gap = new.alpha.circle_dist(prev.alpha)
        # upper bound on log2 of the gap, safe under float underflow
        gap_log2 = float(gap.numerator.bit_length()
                         - gap.denominator.bit_length() + 1)
    q_bits = angle_q_lower_bits(prev.alpha)
    disp_log2 = math.log2(max(lip_theta, 1.0)) + q_bits + gap_log2
    report["kind"] = "certified"
    report["displacement_log2"] = disp_log2
    report["passed"] = disp_log2 <= math.log2(tol)
    return report


# -- the step -----------------------------------------------------------------------

def step(stage: SchemeStage, policy: EnginePolicy = DEFAULT_POLICY) -> SchemeStage:
    """One induction step: refine the conjugator if the next density level
    requires it, choose the next angle inside the exact budget, and certify.
    """
    n_next = stage.n + 1
    target_curve = policy.curve_target(n_next)
    if policy.lookahead:
        deep_curve = policy.curve_target(max(n_next, policy.stages_planned))
    else:
        deep_curve = target_curve
    prev_curve = stage.certificates.get("curve_covering", math.inf)
    cert: dict = {}
    if stage.n == 0:
        # gentle first conjugator: enough spread for the q_1-point orbit
        eps = policy.stage1_eps
        hq, ccert = make_conjugator(1, eps, policy)
        new_conj = compose(inverse(hq), stage.conjugator)
        cert["conjugator"] = ccert
        cert["epsilon"] = eps
        cert["curve_covering"] = curve_covering(new_conj, policy)
    elif prev_curve > target_curve:
        if not isinstance(stage.alpha, RationalAngle):
            raise CertificateFailure(
                "refinement beyond dyadic angles is not representable")
        _, lip90 = measure_inverse_lipschitz(stage.conjugator, policy)
        eps = deep_curve / (policy.safety * max(lip90, 1.0))
        last_exc: Exception | None = None
        new_conj = None
        for _ in range(policy.density_retries):
            try:
                hq, ccert = make_conjugator(stage.alpha.q, eps, policy)
            except (SearchExhausted, CertificateFailure) as exc:
                last_exc = exc
                eps *= 0.5
                continue
            cand_conj = compose(inverse(hq), stage.conjugator)
            cov = curve_covering(cand_conj, policy)
            if cov <= deep_curve:
                new_conj = cand_conj
                cert["conjugator"] = ccert
                cert["epsilon"] = eps
                cert["curve_covering"] = cov
                break
            eps *= 0.5
        if new_conj is None:
            raise CertificateFailure(
                f"curve covering did not reach {deep_curve:.4f} after "
                f"{policy.density_retries} retries (last: {last_exc})")
    else:
        # existing curve already certifies the next level: identity refinement
        new_conj = stage.conjugator
        cert["epsilon"] = 0.0
        cert["skipped_refinement"] = 1.0
        cert["curve_covering"] = prev_curve

    cert["conjugacy_residual"] = conjugacy_residual(stage, new_conj, policy)

    lip_sup, lip90 = measure_inverse_lipschitz(new_conj, policy)
    cert["lipschitz_sup"] = lip_sup
    cert["lipschitz_p90"] = lip90

    # local theta stretch along the angles the budgets actually use
    count = min(max(stage.orbit_len + 1, 64), 4096)
    th_prev = orbit_angles_int(stage.alpha, count, stage.theta0) \
        if stage.n > 0 else np.arange(count) / count
    lip_theta = theta_stretch_at(new_conj, th_prev, np.zeros(count), policy)
    cert["lipschitz_theta_local"] = lip_theta

    sep_report = stage_separation(stage, policy)
    sep_lower = sep_report.get("value", 0.0)

    nu, nu_terms = select_nu(stage, new_conj, policy, sep_lower, lip_theta)
    level = policy.level_slack(n_next)
    attempt_bump = 0
    while True:
        if nu is None:
            e = liouville_dyadic_exponent(stage.alpha) + attempt_bump
            if not dyadic_below_terms(e, nu_terms):
                raise CertificateFailure(
                    "dyadic step is not below every finite budget term")
            alpha_next = _add_dyadic(stage.alpha, e)
            cert["alpha_gap_log2"] = -float(e)
        else:
            alpha_next = choose_next_alpha(stage.alpha, nu, n_next, policy,
                                           bump=attempt_bump)
        cand = SchemeStage(n=n_next, alpha=alpha_next, conjugator=new_conj,
                           j=stage.j, orbit_len=stage.orbit_len,
                           theta0=stage.theta0, certificates=dict(cert))
        try:
            oc = orbit_certificate(cand, level, policy)
            break
        except CertificateFailure:
            if attempt_bump >= 8:
                raise
            attempt_bump += 1

    cand.j = n_next
    cand.orbit_len = oc["N"]
    cand.theta0 = oc["theta0"]
    cand.certificates["orbit_covering"] = oc["covering"]
    cand.certificates["orbit_level"] = level
    if isinstance(cand.alpha, ShiftedAngle):
        # orbit angles were evaluated at the base rational; the dyadic part
        # moves them by at most N * 2^-e
        cand.certificates["orbit_angle_collapse_log2"] = (
            math.log2(max(oc["N"], 1)) - cand.alpha.e)
    cand.certificates["det_residual"] = det_residual(cand, policy)
    cand.certificates["separation"] = sep_report
    cand.nu = nu
    cand.nu_log2 = (float(math.log2(nu)) if nu is not None
                    else nu_terms.get("liouville_log2"))
    growth = growth_report(stage, cand, policy)
    cand.certificates["growth"] = growth
    sep_new = stage_separation(cand, policy)
    cand.certificates["separation_self"] = sep_new
    return cand


# -- Liouville certificate ----------------------------------------------------------

def liouville_certificate(angles: list) -> dict:
    """Exact verification of the Liouville chain over consecutive stages.

    Checks |alpha_{n+1} - alpha_n| < 2^-q_n q_n^-q_n and q_n >= n for all n,
    in exact arithmetic (bit-length shortcut for dyadic steps); emits tail
    bounds exactly while q^q is representable, else as log2.
    """
    report: dict = {"pairs": [], "ok": True}
    for i, a in enumerate(angles):
        q_ok = (a.q >= i) if isinstance(a, RationalAngle) else a.q_at_least(i)
        if not q_ok:
            report["ok"] = False
            report["pairs"].append({"n": i, "q_ok": False})
            raise CertificateFailure(f"q_{i} < {i}")
    for i in range(len(angles) - 1):
        a, b = angles[i], angles[i + 1]
        entry: dict = {"n": i}
        if not isinstance(a, RationalAngle):
            raise CertificateFailure(
                f"stage {i} angle is dyadically shifted; no further step allowed")
        q = a.q
        if isinstance(b, ShiftedAngle):
            # gap is exactly 2^-e; budget check via q < 2^bitlen(q)
            if b.base != a:
                raise CertificateFailure(f"stage {i+1} dyadic base mismatch")
            e = b.e
            ok = e - q > q * q.bit_length()
            entry["gap_log2"] = -float(e)
            entry["strict"] = ok
        else:
            gap = b.circle_dist(a)
            if gap == 0:
                ok = False
            else:
                from .rational import gap_below_liouville
                ok = gap_below_liouville(gap, a)
            entry["gap"] = str(gap)
            entry["strict"] = ok
        if liouville_budget_exactly_computable(a):
            entry["budget"] = str(liouville_budget(a))
            entry["tail_bound"] = str(2 * liouville_budget(a))
        else:
            entry["budget_log2"] = liouville_budget_log2(a)
            entry["tail_bound_log2"] = liouville_budget_log2(a) + 1.0
        report["pairs"].append(entry)
        if not ok:
            report["ok"] = False
            raise CertificateFailure(f"liouville budget violated at stage {i}")
    a_last = angles[-1]
    if isinstance(a_last, RationalAngle) and \
            liouville_budget_exactly_computable(a_last):
        report["final_tail_bound"] = str(2 * liouville_budget(a_last))
    else:
        report["final_tail_bound_log2"] = (
            liouville_budget_log2(a_last.base) if isinstance(a_last, ShiftedAngle)
            else liouville_budget_log2(a_last)) + 1.0
    return report


# -- surface lifts ------------------------------------------------------------------

@dataclass
class SurfaceLift:
    """Stage map lifted to the sphere or disk through the symplectic charts.

    Equal to pi^-1 o f_n o pi away from the rotation axis and to the ambient
    rotation at the poles (sphere) or at the center and boundary (disk).
    """

    surface: str
    stage: SchemeStage
    policy: EnginePolicy = field(default_factory=lambda: DEFAULT_POLICY)

    def __post_init__(self):
        if self.surface not in ("sphere", "disk"):
            raise RangeError("lift surface must be 'sphere' or 'disk'")
        self._f = self.stage.stage_map()
        self._alpha = angle_to_float(self.stage.alpha)

    def _rotate_angle(self, theta):
        out = np.mod(theta + self._alpha, 1.0)
        return np.where(out >= 1.0, 0.0, out)

    def apply_sphere(self, xyz: np.ndarray) -> np.ndarray:
        """Batched lift on sphere points, shape (n, 3)."""
        xyz = np.asarray(xyz, dtype=float)
        x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        out = np.empty_like(xyz)
        polar = np.abs(z) >= 1.0 - 1e-14
        # exact rotation about the vertical axis fixes the poles bitwise
        out[polar] = xyz[polar]
        idx = ~polar
        theta = np.arctan2(y[idx], x[idx]) / TWO_PI
        t1, y1 = evaluate_batch(self._f, np.mod(theta, 1.0), z[idx],
                                self.policy.flow_config)
        y1 = np.clip(y1, -1.0, 1.0)
        r = np.sqrt(1.0 - y1 **2)
        out[idx, 0] = r * np.cos(TWO_PI * t1)
        out[idx, 1] = r * np.sin(TWO_PI * t1)
        out[idx, 2] = y1
        return out

    def apply_disk(self, xy: np.ndarray) -> np.ndarray:
        """Batched lift on disk points, shape (n, 2)."""
        xy = np.asarray(xy, dtype=float)
        r2 = xy[:, 0] **2 + xy[:, 1] **2
        out = np.empty_like(xy)
        center = r2 <= 1e-28
        out[center] = 0.0
        idx = ~center
        theta = np.arctan2(xy[idx, 1], xy[idx, 0]) / TWO_PI
        yc = 2.0 * r2[idx] - 1.0
        t1, y1 = evaluate_batch(self._f, np.mod(theta, 1.0), yc,
                                self.policy.flow_config)
        y1 = np.clip(y1, -1.0, 1.0)
        r = np.sqrt((y1 + 1.0) / 2.0)
        out[idx, 0] = r * np.cos(TWO_PI * t1)
        out[idx, 1] = r * np.sin(TWO_PI * t1)
        return out

    def __call__(self, point):
        if self.surface == "sphere":
            if not isinstance(point, SpherePoint):
                raise TypeError("sphere lift expects SpherePoint")
            out = self.apply_sphere(np.array([[point.x1, point.x2, point.x3]]))
            return SpherePoint(*out[0])
        if not isinstance(point, DiskPoint):
            raise TypeError("disk lift expects DiskPoint")
        out = self.apply_disk(np.array([[point.x1, point.x2]]))
        return DiskPoint(*out[0])

    def seam_residual(self, n_points: int = 1000, collar: float = 1e-3) -> float:
        """sup distance between the lift and the ambient rotation on collars
        |y| = 1 - collar; zero when the conjugator is identity there."""
        rng = np.random.default_rng(7)
        theta = rng.random(n_points)
        ysign = np.where(rng.random(n_points) < 0.5, 1.0, -1.0)
        y = ysign * (1.0 - collar)
        if self.surface == "sphere":
            r = np.sqrt(1.0 - y **2)
            pts = np.stack([r * np.cos(TWO_PI * theta),
                            r * np.sin(TWO_PI * theta), y], axis=1)
            lifted = self.apply_sphere(pts)
            tr = self._rotate_angle(theta)
            rot = np.stack([r * np.cos(TWO_PI * tr),
                            r * np.sin(TWO_PI * tr), y], axis=1)
            return float(np.max(np.linalg.norm(lifted - rot, axis=1)))
        rr = np.sqrt((y + 1.0) / 2.0)
        pts = np.stack([rr * np.cos(TWO_PI * theta),
                        rr * np.sin(TWO_PI * theta)], axis=1)
        lifted = self.apply_disk(pts)
        tr = self._rotate_angle(theta)
        rot = np.stack([rr * np.cos(TWO_PI * tr),
                        rr * np.sin(TWO_PI * tr)], axis=1)
        return float(np.max(np.linalg.norm(lifted - rot, axis=1)))


def lift_to_surface(stage: SchemeStage, surface: str,
                    policy: EnginePolicy = DEFAULT_POLICY) -> SurfaceLift:
    return SurfaceLift(surface, stage, policy)


def transitivity_witness(stage: SchemeStage, delta: float,
                         policy: EnginePolicy = DEFAULT_POLICY,
                         surface: str = "sphere") -> dict:
    """Orbit from within delta of the lifted fixed point reaching the far side.

    Searches the certified orbit for starting points near the north pole
    (sphere) or the center (disk) and follows them for at most N_n steps
    until x3 < 0 resp. the boundary collar; euclidean distances in the
    ambient space.  Raises WitnessNotFound below the certificate scale.
    """
    if delta <= policy.level(stage.n):
        raise WitnessNotFound(
            f"delta {delta} is at or below the certificate scale 3^-{stage.n}")
    count = stage.orbit_len + 1
    th = orbit_angles_int(stage.alpha, count, stage.theta0)
    t, y = evaluate_batch(inverse(stage.conjugator), th, np.zeros(count),
                          policy.flow_config)
    y = np.clip(y, -1.0, 1.0)
    if surface == "sphere":
        # |s - pole|^2 = 2(1 - x3)
        near = np.flatnonzero(2.0 * (1.0 - y) <= delta **2)
        reach_fn = lambda yy: yy < 0.0
        target = "x3 < 0"
    else:
        near = np.flatnonzero(2.0 * (y + 1.0) / 2.0 <= delta **2)  # |x|^2 <= delta^2
        reach_fn = lambda yy: yy >= 2.0 * 0.97 **2 - 1.0
        target = "boundary collar |x| >= 0.97"
    if near.size == 0:
        raise WitnessNotFound(
            f"no certified orbit point within {delta} of the fixed point")
    order = near[np.argsort(-y[near])] if surface == "sphere" else \
        near[np.argsort(y[near])]
    f = stage.stage_map()
    for k0 in order[:8]:
        tt = np.array([t[k0]])
        yy = np.array([y[k0]])
        for length in range(1, stage.orbit_len + 1):
            tt, yy = evaluate_batch(f, tt, yy, policy.flow_config)
            if reach_fn(float(yy[0])):
                return {
                    "surface": surface,
                    "start_theta": float(t[k0]),
                    "start_y": float(y[k0]),
                    "start_index": int(k0),
                    "length": length,
                    "target": target,
                    "final_theta": float(tt[0]),
                    "final_y": float(yy[0]),
                }
    raise WitnessNotFound(
        f"no orbit within {delta} of the fixed point reached {target} "
        f"in {stage.orbit_len} steps")
