"""Compiled per-point integration kernels for the covering-coordinate flows.

Each batch element integrates independently, so parallel scheduling cannot
change any result.  The numpy fallback in flows.py computes the identical
scheme; these kernels only remove interpreter overhead.  fastmath stays off
to keep results bit-stable.
"""

from __future__ import annotations

import cmath
import math

import numba
import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * math.pi
_TINY = 1e-9


@njit(cache=True, inline="always")
def _step_all(t):
    """(s, s', s'') of the exp(-1/t) smoothstep at a scalar t."""
    if t <= _TINY:
        return 0.0, 0.0, 0.0
    if t >= 1.0 - _TINY:
        return 1.0, 0.0, 0.0
    oc = 1.0 - t
    a = math.exp(-1.0 / t)
    b = math.exp(-1.0 / oc)
    it2 = 1.0 / (t * t)
    io2 = 1.0 / (oc * oc)
    da = a * it2
    db = -b * io2
    d2a = a * (it2 * it2 - 2.0 * it2 / t)
    d2b = b * (io2 * io2 - 2.0 * io2 / oc)
    s = a + b
    sp = da + db
    spp = d2a + d2b
    inv_s = 1.0 / s
    val = a * inv_s
    d1 = (da - val * sp) * inv_s
    d2 = (d2a - 2.0 * d1 * sp - val * spp) * inv_s
    return val, d1, d2


@njit(cache=True, inline="always")
def _cutoff(ry, collar):
    """(c, dc/dy, d2c/dy2) of the plateau cutoff at a real height ry."""
    if collar <= 0.0:
        return 1.0, 0.0, 0.0
    sgn = 1.0 if ry >= 0.0 else -1.0
    t = (1.0 - collar - sgn * ry) / collar
    val, d1, d2 = _step_all(t)
    return val, d1 * (-sgn / collar), d2 / (collar * collar)


@njit(cache=True, parallel=True)
def integrate_real(u0, y0, k_eff, collar, h, n_steps, tol, max_newton,
                   want_jac, jac_out, fail_flag):
    """Implicit midpoint flow of the covering field, float64 per-element.

    Mutates u0, y0 in place; when want_jac, jac_out has shape (4, n) and
    receives the exact tangent map of the scheme.
    """
    n = u0.shape[0]
    hh = 0.5 * h
    k2 = 2.0 * k_eff
    for i in prange(n):
        u = u0[i]
        y = y0[i]
        j00 = 1.0
        j01 = 0.0
        j10 = 0.0
        j11 = 1.0
        inc_u = 0.0
        inc_y = 0.0
        have_inc = False
        ok = True
        for s in range(n_steps):
            c, cp, cpp = _cutoff(y, collar)
            cos_u = math.cos(TWO_PI * u)
            sin_u = math.sin(TWO_PI * u)
            w = 1.0 - y * y
            g = -2.0 * y * c + w * cp
            g_y = -2.0 * c - 4.0 * y * cp + w * cpp
            fu = k2 * cos_u * g
            fy = k2 * TWO_PI * w * c * sin_u
            a_uu = -k2 * TWO_PI * sin_u * g
            a_uy = k2 * cos_u * g_y
            a_yu = k2 * TWO_PI * TWO_PI * w * c * cos_u
            a_yy = k2 * TWO_PI * sin_u * g
            b_uu = 1.0 - hh * a_uu
            b_uy = -hh * a_uy
            b_yu = -hh * a_yu
            b_yy = 1.0 - hh * a_yy
            inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
            if have_inc:
                un = u + inc_u
                yn = y + inc_y
            else:
                un = u + h * fu
                yn = y + h * fy
            conv = False
            for it in range(max_newton):
                mu = 0.5 * (u + un)
                my = 0.5 * (y + yn)
                if it > 0 and it % 16 == 0:
                    cc, ccp, ccpp = _cutoff(my, collar)
                    mcos0 = math.cos(TWO_PI * mu)
                    msin0 = math.sin(TWO_PI * mu)
                    mw0 = 1.0 - my * my
                    mg0 = -2.0 * my * cc + mw0 * ccp
                    mg_y0 = -2.0 * cc - 4.0 * my * ccp + mw0 * ccpp
                    a_uu = -k2 * TWO_PI * msin0 * mg0
                    a_uy = k2 * mcos0 * mg_y0
                    a_yu = k2 * TWO_PI * TWO_PI * mw0 * cc * mcos0
                    a_yy = k2 * TWO_PI * msin0 * mg0
                    b_uu = 1.0 - hh * a_uu
                    b_uy = -hh * a_uy
                    b_yu = -hh * a_yu
                    b_yy = 1.0 - hh * a_yy
                    inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
                cc, ccp, _ = _cutoff(my, collar)
                mcos = math.cos(TWO_PI * mu)
                msin = math.sin(TWO_PI * mu)
                mw = 1.0 - my * my
                mg = -2.0 * my * cc + mw * ccp
                ru = un - u - h * (k2 * mcos * mg)
                ry = yn - y - h * (k2 * TWO_PI * mw * cc * msin)
                du = (b_yy * ru - b_uy * ry) * inv_det
                dy = (b_uu * ry - b_yu * ru) * inv_det
                un -= du
                yn -= dy
                if abs(du) + abs(dy) <= tol:
                    conv = True
                    break
            if not conv:
                ok = False
                break
            if want_jac:
                mu = 0.5 * (u + un)
                my = 0.5 * (y + yn)
                cc, ccp, ccpp = _cutoff(my, collar)
                mcos = math.cos(TWO_PI * mu)
                msin = math.sin(TWO_PI * mu)
                mw = 1.0 - my * my
                mg = -2.0 * my * cc + mw * ccp
                mg_y = -2.0 * cc - 4.0 * my * ccp + mw * ccpp
                a_uu = -k2 * TWO_PI * msin * mg
                a_uy = k2 * mcos * mg_y
                a_yu = k2 * TWO_PI * TWO_PI * mw * cc * mcos
                a_yy = k2 * TWO_PI * msin * mg
                b_uu = 1.0 - hh * a_uu
                b_uy = -hh * a_uy
                b_yu = -hh * a_yu
                b_yy = 1.0 - hh * a_yy
                inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
                p_uu = 1.0 + hh * a_uu
                p_uy = hh * a_uy
                p_yu = hh * a_yu
                p_yy = 1.0 + hh * a_yy
                c_uu = (b_yy * p_uu - b_uy * p_yu) * inv_det
                c_uy = (b_yy * p_uy - b_uy * p_yy) * inv_det
                c_yu = (b_uu * p_yu - b_yu * p_uu) * inv_det
                c_yy = (b_uu * p_yy - b_yu * p_uy) * inv_det
                t00 = c_uu * j00 + c_uy * j10
                t01 = c_uu * j01 + c_uy * j11
                t10 = c_yu * j00 + c_yy * j10
                t11 = c_yu * j01 + c_yy * j11
                j00 = t00
                j01 = t01
                j10 = t10
                j11 = t11
            inc_u = un - u
            inc_y = yn - y
            have_inc = True
            u = un
            y = yn
        if not ok:
            fail_flag[i] = 1
        u0[i] = u
        y0[i] = y
        if want_jac:
            jac_out[0, i] = j00
            jac_out[1, i] = j01
            jac_out[2, i] = j10
            jac_out[3, i] = j11


@njit(cache=True, inline="always")
def _solve4(b, r0, r1, r2, r3):
    """Solve the 4x4 system b x = r by Gaussian elimination with pivoting."""
    a = np.empty((4, 5))
    for i in range(4):
        for j in range(4):
            a[i, j] = b[i, j]
    a[0, 4] = r0
    a[1, 4] = r1
    a[2, 4] = r2
    a[3, 4] = r3
    for col in range(4):
        piv = col
        best = abs(a[col, col])
        for row in range(col + 1, 4):
            v = abs(a[row, col])
            if v > best:
                best = v
                piv = row
        if piv != col:
            for j in range(col, 5):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
        inv = 1.0 / a[col, col]
        for row in range(col + 1, 4):
            f = a[row, col] * inv
            if f != 0.0:
                for j in range(col, 5):
                    a[row, j] -= f * a[col, j]
    x = np.empty(4)
    for row in range(3, -1, -1):
        s = a[row, 4]
        for j in range(row + 1, 4):
            s -= a[row, j] * x[j]
        x[row] = s / a[row, row]
    return x[0], x[1], x[2], x[3]


@njit(cache=True, inline="always")
def _cplx_step(u, y, h, k2, collar, tol, max_newton, inc_u, inc_y, have_inc):
    """One implicit midpoint step with the exact real-linear 4x4 Newton."""
    hh = 0.5 * h
    c, cp, _ = _cutoff(y.real, collar)
    cos_u = cmath.cos(TWO_PI * u)
    sin_u = cmath.sin(TWO_PI * u)
    w = 1.0 - y * y
    g = -2.0 * y * c + w * cp
    fu = k2 * cos_u * g
    fy = k2 * TWO_PI * w * c * sin_u
    if have_inc:
        un = u + inc_u
        yn = y + inc_y
    else:
        un = u + h * fu
        yn = y + h * fy
    bmat = np.empty((4, 4))
    for _ in range(max_newton):
        mu = 0.5 * (u + un)
        my = 0.5 * (y + yn)
        cc, ccp, ccpp = _cutoff(my.real, collar)
        mcos = cmath.cos(TWO_PI * mu)
        msin = cmath.sin(TWO_PI * mu)
        mw = 1.0 - my * my
        mg = -2.0 * my * cc + mw * ccp
        ru = un - u - h * (k2 * mcos * mg)
        ry = yn - y - h * (k2 * TWO_PI * mw * cc * msin)
        a_uu = -k2 * TWO_PI * msin * mg
        a_uy = k2 * mcos * (-2.0 * cc - 2.0 * my * ccp)
        a_yu = k2 * TWO_PI * TWO_PI * mw * cc * mcos
        a_yy = k2 * TWO_PI * msin * (-2.0 * my * cc)
        e_uy = k2 * mcos * (-2.0 * my * ccp + mw * ccpp)
        e_yy = k2 * TWO_PI * msin * mw * ccp
        bmat[0, 0] = 1.0 - hh * a_uu.real
        bmat[0, 1] = hh * a_uu.imag
        bmat[0, 2] = -hh * (a_uy.real + e_uy.real)
        bmat[0, 3] = hh * a_uy.imag
        bmat[1, 0] = -hh * a_uu.imag
        bmat[1, 1] = 1.0 - hh * a_uu.real
        bmat[1, 2] = -hh * (a_uy.imag + e_uy.imag)
        bmat[1, 3] = -hh * a_uy.real
        bmat[2, 0] = -hh * a_yu.real
        bmat[2, 1] = hh * a_yu.imag
        bmat[2, 2] = 1.0 - hh * (a_yy.real + e_yy.real)
        bmat[2, 3] = hh * a_yy.imag
        bmat[3, 0] = -hh * a_yu.imag
        bmat[3, 1] = -hh * a_yu.real
        bmat[3, 2] = -hh * (a_yy.imag + e_yy.imag)
        bmat[3, 3] = 1.0 - hh * a_yy.real
        du_r, du_i, dy_r, dy_i = _solve4(bmat, ru.real, ru.imag,
                                         ry.real, ry.imag)
        un -= complex(du_r, du_i)
        yn -= complex(dy_r, dy_i)
        if abs(du_r) + abs(du_i) + abs(dy_r) + abs(dy_i) <= tol:
            return un, yn, True
    return un, yn, False


@njit(cache=True, parallel=True)
def integrate_cplx(u0, y0, k_eff, collar, h, n_steps, tol, max_newton,
                   want_jac, jac_out, fail_flag):
    """Complex128 version with the exact real-linear Newton model.

    Steps whose solve stalls (cutoff-band transits with large imaginary
    parts) are deterministically re-taken as 8, then 64, substeps.
    """
    n = u0.shape[0]
    hh = 0.5 * h
    k2 = 2.0 * k_eff
    zero = 0.0 + 0.0j
    for i in prange(n):
        u = u0[i]
        y = y0[i]
        j00 = 1.0 + 0.0j
        j01 = 0.0 + 0.0j
        j10 = 0.0 + 0.0j
        j11 = 1.0 + 0.0j
        inc_u = zero
        inc_y = zero
        have_inc = False
        ok = True
        for s in range(n_steps):
            un, yn, conv = _cplx_step(u, y, h, k2, collar, tol, max_newton,
                                      inc_u, inc_y, have_inc)
            if not conv:
                uu = u
                yy = y
                conv = True
                for _ in range(8):
                    u2, y2, c2 = _cplx_step(uu, yy, h / 8.0, k2, collar, tol,
                                            max_newton, zero, zero, False)
                    if not c2:
                        c2 = True
                        for _ in range(8):
                            u3, y3, c3 = _cplx_step(uu, yy, h / 64.0, k2,
                                                    collar, tol, max_newton,
                                                    zero, zero, False)
                            if not c3:
                                c2 = False
                                break
                            uu = u3
                            yy = y3
                        if not c2:
                            conv = False
                            break
                    else:
                        uu = u2
                        yy = y2
                un = uu
                yn = yy
            if not conv:
                ok = False
                break
            if want_jac:
                mu = 0.5 * (u + un)
                my = 0.5 * (y + yn)
                cc, ccp, ccpp = _cutoff(my.real, collar)
                mcos = cmath.cos(TWO_PI * mu)
                msin = cmath.sin(TWO_PI * mu)
                mw = 1.0 - my * my
                mg = -2.0 * my * cc + mw * ccp
                mg_y = -2.0 * cc - 4.0 * my * ccp + mw * ccpp
                a_uu = -k2 * TWO_PI * msin * mg
                a_uy = k2 * mcos * mg_y
                a_yu = k2 * TWO_PI * TWO_PI * mw * cc * mcos
                a_yy = k2 * TWO_PI * msin * mg
                b_uu = 1.0 - hh * a_uu
                b_uy = -hh * a_uy
                b_yu = -hh * a_yu
                b_yy = 1.0 - hh * a_yy
                inv_det = 1.0 / (b_uu * b_yy - b_uy * b_yu)
                p_uu = 1.0 + hh * a_uu
                p_uy = hh * a_uy
                p_yu = hh * a_yu
                p_yy = 1.0 + hh * a_yy
                c_uu = (b_yy * p_uu - b_uy * p_yu) * inv_det
                c_uy = (b_yy * p_uy - b_uy * p_yy) * inv_det
                c_yu = (b_uu * p_yu - b_yu * p_uu) * inv_det
                c_yy = (b_uu * p_yy - b_yu * p_uy) * inv_det
                t00 = c_uu * j00 + c_uy * j10
                t01 = c_uu * j01 + c_uy * j11
                t10 = c_yu * j00 + c_yy * j10
                t11 = c_yu * j01 + c_yy * j11
                j00 = t00
                j01 = t01
                j10 = t10
                j11 = t11
            inc_u = un - u
            inc_y = yn - y
            have_inc = True
            u = un
            y = yn
        if not ok:
            fail_flag[i] = 1
        u0[i] = u
        y0[i] = y
        if want_jac:
            jac_out[0, i] = j00
            jac_out[1, i] = j01
            jac_out[2, i] = j10
            jac_out[3, i] = j11
