"""Compiled inner loops: the separable l1-ball prox solver and the CSMD stage loop.

Notation shared by every kernel (``u = z - x0`` is the displacement from the
ball center, ``b = x0``):

    f_i(u) = a_i u + kappa |u + b_i| + lam |u| + (w / p) |u|^p

The smooth part has derivative ``phi(u) = w sign(u) |u|^(p-1)`` whose inverse is
``sign(y) (|y| / w)^q`` with ``q = 1 / (p - 1)``. ``gb_i = phi(-b_i)`` is the
smooth derivative at the second kink.
"""

import math

import numpy as np
from numba import njit

OK = 0
NOT_CONVERGED = 1
NON_FINITE = 2

_LOG_CAP = 700.0
# fast-math without the no-NaN/no-inf assumptions, so finiteness checks survive
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


# fdlibm log kernel coefficients and the split of ln 2
_LG1 = 6.666666666666735130e-01
_LG2 = 3.999999999940941908e-01
_LG3 = 2.857142874366239149e-01
_LG4 = 2.222219843214978396e-01
_LG5 = 1.818357216161805012e-01
_LG6 = 1.531383769920937332e-01
_LG7 = 1.479819860511658591e-01
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.4426950408889634
_TWO52 = 4503599627370496.0
_MIN_NORMAL = 2.2250738585072014e-308
_EXP_FLOOR = -708.0

WORK_ROWS = 6


def workspace(n):
    """Scratch buffer for :func:`prox_solve` and :func:`rda_block`."""
    return np.empty((WORK_ROWS, n))


@njit(cache=True, fastmath=True, error_model="numpy")
def pow_shifted(v, q, shift, out, ibuf, ebuf):
    """out_i = exp(min(q (log v_i - shift), 700)) for v_i > 0, else 0.

    Branch-free so that the loops vectorize; ``ibuf`` and ``ebuf`` are int64
    scratch arrays of the same length. Results below exp(-708) flush to zero.
    """
    n = v.shape[0]
    vb = v.view(np.int64)
    fb = ibuf.view(np.float64)
    fe = ebuf.view(np.float64)
    for i in range(n):
        b = vb[i]
        ibuf[i] = (b & 0x000FFFFFFFFFFFFF) | 0x3FF0000000000000
        ebuf[i] = ((b >> 52) & 0x7FF) | 0x4330000000000000
    for i in range(n):
        m = fb[i]
        ef = fe[i] - (_TWO52 + 1023.0)
        big = m > 1.4142135623730951
        m = m * 0.5 if big else m
        ef = ef + 1.0 if big else ef
        f = m - 1.0
        s = f / (2.0 + f)
        z = s * s
        w = z * z
        t1 = w * (_LG2 + w * (_LG4 + w * _LG6))
        t2 = z * (_LG1 + w * (_LG3 + w * (_LG5 + w * _LG7)))
        hfsq = 0.5 * f * f
        lg = ef * _LN2_HI - ((hfsq - (s * (hfsq + t1 + t2) + ef * _LN2_LO)) - f)
        x = q * (lg - shift)
        x = min(x, _LOG_CAP)
        out[i] = max(x, _EXP_FLOOR - 1.0)
    for i in range(n):
        x = max(out[i], _EXP_FLOOR)
        k = math.floor(x * _INV_LN2 + 0.5)
        r = (x - k * _LN2_HI) - k * _LN2_LO
        # Taylor polynomial of exp on |r| <= ln(2)/2, remainder below 1e-17
        e = 1.0 + r * (1.0 + r * (0.5 + r * (1 / 6 + r * (1 / 24 + r * (1 / 120 + r * (
            1 / 720 + r * (1 / 5040 + r * (1 / 40320 + r * (1 / 362880 + r * (
                1 / 3628800 + r * (1 / 39916800 + r * (1 / 479001600 + r * (
                    1 / 6227020800)))))))))))))
        fb[i] = e
        fe[i] = k + (_TWO52 + 1023.0)
    for i in range(n):
        ebuf[i] = ebuf[i] << 52
    for i in range(n):
        res = fb[i] * fe[i]
        keep = (v[i] >= _MIN_NORMAL) and (out[i] >= _EXP_FLOOR)
        out[i] = res if keep else 0.0


@njit(cache=True, inline="always")
def _inv_phi(y, logw, q):
    if y == 0.0:
        return 0.0
    e = q * (math.log(abs(y)) - logw)
    if e > _LOG_CAP:
        e = _LOG_CAP
    mag = math.exp(e)
    return mag if y > 0.0 else -mag


@njit(cache=True, inline="always")
def _coord_dual(a, b, gb, kappa, lam):
    """Smooth derivative y at the minimizer of f_i and the kink it sits on.

    Returns ``(y, on_kink, u_kink)``; off a kink the minimizer is inv_phi(y).
    """
    if b == 0.0:
        k1 = 0.0
        k2 = 0.0
        phi1 = 0.0
        phi2 = 0.0
        sb_m = 1.0
        su_m = 1.0
    elif b < 0.0:
        # kinks at 0 < -b; between them u > 0 and u + b < 0
        k1 = 0.0
        k2 = -b
        phi1 = 0.0
        phi2 = gb
        sb_m = -1.0
        su_m = 1.0
    else:
        k1 = -b
        k2 = 0.0
        phi1 = gb
        phi2 = 0.0
        sb_m = 1.0
        su_m = -1.0

    d_mid = a + kappa * sb_m + lam * su_m
    if a - kappa - lam + phi1 > 0.0:
        return -(a - kappa - lam), False, 0.0
    if d_mid + phi1 >= 0.0:
        return phi1, True, k1
    if d_mid + phi2 > 0.0:
        return -d_mid, False, 0.0
    d_right = a + kappa + lam
    if d_right + phi2 >= 0.0:
        return phi2, True, k2
    return -d_right, False, 0.0


@njit(cache=True)
def coord_argmin(a, b, gb, kappa, lam, logw, q):
    """Exact minimizer of the scalar problem f_i.

    Returns ``(u, y, smooth)`` where ``y`` is the smooth-part derivative at
    ``u`` and ``smooth`` is 1 when ``u`` lies strictly inside a piece
    (0 when it sits on a kink).
    """
    y, kink, uk = _coord_dual(a, b, gb, kappa, lam)
    if kink:
        return uk, y, 0
    return _inv_phi(y, logw, q), y, 1


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _dual_pass(a, b, gb, kappa, lam, y, ay, kval, flag):
    """Branch-free form of :func:`_coord_dual` over all coordinates; returns sum |y|.

    With phi1 = min(gb, 0) <= phi2 = max(gb, 0) the smooth derivatives at the
    two kinks, y = min(-d_left, max(phi1, min(-d_mid, max(phi2, -d_right)))).
    """
    check = 0.0
    for i in range(a.shape[0]):
        ai = a[i]
        bi = b[i]
        sg = (1.0 if bi > 0.0 else 0.0) - (1.0 if bi < 0.0 else 0.0)
        p1 = min(gb[i], 0.0)
        p2 = max(gb[i], 0.0)
        d_left = ai - kappa - lam
        d_mid = ai + kappa * sg - lam * sg
        d_right = ai + kappa + lam
        yi = min(-d_left, max(p1, min(-d_mid, max(p2, -d_right))))
        y[i] = yi
        ay[i] = abs(yi)
        on1 = yi == p1
        kval[i] = min(-bi, 0.0) if on1 else max(-bi, 0.0)
        flag[i] = 1.0 if (on1 or yi == p2) else 0.0
        check += abs(yi)
    return check


@njit(cache=True, fastmath=_FAST, error_model="numpy")
def _norm_at(a, b, gb, kappa, lam, logw, q, u, y, centered, work):
    """Fill u, y for a given multiplier and return ||u||_1.

    The dual y is found coordinatewise first, then inverted in one vector pass.
    """
    n = a.shape[0]
    mag = work[0]
    ay = work[1]
    kval = work[2]
    flag = work[3]
    ibuf = work[4].view(np.int64)
    ebuf = work[5].view(np.int64)
    if centered:
        # all b_i = 0: both kinks sit at u = 0 and the solution is a soft threshold
        thr = kappa + lam
        check = 0.0
        for i in range(n):
            ai = a[i]
            v = max(abs(ai) - thr, 0.0)
            y[i] = -v if ai > 0.0 else v
            ay[i] = v
            check += v
    else:
        check = _dual_pass(a, b, gb, kappa, lam, y, ay, kval, flag)
    if not math.isfinite(check):
        return check
    pow_shifted(ay, q, logw, mag, ibuf, ebuf)
    h = 0.0
    if centered:
        for i in range(n):
            u[i] = -mag[i] if y[i] < 0.0 else mag[i]
            h += mag[i]
    else:
        for i in range(n):
            m = -mag[i] if y[i] < 0.0 else mag[i]
            ui = kval[i] if flag[i] != 0.0 else m
            u[i] = ui
            h += abs(ui)
    return h


@njit(cache=True)
def _slope(b, q, u, y):
    """d||u||_1/dlam: only coordinates strictly inside a smooth piece move."""
    dh = 0.0
    for i in range(u.shape[0]):
        ui = u[i]
        if ui != 0.0 and ui != -b[i] and y[i] != 0.0:
            dh -= q * abs(ui) / abs(y[i])
    return dh


@njit(cache=True)
def prox_solve(a, b, gb, kappa, logw, q, radius, tol, max_iter, u, y, centered, work):
    """Minimize sum_i f_i(u_i) subject to ||u||_1 <= radius.

    The ball constraint is dualized; the multiplier is found by safeguarded
    Newton on ``h(lam)^(1/q) - radius^(1/q)`` inside a bisection bracket.
    Writes the solution into ``u`` and the smooth derivative into ``y``.
    ``centered`` declares that every b_i is zero (a faster path); ``work``
    comes from :func:`workspace`.
    Returns ``(status, lam, iterations)``.
    """
    h = _norm_at(a, b, gb, kappa, 0.0, logw, q, u, y, centered, work)
    if h <= radius + tol:
        return OK, 0.0, 0
    dh = _slope(b, q, u, y)
    lo = 0.0
    hi = kappa
    for i in range(a.shape[0]):
        v = abs(a[i])
        if v + kappa > hi:
            hi = v + kappa
    hi = hi * (1.0 + 1e-12) + 1e-300
    lam = lo
    inv_q = 1.0 / q
    target = radius ** inv_q
    for it in range(1, max_iter + 1):
        new = -1.0
        if math.isfinite(h) and h > 0.0 and dh < 0.0:
            psi = h ** inv_q - target
            dpsi = inv_q * h ** (inv_q - 1.0) * dh
            cand = lam - psi / dpsi
            if math.isfinite(cand) and lo < cand < hi:
                new = cand
        if new < 0.0:
            new = 0.5 * (lo + hi)
        lam = new
        h = _norm_at(a, b, gb, kappa, lam, logw, q, u, y, centered, work)
        if not math.isfinite(h):
            lo = lam
            continue
        if abs(h - radius) <= tol:
            return OK, lam, it
        if h > radius:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 1e-15 * hi:
            h = _norm_at(a, b, gb, kappa, hi, logw, q, u, y, centered, work)
            if h <= radius + tol:
                return OK, hi, it
            return NOT_CONVERGED, hi, it
        dh = _slope(b, q, u, y)
    return NOT_CONVERGED, lam, max_iter


@njit(cache=True, inline="always")
def activation(alpha, t):
    at = abs(t)
    if at <= 1.0:
        return t
    if alpha == 1.0:
        return t
    if alpha == 0.0:
        v = math.log(at) + 1.0
    else:
        v = (at ** alpha - 1.0) / alpha + 1.0
    return v if t > 0.0 else -v


@njit(cache=True)
def response(phi, idx, vals, alpha, sigma, noise, out):
    """out_r = r(phi_r . x) + sigma noise_r with x supported on ``idx``.

    The dot product runs in increasing index order like the one in
    :func:`accumulate_gradient`; skipped terms are exact zeros, so the
    noiseless residual at x is exactly 0.
    """
    for r in range(phi.shape[0]):
        s = 0.0
        for k in range(idx.shape[0]):
            s += phi[r, idx[k]] * vals[k]
        out[r] = activation(alpha, s) + sigma * noise[r]


@njit(cache=True)
def accumulate_gradient(phi, eta, row0, rows, x, alpha, out):
    """out += sum over rows of phi_r (r(phi_r . x) - eta_r)."""
    n = x.shape[0]
    for r in range(row0, row0 + rows):
        s = 0.0
        for j in range(n):
            s += phi[r, j] * x[j]
        res = activation(alpha, s) - eta[r]
        if res != 0.0:
            for j in range(n):
                out[j] += res * phi[r, j]


@njit(cache=True)
def prox_step(grad, grad_step, pen_step, kappa, x0, gb, u, y, logw, q,
              radius, tol, max_iter, a_buf, centered, work):
    """One CSMD update in displacement/dual coordinates; overwrites u, y."""
    for j in range(u.shape[0]):
        a_buf[j] = grad_step * grad[j] - y[j]
    status, lam, its = prox_solve(a_buf, x0, gb, pen_step * kappa, logw, q,
                                  radius, tol, max_iter, u, y, centered, work)
    return status


@njit(cache=True)
def run_block(phi, eta, batch, n_iter, grad_steps, pen_steps, avg_w, avg_after,
              kappa, x0, gb, u, y, xsum, logw, q, radius, tol, max_iter, alpha, centered):
    """Run ``n_iter`` CSMD iterations consuming ``n_iter * batch`` rows.

    ``grad_steps[i]``, ``pen_steps[i]`` and ``avg_w[i]`` belong to the i-th
    iteration of the block. The weighted average accumulates x_{i-1}
    (``avg_after`` false) or x_i (true); ``xsum`` holds the weighted sum of
    displacements u = x - x0. Returns a status code.
    """
    n = u.shape[0]
    grad = np.zeros(n)
    a_buf = np.empty(n)
    x = np.empty(n)
    work = np.empty((WORK_ROWS, n))
    inv_l = 1.0 / batch
    for it in range(n_iter):
        wt = 0.0 if avg_after else avg_w[it]
        for j in range(n):
            xj = x0[j] + u[j]
            x[j] = xj
            xsum[j] += wt * u[j]
            grad[j] = 0.0
        accumulate_gradient(phi, eta, it * batch, batch, x, alpha, grad)
        status = prox_step(grad, grad_steps[it] * inv_l, pen_steps[it], kappa, x0, gb,
                           u, y, logw, q, radius, tol, max_iter, a_buf, centered, work)
        if status != OK:
            return status
        if avg_after:
            wt = avg_w[it]
            for j in range(n):
                xsum[j] += wt * u[j]
    return OK


@njit(cache=True)
def rda_block(phi, eta, n_iter, i0, gsum, x, xsum, lam, beta0, c, q, alpha):
    """Dual averaging iterations i0+1 .. i0+n_iter with the p-norm regularizer.

    x_i = argmin <gsum_i, z> + i lam ||z||_1 + beta0 sqrt(i) (c/p) ||z||_p^p,
    solved coordinatewise by soft-thresholding in the dual. xsum accumulates x_i.
    """
    n = x.shape[0]
    grad = np.zeros(n)
    work = np.empty((WORK_ROWS, n))
    v = work[0]
    mag = work[1]
    ibuf = work[2].view(np.int64)
    ebuf = work[3].view(np.int64)
    logc = math.log(c)
    for it in range(n_iter):
        for j in range(n):
            grad[j] = 0.0
        accumulate_gradient(phi, eta, it, 1, x, alpha, grad)
        i = i0 + it + 1
        thr = i * lam
        lb = math.log(beta0 * math.sqrt(i)) + logc
        for j in range(n):
            g = gsum[j] + grad[j]
            gsum[j] = g
            v[j] = max(abs(g) - thr, 0.0)
        pow_shifted(v, q, lb, mag, ibuf, ebuf)
        for j in range(n):
            xj = -mag[j] if gsum[j] > 0.0 else mag[j]
            x[j] = xj
            xsum[j] += xj


@njit(cache=True)
def sgd_block(phi, eta, n_iter, steps, x, xsum, wsum, alpha):
    """Plain Euclidean SGD; xsum accumulates step-weighted iterates x_i."""
    n = x.shape[0]
    grad = np.zeros(n)
    for it in range(n_iter):
        for j in range(n):
            grad[j] = 0.0
        accumulate_gradient(phi, eta, it, 1, x, alpha, grad)
        g = steps[it]
        for j in range(n):
            x[j] -= g * grad[j]
            xsum[j] += g * x[j]
        wsum[0] += g
