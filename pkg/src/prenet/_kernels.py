"""Compiled coordinate-descent kernels.

Family codes follow ``model.FAMILY_CODES``. Every coordinate update is the
exact minimizer of the one-dimensional surrogate

    f(x) = (a * x**2 - 2 * c * x) / (2 * psi) + pen(x)

where ``pen`` collects the penalty terms that depend on the coordinate.
"""

import numpy as np
from numba import njit

PRENET, WPRENET, ENET, LASSO, MC, QUARTIMIN, VARIMAX = range(7)


@njit(cache=True, nogil=True)
def soft(theta, thr):
    if theta > thr:
        return theta - thr
    if theta < -thr:
        return theta + thr
    return 0.0


@njit(cache=True, nogil=True)
def _mc_value(x, rho, gamma):
    ax = abs(x)
    if np.isinf(gamma):
        return rho * ax
    if ax < rho * gamma:
        return rho * (ax - ax * ax / (2.0 * rho * gamma))
    return 0.5 * rho * rho * gamma


@njit(cache=True, nogil=True)
def coord_objective(code, x, c, a, psi, rho, gamma, w, s1, s2, col_rest, p):
    """Value of the 1-d surrogate at ``x``.

    s1, s2 are the sums of |lam_ik| and lam_ik**2 over the other columns of
    the row; col_rest is the sum of lam_i'j**2 over the other rows.
    """
    val = (a * x * x - 2.0 * c * x) / (2.0 * psi)
    ax = abs(x)
    if code == PRENET or code == WPRENET:
        val += rho * (gamma * w * ax * s1 + 0.5 * (1.0 - gamma) * w * w * x * x * s2)
    elif code == ENET:
        val += rho * (gamma * ax + 0.5 * (1.0 - gamma) * x * x)
    elif code == LASSO:
        val += rho * ax
    elif code == MC:
        val += _mc_value(x, rho, gamma)
    elif code == QUARTIMIN:
        val += rho * x * x * s2
    elif code == VARIMAX:
        q = x * x + col_rest
        val += rho * (2.0 * x * x * s2 + q * q / p)
    return val


@njit(cache=True, nogil=True)
def _depressed_cubic_root(pp, qq):
    # unique real root of x**3 + pp*x - qq = 0 for pp > 0
    if qq == 0.0:
        return 0.0
    sgn = 1.0
    if qq < 0.0:
        sgn = -1.0
        qq = -qq
    d = np.sqrt(0.25 * qq * qq + pp * pp * pp / 27.0)
    t = np.cbrt(0.5 * qq + d)
    x = t - pp / (3.0 * t)
    for _ in range(3):
        fx = x * x * x + pp * x - qq
        x -= fx / (3.0 * x * x + pp)
    return sgn * x


@njit(cache=True, nogil=True)
def coord_minimize(code, c, a, psi, rho, gamma, w, s1, s2, col_rest, p):
    """Exact minimizer of ``coord_objective`` over x."""
    if rho == 0.0:
        return c / a
    if code == PRENET or code == WPRENET:
        beta = rho * psi * (1.0 - gamma) * w * w * s2
        xi = gamma * w * s1
        denom = a + beta
        return soft(c / denom, psi * rho * xi / denom)
    if code == ENET or code == LASSO:
        g = 1.0 if code == LASSO else gamma
        denom = a + rho * psi * (1.0 - g)
        return soft(c / denom, psi * rho * g / denom)
    if code == QUARTIMIN:
        return c / (a + 2.0 * rho * psi * s2)
    if code == VARIMAX:
        lead = 4.0 * rho / p
        pp = (a / psi + 4.0 * rho * s2 + 4.0 * rho * col_rest / p) / lead
        qq = (c / psi) / lead
        return _depressed_cubic_root(pp, qq)
    if code == MC:
        z = c / a
        t = psi / a
        if np.isinf(gamma):
            return soft(z, t * rho)
        edge = rho * gamma
        if 1.0 - t / gamma > 0.0:
            if abs(z) >= edge:
                return z
            return soft(z, t * rho) / (1.0 - t / gamma)
        # nonconvex scalar problem: minimum sits at 0, at +-edge or at z
        best = 0.0
        fbest = coord_objective(code, 0.0, c, a, psi, rho, gamma, w, s1, s2, col_rest, p)
        for cand in (edge, -edge, z):
            if cand == z and abs(z) < edge:
                continue
            fc = coord_objective(code, cand, c, a, psi, rho, gamma, w, s1, s2, col_rest, p)
            if fc < fbest:
                best = cand
                fbest = fc
        return best
    return c / a


@njit(cache=True, nogil=True)
def row_context(lam, i, j, a_mat, b, colsq):
    m = lam.shape[1]
    c = b[i, j]
    s1 = 0.0
    s2 = 0.0
    for k in range(m):
        if k != j:
            v = lam[i, k]
            c -= a_mat[k, j] * v
            s1 += abs(v)
            s2 += v * v
    col_rest = colsq[j] - lam[i, j] * lam[i, j]
    return c, s1, s2, col_rest


@njit(cache=True, nogil=True)
def cd_sweeps(code, lam, b, a_mat, psi, rho, gamma, w, max_sweeps, tol):
    """Cyclic coordinate descent on the loading surrogate, in place.

    Returns the number of sweeps and the total decrease of the surrogate.
    """
    p, m = lam.shape
    colsq = np.zeros(m)
    total = 0.0
    sweeps = 0
    for sweep in range(max_sweeps):
        for j in range(m):
            acc = 0.0
            for i in range(p):
                acc += lam[i, j] * lam[i, j]
            colsq[j] = acc
        dec = 0.0
        for i in range(p):
            for j in range(m):
                c, s1, s2, col_rest = row_context(lam, i, j, a_mat, b, colsq)
                a = a_mat[j, j]
                old = lam[i, j]
                new = coord_minimize(code, c, a, psi[i], rho, gamma, w[i], s1, s2, col_rest, p)
                f_old = coord_objective(code, old, c, a, psi[i], rho, gamma, w[i], s1, s2, col_rest, p)
                f_new = coord_objective(code, new, c, a, psi[i], rho, gamma, w[i], s1, s2, col_rest, p)
                if f_new > f_old:
                    new = old
                    f_new = f_old
                dec += f_old - f_new
                colsq[j] += new * new - old * old
                lam[i, j] = new
        sweeps = sweep + 1
        total += dec
        if dec < tol:
            break
    return sweeps, total


@njit(cache=True, nogil=True)
def _pair_sum_row(lam, i, absolute):
    m = lam.shape[1]
    tot = 0.0
    sq = 0.0
    for k in range(m):
        v = abs(lam[i, k]) if absolute else lam[i, k] * lam[i, k]
        tot += v
        sq += v * v
    return 0.5 * (tot * tot - sq)


@njit(cache=True, nogil=True)
def scaled_penalty(code, lam, rho, gamma, w):
    """rho * P(lam), or the MC penalty which already contains rho."""
    p, m = lam.shape
    if code != MC and rho == 0.0:
        return 0.0
    val = 0.0
    if code == PRENET or code == WPRENET:
        for i in range(p):
            val += gamma * w[i] * _pair_sum_row(lam, i, True)
            val += 0.5 * (1.0 - gamma) * w[i] * w[i] * _pair_sum_row(lam, i, False)
    elif code == ENET or code == LASSO:
        g = 1.0 if code == LASSO else gamma
        for i in range(p):
            for j in range(m):
                val += g * abs(lam[i, j]) + 0.5 * (1.0 - g) * lam[i, j] * lam[i, j]
    elif code == MC:
        for i in range(p):
            for j in range(m):
                val += _mc_value(lam[i, j], rho, gamma)
        return val
    elif code == QUARTIMIN:
        for i in range(p):
            val += _pair_sum_row(lam, i, False)
    elif code == VARIMAX:
        for i in range(p):
            val += 2.0 * _pair_sum_row(lam, i, False)
        for j in range(m):
            cs = 0.0
            for i in range(p):
                cs += lam[i, j] * lam[i, j]
            val += cs * cs / p
    return rho * val


@njit(cache=True, nogil=True)
def estep(lam, psi, s, logdet_s):
    """M^-1, A, b and the discrepancy at (lam, psi)."""
    p, m = lam.shape
    lam_psi = lam / psi.reshape((p, 1))
    m_mat = lam.T @ lam_psi + np.eye(m)
    m_inv = np.linalg.inv(m_mat)
    m_inv = 0.5 * (m_inv + m_inv.T)
    w = s @ lam_psi
    b = w @ m_inv
    inner = lam_psi.T @ w
    inner = 0.5 * (inner + inner.T)
    a_mat = m_inv + m_inv @ inner @ m_inv
    a_mat = 0.5 * (a_mat + a_mat.T)
    trace = 0.0
    for i in range(p):
        trace += s[i, i] / psi[i]
    trace -= np.sum(m_inv * inner)
    _, logdet_m = np.linalg.slogdet(m_mat)
    loss = 0.5 * (trace + np.sum(np.log(psi)) + logdet_m - logdet_s - p)
    return a_mat, b, loss


@njit(cache=True, nogil=True)
def psi_update(lam, a_mat, b, s_diag, floor):
    p, m = lam.shape
    out = np.empty(p)
    for i in range(p):
        quad = 0.0
        lin = 0.0
        for j in range(m):
            lin += lam[i, j] * b[i, j]
            for k in range(m):
                quad += lam[i, j] * a_mat[j, k] * lam[i, k]
        v = s_diag[i] - 2.0 * lin + quad
        out[i] = v if v > floor[i] else floor[i]
    return out


@njit(cache=True, nogil=True)
def gem_loop(code, lam, psi, s, logdet_s, floor, rho, gamma, w, max_em, max_cd, tol, cd_tol):
    """Full GEM iteration; returns (lam, psi, trace, n_iter, converged)."""
    s_diag = np.diag(s).copy()
    trace = np.empty(max_em + 1)
    a_mat, b, loss = estep(lam, psi, s, logdet_s)
    obj = loss + scaled_penalty(code, lam, rho, gamma, w)
    trace[0] = obj
    converged = False
    it = 0
    for it in range(1, max_em + 1):
        lam_new = lam.copy()
        cd_sweeps(code, lam_new, b, a_mat, psi, rho, gamma, w, max_cd, cd_tol)
        psi_new = psi_update(lam_new, a_mat, b, s_diag, floor)
        a_mat, b, loss = estep(lam_new, psi_new, s, logdet_s)
        obj_new = loss + scaled_penalty(code, lam_new, rho, gamma, w)
        lam = lam_new
        psi = psi_new
        trace[it] = obj_new
        if abs(obj - obj_new) / (abs(obj) + 1.0) < tol:
            converged = True
            break
        obj = obj_new
    return lam, psi, trace[: it + 1].copy(), it, converged


@njit(cache=True, nogil=True)
def pss_mstep(b, a_mat):
    p, m = b.shape
    lam = np.zeros((p, m))
    for i in range(p):
        best = -1.0
        col = 0
        for k in range(m):
            crit = b[i, k] * b[i, k] / a_mat[k, k]
            if crit > best:
                best = crit
                col = k
        lam[i, col] = b[i, col] / a_mat[col, col]
    return lam


@njit(cache=True, nogil=True)
def pss_loop(lam, psi, s, logdet_s, floor, fix_psi, max_iter, tol, step_tol):
    """EM over perfectly simple loadings.

    Stops on a relative objective change below ``tol`` or, when ``step_tol``
    is positive, on a maximum parameter change below ``step_tol``.
    """
    s_diag = np.diag(s).copy()
    trace = np.empty(max_iter + 1)
    a_mat, b, loss = estep(lam, psi, s, logdet_s)
    trace[0] = loss
    obj = loss
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lam_new = pss_mstep(b, a_mat)
        if fix_psi:
            psi_new = psi.copy()
        else:
            psi_new = psi_update(lam_new, a_mat, b, s_diag, floor)
        step = max(np.max(np.abs(lam_new - lam)), np.max(np.abs(psi_new - psi)))
        a_mat, b, loss = estep(lam_new, psi_new, s, logdet_s)
        lam = lam_new
        psi = psi_new
        trace[it] = loss
        if step_tol > 0.0:
            if step <= step_tol:
                converged = True
                break
        elif abs(obj - loss) / (abs(obj) + 1.0) < tol:
            converged = True
            break
        obj = loss
    return lam, psi, trace[: it + 1].copy(), it, converged
