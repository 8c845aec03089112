"""
Compiled node kernels for the monotone scheme.

Stencil arrays are node-major, shape (N, D, 2): side 0 is the +v arm, side
1 the -v arm.  ``nbr`` holds the interior index of the arm end, or -1 when
the arm was cut at the boundary, in which case ``bval`` holds g there.
``cw`` are the unequal-arm second-difference weights

    d_k = cw[i,k,0] (u+ - u0) + cw[i,k,1] (u- - u0).

Directions come in frames: 2f and 2f+1 are orthogonal; 0 and 1 are the axes.
``gw`` (N, 2, 4) holds per axis the upwind weights 1/a+, 1/a- and the
centred weights a-/(a+(a+ + a-)), a+/(a-(a+ + a-)).
"""

import math

import numpy as np
from numba import njit

PUCCI_PLUS, PUCCI_MINUS, LINEAR_FAMILY = 0, 1, 2


@njit(cache=True, nogil=True)
def _side(i, k, s, u, nbr, bval):
    j = nbr[i, k, s]
    if j >= 0:
        return u[j]
    return bval[i, k, s]


@njit(cache=True, nogil=True)
def second_diff(i, k, u, nbr, cw, bval):
    return _second_diff(i, k, u[i], u, nbr, cw, bval)


@njit(cache=True, nogil=True)
def _second_diff(i, k, u0, u, nbr, cw, bval):
    return cw[i, k, 0] * (_side(i, k, 0, u, nbr, bval) - u0) + \
        cw[i, k, 1] * (_side(i, k, 1, u, nbr, bval) - u0)


@njit(cache=True, nogil=True)
def discrete_operator(i, u, nbr, cw, bval, op_kind, lam, Lam, W, sup_mode):
    """F_h(u) at interior node i and the index of the active frame/member."""
    return _discrete_operator(i, u[i], u, nbr, cw, bval, op_kind, lam, Lam, W, sup_mode)


@njit(cache=True, nogil=True)
def _discrete_operator(i, u0, u, nbr, cw, bval, op_kind, lam, Lam, W, sup_mode):
    # as discrete_operator, with the centre value u0 in place of u[i]
    D = nbr.shape[1]
    best = 0.0
    arg = 0
    if op_kind == LINEAR_FAMILY:
        for m in range(W.shape[0]):
            s = 0.0
            for k in range(D):
                w = W[m, i, k]
                if w != 0.0:
                    s += w * _second_diff(i, k, u0, u, nbr, cw, bval)
            if m == 0 or (sup_mode and s > best) or ((not sup_mode) and s < best):
                best = s
                arg = m
        return best, arg
    plus = op_kind == PUCCI_PLUS
    for fr in range(D // 2):
        s = 0.0
        for k in range(2 * fr, 2 * fr + 2):
            d = _second_diff(i, k, u0, u, nbr, cw, bval)
            if plus:
                s += Lam * d if d > 0 else lam * d
            else:
                s += lam * d if d > 0 else Lam * d
        if fr == 0 or (plus and s > best) or ((not plus) and s < best):
            best = s
            arg = fr
    return best, arg


@njit(cache=True, nogil=True)
def gradient_parts(i, u, nbr, bval, gw, xi0, xi1):
    """
    Upwind magnitudes (g_up, g_dn) and centred magnitude of xi + Du at node i.

    g_up is nondecreasing in neighbour values and nonincreasing in u[i];
    g_dn the reverse.
    """
    return _gradient_parts(i, u[i], u, nbr, bval, gw, xi0, xi1)


@njit(cache=True, nogil=True)
def _gradient_parts(i, u0, u, nbr, bval, gw, xi0, xi1):
    gup2 = 0.0
    gdn2 = 0.0
    gc2 = 0.0
    for k in range(2):
        xi = xi0 if k == 0 else xi1
        dp = _side(i, k, 0, u, nbr, bval) - u0
        dm = u0 - _side(i, k, 1, u, nbr, bval)
        b = xi + dp * gw[i, k, 0]
        a = xi + dm * gw[i, k, 1]
        m_up = max(b, -a, 0.0)
        m_dn = max(a, -b, 0.0)
        gup2 += m_up * m_up
        gdn2 += m_dn * m_dn
        c = xi + dp * gw[i, k, 2] + dm * gw[i, k, 3]
        gc2 += c * c
    return math.sqrt(gup2), math.sqrt(gdn2), math.sqrt(gc2)


@njit(cache=True, nogil=True)
def phi_at(i, F, gup, gdn, gc, coef, expo, eta, upwind):
    """Phi and a bound on |dPhi/dt| from the gradient magnitude selected per term."""
    phi = 0.0
    dphi = 0.0
    for j in range(coef.shape[0]):
        c = coef[j, i]
        if c == 0.0:
            continue
        p = expo[j, i]
        if p == 0.0:
            phi += c
            continue
        if upwind:
            t = gup if (p > 0.0) == (F >= 0.0) else gdn
        else:
            t = gc
        if t < eta:
            phi += c * eta ** p
        else:
            tp = t ** p
            phi += c * tp
            dphi += abs(c * p * tp / t)
    return phi, dphi


@njit(cache=True, nogil=True)
def node_residual(i, u, f, nbr, cw, bval, gw, op_kind, lam, Lam, W, sup_mode,
                  coef, expo, xi0, xi1, eta, eps, upwind, cmax, g0):
    """
    Residual Phi * F_h - f - eps * u at node i, with Phi, F_h and an upper
    bound of -dR/du[i] (the local pseudo-time scale).
    """
    return center_residual(i, u[i], u, f, nbr, cw, bval, gw, op_kind, lam, Lam, W, sup_mode,
                           coef, expo, xi0, xi1, eta, eps, upwind, cmax, g0)


@njit(cache=True, nogil=True)
def center_residual(i, u0, u, f, nbr, cw, bval, gw, op_kind, lam, Lam, W, sup_mode,
                    coef, expo, xi0, xi1, eta, eps, upwind, cmax, g0):
    """:func:`node_residual` with the value at node i replaced by ``u0``."""
    F, _ = _discrete_operator(i, u0, u, nbr, cw, bval, op_kind, lam, Lam, W, sup_mode)
    gup, gdn, gc = _gradient_parts(i, u0, u, nbr, bval, gw, xi0, xi1)
    phi, dphi = phi_at(i, F, gup, gdn, gc, coef, expo, eta, upwind)
    R = phi * F - f[i] - eps * u0
    diag = phi * cmax[i] + abs(F) * dphi * g0[i] + eps
    return R, phi, F, diag


RESIDUAL, UPDATE, LINEARIZE = 0, 1, 2


@njit(cache=True, nogil=True)
def sweep(lo, hi, mode, u, f, nbr, cw, bval, gw, op_kind, lam, Lam, W, sup_mode,
          coef, expo, xi0, xi1, eta, eps, upwind, cmax, g0, cfl, lower, upper,
          R, phi, diag, unew, nbw, cen):
    """
    One pass over nodes [lo, hi); returns max |R| there.

    The node computation of :func:`node_residual` written out in a single
    body: helper calls taking arrays cost a reference-count round trip per
    call, which dominates at this granularity.

    mode RESIDUAL fills R, phi, diag.  UPDATE also writes the clamped
    pseudo-time step u + cfl R / diag, shortened so as not to cross the
    nodewise root, into ``unew``.  LINEARIZE also fills
    the Jacobian of R (active frame or family member held fixed):
    dR_i/du_nbr[i,k,s] = nbw[i,k,s] (zero on cut arms), dR_i/du_i = cen[i].
    """
    D = nbr.shape[1]
    nterms = coef.shape[0]
    plus = op_kind == PUCCI_PLUS
    rmax = 0.0
    for i in range(lo, hi):
        u0 = u[i]
        # operator: best frame / family member
        F = 0.0
        arg = 0
        if op_kind == LINEAR_FAMILY:
            for m in range(W.shape[0]):
                acc = 0.0
                for k in range(D):
                    w = W[m, i, k]
                    if w != 0.0:
                        j = nbr[i, k, 0]
                        up = u[j] if j >= 0 else bval[i, k, 0]
                        j = nbr[i, k, 1]
                        um = u[j] if j >= 0 else bval[i, k, 1]
                        acc += w * (cw[i, k, 0] * (up - u0) + cw[i, k, 1] * (um - u0))
                if m == 0 or (sup_mode and acc > F) or ((not sup_mode) and acc < F):
                    F = acc
                    arg = m
        else:
            for fr in range(D // 2):
                acc = 0.0
                for k in range(2 * fr, 2 * fr + 2):
                    j = nbr[i, k, 0]
                    up = u[j] if j >= 0 else bval[i, k, 0]
                    j = nbr[i, k, 1]
                    um = u[j] if j >= 0 else bval[i, k, 1]
                    d = cw[i, k, 0] * (up - u0) + cw[i, k, 1] * (um - u0)
                    if plus:
                        acc += Lam * d if d > 0 else lam * d
                    else:
                        acc += lam * d if d > 0 else Lam * d
                if fr == 0 or (plus and acc > F) or ((not plus) and acc < F):
                    F = acc
                    arg = fr
        # gradient magnitudes
        gup2 = 0.0
        gdn2 = 0.0
        gc2 = 0.0
        for k in range(2):
            xi = xi0 if k == 0 else xi1
            j = nbr[i, k, 0]
            dp = (u[j] if j >= 0 else bval[i, k, 0]) - u0
            j = nbr[i, k, 1]
            dm = u0 - (u[j] if j >= 0 else bval[i, k, 1])
            b = xi + dp * gw[i, k, 0]
            a = xi + dm * gw[i, k, 1]
            m_up = max(b, -a, 0.0)
            m_dn = max(a, -b, 0.0)
            gup2 += m_up * m_up
            gdn2 += m_dn * m_dn
            c = xi + dp * gw[i, k, 2] + dm * gw[i, k, 3]
            gc2 += c * c
        gup = math.sqrt(gup2)
        gdn = math.sqrt(gdn2)
        gc = math.sqrt(gc2)
        # Phi, and F * dPhi/dt split by the magnitude each term used
        ph = 0.0
        dph = 0.0
        s_up = 0.0
        s_dn = 0.0
        s_c = 0.0
        for jt in range(nterms):
            c = coef[jt, i]
            if c == 0.0:
                continue
            p = expo[jt, i]
            if p == 0.0:
                ph += c
                continue
            use_up = (p > 0.0) == (F >= 0.0)
            if upwind:
                t = gup if use_up else gdn
            else:
                t = gc
            if t < eta:
                ph += c * eta ** p
            else:
                tp = t ** p
                ph += c * tp
                der = c * p * tp / t
                dph += abs(der)
                if not upwind:
                    s_c += F * der
                elif use_up:
                    s_up += F * der
                else:
                    s_dn += F * der
        r = ph * F - f[i] - eps * u0
        dg = ph * cmax[i] + abs(F) * dph * g0[i] + eps
        R[i] = r
        phi[i] = ph
        diag[i] = dg
        if abs(r) > rmax:
            rmax = abs(r)
        if mode == UPDATE:
            v = u0 + cfl * r / dg
            # dg is the slope at u0 only; a step that crosses the nodewise root
            # (neighbours fixed) is halved until the residual keeps its sign,
            # which is what makes descent from a supersolution monotone
            if r != 0.0:
                for _ in range(60):
                    rv = center_residual(i, v, u, f, nbr, cw, bval, gw, op_kind, lam, Lam, W,
                                         sup_mode, coef, expo, xi0, xi1, eta, eps, upwind,
                                         cmax, g0)[0]
                    if (r < 0.0 and rv <= 0.0) or (r > 0.0 and rv >= 0.0):
                        break
                    v = 0.5 * (u0 + v)
            if v < lower[i]:
                v = lower[i]
            elif v > upper[i]:
                v = upper[i]
            unew[i] = v
        elif mode == LINEARIZE:
            for k in range(D):
                nbw[i, k, 0] = 0.0
                nbw[i, k, 1] = 0.0
            c0 = 0.0
            if op_kind == LINEAR_FAMILY:
                for k in range(D):
                    w = W[arg, i, k]
                    if w != 0.0:
                        for s in range(2):
                            nbw[i, k, s] = ph * w * cw[i, k, s]
                            c0 -= ph * w * cw[i, k, s]
            else:
                for k in range(2 * arg, 2 * arg + 2):
                    j = nbr[i, k, 0]
                    up = u[j] if j >= 0 else bval[i, k, 0]
                    j = nbr[i, k, 1]
                    um = u[j] if j >= 0 else bval[i, k, 1]
                    d = cw[i, k, 0] * (up - u0) + cw[i, k, 1] * (um - u0)
                    if plus:
                        a = Lam if d > 0 else lam
                    else:
                        a = lam if d > 0 else Lam
                    for s in range(2):
                        nbw[i, k, s] = ph * a * cw[i, k, s]
                        c0 -= ph * a * cw[i, k, s]
            # chain rule through the gradient magnitudes (axis arms only)
            for k in range(2):
                xi = xi0 if k == 0 else xi1
                j = nbr[i, k, 0]
                dp = (u[j] if j >= 0 else bval[i, k, 0]) - u0
                j = nbr[i, k, 1]
                dm = u0 - (u[j] if j >= 0 else bval[i, k, 1])
                b = xi + dp * gw[i, k, 0]
                a = xi + dm * gw[i, k, 1]
                if s_up != 0.0 and gup > 0.0:
                    m = max(b, -a, 0.0)
                    if m > 0.0:
                        fac = s_up * m / gup
                        if b >= -a:
                            nbw[i, k, 0] += fac * gw[i, k, 0]
                            c0 -= fac * gw[i, k, 0]
                        else:
                            nbw[i, k, 1] += fac * gw[i, k, 1]
                            c0 -= fac * gw[i, k, 1]
                if s_dn != 0.0 and gdn > 0.0:
                    m = max(a, -b, 0.0)
                    if m > 0.0:
                        fac = s_dn * m / gdn
                        if a >= -b:
                            nbw[i, k, 1] -= fac * gw[i, k, 1]
                            c0 += fac * gw[i, k, 1]
                        else:
                            nbw[i, k, 0] -= fac * gw[i, k, 0]
                            c0 += fac * gw[i, k, 0]
                if s_c != 0.0 and gc > 0.0:
                    c = xi + dp * gw[i, k, 2] + dm * gw[i, k, 3]
                    fac = s_c * c / gc
                    nbw[i, k, 0] += fac * gw[i, k, 2]
                    nbw[i, k, 1] -= fac * gw[i, k, 3]
                    c0 += fac * (gw[i, k, 3] - gw[i, k, 2])
            for k in range(D):
                for s in range(2):
                    if nbr[i, k, s] < 0:
                        nbw[i, k, s] = 0.0
            cen[i] = c0 - eps
    return rmax


@njit(cache=True, nogil=True)
def barrier_min(x, centers, gz, r, kappa, KM, deltas, out):
    """
    out[i] = min over z, d of gz[z] + deltas[d] + KM[d] (r^-kappa - |x_i - c_z|^-kappa).
    """
    rk = r ** (-kappa)
    nd = deltas.shape[0]
    for i in range(x.shape[0]):
        best = np.inf
        for z in range(centers.shape[0]):
            dx = x[i, 0] - centers[z, 0]
            dy = x[i, 1] - centers[z, 1]
            phi = rk - (dx * dx + dy * dy) ** (-0.5 * kappa)
            for d in range(nd):
                v = gz[z] + deltas[d] + KM[d] * phi
                if v < best:
                    best = v
        out[i] = best


@njit(cache=True, nogil=True)
def barrier_multiplier(pts, centers, gz, r, kappa, K, delta):
    """
    Smallest M >= 1 with gz[z] + delta + M K phi_z(y) >= g(y) over all sampled
    pairs (z, y) with phi_z(y) > 0.
    """
    rk = r ** (-kappa)
    M = 1.0
    m = pts.shape[0]
    for z in range(m):
        for y in range(m):
            dx = pts[y, 0] - centers[z, 0]
            dy = pts[y, 1] - centers[z, 1]
            phi = rk - (dx * dx + dy * dy) ** (-0.5 * kappa)
            need = gz[y] - gz[z] - delta
            if phi > 0.0 and need > 0.0:
                q = need / (K * phi)
                if q > M:
                    M = q
    return M


@njit(cache=True)
def _seidel_feasible(a, b, order, M, slack):
    """Is {p : a_j . p <= b_j + slack} n [-M, M]^2 nonempty?  Randomized incremental 2D LP."""
    c0, c1 = 1.0, 0.5718
    p0, p1 = -M, -M
    for k in range(order.shape[0]):
        i = order[k]
        if a[i, 0] * p0 + a[i, 1] * p1 <= b[i] + slack:
            continue
        nn = a[i, 0] * a[i, 0] + a[i, 1] * a[i, 1]
        if nn == 0.0:
            return False
        q0, q1 = a[i, 0] * b[i] / nn, a[i, 1] * b[i] / nn
        d0, d1 = -a[i, 1], a[i, 0]
        lo, hi = -np.inf, np.inf
        # box sides, then the constraints seen so far
        for s in range(4 + k):
            if s < 4:
                e0 = 1.0 if s == 0 else (-1.0 if s == 1 else 0.0)
                e1 = 1.0 if s == 2 else (-1.0 if s == 3 else 0.0)
                bj = M
            else:
                j = order[s - 4]
                e0, e1, bj = a[j, 0], a[j, 1], b[j] + slack
            ad = e0 * d0 + e1 * d1
            r = bj - (e0 * q0 + e1 * q1)
            if abs(ad) < 1e-300:
                if r < 0.0:
                    return False
            elif ad > 0.0:
                hi = min(hi, r / ad)
            else:
                lo = max(lo, r / ad)
        if lo > hi:
            return False
        t = lo if c0 * d0 + c1 * d1 > 0.0 else hi
        p0, p1 = q0 + t * d0, q1 + t * d1
    return True


@njit(cache=True)
def support_exists(x, v, thr, order, M):
    """For each node i: does some p satisfy v_j - v_i <= p.(x_j - x_i) + thr for all j?"""
    N = x.shape[0]
    out = np.zeros(N, dtype=np.bool_)
    a = np.empty((N, 2))
    b = np.empty(N)
    for i in range(N):
        for j in range(N):
            a[j, 0] = -(x[j, 0] - x[i, 0])
            a[j, 1] = -(x[j, 1] - x[i, 1])
            b[j] = -(v[j] - v[i])
        out[i] = _seidel_feasible(a, b, order, M, thr)
    return out
