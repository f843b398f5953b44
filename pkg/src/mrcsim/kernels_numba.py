"""Numba kernels: per-path nopython loops over a chunk, parallel across
paths.  Same draws, same arithmetic as ``kernels_numpy``; results agree to
floating-point rounding (exactly, except where LAPACK-vs-closed-form
eigenvalue clamping differs on near-singular blocks)."""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

_ONE_BOUNDARY = 1.0 - 1e-14
_PIVOT_TOL = 1e-12
_FIX_TOL = -1e-13


@njit(cache=True)
def _min_eig_sym(a):
    d = a.shape[0]
    if d == 2:
        half_tr = 0.5 * (a[0, 0] + a[1, 1])
        disc = math.sqrt(max(0.25 * (a[0, 0] - a[1, 1]) ** 2 + a[0, 1] ** 2, 0.0))
        return half_tr - disc
    if d == 3:
        p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        q = (a[0, 0] + a[1, 1] + a[2, 2]) / 3.0
        p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
        p = math.sqrt(max(p2 / 6.0, 0.0))
        if p <= 0.0:
            return q
        b00 = (a[0, 0] - q) / p
        b11 = (a[1, 1] - q) / p
        b22 = (a[2, 2] - q) / p
        b01 = a[0, 1] / p
        b02 = a[0, 2] / p
        b12 = a[1, 2] / p
        detb = (
            b00 * (b11 * b22 - b12 * b12)
            - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02)
        )
        r = min(max(detb / 2.0, -1.0), 1.0)
        phi = math.acos(r) / 3.0
        return q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return np.linalg.eigvalsh(a)[0]


@njit(cache=True)
def _psd_sqrt_inplace(b):
    """PSD square root of a small symmetric block, clamped and total."""
    q = b.shape[0]
    if q == 1:
        b[0, 0] = math.sqrt(max(b[0, 0], 0.0))
        return
    if q == 2:
        det = max(b[0, 0] * b[1, 1] - b[0, 1] ** 2, 0.0)
        s = math.sqrt(det)
        tr = max(b[0, 0], 0.0) + max(b[1, 1], 0.0)
        den = math.sqrt(tr + 2.0 * s)
        if den <= 0.0:
            b[:, :] = 0.0
            return
        b[0, 0] = (b[0, 0] + s) / den
        b[1, 1] = (b[1, 1] + s) / den
        b[0, 1] = b[0, 1] / den
        b[1, 0] = b[0, 1]
        return
    w, v = np.linalg.eigh(b)
    for k in range(q):
        w[k] = math.sqrt(max(w[k], 0.0))
    for i in range(q):
        for j in range(q):
            acc = 0.0
            for k in range(q):
                acc += v[i, k] * w[k] * v[j, k]
            b[i, j] = acc


@njit(cache=True, parallel=True)
def euler_chunk_step(x, normals, drift_const, drift_decay, a_sqrt_h):
    n, d, _ = x.shape
    for p in prange(n):
        y = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                y[i, j] = x[p, i, j] + drift_const[i, j] - drift_decay[i, j] * x[p, i, j]
        block = np.empty((d - 1, d - 1))
        for m in range(d):
            if a_sqrt_h[m] == 0.0:
                continue
            for i in range(d - 1):
                ii = i if i < m else i + 1
                for j in range(d - 1):
                    jj = j if j < m else j + 1
                    block[i, j] = x[p, ii, jj] - x[p, m, ii] * x[p, m, jj]
            _psd_sqrt_inplace(block)
            for i in range(d - 1):
                ii = i if i < m else i + 1
                acc = 0.0
                for j in range(d - 1):
                    jj = j if j < m else j + 1
                    acc += block[i, j] * normals[p, jj, m]
                vi = acc * a_sqrt_h[m]
                y[ii, m] += vi
                y[m, ii] += vi
        if _min_eig_sym(y) < _FIX_TOL:
            w, vec = np.linalg.eigh(y)
            for k in range(d):
                w[k] = max(w[k], 0.0)
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc += vec[i, k] * w[k] * vec[j, k]
                    x[p, i, j] = acc
        else:
            for i in range(d):
                for j in range(d):
                    x[p, i, j] = y[i, j]
        for i in range(d):
            y[i, 0] = 1.0 / math.sqrt(x[p, i, i])  # reuse scratch column
        for i in range(d):
            for j in range(d):
                x[p, i, j] = x[p, i, j] * y[i, 0] * y[j, 0]
            x[p, i, i] = 1.0


@njit(cache=True)
def _step_Z(tau, z, u, zthr, em_quarter, em_half, g):
    z = min(max(z, 0.0), 1.0)
    if z >= _ONE_BOUNDARY:
        return 1.0
    if z <= zthr:
        if u < 1.0 / 6.0:
            qy = 1.0 / (g * g)
            ey = 1.0 / g
        elif u > 5.0 / 6.0:
            qy = g * g
            ey = g
        else:
            qy = 1.0
            ey = 1.0
        bound = math.sqrt(1.0 / (2.0 - em_half))
        w = min(z, bound)
        w = w * em_quarter / math.sqrt(1.0 - 2.0 * w * w * (1.0 - em_half))
        r = math.sqrt(max(1.0 - w * w, 0.0))
        if qy * (1.0 + r) <= 1.0 - r:
            w = 1.0
        else:
            w = 2.0 * w * ey / (1.0 - r + qy * (1.0 + r))
        w = min(w, bound)
        w = w * em_quarter / math.sqrt(1.0 - 2.0 * w * w * (1.0 - em_half))
        return min(max(w, 0.0), 1.0)
    grow = 1.0 + 0.5 * tau * (1.0 - 6.0 * z * z)
    m_plus = z * (1.0 - z)
    m_minus = tau * z * (1.0 + z) * grow
    tot = m_plus + m_minus
    if tot <= 0.0:
        return z
    p = m_minus / tot
    if u < p:
        return z + m_plus
    return z - m_minus


@njit(cache=True)
def _ball_step(v, tau, u, zthr, em_quarter, em_half, e_half, g):
    """In-place ball step; ``u`` holds (order, radial, coord...) draws."""
    q = v.shape[0]
    s2 = 0.0
    for k in range(q):
        s2 += v[k] * v[k]
    if s2 > 1.0:
        root = math.sqrt(s2)
        for k in range(q):
            v[k] /= root
    forward = u[0] < 0.5
    for pos in range(q + 1):
        sub = pos if forward else q - pos
        if sub == 0:
            z = 0.0
            for k in range(q):
                z += v[k] * v[k]
            z = math.sqrt(z)
            if z > 0.0:
                z_new = _step_Z(tau, min(z, 1.0), u[1], zthr, em_quarter, em_half, g)
                factor = z_new / z
                for k in range(q):
                    v[k] *= factor
        else:
            m = sub - 1
            uu = u[1 + sub]
            # X0 half
            xm = v[m]
            den = math.sqrt(e_half * e_half * xm * xm + (1.0 - xm * xm))
            for k in range(q):
                v[k] /= den
            v[m] = xm * e_half / den
            # X1 over sqrt(tau) * Y
            if uu < 1.0 / 6.0:
                ey = g
            elif uu > 5.0 / 6.0:
                ey = 1.0 / g
            else:
                ey = 1.0
            e2y = ey * ey
            xm = v[m]
            den = e2y * (1.0 + xm) + (1.0 - xm)
            scale = 2.0 * ey / den
            for k in range(q):
                v[k] *= scale
            v[m] = (e2y * (1.0 + xm) - (1.0 - xm)) / den
            # X0 half
            xm = v[m]
            den = math.sqrt(e_half * e_half * xm * xm + (1.0 - xm * xm))
            for k in range(q):
                v[k] /= den
            v[m] = xm * e_half / den
            s2 = 0.0
            for k in range(q):
                s2 += v[k] * v[k]
            if s2 > 1.0:
                root = math.sqrt(s2)
                for k in range(q):
                    v[k] /= root


@njit(cache=True)
def _pivoted_cholesky(b, perm):
    """In-place pivoted factorization; completes columns beyond the rank
    with unit diagonal.  Returns the rank."""
    q = b.shape[0]
    for k in range(q):
        perm[k] = k
    rank = q
    for k in range(q):
        jmax = k
        dmax = b[k, k]
        for j in range(k + 1, q):
            if b[j, j] > dmax:
                dmax = b[j, j]
                jmax = j
        if dmax <= _PIVOT_TOL:
            rank = k
            break
        if jmax != k:
            for t in range(q):
                tmp = b[k, t]
                b[k, t] = b[jmax, t]
                b[jmax, t] = tmp
            for t in range(q):
                tmp = b[t, k]
                b[t, k] = b[t, jmax]
                b[t, jmax] = tmp
            itmp = perm[k]
            perm[k] = perm[jmax]
            perm[jmax] = itmp
        root = math.sqrt(b[k, k])
        b[k, k] = root
        for t in range(k + 1, q):
            b[t, k] /= root
        for t in range(k + 1, q):
            for s in range(k + 1, q):
                b[t, s] -= b[t, k] * b[s, k]
    # zero the upper triangle and the columns beyond the rank
    for i in range(q):
        for j in range(i + 1, q):
            b[i, j] = 0.0
    for k in range(rank, q):
        for t in range(q):
            b[t, k] = 0.0
        b[k, k] = 1.0
    return rank


@njit(cache=True)
def _elementary_step(xp, i, tau, u, zthr, em_quarter, em_half, e_half, g, scratch_b, scratch_perm, scratch_v, scratch_w):
    """Elementary factor ``i`` applied to one matrix ``xp`` in place.

    Works in the frame with coordinate ``i`` swapped to the front: reduce
    the first row, advance the unit-ball state, rebuild the first row.
    The complementary block is never touched.
    """
    d = xp.shape[0]
    q = d - 1
    for a in range(q):
        aa = 0 if a + 1 == i else a + 1
        for bcol in range(q):
            bb = 0 if bcol + 1 == i else bcol + 1
            scratch_b[a, bcol] = xp[aa, bb]
        scratch_v[a] = xp[i, aa]
    rank = _pivoted_cholesky(scratch_b, scratch_perm)
    for a in range(q):
        scratch_w[a] = scratch_v[scratch_perm[a]]
    # forward solve L y = c1, zero beyond the rank
    for a in range(q):
        s = scratch_w[a]
        for bcol in range(a):
            s -= scratch_b[a, bcol] * scratch_v[bcol]
        scratch_v[a] = s / scratch_b[a, a]
    for a in range(rank, q):
        scratch_v[a] = 0.0
    _ball_step(scratch_v, tau, u, zthr, em_quarter, em_half, e_half, g)
    for a in range(rank, q):
        scratch_v[a] = 0.0
    for a in range(q):
        s = 0.0
        for bcol in range(q):
            s += scratch_b[a, bcol] * scratch_v[bcol]
        scratch_w[a] = s
    # scatter back through the pivot permutation into row/column i
    for a in range(q):
        scratch_v[scratch_perm[a]] = scratch_w[a]
    for k in range(q):
        idx = 0 if k + 1 == i else k + 1
        xp[i, idx] = scratch_v[k]
        xp[idx, i] = scratch_v[k]
    return rank


@njit(cache=True, parallel=True)
def second_order_chunk_step(x, uniforms, xi_decay, xi_const, taus, zthr, em_quarter, em_half, e_half, g):
    n, d, _ = x.shape
    q = d - 1
    for p in prange(n):
        b = np.empty((q, q))
        perm = np.empty(q, dtype=np.int64)
        v = np.empty(q)
        w = np.empty(q)
        for i in range(d):
            for j in range(d):
                x[p, i, j] = x[p, i, j] * xi_decay[i, j] + xi_const[i, j]
            x[p, i, i] = 1.0
        for i in range(d):
            if taus[i] <= 0.0:
                continue
            _elementary_step(
                x[p], i, taus[i], uniforms[p, i], zthr[i], em_quarter[i],
                em_half[i], e_half[i], g[i], b, perm, v, w,
            )
        for i in range(d):
            for j in range(d):
                x[p, i, j] = x[p, i, j] * xi_decay[i, j] + xi_const[i, j]
            x[p, i, i] = 1.0
