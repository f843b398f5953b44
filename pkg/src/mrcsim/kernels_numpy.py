"""Pure-numpy batched kernels: one call advances a whole chunk of paths.

This is the fallback backend (``MRCSIM_BACKEND=numpy``) and the semantic
reference for the numba kernels; the two must implement the same
arithmetic on the same draws.
"""

from __future__ import annotations

import numpy as np

_ONE_BOUNDARY = 1.0 - 1e-14
_PIVOT_TOL = 1e-12
_FIX_TOL = -1e-13


# ---------------------------------------------------------------------------
# batched symmetric eigen helpers
# ---------------------------------------------------------------------------


def _min_eig_sym(x):
    """Smallest eigenvalue per path; closed forms for d <= 3."""
    d = x.shape[-1]
    if d == 2:
        half_tr = 0.5 * (x[:, 0, 0] + x[:, 1, 1])
        disc = np.sqrt(
            np.maximum(0.25 * (x[:, 0, 0] - x[:, 1, 1]) ** 2 + x[:, 0, 1] ** 2, 0.0)
        )
        return half_tr - disc
    if d == 3:
        a00, a11, a22 = x[:, 0, 0], x[:, 1, 1], x[:, 2, 2]
        a01, a02, a12 = x[:, 0, 1], x[:, 0, 2], x[:, 1, 2]
        p1 = a01**2 + a02**2 + a12**2
        q = (a00 + a11 + a22) / 3.0
        p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
        p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
        safe = np.where(p > 0.0, p, 1.0)
        b00, b11, b22 = (a00 - q) / safe, (a11 - q) / safe, (a22 - q) / safe
        b01, b02, b12 = a01 / safe, a02 / safe, a12 / safe
        detb = (
            b00 * (b11 * b22 - b12 * b12)
            - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02)
        )
        r = np.clip(detb / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
        return np.where(p > 0.0, lam_min, q)
    return np.linalg.eigvalsh(x)[:, 0]


def _psd_sqrt_batch(b):
    """Batched PSD square root with eigenvalue clamping (total)."""
    d = b.shape[-1]
    if d == 1:
        return np.sqrt(np.maximum(b, 0.0))
    if d == 2:
        det = np.maximum(b[:, 0, 0] * b[:, 1, 1] - b[:, 0, 1] ** 2, 0.0)
        s = np.sqrt(det)
        tr = np.maximum(b[:, 0, 0], 0.0) + np.maximum(b[:, 1, 1], 0.0)
        den = np.sqrt(tr + 2.0 * s)
        safe = np.where(den > 0.0, den, 1.0)
        out = (b + s[:, None, None] * np.eye(2)) / safe[:, None, None]
        return np.where((den > 0.0)[:, None, None], out, 0.0)
    w, v = np.linalg.eigh(b)
    w = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("nik,nk,njk->nij", v, w, v)


def _positive_part_fix(y):
    """Clamp negative spectra in place on the (rare) flagged paths."""
    wmin = _min_eig_sym(y)
    bad = np.nonzero(wmin < _FIX_TOL)[0]
    for p in bad:
        w, v = np.linalg.eigh(y[p])
        y[p] = (v * np.clip(w, 0.0, None)) @ v.T
    return y


# ---------------------------------------------------------------------------
# corrected Euler
# ---------------------------------------------------------------------------


def euler_chunk_step(x, normals, consts):
    """One corrected-Euler step for a chunk of paths, in place."""
    n, d, _ = x.shape
    y = x + consts.drift_const - consts.drift_decay * x
    for m in range(d):
        if consts.a_sqrt_h[m] == 0.0:
            continue
        idx = [k for k in range(d) if k != m]
        xn = x[:, m, idx]
        block = x[:, idx, :][:, :, idx] - xn[:, :, None] * xn[:, None, :]
        s = _psd_sqrt_batch(block)
        g = normals[:, idx, m]
        v = np.zeros((n, d - 1))
        for j in range(d - 1):
            v += s[:, :, j] * g[:, j, None]
        v *= consts.a_sqrt_h[m]
        y[:, idx, m] += v
        y[:, m, idx] += v
    y = _positive_part_fix(y)
    diag = np.einsum("nii->ni", y)
    scale = 1.0 / np.sqrt(diag)
    y *= scale[:, :, None] * scale[:, None, :]
    idx = np.arange(d)
    y[:, idx, idx] = 1.0
    x[...] = y
    return x


# ---------------------------------------------------------------------------
# direct second-order scheme
# ---------------------------------------------------------------------------


def _xi_half(x, decay, const):
    x *= decay
    x += const
    d = x.shape[-1]
    idx = np.arange(d)
    x[:, idx, idx] = 1.0
    return x


def _step_Z_batch(tau, z, u, z_thr, em_quarter, em_half, g, sqrt_tau):
    """Vectorized radial step; all constants broadcast (scalar or per path)."""
    z = np.clip(z, 0.0, 1.0)

    # Ninomiya-Victoir branch
    def z0(zz):
        bound = np.sqrt(1.0 / (2.0 - em_half))
        zz = np.minimum(zz, bound)
        den = 1.0 - 2.0 * zz * zz * (1.0 - em_half)
        return zz * em_quarter / np.sqrt(den)

    qy = np.where(u < 1.0 / 6.0, 1.0 / (g * g), np.where(u > 5.0 / 6.0, g * g, 1.0))
    ey = np.where(u < 1.0 / 6.0, 1.0 / g, np.where(u > 5.0 / 6.0, g, 1.0))
    w = z0(z)
    r = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    sat = qy * (1.0 + r) <= 1.0 - r
    den = 1.0 - r + qy * (1.0 + r)
    w = np.where(sat, 1.0, 2.0 * w * ey / den)
    nv = np.clip(z0(w), 0.0, 1.0)

    # two-point moment-matching branch
    grow = 1.0 + 0.5 * tau * (1.0 - 6.0 * z * z)
    m_plus = z * (1.0 - z)
    m_minus = tau * z * (1.0 + z) * grow
    tot = m_plus + m_minus
    p = np.where(tot > 0.0, m_minus / np.where(tot > 0.0, tot, 1.0), 1.0)
    two = np.where(u < p, z + m_plus, z - m_minus)

    out = np.where(z <= z_thr, nv, two)
    return np.where(z >= _ONE_BOUNDARY, 1.0, out)


def _radial_substep(v, tau, u, z_thr, em_quarter, em_half, g, sqrt_tau):
    z = np.sqrt(np.sum(v * v, axis=1))
    z_new = _step_Z_batch(tau, z, u, z_thr, em_quarter, em_half, g, sqrt_tau)
    safe = np.where(z > 0.0, z, 1.0)
    factor = np.where(z > 0.0, z_new / safe, 1.0)
    v *= factor[:, None]
    return v


def _coord_substep(v, m, u, e_half, g, sqrt_tau):
    # X0 over tau/2
    xm = v[:, m].copy()
    den = np.sqrt(e_half * e_half * xm * xm + (1.0 - xm * xm))
    v /= den[:, None]
    v[:, m] = xm * e_half / den
    # X1 over sqrt(tau) * Y
    ey = np.where(u < 1.0 / 6.0, g, np.where(u > 5.0 / 6.0, 1.0 / g, 1.0))  # exp(+y)
    e2y = ey * ey
    xm = v[:, m].copy()
    den = e2y * (1.0 + xm) + (1.0 - xm)
    v *= (2.0 * ey / den)[:, None]
    v[:, m] = (e2y * (1.0 + xm) - (1.0 - xm)) / den
    # X0 over tau/2 again
    xm = v[:, m].copy()
    den = np.sqrt(e_half * e_half * xm * xm + (1.0 - xm * xm))
    v /= den[:, None]
    v[:, m] = xm * e_half / den
    # keep within the closed ball
    s2 = np.sum(v * v, axis=1)
    fix = s2 > 1.0
    if np.any(fix):
        v[fix] /= np.sqrt(s2[fix])[:, None]
    return v


def _ball_step_batch(v, tau, u, z_thr, em_quarter, em_half, e_half, g, sqrt_tau):
    """Composition of the radial and coordinate sub-steps in randomized
    forward/reverse order.  ``u`` columns: order, radial, coords."""
    q = v.shape[1]
    s2 = np.sum(v * v, axis=1)
    over = s2 > 1.0
    if np.any(over):
        v[over] /= np.sqrt(s2[over])[:, None]
    forward = u[:, 0] < 0.5
    for subset, order in ((forward, range(q + 1)), (~forward, range(q, -1, -1))):
        if not np.any(subset):
            continue
        idx = np.nonzero(subset)[0]
        vv = v[idx]
        consts = [np.asarray(c) for c in (z_thr, em_quarter, em_half, e_half, g, sqrt_tau)]
        zt, emq, emh, eh, gg, st = (
            c[idx] if c.ndim else c for c in consts
        )
        tt = np.asarray(tau)
        tt = tt[idx] if tt.ndim else tt
        for sub in order:
            if sub == 0:
                vv = _radial_substep(vv, tt, u[idx, 1], zt, emq, emh, gg, st)
            else:
                vv = _coord_substep(vv, sub - 1, u[idx, 1 + sub], eh, gg, st)
        v[idx] = vv
    return v


def _pivoted_cholesky_batch(b):
    """Diagonally pivoted outer-product factorization per path.

    Returns (L, perm, rank) where columns at and beyond the rank are
    completed with unit diagonal so forward substitution is total; pivots
    at or below the tolerance end the factorization (negatives are treated
    as rank cutoffs: the kernels never abort mid-simulation).
    """
    n, q, _ = b.shape
    a = b.copy()
    perm = np.tile(np.arange(q), (n, 1))
    rank = np.full(n, q, dtype=np.int64)
    rows = np.arange(n)
    for k in range(q):
        active = rank > k
        diag = np.einsum("nii->ni", a)
        j = k + np.argmax(diag[:, k:], axis=1)
        pivot = diag[rows, j]
        stop = active & (pivot <= _PIVOT_TOL)
        rank[stop] = k
        active = rank > k
        if not np.any(active):
            break
        swap = active & (j != k)
        if np.any(swap):
            si = np.nonzero(swap)[0]
            jj = j[si]
            a[si, k, :], a[si, jj, :] = a[si, jj, :].copy(), a[si, k, :].copy()
            a[si, :, k], a[si, :, jj] = a[si, :, jj].copy(), a[si, :, k].copy()
            perm[si, k], perm[si, jj] = perm[si, jj].copy(), perm[si, k].copy()
        piv = a[rows, k, k]
        root = np.sqrt(np.where(active, piv, 1.0))
        inv = np.where(active, 1.0 / root, 0.0)
        a[active, k, k] = root[active]
        if k + 1 < q:
            col = a[:, k + 1 :, k] * inv[:, None]
            a[active, k + 1 :, k] = col[active]
            upd = col[:, :, None] * col[:, None, :]
            a[active, k + 1 :, k + 1 :] -= upd[active]
    l = np.tril(a)
    cols = np.arange(q)
    beyond = cols[None, :] >= rank[:, None]
    l[np.broadcast_to(beyond[:, None, :], l.shape)] = 0.0
    dd = np.einsum("nii->ni", l)
    dd[beyond] = 1.0
    return l, perm, rank


def _forward_solve_batch(l, b):
    q = l.shape[-1]
    y = np.zeros_like(b)
    for i in range(q):
        s = b[:, i].copy()
        for j in range(i):
            s -= l[:, i, j] * y[:, j]
        y[:, i] = s / l[:, i, i]
    return y


def _matvec_lower(l, v):
    n, q, _ = l.shape
    out = np.zeros((n, q))
    for j in range(q):
        out += l[:, :, j] * v[:, j, None]
    return out


def elementary_chunk_step(x, i, tau, u, z_thr, em_quarter, em_half, e_half, g, sqrt_tau):
    """Elementary factor ``i`` for a chunk, durations possibly per path."""
    n, d, _ = x.shape
    frame = np.arange(d)
    if i != 0:
        frame[0], frame[i] = i, 0
    xs = x[:, frame][:, :, frame]
    block = xs[:, 1:, 1:]
    c1 = xs[:, 0, 1:]
    l, perm, rank = _pivoted_cholesky_batch(block)
    c1p = np.take_along_axis(c1, perm, axis=1)
    v = _forward_solve_batch(l, c1p)
    cols = np.arange(d - 1)
    v[cols[None, :] >= rank[:, None]] = 0.0
    v = _ball_step_batch(v, tau, u, z_thr, em_quarter, em_half, e_half, g, sqrt_tau)
    v[cols[None, :] >= rank[:, None]] = 0.0
    new_c1p = _matvec_lower(l, v)
    new_c1 = np.zeros_like(new_c1p)
    np.put_along_axis(new_c1, perm, new_c1p, axis=1)
    row = np.concatenate((np.ones((n, 1)), new_c1), axis=1)
    x[:, i, frame] = row
    x[:, frame, i] = row
    return x


_SQRT3 = np.sqrt(3.0)


def threshold_K_batch(tau):
    """Vectorized sharp threshold of the radial composition."""
    tau = np.asarray(tau, dtype=np.float64)
    emt2 = np.exp(-tau / 2.0)
    s = np.sqrt((1.0 - emt2) / (2.0 - emt2))
    e = np.exp(-2.0 * (np.sqrt(tau) * _SQRT3))
    dd = (1.0 - e + s * (1.0 + e)) / (e + 1.0 + s * (1.0 - e))
    b1sq = 1.0 - dd * dd
    arg1 = np.sqrt(1.0 / (2.0 - emt2))
    arg2 = np.sqrt(b1sq) / np.sqrt(emt2 + 2.0 * b1sq * (1.0 - emt2))
    return np.minimum(arg1, arg2)


def slc_corr_chunk_step(x, uniforms, kappa, a_t, rho_t, h):
    """Frozen-coefficient correlation step with per-path scalar speed
    ``kappa``, volatility ``a_t`` and equicorrelation target ``rho_t``."""
    n, d, _ = x.shape
    aa = a_t * a_t
    kt = kappa - 0.5 * (d - 2) * aa
    decay = np.exp(-kt * h)
    b_off = 2.0 * kappa * rho_t
    deg = np.abs(kt) < 1e-300
    safe = np.where(deg, 1.0, 2.0 * kt)
    const_off = np.where(deg, b_off * (h / 2.0), (b_off / safe) * (1.0 - decay))
    idx = np.arange(d)

    def xi_half():
        x[...] = x * decay[:, None, None] + const_off[:, None, None]
        x[:, idx, idx] = 1.0

    xi_half()
    if np.any(aa > 0.0):
        tau = aa * h
        z_thr = threshold_K_batch(tau)
        em_quarter = np.exp(-tau / 4.0)
        em_half = np.exp(-tau / 2.0)
        e_half = np.exp(tau / 2.0)
        g = np.exp(-np.sqrt(tau) * _SQRT3)
        sqrt_tau = np.sqrt(tau)
        for i in range(d):
            elementary_chunk_step(
                x, i, tau, uniforms[:, i, :], z_thr, em_quarter, em_half,
                e_half, g, sqrt_tau,
            )
    xi_half()
    return x


def second_order_chunk_step(x, uniforms, consts):
    """Full direct-scheme step for a chunk (fixed parameters)."""
    _xi_half(x, consts.xi_decay, consts.xi_const)
    d = x.shape[-1]
    for i in range(d):
        if consts.taus[i] <= 0.0:
            continue
        elementary_chunk_step(
            x,
            i,
            consts.taus[i],
            uniforms[:, i, :],
            consts.z_threshold[i],
            consts.em_quarter[i],
            consts.em_half[i],
            consts.e_half[i],
            consts.g[i],
            consts.sqrt_tau[i],
        )
    _xi_half(x, consts.xi_decay, consts.xi_const)
    return x
