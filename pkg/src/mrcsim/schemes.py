"""Discretization steps: the corrected Euler scheme and the direct
second-order scheme built from the unit-ball splitting.

These are the reference single-path implementations.  The Monte Carlo
engine runs the same arithmetic through the batched kernels in
``kernels_numpy``/``kernels_numba``; pathwise agreement between the two is
part of the test suite, so keep the formulas here and there in sync.

Draw budget per step is fixed and state-independent:

* corrected Euler: ``d*d`` standard normals, row-major;
* direct second order: a ``(d, d+1)`` block of uniforms, row ``i`` for
  elementary factor ``i`` as ``(ordering, radial, coordinate 1, ...,
  coordinate d-1)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import corematrix as cm
from .errors import LeftDomain, StepTooLarge
from .flows import linear_flow, xi_flow

SQRT3 = math.sqrt(3.0)
MAX_DIRECT_STEP = 0.4  # validity window of the moment-matching branch
_ONE_BOUNDARY = 1.0 - 1e-14


class SchemeKind(enum.Enum):
    EULER_CORRECTED = "euler"
    SECOND_ORDER_DIRECT = "second_order"

    @classmethod
    def parse(cls, text):
        text = text.strip().lower().replace("-", "_")
        for kind in cls:
            if text in (kind.value, kind.name.lower()):
                return kind
        raise ValueError(f"unknown scheme {text!r}")


class RngStream:
    """Counter-based random stream: same seed, same draws, everywhere."""

    def __init__(self, seed, spawn_key=()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def derive(self, *indices):
        """Disjoint child stream; used for per-chunk path parallelism."""
        return RngStream(self.seed, self.spawn_key + tuple(indices))

    def uniform(self, size=None):
        return self._gen.random(size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)


def uniform_to_Y(u):
    """Map a uniform draw to the 3-point law P(Y=+-sqrt(3)) = 1/6,
    P(Y=0) = 2/3 that matches the first five Gaussian moments."""
    if u < 1.0 / 6.0:
        return -SQRT3
    if u > 5.0 / 6.0:
        return SQRT3
    return 0.0


def sample_Y(rng):
    return uniform_to_Y(rng.uniform())


# ---------------------------------------------------------------------------
# scalar radial machinery (the Z process)
# ---------------------------------------------------------------------------


def z0_bound(t):
    """Largest z for which the drift flow Z0(t, .) stays in [0, 1]."""
    return math.sqrt(1.0 / (2.0 - math.exp(-t)))


def flow_Z0(t, z, clamp=False):
    """Drift flow of the radial Ninomiya-Victoir split:
    ``z exp(-t/2) / sqrt(1 - 2 z^2 (1 - exp(-t)))``."""
    bound = z0_bound(t)
    if z > bound:
        if not clamp:
            raise LeftDomain(f"flow_Z0 needs z <= {bound!r}, got {z!r}")
        z = bound
    den = 1.0 - 2.0 * z * z * (1.0 - math.exp(-t))
    return z * math.exp(-t / 2.0) / math.sqrt(den)


def flow_Z1(y, z):
    """Diffusion flow of the radial split, saturating at 1.

    The saturation test is done on ``exp(-2y) (1+r) <= 1-r`` with
    ``r = sqrt(1-z^2)``, which is the branch condition of the closed form
    without the logarithm.
    """
    z = min(max(z, 0.0), 1.0)
    r = math.sqrt(max(1.0 - z * z, 0.0))
    q = math.exp(-2.0 * y)
    if q * (1.0 + r) <= 1.0 - r:
        return 1.0
    return 2.0 * z * math.exp(-y) / (1.0 - r + q * (1.0 + r))


def threshold_K(t):
    """Sharp threshold below which the radial Ninomiya-Victoir composition
    ``Z0(t/2, Z1(sqrt(t) Y, Z0(t/2, z)))`` stays inside [0, 1]."""
    emt2 = math.exp(-t / 2.0)
    s = math.sqrt((1.0 - emt2) / (2.0 - emt2))
    e = math.exp(-2.0 * (math.sqrt(t) * SQRT3))
    dd = (1.0 - e + s * (1.0 + e)) / (e + 1.0 + s * (1.0 - e))
    b1sq = 1.0 - dd * dd
    arg1 = math.sqrt(1.0 / (2.0 - emt2))
    arg2 = math.sqrt(b1sq) / math.sqrt(emt2 + 2.0 * b1sq * (1.0 - emt2))
    return min(arg1, arg2)


def two_point_probability(t, z):
    """Probability of the up move in the boundary moment-matching scheme,
    together with the up and down move sizes (m_plus, m_minus)."""
    grow = 1.0 + 0.5 * t * (1.0 - 6.0 * z * z)
    m_plus = z * (1.0 - z)
    m_minus = t * z * (1.0 + z) * grow
    if m_plus + m_minus == 0.0:
        return 1.0, m_plus, m_minus
    p = m_minus / (m_plus + m_minus)
    return p, m_plus, m_minus


def step_Z(t, z, rng=None, u=None):
    """One step of the radial process on [0, 1].

    Below ``threshold_K(t)`` this is the Ninomiya-Victoir composition with
    the three-point Gaussian surrogate; above it, the two-point
    moment-matching scheme.  ``t`` must not exceed 2/5.
    """
    if t > MAX_DIRECT_STEP:
        raise StepTooLarge(f"radial step {t!r} exceeds 2/5")
    if u is None:
        u = rng.uniform()
    z = min(max(z, 0.0), 1.0)
    if z >= _ONE_BOUNDARY:
        return 1.0
    if z <= threshold_K(t):
        y = math.sqrt(t) * uniform_to_Y(u)
        w = flow_Z0(t / 2.0, z, clamp=True)
        w = flow_Z1(y, w)
        w = flow_Z0(t / 2.0, w, clamp=True)
        return min(max(w, 0.0), 1.0)
    p, m_plus, m_minus = two_point_probability(t, z)
    return z + m_plus if u < p else z - m_minus


# ---------------------------------------------------------------------------
# unit-ball machinery
# ---------------------------------------------------------------------------


def _clamp_ball(v):
    s2 = float(np.dot(v, v))
    if s2 > 1.0:
        v = v / math.sqrt(s2)
    return v


def nv_flow_X0(t, x, m=0):
    """Drift flow of the coordinate split, coordinate ``m`` special:
    ``x_m -> x_m e^t / sqrt(e^{2t} x_m^2 + (1 - x_m^2))``, the other
    coordinates divided by the same root."""
    x = np.asarray(x, dtype=np.float64)
    et = math.exp(t)
    xm = x[m]
    den = math.sqrt(et * et * xm * xm + (1.0 - xm * xm))
    out = x / den
    out[m] = xm * et / den
    return out


def nv_flow_X1(y, x, m=0):
    """Diffusion flow of the coordinate split, coordinate ``m`` special."""
    x = np.asarray(x, dtype=np.float64)
    e2y = math.exp(2.0 * y)
    xm = x[m]
    den = e2y * (1.0 + xm) + (1.0 - xm)
    out = (2.0 * math.exp(y) / den) * x
    out[m] = (e2y * (1.0 + xm) - (1.0 - xm)) / den
    return out


def step_L_coordinate(m, t, x, rng=None, u=None):
    """Ninomiya-Victoir sandwich for the coordinate-m sub-operator:
    ``X0(t/2, X1(sqrt(t) Y, X0(t/2, x)))``."""
    if u is None:
        u = rng.uniform()
    y = math.sqrt(t) * uniform_to_Y(u)
    out = nv_flow_X0(t / 2.0, x, m)
    out = nv_flow_X1(y, out, m)
    out = nv_flow_X0(t / 2.0, out, m)
    return _clamp_ball(out)


def step_radial_Lhat1(t, x, rng=None, u=None):
    """Radial sub-step: the state moves along its own direction with the
    one-dimensional scheme for ``|x|``."""
    if u is None:
        u = rng.uniform()
    x = np.asarray(x, dtype=np.float64)
    z = math.sqrt(float(np.dot(x, x)))
    if z == 0.0:
        return x.copy()
    z_new = step_Z(t, min(z, 1.0), u=u)
    return x * (z_new / z)


def step_unit_ball(t, x, rng=None, u=None):
    """One step of the elementary first-row process on the unit ball.

    Composes the radial sub-step and the d-1 coordinate sub-steps, each of
    duration ``t``, in forward or reverse order with probability 1/2.
    Draw layout: ``u = (ordering, radial, coord 1, ..., coord d-1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    q = x.shape[0]
    if u is None:
        u = rng.uniform(size=q + 2)
    if t == 0.0:
        return x.copy()
    out = _clamp_ball(x.copy())
    forward = u[0] < 0.5
    order = range(q + 1) if forward else range(q, -1, -1)
    for sub in order:
        if sub == 0:
            out = step_radial_Lhat1(t, out, u=u[1])
        else:
            out = step_L_coordinate(sub - 1, t, out, u=u[1 + sub])
    return out


# ---------------------------------------------------------------------------
# matrix-level steps
# ---------------------------------------------------------------------------


def _swap_frame(x, i):
    if i == 0:
        return x.copy()
    y = x.copy()
    y[[0, i], :] = y[[i, 0], :]
    y[:, [0, i]] = y[:, [i, 0]]
    return y


def step_elementary_Li(i, t, x, rng=None, u=None):
    """Second-order step of the elementary factor with unit noise on
    coordinate ``i``: reduce the first row (after swapping ``i`` to the
    front), advance the unit-ball state, and rebuild.  Rows and columns
    other than ``i`` of the complementary block are untouched."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    if u is None:
        u = rng.uniform(size=d + 1)
    if t == 0.0:
        return x.copy()
    xp = _swap_frame(x, i)
    red = cm.reduce_first_coordinate(xp)
    v = step_unit_ball(t, red.first_row(), u=u)
    out = cm.rebuild_first_coordinate(red, v, base=xp)
    return _swap_frame(out, i)


def step_mrc_second_order(params, t, x, rng=None, u=None):
    """Full second-order step: xi half-flow, the d commuting elementary
    factors (factor ``i`` run for ``a_i^2 t``, ascending ``i``), xi
    half-flow."""
    d = params.dim
    taus = params.a**2 * t
    if np.max(taus, initial=0.0) > MAX_DIRECT_STEP:
        raise StepTooLarge(
            f"elementary duration {np.max(taus)!r} exceeds 2/5; increase N"
        )
    if u is None:
        u = rng.uniform(size=(d, d + 1))
    flow = xi_flow(params)
    out = linear_flow(flow, x, t / 2.0)
    for i in range(d):
        if taus[i] > 0.0:
            out = step_elementary_Li(i, taus[i], out, u=u[i])
    return linear_flow(flow, out, t / 2.0)


def _psd_sqrt_clamped(block):
    """PSD square root with negative eigenvalues clamped to zero; total on
    every symmetric input so the Euler correction never aborts."""
    w, v = np.linalg.eigh(cm.symmetrize(block))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def euler_corrected_step(params, x, h, rng=None, normals=None):
    """Corrected Euler-Maruyama step: raw increment, then eigenvalue
    clamping and renormalization onto the correlation matrices."""
    x = np.asarray(x, dtype=np.float64)
    d = params.dim
    if normals is None:
        normals = rng.standard_normal((d, d))
    kap = params.kappa
    drift = kap[:, None] * (params.c - x) + (params.c - x) * kap[None, :]
    y = x + h * drift
    sh = math.sqrt(h)
    for n in range(d):
        if params.a[n] == 0.0:
            continue
        xn = cm.row_drop(x, n)
        block = cm.submatrix_drop(x, n) - np.outer(xn, xn)
        s = _psd_sqrt_clamped(block)
        idx = [k for k in range(d) if k != n]
        v = np.zeros(d)
        v[idx] = s @ normals[idx, n]
        v *= params.a[n] * sh
        y[:, n] += v
        y[n, :] += v
    w, vec = np.linalg.eigh(cm.symmetrize(y))
    if w[0] < 0.0:
        y = (vec * np.clip(w, 0.0, None)) @ vec.T
    return cm.project_correlation(y)


def step(params, kind, x, h, rng):
    if kind is SchemeKind.EULER_CORRECTED:
        return euler_corrected_step(params, x, h, rng=rng)
    return step_mrc_second_order(params, h, x, rng=rng)
