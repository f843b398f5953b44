"""Per-run constants shared by both kernel backends.

Everything that depends only on (params, h) is computed once here so the
numba and numpy paths consume identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flows import xi_flow
from .schemes import MAX_DIRECT_STEP, SQRT3, threshold_K
from .errors import StepTooLarge


def xi_tables(params, dt):
    """Elementwise decay/constant tables of the xi flow over duration dt."""
    flow = xi_flow(params)
    kt = flow.kappa_tilde
    rate = kt[:, None] + kt[None, :]
    decay = np.exp(-rate * dt)
    deg = np.abs(rate) < 1e-300
    safe = np.where(deg, 1.0, rate)
    const = np.where(deg, flow.b * dt, (flow.b / safe) * (1.0 - decay))
    return decay, const


@dataclass(frozen=True)
class DirectStepConstants:
    h: float
    taus: np.ndarray
    xi_decay: np.ndarray
    xi_const: np.ndarray
    z_threshold: np.ndarray
    em_quarter: np.ndarray  # exp(-tau/4), the Z0 half-duration decay
    em_half: np.ndarray  # exp(-tau/2)
    e_half: np.ndarray  # exp(+tau/2), the X0 half-duration growth
    g: np.ndarray  # exp(-sqrt(tau) * sqrt(3))
    sqrt_tau: np.ndarray


def direct_constants(params, h):
    taus = params.a**2 * h
    if np.max(taus, initial=0.0) > MAX_DIRECT_STEP:
        raise StepTooLarge(
            f"elementary duration {float(np.max(taus))!r} exceeds 2/5; increase N"
        )
    decay, const = xi_tables(params, h / 2.0)
    d = params.dim
    z_thr = np.zeros(d)
    for i in range(d):
        if taus[i] > 0.0:
            z_thr[i] = threshold_K(float(taus[i]))
    return DirectStepConstants(
        h=float(h),
        taus=taus,
        xi_decay=decay,
        xi_const=const,
        z_threshold=z_thr,
        em_quarter=np.exp(-taus / 4.0),
        em_half=np.exp(-taus / 2.0),
        e_half=np.exp(taus / 2.0),
        g=np.exp(-np.sqrt(taus) * SQRT3),
        sqrt_tau=np.sqrt(taus),
    )


@dataclass(frozen=True)
class EulerStepConstants:
    h: float
    drift_const: np.ndarray  # h (kappa c + c kappa)
    drift_decay: np.ndarray  # h (kappa_i + kappa_j)
    a_sqrt_h: np.ndarray


def euler_constants(params, h):
    kap = params.kappa
    kc = kap[:, None] * params.c + params.c * kap[None, :]
    return EulerStepConstants(
        h=float(h),
        drift_const=h * kc,
        drift_decay=h * (kap[:, None] + kap[None, :]),
        a_sqrt_h=params.a * math.sqrt(h),
    )
