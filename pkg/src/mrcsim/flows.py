"""Closed-form solutions of the linear ODEs on correlation matrices and
classification of the parameter conditions for weak/strong existence."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corematrix import validate_correlation
from .errors import LeftDomain, NotPositiveSemidefinite, NotUnitDiagonal

_DEGENERATE = 1e-300  # |rate| below this uses the linear-in-t branch


@dataclass(frozen=True)
class LinearCorrFlow:
    """The ODE ``x' = b - (K x + x K)`` with ``K = diag(kappa_tilde)``.

    ``b_ii = 2 kappa_tilde_i`` is enforced on construction so the flow
    preserves the unit diagonal identically.
    """

    kappa_tilde: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        kt = np.asarray(self.kappa_tilde, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).copy()
        b[np.diag_indices(b.shape[0])] = 2.0 * kt
        object.__setattr__(self, "kappa_tilde", kt)
        object.__setattr__(self, "b", b)


def linear_flow(flow, x, t):
    """Evaluate the flow at time ``t``: elementwise
    ``x_ij e^{-(ki+kj)t} + (b_ij/(ki+kj)) (1 - e^{-(ki+kj)t})``,
    with the ``ki+kj = 0`` entries following ``x_ij + b_ij t``."""
    x = np.asarray(x, dtype=np.float64)
    rate = flow.kappa_tilde[:, None] + flow.kappa_tilde[None, :]
    decay = np.exp(-rate * t)
    deg = np.abs(rate) < _DEGENERATE
    safe = np.where(deg, 1.0, rate)
    out = np.where(
        deg,
        x + flow.b * t,
        x * decay + (flow.b / safe) * (1.0 - decay),
    )
    out[np.diag_indices(out.shape[0])] = 1.0
    return out


def _drift_flow(params, shrink):
    """Flow with effective speeds ``kappa_i - shrink * a_i^2`` and constant
    term ``kappa c + c kappa - 2 shrink a^2``."""
    kt = params.kappa - shrink * params.a**2
    b = (
        params.kappa[:, None] * params.c
        + params.c * params.kappa[None, :]
        - 2.0 * shrink * np.diag(params.a**2)
    )
    return LinearCorrFlow(kappa_tilde=kt, b=b)


def xi_flow(params):
    """The drift piece of the weak-existence splitting: shrink (d-2)/2."""
    return _drift_flow(params, (params.dim - 2) / 2.0)


def zeta_flow(params):
    """The drift piece of the fast splitting: shrink (d-1)/2."""
    return _drift_flow(params, (params.dim - 1) / 2.0)


def _checked(out, validate, what):
    if not validate:
        return out
    try:
        return validate_correlation(out, tol=1e-9)
    except (NotUnitDiagonal, NotPositiveSemidefinite) as exc:
        raise LeftDomain(f"{what} left the correlation matrices: {exc}") from exc


def flow_xi(params, x, t, validate=True):
    """Exact solution of the xi ODE; warns if the weak condition fails."""
    report = classify_assumptions(params)
    if not report.weak:
        warnings.warn(
            "weak-existence condition violated "
            f"(witness eigenvalue {report.weak_eigenvalue:.6g}); "
            "evaluating the flow mechanically",
            stacklevel=2,
        )
    return _checked(linear_flow(xi_flow(params), x, t), validate, "flow_xi")


def flow_zeta(params, x, t, validate=True):
    """Exact solution of the zeta ODE; warns if the fast condition fails."""
    report = classify_assumptions(params)
    if not report.fast:
        warnings.warn(
            "fast-scheme condition violated "
            f"(witness eigenvalue {report.fast_eigenvalue:.6g}); "
            "evaluating the flow mechanically",
            stacklevel=2,
        )
    return _checked(linear_flow(zeta_flow(params), x, t), validate, "flow_zeta")


@dataclass(frozen=True)
class AssumptionReport:
    weak: bool
    strong: bool
    fast: bool
    weak_eigenvalue: float
    strong_eigenvalue: float
    fast_eigenvalue: float


def classify_assumptions(params, tol=1e-10):
    """Check the sufficient parameter conditions by smallest eigenvalue.

    weak:   kappa c + c kappa - (d-2) a^2 PSD, or d = 2
    strong: kappa c + c kappa - d a^2 PSD
    fast:   all a_i equal and kappa c + c kappa - (d-1) a^2 PSD
    """
    d = params.dim
    kc = params.kappa[:, None] * params.c + params.c * params.kappa[None, :]
    a2 = np.diag(params.a**2)

    def min_eig(mat):
        w = np.linalg.eigvalsh(mat)
        return float(w[0])

    w_weak = min_eig(kc - (d - 2) * a2)
    w_strong = min_eig(kc - d * a2)
    w_fast = min_eig(kc - (d - 1) * a2)
    scale = max(1.0, float(np.max(np.abs(kc))))
    ok = lambda w: w >= -tol * scale
    return AssumptionReport(
        weak=bool(ok(w_weak) or d == 2),
        strong=bool(ok(w_strong)),
        fast=bool(ok(w_fast) and np.all(params.a == params.a[0])),
        weak_eigenvalue=w_weak,
        strong_eigenvalue=w_strong,
        fast_eigenvalue=w_fast,
    )
