"""Monte Carlo engine: path generation over uniform grids, functional
estimation with confidence intervals, the weak-convergence study, the
timing benchmark, and the statistical consistency tests.

Paths are processed in fixed-size chunks; chunk ``c`` owns the
counter-based random stream derived from ``(seed, c)``, draws are consumed
in a fixed (chunk, step) order, and within-chunk reductions use numpy's
pairwise summation.  Results are therefore byte-identical for a given
seed no matter how many worker threads the kernels use.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import stepconsts
from .backend import get_backend
from .corematrix import MrcParams
from .errors import LeftDomain
from .flows import classify_assumptions
from .momentoracle import MomentTable, Monomial, functional_fig1, moment
from .schemes import RngStream, SchemeKind


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i T / N on [0, T]."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 1 or self.T < 0.0:
            raise ValueError("need N >= 1 and T >= 0")

    @property
    def h(self):
        return self.T / self.N

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    ci_half_width_95: float
    n_paths: int

    @classmethod
    def from_sums(cls, s1, s2, n):
        mean = s1 / n
        var = max(s2 - n * mean * mean, 0.0) / max(n - 1, 1)
        se = math.sqrt(var / n)
        return cls(mean=mean, std_error=se, ci_half_width_95=1.96 * se, n_paths=n)


def _chunk_size(d):
    return 16384 if d <= 16 else 4096


def _spot_check_states(x, step_index):
    """Validate ~1% of a chunk's states (diag, range, min eigenvalue)."""
    n = x.shape[0]
    k = max(1, n // 100)
    sub = x[:k]
    d = x.shape[-1]
    diag = sub[:, np.arange(d), np.arange(d)]
    if np.max(np.abs(diag - 1.0)) > 1e-9 or np.max(np.abs(sub)) > 1.0 + 1e-9:
        raise LeftDomain(f"state out of range after step {step_index}")
    wmin = np.linalg.eigvalsh(sub)[:, 0]
    if np.min(wmin) < -1e-9:
        raise LeftDomain(
            f"state eigenvalue {np.min(wmin):.3e} after step {step_index}"
        )


def _simulate(
    params,
    scheme,
    grid,
    n_paths,
    seed,
    final_fns,
    trap_entry=None,
    backend=None,
    spot_check=True,
):
    """Drive chunks through the chosen kernel; return per-functional sums.

    ``final_fns`` take a chunk of terminal states (n, d, d) and return a
    value per path.  ``trap_entry`` additionally accumulates the
    trapezoidal time average of one matrix entry along each path.
    """
    bk = get_backend() if backend is None else get_backend(backend)
    d = params.dim
    scheme = SchemeKind(scheme) if not isinstance(scheme, SchemeKind) else scheme
    if scheme is SchemeKind.EULER_CORRECTED:
        consts = stepconsts.euler_constants(params, grid.h)
    else:
        consts = stepconsts.direct_constants(params, grid.h)
    spot_check = spot_check and classify_assumptions(params).weak
    root = RngStream(seed)
    chunk = _chunk_size(d)
    n_obs = len(final_fns)
    s1 = [0.0] * n_obs
    s2 = [0.0] * n_obs
    trap_s1 = 0.0
    trap_s2 = 0.0
    h = grid.h
    done = 0
    ci = 0
    while done < n_paths:
        nc = min(chunk, n_paths - done)
        stream = root.derive(ci)
        x = np.tile(params.x, (nc, 1, 1))
        if trap_entry is not None:
            i, j = trap_entry
            trap = np.full(nc, 0.5 * h * params.x[i, j])
        for k in range(grid.N):
            if scheme is SchemeKind.EULER_CORRECTED:
                draws = stream.standard_normal((nc, d, d))
                bk.euler_step(x, draws, consts)
            else:
                draws = stream.uniform((nc, d, d + 1))
                bk.direct_step(x, draws, consts)
            if trap_entry is not None:
                w = 0.5 * h if k == grid.N - 1 else h
                trap += w * x[:, i, j]
            if spot_check:
                _spot_check_states(x, k)
        for t, fn in enumerate(final_fns):
            vals = np.asarray(fn(x), dtype=np.float64)
            s1[t] += float(np.sum(vals))
            s2[t] += float(np.sum(vals * vals))
        if trap_entry is not None:
            trap /= grid.T
            trap_s1 += float(np.sum(trap))
            trap_s2 += float(np.sum(trap * trap))
        done += nc
        ci += 1
    ests = [McEstimate.from_sums(s1[t], s2[t], n_paths) for t in range(n_obs)]
    trap_est = (
        McEstimate.from_sums(trap_s1, trap_s2, n_paths) if trap_entry is not None else None
    )
    return ests, trap_est


def simulate_paths(
    params, scheme, grid, n_paths, seed, observable, backend=None, spot_check=True
):
    """Estimate ``E[observable(X_T)]``; ``observable`` maps a stacked state
    array (n, d, d) to one value per path."""
    ests, _ = _simulate(
        params, scheme, grid, n_paths, seed, [observable], backend=backend,
        spot_check=spot_check,
    )
    return ests[0]


def entry_observable(i, j):
    return lambda x: x[:, i, j]


def entry_sq_observable(i, j):
    return lambda x: x[:, i, j] ** 2


def fig1_order3_observable(x):
    s1 = x[:, 0, 1] + x[:, 0, 2] + x[:, 1, 2]
    s2 = x[:, 0, 1] ** 2 + x[:, 0, 2] ** 2 + x[:, 1, 2] ** 2
    return 4.0 * s1 * s2 + x[:, 0, 1] * x[:, 0, 2] * x[:, 1, 2]


def fig1_order1_observable(x):
    return 2.0 * (x[:, 0, 1] + x[:, 0, 2] + x[:, 1, 2])


@dataclass(frozen=True)
class ConvergencePoint:
    N: int
    estimate: McEstimate
    exact: float
    abs_error: float


@dataclass(frozen=True)
class ConvergenceReport:
    functional: str
    points: tuple
    slope: float | None

    def usable_points(self):
        return [
            p for p in self.points if p.abs_error > 3.0 * p.estimate.ci_half_width_95
        ]


def _fit_slope(points):
    usable = [p for p in points if p.abs_error > 3.0 * p.estimate.ci_half_width_95]
    if len(usable) < 2:
        return None
    logh = np.log([1.0 / p.N for p in usable])
    loge = np.log([p.abs_error for p in usable])
    return float(np.polyfit(logh, loge, 1)[0])


@dataclass(frozen=True)
class ConvergenceStudy:
    scheme: str
    reports: tuple  # of ConvergenceReport


def convergence_study(
    params, scheme, T, N_list, n_paths, seed, backend=None, spot_check=False
):
    """Per-N weak errors of the two order-3/order-1 functionals against the
    exact moment oracle, with fitted log-log slopes."""
    scheme = SchemeKind(scheme) if not isinstance(scheme, SchemeKind) else scheme
    exact3, exact1 = functional_fig1(params, T)
    rows3 = []
    rows1 = []
    for N in N_list:
        ests, _ = _simulate(
            params,
            scheme,
            TimeGrid(T, N),
            n_paths,
            seed,
            [fig1_order3_observable, fig1_order1_observable],
            backend=backend,
            spot_check=spot_check,
        )
        rows3.append(
            ConvergencePoint(N, ests[0], exact3, abs(ests[0].mean - exact3))
        )
        rows1.append(
            ConvergencePoint(N, ests[1], exact1, abs(ests[1].mean - exact1))
        )
    reports = tuple(
        ConvergenceReport(name, tuple(rows), _fit_slope(rows))
        for name, rows in (("order3", rows3), ("order1", rows1))
    )
    return ConvergenceStudy(scheme=scheme.value, reports=reports)


@dataclass(frozen=True)
class BenchRow:
    scheme: str
    backend: str
    d: int
    N: int
    n_paths: int
    seconds: float


def timing_bench(params, schemes, grid, n_paths, seed=0, backends=None, warmup=True):
    """Wall-clock seconds to generate ``n_paths`` full paths per scheme.

    A small warmup run is done first so numba JIT compilation is not
    billed to the measured run.
    """
    rows = []
    names = backends if backends is not None else [get_backend().name]
    obs = entry_observable(0, 1)
    for bk in names:
        for scheme in schemes:
            scheme = SchemeKind(scheme) if not isinstance(scheme, SchemeKind) else scheme
            if warmup:
                simulate_paths(
                    params, scheme, grid, min(256, n_paths), seed, obs,
                    backend=bk, spot_check=False,
                )
            t0 = time.perf_counter()
            simulate_paths(
                params, scheme, grid, n_paths, seed, obs, backend=bk,
                spot_check=False,
            )
            rows.append(
                BenchRow(
                    scheme=scheme.value,
                    backend=bk,
                    d=params.dim,
                    N=grid.N,
                    n_paths=n_paths,
                    seconds=time.perf_counter() - t0,
                )
            )
    return rows


@dataclass(frozen=True)
class QvRow:
    i: int
    j: int
    k: int
    l: int
    empirical: float
    theoretical: float
    std_error: float

    @property
    def n_se(self):
        return abs(self.empirical - self.theoretical) / self.std_error


def qv_bracket(params, x, i, j, k, l):
    """Instantaneous covariation of entries (i,j) and (k,l) at state x."""
    a = params.a

    def block(m, r, s):
        return x[r, s] - x[m, r] * x[m, s]

    val = 0.0
    if i == k:
        val += a[i] ** 2 * block(i, j, l)
    if i == l:
        val += a[i] ** 2 * block(i, j, k)
    if j == k:
        val += a[j] ** 2 * block(j, i, l)
    if j == l:
        val += a[j] ** 2 * block(j, i, k)
    return val


def qv_test(params, h, n_draws, seed, backend=None):
    """Empirical cov of one-step Euler increments against the bracket.

    Returns one row per unordered pair of index pairs, with the standard
    error of the empirical covariance.
    """
    if h > 1e-2:
        warnings.warn("qv_test expects a small step h <= 1e-2")
    d = params.dim
    bk = get_backend() if backend is None else get_backend(backend)
    consts = stepconsts.euler_constants(params, h)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    npairs = len(pairs)
    root = RngStream(seed)
    chunk = _chunk_size(d)
    done = 0
    ci = 0
    s1 = np.zeros(npairs)
    s_prod = np.zeros((npairs, npairs))
    s_prod2 = np.zeros((npairs, npairs))
    while done < n_draws:
        nc = min(chunk, n_draws - done)
        stream = root.derive(ci)
        x = np.tile(params.x, (nc, 1, 1))
        draws = stream.standard_normal((nc, d, d))
        bk.euler_step(x, draws, consts)
        incr = np.stack([x[:, i, j] - params.x[i, j] for (i, j) in pairs], axis=1)
        s1 += incr.sum(axis=0)
        prod = incr[:, :, None] * incr[:, None, :]
        s_prod += prod.sum(axis=0)
        s_prod2 += (prod * prod).sum(axis=0)
        done += nc
        ci += 1
    n = n_draws
    means = s1 / n
    rows = []
    for a_ in range(npairs):
        for b_ in range(a_, npairs):
            mean_prod = s_prod[a_, b_] / n
            cov = (mean_prod - means[a_] * means[b_]) * n / (n - 1)
            var_prod = max(s_prod2[a_, b_] / n - mean_prod**2, 0.0)
            se = math.sqrt(var_prod / n) / h
            (i, j), (k, l) = pairs[a_], pairs[b_]
            rows.append(
                QvRow(
                    i=i,
                    j=j,
                    k=k,
                    l=l,
                    empirical=cov / h,
                    theoretical=qv_bracket(params, params.x, i, j, k, l),
                    std_error=max(se, 1e-300),
                )
            )
    return rows


@dataclass(frozen=True)
class SubmatrixRow:
    monomial: str
    simulated: McEstimate
    exact: float

    @property
    def within_3ci(self):
        return abs(self.simulated.mean - self.exact) <= 3.0 * max(
            self.simulated.ci_half_width_95, 1e-12
        )


def submatrix_consistency_test(
    params, subset, T, N, n_paths, seed, scheme=SchemeKind.SECOND_ORDER_DIRECT,
    backend=None,
):
    """Moments of a principal sub-block at T against the oracle run on the
    restricted parameters: the sub-process is itself of the same family."""
    subset = sorted(subset)
    if not 1 < len(subset) <= params.dim:
        raise ValueError("need 1 < |subset| <= d")
    sub_params = params.restricted(subset)
    table = MomentTable(sub_params)
    fns = []
    labels = []
    exacts = []
    for a_ in range(len(subset)):
        for b_ in range(a_ + 1, len(subset)):
            i, j = subset[a_], subset[b_]
            fns.append(entry_observable(i, j))
            labels.append(f"X[{i},{j}]")
            exacts.append(table.series(Monomial.pair(a_, b_))(T))
            fns.append(entry_sq_observable(i, j))
            labels.append(f"X[{i},{j}]^2")
            exacts.append(table.series(Monomial.pair(a_, b_, 2))(T))
    ests, _ = _simulate(
        params, scheme, TimeGrid(T, N), n_paths, seed, fns, backend=backend
    )
    return [
        SubmatrixRow(monomial=lab, simulated=est, exact=ex)
        for lab, est, ex in zip(labels, ests, exacts)
    ]
