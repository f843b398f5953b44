"""Exact moment trajectories and ergodic laws of the correlation SDE.

The moment of a monomial ``x^m`` solves a closed linear ODE,
``dE[X^m]/dt = -K_m E[X^m] + E[f_m(X)]`` where ``f_m`` only involves
monomials of lower degree.  Iterating the variation-of-constants formula
therefore yields every moment exactly as a finite combination of
``t^p exp(-lambda t)`` terms, which this module manipulates symbolically.
That makes the oracle exact up to floating point, which is what the weak
convergence study needs: scheme bias must be measurable far below any ODE
integrator tolerance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegreeLimitExceeded,
    NonIntegrableAlpha,
    WrongDimension,
    ZeroSpeedPair,
)

DEGREE_CAP = 8
_RESONANCE_RTOL = 1e-12


class Monomial:
    """Exponent map on unordered index pairs {i, j}, i < j (0-based).

    ``Monomial({(0, 1): 2, (1, 2): 1})`` stands for ``x_01^2 x_12``.
    Diagonal pairs are rejected: diagonal entries are identically 1.
    """

    __slots__ = ("_items",)

    def __init__(self, exponents=None):
        items = {}
        if exponents:
            for (i, j), e in dict(exponents).items():
                if i == j:
                    raise ValueError("diagonal exponents are not stored")
                if e < 0 or e != int(e):
                    raise ValueError("exponents must be nonnegative integers")
                if e:
                    key = (min(i, j), max(i, j))
                    items[key] = items.get(key, 0) + int(e)
        self._items = tuple(sorted(items.items()))

    @classmethod
    def pair(cls, i, j, e=1):
        return cls({(i, j): e})

    def items(self):
        return self._items

    def get(self, i, j):
        key = (min(i, j), max(i, j))
        for k, e in self._items:
            if k == key:
                return e
        return 0

    @property
    def degree(self):
        return sum(e for _, e in self._items)

    def shifted(self, *deltas):
        """New monomial with each ((i, j), de) delta applied."""
        d = dict(self._items)
        for (i, j), de in deltas:
            if i == j:
                continue  # x_jj == 1 acts as multiplicative identity
            key = (min(i, j), max(i, j))
            d[key] = d.get(key, 0) + de
            if d[key] < 0:
                raise ValueError("negative exponent")
            if d[key] == 0:
                del d[key]
        return Monomial(d)

    def value_at(self, x):
        out = 1.0
        for (i, j), e in self._items:
            out *= float(x[i, j]) ** e
        return out

    def max_index(self):
        return max((j for (_, j), _ in self._items), default=-1)

    def __eq__(self, other):
        return isinstance(other, Monomial) and self._items == other._items

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        if not self._items:
            return "Monomial(1)"
        body = " ".join(f"x[{i},{j}]^{e}" for (i, j), e in self._items)
        return f"Monomial({body})"

    def format(self):
        """CLI string form, 1-based: ``"1,2:2;2,3:1"``; empty monomial is "1"."""
        if not self._items:
            return "1"
        return ";".join(f"{i + 1},{j + 1}:{e}" for (i, j), e in self._items)

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text == "1":
            return cls()
        out = {}
        for part in text.split(";"):
            try:
                pair, _, exp = part.partition(":")
                i, j = (int(v) for v in pair.split(","))
                e = int(exp) if exp else 1
            except ValueError as exc:
                raise ValueError(f"bad monomial component {part!r}") from exc
            if i < 1 or j < 1 or i == j or e < 1:
                raise ValueError(f"bad monomial component {part!r}")
            key = (min(i, j) - 1, max(i, j) - 1)
            out[key] = out.get(key, 0) + e
        return cls(out)


@dataclass(frozen=True)
class ExpPolySeries:
    """Finite sum of terms ``coeff * t^power * exp(-rate * t)``."""

    terms: tuple  # of (coeff, power, rate)

    @classmethod
    def from_terms(cls, terms):
        merged = {}
        for c, p, lam in terms:
            key = (int(p), float(lam))
            merged[key] = merged.get(key, 0.0) + float(c)
        cleaned = tuple(
            (c, p, lam) for (p, lam), c in sorted(merged.items()) if c != 0.0
        )
        return cls(cleaned)

    @classmethod
    def constant(cls, value):
        return cls.from_terms([(value, 0, 0.0)])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t, dtype=np.float64)
        for c, p, lam in self.terms:
            out = out + c * t**p * np.exp(-lam * t)
        return out if out.ndim else float(out)

    def __add__(self, other):
        return ExpPolySeries.from_terms(self.terms + other.terms)

    def scaled(self, factor):
        return ExpPolySeries.from_terms((c * factor, p, lam) for c, p, lam in self.terms)

    def limit(self):
        """Value as t -> +infinity (rates are nonnegative by construction)."""
        return sum(c for c, p, lam in self.terms if lam == 0.0 and p == 0)

    def min_positive_rate(self):
        rates = [lam for _, _, lam in self.terms if lam > 0.0]
        return min(rates) if rates else None


def _integrate_against(series, big_k):
    """Exact ``exp(-K t) * int_0^t exp(K s) series(s) ds`` as a series.

    The resonance ``rate == K`` turns ``t^p`` into ``t^(p+1)/(p+1)``.
    """
    out = []
    for c, p, lam in series.terms:
        mu = big_k - lam
        if abs(mu) <= _RESONANCE_RTOL * max(1.0, abs(big_k), abs(lam)):
            out.append((c / (p + 1), p + 1, big_k))
            continue
        # int_0^t s^p e^{mu s} ds, times e^{-K t}
        fact = 1.0
        for k in range(p + 1):
            out.append((c * (-1.0) ** k * fact / mu ** (k + 1), p - k, lam))
            fact *= p - k
        out.append((c * (-1.0) ** (p + 1) * math.factorial(p) / mu ** (p + 1), 0, big_k))
    return ExpPolySeries.from_terms(out)


def decay_rate_Km(params, m):
    """Decay rate of ``E[X_t^m]``: with row sums ``r_i = sum_j m_ij``,
    ``K_m = sum_i kappa_i r_i + (1/2) sum_i a_i^2 r_i (r_i - 1)``.

    (The diffusion part is the second-derivative count of the generator
    applied to ``x^m``; the self-pair j = k contributes the falling
    factorial ``m_ij (m_ij - 1)``, which is what the explicit order-1/2
    moment formulas and the ergodic recursion require.)
    """
    d = params.dim
    rows = np.zeros(d)
    for (i, j), e in m.items():
        rows[i] += e
        rows[j] += e
    return float(np.sum(params.kappa * rows) + 0.5 * np.sum(params.a**2 * rows * (rows - 1.0)))


def _f_terms(params, m):
    """Expansion of ``f_m`` into ``(coefficient, lower monomial)`` pairs."""
    d = params.dim
    terms = []
    for (i, j), e in m.items():
        coeff = (params.kappa[i] + params.kappa[j]) * params.c[i, j] * e
        if coeff:
            terms.append((coeff, m.shifted(((i, j), -1))))
    for i in range(d):
        ai2 = params.a[i] ** 2
        if ai2 == 0.0:
            continue
        row = [(j, m.get(i, j)) for j in range(d) if j != i and m.get(i, j) > 0]
        for j, mij in row:
            for k, mik in row:
                if j == k:
                    coeff = 0.5 * ai2 * mij * (mij - 1)
                    if coeff:
                        terms.append((coeff, m.shifted(((i, j), -2))))
                else:
                    terms.append(
                        (
                            0.5 * ai2 * mij * mik,
                            m.shifted(((i, j), -1), ((i, k), -1), ((j, k), +1)),
                        )
                    )
    merged = {}
    for c, mono in terms:
        merged[mono] = merged.get(mono, 0.0) + c
    return [(c, mono) for mono, c in merged.items() if c != 0.0]


class MomentTable:
    """Memoized exact moment trajectories for one parameter set."""

    def __init__(self, params, degree_cap=DEGREE_CAP):
        self.params = params
        self.degree_cap = degree_cap
        self._memo = {}

    def series(self, m):
        if m.degree > self.degree_cap:
            raise DegreeLimitExceeded(
                f"monomial degree {m.degree} exceeds cap {self.degree_cap}"
            )
        if m.max_index() >= self.params.dim:
            raise WrongDimension(f"monomial {m!r} does not fit dimension {self.params.dim}")
        cached = self._memo.get(m)
        if cached is not None:
            return cached
        if m.degree == 0:
            out = ExpPolySeries.constant(1.0)
        else:
            big_k = decay_rate_Km(self.params, m)
            acc = ExpPolySeries.from_terms([(m.value_at(self.params.x), 0, big_k)])
            for coeff, lower in _f_terms(self.params, m):
                integrated = _integrate_against(self.series(lower), big_k)
                acc = acc + integrated.scaled(coeff)
            out = acc
        self._memo[m] = out
        return out


def moment(params, m, degree_cap=DEGREE_CAP, check_weak=True):
    """Exact trajectory ``t -> E[X_t^m]`` as an :class:`ExpPolySeries`."""
    if check_weak:
        from .flows import classify_assumptions

        if not classify_assumptions(params).weak:
            warnings.warn(
                "weak-existence condition violated; moments are formal",
                stacklevel=2,
            )
    return MomentTable(params, degree_cap).series(m)


def moment_order2(params, i, j, k, l, t):
    """Explicit second-moment formula ``E[(X_t)_ij (X_t)_kl]``.

    Independent of the generic recursion; the two must agree to near
    machine precision.
    """
    kap, a, c, x = params.kappa, params.a, params.c, params.x
    if i == j or k == l:
        raise ZeroSpeedPair("off-diagonal index pairs required")
    if kap[i] + kap[j] <= 0.0 or kap[k] + kap[l] <= 0.0:
        raise ZeroSpeedPair("the explicit display requires kappa_i + kappa_j > 0")
    big_k = (
        kap[i]
        + kap[j]
        + kap[k]
        + kap[l]
        + a[i] ** 2 * ((i == k) + (i == l))
        + a[j] ** 2 * ((j == k) + (j == l))
    )

    def gamma(mm, nn):
        lam = kap[mm] + kap[nn]
        out = c[mm, nn] * (1.0 - math.exp(-t * big_k)) / big_k
        dx = x[mm, nn] - c[mm, nn]
        if abs(big_k - lam) <= _RESONANCE_RTOL * max(1.0, big_k):
            return out + dx * t * math.exp(-t * big_k)
        return out + dx * (math.exp(-t * lam) - math.exp(-t * big_k)) / (big_k - lam)

    val = x[i, j] * x[k, l] * math.exp(-t * big_k)
    val += (kap[i] + kap[j]) * c[i, j] * gamma(k, l)
    val += (kap[k] + kap[l]) * c[k, l] * gamma(i, j)
    if i == k:
        val += a[i] ** 2 * gamma(j, l)
    if i == l:
        val += a[i] ** 2 * gamma(j, k)
    if j == k:
        val += a[j] ** 2 * gamma(i, l)
    if j == l:
        val += a[j] ** 2 * gamma(i, k)
    return val


def ergodic_moment(params, m, degree_cap=DEGREE_CAP):
    """Limit ``E[X_inf^m]`` from the ergodic recursion.

    ``K_m = 0`` (frozen or drift-free support) returns ``x^m``; otherwise
    ``E[X_inf^m] = E[f_m(X_inf)] / K_m``.
    """
    if m.degree > degree_cap:
        raise DegreeLimitExceeded(
            f"monomial degree {m.degree} exceeds cap {degree_cap}"
        )
    if m.degree == 0:
        return 1.0
    big_k = decay_rate_Km(params, m)
    if big_k == 0.0:
        return m.value_at(params.x)
    acc = 0.0
    for coeff, lower in _f_terms(params, m):
        acc += coeff * ergodic_moment(params, lower, degree_cap)
    return acc / big_k


def ergodic_density_first_row(alpha, z):
    """Stationary density of the first-row vector of the elementary
    process, at a point ``z`` in the unit ball of dimension d-1:

        Gamma((a+1)/2) / (pi^((d-1)/2) Gamma((a+2-d)/2)) (1-|z|^2)^((a-d)/2)

    The exponent is the one forced by the Dirichlet identification of the
    squared coordinates (the bare display omits it).
    """
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[0] + 1
    if alpha <= d - 2:
        raise NonIntegrableAlpha(f"alpha must exceed d - 2 = {d - 2}")
    s = float(np.sum(z * z))
    if s > 1.0:
        return 0.0
    const = math.gamma((alpha + 1) / 2.0) / (
        math.pi ** ((d - 1) / 2.0) * math.gamma((alpha + 2.0 - d) / 2.0)
    )
    return const * (1.0 - s) ** ((alpha - d) / 2.0)


def fig1_order3_monomials(d=3):
    """Monomial expansion of the mixed third-order functional: the double
    sum over ordered pairs of ``X_ij X_kl^2`` plus the triple product."""
    if d != 3:
        raise WrongDimension("the third-order functional is defined for d = 3")
    pairs = [(0, 1), (0, 2), (1, 2)]
    out = []
    for p in pairs:
        for q in pairs:
            if p == q:
                out.append((4.0, Monomial({p: 3})))
            else:
                out.append((4.0, Monomial({p: 1, q: 2})))
    out.append((1.0, Monomial({(0, 1): 1, (0, 2): 1, (1, 2): 1})))
    return out


def functional_fig1(params, t):
    """Exact values of the two weak-convergence functionals at time ``t``:
    the mixed order-3 combination and the sum of all off-diagonal entries.
    Only defined for d = 3."""
    if params.dim != 3:
        raise WrongDimension("functional_fig1 requires d = 3")
    table = MomentTable(params)
    order3 = sum(c * table.series(m)(t) for c, m in fig1_order3_monomials())
    order1 = sum(
        2.0 * table.series(Monomial.pair(i, j))(t) for i in range(3) for j in range(i + 1, 3)
    )
    return float(order3), float(order1)
