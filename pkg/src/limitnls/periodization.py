"""Factorial periodizations, the averaging operator and spectral projection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .ap_series import LimitPeriodicSeries

MAX_J = 20


def is_in_Aj(r: Fraction, j: int) -> bool:
    """True iff ``r * j!`` is an integer."""
    if j < 1:
        raise ValueError("j must be >= 1")
    return (Fraction(r) * math.factorial(j)).denominator == 1


def period_Lj(omega: float, j: int) -> float:
    if not omega > 0:
        raise ValueError("omega must be positive")
    if not 1 <= j <= MAX_J:
        raise OverflowError(f"j={j} outside 1..{MAX_J}")
    return math.factorial(j) / omega


@dataclass(frozen=True)
class PeriodizationLevel:
    j: int
    L_j: float
    series_j: LimitPeriodicSeries


def periodize(series: LimitPeriodicSeries, j: int) -> PeriodizationLevel:
    """Keep the terms of ``series`` that are ``L_j``-periodic."""
    if not series.omega > 0:
        raise ValueError("periodize needs omega > 0; call series.normalized() first")
    kept = series.restrict(lambda r: is_in_Aj(r, j))
    return PeriodizationLevel(j, period_Lj(series.omega, j), kept)


def averaging_apply(f: Callable, n: int, L: float, x):
    """``(1/n) * sum_{l<n} f(x + l L)``; ``f`` must accept numpy arrays."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not L > 0:
        raise ValueError("L must be positive")
    xa = np.asarray(x, dtype=float)
    acc = np.zeros(xa.shape, dtype=complex)
    for l in range(n):
        acc += f(xa + l * L)
    acc /= n
    return complex(acc) if np.ndim(x) == 0 else acc


def spectral_projection(series: LimitPeriodicSeries, L) -> LimitPeriodicSeries:
    """Terms of period ``L`` where ``L = rho/omega`` with ``rho`` rational.

    ``L`` is passed as the exact ratio ``rho`` (a Fraction or int). A float is
    rejected: commensurability cannot be decided on rounded input.
    """
    if isinstance(L, float) or not isinstance(L, (Fraction, int)):
        raise TypeError("L must be given exactly as a rational multiple of 1/omega")
    rho = Fraction(L)
    if rho <= 0:
        raise ValueError("L must be positive")
    return series.restrict(lambda r: (r * rho).denominator == 1)


def geometric_average(theta: Fraction | float, n: int) -> complex:
    """``(1/n) * sum_{l<n} exp(2 pi i theta l)`` with ``theta`` reduced mod 1."""
    if isinstance(theta, Fraction):
        frac = theta - math.floor(theta)
        if frac == 0:
            return 1.0 + 0j
        frac_n = float((n * frac) % 1)
        frac = float(frac)
    else:
        frac = theta - math.floor(theta)
        if frac == 0:
            return 1.0 + 0j
        frac_n = (n * frac) % 1.0
    z = np.exp(2j * np.pi * frac)
    zn = np.exp(2j * np.pi * frac_n)
    return complex((1 - zn) / (n * (1 - z)))


def average_series(series: LimitPeriodicSeries, n: int, L) -> LimitPeriodicSeries:
    """Exact ``A_{n,L}`` on a finite series, with ``L = rho/omega``."""
    rho = Fraction(L)
    return LimitPeriodicSeries(series.omega, [(r, c * geometric_average(r * rho, n)) for r, c in series.terms])


def sqrt2_proxies(min_den: int = 10_000, count: int = 3) -> list[Fraction]:
    """Continued-fraction convergents of sqrt(2) with denominator >= ``min_den``."""
    p0, q0, p1, q1 = 1, 1, 3, 2
    out = []
    while len(out) < count:
        if q1 >= min_den:
            out.append(Fraction(p1, q1))
        p0, q0, p1, q1 = p1, q1, 2 * p1 + p0, 2 * q1 + q0
    return out


def golden_proxies(min_den: int = 10_000, count: int = 3) -> list[Fraction]:
    """Fibonacci ratios approximating the golden mean."""
    a, b = 1, 1
    out = []
    while len(out) < count:
        a, b = b, a + b
        if a >= min_den:
            out.append(Fraction(b, a))
    return out


def level_field(series: LimitPeriodicSeries, j: int, N: int):
    """The ``L_j``-periodic series as a field on ``T_j`` with ``N`` modes.

    Mode indices ``r * j!`` are computed exactly; a term outside A(j) or
    outside the band raises ``ValueError``.
    """
    from .torus_field import SpectralField

    jf = math.factorial(j)
    out = np.zeros(N, dtype=complex)
    for r, c in series.terms:
        x = r * jf
        if x.denominator != 1:
            raise ValueError(f"frequency {r} is not L_{j}-periodic")
        n = x.numerator
        if not -(N // 2) <= n < N // 2:
            raise ValueError(f"mode {n} outside the {N}-mode band")
        out[n % N] = c
    return SpectralField(period_Lj(series.omega, j), out)


def max_level_mode(series: LimitPeriodicSeries, j: int) -> int:
    jf = math.factorial(j)
    return max((abs((r * jf).numerator) for r, _ in series.terms), default=0)


def hierarchy_block(m: np.ndarray, j: int) -> np.ndarray:
    """Block index of each mode ``m`` of ``T_j`` (frequency ``m / L_j``)."""
    m = np.asarray(m, dtype=np.int64)
    out = np.zeros(m.shape, dtype=np.int64)
    jf = math.factorial(j)
    for i in range(1, j + 1):
        d = jf // math.factorial(i)
        hit = (out == 0) & (m % d == 0)
        out[hit] = i
    return out
