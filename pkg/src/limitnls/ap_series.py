"""Finite limit-periodic series with a one-term frequency basis.

A series is ``f(x) = sum_r c_r exp(2 pi i r omega x)`` with ``r`` rational.
Frequencies are kept as exact :class:`fractions.Fraction` values; only the
product ``r * omega`` is ever converted to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

import numpy as np

RationalFreq = Fraction

# Samples per unit length used by mean_value_quadrature when M is not given.
QUAD_DENSITY = 64


def _sort_key(r: Fraction) -> tuple[int, int]:
    return (r.denominator, r.numerator)


def _as_terms(terms) -> tuple[tuple[Fraction, complex], ...]:
    items = terms.items() if isinstance(terms, Mapping) else terms
    acc: dict[Fraction, complex] = {}
    for r, c in items:
        r = Fraction(r)
        if r in acc:
            raise ValueError(f"duplicate frequency {r}")
        acc[r] = complex(c)
    return tuple(sorted(((r, c) for r, c in acc.items() if c != 0), key=lambda t: _sort_key(t[0])))


@dataclass(frozen=True)
class LimitPeriodicSeries:
    """Truncated Fourier series over the lattice ``Q * omega``.

    ``terms`` may be given as a mapping or an iterable of pairs; it is stored
    as a tuple sorted by (denominator, numerator) with zero amplitudes dropped.
    """

    omega: float
    terms: tuple[tuple[Fraction, complex], ...] = field(default=())

    def __post_init__(self):
        omega = float(self.omega)
        if omega == 0 or not math.isfinite(omega):
            raise ValueError("omega must be finite and nonzero")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "terms", _as_terms(self.terms))

    def __len__(self):
        return len(self.terms)

    def as_dict(self) -> dict[Fraction, complex]:
        return dict(self.terms)

    @property
    def frequencies(self) -> list[Fraction]:
        return [r for r, _ in self.terms]

    def normalized(self) -> "LimitPeriodicSeries":
        """Same function written with a positive base frequency."""
        if self.omega > 0:
            return self
        return LimitPeriodicSeries(-self.omega, [(-r, c) for r, c in self.terms])

    def restrict(self, keep: Callable[[Fraction], bool]) -> "LimitPeriodicSeries":
        return LimitPeriodicSeries(self.omega, [(r, c) for r, c in self.terms if keep(r)])

    def __add__(self, other: "LimitPeriodicSeries") -> "LimitPeriodicSeries":
        if other.omega != self.omega:
            raise ValueError("series have different base frequencies")
        acc = self.as_dict()
        for r, c in other.terms:
            acc[r] = acc.get(r, 0) + c
        return LimitPeriodicSeries(self.omega, acc)

    def scaled(self, a: complex) -> "LimitPeriodicSeries":
        return LimitPeriodicSeries(self.omega, [(r, a * c) for r, c in self.terms])

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "terms": [
                {"num": r.numerator, "den": r.denominator, "re": c.real, "im": c.imag}
                for r, c in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LimitPeriodicSeries":
        return cls(
            d["omega"],
            [(Fraction(t["num"], t["den"]), complex(t["re"], t["im"])) for t in d["terms"]],
        )


def evaluate(series: LimitPeriodicSeries, x):
    """Sum the series at ``x`` (scalar or array), terms in (den, num) order."""
    xa = np.asarray(x, dtype=float)
    out = np.zeros(xa.shape, dtype=complex)
    for r, c in series.terms:
        out += c * np.exp(2j * np.pi * (float(r) * series.omega) * xa)
    if np.ndim(x) == 0:
        return complex(out)
    return out


def mean_value(series: LimitPeriodicSeries) -> complex:
    return series.as_dict().get(Fraction(0), 0j)


def mean_value_quadrature(f: Callable, L: float, M: int | None = None) -> complex:
    """Trapezoid approximation of ``(1/2L) * int_{-L}^{L} f``.

    ``f`` must accept a numpy array. ``M`` is the number of samples on the
    closed interval; by default 64 per unit length.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    if M is None:
        M = int(math.ceil(2 * L * QUAD_DENSITY)) + 1
    if M < 2:
        raise ValueError("need at least two samples")
    x = np.linspace(-L, L, M)
    y = np.asarray(f(x), dtype=complex)
    if y.shape != x.shape:
        y = np.array([complex(f(xi)) for xi in x])
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite sample in mean value quadrature")
    h = 2 * L / (M - 1)
    integral = h * (y.sum() - 0.5 * (y[0] + y[-1]))
    return complex(integral / (2 * L))


def fourier_coefficient(series: LimitPeriodicSeries, theta) -> complex:
    """Amplitude at frequency ``theta``.

    A :class:`Fraction` is read as the rational multiple ``theta/omega``
    directly; a float is a physical frequency and matched against
    ``r * omega`` up to rounding.
    """
    if isinstance(theta, (Fraction, int)):
        return series.as_dict().get(Fraction(theta), 0j)
    theta = float(theta)
    for r, c in series.terms:
        freq = float(r) * series.omega
        if abs(freq - theta) <= 1e-12 * max(1.0, abs(theta)):
            return c
    return 0j


def l2_norm(series: LimitPeriodicSeries) -> float:
    return math.sqrt(math.fsum(abs(c) ** 2 for _, c in series.terms))


def a_omega_norm(series: LimitPeriodicSeries) -> float:
    return math.fsum(abs(c) for _, c in series.terms)


# --- block-indexed generators -------------------------------------------------


def admissible(j: int, n: int) -> bool:
    """Whether ``n/j!`` lies in A(j) \\ A(j-1).

    Block 1 is A(1) itself (all integers, A(0) empty); for j >= 2 the new
    frequencies are exactly those with ``j`` not dividing ``n``.
    """
    if j < 1:
        raise ValueError("block index starts at 1")
    return j == 1 or n % j != 0


def block_of(r: Fraction) -> int:
    """Smallest j with ``r * j!`` an integer."""
    den = Fraction(r).denominator
    j, fact = 1, 1
    while fact % den:
        j += 1
        fact *= j
    return j


def block_modes(j: int, count: int, include_zero: bool = False) -> list[int]:
    """The first ``count`` admissible ``n_j`` ordered by |n|, positive first."""
    out = []
    if include_zero and j == 1 and count > 0:
        out.append(0)
    m = 1
    while len(out) < count:
        for n in (m, -m):
            if admissible(j, n) and len(out) < count:
                out.append(n)
        m += 1
    return out


@dataclass(frozen=True)
class Envelope:
    """Decay parameters the generator was shaped against."""

    C: float = 1.0
    epsilon: float = 0.5
    profile: str = "table"
    k: int = 1


class TabulatedRule:
    """Amplitude rule backed by a table ``{j: {n: amplitude}}``."""

    def __init__(self, table: Mapping[int, Mapping[int, complex]]):
        self.table = {int(j): {int(n): complex(c) for n, c in row.items()} for j, row in table.items()}

    def __call__(self, j: int, n: int) -> complex:
        return self.table.get(j, {}).get(n, 0j)

    def max_abs_n(self) -> int:
        return max((abs(n) for row in self.table.values() for n in row), default=0)

    def __eq__(self, other):
        return isinstance(other, TabulatedRule) and self.table == other.table


@dataclass(frozen=True)
class SeriesGenerator:
    """Block-indexed amplitude rule ``(j, n_j) -> amplitude`` over ``omega``.

    Block ``j`` contributes the frequencies ``n_j / L_j`` with ``L_j = j!/omega``.
    """

    omega: float
    rule: Callable[[int, int], complex]
    envelope: Envelope = field(default_factory=Envelope)
    max_block: int | None = None

    def __post_init__(self):
        if self.omega == 0 or not math.isfinite(self.omega):
            raise ValueError("omega must be finite and nonzero")

    def blocks(self) -> list[int]:
        if isinstance(self.rule, TabulatedRule):
            return sorted(j for j, row in self.rule.table.items() if any(c != 0 for c in row.values()))
        return list(range(1, (self.max_block or 0) + 1))

    def to_dict(self) -> dict:
        if not isinstance(self.rule, TabulatedRule):
            raise TypeError("only tabulated generators can be serialized")
        return {
            "omega": self.omega,
            "profile": self.envelope.profile,
            "C": self.envelope.C,
            "epsilon": self.envelope.epsilon,
            "k": self.envelope.k,
            "blocks": {
                str(j): [{"n": n, "re": c.real, "im": c.imag} for n, c in sorted(row.items())]
                for j, row in sorted(self.rule.table.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeriesGenerator":
        table = {int(j): {int(t["n"]): complex(t["re"], t["im"]) for t in rows} for j, rows in d["blocks"].items()}
        env = Envelope(C=d.get("C", 1.0), epsilon=d.get("epsilon", 0.5), profile=d.get("profile", "table"), k=d.get("k", 1))
        return cls(d["omega"], TabulatedRule(table), env)


def truncate(gen: SeriesGenerator, J: int, per_block_modes: int) -> LimitPeriodicSeries:
    """Blocks ``1..J`` restricted to ``|n_j| <= per_block_modes``."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if per_block_modes < 1:
        raise ValueError("per_block_modes must be >= 1")
    terms: dict[Fraction, complex] = {}
    for j in range(1, J + 1):
        jf = math.factorial(j)
        for n in range(-per_block_modes, per_block_modes + 1):
            if not admissible(j, n):
                continue
            c = complex(gen.rule(j, n))
            if not (math.isfinite(c.real) and math.isfinite(c.imag)):
                raise ValueError(f"rule gave non-finite amplitude at block {j}, n={n}")
            if c == 0:
                continue
            r = Fraction(n, jf)
            # admissible() makes blocks disjoint
            assert r not in terms, (j, n)
            terms[r] = c
    return LimitPeriodicSeries(gen.omega, terms)


def block_decomposition(series: LimitPeriodicSeries) -> dict[int, LimitPeriodicSeries]:
    """Split a series into its pieces ``F_j`` on A(j) \\ A(j-1)."""
    out: dict[int, list] = {}
    for r, c in series.terms:
        out.setdefault(block_of(r), []).append((r, c))
    return {j: LimitPeriodicSeries(series.omega, t) for j, t in sorted(out.items())}


def series_from_blocks(omega: float, blocks: Iterable[LimitPeriodicSeries]) -> LimitPeriodicSeries:
    total = LimitPeriodicSeries(omega)
    for b in blocks:
        total = total + b
    return total
