"""Fields on the scaled torus T_lam = R / (lam Z).

Coefficients follow ``F(x) = sum_n c_n exp(2 pi i n x / lam)`` with
``c_n = (1/lam) * int F exp(-2 pi i n x / lam)``. Arrays are stored in numpy
FFT order; ``modes()`` gives the matching integer indices in [-N/2, N/2).

Sobolev weights use the frequency ``n/lam`` without a 2 pi factor, and the
Stepanov norm uses the matching derivative ``D = (2 pi)^-1 d/dx`` so the two
families of norms compare directly. Physical quantities (the Hamiltonian)
use the true derivative.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable

import numpy as np
from scipy import integrate, optimize

SNAPSHOT_MAGIC = b"LNLS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIdIIbd")

# Window starts per period for the Stepanov sup (before local refinement).
STEPANOV_STARTS = 256


@dataclass(frozen=True, eq=False)
class SpectralField:
    lam: float
    coeffs: np.ndarray

    def __post_init__(self):
        lam = float(self.lam)
        if not lam > 0 or not math.isfinite(lam):
            raise ValueError("period must be positive")
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size < 2 or c.size % 2:
            raise ValueError("coefficient array must be 1-d with an even length")
        c.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.size

    def modes(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(np.int64)

    def freqs(self) -> np.ndarray:
        return self.modes() / self.lam

    def coeff(self, n: int) -> complex:
        if not -self.N // 2 <= n < self.N // 2:
            return 0j
        return complex(self.coeffs[n % self.N])

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        a, b = _common(self, other)
        return SpectralField(self.lam, a.coeffs - b.coeffs)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        a, b = _common(self, other)
        return SpectralField(self.lam, a.coeffs + b.coeffs)

    def scaled(self, a: complex) -> "SpectralField":
        return SpectralField(self.lam, a * self.coeffs)


@dataclass(frozen=True, eq=False)
class GridField:
    lam: float
    samples: np.ndarray

    @property
    def M(self) -> int:
        return len(self.samples)

    def x(self) -> np.ndarray:
        return np.arange(self.M) * (self.lam / self.M)


def _common(a: SpectralField, b: SpectralField) -> tuple[SpectralField, SpectralField]:
    if not math.isclose(a.lam, b.lam, rel_tol=1e-13):
        raise ValueError(f"fields live on different tori ({a.lam} vs {b.lam})")
    N = max(a.N, b.N)
    return resize(a, N), resize(b, N)


def resize(F: SpectralField, N: int) -> SpectralField:
    """Zero-pad or truncate to ``N`` modes, keeping mode indices."""
    if N == F.N:
        return F
    out = np.zeros(N, dtype=complex)
    n = F.modes()
    keep = (n >= -(N // 2)) & (n < N // 2)
    out[n[keep] % N] = F.coeffs[keep]
    return SpectralField(F.lam, out)


def extend(F: SpectralField, factor: int) -> SpectralField:
    """The same function viewed on ``T_{factor * lam}`` (mode n -> n * factor)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return F
    N = F.N * factor
    out = np.zeros(N, dtype=complex)
    out[(F.modes() * factor) % N] = F.coeffs
    return SpectralField(F.lam * factor, out)


def analyze(g: GridField) -> SpectralField:
    samples = np.asarray(g.samples, dtype=complex)
    return SpectralField(g.lam, np.fft.fft(samples) / samples.size)


def synthesize(F: SpectralField, M: int | None = None) -> GridField:
    M = F.N if M is None else int(M)
    if M < F.N:
        raise ValueError(f"grid of {M} points cannot hold {F.N} modes")
    c = resize(F, M).coeffs
    return GridField(F.lam, np.fft.ifft(c) * M)


def field_from_function(f: Callable, lam: float, N: int) -> SpectralField:
    x = np.arange(N) * (lam / N)
    return analyze(GridField(lam, np.asarray(f(x), dtype=complex)))


def field_from_series(series, lam: float, N: int) -> SpectralField:
    """Place an exactly ``lam``-periodic series onto ``N`` torus modes.

    Every frequency ``r * omega`` must equal ``n / lam`` for an integer ``n``
    inside the band; otherwise ``ValueError``.
    """
    out = np.zeros(N, dtype=complex)
    for r, c in series.terms:
        x = float(r) * series.omega * lam
        n = round(x)
        if abs(x - n) > 1e-9 * max(1.0, abs(x)):
            raise ValueError(f"frequency {r}*omega is not {lam}-periodic")
        if not -(N // 2) <= n < N // 2:
            raise ValueError(f"mode {n} outside the {N}-mode band")
        out[n % N] += c
    return SpectralField(lam, out)


# --- norms --------------------------------------------------------------------


def sobolev_norm(F: SpectralField, s: float = 0.0, homogeneous: bool = False) -> float:
    xi = F.freqs()
    if homogeneous:
        w = np.abs(xi) ** (2 * s) if s > 0 else np.ones_like(xi)
        if s > 0:
            w[xi == 0] = 0.0
    else:
        w = (1.0 + xi**2) ** s
    return math.sqrt(F.lam) * math.sqrt(float(np.sum(w * np.abs(F.coeffs) ** 2)))


def l2_norm(F: SpectralField) -> float:
    return sobolev_norm(F, 0.0)


def h1_norm(F: SpectralField) -> float:
    return sobolev_norm(F, 1.0)


def linf_norm(F: SpectralField, oversample: int = 2) -> float:
    return float(np.max(np.abs(synthesize(F, oversample * F.N).samples)))


def normalized_derivative(F: SpectralField, s: int = 1) -> SpectralField:
    """``D^s F`` with ``D = (2 pi)^-1 d/dx``."""
    return SpectralField(F.lam, (1j * F.freqs()) ** s * F.coeffs)


def _as_spectral(f, lam: float | None, N: int | None) -> SpectralField:
    if isinstance(f, SpectralField):
        return f
    if isinstance(f, GridField):
        return analyze(f)
    if callable(f):
        if lam is None or N is None:
            raise ValueError("a callable needs its period lam and a sample count N")
        return field_from_function(f, lam, N)
    raise TypeError(f"cannot read a field from {type(f).__name__}")


def _window_integral_coeffs(g_hat: np.ndarray, lam: float) -> np.ndarray:
    """Coefficients of ``W(y) = int_y^{y+1} g`` given the coefficients of ``g``."""
    M = g_hat.size
    m = np.fft.fftfreq(M, 1.0 / M).round()
    a = 2j * np.pi * m / lam
    factor = np.ones(M, dtype=complex)
    nz = m != 0
    factor[nz] = np.expm1(a[nz]) / a[nz]
    return g_hat * factor


def _trig_eval(c: np.ndarray, lam: float, y: float) -> float:
    m = np.fft.fftfreq(c.size, 1.0 / c.size).round()
    return float(np.real(np.sum(c * np.exp(2j * np.pi * m * y / lam))))


def _window_sup(w_hat: np.ndarray, lam: float, starts: int) -> float:
    """Max of the real ``lam``-periodic trig polynomial ``W``."""
    M = w_hat.size
    per_period = max(starts, M)
    padded = np.zeros(per_period, dtype=complex)
    m = np.fft.fftfreq(M, 1.0 / M).round().astype(np.int64)
    padded[m % per_period] = w_hat
    vals = np.real(np.fft.ifft(padded) * per_period)
    i = int(np.argmax(vals))
    best = float(vals[i])
    h = lam / per_period
    y0 = i * h
    res = optimize.minimize_scalar(
        lambda y: -_trig_eval(w_hat, lam, y), bounds=(y0 - h, y0 + h), method="bounded",
        options={"xatol": 1e-12 * max(1.0, lam)},
    )
    return max(best, -float(res.fun))


def stepanov_norm(f, s: int = 1, p: float = 2.0, lam: float | None = None, N: int | None = None,
                  starts: int = STEPANOV_STARTS) -> float:
    """``sup_y (int_y^{y+1} |f|^p + |D^s f|^p)^{1/p}`` for a periodic field.

    For ``s = 0`` the integrand is ``|f|^p`` alone. The window integral is
    evaluated exactly from the Fourier coefficients of the integrand; the
    sup is taken over a grid of window starts in one period and then refined
    locally. Periodicity makes one period of starts enough.
    """
    if p < 1:
        raise ValueError("Stepanov exponent p must be >= 1")
    if s not in (0, 1):
        raise ValueError("only s = 0 or s = 1 is supported")
    F = _as_spectral(f, lam, N)
    if not np.any(F.coeffs):
        return 0.0
    over = 2 if p == 2 else 8
    Mg = over * F.N
    u = synthesize(F, Mg).samples
    g = np.abs(u) ** p
    if s == 1:
        g = g + np.abs(synthesize(normalized_derivative(F), Mg).samples) ** p
    g_hat = np.fft.fft(g) / Mg
    w_hat = _window_integral_coeffs(g_hat, F.lam)
    sup = _window_sup(w_hat, F.lam, starts)
    return max(sup, 0.0) ** (1.0 / p)


def interval_norms(F: SpectralField, periods: int, p: float) -> tuple[float, float, float]:
    """(L^p, L^2, H^1) norms over ``periods`` whole periods, grid quadrature."""
    Mg = 8 * F.N
    u = np.abs(synthesize(F, Mg).samples)
    du = np.abs(synthesize(normalized_derivative(F), Mg).samples)
    h = F.lam / Mg
    l2 = math.sqrt(periods * h * float(np.sum(u**2)))
    h1 = math.sqrt(periods * h * float(np.sum(u**2 + du**2)))
    if math.isinf(p):
        lp = float(np.max(u))
    else:
        lp = (periods * h * float(np.sum(u**p))) ** (1.0 / p)
    return lp, l2, h1


# --- dilations ----------------------------------------------------------------


def dilate(F: SpectralField, lam: float, k: int) -> SpectralField:
    """``lam^{-1/k} F(x/lam)``: period multiplied by ``lam``, coefficients by ``lam^{-1/k}``."""
    if lam < 1:
        raise ValueError("dilation factor must be >= 1")
    return SpectralField(F.lam * lam, F.coeffs * lam ** (-1.0 / k))


def undilate(F: SpectralField, lam: float, k: int) -> SpectralField:
    """Inverse of :func:`dilate`."""
    if lam < 1:
        raise ValueError("dilation factor must be >= 1")
    return SpectralField(F.lam / lam, F.coeffs * lam ** (1.0 / k))


def scaling_norm_check(F: SpectralField, lam: float, s: float, k: int) -> tuple[float, float, float]:
    lhs = sobolev_norm(dilate(F, lam, k), s, homogeneous=True)
    rhs = lam ** (0.5 - s - 1.0 / k) * sobolev_norm(F, s, homogeneous=True)
    gap = abs(lhs - rhs) / rhs if rhs else abs(lhs)
    return lhs, rhs, gap


# --- conserved quantities -------------------------------------------------------


def mass(F: SpectralField) -> float:
    return F.lam * float(np.sum(np.abs(F.coeffs) ** 2))


def potential_integral(F: SpectralField, k: int, M: int | None = None) -> float:
    """``int |F|^{2k+2}`` on a grid that resolves the product exactly."""
    need = (k + 1) * F.N
    M = need if M is None else int(M)
    if M < need:
        raise ValueError(f"aliasing guard: grid {M} < (k+1)N = {need}")
    u = synthesize(F, M).samples
    return F.lam * float(np.mean(np.abs(u) ** (2 * k + 2)))


def hamiltonian(F: SpectralField, k: int, sign: int = 1, M: int | None = None) -> float:
    """``1/2 int |u_x|^2 + sign/(2k+2) int |u|^{2k+2}``; sign +1 defocusing."""
    kin = 0.5 * F.lam * float(np.sum((2 * np.pi * F.freqs()) ** 2 * np.abs(F.coeffs) ** 2))
    return kin + sign * potential_integral(F, k, M) / (2 * k + 2)


# --- embedding inequalities -------------------------------------------------------


def riemann_sum_constant(lam: float, s: float) -> float:
    """``((1/lam) sum_n <n/lam>^{-2s})^{1/2}`` over all integers n (s > 1/2)."""
    if s <= 0.5:
        raise ValueError("needs s > 1/2")
    K = int(max(2000, 200 * lam))
    n = np.arange(1, K + 1)
    head = 1.0 + 2.0 * float(np.sum((1.0 + (n / lam) ** 2) ** (-s)))
    tail, _ = integrate.quad(lambda x: (1.0 + (x / lam) ** 2) ** (-s), K + 0.5, np.inf)
    return math.sqrt((head + 2.0 * tail) / lam)


def embedding_checks(F: SpectralField, s: float, k: int = 1, p_values=(4.0, 6.0, math.inf)) -> dict:
    """Both sides of the torus embedding and interpolation inequalities.

    ``ratio`` entries are lhs/rhs with unit implicit constants; an empirical
    constant is the max ratio over a corpus.
    """
    if s <= 0.5:
        raise ValueError("embedding checks need s > 1/2")
    lam = F.lam
    linf = linf_norm(F, oversample=4)
    c0 = abs(F.coeff(0))
    hom = sobolev_norm(F, s, homogeneous=True)
    inh = sobolev_norm(F, s)
    l1 = float(np.sum(np.abs(F.coeffs)))
    out: dict = {}
    rhs1 = c0 + lam ** (s - 0.5) * hom
    out["sobolev1"] = {"lhs": linf, "rhs": rhs1, "ratio": linf / rhs1 if rhs1 else 0.0}
    rs = riemann_sum_constant(lam, s)
    out["sobolev2"] = {
        "lhs": linf, "l1": l1, "rhs": rs * inh, "riemann_constant": rs,
        "ratio": linf / (rs * inh) if inh else 0.0,
        "chain_ok": linf <= l1 * (1 + 1e-12) and l1 <= rs * inh * (1 + 1e-12),
    }
    # F read as a field on the unit torus, dilated by lam
    if lam >= 1:
        g = SpectralField(1.0, F.coeffs)
        g_lam = dilate(g, lam, k)
        lhs6 = linf_norm(g_lam, oversample=4)
        rhs6 = lam ** (-1.0 / k) * (abs(g.coeff(0)) + sobolev_norm(g, s, homogeneous=True))
        out["scaling6"] = {"lhs": lhs6, "rhs": rhs6, "ratio": lhs6 / rhs6 if rhs6 else 0.0}
    periods = max(1, int(math.ceil(1.0 / lam - 1e-12)))
    gag = {}
    for p in p_values:
        lp, l2, h1 = interval_norms(F, periods, p)
        rhs = l2 ** (0.5 + 1.0 / p) * h1 ** (0.5 - 1.0 / p) if h1 else 0.0
        gag[str(p)] = {"lhs": lp, "rhs": rhs, "ratio": lp / rhs if rhs else 0.0}
    out["gag1"] = {"interval_length": periods * lam, "by_p": gag}
    return out


# --- binary snapshots -------------------------------------------------------------


def write_snapshot(fh: BinaryIO, F: SpectralField, k: int, sign: int, time: float) -> int:
    """Write one snapshot; coefficients in ascending mode order. Returns bytes written."""
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, F.lam, F.N, k, sign, time)
    body = np.ascontiguousarray(np.fft.fftshift(F.coeffs), dtype="<c16").tobytes()
    fh.write(header)
    fh.write(body)
    return len(header) + len(body)


def read_snapshot(fh: BinaryIO) -> tuple[SpectralField, int, int, float]:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, lam, N, k, sign, time = _HEADER.unpack(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("bad snapshot magic")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = fh.read(16 * N)
    if len(body) != 16 * N:
        raise ValueError("truncated snapshot body")
    c = np.frombuffer(body, dtype="<c16")
    return SpectralField(lam, np.fft.ifftshift(c)), k, sign, time


def snapshot_bytes(F: SpectralField, k: int, sign: int, time: float) -> bytes:
    buf = io.BytesIO()
    write_snapshot(buf, F, k, sign, time)
    return buf.getvalue()
