"""Split-step and Duhamel-Picard integration of ``i u_t + u_xx = sign |u|^{2k} u``.

The Strang state lives on the padded ``M``-point grid with all ``M`` modes
kept. The nonlinear substep is an exact phase rotation and the linear substep
an exact Fourier multiplier, so the discrete mass is conserved to roundoff.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .torus_field import (
    SpectralField,
    h1_norm,
    hamiltonian,
    linf_norm,
    mass,
    read_snapshot,
    resize,
    write_snapshot,
)

DEFOCUSING = 1
FOCUSING = -1

_SIGNS = {"defocusing": DEFOCUSING, "focusing": FOCUSING, 1: DEFOCUSING, -1: FOCUSING}


class SolverError(RuntimeError):
    """Evolution aborted; ``step`` is the first offending step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class PicardDivergence(SolverError):
    pass


def parse_sign(sign) -> int:
    try:
        return _SIGNS[sign]
    except (KeyError, TypeError):
        raise ValueError(f"unknown sign {sign!r}; use 'defocusing' or 'focusing'") from None


@dataclass(frozen=True)
class SolverConfig:
    k: int = 1
    sign: int = DEFOCUSING
    dt: float = 1e-3
    N: int | None = None
    M: int | None = None
    scheme: str = "strang"
    snapshot_every: int = 10
    c0: float = 0.1
    picard_nodes: int = 32
    energy_guard: float = 0.1
    linf_guard: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "sign", parse_sign(self.sign))
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("strang", "picard"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sign == FOCUSING and self.k != 1:
            raise ValueError("focusing nonlinearity is only supported for k = 1")
        if self.N is not None and self.M is not None and self.M < (self.k + 1) * self.N:
            raise ValueError(f"M={self.M} violates M >= (k+1)N = {(self.k + 1) * self.N}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    def grid_size(self, N: int) -> int:
        if self.N is not None and N != self.N:
            raise ValueError(f"field has {N} modes, config expects {self.N}")
        M = (self.k + 1) * N if self.M is None else self.M
        if M < (self.k + 1) * N:
            raise ValueError(f"M={M} violates M >= (k+1)N = {(self.k + 1) * N}")
        return M


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    snapshots: list[SpectralField] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    k: int = 1
    sign: int = DEFOCUSING

    def append(self, t: float, F: SpectralField, diag: dict):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        if self.snapshots and (self.snapshots[0].lam != F.lam or self.snapshots[0].N != F.N):
            raise ValueError("snapshots must share period and size")
        self.times.append(t)
        self.snapshots.append(F)
        self.diagnostics.append(diag)

    def at(self, t: float, tol: float = 1e-9) -> SpectralField:
        for ti, F in zip(self.times, self.snapshots):
            if abs(ti - t) <= tol:
                return F
        raise KeyError(f"no snapshot at t={t}")

    @property
    def final(self) -> SpectralField:
        return self.snapshots[-1]


def diagnostics(F: SpectralField, k: int, sign: int) -> dict:
    return {
        "mass": mass(F),
        "hamiltonian": hamiltonian(F, k, sign),
        "h1": h1_norm(F),
        "linf": linf_norm(F),
    }


def wavenumbers(lam: float, M: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(M, lam / M)


def linear_propagate(F: SpectralField, t: float) -> SpectralField:
    """Free Schrodinger flow: mode n times ``exp(-i (2 pi n/lam)^2 t)``."""
    kap = 2 * np.pi * F.freqs()
    return SpectralField(F.lam, F.coeffs * np.exp(-1j * kap**2 * t))


def _nonlinear_phase(u: np.ndarray, k: int, sign: int, tau: float) -> np.ndarray:
    a2 = u.real**2 + u.imag**2
    return u * np.exp(-1j * sign * tau * a2**k)


def evolve(f0: SpectralField, T: float, cfg: SolverConfig) -> Trajectory:
    """Strang split-step from ``f0`` to time ``T`` (either sign).

    Snapshots (with diagnostics) are taken every ``cfg.snapshot_every`` steps
    and at ``T``; times are ``i * dt_eff`` with ``dt_eff = T / steps``, stored
    in increasing order also when ``T < 0``.
    """
    if not math.isfinite(T):
        raise ValueError("T must be finite")
    if cfg.scheme != "strang":
        raise ValueError("evolve runs the strang scheme; use duhamel_picard for picard")
    M = cfg.grid_size(f0.N)
    k, sign = cfg.k, cfg.sign
    steps = max(0, int(math.ceil(abs(T) / cfg.dt - 1e-9)))
    dt = T / steps if steps else 0.0
    lam = f0.lam

    u = np.fft.ifft(resize(f0, M).coeffs) * M
    lin = np.exp(-1j * wavenumbers(lam, M) ** 2 * dt)

    F = resize(f0, M)
    d0 = diagnostics(F, k, sign)
    entries = [(0.0, F, d0)]
    h_scale = abs(d0["hamiltonian"]) + 1.0
    half = 0.5 * dt
    for i in range(1, steps + 1):
        u = _nonlinear_phase(u, k, sign, half)
        u = np.fft.ifft(lin * np.fft.fft(u))
        u = _nonlinear_phase(u, k, sign, half)
        if i % cfg.snapshot_every and i != steps:
            continue
        if not np.all(np.isfinite(u)):
            raise SolverError("non-finite state", step=_first_bad_step(f0, cfg, dt, i))
        F = SpectralField(lam, np.fft.fft(u) / M)
        d = diagnostics(F, k, sign)
        if d["linf"] > cfg.linf_guard:
            raise SolverError(f"L-infinity norm {d['linf']:.3g} exceeds guard (possible blow-up)", step=i)
        drift = abs(d["hamiltonian"] - d0["hamiltonian"]) / h_scale
        if drift > cfg.energy_guard:
            raise SolverError(f"energy drift {drift:.3g} exceeds {cfg.energy_guard}; reduce dt", step=i)
        entries.append((i * dt, F, d))
    # backward runs are stored in increasing time as well
    traj = Trajectory(k=k, sign=sign)
    for t, F, d in (reversed(entries) if T < 0 else entries):
        traj.append(t, F, d)
    return traj


def _first_bad_step(f0: SpectralField, cfg: SolverConfig, dt: float, upto: int) -> int:
    """Re-run to find the first step with a non-finite state."""
    M = cfg.grid_size(f0.N)
    u = np.fft.ifft(resize(f0, M).coeffs) * M
    lin = np.exp(-1j * wavenumbers(f0.lam, M) ** 2 * dt)
    with np.errstate(all="ignore"):
        for i in range(1, upto + 1):
            u = _nonlinear_phase(u, cfg.k, cfg.sign, 0.5 * dt)
            u = np.fft.ifft(lin * np.fft.fft(u))
            u = _nonlinear_phase(u, cfg.k, cfg.sign, 0.5 * dt)
            if not np.all(np.isfinite(u)):
                return i
    return upto


# --- Duhamel / Picard -------------------------------------------------------------


@dataclass
class PicardResult:
    field: SpectralField
    distances: list[float]
    converged: bool


def _nonlinearity(c: np.ndarray, k: int, sign: int) -> np.ndarray:
    """Coefficients of ``sign |v|^{2k} v`` on the same M modes."""
    M = c.size
    u = np.fft.ifft(c) * M
    a2 = u.real**2 + u.imag**2
    return sign * np.fft.fft(a2**k * u) / M


def duhamel_picard(g: SpectralField, T: float, cfg: SolverConfig, iters: int = 50,
                   tol: float = 1e-14, windows: int | None = None) -> PicardResult:
    """Fixed-point iteration of the Duhamel map on ``windows`` equal windows.

    In each window the time integral uses a composite trapezoid rule on
    ``cfg.picard_nodes`` nodes in the interaction picture. Iteration stops
    when the H^1 distance between successive iterates (max over nodes) drops
    below ``tol`` times the data norm. Distances growing on three consecutive
    iterations raise :class:`PicardDivergence`. By default the number of
    windows is ``ceil(T / local_time_estimate(g))``.
    """
    if windows is None:
        windows = max(1, int(math.ceil(abs(T) / local_time_estimate(g, cfg) - 1e-12)))
    if windows < 1:
        raise ValueError("windows must be >= 1")
    M = cfg.grid_size(g.N)
    k, sign = cfg.k, cfg.sign
    lam = g.lam
    kap2 = wavenumbers(lam, M) ** 2
    w_h1 = lam * (1.0 + (np.fft.fftfreq(M, lam / M)) ** 2)
    c = resize(g, M).coeffs.copy()
    all_dist: list[float] = []
    converged = True
    Tw = T / windows
    K = cfg.picard_nodes
    t = np.linspace(0.0, Tw, K)
    h = Tw / (K - 1)
    phase_out = np.exp(-1j * np.outer(t, kap2))  # e^{-i kap^2 t}
    phase_in = np.conj(phase_out)
    for _ in range(windows):
        base = c[None, :] * phase_out
        v = base.copy()
        dists: list[float] = []
        scale = math.sqrt(float(np.sum(w_h1 * np.abs(c) ** 2))) or 1.0
        ok = False
        for _ in range(iters):
            Nv = np.array([_nonlinearity(v[i], k, sign) for i in range(K)])
            integrand = phase_in * Nv
            cum = np.zeros_like(integrand)
            cum[1:] = np.cumsum(0.5 * h * (integrand[1:] + integrand[:-1]), axis=0)
            v_new = base - 1j * phase_out * cum
            diff = v_new - v
            d = math.sqrt(float(np.max(np.sum(w_h1[None, :] * np.abs(diff) ** 2, axis=1))))
            dists.append(d)
            v = v_new
            if d <= tol * scale:
                ok = True
                break
            if len(dists) >= 4 and dists[-1] > dists[-2] > dists[-3] > dists[-4]:
                raise PicardDivergence(f"Picard distances grew three times in a row (window {Tw:.3g})", step=len(dists))
        converged = converged and ok
        all_dist.extend(dists)
        c = v[-1]
    return PicardResult(SpectralField(lam, c), all_dist, converged)


def local_time_estimate(g: SpectralField, cfg: SolverConfig) -> float:
    """``c0 * ||g||_{H^1}^{-2k}``; infinite for the zero field."""
    n = h1_norm(g)
    if n == 0:
        return math.inf
    return cfg.c0 * n ** (-2 * cfg.k)


def contraction_factor(g: SpectralField, T: float, cfg: SolverConfig, iters: int = 12) -> float:
    """Largest ratio of successive Picard distances on a single window of length T.

    Ratios are taken only while the distance is well above round-off. A
    diverging iteration reports ``inf``.
    """
    try:
        res = duhamel_picard(g, T, cfg, iters=iters, tol=1e-13, windows=1)
    except PicardDivergence:
        return math.inf
    d = [x for x in res.distances if x > 1e-11 * (h1_norm(g) or 1.0)]
    if len(d) < 2:
        return 0.0
    return max(b / a for a, b in zip(d, d[1:]))


def measure_contraction_window(g: SpectralField, cfg: SolverConfig, T0: float | None = None,
                               target: float = 0.5, refine: int = 10) -> float:
    """Largest single-window T whose contraction factor stays <= ``target``.

    Found by doubling/halving from ``T0`` (default: the local time estimate)
    and then bisecting in log T.
    """
    T0 = local_time_estimate(g, cfg) if T0 is None else T0
    if not math.isfinite(T0):
        return math.inf

    def works(T):
        return contraction_factor(g, T, cfg) <= target

    lo = hi = T0
    if works(T0):
        while works(hi * 2) and hi < 1e3 * T0:
            hi *= 2
        lo, hi = hi, hi * 2
    else:
        while not works(lo / 2) and lo > 1e-6 * T0:
            lo /= 2
        lo, hi = lo / 2, lo
    for _ in range(refine):
        mid = math.sqrt(lo * hi)
        if works(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- persistence ------------------------------------------------------------------

_FOOTER_MAGIC = b"LIDX"


def save_trajectory(path_or_fh, traj: Trajectory) -> None:
    """Snapshots back to back, then ``u64 offsets[count], u64 count, b'LIDX'``."""
    buf = io.BytesIO()
    offsets = []
    for t, F in zip(traj.times, traj.snapshots):
        offsets.append(buf.tell())
        write_snapshot(buf, F, traj.k, traj.sign, t)
    buf.write(struct.pack(f"<{len(offsets)}Q", *offsets))
    buf.write(struct.pack("<Q", len(offsets)))
    buf.write(_FOOTER_MAGIC)
    data = buf.getvalue()
    if isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__"):
        with open(path_or_fh, "wb") as fh:
            fh.write(data)
    else:
        path_or_fh.write(data)


def load_trajectory(path_or_fh) -> Trajectory:
    if isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__"):
        with open(path_or_fh, "rb") as fh:
            data = fh.read()
    else:
        data = path_or_fh.read()
    if data[-4:] != _FOOTER_MAGIC:
        raise ValueError("missing trajectory index footer")
    (count,) = struct.unpack("<Q", data[-12:-4])
    offsets = struct.unpack(f"<{count}Q", data[-12 - 8 * count:-12])
    traj = None
    for off in offsets:
        F, k, sign, t = read_snapshot(io.BytesIO(data[off:]))
        if traj is None:
            traj = Trajectory(k=k, sign=sign)
        traj.append(t, F, diagnostics(F, k, sign))
    return traj if traj is not None else Trajectory()


def diagnostics_csv(traj: Trajectory) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "mass", "hamiltonian", "h1", "linf"])
    for t, d in zip(traj.times, traj.diagnostics):
        w.writerow([repr(t), repr(d["mass"]), repr(d["hamiltonian"]), repr(d["h1"]), repr(d["linf"])])
    return out.getvalue()


def sample_times(traj: Trajectory, times: Sequence[float]) -> list[SpectralField]:
    return [traj.at(t) for t in times]
