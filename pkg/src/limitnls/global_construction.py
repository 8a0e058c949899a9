"""Periodized hierarchy of torus problems and the diagnostics run on it.

Level ``j`` carries the data ``f_j`` (terms of the truncated series that are
``L_j``-periodic). When the blocks above some ``j*`` are empty, ``f_j`` is
already ``L_{j*}``-periodic and the level is evolved on the smaller torus
``T_{j*}``; levels sharing ``j*`` share one trajectory.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .ap_series import LimitPeriodicSeries, SeriesGenerator, TabulatedRule, block_of, truncate
from .condition_checker import ConditionParams, check_LP3
from .nls_solver import FOCUSING, SolverConfig, Trajectory, evolve
from .periodization import (
    geometric_average,
    hierarchy_block,
    level_field,
    max_level_mode,
    period_Lj,
    periodize,
    sqrt2_proxies,
)
from .torus_field import SpectralField, extend, h1_norm, linf_norm, stepanov_norm, synthesize, undilate

MAX_PERIOD = 30.0
SNAPSHOT_INTERVAL = 0.01
THREADS_ENV = "LIMITNLS_THREADS"


def thread_cap(default: int | None = None) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return default or min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class ResolutionPolicy:
    """Mode count per torus: a power of two covering both physical resolution
    (``density`` modes per unit length) and ``headroom`` times the data band."""

    density: int = 64
    headroom: int = 4
    min_modes: int = 16
    max_modes: int = 1 << 15

    def modes_for(self, L: float, nmax: int) -> int:
        need = max(self.min_modes, math.ceil(self.density * L), self.headroom * (2 * nmax + 1))
        N = 1 << (need - 1).bit_length()
        if N > self.max_modes:
            raise ValueError(f"resolving mode {nmax} on period {L:g} needs {N} modes (> {self.max_modes})")
        return N


@dataclass
class Level:
    j: int
    L_j: float
    j_star: int
    period: float
    N: int
    data: SpectralField
    series: LimitPeriodicSeries
    trajectory: Trajectory | None = None


@dataclass
class HierarchyRun:
    generator: SeriesGenerator
    j_min: int
    j_max: int
    levels: dict[int, Level]
    T: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def finest(self) -> Level:
        return self.levels[self.j_max]

    def trajectory(self, j: int) -> Trajectory:
        tr = self.levels[j].trajectory
        if tr is None:
            raise ValueError(f"missing trajectory for level {j}")
        return tr


def _per_block_modes(gen: SeriesGenerator, per_block_modes: int | None) -> int:
    if per_block_modes is not None:
        return per_block_modes
    if isinstance(gen.rule, TabulatedRule):
        return max(1, gen.rule.max_abs_n())
    raise ValueError("per_block_modes is required for a non-tabulated rule")


def build_hierarchy(gen: SeriesGenerator, j_min: int, j_max: int,
                    policy: ResolutionPolicy | None = None, per_block_modes: int | None = None) -> HierarchyRun:
    if not 1 <= j_min <= j_max:
        raise ValueError("need 1 <= j_min <= j_max")
    if not gen.omega > 0:
        raise ValueError("hierarchy needs omega > 0")
    policy = policy or ResolutionPolicy()
    L_top = period_Lj(gen.omega, j_max)
    if L_top > MAX_PERIOD:
        raise ValueError(f"L_{j_max} = {L_top:g} exceeds the desk-scale limit {MAX_PERIOD:g}; raise omega")
    full = truncate(gen, j_max, _per_block_modes(gen, per_block_modes))
    levels = {}
    for j in range(j_min, j_max + 1):
        s = periodize(full, j).series_j
        j_star = max((block_of(r) for r in s.frequencies), default=1)
        period = period_Lj(gen.omega, j_star)
        N = policy.modes_for(period, max_level_mode(s, j_star))
        levels[j] = Level(j, period_Lj(gen.omega, j), j_star, period, N, level_field(s, j_star, N), s)
    return HierarchyRun(gen, j_min, j_max, levels)


def run_hierarchy(run: HierarchyRun, T: float, cfg: SolverConfig, threads: int | None = None) -> HierarchyRun:
    """Evolve every distinct level to ``T``; snapshots every 0.01 time units."""
    every = max(1, round(SNAPSHOT_INTERVAL / cfg.dt))
    cfg = replace(cfg, snapshot_every=every, N=None, M=None)
    distinct: dict[int, Level] = {}
    for lv in run.levels.values():
        distinct.setdefault(lv.j_star, lv)
    keys = sorted(distinct)
    with ThreadPoolExecutor(max_workers=threads or thread_cap()) as ex:
        results = list(ex.map(lambda js: evolve(distinct[js].data, T, cfg), keys))
    by_star = dict(zip(keys, results))
    for lv in run.levels.values():
        lv.trajectory = by_star[lv.j_star]
    run.T = T
    run.solver = cfg
    return run


# --- Cauchy differences -------------------------------------------------------------


def _on_common_torus(a: SpectralField, b: SpectralField) -> SpectralField:
    """``a - b`` with the coarser field extended onto the finer torus."""
    if a.lam > b.lam:
        a, b = b, a
        sgn = -1.0
    else:
        sgn = 1.0
    factor = round(b.lam / a.lam)
    if not math.isclose(factor * a.lam, b.lam, rel_tol=1e-12):
        raise ValueError("periods are not nested")
    d = extend(a, factor) - b
    return d if sgn > 0 else d.scaled(-1.0)


@dataclass
class ConvergenceReport:
    T: float
    times: list[float]
    rows: list[dict]
    monotone: bool
    envelope: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"T": self.T, "times": self.times, "pairs": self.rows, "monotone": self.monotone,
                "envelope": self.envelope, **self.extras}


def cauchy_experiment(run: HierarchyRun, T: float, epsilon: float | None = None) -> ConvergenceReport:
    """Distances ``max_{t<=T} ||u_j(t) - u_{j+1}(t)||`` in L-infinity and S^{1,2}.

    The envelope fit solves, per pair with a positive distance, for the growth
    constant ``c`` in ``log d = c T L^{2k} + 1 - L^{2k+eps} + log L`` with
    ``L = L_{j+1}``; the reported ``c`` is their mean.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    k = run.solver.k
    eps = run.generator.envelope.epsilon if epsilon is None else epsilon
    a = 2 * k + eps
    ref = run.trajectory(run.j_min)
    times = [t for t in ref.times if t <= T + 1e-9]
    rows = []
    for j in range(run.j_min, run.j_max):
        A, B = run.levels[j], run.levels[j + 1]
        ta, tb = run.trajectory(j), run.trajectory(j + 1)
        dl, ds = [], []
        for i, t in enumerate(times):
            if abs(ta.times[i] - t) > 1e-9 or abs(tb.times[i] - t) > 1e-9:
                raise ValueError("trajectories do not share snapshot times")
            if ta is tb:
                dl.append(0.0)
                ds.append(0.0)
                continue
            diff = _on_common_torus(ta.snapshots[i], tb.snapshots[i])
            dl.append(linf_norm(diff))
            ds.append(stepanov_norm(diff))
        rows.append({"j": j, "L_next": B.L_j, "d_linf": max(dl), "d_stepanov": max(ds),
                     "d_linf_t": dl, "d_stepanov_t": ds, "torus": [A.period, B.period]})
    dL = [r["d_linf"] for r in rows]
    dS = [r["d_stepanov"] for r in rows]
    monotone = all(np.isfinite(dL)) and all(np.isfinite(dS)) and all(
        x > y for seq in (dL, dS) for x, y in zip(seq, seq[1:]))
    cs = []
    for r in rows:
        if r["d_stepanov"] > 0 and T > 0:
            L = r["L_next"]
            c = (math.log(r["d_stepanov"]) - (1.0 - L**a + math.log(L))) / (T * L ** (2 * k))
            r["c_fit"] = c
            cs.append(c)
        else:
            r["c_fit"] = None
    env = {"exponent": a, "c": float(np.mean(cs)) if cs else None, "points": len(cs)}
    gap = rows[-1]["d_stepanov"] if rows else 0.0
    return ConvergenceReport(T, times, rows, bool(monotone), env, {"cauchy_gap": gap})


# --- a priori bounds -----------------------------------------------------------------


def _bound_power(run: HierarchyRun) -> float:
    k = run.solver.k
    return 3.0 if run.solver.sign == FOCUSING else 1.0 + 1.0 / k


def apriori_bound_check(run: HierarchyRun, T: float | None = None) -> dict:
    """Rescaled H^1 norms against ``C * L_{j+1}^{p}`` (``p = 1 + 1/k``; 3 when focusing).

    Fields on ``T_j`` are extended to ``T_{j+1}`` and undilated by ``L_{j+1}``
    onto the unit torus; rescaled time is ``t / L_{j+1}^2``. ``C`` is fitted
    once from the data norms; ``fitted_C`` uses the whole trajectory and
    ``max_ratio = fitted_C / C``.
    """
    k = run.solver.k
    p = _bound_power(run)
    T = run.T if T is None else T
    rows = []
    for j in range(run.j_min, run.j_max):
        lo, hi = run.levels[j], run.levels[j + 1]
        L = hi.L_j
        if L < 1:
            rows.append({"j": j, "L_next": L, "skipped": "L_{j+1} < 1"})
            continue

        def unit(F: SpectralField) -> SpectralField:
            return undilate(extend(F, round(L / F.lam)), L, k)

        g_lo = h1_norm(unit(lo.data))
        g_hi = h1_norm(unit(hi.data))
        tr = run.trajectory(j)
        sup_v = max(h1_norm(unit(F)) for t, F in zip(tr.times, tr.snapshots) if t <= T + 1e-9)
        rows.append({"j": j, "L_next": L, "g_j": g_lo, "g_next": g_hi, "sup_v": sup_v, "scale": L**p})
    live = [r for r in rows if "skipped" not in r]
    if not live:
        return {"power": p, "C": None, "fitted_C": None, "max_ratio": None, "rows": rows}
    C = max(max(r["g_j"], r["g_next"]) / r["scale"] for r in live)
    fitted = max(max(r["g_j"], r["g_next"], r["sup_v"]) / r["scale"] for r in live)
    for r in live:
        r["ratio"] = r["sup_v"] / (C * r["scale"]) if C > 0 else (0.0 if r["sup_v"] == 0 else math.inf)
        r["margin"] = (C * r["scale"] / r["sup_v"]) if r["sup_v"] > 0 else math.inf
    ratio = fitted / C if C > 0 else (0.0 if fitted == 0 else math.inf)
    return {"power": p, "C": C, "fitted_C": fitted, "max_ratio": ratio, "rows": rows}


# --- leakage and A_omega --------------------------------------------------------------


def averaged_field(F: SpectralField, omega: float, j_star: int, rho: Fraction, n: int) -> SpectralField:
    """``A_{n,L}`` with ``L = rho / omega`` applied to a field on ``T_{j*}``."""
    jf = math.factorial(j_star)
    m = F.modes()
    mult = np.array([geometric_average(Fraction(int(mi)) * rho / jf, n) for mi in m])
    return SpectralField(F.lam, F.coeffs * mult)


def projected_field(F: SpectralField, j_star: int, rho: Fraction) -> SpectralField:
    jf = math.factorial(j_star)
    keep = np.array([(Fraction(int(mi)) * rho / jf).denominator == 1 for mi in F.modes()])
    return SpectralField(F.lam, np.where(keep, F.coeffs, 0))


def _sup(F: SpectralField) -> float:
    return float(np.max(np.abs(synthesize(F, 4 * F.N).samples)))


def leakage_check(run: HierarchyRun, t: float, proxies: Sequence[Fraction] | None = None,
                  ns: Sequence[int] = (64, 128, 256, 512, 1024)) -> dict:
    """Residual ``sup |A_{n,L} u(t) - u^{(L)}(t)|`` at incommensurate proxy periods.

    ``u`` is the finest level. Proxies are exact ratios ``rho`` (``L = rho/omega``).
    The projection removes the frequencies that do survive averaging, chiefly
    the mean. For ``L = L_j`` the table also checks that averaging leaves
    every coarser level unchanged.
    """
    proxies = list(sqrt2_proxies()) if proxies is None else [Fraction(p) for p in proxies]
    top = run.finest
    u = run.trajectory(run.j_max).at(t)
    rows = []
    for rho in proxies:
        P = projected_field(u, top.j_star, rho)
        vals = [_sup(averaged_field(u, run.generator.omega, top.j_star, rho, n) - P) for n in ns]
        mono = all(b < a for a, b in zip(vals, vals[1:]))
        slope = float(np.polyfit(np.log(ns), np.log(np.maximum(vals, 1e-300)), 1)[0]) if len(ns) > 1 else None
        rows.append({"rho_num": rho.numerator, "rho_den": rho.denominator, "L": float(rho) / run.generator.omega,
                     "n": list(ns), "sup": vals, "monotone": mono, "slope": slope,
                     "projection_sup": _sup(P)})
    comm = []
    for j in range(run.j_min, run.j_max + 1):
        rho = Fraction(math.factorial(j))
        for jp in range(run.j_min, j + 1):
            lv = run.levels[jp]
            F = run.trajectory(jp).at(t)
            err = _sup(averaged_field(F, run.generator.omega, lv.j_star, rho, ns[0]) - F)
            comm.append({"j": j, "level": jp, "residual": err})
    return {"t": t, "proxies": rows, "monotone": all(r["monotone"] for r in rows), "commensurate": comm,
            "commensurate_max": max((c["residual"] for c in comm), default=0.0)}


def block_sums(F: SpectralField, j_star: int, j_max: int) -> list[float]:
    blk = hierarchy_block(F.modes(), j_star)
    out = []
    for j in range(1, j_max + 1):
        out.append(math.fsum(np.abs(F.coeffs[blk == j]).tolist()))
    return out


def a_omega_trace(run: HierarchyRun, t: float, j_from: int | None = None) -> dict:
    """Per-block l1 sums of ``u_{j_max}(t)`` and their decay from ``j_from`` on."""
    j_from = run.j_min if j_from is None else j_from
    top = run.finest
    now = block_sums(run.trajectory(run.j_max).at(t), top.j_star, run.j_max)
    data = block_sums(top.data, top.j_star, run.j_max)
    tail = now[j_from - 1:]
    decays = all(b < a or (a == 0 and b == 0) for a, b in zip(tail, tail[1:]))
    ratios = []
    for j in range(j_from, run.j_max):
        r_now = now[j] / now[j - 1] if now[j - 1] > 0 else None
        r_data = data[j] / data[j - 1] if data[j - 1] > 0 else None
        ratios.append({"j": j, "ratio_t": r_now, "ratio_data": r_data})
    return {"t": t, "blocks": list(range(1, run.j_max + 1)), "sums": now, "data_sums": data,
            "total": math.fsum(now), "decays": decays, "ratios": ratios, "j_from": j_from}


# --- continuity -----------------------------------------------------------------------


def unit_direction(run: HierarchyRun, j: int | None = None) -> SpectralField:
    """Single mode ``n = 1`` of block ``j`` on the finest torus, unit in S^{1,2}."""
    j = run.j_min if j is None else j
    top = run.finest
    if j > top.j_star:
        raise ValueError(f"block {j} is not resolved on the finest torus T_{top.j_star}")
    c = np.zeros(top.N, dtype=complex)
    m = math.factorial(top.j_star) // math.factorial(j)
    c[m % top.N] = 1.0
    F = SpectralField(top.period, c)
    return F.scaled(1.0 / stepanov_norm(F))


def continuity_experiment(run: HierarchyRun, delta0: float, t: float, T: float, cfg: SolverConfig,
                          params: ConditionParams | None = None, j: int | None = None) -> dict:
    """Response ``||u(t) - u~(t)||_{S^{1,2}}`` for ``delta0, delta0/2, delta0/4``.

    ``u`` starts from the finest data, ``u~`` from data moved by ``delta``
    along :func:`unit_direction`. Both data sets must pass LP3 over
    ``j_min..j_max-1`` first.
    """
    j = run.j_min if j is None else j
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")
    every = max(1, round(SNAPSHOT_INTERVAL / cfg.dt))
    cfg = replace(cfg, snapshot_every=every, N=None, M=None)
    top = run.finest
    e = unit_direction(run, j)
    params = params or ConditionParams(k=cfg.k, epsilon=run.generator.envelope.epsilon,
                                       mode="focusing_k1" if cfg.sign == FOCUSING else "defocusing_2k")
    jr = list(range(run.j_min, max(run.j_min, run.j_max - 1) + 1))
    m = math.factorial(top.j_star) // math.factorial(j)
    deltas = [delta0, delta0 / 2, delta0 / 4]
    base_ok = check_LP3(run.generator, jr, params)["pass"]
    if not base_ok:
        raise ValueError("unperturbed data fails the LP3 check")
    amp = e.coeff(m)
    for d in deltas:
        table = {jj: dict(row) for jj, row in run.generator.rule.table.items()}
        table.setdefault(j, {})
        table[j][1] = table[j].get(1, 0j) + d * amp
        pert = SeriesGenerator(run.generator.omega, TabulatedRule(table), run.generator.envelope)
        if not check_LP3(pert, jr, params)["pass"]:
            raise ValueError(f"perturbed data (delta={d:g}) fails the LP3 check")
    u = evolve(top.data, T, cfg).at(t)
    rows = []
    for d in deltas:
        ut = evolve(top.data + e.scaled(d), T, cfg).at(t)
        resp = stepanov_norm(ut - u) if d else 0.0
        rows.append({"delta": d, "response": resp, "ratio": resp / d if d else None})
    resp = [r["response"] for r in rows]
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    shrinks = all(b < a for a, b in zip(resp, resp[1:]))
    spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else math.inf
    return {"t": t, "T": T, "rows": rows, "shrinks": shrinks, "ratio_spread": spread,
            "bounded": bool(math.isfinite(spread) and all(math.isfinite(x) for x in ratios)),
            "direction_block": j}
