"""Checks of the periodization-rate hypothesis and its block-wise variants.

All checks run over an explicit range of ``j`` (the finite stand-in for "all
sufficiently large j"), and compare in log space so that thresholds such as
``exp(-L_j^{2k+eps})`` never have to be formed when they underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np

from .ap_series import (
    Envelope,
    LimitPeriodicSeries,
    SeriesGenerator,
    TabulatedRule,
    block_decomposition,
    block_modes,
    truncate,
)
from .periodization import is_in_Aj, level_field, max_level_mode, period_Lj
from .torus_field import h1_norm, stepanov_norm

MODES = ("defocusing_2k", "focusing_k1")
RTOL = 1e-9


@dataclass(frozen=True)
class ConditionParams:
    k: int = 1
    epsilon: float = 0.5
    B: float = 1.0
    C: float = 1.0
    mode: str = "defocusing_2k"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "focusing_k1" and self.k != 1:
            raise ValueError("focusing mode is defined for k = 1 only")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.B > 0 and self.C > 0):
            raise ValueError("B and C must be positive")

    @property
    def power(self) -> float:
        """Base power: 2k (defocusing) or 6 (focusing, k = 1)."""
        return 6.0 if self.mode == "focusing_k1" else 2.0 * self.k

    def exponent(self, eps_scale: float = 1.0) -> float:
        return self.power + eps_scale * self.epsilon


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _fin(x: float) -> float | None:
    return x if math.isfinite(x) else None


def _field_on_own_period(series: LimitPeriodicSeries):
    """Series placed on the torus of its largest block, with a safe mode count."""
    blocks = block_decomposition(series)
    j = max(blocks) if blocks else 1
    nmax = max_level_mode(series, j)
    N = max(16, 1 << (2 * nmax + 2).bit_length())
    return level_field(series, j, N)


def stepanov_of(series: LimitPeriodicSeries) -> float:
    if len(series) == 0:
        return 0.0
    return stepanov_norm(_field_on_own_period(series), 1, 2.0)


def block_h1(series: LimitPeriodicSeries, j: int) -> float:
    """``||F||_{H^1(T_j)}`` for a series that is ``L_j``-periodic."""
    if len(series) == 0:
        return 0.0
    nmax = max_level_mode(series, j)
    N = max(16, 1 << (2 * nmax + 2).bit_length())
    return h1_norm(level_field(series, j, N))


def _default_depth(gen: SeriesGenerator, j_range: Sequence[int]) -> int:
    return max(max(j_range) + 1, max(gen.blocks(), default=1))


def _modes_bound(gen: SeriesGenerator, per_block_modes: int | None) -> int:
    if per_block_modes is not None:
        return per_block_modes
    if isinstance(gen.rule, TabulatedRule):
        return max(1, gen.rule.max_abs_n())
    raise ValueError("per_block_modes is required for a non-tabulated rule")


def check_LP3(gen: SeriesGenerator, j_range: Iterable[int], params: ConditionParams,
              depth: int | None = None, per_block_modes: int | None = None) -> dict:
    """``exp(L_{j+1}^{a}) * ||f_j - f||_{S^{1,2}} <= B`` for each j in range.

    ``f`` is the truncation at ``depth`` (> max j), so tails are exact for the
    truncated data ("truncated tail").
    """
    j_range = sorted(set(j_range))
    depth = _default_depth(gen, j_range) if depth is None else depth
    if depth <= max(j_range):
        raise ValueError(f"truncation depth {depth} cannot resolve the tail beyond j={max(j_range)}")
    full = truncate(gen, depth, _modes_bound(gen, per_block_modes))
    a = params.exponent()
    rows = []
    for j in j_range:
        tail = full.restrict(lambda r, j=j: not is_in_Aj(r, j))
        tn = stepanov_of(tail)
        L_next = period_Lj(gen.omega, j + 1)
        log_thr = math.log(params.B) - L_next**a
        log_margin = log_thr - _log(tn)
        rows.append({
            "j": j, "L_j": period_Lj(gen.omega, j), "L_next": L_next, "tail_norm": tn,
            "threshold": math.exp(log_thr), "log_threshold": log_thr,
            "log_margin": _fin(log_margin), "pass": bool(log_margin >= -RTOL),
        })
    return {"check": "LP3", "mode": params.mode, "exponent": a, "depth": depth,
            "j_range": j_range, "rows": rows, "pass": all(r["pass"] for r in rows),
            "tail_kind": "truncated tail"}


def _blocks(gen: SeriesGenerator, depth: int, per_block_modes: int | None) -> dict[int, LimitPeriodicSeries]:
    full = truncate(gen, depth, _modes_bound(gen, per_block_modes))
    return block_decomposition(full)


def window_cover(L: float) -> float:
    """Constant with ``||F||_{S^{1,2}} <= window_cover(L) * ||F||_{H^1(T_L)}``."""
    return 1.0 if L >= 1 else math.sqrt(math.ceil(1.0 / L - 1e-12))


def check_APP2(gen: SeriesGenerator, j_range: Iterable[int], params: ConditionParams,
               per_block_modes: int | None = None) -> dict:
    """Per-block ``||F_j|| <= C exp(-L_j^{a})`` in S^{1,2} (APP2) and H^1(T_j) (APP3)."""
    j_range = sorted(set(j_range))
    blocks = _blocks(gen, max(j_range), per_block_modes)
    a = params.exponent()
    rows = []
    for j in j_range:
        F = blocks.get(j, LimitPeriodicSeries(gen.omega))
        L = period_Lj(gen.omega, j)
        s = stepanov_of(F)
        h = block_h1(F, j)
        log_thr = math.log(params.C) - L**a
        rows.append({
            "j": j, "L_j": L, "stepanov": s, "h1": h, "threshold": math.exp(log_thr),
            "log_threshold": log_thr,
            "app2": bool(_log(s) <= log_thr + RTOL), "app3": bool(_log(h) <= log_thr + RTOL),
            "window_cover": window_cover(L),
        })
    fails = [r["j"] for r in rows if not r["app2"]]
    return {"check": "APP2", "mode": params.mode, "exponent": a, "j_range": j_range, "rows": rows,
            "pass": not fails, "failing_j": fails, "app3_pass": all(r["app3"] for r in rows)}


def check_necessary(gen: SeriesGenerator, j_range: Iterable[int], params: ConditionParams,
                    C_prime: float | None = None, per_block_modes: int | None = None) -> dict:
    """``(sum <n/L_j>^2 |c|^2)^{1/2} <= C' exp(-L_j^{a'})`` with the halved epsilon."""
    j_range = sorted(set(j_range))
    C_prime = params.C if C_prime is None else C_prime
    blocks = _blocks(gen, max(j_range), per_block_modes)
    b = params.exponent(0.5)
    rows = []
    for j in j_range:
        F = blocks.get(j, LimitPeriodicSeries(gen.omega))
        L = period_Lj(gen.omega, j)
        val = block_h1(F, j) / math.sqrt(L)
        log_thr = math.log(C_prime) - L**b
        rows.append({"j": j, "L_j": L, "weighted_l2": val, "threshold": math.exp(log_thr),
                     "log_threshold": log_thr, "pass": bool(_log(val) <= log_thr + RTOL)})
    return {"check": "necessary", "mode": params.mode, "exponent": b, "C_prime": C_prime,
            "j_range": j_range, "rows": rows, "pass": all(r["pass"] for r in rows)}


def implied_B(omega: float, j: int, depth: int, params: ConditionParams) -> float:
    """B that LP3 at ``j`` inherits from APP2 on blocks ``j+1..depth`` (triangle inequality)."""
    a = params.exponent()
    L_next = period_Lj(omega, j + 1)
    return params.C * math.fsum(math.exp(L_next**a - period_Lj(omega, i) ** a) for i in range(j + 1, depth + 1))


def implications(gen: SeriesGenerator, j_range: Iterable[int], params: ConditionParams,
                 per_block_modes: int | None = None) -> dict:
    """Evaluate the chain APP3 => APP2 => LP3 and APP2 => necessary condition.

    Each implication is reported with the constant relation it needs:
    APP3(C) gives APP2(C * window_cover(L_j)); APP2(C) on blocks above j gives
    LP3 with :func:`implied_B`; APP2(C) gives the necessary bound with
    ``C' = C * max(1, exp(L^{a'} - L^{a}))``. ``holds`` is False only when a
    premise passes and its conclusion fails.
    """
    j_range = sorted(set(j_range))
    depth = max(max(j_range) + 1, max(gen.blocks(), default=1))
    block_range = list(range(min(j_range), depth + 1))
    app = check_APP2(gen, block_range, params, per_block_modes)
    by_j = {r["j"]: r for r in app["rows"]}
    out: dict = {"app3_app2": [], "app2_lp3": [], "app2_necessary": []}
    for r in app["rows"]:
        if r["app3"]:
            C2 = params.C * r["window_cover"]
            ok = _log(r["stepanov"]) <= math.log(C2) - r["L_j"] ** params.exponent() + RTOL
            out["app3_app2"].append({"j": r["j"], "premise": True, "conclusion": bool(ok), "C_used": C2})
        else:
            out["app3_app2"].append({"j": r["j"], "premise": False, "conclusion": None})
    for j in j_range:
        above = [by_j[i]["app2"] for i in range(j + 1, depth + 1)]
        if all(above):
            B = implied_B(gen.omega, j, depth, params)
            lp = check_LP3(gen, [j], ConditionParams(params.k, params.epsilon, B, params.C, params.mode),
                           depth=depth, per_block_modes=per_block_modes)
            out["app2_lp3"].append({"j": j, "premise": True, "conclusion": lp["pass"], "B_used": B})
        else:
            out["app2_lp3"].append({"j": j, "premise": False, "conclusion": None})
    a, b = params.exponent(), params.exponent(0.5)
    for j in j_range:
        r = by_j[j]
        if r["app2"]:
            L = r["L_j"]
            Cp = params.C * max(1.0, math.exp(L**b - L**a))
            nec = check_necessary(gen, [j], params, C_prime=Cp, per_block_modes=per_block_modes)
            out["app2_necessary"].append({"j": j, "premise": True, "conclusion": nec["pass"], "C_prime_used": Cp})
        else:
            out["app2_necessary"].append({"j": j, "premise": False, "conclusion": None})
    out["holds"] = all(e["conclusion"] is not False for rows in out.values() if isinstance(rows, list) for e in rows)
    return out


# --- synthetic data -----------------------------------------------------------------


PROFILES = ("sobolev2", "polynomial")


def synth_generator(omega: float, k: int, epsilon: float, modes_per_block: Sequence[int], seed: int,
                    mode: str = "defocusing_2k", profile: str = "sobolev2", C: float = 1.0,
                    include_zero: bool = False) -> SeriesGenerator:
    """Random-phase generator with prescribed block H^1(T_j) norms.

    ``sobolev2``: block norm ``exp(-L_j^{p + 2 eps})`` with ``p`` = 2k (6 in
    focusing mode). ``polynomial``: block norm ``L_j^{-3}``. Within a block the
    magnitudes follow ``<n/L_j>^{-2}`` times a random factor in [0.5, 1.5).
    Blocks whose target underflows to zero are left empty.
    """
    params = ConditionParams(k=k, epsilon=epsilon, C=C, mode=mode)
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if not omega > 0:
        raise ValueError("omega must be positive")
    if not modes_per_block or not any(modes_per_block):
        raise ValueError("empty block request: at least one block needs a mode")
    if any(m < 0 for m in modes_per_block):
        raise ValueError("mode counts must be non-negative")
    rng = np.random.default_rng(seed)
    table: dict[int, dict[int, complex]] = {}
    for j, count in enumerate(modes_per_block, start=1):
        ns = block_modes(j, count, include_zero)
        phases = rng.uniform(0.0, 2 * np.pi, size=count)
        jitter = rng.uniform(0.5, 1.5, size=count)
        if count == 0:
            continue
        L = period_Lj(omega, j)
        if profile == "sobolev2":
            target = math.exp(-(L ** params.exponent(2.0)))
        else:
            target = L**-3.0
        xi = np.array(ns, dtype=float) / L
        mag = (1.0 + xi**2) ** -1.0 * jitter
        amps = mag * np.exp(1j * phases)
        norm = math.sqrt(L) * math.sqrt(float(np.sum((1.0 + xi**2) * np.abs(amps) ** 2)))
        amps = amps * (target / norm)
        row = {int(n): complex(c) for n, c in zip(ns, amps) if c != 0}
        if row:
            table[j] = row
    env = Envelope(C=C, epsilon=epsilon, profile=profile, k=k)
    return SeriesGenerator(omega, TabulatedRule(table), env)


def thresholds(omega: float, j_range: Iterable[int], params: ConditionParams) -> list[dict]:
    """Log thresholds used by the three checks; the golden-file surface."""
    out = []
    for j in sorted(set(j_range)):
        L, Ln = period_Lj(omega, j), period_Lj(omega, j + 1)
        out.append({
            "j": j,
            "lp3_log_threshold": math.log(params.B) - Ln ** params.exponent(),
            "app2_log_threshold": math.log(params.C) - L ** params.exponent(),
            "necessary_log_threshold": math.log(params.C) - L ** params.exponent(0.5),
        })
    return out


def verdict_document(gen: SeriesGenerator, j_range: Iterable[int], params: ConditionParams) -> dict:
    j_range = sorted(set(j_range))
    return {
        "params": asdict(params),
        "lp3": check_LP3(gen, j_range, params),
        "app2": check_APP2(gen, j_range, params),
        "necessary": check_necessary(gen, j_range, params),
    }
