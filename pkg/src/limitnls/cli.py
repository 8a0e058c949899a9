"""Batch front end: ``limitnls {synth,check,evolve,converge,report}``.

Each stage reads the artifacts of the previous one from the output directory
and writes its own. Every artifact carries the hash of the resolved
configuration and the tool version; a stage refuses inputs whose hash differs
from the current configuration.

Exit codes: 0 success, 1 usage / I/O / validation error, 2 condition-check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ap_series import SeriesGenerator
from .condition_checker import ConditionParams, check_APP2, check_LP3, check_necessary, synth_generator
from .global_construction import (
    MAX_PERIOD,
    ResolutionPolicy,
    a_omega_trace,
    apriori_bound_check,
    build_hierarchy,
    cauchy_experiment,
    continuity_experiment,
    leakage_check,
    run_hierarchy,
    thread_cap,
)
from .nls_solver import SolverConfig, SolverError, diagnostics_csv, load_trajectory, parse_sign, save_trajectory
from .periodization import MAX_J, period_Lj

log = logging.getLogger("limitnls")

EXIT_OK, EXIT_IO, EXIT_FAIL = 0, 1, 2


class StageError(Exception):
    """Usage, validation or missing-artifact problem (exit 1)."""


@dataclass
class RunConfig:
    omega: float = 12.0
    k: int = 1
    sign: str = "defocusing"
    epsilon: float = 0.5
    j_min: int = 3
    j_max: int = 5
    T: float = 0.25
    dt: float = 1e-3
    density: int = 64
    headroom: int = 4
    seed: int = 0
    modes_per_block: list = field(default_factory=lambda: [1, 1, 2, 2, 2])
    profile: str = "sobolev2"
    B: float = 1.0
    C: float = 1.0
    probe_t: float = 0.1
    delta0: float = 1e-3
    out: str = "run"

    # -- loading ---------------------------------------------------------------------

    SECTIONS = {
        "generator": ("omega", "k", "epsilon", "seed", "modes_per_block", "profile"),
        "solver": ("sign", "dt"),
        "hierarchy": ("j_min", "j_max", "T", "density", "headroom"),
        "check": ("B", "C"),
        "diagnostics": ("probe_t", "delta0"),
        "output": ("out",),
    }

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, val in (raw or {}).items():
            if isinstance(val, dict):
                allowed = cls.SECTIONS.get(key)
                if allowed is None:
                    raise StageError(f"config: unknown section [{key}]")
                for k2, v2 in val.items():
                    if k2 not in allowed:
                        raise StageError(f"config: unknown field {key}.{k2}")
                    flat[k2] = v2
            elif key in known:
                flat[key] = val
            else:
                raise StageError(f"config: unknown field {key}")
        return cls(**flat)

    def validate(self) -> "RunConfig":
        def bad(name, why):
            raise StageError(f"config field '{name}' {why}")

        for name in ("omega", "epsilon", "T", "dt", "B", "C", "delta0"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                bad(name, "must be a finite number")
        if not self.omega > 0:
            bad("omega", "must be positive")
        if not isinstance(self.k, int) or self.k < 1:
            bad("k", "must be a positive integer")
        try:
            sgn = parse_sign(self.sign)
        except ValueError:
            bad("sign", "must be 'defocusing' or 'focusing'")
        if sgn < 0 and self.k != 1:
            bad("sign", "focusing is supported for k = 1 only")
        if not self.epsilon > 0:
            bad("epsilon", "must be > 0")
        if not (isinstance(self.j_min, int) and isinstance(self.j_max, int) and 1 <= self.j_min <= self.j_max <= MAX_J):
            bad("j_min", f"and j_max must satisfy 1 <= j_min <= j_max <= {MAX_J}")
        if period_Lj(self.omega, self.j_max) > MAX_PERIOD:
            bad("omega", f"gives L_{self.j_max} = {period_Lj(self.omega, self.j_max):g} > {MAX_PERIOD:g}")
        if not self.T >= 0:
            bad("T", "must be >= 0")
        if not self.dt > 0:
            bad("dt", "must be > 0")
        if not (0 <= self.probe_t <= self.T):
            bad("probe_t", "must lie in [0, T]")
        if not self.delta0 > 0:
            bad("delta0", "must be > 0")
        if not (self.B > 0 and self.C > 0):
            bad("B", "and C must be positive")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            bad("seed", "must be an unsigned 64-bit integer")
        mpb = self.modes_per_block
        if not isinstance(mpb, list) or not mpb or not all(isinstance(m, int) and m >= 0 for m in mpb) or not any(mpb):
            bad("modes_per_block", "must be a non-empty list of non-negative integers, not all zero")
        if len(mpb) > MAX_J:
            bad("modes_per_block", f"lists {len(mpb)} blocks; at most {MAX_J} are supported")
        if self.profile not in ("sobolev2", "polynomial"):
            bad("profile", "must be 'sobolev2' or 'polynomial'")
        if self.density < 1 or self.headroom < 1:
            bad("density", "and headroom must be >= 1")
        return self

    # -- derived -----------------------------------------------------------------------

    @property
    def sign_value(self) -> int:
        return parse_sign(self.sign)

    @property
    def mode(self) -> str:
        return "focusing_k1" if self.sign_value < 0 else "defocusing_2k"

    def params(self) -> ConditionParams:
        return ConditionParams(k=self.k, epsilon=self.epsilon, B=self.B, C=self.C, mode=self.mode)

    def solver(self) -> SolverConfig:
        return SolverConfig(k=self.k, sign=self.sign_value, dt=self.dt)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- artifact helpers ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "version": __version__}


def _write(path: Path, data: str | bytes):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            path.write_text(data, encoding="utf-8", newline="\n")
        else:
            path.write_bytes(data)
    except OSError as e:
        raise StageError(f"cannot write {path}: {e.strerror or e}") from None


def _read_json(path: Path, cfg: RunConfig) -> dict:
    if not path.is_file():
        raise StageError(f"missing artifact: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise StageError(f"malformed artifact {path}: {e}") from None
    if not isinstance(doc, dict):
        raise StageError(f"malformed artifact {path}: expected an object")
    if doc.get("config_hash") != cfg.digest():
        raise StageError(f"{path} was produced with config hash {doc.get('config_hash')}, current is {cfg.digest()}")
    return doc


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _csv(header: list[str], rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return out.getvalue()


def _csv_with_stamp(cfg: RunConfig, body: str) -> str:
    s = _stamp(cfg)
    return f"# config_hash={s['config_hash']} version={s['version']}\n" + body


def _load_generator(path: Path, cfg: RunConfig) -> SeriesGenerator:
    doc = _read_json(path, cfg)
    try:
        return SeriesGenerator.from_dict(doc["generator"])
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise StageError(f"malformed generator in {path}: {e}") from None


# --- stages ----------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    gen = synth_generator(cfg.omega, cfg.k, cfg.epsilon, cfg.modes_per_block, cfg.seed,
                          mode=cfg.mode, profile=cfg.profile, C=cfg.C)
    doc = {**_stamp(cfg), "seed": cfg.seed, "config": cfg.canonical(), "generator": gen.to_dict()}
    _write(Path(cfg.out) / "generator.json", dumps(doc))
    log.info("wrote %s", Path(cfg.out) / "generator.json")
    return EXIT_OK


def cmd_check(cfg: RunConfig, generator: str | None = None) -> int:
    out = Path(cfg.out)
    gen = _load_generator(Path(generator) if generator else out / "generator.json", cfg)
    params = cfg.params()
    j_range = list(range(cfg.j_min, cfg.j_max + 1))
    lp3 = check_LP3(gen, j_range, params)
    doc = {
        **_stamp(cfg),
        "j_range": j_range,
        "params": asdict(params),
        "lp3": lp3,
        "app2": check_APP2(gen, j_range, params),
        "necessary": check_necessary(gen, j_range, params),
        "pass": lp3["pass"],
    }
    _write(out / "verdict.json", dumps(doc))
    for r in lp3["rows"]:
        log.info("LP3 j=%d tail=%.3e threshold=%.3e %s", r["j"], r["tail_norm"], r["threshold"],
                 "pass" if r["pass"] else "FAIL")
    return EXIT_OK if lp3["pass"] else EXIT_FAIL


def _policy(cfg: RunConfig) -> ResolutionPolicy:
    return ResolutionPolicy(density=cfg.density, headroom=cfg.headroom)


def cmd_evolve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    gen = _load_generator(out / "generator.json", cfg)
    verdict = _read_json(out / "verdict.json", cfg)
    if not verdict.get("pass"):
        log.error("data fail the LP3 check; not evolving")
        return EXIT_FAIL
    run = build_hierarchy(gen, cfg.j_min, cfg.j_max, _policy(cfg))
    run_hierarchy(run, cfg.T, cfg.solver(), threads=thread_cap())
    levels = []
    for j in range(cfg.j_min, cfg.j_max + 1):
        lv = run.levels[j]
        buf = io.BytesIO()
        save_trajectory(buf, lv.trajectory)
        data = buf.getvalue()
        tname, dname = f"trajectories/level_{j}.lnls", f"trajectories/level_{j}_diagnostics.csv"
        _write(out / tname, data)
        _write(out / dname, _csv_with_stamp(cfg, diagnostics_csv(lv.trajectory)))
        levels.append({"j": j, "L_j": lv.L_j, "j_star": lv.j_star, "period": lv.period, "N": lv.N,
                       "M": lv.trajectory.final.N, "trajectory": tname, "sha256": _sha(data), "diagnostics": dname})
    manifest = {**_stamp(cfg), "generator": "generator.json",
                "generator_sha256": _sha((out / "generator.json").read_bytes()),
                "T": cfg.T, "dt": cfg.dt, "k": cfg.k, "sign": cfg.sign, "levels": levels}
    _write(out / "manifest.json", dumps(manifest))
    return EXIT_OK


def _load_run(cfg: RunConfig):
    out = Path(cfg.out)
    manifest = _read_json(out / "manifest.json", cfg)
    gen = _load_generator(out / "generator.json", cfg)
    if _sha((out / "generator.json").read_bytes()) != manifest.get("generator_sha256"):
        raise StageError("generator.json changed after evolve; rerun evolve")
    run = build_hierarchy(gen, cfg.j_min, cfg.j_max, _policy(cfg))
    for entry in manifest["levels"]:
        path = out / entry["trajectory"]
        if not path.is_file():
            raise StageError(f"missing artifact: {path}")
        data = path.read_bytes()
        if _sha(data) != entry["sha256"]:
            raise StageError(f"{path} does not match the manifest digest")
        try:
            tr = load_trajectory(io.BytesIO(data))
        except (ValueError, OSError) as e:
            raise StageError(f"malformed trajectory {path}: {e}") from None
        lv = run.levels[entry["j"]]
        if not math.isclose(tr.final.lam, lv.period, rel_tol=1e-12):
            raise StageError(f"{path} lives on the wrong torus")
        lv.trajectory = tr
    run.T = cfg.T
    run.solver = replace(cfg.solver(), snapshot_every=max(1, round(0.01 / cfg.dt)))
    return run, manifest


def cmd_converge(cfg: RunConfig) -> int:
    run, _ = _load_run(cfg)
    rep = cauchy_experiment(run, cfg.T)
    doc = {**_stamp(cfg), **rep.to_dict(),
           "apriori": apriori_bound_check(run),
           "leakage": leakage_check(run, cfg.probe_t),
           "a_omega": a_omega_trace(run, cfg.probe_t),
           "continuity": continuity_experiment(run, cfg.delta0, cfg.probe_t, cfg.probe_t, run.solver, cfg.params()),
           "finest_level": cfg.j_max}
    _write(Path(cfg.out) / "report.json", dumps(doc))
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    rep = _read_json(out / "report.json", cfg)
    run, manifest = _load_run(cfg)
    norm_rows = []
    for j in range(cfg.j_min, cfg.j_max + 1):
        tr = run.trajectory(j)
        for t, d in zip(tr.times, tr.diagnostics):
            norm_rows.append([j, t, d["mass"], d["hamiltonian"], d["h1"], d["linf"]])
    tables = {
        "norms.csv": _csv(["level", "t", "mass", "hamiltonian", "h1", "linf"], norm_rows),
        "cauchy.csv": _csv(["j", "t", "d_linf", "d_stepanov"],
                           [[p["j"], t, a, b] for p in rep["pairs"] for t, a, b in
                            zip(rep["times"], p["d_linf_t"], p["d_stepanov_t"])]),
        "leakage.csv": _csv(["rho_num", "rho_den", "L", "n", "sup"],
                            [[p["rho_num"], p["rho_den"], p["L"], n, s] for p in rep["leakage"]["proxies"]
                             for n, s in zip(p["n"], p["sup"])]),
        "blocks.csv": _csv(["block", "sum_t", "sum_data"],
                           [[b, s, d] for b, s, d in zip(rep["a_omega"]["blocks"], rep["a_omega"]["sums"],
                                                         rep["a_omega"]["data_sums"])]),
    }
    for name, body in tables.items():
        _write(out / "tables" / name, _csv_with_stamp(cfg, body))
    return EXIT_OK


STAGES = {"synth": cmd_synth, "check": cmd_check, "evolve": cmd_evolve, "converge": cmd_converge, "report": cmd_report}


# --- argument handling --------------------------------------------------------------


def _levels(text: str) -> tuple[int, int]:
    try:
        a, b = text.split("..")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like 3..5, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="limitnls", description="Limit-periodic NLS experiment pipeline.")
    p.add_argument("--version", action="version", version=f"limitnls {__version__}")
    sub = p.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--levels", type=_levels, help="level range a..b")
        s.add_argument("--horizon", type=float, help="time horizon T")
        s.add_argument("--seed", type=int, help="generator seed (u64)")
        s.add_argument("--mode", choices=("defocusing", "focusing"))
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "check":
            s.add_argument("--generator", help="generator file (default: OUT/generator.json)")
    return p


def resolve_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as e:
            raise StageError(f"cannot read config {args.config}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise StageError(f"malformed config {args.config}: {e}") from None
        if not isinstance(raw, dict):
            raise StageError("config must be a mapping")
    try:
        cfg = RunConfig.from_mapping(raw)
    except TypeError as e:
        raise StageError(f"config: {e}") from None
    over = {}
    if args.out:
        over["out"] = args.out
    if args.levels:
        over["j_min"], over["j_max"] = args.levels
    if args.horizon is not None:
        over["T"] = args.horizon
        if cfg.probe_t > args.horizon:
            over["probe_t"] = args.horizon
    if args.seed is not None:
        over["seed"] = args.seed
    if args.mode:
        over["sign"] = args.mode
    return replace(cfg, **over).validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.stage == "check":
            return cmd_check(cfg, args.generator)
        return STAGES[args.stage](cfg)
    except StageError as e:
        print(f"limitnls {args.stage}: {e}", file=sys.stderr)
        return EXIT_IO
    except SolverError as e:
        print(f"limitnls {args.stage}: solver stopped at step {e.step}: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"limitnls {args.stage}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
