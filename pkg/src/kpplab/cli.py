"""Command line entry point: ``kpplab <subcommand> [--config PATH] [--seed N] ...``.

Every subcommand writes ``report.json`` plus CSV artifacts into ``--out`` and
exits 0 only when all verdicts pass.  Timestamps and host details go to
``metadata.json`` so the other artifacts are byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analysis, cbbm, kernels, spde
from .measure import (
    FormulaTable,
    MeasureError,
    ReproductionMeasure,
    annealed_rate,
    c_delta,
    c_delta_lower,
    split,
)
from .randomness import SEED_ENV, StreamKey, resolve_seed, sample_skeleton
from .serialize import dumps, rows_to_csv

COMMANDS = ("formulas", "spde", "cbbm", "growth", "duality", "tailbound", "lln")
EXIT_FAIL = 1
EXIT_ERROR = 3
U64 = 2**64 - 1


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    measure: ReproductionMeasure = ReproductionMeasure.from_atoms(0.0, [(0.5, 1.0)])
    delta: float = 0.25
    T: float = 10.0
    seed: int | None = None
    replicas: int = 1
    cap: float = cbbm.DEFAULT_CAP
    workers: int = 1
    record_dt: float = 0.1
    spde: dict = field(default_factory=dict)
    # formulas
    eps: float = 0.0
    p: float = 1.0
    lam: float = 0.0
    box: float = 1.0
    box_eps: float = 0.01
    # fits and verdicts
    window: tuple | None = None
    rel_tol: float = 0.1
    speed_upper: float | None = None
    min_pass_fraction: float = 0.9
    # spde initial ramp [a, b]; default sits 10 from the left edge
    ramp: tuple | None = None
    # cbbm
    mode: str = "counts"
    engine: str = "batched"
    protocol: str = "quenched"
    n_max: int = 5
    x0: tuple = (0.0,)
    # duality
    x: tuple = (0.0,)
    t: float = 1.0
    u0: dict = field(default_factory=lambda: {"kind": "ramp", "a": -1.0, "b": 1.0})
    # tailbound
    tail_method: str = "dual"
    tail_times: tuple | None = None
    lam_factors: tuple = (1.1, 0.9)
    inner: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        errors = []
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                errors.append(f"unknown key {k!r}")
        kw = {k: v for k, v in d.items() if k in known}
        if "measure" in kw:
            try:
                kw["measure"] = ReproductionMeasure.from_literal(kw["measure"])
            except (MeasureError, TypeError, KeyError, ValueError) as exc:
                errors.append(f"measure: {exc}")
                kw.pop("measure")
        for k in ("x", "x0", "window", "ramp", "tail_times", "lam_factors"):
            if kw.get(k) is not None:
                try:
                    kw[k] = tuple(float(v) for v in kw[k])
                except (TypeError, ValueError):
                    errors.append(f"{k} must be a list of numbers")
                    kw.pop(k)
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(errors + [str(exc)]) from None
        errors += cfg.violations()
        if errors:
            raise ConfigError(errors)
        return cfg

    def violations(self) -> list[str]:
        out = []

        def num(name, lo=None, hi=None, lo_open=False, integer=False):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and int(v) != v):
                out.append(f"{name} must be {'an integer' if integer else 'a number'}")
                return
            if lo is not None and (v <= lo if lo_open else v < lo):
                out.append(f"{name}={v} must be {'>' if lo_open else '>='} {lo}")
            if hi is not None and v > hi:
                out.append(f"{name}={v} must be <= {hi}")

        num("delta", 0.0, 1.0, lo_open=True)
        num("T", 0.0, lo_open=True)
        num("replicas", 1, integer=True)
        num("cap", 1)
        num("workers", 1, integer=True)
        num("record_dt", 0.0, lo_open=True)
        num("eps", 0.0)
        num("t", 0.0, lo_open=True)
        num("rel_tol", 0.0, lo_open=True)
        num("min_pass_fraction", 0.0, 1.0)
        num("n_max", 1, integer=True)
        num("inner", 1, integer=True)
        if self.seed is not None:
            num("seed", 0, U64, integer=True)
        if self.mode not in ("counts", "positions"):
            out.append(f"mode must be 'counts' or 'positions', got {self.mode!r}")
        if self.engine not in ("batched", "direct"):
            out.append(f"engine must be 'batched' or 'direct', got {self.engine!r}")
        if self.protocol not in ("quenched", "annealed", "martingale"):
            out.append(f"protocol must be quenched, annealed or martingale, got {self.protocol!r}")
        if self.tail_method not in ("dual", "cbbm"):
            out.append(f"tail_method must be 'dual' or 'cbbm', got {self.tail_method!r}")
        if self.window is not None and (len(self.window) != 2 or not self.window[0] < self.window[1]):
            out.append("window must be [t_lo, t_hi] with t_lo < t_hi")
        if self.ramp is not None and (len(self.ramp) != 2 or self.ramp[0] > self.ramp[1]):
            out.append("ramp must be [a, b] with a <= b")
        if len(self.x) == 0 or len(self.x) > 4:
            out.append("x must hold 1 to 4 points")
        if len(self.lam_factors) != 2:
            out.append("lam_factors must be [upper_factor, lower_factor]")
        if self.tail_times is not None and (
            len(self.tail_times) < 2 or any(b <= a for a, b in zip(self.tail_times, self.tail_times[1:]))
        ):
            out.append("tail_times must be increasing with at least 2 entries")
        try:
            self.u0_profile()
        except (spde.SpdeError, KeyError, TypeError, ValueError) as exc:
            out.append(f"u0: {exc}")
        spde_keys = {f.name for f in dataclasses.fields(spde.SpdeConfig)} - {"record_dt"}
        for k in self.spde:
            if k not in spde_keys:
                out.append(f"spde: unknown key {k!r}")
        if not out:
            try:
                self.spde_config(1.0)
            except (spde.SpdeError, TypeError, ValueError) as exc:
                out.append(f"spde: {exc}")
        return out

    def u0_profile(self):
        kind = self.u0.get("kind", "ramp")
        if kind == "ramp":
            a, b = float(self.u0["a"]), float(self.u0["b"])
            if b < a:
                raise ValueError("ramp needs a <= b")
            return spde.RampProfile(a, b)
        if kind == "constant":
            v = float(self.u0["value"])
            if not 0.0 <= v <= 1.0:
                raise ValueError("constant must be in [0, 1]")
            return spde.ConstantProfile(v)
        raise ValueError(f"unknown u0 kind {kind!r}")

    def spde_config(self, auto_L: float) -> spde.SpdeConfig:
        kw = dict(self.spde)
        if kw.get("L", "auto") == "auto":
            kw["L"] = auto_L
        if "front_levels" in kw:
            kw["front_levels"] = tuple(kw["front_levels"])
        if "snapshot_times" in kw:
            kw["snapshot_times"] = tuple(kw["snapshot_times"])
        kw["record_dt"] = self.record_dt
        return spde.SpdeConfig(**kw)

    def to_plain(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["measure"] = self.measure.to_literal()
        return d


def _pmap(fn, items, workers: int):
    """Indexed gather: results come back in input order whatever the pool does."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _need(n: int, frac: float) -> int:
    return min(n, math.ceil(frac * n - 1e-9))


# ---------------------------------------------------------------- formulas

def cmd_formulas(cfg: ExperimentConfig, seed: int):
    tab = FormulaTable(cfg.measure, cfg.delta, cfg.eps, cfg.p, cfg.lam, cfg.box, cfg.box_eps)
    rows = tab.compute()
    csv = rows_to_csv(["quantity", "value"], [(k, float(v)) for k, v in rows.items()])
    return {"table": rows}, {"formulas.csv": csv}, True


# ---------------------------------------------------------------- spde

def _spde_domain(cfg: ExperimentConfig) -> spde.SpdeConfig:
    R = cfg.measure
    auto = spde.recommended_half_width(R, cfg.T) if R.total_mass() > 0 else 20.0
    return cfg.spde_config(auto)


def _spde_replica(args):
    cfg, seed, i = args
    sc = _spde_domain(cfg)
    a, b = cfg.ramp if cfg.ramp is not None else (-sc.L + 10.0, -sc.L + 11.0)
    key = StreamKey(seed).fork("spde", i)
    sk = sample_skeleton(split(cfg.measure, cfg.delta), cfg.T, key.fork("skeleton"))
    tr = spde.evolve(spde.initial_ramp(sc, a, b), cfg.measure, cfg.delta, cfg.T, sk, key, sc)
    return tr, sk


def cmd_spde(cfg: ExperimentConfig, seed: int):
    R = cfg.measure
    runs = _pmap(_spde_replica, [(cfg, seed, i) for i in range(cfg.replicas)], cfg.workers)
    art, reps = {}, []
    for i, (tr, sk) in enumerate(runs):
        art[f"trajectory_{i:03d}.csv"] = tr.to_csv()
        art[f"events_{i:03d}.csv"] = tr.events_csv()
        art[f"skeleton_{i:03d}.csv"] = sk.to_csv()
        if tr.snapshots:
            art[f"snapshots_{i:03d}.csv"] = tr.snapshots_csv()
        entry = {"replica": i, "truncated": tr.truncated, "reason": tr.reason, "n_events": len(tr.events)}
        if R.total_mass() > 0 and not tr.truncated:
            try:
                rep = analysis.speed_report_for(tr, R, cfg.window, cfg.rel_tol, cfg.speed_upper)
                entry["speed"] = rep
                entry["verdict"] = rep.verdict
            except analysis.AnalysisError as exc:
                entry["error"] = str(exc)
                entry["verdict"] = False
        else:
            entry["verdict"] = not tr.truncated
        reps.append(entry)
    n_pass = sum(e["verdict"] for e in reps)
    need = _need(cfg.replicas, cfg.min_pass_fraction)
    rows = [
        (e["replica"], e["speed"].speed if "speed" in e else math.nan, e["verdict"]) for e in reps
    ]
    art["speeds.csv"] = rows_to_csv(["replica", "speed", "verdict"], rows)
    report = {"domain_L": _spde_domain(cfg).L, "replicas": reps, "passed": n_pass, "required": need}
    return report, art, n_pass >= need


# ---------------------------------------------------------------- cbbm

def _cbbm_replica(args):
    cfg, seed, i, shared = args
    sm = split(cfg.measure, cfg.delta)
    key = StreamKey(seed).fork("cbbm", i)
    sk = shared if shared is not None else sample_skeleton(sm, cfg.T, key.fork("skeleton"))
    T = cfg.T
    checkpoints = None
    if cfg.protocol == "martingale":
        # stop at the n_max-th large event; fewer events means the stopped martingale
        pts = list(sk.points(cfg.T))
        if len(pts) >= cfg.n_max:
            T = pts[cfg.n_max - 1][0]
        checkpoints = [0.0, T]
    elif cfg.protocol == "annealed":
        checkpoints = [0.0, T]
    res = cbbm.run(
        list(cfg.x0), sm, sk, T, key.fork("run"), cap=cfg.cap, mode=cfg.mode,
        checkpoints=checkpoints, record_dt=cfg.record_dt, engine=cfg.engine,
    )
    return res, sk


def cmd_cbbm(cfg: ExperimentConfig, seed: int):
    sm = split(cfg.measure, cfg.delta)
    shared = None
    if cfg.protocol == "quenched":
        shared = sample_skeleton(sm, cfg.T, StreamKey(seed).fork("skeleton"))
    runs = _pmap(_cbbm_replica, [(cfg, seed, i, shared) for i in range(cfg.replicas)], cfg.workers)
    art = {}
    capped = [i for i, (r, _) in enumerate(runs) if r.capped]
    I0 = float(len(cfg.x0))
    if cfg.replicas <= 20:
        for i, (r, sk) in enumerate(runs):
            art[f"trajectory_{i:03d}.csv"] = r.to_csv()
            if r.snapshots:
                art[f"snapshots_{i:03d}.csv"] = r.snapshots_csv()
    if shared is not None:
        art["skeleton.csv"] = shared.to_csv()
    report = {"protocol": cfg.protocol, "mode": cfg.mode, "engine": cfg.engine, "capped": capped}
    if capped:
        report["error"] = f"{len(capped)} replicas exceeded the particle cap"
        return report, art, False

    if cfg.protocol == "martingale":
        M = []
        for r, _ in runs:
            m = cbbm.martingale_series(r, sm.minus.total_mass(), cfg.n_max, I0)
            M.append(analysis.stopped_series(m))
        mt = analysis.martingale_mean_test(np.array(M)) if cfg.replicas >= analysis.MIN_MARTINGALE_REPLICAS else None
        if mt is None:
            raise analysis.AnalysisError(f"martingale test needs >= {analysis.MIN_MARTINGALE_REPLICAS} replicas")
        if not sm.plus:
            mt.skipped = True
        report["martingale"] = mt
        art["martingale.csv"] = rows_to_csv(
            ["n", "mean", "stderr", "verdict"],
            [(n, m, s, v) for n, (m, s, v) in enumerate(zip(mt.means, mt.stderr, mt.per_n))],
        )
        return report, art, mt.verdict or mt.skipped

    final = np.array([r.counts[-1] for r, _ in runs])
    mean, se = analysis.mean_stderr(final)
    if cfg.protocol == "annealed":
        target = I0 * math.exp(annealed_rate(cfg.measure) * cfg.T)
        name = "I0 exp(r T)"
    else:
        target = analysis.quenched_mean_count(cfg.measure, cfg.delta, shared, cfg.T, I0)
        name = "I0 exp(m T) prod(1 + y_j)"
    report.update({"mean_count": mean, "stderr": se, "target": target, "target_name": name})
    if cfg.replicas >= 2:
        ok = abs(mean - target) <= 3.0 * se
        report["z"] = abs(mean - target) / se if se > 0 else (0.0 if mean == target else math.inf)
    else:
        ok = True
    art["final_counts.csv"] = rows_to_csv(["replica", "I_T"], list(enumerate(final.tolist())))
    report["verdict"] = ok
    return report, art, ok


# ---------------------------------------------------------------- growth

def _growth_replica(args):
    cfg, seed, i = args
    sm = split(cfg.measure, cfg.delta)
    key = StreamKey(seed).fork("growth", i)
    sk = sample_skeleton(sm, cfg.T, key.fork("skeleton"))
    res = cbbm.run(list(cfg.x0), sm, sk, cfg.T, key.fork("run"), cap=cfg.cap, mode="counts",
                   record_dt=cfg.record_dt, engine=cfg.engine)
    return res


def cmd_growth(cfg: ExperimentConfig, seed: int):
    runs = _pmap(_growth_replica, [(cfg, seed, i) for i in range(cfg.replicas)], cfg.workers)
    art, reps = {}, []
    for i, res in enumerate(runs):
        art[f"counts_{i:03d}.csv"] = res.to_csv()
        fits = analysis.growth_reports(res.times, res.counts, cfg.measure, cfg.delta, cfg.window, cfg.rel_tol)
        ok = fits[0].verdict and fits[2].verdict
        reps.append({"replica": i, "fits": fits, "verdict": ok})
    n_pass = sum(e["verdict"] for e in reps)
    need = _need(cfg.replicas, cfg.min_pass_fraction)
    art["slopes.csv"] = rows_to_csv(
        ["replica", "slope", "stderr", "verdict"],
        [(e["replica"], e["fits"][0].estimate, e["fits"][0].stderr, e["verdict"]) for e in reps],
    )
    report = {"replicas": reps, "passed": n_pass, "required": need}
    return report, art, n_pass >= need


# ---------------------------------------------------------------- duality

def cmd_duality(cfg: ExperimentConfig, seed: int):
    R = cfg.measure
    u0 = cfg.u0_profile()
    x_max = max(abs(v) for v in cfg.x)
    auto = x_max + 8.0 * math.sqrt(cfg.t) + 6.0 * math.sqrt(2.0 * R.total_mass()) * cfg.t + 5.0
    if isinstance(u0, spde.RampProfile):
        auto = max(auto, abs(u0.a) + 5.0, abs(u0.b) + 5.0)
    sc = cfg.spde_config(auto)
    key = StreamKey(seed).fork("duality")
    rep = analysis.duality_check(R, cfg.delta, list(cfg.x), u0, cfg.t, cfg.replicas, key, sc, cap=cfg.cap)
    report = {"domain_L": sc.L, "duality": rep}
    ok = rep.verdict
    if R.total_mass() == 0 and isinstance(u0, spde.RampProfile) and len(cfg.x) == 1:
        exact = 1.0 - float(analysis.heat_ramp_expectation(cfg.x[0], u0.a, u0.b, cfg.t))
        # CN on a grid with dx**2 steps resolves the heat flow to about 1e-4
        quad_ok = abs(rep.lhs_mean - exact) <= 1e-3
        report["oracle"] = {"exact": exact, "lhs_error": rep.lhs_mean - exact, "verdict": quad_ok,
                            "rhs_z": abs(rep.rhs_mean - exact) / rep.rhs_stderr if rep.rhs_stderr > 0 else 0.0}
        ok = ok and quad_ok
    art = {"duality.csv": rows_to_csv(
        ["side", "mean", "stderr", "n"],
        [("spde", rep.lhs_mean, rep.lhs_stderr, rep.n_lhs), ("cbbm", rep.rhs_mean, rep.rhs_stderr, rep.n_rhs)],
    )}
    return report, art, ok


# ---------------------------------------------------------------- tailbound

def tail_setup(cfg: ExperimentConfig):
    R, d = cfg.measure, cfg.delta
    cd, cl = c_delta(R, d), c_delta_lower(R, d)
    lams = (cfg.lam_factors[0] * math.sqrt(2.0 * cd), cfg.lam_factors[1] * math.sqrt(2.0 * cl))
    times = cfg.tail_times if cfg.tail_times is not None else tuple(np.linspace(5.0 / cd, cfg.T, 3).tolist())
    return cd, cl, lams, times


def _tail_replica(args):
    cfg, seed, i = args
    R, d = cfg.measure, cfg.delta
    cd, _, lams, times = tail_setup(cfg)
    key = StreamKey(seed).fork("tail", i)
    sm = split(R, d)
    sk = sample_skeleton(sm, max(times), key.fork("skeleton"))
    expected = [analysis.quenched_mean_count(R, d, sk, t) for t in times]
    if cfg.tail_method == "dual":
        auto = max(max(lams), math.sqrt(2.0 * annealed_rate(R))) * max(times) + 10.0
        sc = cfg.spde_config(auto)
        P = analysis.tail_probabilities_dual(R, d, sk, lams, times, sc, key.fork("dual"), n_spde=cfg.inner)
        reps = [
            analysis.tail_report_from_probabilities(P[0], lams[0], times, expected, cd, cfg.eps, "decreasing"),
            analysis.tail_report_from_probabilities(P[1], lams[1], times, expected, cd, cfg.eps, "increasing"),
        ]
    else:
        S, I = [], []
        for k in range(cfg.inner):
            res = cbbm.run([0.0], sm, sk, max(times), key.fork("run", k), cap=cfg.cap,
                           mode="positions", checkpoints=list(times))
            if res.capped:
                raise cbbm.CapExceeded(f"seed {i} run {k}: {res.reason}")
            S.append(res.rightmost)
            I.append(res.counts)
        reps = [
            analysis.tail_bound_check(S, I, lams[0], times, cd, cfg.eps, "decreasing"),
            analysis.tail_bound_check(S, I, lams[1], times, cd, cfg.eps, "increasing"),
        ]
    return reps


def cmd_tailbound(cfg: ExperimentConfig, seed: int):
    cd, cl, lams, times = tail_setup(cfg)
    out = _pmap(_tail_replica, [(cfg, seed, i) for i in range(cfg.replicas)], cfg.workers)
    rows = []
    for i, (dec, inc) in enumerate(out):
        for name, rep in (("upper", dec), ("lower", inc)):
            for t, p, b in zip(rep.times, rep.frequency, rep.bound):
                rows.append((i, name, rep.lam, t, p, b))
    n_dec = sum(dec.trend_ok for dec, _ in out)
    n_inc = sum(inc.trend_ok for _, inc in out)
    bounds_ok = all(dec.bound_respected for dec, _ in out)
    need = _need(cfg.replicas, cfg.min_pass_fraction)
    report = {
        "method": cfg.tail_method, "c_delta": cd, "c_delta_lower": cl, "lambdas": list(lams),
        "times": list(times), "replicas": [{"upper": d, "lower": u} for d, u in out],
        "decreasing_passed": n_dec, "increasing_passed": n_inc, "required": need,
        "bound_respected": bounds_ok,
    }
    art = {"tail.csv": rows_to_csv(["replica", "lambda_kind", "lambda", "t", "probability", "bound"], rows)}
    return report, art, n_dec >= need and n_inc >= need and bounds_ok


# ---------------------------------------------------------------- lln

def cmd_lln(cfg: ExperimentConfig, seed: int):
    sm = split(cfg.measure, cfg.delta)
    reps = []
    for i in range(cfg.replicas):
        sk = sample_skeleton(sm, cfg.T, StreamKey(seed).fork("lln", i))
        reps.append(analysis.lln_check(sk, cfg.measure, cfg.delta, cfg.eps))
    n_clt = sum(r.verdict for r in reps)
    n_rel = sum(r.relative_error <= 0.05 for r in reps)
    need = _need(cfg.replicas, cfg.min_pass_fraction)
    report = {"replicas": reps, "clt_passed": n_clt, "within_5pct": n_rel, "required": need}
    art = {"lln.csv": rows_to_csv(
        ["replica", "value", "target", "relative_error", "n_points", "verdict"],
        [(i, r.value, r.target, r.relative_error, r.n_points, r.verdict) for i, r in enumerate(reps)],
    )}
    return report, art, n_clt >= need


HANDLERS = {
    "formulas": cmd_formulas,
    "spde": cmd_spde,
    "cbbm": cmd_cbbm,
    "growth": cmd_growth,
    "duality": cmd_duality,
    "tailbound": cmd_tailbound,
    "lln": cmd_lln,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kpplab", description="Noisy Fisher-KPP and dual particle experiments.")
    p.add_argument("--version", action="version", version=f"kpplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", type=Path, help="JSON config file")
        s.add_argument("--seed", type=lambda v: int(v, 0), help=f"master seed (overrides {SEED_ENV})")
        s.add_argument("--out", type=Path, default=None, help="artifact directory (default kpplab_out/<command>)")
        s.add_argument("--replicas", type=int, help="replica count override")
        s.add_argument("--quiet", action="store_true", help="suppress the stdout summary")
    return p


def load_config(path: Path | None, replicas: int | None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config must be a JSON object"])
    if replicas is not None:
        raw["replicas"] = replicas
    return ExperimentConfig.from_dict(raw)


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")


def _summary(command: str, report: dict, verdict: bool) -> str:
    lines = [f"kpplab {command}: {'PASS' if verdict else 'FAIL'}"]
    if command == "formulas":
        w = max(len(k) for k in report["table"])
        lines += [f"  {k:<{w}}  {v:.10g}" for k, v in report["table"].items()]
    for k in ("passed", "decreasing_passed", "increasing_passed", "clt_passed", "within_5pct", "required",
              "mean_count", "target"):
        if k in report:
            lines.append(f"  {k}: {report[k]}")
    if "duality" in report:
        d = report["duality"]
        lines.append(f"  lhs={d.lhs_mean:.6g} rhs={d.rhs_mean:.6g} |diff|/se={d.z:.3g}")
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    out = args.out if args.out is not None else Path("kpplab_out") / args.command
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        cfg = load_config(args.config, args.replicas)
        if args.seed is not None and not 0 <= args.seed <= U64:
            raise ConfigError([f"seed {args.seed} is not a 64-bit unsigned integer"])
        seed = resolve_seed(args.seed, cfg.seed, default=0)
        if not 0 <= seed <= U64:
            raise ConfigError([f"seed {seed} is not a 64-bit unsigned integer"])
        out.mkdir(parents=True, exist_ok=True)
        report, artifacts, verdict = HANDLERS[args.command](cfg, seed)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON record
        fail = {
            "status": "error",
            "command": args.command,
            "error": type(exc).__name__,
            "message": str(exc),
            "violations": getattr(exc, "violations", []),
        }
        text = dumps(fail)
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write(out, "failure.json", text)
        except OSError:
            pass
        sys.stdout.write(text)
        return EXIT_ERROR

    full = {
        "command": args.command,
        "version": __version__,
        "seed": seed,
        "config": cfg.to_plain(),
        "verdict": bool(verdict),
        "results": report,
    }
    _write(out, "report.json", dumps(full))
    for name, text in sorted(artifacts.items()):
        _write(out, name, text)
    meta = {
        "started_utc": started.isoformat(),
        "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": argv,
        "seed_source": "flag" if args.seed is not None else ("env" if os.environ.get(SEED_ENV) else
                                                             ("config" if cfg.seed is not None else "default")),
    }
    _write(out, "metadata.json", dumps(meta))
    if not args.quiet:
        print(_summary(args.command, report, verdict))
    return 0 if verdict else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
