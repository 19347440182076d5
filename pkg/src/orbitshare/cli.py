"""Command-line entry point: ``python -m orbitshare <command> ...``.

Tabular results go to CSV, a run summary to JSON. Without ``--out`` the CSV
is written to stdout (or the JSON summary, with ``--json``); diagnostics
always go to stderr. Exit status: 0 success, 1 invalid input, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

from orbitshare import deanalysis
from orbitshare.config import ConfigParseError, ConfigValidationError, RunConfig, parse_config
from orbitshare.linkbudget import GEO_REFERENCE, LEO_REFERENCE, snr
from orbitshare.phy import InfeasibleRateError, Service, TinSicModel, tau
from orbitshare.sweep import (
    PAIR_MODES,
    DegenerateLoadError,
    LoadGrid,
    PeakAtEdgeWarning,
    SweepPlan,
    benchmark,
    pair_rates,
    pair_sweep_scenario_b,
    rate_grid,
    rate_sweep_scenario_a,
    simulate_point,
)

LINKBUDGET_COLUMNS = ("receiver", "rx_power_dbw", "noise_power_dbw", "snr_db", "snr_linear", "overridden")
DE_COLUMNS = ("tau", "threshold_g", "rate", "snr_db", "approx_max_throughput")
SWEEP_RATE_COLUMNS = ("scenario", "service", "rate", "tau", "load_configured", "load_actual",
                      "u_leo", "u_geo", "ps", "ci", "throughput", "de_approx", "is_peak")
SIMULATE_COLUMNS = SWEEP_RATE_COLUMNS + ("alpha", "beta", "rate_other")
SWEEP_PAIRS_COLUMNS = ("alpha", "beta", "rate_leo", "rate_geo", "s_leo", "s_geo",
                       "bench_leo", "bench_geo", "quadrant")

# SNRs pinned for the reproduction bundles when no config is given
REPRODUCE_SNR_DB = {Service.LEO: 5.36, Service.GEO: -2.99}


class UsageError(ValueError):
    """Bad arguments or inputs; maps to exit status 1."""


@dataclass(frozen=True)
class Bundle:
    """Grids and seed of one ``reproduce`` target."""

    name: str
    kind: str  # "rate" or "pairs"
    betas: tuple = (1.0,)
    alphas: tuple = (1, 2, 4, 5, 8)
    services: tuple = (Service.LEO, Service.GEO)
    min_rate: float = 0.1
    min_rate_pairs: float = 0.3
    rate_step: Optional[float] = 0.02
    loads: LoadGrid = LoadGrid(0.1, 4.0, 0.05)
    pair_loads: LoadGrid = LoadGrid(0.1, 4.0, 0.1)
    n_frames: int = 2000
    master_seed: int = 20240101


BUNDLES = {
    "fig3": Bundle("fig3", "rate"),
    "fig4": Bundle("fig4", "pairs", betas=(1.0,)),
    "fig6": Bundle("fig6", "pairs", betas=(0.25, 4.0)),
}


# -- formatting -------------------------------------------------------------------

def fmt(value) -> str:
    """CSV cell text; floats keep 17 significant digits so they round-trip."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Service):
        return value.value.lower()
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def to_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, Service):
        return x.value.lower()
    if isinstance(x, dict):
        return {str(_jsonable(k)): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def to_json(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"


def _point_row(p) -> dict:
    return dict(scenario=p.scenario, service=p.service, rate=p.rate, tau=p.tau,
                load_configured=p.load_configured, load_actual=p.load_actual, u_leo=p.u_leo,
                u_geo=p.u_geo, ps=p.p_s, ci=p.ci_halfwidth, throughput=p.throughput,
                de_approx=p.de_approx, is_peak=p.is_peak, alpha=p.alpha, beta=p.beta,
                rate_other=p.rate_other)


def _pair_row(pc) -> dict:
    return dict(alpha=pc.alpha, beta=pc.beta, rate_leo=pc.rate_leo, rate_geo=pc.rate_geo,
                s_leo=pc.s_leo, s_geo=pc.s_geo, bench_leo=pc.bench_leo, bench_geo=pc.bench_geo,
                quadrant=pc.quadrant)


# -- inputs -----------------------------------------------------------------------

def _load_config(args) -> Optional[RunConfig]:
    if not args.config:
        return None
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = parse_config(text, strict=not args.lenient)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return cfg


def _models(cfg: Optional[RunConfig], pinned: bool = False) -> dict:
    if cfg is not None:
        links = {Service.LEO: cfg.link_leo, Service.GEO: cfg.link_geo}
    else:
        links = {Service.LEO: LEO_REFERENCE, Service.GEO: GEO_REFERENCE}
        if pinned:
            links = {s: replace(p, snr_override_db=REPRODUCE_SNR_DB[s]) for s, p in links.items()}
    return {s: TinSicModel.from_db(snr(p).snr_db, s) for s, p in links.items()}


def _service(name: str) -> Service:
    return Service.LEO if name.lower() == "leo" else Service.GEO


def _plan(args, cfg: Optional[RunConfig], scenario: str, **over) -> SweepPlan:
    base = dict(
        loads=cfg.loads if cfg else LoadGrid(),
        n_frames=cfg.n_frames if cfg else 2000,
        master_seed=cfg.master_seed if cfg else 0,
        beta=cfg.beta if cfg else 1.0,
        n_leo_slots=cfg.n_leo_slots if cfg else 400,
        pair_mode=cfg.pair_mode if cfg else PAIR_MODES[0],
    )
    base.update(over)
    if args.frames is not None:
        base["n_frames"] = args.frames
    if args.seed is not None:
        base["master_seed"] = args.seed
    if getattr(args, "pair_mode", None):
        base["pair_mode"] = args.pair_mode
    return SweepPlan(scenario=scenario, jobs=args.jobs, **base)


def _de_cfg(cfg: Optional[RunConfig]) -> deanalysis.DeConfig:
    return cfg.de if cfg else deanalysis.DeConfig()


@lru_cache(maxsize=None)
def _benchmark(service: Service, model: TinSicModel, min_rate: float, plan: SweepPlan,
               de_cfg: deanalysis.DeConfig):
    return benchmark(service, model, min_rate, plan, de_cfg)


# -- commands ---------------------------------------------------------------------

def cmd_linkbudget(args, cfg):
    if cfg is not None:
        links = {Service.LEO: cfg.link_leo, Service.GEO: cfg.link_geo}
    else:
        links = {Service.LEO: LEO_REFERENCE, Service.GEO: GEO_REFERENCE}
    rows = []
    for s, p in links.items():
        if args.no_override:
            p = replace(p, snr_override_db=None)
        res = snr(p)
        rows.append(dict(receiver=s, rx_power_dbw=res.rx_power_dbw, noise_power_dbw=res.noise_power_dbw,
                         snr_db=res.snr_db, snr_linear=res.snr_linear,
                         overridden=p.snr_override_db is not None))
    summary = {"command": "linkbudget", "snr_db": {r["receiver"].value.lower(): r["snr_db"] for r in rows}}
    return {"linkbudget": (LINKBUDGET_COLUMNS, rows)}, summary


def cmd_de_threshold(args, cfg):
    de_cfg = _de_cfg(cfg)
    rows = []
    if args.tau is not None:
        if args.rate:
            raise UsageError("give either --tau or --rate, not both")
        for t in args.tau:
            if t < 0:
                raise UsageError("tau must be non-negative")
            rows.append(dict(tau=t, threshold_g=deanalysis.threshold(t, de_cfg)))
    elif args.rate:
        if args.snr_db is not None:
            model = TinSicModel.from_db(args.snr_db, _service(args.service))
        else:
            model = _models(cfg)[_service(args.service)]
        snr_db = 10 * math.log10(model.snr_linear)
        for r in args.rate:
            res = deanalysis.analyze(r, model, de_cfg)
            rows.append(dict(tau=res.tau, threshold_g=res.threshold_g, rate=r, snr_db=snr_db,
                             approx_max_throughput=res.approx_max_throughput))
    else:
        raise UsageError("de-threshold needs --tau or --rate")
    summary = {"command": "de-threshold", "results": rows}
    return {"de-threshold": (DE_COLUMNS, rows)}, summary


def cmd_simulate(args, cfg):
    scenario = args.scenario or (cfg.scenario if cfg else "a")
    alpha = args.alpha or (cfg.alpha if cfg else 1)
    plan = _plan(args, cfg, scenario, **({"beta": args.beta} if args.beta else {}))
    models = _models(cfg)
    service = _service(args.service or (cfg.service if cfg else "leo"))
    if scenario == "b" and plan.n_leo_slots % alpha:
        raise UsageError(f"alpha {alpha} does not divide {plan.n_leo_slots}")
    points = simulate_point(plan, args.load, models[Service.LEO], models[Service.GEO], args.rate,
                            service=service, alpha=alpha if scenario == "b" else 1,
                            rate_geo=args.rate_geo, de_cfg=_de_cfg(cfg))
    rows = [_point_row(p) for p in points]
    summary = {"command": "simulate", "scenario": scenario, "n_frames": plan.n_frames,
               "master_seed": plan.master_seed,
               "results": [{k: r[k] for k in ("service", "rate", "ps", "ci", "throughput")} for r in rows]}
    return {"simulate": (SIMULATE_COLUMNS, rows)}, summary


def _rate_sweep(plan, models, services, rates_for, de_cfg):
    rows, peaks, skipped, edges = [], {}, {}, 0
    for svc in services:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PeakAtEdgeWarning)
            res, skip = rate_sweep_scenario_a(svc, models[svc], rates_for(svc), plan, de_cfg)
        edges += sum(issubclass(w.category, PeakAtEdgeWarning) for w in caught)
        skipped[svc] = skip
        peaks[svc] = [dict(rate=pk.peak.rate, tau=pk.peak.tau, peak=pk.peak.throughput,
                           load=pk.peak.load_configured, ci=pk.peak.ci_halfwidth,
                           de_approx=pk.peak.de_approx, at_edge=pk.at_edge) for pk in res]
        for pk in res:
            rows.extend(_point_row(p) for p in pk.points)
    if edges:
        print(f"warning: {edges} throughput peak(s) on a load-grid edge", file=sys.stderr)
    rows.sort(key=lambda r: (r["service"].value, r["rate"], r["load_configured"]))
    return rows, {"peaks": peaks, "skipped_rates": skipped, "edge_peaks": edges}


def cmd_sweep_rate(args, cfg):
    plan = _plan(args, cfg, "a")
    models = _models(cfg)
    services = ([Service.LEO, Service.GEO] if args.service == "both"
                else [_service(args.service or (cfg.service if cfg else "leo"))])
    explicit = args.rates or (cfg.rates if cfg else [])
    min_rate = args.min_rate or (cfg.min_rate if cfg else 0.1)
    step = args.rate_step if args.rate_step is not None else (cfg.rate_step if cfg else 0.02)
    if explicit and cfg is not None and not cfg.skip_infeasible:
        for svc in services:
            bad = [r for r in explicit if r >= models[svc].capacity]
            if bad:
                raise UsageError(f"rates {bad} exceed the {svc.value} single-user capacity")

    def rates_for(svc):
        return explicit or rate_grid(models[svc], min_rate, step or None)

    rows, info = _rate_sweep(plan, models, services, rates_for, _de_cfg(cfg))
    summary = {"command": "sweep-rate", "n_frames": plan.n_frames, "master_seed": plan.master_seed, **info}
    return {"sweep-rate": (SWEEP_RATE_COLUMNS, rows)}, summary


def _pair_sweep(plan, models, alphas, betas, min_rate, min_rate_pairs, bench_plan, de_cfg,
                bench=(None, None)):
    bl, bg = bench
    bench_info = {}
    if bl is None or bg is None:
        pk_l = _benchmark(Service.LEO, models[Service.LEO], min_rate, bench_plan, de_cfg)
        pk_g = _benchmark(Service.GEO, models[Service.GEO], min_rate, bench_plan, de_cfg)
        bl = pk_l.peak.throughput if bl is None else bl
        bg = pk_g.peak.throughput if bg is None else bg
        bench_info = {"leo": {"rate": pk_l.peak.rate, "tau": pk_l.peak.tau, "load": pk_l.peak.load_configured,
                              "throughput": pk_l.peak.throughput, "ci": pk_l.peak.ci_halfwidth},
                      "geo": {"rate": pk_g.peak.rate, "tau": pk_g.peak.tau, "load": pk_g.peak.load_configured,
                              "throughput": pk_g.peak.throughput, "ci": pk_g.peak.ci_halfwidth}}
    results = []
    for beta in betas:
        alpha_rates = {a: pair_rates(a, models[Service.LEO], models[Service.GEO], min_rate_pairs)
                       for a in alphas}
        results += pair_sweep_scenario_b(alpha_rates, models[Service.LEO], models[Service.GEO],
                                         replace(plan, beta=beta), bl, bg)
    rows = sorted((_pair_row(pc) for pc in results), key=lambda r: (r["beta"], r["alpha"], r["rate_leo"]))
    best = {}
    for beta in betas:
        sub = [r for r in rows if r["beta"] == beta]
        if sub:
            bl_row = max(sub, key=lambda r: r["s_leo"])
            bg_row = max(sub, key=lambda r: r["s_geo"])
            counts = {}
            for r in sub:
                counts[r["quadrant"]] = counts.get(r["quadrant"], 0) + 1
            best[str(beta)] = {
                "best_s_leo": {k: bl_row[k] for k in ("alpha", "rate_leo", "s_leo")},
                "best_s_geo": {k: bg_row[k] for k in ("alpha", "rate_geo", "s_geo")},
                "leo_gain": bl_row["s_leo"] / bl - 1.0,
                "geo_gain": bg_row["s_geo"] / bg - 1.0,
                "quadrants": dict(sorted(counts.items())),
            }
    info = {"bench_leo": bl, "bench_geo": bg, "benchmarks": bench_info, "by_beta": best,
            "pair_mode": plan.pair_mode}
    return rows, info


def cmd_sweep_pairs(args, cfg):
    plan = _plan(args, cfg, "b")
    if args.load_step:
        plan = replace(plan, loads=replace(plan.loads, step=args.load_step))
    models = _models(cfg)
    alphas = args.alphas or (cfg.alphas if cfg else [1, 2, 4, 5, 8])
    for a in alphas:
        if a < 1 or plan.n_leo_slots % a:
            raise UsageError(f"alpha {a} does not divide {plan.n_leo_slots}")
    betas = args.beta or [plan.beta]
    if any(not b > 0 for b in betas):
        raise UsageError("beta must be positive")
    min_rate = cfg.min_rate if cfg else 0.1
    min_pairs = args.min_rate or (cfg.min_rate_pairs if cfg else 0.3)
    bench_plan = replace(plan, scenario="a", loads=cfg.loads if cfg else LoadGrid())
    rows, info = _pair_sweep(plan, models, alphas, betas, min_rate, min_pairs, bench_plan,
                             _de_cfg(cfg), (args.bench_leo, args.bench_geo))
    summary = {"command": "sweep-pairs", "n_frames": plan.n_frames, "master_seed": plan.master_seed, **info}
    return {"sweep-pairs": (SWEEP_PAIRS_COLUMNS, rows)}, summary


def bundle_plan(bundle: Bundle, args, kind: str) -> SweepPlan:
    loads = bundle.loads if kind == "a" else bundle.pair_loads
    frames = args.frames if args.frames is not None else bundle.n_frames
    seed = args.seed if args.seed is not None else bundle.master_seed
    mode = args.pair_mode or PAIR_MODES[0]
    return SweepPlan(kind, loads, frames, seed, jobs=args.jobs, pair_mode=mode)


def cmd_reproduce(args, cfg):
    bundle = BUNDLES[args.target]
    models = _models(cfg, pinned=True)
    de_cfg = _de_cfg(cfg)
    plan_a = bundle_plan(bundle, args, "a")
    if bundle.kind == "rate":
        rows, info = _rate_sweep(plan_a, models, bundle.services,
                                 lambda s: rate_grid(models[s], bundle.min_rate, bundle.rate_step), de_cfg)
        columns = SWEEP_RATE_COLUMNS
    else:
        plan_b = bundle_plan(bundle, args, "b")
        rows, info = _pair_sweep(plan_b, models, bundle.alphas, bundle.betas, bundle.min_rate,
                                 bundle.min_rate_pairs, plan_a, de_cfg)
        columns = SWEEP_PAIRS_COLUMNS
    summary = {"command": f"reproduce {bundle.name}", "n_frames": plan_a.n_frames,
               "master_seed": plan_a.master_seed,
               "snr_db": {s.value.lower(): 10 * math.log10(m.snr_linear) for s, m in models.items()},
               **info}
    return {bundle.name: (columns, rows)}, summary


COMMANDS = {
    "linkbudget": cmd_linkbudget,
    "de-threshold": cmd_de_threshold,
    "simulate": cmd_simulate,
    "sweep-rate": cmd_sweep_rate,
    "sweep-pairs": cmd_sweep_pairs,
    "reproduce": cmd_reproduce,
}


# -- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_jobs() -> int:
    raw = os.environ.get("ORBITSHARE_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"ORBITSHARE_JOBS must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--frames", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--lenient", action="store_true", help="warn on unknown config keys")
    common.add_argument("--out", metavar="DIR", help="write <name>.csv and <name>.json here")
    common.add_argument("--json", action="store_true", help="print the JSON summary instead of CSV")
    common.add_argument("--pair-mode", choices=PAIR_MODES)

    p = _Parser(prog="orbitshare", description="Shared-spectrum LEO/GEO random access experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("linkbudget", parents=[common], help="receiver SNRs from the link budget")
    s.add_argument("--no-override", action="store_true", help="ignore snr_override_db")

    s = sub.add_parser("de-threshold", parents=[common], help="density-evolution thresholds")
    s.add_argument("--tau", type=int, nargs="+")
    s.add_argument("--rate", type=float, nargs="+")
    s.add_argument("--snr-db", type=float)
    s.add_argument("--service", choices=("leo", "geo"), default="leo")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate at one load")
    s.add_argument("--scenario", choices=("a", "b"))
    s.add_argument("--service", choices=("leo", "geo"))
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--rate-geo", type=float)
    s.add_argument("--load", type=float, required=True)
    s.add_argument("--alpha", type=int)
    s.add_argument("--beta", type=float)

    s = sub.add_parser("sweep-rate", parents=[common], help="segregated-band peak throughput vs rate")
    s.add_argument("--service", choices=("leo", "geo", "both"))
    s.add_argument("--rates", type=float, nargs="+")
    s.add_argument("--min-rate", type=float)
    s.add_argument("--rate-step", type=float, help="0 for boundary rates only")

    s = sub.add_parser("sweep-pairs", parents=[common], help="shared-band throughput pairs")
    s.add_argument("--alphas", type=int, nargs="+")
    s.add_argument("--beta", type=float, nargs="+")
    s.add_argument("--min-rate", type=float, help="lowest LEO rate of a pair")
    s.add_argument("--bench-leo", type=float)
    s.add_argument("--bench-geo", type=float)
    s.add_argument("--load-step", type=float)

    s = sub.add_parser("reproduce", parents=[common], help="run a bundled figure grid")
    s.add_argument("target", choices=sorted(BUNDLES))
    return p


def _emit(outputs: dict, summary: dict, args) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, (columns, rows) in outputs.items():
            (out / f"{name}.csv").write_text(to_csv(columns, rows), encoding="utf-8")
            (out / f"{name}.json").write_text(to_json(summary), encoding="utf-8")
            print(f"wrote {out / (name + '.csv')} and {name}.json", file=sys.stderr)
        return
    if args.json:
        sys.stdout.write(to_json(summary))
    else:
        for columns, rows in outputs.values():
            sys.stdout.write(to_csv(columns, rows))


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs is None:
            args.jobs = _default_jobs()
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.frames is not None and args.frames < 1:
            raise UsageError("--frames must be >= 1")
        cfg = _load_config(args)
        if cfg is not None and not args.out and cfg.out_dir:
            args.out = cfg.out_dir
        outputs, summary = COMMANDS[args.command](args, cfg)
        _emit(outputs, summary, args)
        return 0
    except (UsageError, ConfigParseError, ConfigValidationError, InfeasibleRateError,
            DegenerateLoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())
