"""Simulations, sweeps and checks for three-body mean-field dynamics.

Subcommands: hartree, manybody, fluctuation, sweep, check, rates.

Exit codes: 0 success, 1 a check or cell failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .experiments import (DESK_CONFIG, ConfigError, ExperimentConfig, cell_alpha, checks_to_csv,
                          parse_config, run_cell, run_checks, run_sweep)
from .rates import RateModel, fit_slope

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parse_cell(text: str) -> tuple[int, float]:
    try:
        parts = dict(item.split("=", 1) for item in text.split(","))
    except ValueError:
        parts = {}
    if set(parts) != {"N", "t"}:
        raise ConfigError("--cell", f"expected N=..,t=.., got {text!r}")
    try:
        return int(parts["N"]), float(parts["t"])
    except ValueError:
        raise ConfigError("--cell", f"could not parse {text!r}") from None


def _load(args) -> ExperimentConfig:
    if args.config is None:
        text = DESK_CONFIG
    else:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _emit(text: str, args, name: str) -> None:
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _cells(cfg: ExperimentConfig, args):
    if args.cell:
        return [_parse_cell(args.cell)]
    return [(N, t) for N in cfg.N_list for t in cfg.t_list]


def cmd_hartree(cfg: ExperimentConfig, args) -> int:
    from .hartree import galerkin_evolve, trajectory_to_csv
    from .manybody import make_setup

    cells = _cells(cfg, args)
    N, T = cells[0][0], max(t for _, t in cells)
    setup = make_setup(cfg.d, cfg.n, cfg.L, cfg.K, cell_alpha(cfg, N), cfg.lam, cfg.phi0_array)
    nsteps = max(1, math.ceil(T / cfg.dt))
    traj = galerkin_evolve(setup.phi0, setup.tensor, setup.basis, T, cfg.dt,
                           sample_every=max(1, nsteps // 20))
    _emit(trajectory_to_csv(traj), args, "hartree.csv")
    return EXIT_OK


def cmd_manybody(cfg: ExperimentConfig, args) -> int:
    local = replace(cfg, fluct_max_N=0)
    records = [run_cell(local, N, t) for N, t in _cells(cfg, args)]
    keep = ["N", "K", "eta", "alpha", "t", "trace_distance", "mass", "energy", "runtime_ms", "error"]
    out = [{k: r[k] for k in keep if k in r} for r in records]
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args, "manybody.json")
    return EXIT_FAIL if any("error" in r for r in records) else EXIT_OK


def cmd_fluctuation(cfg: ExperimentConfig, args) -> int:
    from .fluctuation import ExactFluctuation, moment_growth
    from .fock import FockBasis
    from .hartree import GalerkinFlow
    from .manybody import make_setup

    out = []
    T = max(cfg.t_list)
    grid = np.linspace(0.0, T, 11)
    for N, _ in _cells(replace(cfg, t_list=(T,)), args):
        if N > cfg.fluct_max_N:
            continue
        setup = make_setup(cfg.d, cfg.n, cfg.L, cfg.K, cell_alpha(cfg, N), cfg.lam, cfg.phi0_array)
        flow = GalerkinFlow(setup.phi0, setup.tensor, setup.basis)
        ex = ExactFluctuation(setup.tensor, FockBasis(cfg.K, cfg.N_max or 4 * N), N, flow)
        rec = {"N": N}
        for j in (1, 2):
            res = moment_growth(ex, j, grid)
            rec[f"moments_j{j}"] = {k: res[k] for k in ("t", "series", "rate", "max_abs_residual", "saturated")}
        out.append(rec)
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args, "fluctuation.json")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    cells = [_parse_cell(args.cell)] if args.cell else None
    report = run_sweep(cfg, workers=args.workers, cells=cells)
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.csv())
    for r in report.failed:
        print(f"cell N={r['N']} t={r['t']} failed: {r['error']}", file=sys.stderr)
    return EXIT_FAIL if report.failed else EXIT_OK


def cmd_check(args) -> int:
    selection = None
    if args.only is not None:
        selection = [s for s in args.only.split(",") if s]
    try:
        rows = run_checks(selection)
    except KeyError as exc:
        raise ConfigError("--only", str(exc)) from None
    _emit(checks_to_csv(rows), args, "checks.csv")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def cmd_rates(cfg: ExperimentConfig, args) -> int:
    model = RateModel(cfg.a, cfg.eta)
    out = {"a": cfg.a, "eta": model.eta, "theorem_rate": model.theorem_rate,
           "predicted_slopes": model.predicted_slopes()}
    if args.csv:
        try:
            with open(args.csv) as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise ConfigError("--csv", str(exc)) from None
        by_t: dict = {}
        for r in rows:
            by_t.setdefault(r["t"], []).append((float(r["N"]), float(r["trace_distance"])))
        out["fitted_slopes"] = {}
        for t, pts in sorted(by_t.items()):
            pts = [p for p in pts if math.isfinite(p[1]) and p[1] > 0]
            if len(pts) >= 3:
                out["fitted_slopes"][t] = fit_slope(pts).slope
    buf = io.StringIO()
    json.dump(out, buf, indent=2, sort_keys=True)
    _emit(buf.getvalue() + "\n", args, "rates.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quinticmf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("hartree", "Galerkin Hartree trajectory as CSV"),
                        ("manybody", "many-body vs Hartree trace distance per cell"),
                        ("fluctuation", "number-moment growth along the fluctuation dynamics"),
                        ("sweep", "full sweep over N and t with slope fits"),
                        ("check", "pass/fail table of named checks"),
                        ("rates", "predicted exponents, optionally fitted slopes from a sweep CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config (default: built-in desk config)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed", type=int)
        s.add_argument("--cell", help="single cell, e.g. N=8,t=0.5")
        if name == "check":
            s.add_argument("--only", help="comma-separated check names (empty string: none)")
        if name == "rates":
            s.add_argument("--csv", help="sweep CSV to fit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args)
        cfg = _load(args)
        handler = {"hartree": cmd_hartree, "manybody": cmd_manybody, "fluctuation": cmd_fluctuation,
                   "sweep": cmd_sweep, "rates": cmd_rates}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
