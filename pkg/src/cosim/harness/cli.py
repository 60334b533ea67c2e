"""Command line entry point: ``cosim {run,converge,stability,pitfall,balance} <config>``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..model import ConfigurationError, HRule
from ..orchestrator import CosimFailure, run_cosim
from .config import Experiment, flatten_experiment, load_experiment
from .output import write_csv, write_manifest
from .studies import (balance_correction_study, balance_variants, convergence_study,
                      order_variants, pitfall_experiment, pitfall_variants, stability_experiment)

log = logging.getLogger("cosim")


def _echo(out: Path, exp: Experiment, command: str) -> Path:
    return write_csv(out / "config.csv", ("key", "value"), flatten_experiment(exp, command))


def cmd_run(exp: Experiment, out: Path):
    p = exp.problem
    run = run_cosim(p.system, p.partition, exp.scheme)
    dim = p.system.dim
    header = ["t"] + [f"x{i}" for i in range(dim)]
    cols = [run.grid.times] + [run.states[:, i] for i in range(dim)]
    if run.energy is not None:
        header.append("energy")
        cols.append(run.energy)
    files = [write_csv(out / "trajectory.csv", header, zip(*cols))]
    extra = {"wiring_acyclic": run.wiring.acyclic, "intervals": run.grid.N}
    if run.balance:
        rows = []
        for (k, i), rec in run.balance.items():
            for j in range(run.grid.N):
                a, b = run.grid.interval(j)
                rows.append((j, a, b, k, i, rec["delta"][j], rec["delivered"][j], rec["sender"][j]))
        files.append(write_csv(out / "balance.csv",
                               ("interval", "t_start", "t_end", "receiver", "state",
                                "delta", "delivered", "sender"), rows))
        extra["residual"] = {f"{k}:{i}": v for (k, i), v in run.residual.items()}
        extra["conservation_defect"] = {f"{k}:{i}": run.conservation_defect((k, i))
                                        for (k, i) in run.balance}
    return files, extra


def _report_files(out: Path, report, dim: int) -> list:
    header = (["variant", "H", "h", "status", "err_end", "err_sup"]
              + [f"err_x{i}" for i in range(dim)] + [f"signed_x{i}" for i in range(dim)]
              + ["log2_ratio", "micro_steps"])
    rows = []
    for name in report.variants():
        ratios = report.fits[name].ratios
        ok_idx = 0
        for r in report.rows_for(name):
            if r.status == "ok" and ok_idx > 0 and ok_idx - 1 < len(ratios):
                ratio = ratios[ok_idx - 1]
            else:
                ratio = float("nan")
            if r.status == "ok":
                ok_idx += 1
            rows.append([name, r.H, r.h, r.status, r.err_end, r.err_sup, *r.err_components,
                         *r.signed_end, ratio, r.micro_steps])
    f1 = write_csv(out / "convergence.csv", header, rows)
    order_rows = []
    for name in report.variants():
        fit = report.fits[name]
        flag = report.flags.get(name, {}).get("local_minimum", "")
        order_rows.append((name, fit.order_end, fit.order_sup, flag))
    f2 = write_csv(out / "orders.csv", ("variant", "order_end", "order_sup", "local_minimum"),
                   order_rows)
    return [f1, f2]


def _orders_extra(report) -> dict:
    return {"orders": {n: report.fits[n].order_end for n in report.variants()}}


def cmd_converge(exp: Experiment, out: Path):
    variants = exp.variants or order_variants(exp.scheme.solver, exp.scheme.h_rule)
    report = convergence_study(exp.problem, variants, exp.H_levels())
    return _report_files(out, report, exp.problem.system.dim), _orders_extra(report)


def cmd_balance(exp: Experiment, out: Path):
    variants = exp.variants or balance_variants(exp.scheme.solver, exp.scheme.h_rule,
                                                spread=(1, 2), weight_kind=exp.scheme.weight_kind)
    report = balance_correction_study(exp.problem, variants, exp.H_levels())
    return _report_files(out, report, exp.problem.system.dim), _orders_extra(report)


def cmd_pitfall(exp: Experiment, out: Path):
    variants = exp.variants or pitfall_variants(exp.pitfall["ratio"], exp.pitfall["extrapolation"])
    report = pitfall_experiment(exp.problem, variants, exp.H_levels())
    extra = _orders_extra(report)
    extra["local_minimum"] = {n: f["local_minimum"] for n, f in report.flags.items()}
    return _report_files(out, report, exp.problem.system.dim), extra


def cmd_stability(exp: Experiment, out: Path):
    st = exp.stability
    rep = stability_experiment(exp.problem, st["extrapolations"], st["H"],
                               solver=st.get("solver"), h_rule=st.get("h_rule"), delta=st["delta"])
    rows = []
    for s in rep.series + [rep.reference]:
        for t, E in zip(s.times, s.energy):
            rows.append((s.variant, s.H, t, E))
    f1 = write_csv(out / "energy.csv", ("variant", "H", "t", "energy"), rows)
    verdicts = [(s.variant, s.H, s.energy[0], s.energy[-1], s.relative_drift,
                 "unstable" if s.unstable else "stable") for s in rep.series + [rep.reference]]
    f2 = write_csv(out / "verdicts.csv",
                   ("variant", "H", "E_start", "E_end", "relative_drift", "verdict"), verdicts)
    return [f1, f2], {"delta": rep.delta}


COMMANDS = {
    "run": cmd_run,
    "converge": cmd_converge,
    "stability": cmd_stability,
    "pitfall": cmd_pitfall,
    "balance": cmd_balance,
}


def _apply_overrides(exp: Experiment, args) -> Experiment:
    if args.levels is not None:
        if args.levels < 2:
            raise ConfigurationError("--levels must be at least 2")
        exp.levels = args.levels
    if args.h_rule is not None:
        rule = HRule.parse(args.h_rule)
        exp.scheme = replace(exp.scheme, h_rule=rule)
        exp.variants = {n: replace(v, h_rule=rule) for n, v in exp.variants.items()}
        exp.stability["h_rule"] = rule
        if rule.kind == "proportional":
            exp.pitfall["ratio"] = int(rule.value)
    return exp


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cosim", description="Explicit co-simulation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML experiment file")
        p.add_argument("--out", default=None, help="output directory (default: out/<command>)")
        p.add_argument("--h-rule", dest="h_rule", default=None,
                       help="proportional:C, fixed:H or adaptive")
        p.add_argument("--levels", type=int, default=None, help="number of H levels")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Path(args.out or Path("out") / args.command)
    try:
        exp = _apply_overrides(load_experiment(args.config), args)
        out.mkdir(parents=True, exist_ok=True)
        files, extra = COMMANDS[args.command](exp, out)
        files.append(_echo(out, exp, args.command))
    except (ConfigurationError, OSError) as exc:
        print(f"cosim: error: {exc}", file=sys.stderr)
        return 2
    except CosimFailure as exc:
        print(f"cosim: run failed: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, args.command, files, extra)
    log.info("wrote %d files to %s", len(files) + 1, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
