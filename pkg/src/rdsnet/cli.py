"""Command-line entry point: ``rdsnet <subcommand> [options]``.

Every subcommand writes CSV tables plus ``manifest.json`` into ``--out-dir``.
Runs with the same ``--seed`` and options produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import harness
from .baselines import SampleData, naive_estimate, vh_bootstrap_ci, vh_estimate
from .bma import fit, write_fit_report
from .design import read_trace_csv, write_trace_csv
from .diagnostics import ess, mc_variance, posterior_predictive_check, write_ppc_csv
from .graph import write_edge_list
from .mcmc import write_chain_csv
from .mrf import MrfParams

DESK_REPLICATES = 30
PAPER_REPLICATES = 100


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _sw_grid(text: str) -> list[tuple[int, float]]:
    """``"2:0.1,40:0.95"`` -> [(2, 0.1), (40, 0.95)]."""
    cells = []
    for item in text.split(","):
        if item.strip():
            deg, rw = item.split(":")
            cells.append((int(deg), float(rw)))
    return cells


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdsnet", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path, help="JSON regime/prior/kernel settings")
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {PAPER_REPLICATES} replicates instead of {DESK_REPLICATES}")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a population and one RDS sample")
    s.add_argument("--psi", type=float, help="truth psi (calibrated to the target if omitted)")

    f = sub.add_parser("fit", help="model-averaged posterior for an RDS sample CSV")
    f.add_argument("--data", type=Path, required=True)
    f.add_argument("--population", type=int, help="population size N (default: regime N)")
    f.add_argument("--density", type=float, help="prior centre for the edge density")
    f.add_argument("--ppc", type=int, default=0, help="posterior predictive replicates")
    f.add_argument("--chain-dumps", action="store_true", help="write per-chain CSV traces")

    sub.add_parser("regime", help="bias / coverage / length for one regime")

    w = sub.add_parser("sweep", help="MSE curve along one design axis")
    w.add_argument("--axis", choices=("coupons", "density", "sample-fraction"), required=True)
    w.add_argument("--grid", type=_floats, required=True)

    m = sub.add_parser("misspec", help="small-world truths under ER / product priors")
    m.add_argument("--grid", type=_sw_grid, default=_sw_grid("2:0.1,10:0.1,20:0.1,40:0.95"))
    m.add_argument("--families", default="er,product")

    t = sub.add_parser("sensitivity", help="posterior summaries over N and density grids")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--populations", type=_ints, required=True)
    t.add_argument("--densities", type=_floats, required=True)

    d = sub.add_parser("diagnose", help="ESS and Monte Carlo variance of a chain CSV")
    d.add_argument("--chain", type=Path, required=True)
    return p


def load_regime(args) -> harness.Regime:
    raw = json.loads(args.config.read_text()) if args.config else {}
    regime = harness.Regime.from_dict(raw)
    if "replicates" not in raw:
        regime = dataclasses.replace(
            regime, replicates=PAPER_REPLICATES if args.paper_scale else DESK_REPLICATES)
    return regime


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    regime = load_regime(args)
    handler = globals()[f"cmd_{args.command}"]
    outputs, extra = handler(args, regime, out)
    harness.write_manifest(out / "manifest.json", args.command, args.seed,
                           {"regime": regime.to_dict(), **extra}, outputs)
    return 0


def cmd_simulate(args, regime, out):
    ss = np.random.SeedSequence(args.seed)
    cal_ss, sim_ss = ss.spawn(2)
    psi = args.psi if args.psi is not None else (
        regime.psi if regime.psi is not None else harness.calibrate_psi(regime, cal_ss))
    sim = harness.simulate_sample(regime, MrfParams(psi, regime.zeta),
                                  np.random.default_rng(sim_ss))
    write_trace_csv(sim.data, out / "sample.csv")
    write_edge_list(sim.graph, out / "population_edges.txt")
    harness.write_rows([{"node": i, "response": int(v)} for i, v in enumerate(sim.y)],
                       out / "population_responses.csv")
    return (["sample.csv", "population_edges.txt", "population_responses.csv"],
            {"psi": psi, "q_emp": sim.q_emp})


def cmd_fit(args, regime, out):
    data = read_trace_csv(args.data, regime.m)
    cfg = regime.fit_config(population=args.population, density=args.density)
    if args.ppc:
        cfg = dataclasses.replace(cfg, keep_states=max(cfg.keep_states, 50))
    cfg = dataclasses.replace(cfg, threads=args.threads)
    fit_ss, boot_ss, ppc_ss = np.random.SeedSequence(args.seed).spawn(3)
    summary = fit(data, cfg, fit_ss)
    sd = SampleData.from_rds(data)
    lo, hi = vh_bootstrap_ci(sd, regime.bootstrap, regime.level,
                             np.random.default_rng(boot_ss), regime.bootstrap_scheme)
    outputs = ["fit_report.json", "estimates.csv", "pooled_samples.csv"]
    write_fit_report(summary, out / "fit_report.json", seed=args.seed)
    rows = [{"method": "bayes", "estimate": summary.estimate, "lower": summary.lower,
             "upper": summary.upper},
            {"method": "vh", "estimate": vh_estimate(sd.y, sd.degree), "lower": lo, "upper": hi},
            {"method": "naive", "estimate": naive_estimate(sd.y), "lower": "", "upper": ""}]
    harness.write_rows(rows, out / "estimates.csv", ("method", "estimate", "lower", "upper"))
    pooled = [{"chain": c, "draw": i, "q_mc": float(q)}
              for c, r in enumerate(summary.results) for i, q in enumerate(r.q_mc)]
    harness.write_rows(pooled, out / "pooled_samples.csv", ("chain", "draw", "q_mc"))
    if args.chain_dumps:
        for c, r in enumerate(summary.results):
            write_chain_csv(r, out / f"chain_{c}.csv")
            outputs.append(f"chain_{c}.csv")
    if args.ppc:
        states = [s for r in summary.results for s in r.states]
        res = posterior_predictive_check(states, data.trace.sample_size, float(sd.y.mean()),
                                         args.ppc, np.random.default_rng(ppc_ss))
        write_ppc_csv(res, out / "ppc_histogram.csv")
        outputs.append("ppc_histogram.csv")
    return outputs, {"population": cfg.population, "prior": dataclasses.asdict(cfg.graph_prior)}


def cmd_regime(args, regime, out):
    res = harness.run_regime(regime, args.seed, args.threads)
    return harness.write_regime(res, out), {"psi": res.psi, "failed": res.failed}


def cmd_sweep(args, regime, out):
    rows = harness.run_mse_sweep(args.axis, args.grid, regime, args.seed, args.threads)
    harness.write_rows(rows, out / "sweep.csv",
                       ("axis", "value", "method", "mse_mean", "mse_sd", "replicates", "failed"))
    return ["sweep.csv"], {"axis": args.axis, "grid": args.grid}


def cmd_misspec(args, regime, out):
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    rows = harness.run_misspec_study(args.grid, families, regime, args.seed, args.threads)
    cols = ("avg_degree", "rewire", "fit_family", "realized_density") + harness.AGG_COLUMNS
    harness.write_rows(rows, out / "misspec.csv", cols)
    return ["misspec.csv"], {"grid": args.grid, "families": families}


def cmd_sensitivity(args, regime, out):
    data = read_trace_csv(args.data, regime.m)
    rows = harness.run_sensitivity(data, args.populations, args.densities, regime, args.seed)
    harness.write_rows(rows, out / "sensitivity.csv", harness.SENS_COLUMNS)
    return ["sensitivity.csv"], {"populations": args.populations, "densities": args.densities}


def cmd_diagnose(args, regime, out):
    import csv
    with open(args.chain, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in reader.fieldnames or [] if c != "iter"]
        series = {c: [] for c in cols}
        for row in reader:
            for c in cols:
                series[c].append(float(row[c]))
    rows = []
    for c in cols:
        x = np.array(series[c])
        e = ess(x)
        rows.append({"series": c, "T": x.size, "mean": float(x.mean()), "ess": e.value,
                     "kappa": e.kappa, "mc_variance": mc_variance(x), "constant": e.constant})
    harness.write_rows(rows, out / "diagnostics.csv",
                       ("series", "T", "mean", "ess", "kappa", "mc_variance", "constant"))
    return ["diagnostics.csv"], {"chain": str(args.chain)}


if __name__ == "__main__":
    sys.exit(main())
