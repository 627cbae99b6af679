"""Command-line entry point: ``multihop <command> [options]``.

Outputs go to ``--out`` when given, otherwise to ``$MULTIHOP_OUTPUT_DIR``
(one file per command) when that variable is set, otherwise to stdout.
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import aloha, distributions, fairness, netsim, shaper, tail, transport
from .report import ReportDocument, dumps_csv, emit_report

OUTPUT_DIR_ENV = "MULTIHOP_OUTPUT_DIR"


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (stop included) or a comma-separated list."""
    if ":" not in text:
        try:
            return [float(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from exc
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}") from exc
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [float(f"{start + k * step:.12g}") for k in range(count)]


def _float_list(text: str) -> list[float]:
    return parse_grid(text)


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multihop",
                                 description="Delay, throughput and shaping analysis of "
                                             "multihop buffered-Aloha networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def hop_args(p):
        p.add_argument("--theta", type=float, required=True, help="node throughput per slot")
        p.add_argument("--q", type=_probability, required=True, help="retransmission probability")
        p.add_argument("--nint", type=float, required=True, help="nodes inside the interference range")
        p.add_argument("--p", type=_probability, help="success probability (solved when omitted)")
        p.add_argument("--equation", choices=("attempt", "throughput"), default="attempt",
                       help="contention fixed point used to solve p")

    p = sub.add_parser("analyze", help="hop, transport and flow statistics")
    hop_args(p)
    p.add_argument("--dist", required=True, help="hop-count law, e.g. geometric:0.2")
    p.add_argument("--phi", type=int, help="hop cutoff for continuous laws")
    p.add_argument("--n", type=int, default=100, help="node count for population figures")
    p.add_argument("--out")

    p = sub.add_parser("tail", help="transport-delay tail bounds as CSV")
    hop_args(p)
    p.add_argument("--el", type=_float_list, required=True,
                   help="mean hop counts of geometric laws, comma separated")
    p.add_argument("--x", type=parse_grid, required=True, help="x grid start:stop:step")
    p.add_argument("--lower", choices=("eq74", "exact"), default="eq74")
    p.add_argument("--mc", type=int, default=0, help="Monte Carlo samples (0 disables)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("scaling", help="power-law exponent and throughput versus region radius")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--coverage", type=float, default=0.99)
    p.add_argument("--rt", type=parse_grid, required=True, help="radius grid start:stop:step")
    p.add_argument("--out")

    p = sub.add_parser("optimize", help="fair rate allocation")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--phi", type=int, required=True)
    crit = p.add_mutually_exclusive_group(required=True)
    crit.add_argument("--fairness", choices=("prop", "maxmin"))
    crit.add_argument("--u-target", type=float, help="workload-bias target")
    p.add_argument("--objective", choices=("log-sum", "throughput", "min-rate"),
                   default="log-sum", help="objective maximized under the bias constraint")
    p.add_argument("--starts", type=int, default=24)
    p.add_argument("--seed", type=int, default=20080509)
    p.add_argument("--out")

    p = sub.add_parser("simulate", help="Monte Carlo network simulation")
    p.add_argument("--mode", choices=netsim.MODES)
    p.add_argument("--config", required=True, help="JSON file with SimConfig fields")
    p.add_argument("--slots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", action="store_true", help="include transport-delay samples")
    p.add_argument("--series", help="write the queue time series as CSV")
    p.add_argument("--out")

    p = sub.add_parser("shape", help="parallel token-bucket shaping run")
    p.add_argument("--r", type=float, required=True, help="total token rate per slot")
    p.add_argument("--b", type=float, required=True, help="bucket size")
    p.add_argument("--phi", type=int, required=True)
    p.add_argument("--rule", choices=("equal", "prop"), default="equal")
    p.add_argument("--slots", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arrivals", type=_float_list,
                   help="per-class Bernoulli probabilities (saturated when omitted)")
    p.add_argument("--drop", action="store_true", help="drop instead of queueing")
    p.add_argument("--trace", help="write the per-slot trace as CSV")
    p.add_argument("--out")
    return ap


def _hop_model(args) -> aloha.AlohaHopModel:
    p = args.p if args.p is not None else aloha.solve_success_probability(
        args.theta, args.nint, args.q, args.equation)
    return aloha.AlohaHopModel(p, args.q, args.theta)


def _cmd_analyze(args):
    pmf = distributions.parse_distribution(args.dist, args.phi)
    hop = _hop_model(args)
    model = transport.TransportModel(pmf, hop)
    ts = transport.transport_stats(model)
    ds = distributions.distance_stats(pmf)
    flow = transport.flow_relations(args.theta, pmf, hop, args.n)
    disp = transport.dispersion_varY(pmf, hop)
    doc = ReportDocument("analyze", vars(args).copy())
    doc.sections = {
        "hop": {"success_probability": hop.p, **hop.to_dict(),
                "access_capacity": aloha.access_capacity(args.nint)},
        "distance": {"phi": pmf.phi, "mean": ds.mean, "second_moment": ds.second_moment,
                     "residual_mean": ds.residual_mean, "workload_bias": ds.workload_bias},
        "transport": {"mean": ts.mean, "second_moment": ts.second_moment,
                      "variance": ts.variance, "residual_mean": ts.residual_mean},
        "flow": dataclasses.asdict(flow),
        "dispersion": dataclasses.asdict(disp),
    }
    return [(doc, "json")]


def _cmd_tail(args):
    hop = _hop_model(args)
    hop_pmf = aloha.perhop_pmf(hop)
    out = []
    for el in args.el:
        if el < 1:
            raise ValueError(f"mean hop count {el} is below one")
        pmf = distributions.HopCountPmf.geometric(1.0 / el)
        curve = tail.tail_bounds(pmf, hop, args.x, lower=args.lower)
        if args.mc:
            est = netsim.estimate_tail(pmf, hop_pmf, args.x, args.mc, args.seed)
            curve = curve.with_monte_carlo(est.estimate, est.halfwidth)
        cfg = vars(args).copy()
        cfg["el"] = el
        doc = ReportDocument("tail", cfg, seed=args.seed)
        doc.table = (list(tail.TAIL_HEADER), list(curve.rows()))
        out.append((doc, "csv"))
    return out


def _cmd_scaling(args):
    rows = distributions.region_sweep(args.rt, args.epsilon, args.coverage)
    doc = ReportDocument("scaling", vars(args).copy())
    doc.table = (["r_t", "alpha", "relative_throughput"], [list(r) for r in rows])
    return [(doc, "csv")]


_OBJECTIVES = {
    "log-sum": fairness.log_sum,
    "throughput": lambda a: a.lambda_total,
    "min-rate": lambda a: float(np.min(a.rates)),
}


def _fairness_section(res: fairness.FairnessResult) -> dict:
    return {"criterion": res.criterion, "rates": res.allocation.rates,
            "distribution": distributions.pmf_from_rates(res.allocation).to_spec(),
            "network_throughput": res.network_throughput, "workload_bias": res.workload_bias,
            "approx_throughput": res.approx_throughput,
            "approx_workload_bias": res.approx_workload_bias,
            "feasible": res.feasible, "residuals": list(res.residuals),
            "objective": res.objective}


def _cmd_optimize(args):
    if args.fairness == "prop":
        res = fairness.proportional_allocation(args.theta, args.phi)
    elif args.fairness == "maxmin":
        res = fairness.maxmin_allocation(args.theta, args.phi)
    else:
        res = fairness.optimize_with_qos(_OBJECTIVES[args.objective], args.theta,
                                         args.u_target, args.phi, args.starts, args.seed)
    doc = ReportDocument("optimize", vars(args).copy(), seed=args.seed)
    doc.sections = {"fairness": _fairness_section(res)}
    return [(doc, "json")]


def _cmd_simulate(args):
    cfg = netsim.SimConfig.load(args.config)
    overrides = {k: getattr(args, k) for k in ("mode", "slots", "seed")
                 if getattr(args, k) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    rep = netsim.simulate(cfg)
    doc = ReportDocument("simulate", cfg.to_dict(), seed=cfg.seed)
    doc.sections = {"sim": rep.to_dict(samples=args.samples)}
    if args.series:
        rows = [[k * cfg.series_every + cfg.warmup, int(v)]
                for k, v in enumerate(rep.queue_series)]
        Path(args.series).write_text(dumps_csv(["slot", "packets"], rows))
    return [(doc, "json")]


def _cmd_shape(args):
    ps = shaper.ParallelShaper.build(args.r, args.b, args.phi, args.rule, drop=args.drop)
    arrivals = "saturated" if args.arrivals is None else args.arrivals
    trace = shaper.run_parallel(ps, arrivals, args.slots, args.seed)
    if args.trace:
        trace.write_csv(args.trace)
    doc = ReportDocument("shape", vars(args).copy(), seed=args.seed)
    doc.sections = {"shaper": {**trace.summary(),
                               "bucket_rates": trace.rates,
                               "prefix_violation": max(trace.prefix_violation(), 0.0)}}
    return [(doc, "json")]


_COMMANDS = {
    "analyze": _cmd_analyze, "tail": _cmd_tail, "scaling": _cmd_scaling,
    "optimize": _cmd_optimize, "simulate": _cmd_simulate, "shape": _cmd_shape,
}


def _destination(args, index: int, count: int, ext: str):
    base = args.out
    if base is None:
        out_dir = os.environ.get(OUTPUT_DIR_ENV)
        if not out_dir:
            return None
        base = str(Path(out_dir) / f"{args.command}.{ext}")
    if count == 1:
        return base
    path = Path(base)
    return str(path.with_name(f"{path.stem}_el{args.el[index]:g}{path.suffix}"))


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        docs = _COMMANDS[args.command](args)
        for i, (doc, fmt) in enumerate(docs):
            dest = _destination(args, i, len(docs), fmt)
            text = emit_report(doc, dest, fmt)
            if dest is None:
                if i:
                    sys.stdout.write("\n")
                sys.stdout.write(text)
    except (ValueError, ArithmeticError) as exc:
        print(f"multihop {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
