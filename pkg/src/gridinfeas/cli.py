"""Command-line driver and report assembly.

Pipeline: parse the feeder, assemble the nonconvex model, optionally run
a local interior-point solve, optionally tighten variable boxes, then
certify the global optimum by spatial branch-and-bound.  Results are
collected in a :class:`Report` that serializes to JSON and renders a
short text summary.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time

import numpy as np

from . import bnb, convex, envelopes, formulation, localnlp, network, sbt

EXIT_OK = 0
EXIT_PARSE_ERROR = 2
EXIT_NLP_FAILURE = 3
EXIT_LIMIT = 4

MODES = ("nlp", "blp", "s-blp")
SPARSE_TOL = 1e-6


@dataclasses.dataclass
class RunConfig:
    """Everything needed to reproduce a single analysis run."""

    feeder_path: str
    norm: str = "l2"
    mode: str = "s-blp"
    dv_box: float = formulation.DEFAULT_DV_BOX
    gap_tol: float = 1e-4
    time_limit: float | None = None
    node_limit: int | None = None
    workers: int = 1
    sbt_eps: float = sbt.DEFAULT_EPS
    export_mps: str | None = None


@dataclasses.dataclass
class Report:
    """Outcome of one run, suitable for JSON export and comparison."""

    feeder_path: str
    norm: str
    mode: str
    status: str
    objective: float | None = None
    best_bound: float | None = None
    gap: float | None = None
    nodes: int = 0
    sources: dict = dataclasses.field(default_factory=dict)
    bus_magnitudes: dict = dataclasses.field(default_factory=dict)
    nlp: dict | None = None
    sbt_trace: dict | None = None
    timings: dict = dataclasses.field(default_factory=dict)
    log_lines: list = dataclasses.field(default_factory=list)
    error: str | None = None
    dv_box: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"feeder   : {self.feeder_path}",
                 f"mode     : {self.mode}   norm: {self.norm}",
                 f"status   : {self.status}"]
        if self.objective is not None:
            lines.append(f"objective: {self.objective:.10g}")
        if self.best_bound is not None:
            lines.append(f"bound    : {self.best_bound:.10g}"
                         f"   gap: {self.gap:.3e}   nodes: {self.nodes}")
            lines.append(f"note     : objective and bound are certified only "
                         f"within the +/-{self.dv_box:g} pu voltage-deviation "
                         f"box; solutions outside it are not excluded")
        active = {k: v for k, v in self.sources.items() if v > SPARSE_TOL}
        lines.append(f"sources  : {len(active)} active of "
                     f"{len(self.sources)} candidates (>{SPARSE_TOL:g})")
        for key, mag in sorted(active.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {key:<16s} {mag:.6g}")
        if self.error:
            lines.append(f"error    : {self.error}")
        return "\n".join(lines)

    def plot_csv(self) -> str:
        """Per-bus aggregated source magnitudes as a two-column CSV."""
        rows = ["bus,source_magnitude"]
        rows += [f"{bus},{mag:.12g}"
                 for bus, mag in sorted(self.bus_magnitudes.items())]
        return "\n".join(rows) + "\n"


def _aggregate_by_bus(sources: dict) -> dict:
    """Root-sum-square of per-phase source magnitudes per bus."""
    acc: dict[str, float] = {}
    for key, mag in sources.items():
        bus = key.rsplit(":", 1)[0]
        acc[bus] = math.hypot(acc.get(bus, 0.0), mag)
    return acc


def run(config: RunConfig, feeder_text: str | None = None) -> Report:
    """Execute one analysis and return its report (never raises)."""
    report = Report(feeder_path=config.feeder_path, norm=config.norm,
                    mode=config.mode, status="error", dv_box=config.dv_box)
    t0 = time.perf_counter()
    try:
        if feeder_text is None:
            with open(config.feeder_path) as fh:
                feeder_text = fh.read()
        net = network.parse_feeder(feeder_text)
    except (OSError, network.FeederFormatError) as exc:
        report.status = "parse-error"
        report.error = str(exc)
        return report
    space, system = formulation.build(net, norm=config.norm)
    try:
        bounds = formulation.initial_bounds(space, net, dv_box=config.dv_box)
    except formulation.BoxInfeasibleError as exc:
        report.status = "box-infeasible"
        report.error = str(exc)
        return report
    report.timings["setup"] = time.perf_counter() - t0

    warm = None
    if config.mode in ("nlp", "s-blp"):
        t1 = time.perf_counter()
        x0 = formulation.flat_start(space, system, net)
        local = localnlp.solve_local(system, bounds, init=x0)
        report.timings["nlp"] = time.perf_counter() - t1
        report.nlp = {"status": local.status,
                      "iterations": local.iterations,
                      "objective": local.objective,
                      "stationarity": local.stationarity,
                      "feasibility": local.feasibility}
        if local.status != localnlp.CONVERGED:
            report.status = "nlp-failure"
            report.error = "local interior-point solve did not converge"
            return report
        warm = local
        if config.mode == "nlp":
            report.status = "local-optimal"
            report.objective = local.objective
            report.sources = _source_map(space, local.x)
            report.bus_magnitudes = _aggregate_by_bus(report.sources)
            report.timings["total"] = time.perf_counter() - t0
            return report

    if config.mode == "s-blp":
        t1 = time.perf_counter()
        try:
            bounds, trace = sbt.tighten(space, system, net, bounds,
                                        cutoff=warm.objective,
                                        eps=config.sbt_eps,
                                        workers=config.workers)
        except sbt.TighteningError as exc:
            report.status = "box-infeasible"
            report.error = str(exc)
            return report
        report.timings["sbt"] = time.perf_counter() - t1
        report.sbt_trace = json.loads(trace.to_json())

    if config.export_mps:
        model = envelopes.build_relaxation(system, bounds)
        convex.write_mps(model, config.export_mps)

    opts = bnb.SolveOptions(gap_tol=config.gap_tol,
                            time_limit=config.time_limit,
                            node_limit=config.node_limit,
                            log=report.log_lines.append)
    t1 = time.perf_counter()
    try:
        result = bnb.solve_global(space, system, net, bounds,
                                  warm=warm, opts=opts)
    except bnb.InfeasibleModelError as exc:
        report.status = "no-incumbent"
        report.error = str(exc)
        return report
    report.timings["bnb"] = time.perf_counter() - t1
    report.status = result.status
    report.objective = result.objective
    report.best_bound = result.best_bound
    report.gap = result.gap
    report.nodes = result.nodes
    report.sources = {f"{n}:{p}": m
                      for (n, p), m in result.source_magnitudes.items()}
    report.bus_magnitudes = _aggregate_by_bus(report.sources)
    report.timings["total"] = time.perf_counter() - t0
    return report


def _source_map(space: formulation.VariableSpace, x: np.ndarray) -> dict:
    return {f"{node}:{phase}": float(math.hypot(x[ir], x[ii]))
            for (node, phase), (ir, ii) in space.src_index.items()}


def emit_sparsity_comparison(report_l1: Report, report_l2: Report,
                             tol: float = SPARSE_TOL) -> dict:
    """Contrast source-support sparsity between L1 and L2 runs."""
    if report_l1.feeder_path != report_l2.feeder_path:
        raise ValueError("reports compare different feeders")
    if report_l1.norm != "l1" or report_l2.norm != "l2":
        raise ValueError("expected one l1 report and one l2 report")

    def active(rep: Report) -> dict:
        return {k: v for k, v in rep.sources.items() if v > tol}

    a1, a2 = active(report_l1), active(report_l2)
    return {"feeder": report_l1.feeder_path,
            "tolerance": tol,
            "l1_active": len(a1),
            "l2_active": len(a2),
            "candidates": len(report_l1.sources),
            "l1_support": sorted(a1),
            "l2_support": sorted(a2)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridinfeas",
        description="Certified three-phase infeasibility analysis for "
                    "unbalanced distribution feeders.")
    parser.add_argument("--feeder", required=True,
                        help="path to a feeder JSON file")
    parser.add_argument("--norm", choices=("l1", "l2"), default="l2",
                        help="objective norm on the fictitious sources")
    parser.add_argument("--mode", choices=MODES, default="s-blp",
                        help="nlp: local only; blp: plain branch-and-bound; "
                             "s-blp: bound tightening plus warm start")
    parser.add_argument("--dv-box", type=float,
                        default=formulation.DEFAULT_DV_BOX,
                        help="half-width of the voltage-deviation box (pu)")
    parser.add_argument("--gap-tol", type=float, default=1e-4,
                        help="relative optimality-gap termination tolerance")
    parser.add_argument("--time-limit", type=float, default=None,
                        help="wall-clock limit in seconds")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel workers for bound tightening")
    parser.add_argument("--out", default=None,
                        help="write the JSON report to this path")
    parser.add_argument("--sbt-eps", type=float, default=sbt.DEFAULT_EPS,
                        help="bound-tightening convergence tolerance")
    parser.add_argument("--export-mps", default=None,
                        help="write the root relaxation in MPS format")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = RunConfig(feeder_path=args.feeder, norm=args.norm,
                       mode=args.mode, dv_box=args.dv_box,
                       gap_tol=args.gap_tol, time_limit=args.time_limit,
                       workers=args.workers, sbt_eps=args.sbt_eps,
                       export_mps=args.export_mps)
    report = run(config)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
    print(report.summary())
    if report.status == "parse-error":
        return EXIT_PARSE_ERROR
    if report.status == "nlp-failure":
        return EXIT_NLP_FAILURE
    if report.status in ("time-limit", "node-limit"):
        return EXIT_LIMIT
    if report.status in ("error", "no-incumbent", "box-infeasible"):
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
