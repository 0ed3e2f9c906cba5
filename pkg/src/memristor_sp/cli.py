"""Command-line interface.

Subcommands::

    generate grid|small-world   write a random accepted instance
    solve                       run one protocol on a graph file
    sweep-voltage               constant-voltage sweep, report the best voltage
    batch                       run an experiment config, write records CSV
    summarize                   scaling statistics and histograms from records

Exit codes: 0 success, 2 usage, 3 invalid config, 4 generation failure,
5 detection failure (ramp timed out), 6 input/output failure, 7 numerical
failure, 8 insufficient data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .errors import (ConfigInvalid, DetectionFailure, GenerationFailed, InsufficientData,
                     MalformedGraphFile, MemristorSPError, NewtonNoConvergence,
                     SingularSystem, StepCollapse)
from .experiments import (ExperimentConfig, histogram, read_records, run_batch,
                          summarize_scaling, write_histogram)
from .graph import bfs_oracle, generate_grid, generate_small_world, load_graph, save_graph
from .models import ChangParams, DeviceModel, LinearParams
from .protocols import KinkDetectorConfig, RampConfig, run_constant, run_ramp, sweep_optimal_voltage
from .readout import ResultRecord
from .solver import SolverConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_GENERATION = 4
EXIT_DETECTION = 5
EXIT_IO = 6
EXIT_NUMERICAL = 7
EXIT_DATA = 8

log = logging.getLogger("memristor_sp")


def _add_protocol_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="graph file written by 'generate'")
    p.add_argument("--model", choices=("linear", "chang"), default="linear",
                   help="device law (default: linear)")
    p.add_argument("--sigma-rel", type=float, default=0.0,
                   help="relative std of per-device parameter variability (default: 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for parameter variability")
    p.add_argument("--t-max", type=float, default=None,
                   help="simulated time limit in seconds (default: per protocol/model)")
    p.add_argument("--dt", type=float, default=None, help="base integration step in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memristor-sp",
        description="Shortest-path search with self-organising memristor networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate an accepted random instance")
    gsub = gen.add_subparsers(dest="topology", required=True)
    grid = gsub.add_parser("grid", help="rectangular lattice with random edge removal")
    grid.add_argument("--rows", type=int, required=True, help="lattice rows")
    grid.add_argument("--cols", type=int, required=True, help="lattice columns")
    grid.add_argument("--removal-prob", type=float, default=0.3,
                      help="independent edge-removal probability (default: 0.3)")
    sw = gsub.add_parser("small-world", help="Watts-Strogatz small-world graph")
    sw.add_argument("--n", type=int, required=True, help="node count")
    sw.add_argument("--k", type=int, required=True, help="even ring degree")
    sw.add_argument("--beta", type=float, required=True, help="rewiring probability")
    for p in (grid, sw):
        p.add_argument("--seed", type=int, required=True, help="random seed")
        p.add_argument("--max-attempts", type=int, default=1000,
                       help="rejection-sampling attempt cap (default: 1000)")
        p.add_argument("--out", required=True, help="output graph file")

    solve = sub.add_parser("solve", help="run one protocol on a graph")
    _add_protocol_flags(solve)
    solve.add_argument("--protocol", choices=("constant", "ramp"), default="ramp",
                       help="control protocol (default: ramp)")
    solve.add_argument("--v-ctrl", type=float, default=None,
                       help="control voltage for the constant protocol (V)")
    solve.add_argument("--v0", type=float, default=None, help="ramp start voltage (V)")
    solve.add_argument("--rate", type=float, default=None, help="ramp rate (V/s)")
    solve.add_argument("--window", type=int, default=None,
                       help="kink detector smoothing window in samples (odd)")
    solve.add_argument("--threshold", type=float, default=None,
                       help="kink detector threshold, normalised curvature in s^-2 (<0)")
    solve.add_argument("--warmup", type=float, default=None,
                       help="kink detector warm-up in seconds")
    solve.add_argument("--out", required=True, help="result file (JSON)")
    solve.add_argument("--trace", default=None, help="optional current trace CSV")

    sweep = sub.add_parser("sweep-voltage", help="constant-voltage sweep for the best voltage")
    _add_protocol_flags(sweep)
    sweep.add_argument("--v-grid", default=None,
                       help="comma-separated voltages (V); default N*1e-4 x 0.5..1.5")
    sweep.add_argument("--out", default=None, help="optional sweep CSV (v,delta_g,normalized)")

    batch = sub.add_parser("batch", help="run an experiment config")
    batch.add_argument("--config", required=True, help="experiment config (JSON)")
    batch.add_argument("--out", default=None, help="records CSV (overrides records_path)")
    batch.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: env MEMRISTOR_SP_WORKERS or CPU count)")

    summ = sub.add_parser("summarize", help="scaling statistics and histograms")
    summ.add_argument("--records", required=True, help="records CSV from 'batch'")
    summ.add_argument("--out", default=None, help="optional summary JSON")
    summ.add_argument("--hist-field", default="delta_g_norm",
                      help="record field to histogram (default: delta_g_norm)")
    summ.add_argument("--bins", type=int, default=20, help="histogram bins (default: 20)")
    summ.add_argument("--range", nargs=2, type=float, default=None, metavar=("LO", "HI"),
                      help="histogram range")
    summ.add_argument("--hist-out", default=None, help="optional histogram CSV")
    return parser


def _model(args, device_count: int) -> DeviceModel:
    nominal = LinearParams() if args.model == "linear" else ChangParams()
    return DeviceModel.varied(nominal, args.sigma_rel, args.seed, device_count)


def _solver_config(args) -> SolverConfig:
    extra = {"dt": args.dt} if args.dt is not None else {}
    return SolverConfig.for_model(args.model, **extra)


def _cmd_generate(args) -> int:
    if args.topology == "grid":
        g = generate_grid(args.rows, args.cols, args.removal_prob, args.seed, args.max_attempts)
    else:
        g = generate_small_world(args.n, args.k, args.beta, args.seed, args.max_attempts)
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.node_count} nodes, {g.edge_count} edges, "
          f"N={bfs_oracle(g).length_N}")
    return EXIT_OK


def _ramp_config(args) -> RampConfig:
    base = RampConfig.for_model(args.model)
    det = base.detector
    det = KinkDetectorConfig(
        window=args.window if args.window is not None else det.window,
        threshold=args.threshold if args.threshold is not None else det.threshold,
        warmup=args.warmup if args.warmup is not None else det.warmup)
    return RampConfig(v0=args.v0 if args.v0 is not None else base.v0,
                      rate=args.rate if args.rate is not None else base.rate,
                      detector=det,
                      t_max=args.t_max if args.t_max is not None else base.t_max)


def _cmd_solve(args) -> int:
    graph = load_graph(args.graph)
    oracle = bfs_oracle(graph)
    model = _model(args, graph.edge_count)
    cfg = _solver_config(args)
    try:
        if args.protocol == "constant":
            if args.v_ctrl is None:
                raise ConfigInvalid("--v-ctrl is required for the constant protocol")
            res = run_constant(graph, model, args.v_ctrl, cfg,
                               args.t_max if args.t_max is not None else 50.0)
        else:
            res = run_ramp(graph, model, _ramp_config(args), cfg)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    metrics = res.metrics(oracle)
    record = ResultRecord.from_metrics(metrics, res.detection_time, res.state.energy)
    record.save(args.out)
    if args.trace:
        res.trace.to_csv(args.trace)
    print(f"delta_g_norm={metrics.normalized:.4f} success={str(metrics.success).lower()} "
          f"N={oracle.length_N}")
    if args.protocol == "ramp" and res.timed_out:
        raise DetectionFailure(f"no kink detected before t_max={res.state.t:g} s")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    graph = load_graph(args.graph)
    oracle = bfs_oracle(graph)
    if args.v_grid:
        try:
            v_grid = [float(v) for v in args.v_grid.split(",")]
        except ValueError as exc:
            raise ConfigInvalid(f"bad --v-grid: {exc}") from exc
    else:
        v_grid = list(oracle.length_N * 1e-4 * np.round(np.arange(0.5, 1.51, 0.1), 10))
    model = _model(args, graph.edge_count)
    t_max = args.t_max if args.t_max is not None else 30.0
    v_opt, curve = sweep_optimal_voltage(graph, model, v_grid, _solver_config(args), t_max,
                                         oracle)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("v_ctrl_V,delta_g,delta_g_norm\n")
            for v, m in curve:
                fh.write(f"{v:.17g},{m.delta_g:.17g},{m.normalized:.17g}\n")
    print(f"v_opt={v_opt:.6g} V N={oracle.length_N}")
    return EXIT_OK


def _cmd_batch(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.records_path = args.out
    records = run_batch(cfg, args.workers)
    ok = sum(r.success for r in records)
    print(f"{len(records)} records, {ok} successful")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    records = read_records(args.records)
    summary = summarize_scaling(records)
    doc = summary.to_dict()
    if args.hist_field:
        try:
            edges, counts = histogram(records, args.hist_field, args.bins,
                                      tuple(args.range) if args.range else None)
        except (AttributeError, ValueError) as exc:
            raise ConfigInvalid(f"histogram: {exc}") from exc
        if args.hist_out:
            write_histogram(edges, counts, args.hist_out)
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


_COMMANDS = {"generate": _cmd_generate, "solve": _cmd_solve, "sweep-voltage": _cmd_sweep,
             "batch": _cmd_batch, "summarize": _cmd_summarize}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigInvalid):
        return EXIT_CONFIG
    if isinstance(exc, GenerationFailed):
        return EXIT_GENERATION
    if isinstance(exc, DetectionFailure):
        return EXIT_DETECTION
    if isinstance(exc, (MalformedGraphFile, OSError)):
        return EXIT_IO
    if isinstance(exc, (StepCollapse, NewtonNoConvergence, SingularSystem)):
        return EXIT_NUMERICAL
    if isinstance(exc, InsufficientData):
        return EXIT_DATA
    return 1


def cli_entry(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage to stderr
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (MemristorSPError, OSError) as exc:
        print(f"memristor-sp: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except ValueError as exc:  # bad numeric arguments reaching a constructor
        print(f"memristor-sp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
