"""Batch experiments: instance sweeps, run records and scaling statistics."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (ConfigInvalid, DetectionFailure, GenerationFailed, InsufficientData,
                     MemristorSPError, StepCollapse)
from .graph import Graph, bfs_oracle, generate_grid, generate_small_world
from .models import ChangParams, DeviceModel, LinearParams
from .protocols import KinkDetectorConfig, RampConfig, run_constant, run_ramp
from .readout import verify_against_oracle
from .solver import SolverConfig

log = logging.getLogger(__name__)

WORKERS_ENV = "MEMRISTOR_SP_WORKERS"

RECORD_HEADER = ["graph_id", "topology", "nodes", "edges", "size", "path_len", "delta_g",
                 "delta_g_norm", "success", "detect_time_s", "energy_J", "model",
                 "sigma_rel", "seed", "failure_kind"]


@dataclass
class ExperimentConfig:
    topology: str = "grid"
    instance_count: int = 1
    # grid sweep (square grids, side length drawn from grid_sizes)
    grid_sizes: list = field(default_factory=lambda: list(range(6, 21)))
    removal_probs: list = field(default_factory=lambda: [0.2, 0.3, 0.4])
    # small-world sweep
    sw_n: list = field(default_factory=lambda: [50, 100, 200])
    sw_k: list = field(default_factory=lambda: [2, 4])
    sw_beta: list = field(default_factory=lambda: [0.1, 0.3, 0.5])
    model: str = "linear"
    model_overrides: dict = field(default_factory=dict)
    sigma_rel: float = 0.0
    protocol: str = "ramp"
    v_ctrl: Optional[float] = None
    ramp: dict = field(default_factory=dict)
    t_max: Optional[float] = None
    solver: dict = field(default_factory=dict)
    master_seed: int = 0
    first_index: int = 0
    records_path: Optional[str] = None

    def validate(self) -> None:
        if self.topology not in ("grid", "small_world"):
            raise ConfigInvalid(f"unknown topology {self.topology!r}")
        if self.model not in ("linear", "chang"):
            raise ConfigInvalid(f"unknown model {self.model!r}")
        if self.protocol not in ("ramp", "constant"):
            raise ConfigInvalid(f"unknown protocol {self.protocol!r}")
        if self.protocol == "constant" and self.v_ctrl is None:
            raise ConfigInvalid("constant protocol needs v_ctrl")
        if self.instance_count < 1:
            raise ConfigInvalid("instance_count must be >= 1")
        if self.sigma_rel < 0:
            raise ConfigInvalid("sigma_rel must be >= 0")
        lists = ((self.grid_sizes, self.removal_probs) if self.topology == "grid"
                 else (self.sw_n, self.sw_k, self.sw_beta))
        if any(len(v) == 0 for v in lists):
            raise ConfigInvalid("topology parameter lists must be non-empty")
        try:
            self.device_model_nominal()
            self.ramp_config()
            self.solver_config()
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def device_model_nominal(self):
        cls = LinearParams if self.model == "linear" else ChangParams
        return cls(**self.model_overrides)

    def ramp_config(self) -> RampConfig:
        r = dict(self.ramp)
        det = {k: r.pop(k) for k in ("window", "threshold", "warmup") if k in r}
        if self.t_max is not None:
            r.setdefault("t_max", self.t_max)
        base = RampConfig.for_model(self.model, **r)
        if det:
            d = asdict(base.detector)
            d.update(det)
            base = RampConfig(base.v0, base.rate, KinkDetectorConfig(**d), base.t_max)
        return base

    def solver_config(self) -> SolverConfig:
        return SolverConfig.for_model(self.model, **self.solver)


@dataclass
class RunRecord:
    graph_id: str
    topology: str
    nodes: int
    edges: int
    size: int
    path_len: int
    delta_g: float
    delta_g_norm: float
    success: bool
    detect_time_s: Optional[float]
    energy_J: float
    model: str
    sigma_rel: float
    seed: int
    failure_kind: str = ""
    # not part of the CSV
    path_matches: Optional[bool] = None
    max_residual: float = 0.0

    def csv_row(self) -> list:
        out = []
        for name in RECORD_HEADER:
            val = getattr(self, name)
            if val is None:
                out.append("")
            elif isinstance(val, bool):
                out.append("true" if val else "false")
            elif isinstance(val, float):
                out.append(format(val, ".17g"))
            else:
                out.append(str(val))
        return out


def instance_seed(master_seed: int, index: int) -> int:
    """64-bit seed mixed from the master seed and the instance index."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def make_instance(cfg: ExperimentConfig, index: int):
    """Graph and its seed for one instance. Raises GenerationFailed."""
    seed = instance_seed(cfg.master_seed, index)
    rng = np.random.default_rng(seed)
    if cfg.topology == "grid":
        side = int(rng.choice(cfg.grid_sizes))
        p = float(rng.choice(cfg.removal_probs))
        return generate_grid(side, side, p, seed), seed
    n = int(rng.choice(cfg.sw_n))
    k = int(rng.choice(cfg.sw_k))
    beta = float(rng.choice(cfg.sw_beta))
    return generate_small_world(n, k, beta, seed), seed


def run_instance(cfg: ExperimentConfig, index: int) -> RunRecord:
    graph_id = f"{cfg.topology}-{index:05d}"
    try:
        graph, seed = make_instance(cfg, index)
    except GenerationFailed:
        seed = instance_seed(cfg.master_seed, index)
        return RunRecord(graph_id, cfg.topology, 0, 0, 0, 0, float("nan"), float("nan"),
                         False, None, 0.0, cfg.model, cfg.sigma_rel, seed, "generation")
    return run_graph(cfg, graph, graph_id, seed)


def run_graph(cfg: ExperimentConfig, graph: Graph, graph_id: str, seed: int) -> RunRecord:
    oracle = bfs_oracle(graph)
    model = DeviceModel.varied(cfg.device_model_nominal(), cfg.sigma_rel, seed, graph.edge_count)
    base = dict(graph_id=graph_id, topology=cfg.topology, nodes=graph.node_count,
                edges=graph.edge_count, size=graph.node_count + graph.edge_count,
                path_len=oracle.length_N, model=cfg.model, sigma_rel=cfg.sigma_rel, seed=seed)
    scfg = cfg.solver_config()
    try:
        if cfg.protocol == "ramp":
            res = run_ramp(graph, model, cfg.ramp_config(), scfg)
        else:
            res = run_constant(graph, model, cfg.v_ctrl, scfg,
                               cfg.t_max if cfg.t_max is not None else 50.0)
    except StepCollapse:
        return RunRecord(**base, delta_g=float("nan"), delta_g_norm=float("nan"),
                         success=False, detect_time_s=None, energy_J=0.0,
                         failure_kind="step_collapse")
    m = res.metrics(oracle)
    failure = "detection" if cfg.protocol == "ramp" and res.timed_out else ""
    return RunRecord(**base, delta_g=m.delta_g, delta_g_norm=m.normalized,
                     success=m.success and not failure, detect_time_s=res.detection_time,
                     energy_J=res.state.energy, failure_kind=failure,
                     path_matches=verify_against_oracle(m, oracle),
                     max_residual=res.trace.max_residual)


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_one(args):
    cfg, index = args
    return run_instance(cfg, index)


def run_batch(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    """Run every instance, writing records in index order as they finish.

    Failed instances are kept as records with ``failure_kind`` set.
    """
    cfg.validate()
    workers = workers or worker_count()
    indices = range(cfg.first_index, cfg.first_index + cfg.instance_count)
    sink = RecordWriter(cfg.records_path) if cfg.records_path else None
    records = []
    try:
        if workers == 1:
            results = (run_instance(cfg, i) for i in indices)
            for rec in results:
                records.append(rec)
                if sink:
                    sink.write(rec)
        else:
            with ProcessPoolExecutor(workers) as pool:
                for rec in pool.map(_run_one, [(cfg, i) for i in indices]):
                    records.append(rec)
                    if sink:
                        sink.write(rec)
    finally:
        if sink:
            sink.close()
    return records


class RecordWriter:
    def __init__(self, path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(RECORD_HEADER)

    def write(self, rec: RunRecord):
        self.writer.writerow(rec.csv_row())
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_records(records: Iterable[RunRecord], path) -> None:
    w = RecordWriter(path)
    try:
        for r in records:
            w.write(r)
    finally:
        w.close()


def read_records(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(RunRecord(
                graph_id=row["graph_id"], topology=row["topology"], nodes=int(row["nodes"]),
                edges=int(row["edges"]), size=int(row["size"]), path_len=int(row["path_len"]),
                delta_g=float(row["delta_g"]), delta_g_norm=float(row["delta_g_norm"]),
                success=row["success"] == "true",
                detect_time_s=float(row["detect_time_s"]) if row["detect_time_s"] else None,
                energy_J=float(row["energy_J"]), model=row["model"],
                sigma_rel=float(row["sigma_rel"]), seed=int(row["seed"]),
                failure_kind=row["failure_kind"]))
    return out


# ---------------------------------------------------------------------------
# statistics


@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float


@dataclass
class ScalingSummary:
    spearman_time_vs_N: float
    spearman_time_vs_size: float
    spearman_energy_vs_N: float
    spearman_energy_vs_size: float
    time_vs_N: Fit
    time_vs_size: Fit
    energy_vs_N: Fit
    energy_vs_size: Fit
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _fit(x, y) -> Fit:
    r = stats.linregress(x, y)
    return Fit(float(r.slope), float(r.intercept), float(r.rvalue ** 2))


def _spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


def summarize_scaling(records: Sequence[RunRecord], min_records: int = 20,
                      min_lengths: int = 5) -> ScalingSummary:
    """Rank correlations and linear fits of time/energy against N and size.

    Raises:
        InsufficientData: fewer than ``min_records`` successful records or
            fewer than ``min_lengths`` distinct path lengths.
    """
    ok = [r for r in records if r.success and not r.failure_kind and r.detect_time_s is not None]
    if len(ok) < min_records or len({r.path_len for r in ok}) < min_lengths:
        raise InsufficientData(f"{len(ok)} usable records, "
                               f"{len({r.path_len for r in ok})} distinct path lengths")
    n = np.array([r.path_len for r in ok], dtype=float)
    size = np.array([r.size for r in ok], dtype=float)
    t = np.array([r.detect_time_s for r in ok])
    e = np.array([r.energy_J for r in ok])
    return ScalingSummary(_spearman(t, n), _spearman(t, size), _spearman(e, n),
                          _spearman(e, size), _fit(n, t), _fit(size, t), _fit(n, e),
                          _fit(size, e), len(ok))


def histogram(records: Sequence[RunRecord], field_name: str, bins: int = 20,
              value_range=None):
    """Bin one numeric record field. NaNs (failed runs) land in no bin."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.array([getattr(r, field_name) for r in records], dtype=float)
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return edges, counts


def write_histogram(edges, counts, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([format(lo, ".17g"), format(hi, ".17g"), int(c)])
