"""Experiment driver: synthetic truth, OP-COMP init, PGD vs BCD runs, scoring, CSV output."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .bcd import BcdConfig, bcd_run
from .comp import CompConfig, op_comp
from .descent import DescentConfig, DescentOutcome, pgd
from .objective import Objective
from .operators import MeasurementOperator, MultiPlanePSFOperator, operator_from_config
from .spikes import SpikeTrain, min_pairwise_separation
from .trace import RunTrace, TraceRow

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1_000_000
METHODS = ("pgd", "bcd")


def _kind(spec: dict) -> str:
    return spec.get("kind", "multiplane-psf")


class PackingError(RuntimeError):
    """Too many rejections while placing separated spikes."""


@dataclass(frozen=True)
class LocalizationMetrics:
    jaccard: float
    precision: float
    recall: float
    match_radius: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class ExperimentConfig:
    operator: dict[str, Any] = field(
        default_factory=lambda: {"kind": "multiplane-psf", "grid": [32, 32], "planes": 4, "domain": [6.4, 6.4, 0.8]}
    )
    K: int = 10
    min_separation: float | None = None
    amplitude_range: tuple[float, float] = (1.0, 2.0)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    # plain mappings, resolved against the operator and epsilon by `resolve`
    comp: dict[str, Any] = field(default_factory=dict)
    descent: dict[str, Any] = field(default_factory=dict)
    bcd: dict[str, Any] = field(default_factory=dict)
    match_radius: float | None = None
    output_dir: str = "spikebench_out"

    def __post_init__(self):
        self.amplitude_range = tuple(self.amplitude_range)
        lo, hi = self.amplitude_range
        if not lo < hi:
            raise ValueError("amplitude_range needs lo < hi")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, data: dict[str, Any], base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = base or cls()
        merged = asdict(base)
        for key, value in data.items():
            if key not in merged:
                raise ValueError(f"unknown config key {key!r}")
            if key == "operator" and isinstance(value, dict) and _kind(value) != _kind(merged[key]):
                # a different operator family shares no geometry with the base
                merged[key] = dict(value)
            elif isinstance(merged[key], dict) and isinstance(value, dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        return cls(**merged)

    @classmethod
    def from_file(cls, path: str | Path, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        path = Path(path)
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_mapping(data, base)


def desk_profile() -> ExperimentConfig:
    return ExperimentConfig()


def paper_profile() -> ExperimentConfig:
    return ExperimentConfig(
        operator={"kind": "multiplane-psf", "grid": [64, 64], "planes": 4, "domain": [6.4, 6.4, 0.8]},
        K=50,
        seeds=list(range(10)),
        output_dir="spikebench_paper",
    )


@dataclass
class ResolvedExperiment:
    operator: MeasurementOperator
    epsilon: float
    match_radius: float
    comp: CompConfig
    descent: DescentConfig
    bcd: BcdConfig


def default_epsilon(op: MeasurementOperator) -> float:
    if isinstance(op, MultiPlanePSFOperator):
        return 8.0 * min(op.config.pixel_size)
    return 0.1 * float(np.min(op.domain_lengths))


def resolve(cfg: ExperimentConfig) -> ResolvedExperiment:
    op = operator_from_config(cfg.operator)
    eps = cfg.min_separation if cfg.min_separation is not None else default_epsilon(op)
    match_radius = cfg.match_radius if cfg.match_radius is not None else eps / 3.0

    comp_kw = dict(cfg.comp)
    if "grid_resolution" not in comp_kw:
        if isinstance(op, MultiPlanePSFOperator):
            comp_kw["grid_resolution"] = (op.nx, op.ny, 16)
        else:
            comp_kw["grid_resolution"] = (64,) * op.d
    comp_kw["grid_resolution"] = tuple(comp_kw["grid_resolution"])
    comp_kw.setdefault("max_spikes", 3 * cfg.K)
    comp = CompConfig(**comp_kw)

    desc_kw = dict(cfg.descent)
    desc_kw.setdefault("merge_radius", eps / 3.0)
    desc_kw.setdefault("position_step_scale", tuple(float(v) for v in op.natural_length_scales()))
    desc_kw.setdefault("prune_amplitude", 1e-3 * cfg.amplitude_range[0])
    if desc_kw.get("position_step_scale") is not None:
        desc_kw["position_step_scale"] = tuple(desc_kw["position_step_scale"])
    descent = DescentConfig(**desc_kw)

    bcd_kw = dict(cfg.bcd)
    bcd_kw.setdefault("stop_residual", descent.stop_residual)
    bcd = BcdConfig(descent=descent, **bcd_kw)
    return ResolvedExperiment(op, eps, match_radius, comp, descent, bcd)


def generate_truth(cfg: ExperimentConfig, seed: int, op: MeasurementOperator | None = None, epsilon: float | None = None):
    """Rejection-sample K epsilon-separated positions; amplitudes uniform in the range."""
    if op is None or epsilon is None:
        res = resolve(cfg)
        op, epsilon = res.operator, res.epsilon
    rng = np.random.default_rng(seed)
    pts: list[np.ndarray] = []
    rejections = 0
    while len(pts) < cfg.K:
        p = op.domain_lower + rng.uniform(size=op.d) * op.domain_lengths
        if pts and np.min(np.linalg.norm(np.array(pts) - p, axis=1)) <= epsilon:
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                raise PackingError(f"could not place {cfg.K} spikes {epsilon}-apart after {MAX_REJECTIONS} rejections")
            continue
        pts.append(p)
    lo, hi = cfg.amplitude_range
    truth = SpikeTrain(rng.uniform(lo, hi, cfg.K), np.array(pts))
    return truth, op.apply(truth)


def match_and_score(truth: SpikeTrain, estimate: SpikeTrain, match_radius: float) -> LocalizationMetrics:
    """Greedy globally-closest matching within ``match_radius``, then Jaccard/precision/recall."""
    if match_radius <= 0:
        raise ValueError("match_radius must be positive")
    nt, ne = len(truth), len(estimate)
    tp = 0
    if nt and ne:
        dist = np.linalg.norm(truth.positions[:, None, :] - estimate.positions[None, :, :], axis=2)
        order = np.argsort(dist, axis=None, kind="stable")
        used_t = np.zeros(nt, dtype=bool)
        used_e = np.zeros(ne, dtype=bool)
        for flat in order:
            i, j = divmod(int(flat), ne)
            if dist[i, j] > match_radius:
                break
            if used_t[i] or used_e[j]:
                continue
            used_t[i] = used_e[j] = True
            tp += 1
    fp, fn = ne - tp, nt - tp
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    jaccard = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return LocalizationMetrics(jaccard, precision, recall, match_radius, tp, fp, fn)


@dataclass
class RunRecord:
    method: str
    seed: int
    outcome: DescentOutcome
    trace: RunTrace
    metrics: LocalizationMetrics
    wall_time: float
    status: str
    exited_domain: int = 0


@dataclass
class SeedResult:
    seed: int
    truth: SpikeTrain
    init: SpikeTrain
    runs: dict[str, RunRecord] = field(default_factory=dict)

    @property
    def speedup(self) -> float | None:
        if "pgd" in self.runs and "bcd" in self.runs and self.runs["bcd"].wall_time > 0:
            return self.runs["pgd"].wall_time / self.runs["bcd"].wall_time
        return None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    epsilon: float
    match_radius: float
    seeds: list[SeedResult]
    output_dir: Path | None = None

    def speedups(self) -> list[float]:
        return [s.speedup for s in self.seeds if s.speedup is not None]

    def median_time_reduction(self) -> float | None:
        """Median over seeds of 1 - t_bcd / t_pgd."""
        vals = [1.0 - 1.0 / s for s in self.speedups()]
        return statistics.median(vals) if vals else None

    def median_gradient_reduction(self) -> float | None:
        """Median over seeds of 1 - (BCD block gradients) / (PGD block gradients); timing-free."""
        vals = [
            1.0 - s.runs["bcd"].outcome.block_gradients / s.runs["pgd"].outcome.block_gradients
            for s in self.seeds
            if "pgd" in s.runs and "bcd" in s.runs and s.runs["pgd"].outcome.block_gradients > 0
        ]
        return statistics.median(vals) if vals else None


def _run_method(method: str, obj: Objective, init: SpikeTrain, setup: ResolvedExperiment, seed: int):
    start = time.perf_counter()
    initial = TraceRow(method, seed, 0, 0.0, obj.value(init), len(init), 1.0)
    if method == "pgd":
        outcome = pgd(obj, init, setup.descent, method=method, seed=seed, clock_start=start)
    else:
        if len(init) == 0:
            outcome = DescentOutcome(init, 0, False, RunTrace(), "converged", obj.value(init))
        else:
            outcome = bcd_run(obj, init, setup.bcd, method=method, seed=seed, clock_start=start)
    trace = RunTrace([initial] + list(outcome.trace.rows))
    return outcome, trace


def _count_outside(op: MeasurementOperator, train: SpikeTrain) -> int:
    if len(train) == 0:
        return 0
    inside = np.all((train.positions >= op.domain_lower) & (train.positions <= op.domain_upper), axis=1)
    return int((~inside).sum())


def run_seed(cfg: ExperimentConfig, setup: ResolvedExperiment, seed: int) -> SeedResult:
    op = setup.operator
    truth, y = generate_truth(cfg, seed, op, setup.epsilon)
    obj = Objective(op, y)
    init = op_comp(obj, setup.comp)
    result = SeedResult(seed, truth, init)
    for method in cfg.methods:
        outcome, trace = _run_method(method, obj, init, setup, seed)
        final_value = trace[-1].residual_norm_squared
        status = "converged" if final_value <= setup.descent.stop_residual else (
            "budget_exhausted" if outcome.status in ("budget_exhausted", "projected") else outcome.status
        )
        metrics = match_and_score(truth, outcome.train, setup.match_radius)
        record = RunRecord(
            method, seed, outcome, trace, metrics, trace[-1].wall_time_seconds, status, _count_outside(op, outcome.train)
        )
        result.runs[method] = record
        log.info(
            "seed %d %s: %s in %.3fs, residual %.3e, %d spikes, J=%.3f",
            seed, method, status, record.wall_time, final_value, len(outcome.train), metrics.jaccard,
        )
    return result


SUMMARY_COLUMNS = (
    "seed", "method", "status", "final_residual", "wall_time_seconds", "iterations", "inner_iterations",
    "block_gradients", "init_spikes", "final_spikes", "min_separation", "exited_domain",
    "speedup_pgd_over_bcd", "jaccard", "precision", "recall",
)
METRIC_COLUMNS = ("seed", "method", "jaccard", "precision", "recall", "match_radius", "tp", "fp", "fn")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_outputs(result: ExperimentResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in result.seeds:
            for method, rec in s.runs.items():
                o = rec.outcome
                w.writerow([_fmt(v) for v in (
                    s.seed, method, rec.status, rec.trace[-1].residual_norm_squared, rec.wall_time,
                    o.iterations_run, o.inner_iterations if method == "bcd" else o.iterations_run,
                    o.block_gradients, len(s.init), len(o.train), float(min_pairwise_separation(o.train)),
                    rec.exited_domain, s.speedup, rec.metrics.jaccard, rec.metrics.precision, rec.metrics.recall,
                )])
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s in result.seeds:
            for method, rec in s.runs.items():
                m = rec.metrics
                w.writerow([_fmt(v) for v in (s.seed, method, m.jaccard, m.precision, m.recall, m.match_radius, m.tp, m.fp, m.fn)])
    # plot-ready series
    with open(out / "residual_vs_time.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "seed", "wall_time_seconds", "residual_norm_squared"))
        for s in result.seeds:
            for method, rec in s.runs.items():
                for row in rec.trace:
                    w.writerow((method, s.seed, repr(row.wall_time_seconds), repr(row.residual_norm_squared)))
    with open(out / "active_fraction_vs_iteration.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "outer_iteration", "active_fraction"))
        for s in result.seeds:
            rec = s.runs.get("bcd")
            if rec is None:
                continue
            for row in rec.trace.rows[1:]:
                w.writerow((s.seed, row.outer_iteration, repr(row.active_fraction)))
    for s in result.seeds:
        s.truth.to_csv(out / f"truth_{s.seed}.csv")
        s.init.to_csv(out / f"init_{s.seed}.csv")
        for method, rec in s.runs.items():
            rec.trace.to_csv(out / f"trace_{method}_{s.seed}.csv")
            rec.outcome.train.to_csv(out / f"estimate_{method}_{s.seed}.csv")
    (out / "config.json").write_text(json.dumps(asdict(result.config), indent=2, default=list), encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    setup = resolve(cfg)
    seeds = [run_seed(cfg, setup, seed) for seed in cfg.seeds]
    result = ExperimentResult(cfg, setup.epsilon, setup.match_radius, seeds)
    if write:
        out = Path(cfg.output_dir)
        write_outputs(result, out)
        result.output_dir = out
    return result
