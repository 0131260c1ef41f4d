"""End-to-end orchestration: discretise, learn private models, estimate trips,
generate, and score, for one or more seeded repetitions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics
from .core import Rng, TrajectoryDataset, split_budget
from .discretization import DEFAULT_KAPPA_DENOM, build_two_layer_grid, choose_first_layer_K, dataset_to_states
from .generation import SelectionThresholds, default_thresholds, generate_dataset
from .io import atomic_write_text, format_trajectories, read_trajectories
from .markov import count_from_states, end_counts, privatize, start_counts
from .synthgen import BUILTIN_WORLDS, builtin_world, generate_toy_dataset
from .trips import build_state_graph, estimate_trip_distribution, shortest_path_lengths

log = logging.getLogger(__name__)

DEFAULT_C = 500.0
TOY_C = 140.0

# (model, second_layer_states, trip_estimation)
ABLATIONS = {
    1: ("first", False, "raw_start_end"),
    2: ("second", False, "raw_start_end"),
    3: ("adaptive", False, "raw_start_end"),
    4: ("adaptive", True, "raw_start_end"),
    5: ("adaptive", True, "optimized"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    world: str | None = "corridor"
    world_size: int | None = None
    epsilon: float = 1.0
    budget_ratios: tuple = (0.2, 0.4, 0.4)
    c: float | None = None
    first_layer_k: int | None = None
    pop: float | None = None
    kappa_denom: float = DEFAULT_KAPPA_DENOM
    theta1: float | None = None
    theta2: float = 5.0
    n_syn: int | None = None
    max_len: int | None = None
    seed: int = 0
    repetitions: int = 1
    bins: int = metrics.DEFAULT_BINS
    queries: int = metrics.DEFAULT_QUERIES
    mu: int = metrics.DEFAULT_MU
    phi: float | None = None
    radius_range: tuple = metrics.DEFAULT_RADIUS_RANGE
    ablation: int | None = None
    model: str = "adaptive"
    second_layer_states: bool = True
    trip_estimation: str = "optimized"
    dense_order2: bool = False
    noise_disabled: bool = False
    unsafe_no_dp: bool = False
    heatmap: bool = False
    out_dir: str = "out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        for key in ("budget_ratios", "radius_range"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["budget_ratios"] = list(self.budget_ratios)
        d["radius_range"] = list(self.radius_range)
        return d

    def effective(self) -> "RunConfig":
        """Apply an ablation shortcut to the three component flags."""
        if self.ablation is None:
            return self
        model, layer2, trips = ABLATIONS[self.ablation]
        return replace(self, model=model, second_layer_states=layer2, trip_estimation=trips)

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in ("out_dir", "jobs"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and not math.isnan(v)


def validate_config(config: RunConfig) -> list[str]:
    """All problems with ``config``; an empty list means it is runnable."""
    out = []
    if config.input is None and config.world is None:
        out.append("one of input or world must be set")
    if config.input is None and config.world is not None and config.world not in BUILTIN_WORLDS:
        out.append(f"unknown world {config.world!r}")
    if not _positive(config.epsilon):
        out.append("epsilon must be positive")
    elif math.isinf(config.epsilon) and not config.noise_disabled:
        out.append("infinite epsilon requires noise_disabled")
    ratios = config.budget_ratios
    if len(ratios) != 3 or not all(_positive(r) for r in ratios):
        out.append("budget_ratios must be three positive numbers")
    elif abs(sum(ratios) - 1.0) > 1e-9:
        out.append("ratios must sum to 1")
    if config.noise_disabled and not config.unsafe_no_dp:
        out.append("noise_disabled gives no privacy; it requires unsafe_no_dp")
    for key in ("c", "pop", "theta1", "phi"):
        v = getattr(config, key)
        if v is not None and not _positive(v):
            out.append(f"{key} must be positive")
    if config.input is not None and config.pop is None:
        out.append("pop is required for file inputs")
    if not _positive(config.kappa_denom):
        out.append("kappa_denom must be positive")
    if not (_positive(config.theta2) and config.theta2 > 1):
        out.append("theta2 must exceed 1")
    for key in ("world_size", "first_layer_k", "n_syn", "max_len"):
        v = getattr(config, key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 1):
            out.append(f"{key} must be a positive integer")
    for key in ("repetitions", "bins", "queries", "mu", "jobs"):
        v = getattr(config, key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            out.append(f"{key} must be a positive integer")
    if not isinstance(config.seed, int) or config.seed < 0:
        out.append("seed must be a non-negative integer")
    rr = config.radius_range
    if len(rr) != 2 or not (0 < rr[0] <= rr[1]):
        out.append("radius_range must be (low, high) with 0 < low <= high")
    if config.ablation is not None and config.ablation not in ABLATIONS:
        out.append("ablation must be one of 1..5")
    if config.model not in ("first", "second", "adaptive"):
        out.append("model must be first, second or adaptive")
    if config.trip_estimation not in ("optimized", "raw_start_end"):
        out.append("trip_estimation must be optimized or raw_start_end")
    return out


@dataclass
class ExperimentResult:
    reports: list
    privacy: dict
    provenance: dict
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.reports:
            raise ValueError("an experiment needs at least one repetition")
        if not self.summary:
            for key in metrics.MetricReport.METRICS:
                vals = np.array([r[key] for r in self.reports])
                self.summary[key] = {"mean": float(vals.mean()), "std": float(vals.std())}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def load_dataset(config: RunConfig) -> TrajectoryDataset:
    if config.input is not None:
        return read_trajectories(config.input)
    spec = builtin_world(config.world)
    if config.world_size is not None:
        spec = spec.with_size(config.world_size)
    return generate_toy_dataset(spec, Rng(config.seed).substream("toy-data"))


def resolve_defaults(config: RunConfig) -> RunConfig:
    """Fill data-dependent defaults (c, pop) and apply the ablation shortcut."""
    config = config.effective()
    if config.input is None:
        spec = builtin_world(config.world)
        config = replace(config, c=config.c or TOY_C, pop=config.pop or spec.pop)
    else:
        config = replace(config, world=None, c=config.c or DEFAULT_C)
    return config


def privacy_ledger(config: RunConfig) -> dict:
    eps = math.inf if config.noise_disabled else config.epsilon
    budget = split_budget(eps, config.budget_ratios)

    def fmt(v):
        return "inf" if math.isinf(v) else v

    ledger = {k: fmt(v) for k, v in budget.ledger().items()}
    ledger["noise_disabled"] = budget.noise_disabled
    ledger["parts_sum"] = fmt(math.fsum((budget.epsilon1, budget.epsilon2, budget.epsilon3)))
    return ledger


@dataclass
class RepetitionOutput:
    synthetic: TrajectoryDataset
    report: metrics.MetricReport
    files: dict


def synthesize(dataset: TrajectoryDataset, config: RunConfig, rng: Rng) -> tuple[TrajectoryDataset, dict]:
    """Run the private pipeline once; returns the synthetic dataset and diagnostics text."""
    eps = math.inf if config.noise_disabled else config.epsilon
    budget = split_budget(eps, config.budget_ratios)
    K = config.first_layer_k or choose_first_layer_K(len(dataset), config.c)
    grid, noisy_density = build_two_layer_grid(
        dataset,
        K,
        budget.epsilon1,
        config.pop,
        rng.substream("discretization"),
        kappa_denom=config.kappa_denom,
        second_layer=config.second_layer_states,
    )
    states = dataset_to_states(dataset, grid)
    m1 = privatize(count_from_states(states, 1, grid.m), budget.epsilon2, rng.substream("model-1"))
    m2 = privatize(
        count_from_states(states, 2, grid.m), budget.epsilon3, rng.substream("model-2"), dense_order2=config.dense_order2
    )
    del states  # nothing below touches raw data
    lengths = shortest_path_lengths(build_state_graph(grid))
    finite = lengths[np.isfinite(lengths)]
    max_len = config.max_len or int(10 * finite.max())
    trips = None
    if config.trip_estimation == "optimized":
        # sequences are augmented with START/END, so compare against path node count + 2
        trips = estimate_trip_distribution(start_counts(m1), end_counts(m1), lengths + 2, float(len(dataset)))
    thresholds = default_thresholds(budget.epsilon2, grid.m)
    thresholds = SelectionThresholds(
        theta1=config.theta1 if config.theta1 is not None else thresholds.theta1, theta2=config.theta2
    )
    n_syn = config.n_syn or len(dataset)
    synthetic = generate_dataset(
        m1, m2, trips, grid, thresholds, n_syn, rng.substream("generation"), max_len, mode=config.model
    )
    diag = {
        "grid.txt": grid.export_text(),
        "density.csv": "\n".join(repr(float(v)) for v in noisy_density) + "\n",
        "model1.txt": m1.dump_text(),
        "model2.txt": m2.dump_text(),
        "info.json": json.dumps(
            {
                "K": K,
                "m": grid.m,
                "expanded_cells": grid.expanded_cells,
                "theta1": thresholds.theta1,
                "theta2": thresholds.theta2,
                "max_len": max_len,
                "n_syn": n_syn,
                "trip_iterations": trips.iterations if trips else None,
                "trip_converged": trips.converged if trips else None,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    }
    if trips is not None:
        diag["trips.csv"] = trips.to_csv()
    return synthetic, diag


def run_repetition(dataset: TrajectoryDataset, config: RunConfig, k: int) -> RepetitionOutput:
    rng = Rng(config.seed).substream(f"rep{k}")
    synthetic, diag = synthesize(dataset, config, rng)
    report = metrics.evaluate(
        dataset,
        synthetic,
        rng.substream("metrics"),
        n_bins=config.bins,
        n_queries=config.queries,
        mu=config.mu,
        phi=config.phi,
        radius_range=config.radius_range,
    )
    files = dict(diag)
    files["synthetic.txt"] = format_trajectories(synthetic)
    files["metrics.json"] = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if config.heatmap:
        files["heatmap_original.csv"] = metrics.heatmap_csv(metrics.density_heatmap(dataset))
        files["heatmap_synthetic.csv"] = metrics.heatmap_csv(metrics.density_heatmap(synthetic))
    return RepetitionOutput(synthetic, report, files)


def _rep_worker(args):
    dataset, config, k = args
    out = run_repetition(dataset, config, k)
    return out.report.to_dict(), out.files


def run_pipeline(config: RunConfig) -> tuple[Path, ExperimentResult]:
    """Run every repetition and write ``<out_dir>/<config-hash>/``; returns that directory."""
    problems = validate_config(config)
    if problems:
        raise ConfigError("; ".join(problems))
    config = resolve_defaults(config)
    started = time.time()
    dataset = load_dataset(config)
    root = Path(config.out_dir) / config.config_hash()
    jobs = [(dataset, config, k) for k in range(config.repetitions)]
    if config.jobs > 1 and config.repetitions > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outputs = list(pool.map(_rep_worker, jobs))
    else:
        outputs = [_rep_worker(j) for j in jobs]
    for k, (_report, files) in enumerate(outputs):
        for name, text in files.items():
            atomic_write_text(root / f"rep{k}" / name, text)
    result = ExperimentResult(
        reports=[r for r, _ in outputs],
        privacy=privacy_ledger(config),
        provenance={
            "config_hash": config.config_hash(),
            "config": config.to_dict(),
            "seed": config.seed,
            "started": started,
            "finished": time.time(),
            "n_original": len(dataset),
        },
    )
    atomic_write_text(root / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(root / "result.json", result.to_json())
    return root, result
