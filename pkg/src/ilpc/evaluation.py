"""Many-episode benchmarking with confidence intervals, ablation grids, and
the label-noise loss-distribution experiment.

This is the only module allowed to read an episode's hidden ground-truth
labels; inference code receives them through config (e.g. a resolved class
prior), never directly.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import engine
from .cleaner import CleanerConfig, train_and_score
from .engine import PipelineConfig
from .episodes import Episode, EpisodeSpec, sample_episode, true_prior
from .features import FeatureSet

MODES = ("transductive", "inductive", "semi")


def hidden_query_labels(ep: Episode) -> np.ndarray:
    """Ground-truth query labels; evaluation-only accessor."""
    return ep.query_y_hidden


def accuracy(predicted: np.ndarray, ep: Episode) -> float:
    return float(np.mean(predicted == hidden_query_labels(ep)))


@dataclass(frozen=True)
class BenchmarkSpec:
    episode_spec: EpisodeSpec
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    n_tasks: int = 1000
    seed: int = 0
    mode: str = "transductive"

    def __post_init__(self) -> None:
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class BenchmarkResult:
    mean_accuracy: float
    ci95: float
    per_task_accuracy: np.ndarray
    wall_time_per_task: float


def _task_seeds(seed: int, n_tasks: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n_tasks)


def _resolve_pipeline(ep: Episode, cfg: PipelineConfig) -> PipelineConfig:
    # The "true" prior sentinel becomes a concrete per-episode distribution
    # here, outside inference code.
    if cfg.balance.enabled and cfg.balance.prior_mode == "true":
        prior = true_prior(ep)
        cfg = replace(
            cfg, balance=replace(cfg.balance, prior_mode="given", class_prior=prior)
        )
    return cfg


def run_task(fs: FeatureSet, spec: BenchmarkSpec, task_seed: int) -> tuple[float, float]:
    """One episode end to end; returns (accuracy, seconds)."""
    ep = sample_episode(fs, replace(spec.episode_spec, seed=int(task_seed)))
    cfg = _resolve_pipeline(ep, spec.pipeline)
    start = time.perf_counter()
    if spec.mode == "inductive":
        predicted = engine.inductive_baseline(ep, cfg.preprocess)
    elif spec.mode == "semi":
        predicted = engine.semi_supervised(ep, cfg)
    else:
        predicted = engine.transduce(ep, cfg).predicted
    elapsed = time.perf_counter() - start
    return accuracy(predicted, ep), elapsed


_WORKER: dict = {}


def _init_worker(fs: FeatureSet, spec: BenchmarkSpec) -> None:
    _WORKER["fs"] = fs
    _WORKER["spec"] = spec


def _worker_task(task_seed: int) -> tuple[float, float]:
    return run_task(_WORKER["fs"], _WORKER["spec"], task_seed)


def run_benchmark(fs: FeatureSet, spec: BenchmarkSpec, threads: int = 1) -> BenchmarkResult:
    """Run n_tasks episodes with derived per-task seeds and aggregate.

    `threads` > 1 dispatches episodes to a process pool; results are reduced
    in task-index order, so the output is identical regardless of
    scheduling.
    """
    seeds = _task_seeds(spec.seed, spec.n_tasks)
    if threads > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(fs, spec)
        ) as pool:
            chunk = max(1, spec.n_tasks // (8 * threads))
            outcomes = list(pool.map(_worker_task, seeds, chunksize=chunk))
    else:
        outcomes = [run_task(fs, spec, s) for s in seeds]

    acc = np.array([a for a, _ in outcomes])
    times = np.array([t for _, t in outcomes])
    ci95 = 0.0
    if acc.size > 1:
        ci95 = float(1.96 * acc.std(ddof=1) / np.sqrt(acc.size))
    return BenchmarkResult(
        mean_accuracy=float(acc.mean()),
        ci95=ci95,
        per_task_accuracy=acc,
        wall_time_per_task=float(times.mean()),
    )


@dataclass(frozen=True)
class GridRow:
    label: str
    result: BenchmarkResult | None
    error: str | None = None


def ablation_grid(
    fs: FeatureSet,
    variants: Sequence[tuple[str, BenchmarkSpec]],
    threads: int = 1,
) -> list[GridRow]:
    """One benchmark per named variant; per-cell failures are recorded and
    the grid continues."""
    rows: list[GridRow] = []
    for label, spec in variants:
        try:
            rows.append(GridRow(label=label, result=run_benchmark(fs, spec, threads)))
        except Exception as exc:  # noqa: BLE001 - grid must survive bad cells
            rows.append(GridRow(label=label, result=None, error=str(exc)))
    return rows


def table1_grid(base: BenchmarkSpec) -> list[tuple[str, BenchmarkSpec]]:
    """The algorithmic-component ablation: inductive baseline plus every
    pipeline variant."""

    def with_variant(v: str) -> BenchmarkSpec:
        return replace(base, pipeline=replace(base.pipeline, variant=v), mode="transductive")

    return [
        ("inductive", replace(base, mode="inductive")),
        ("lp", with_variant("lp")),
        ("lp-balance", with_variant("lp-balance")),
        ("lp-clean", with_variant("lp-clean")),
        ("full", with_variant("full")),
        ("iprob", with_variant("iprob")),
        ("class-balance", with_variant("class-balance")),
    ]


def prior_grid(base: BenchmarkSpec) -> list[tuple[str, BenchmarkSpec]]:
    """No balancing vs. uniform-prior vs. true-prior balancing."""

    def with_balance(**kw) -> BenchmarkSpec:
        return replace(base, pipeline=replace(base.pipeline, balance=replace(base.pipeline.balance, **kw)))

    return [
        ("none", with_balance(enabled=False)),
        ("uniform", with_balance(enabled=True, prior_mode="uniform")),
        ("true", with_balance(enabled=True, prior_mode="true")),
    ]


def weight_grid(base: BenchmarkSpec) -> list[tuple[str, BenchmarkSpec]]:
    """Uniform vs. entropy confidence weights."""

    def with_policy(policy: str) -> BenchmarkSpec:
        return replace(
            base,
            pipeline=replace(
                base.pipeline, balance=replace(base.pipeline.balance, weight_policy=policy)
            ),
        )

    return [("uniform", with_policy("uniform")), ("entropy", with_policy("entropy"))]


GRIDS = {
    "table1": table1_grid,
    "priors": prior_grid,
    "weights": weight_grid,
}


def render_grid(rows: Sequence[GridRow], n_tasks: int) -> str:
    """Aligned text table of grid results."""
    width = max(len(r.label) for r in rows)
    lines = [f"{'variant'.ljust(width)}  {'tasks':>6}  {'mean':>8}  {'ci95':>8}  {'s/task':>8}"]
    for r in rows:
        if r.result is None:
            lines.append(f"{r.label.ljust(width)}  {'-':>6}  error: {r.error}")
        else:
            lines.append(
                f"{r.label.ljust(width)}  {n_tasks:>6}  "
                f"{100 * r.result.mean_accuracy:>8.2f}  "
                f"{100 * r.result.ci95:>8.2f}  "
                f"{r.result.wall_time_per_task:>8.3f}"
            )
    return "\n".join(lines)


def write_grid_csv(rows: Sequence[GridRow], n_tasks: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n_tasks", "mean", "ci95", "seconds_per_task"])
        for r in rows:
            if r.result is None:
                writer.writerow([r.label, n_tasks, "error", r.error, ""])
            else:
                writer.writerow(
                    [
                        r.label,
                        n_tasks,
                        f"{r.result.mean_accuracy:.6f}",
                        f"{r.result.ci95:.6f}",
                        f"{r.result.wall_time_per_task:.6f}",
                    ]
                )


def loss_histogram_experiment(
    fs: FeatureSet,
    noise_fraction: float,
    n_examples: int,
    cfg: CleanerConfig,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Flip a fraction of labels uniformly to another class, train the
    cleaning classifier on the noisy set, and return (clean_losses,
    noisy_losses) average-loss populations."""
    if not 0 < noise_fraction < 1:
        raise ValueError("noise_fraction must lie in (0, 1)")
    if fs.labels is None:
        raise ValueError("loss histogram experiment needs labeled features")
    rng = np.random.default_rng(seed)
    if n_examples > fs.n_examples:
        raise ValueError(f"requested {n_examples} examples, feature set has {fs.n_examples}")
    picked = rng.choice(fs.n_examples, size=n_examples, replace=False)
    x = fs.data[picked]
    y = fs.labels[picked].copy()

    n_flip = round(noise_fraction * n_examples)
    flip_idx = rng.choice(n_examples, size=n_flip, replace=False)
    offsets = rng.integers(1, fs.class_count, size=n_flip)
    y[flip_idx] = (y[flip_idx] + offsets) % fs.class_count

    empty_x = np.empty((0, fs.dim))
    empty_y = np.empty(0, dtype=np.int64)
    report = train_and_score(
        empty_x, empty_y, x, y, np.ones(n_examples), cfg, n_way=fs.class_count
    )
    flipped = np.zeros(n_examples, dtype=bool)
    flipped[flip_idx] = True
    return report.avg_loss[~flipped], report.avg_loss[flipped]


def write_loss_histogram_csv(
    clean: np.ndarray, noisy: np.ndarray, path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss", "is_clean"])
        for v in clean:
            writer.writerow([f"{v:.9g}", 1])
        for v in noisy:
            writer.writerow([f"{v:.9g}", 0])
