"""Command line surface: benchmarks, ablation grids, single episodes, the
loss-histogram experiment, and synthetic feature generation.

Every flag has a config-file equivalent (flat ``key=value`` lines, ``#``
comments, keys matching the long flag names); explicit flags override config
values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import evaluation
from .balance import BalanceConfig
from .cleaner import CleanerConfig
from .engine import VARIANTS, PipelineConfig, transduce
from .episodes import EpisodeSpec, sample_episode, save_episode
from .errors import ILPCError
from .evaluation import BenchmarkSpec, GridRow
from .features import (
    FORMATS,
    BlobSpec,
    PreprocessSpec,
    generate_blobs,
    load_features,
    save_features,
)
from .graph import GraphConfig
from .propagation import PropagationConfig

DEFAULTS = {
    "format": "npy",
    "preprocess": "",
    "n_way": 5,
    "k_shot": 1,
    "queries": "15",
    "unlabeled": 0,
    "seed": 0,
    "variant": "full",
    "prior": "uniform",
    "weights": "uniform",
    "k_neighbors": 15,
    "alpha": 0.8,
    "gamma": 3.0,
    "tau": 3.0,
    "eta": 0.1,
    "selects_per_class": 3,
    "tasks": 1000,
    "threads": None,
    "csv": None,
    "mode": "auto",
    "trace": False,
    "grid": "table1",
    "noise": 0.2,
    "examples": 500,
    "classes": 5,
    "dim": 64,
    "per_class": 100,
    "mean_scale": 1.0,
    "sigma": 0.35,
    "out": None,
    "features": None,
    "config": None,
    "dump": None,
}

PRIORS = ("none", "uniform", "true")
WEIGHTS = ("uniform", "entropy")
MODES = ("auto", "transductive", "inductive", "semi")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, *groups: str) -> None:
        p.add_argument("--config", help="flat key=value config file")
        if "features" in groups:
            p.add_argument("--features", help="feature file path")
            p.add_argument("--format", help=f"one of {FORMATS}")
            p.add_argument("--preprocess", help="comma list: l2,l1,pt,center,pca=<m>")
        if "episode" in groups:
            p.add_argument("--n-way", type=int, dest="n_way")
            p.add_argument("--k-shot", type=int, dest="k_shot")
            p.add_argument("--queries", help="per-class count, or lo:hi for unbalanced")
            p.add_argument("--unlabeled", type=int)
            p.add_argument("--seed", type=int)
        if "pipeline" in groups:
            p.add_argument("--variant", help=f"one of {VARIANTS}")
            p.add_argument("--prior", help=f"one of {PRIORS}")
            p.add_argument("--weights", help=f"one of {WEIGHTS}")
            p.add_argument("--k-neighbors", type=int, dest="k_neighbors")
            p.add_argument("--alpha", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--tau", type=float)
            p.add_argument("--eta", type=float)
            p.add_argument("--selects-per-class", type=int, dest="selects_per_class")
            p.add_argument("--mode", help=f"one of {MODES}")
        if "run" in groups:
            p.add_argument("--tasks", type=int)
            p.add_argument("--threads", type=int)
            p.add_argument("--csv", help="also write results as CSV")

    bench = sub.add_parser("bench", help="mean accuracy with 95%% CI over many tasks")
    add_common(bench, "features", "episode", "pipeline", "run")

    ablate = sub.add_parser("ablate", help="run a named variant grid")
    add_common(ablate, "features", "episode", "pipeline", "run")
    ablate.add_argument("--grid", help=f"one of {tuple(evaluation.GRIDS)}")

    episode = sub.add_parser("episode", help="run and inspect a single episode")
    add_common(episode, "features", "episode", "pipeline")
    episode.add_argument("--trace", action="store_true", default=None)
    episode.add_argument("--dump", help="write episode splits as RAW_F32 at this stem")

    losshist = sub.add_parser("losshist", help="label-noise loss distribution experiment")
    add_common(losshist, "features")
    losshist.add_argument("--noise", type=float, help="fraction of labels flipped")
    losshist.add_argument("--examples", type=int)
    losshist.add_argument("--eta", type=float)
    losshist.add_argument("--seed", type=int)
    losshist.add_argument("--csv")

    gen = sub.add_parser("gen-blobs", help="write a synthetic labeled feature file")
    gen.add_argument("--config", help="flat key=value config file")
    gen.add_argument("--classes", type=int)
    gen.add_argument("--dim", type=int)
    gen.add_argument("--per-class", type=int, dest="per_class")
    gen.add_argument("--mean-scale", type=float, dest="mean_scale")
    gen.add_argument("--sigma", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", help="output feature file")
    gen.add_argument("--format", help=f"one of {FORMATS}")

    return parser


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ILPCError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def merge_settings(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """defaults < config file < explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        config = read_config_file(args.config)
        for key, raw in config.items():
            if key not in DEFAULTS:
                parser.error(f"unknown config key {key!r} in {args.config}")
            default = DEFAULTS[key]
            if isinstance(default, bool):
                settings[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                settings[key] = int(raw)
            elif isinstance(default, float):
                settings[key] = float(raw)
            else:
                settings[key] = raw
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = value
    if settings["threads"] is None:
        settings["threads"] = int(os.environ.get("ILPC_THREADS", "1"))
    return settings


def _parse_queries(text: str, fail) -> int | tuple[int, int]:
    try:
        if ":" in str(text):
            lo, hi = str(text).split(":", 1)
            return (int(lo), int(hi))
        return int(text)
    except ValueError:
        fail("--queries must be an integer or lo:hi")
        raise


def build_episode_spec(s: dict, fail) -> EpisodeSpec:
    if s["n_way"] < 2:
        fail("--n-way must be >= 2")
    if s["k_shot"] < 1:
        fail("--k-shot must be >= 1")
    if s["unlabeled"] < 0:
        fail("--unlabeled must be >= 0")
    queries = _parse_queries(s["queries"], fail)
    try:
        return EpisodeSpec(
            n_way=s["n_way"],
            k_shot=s["k_shot"],
            queries_per_class=queries,
            unlabeled_per_class=s["unlabeled"],
            seed=s["seed"],
        )
    except ValueError as exc:
        fail(str(exc))
        raise


def build_pipeline(s: dict, fail) -> PipelineConfig:
    for key, allowed, flag in (
        (s["variant"], VARIANTS, "--variant"),
        (s["prior"], PRIORS, "--prior"),
        (s["weights"], WEIGHTS, "--weights"),
        (s["mode"], MODES, "--mode"),
    ):
        if key not in allowed:
            fail(f"{flag} must be one of {allowed}, got {key!r}")
    if not 0 <= s["alpha"] < 1:
        fail("--alpha must lie in [0, 1)")
    if s["gamma"] < 1:
        fail("--gamma must be >= 1")
    if s["tau"] < 1:
        fail("--tau must be >= 1")
    if s["eta"] <= 0:
        fail("--eta must be > 0")
    if s["k_neighbors"] < 1:
        fail("--k-neighbors must be >= 1")
    if s["selects_per_class"] < 1:
        fail("--selects-per-class must be >= 1")
    try:
        preprocess = PreprocessSpec.parse(s["preprocess"])
    except ValueError as exc:
        fail(f"--preprocess: {exc}")
        raise
    balance = BalanceConfig(
        tau=s["tau"],
        weight_policy=s["weights"],
        prior_mode="uniform" if s["prior"] == "none" else s["prior"],
        enabled=s["prior"] != "none",
    )
    return PipelineConfig(
        graph=GraphConfig(k=s["k_neighbors"], gamma=s["gamma"]),
        propagation=PropagationConfig(alpha=s["alpha"]),
        balance=balance,
        cleaner=CleanerConfig(
            learning_rate=s["eta"],
            selects_per_class=s["selects_per_class"],
            seed=s["seed"],
        ),
        variant=s["variant"],
        preprocess=preprocess,
    )


def _resolve_mode(s: dict) -> str:
    if s["mode"] != "auto":
        return s["mode"]
    return "semi" if s["unlabeled"] > 0 else "transductive"


def _load(s: dict, fail):
    if not s["features"]:
        fail("--features is required")
    return load_features(s["features"], format=s["format"])


def _cmd_bench(s: dict, fail) -> int:
    fs = _load(s, fail)
    if s["tasks"] < 1:
        fail("--tasks must be >= 1")
    spec = BenchmarkSpec(
        episode_spec=build_episode_spec(s, fail),
        pipeline=build_pipeline(s, fail),
        n_tasks=s["tasks"],
        seed=s["seed"],
        mode=_resolve_mode(s),
    )
    result = evaluation.run_benchmark(fs, spec, threads=s["threads"])
    rows = [GridRow(label=s["variant"], result=result)]
    print(evaluation.render_grid(rows, s["tasks"]))
    if s["csv"]:
        evaluation.write_grid_csv(rows, s["tasks"], s["csv"])
    return 0


def _cmd_ablate(s: dict, fail) -> int:
    fs = _load(s, fail)
    if s["grid"] not in evaluation.GRIDS:
        fail(f"--grid must be one of {tuple(evaluation.GRIDS)}")
    base = BenchmarkSpec(
        episode_spec=build_episode_spec(s, fail),
        pipeline=build_pipeline(s, fail),
        n_tasks=s["tasks"],
        seed=s["seed"],
        mode=_resolve_mode(s),
    )
    rows = evaluation.ablation_grid(fs, evaluation.GRIDS[s["grid"]](base), threads=s["threads"])
    print(evaluation.render_grid(rows, s["tasks"]))
    if s["csv"]:
        evaluation.write_grid_csv(rows, s["tasks"], s["csv"])
    return 0


def _cmd_episode(s: dict, fail) -> int:
    fs = _load(s, fail)
    ep = sample_episode(fs, build_episode_spec(s, fail))
    cfg = evaluation._resolve_pipeline(ep, build_pipeline(s, fail))
    if s["dump"]:
        for path in save_episode(ep, s["dump"]):
            print(f"wrote {path}")
    result = transduce(ep, cfg, trace=bool(s["trace"]))
    acc = evaluation.accuracy(result.predicted, ep)
    print(f"queries={ep.query_count} iterations={result.iterations_run} accuracy={acc:.4f}")
    if s["trace"] and result.per_iteration_trace:
        for entry in result.per_iteration_trace:
            decided = entry["decided_queries"]
            line = f"iter {entry['iteration']}: decided {len(decided)} queries"
            if "sinkhorn_violation" in entry:
                line += (
                    f", sinkhorn {entry['sinkhorn_iterations']} sweeps"
                    f" (violation {entry['sinkhorn_violation']:.2e})"
                )
            print(line)
    return 0


def _cmd_losshist(s: dict, fail) -> int:
    fs = _load(s, fail)
    if not 0 < s["noise"] < 1:
        fail("--noise must lie in (0, 1)")
    cfg = CleanerConfig(learning_rate=s["eta"], seed=s["seed"])
    clean, noisy = evaluation.loss_histogram_experiment(
        fs, s["noise"], s["examples"], cfg, seed=s["seed"]
    )
    print(
        f"clean: n={clean.size} mean={clean.mean():.4f}  "
        f"noisy: n={noisy.size} mean={noisy.mean():.4f}  "
        f"min-loss example is {'clean' if clean.min() <= noisy.min() else 'noisy'}"
    )
    if s["csv"]:
        evaluation.write_loss_histogram_csv(clean, noisy, s["csv"])
    return 0


def _cmd_gen_blobs(s: dict, fail) -> int:
    if not s["out"]:
        fail("--out is required")
    for flag, key in (("--classes", "classes"), ("--dim", "dim"), ("--per-class", "per_class")):
        if s[key] < 1:
            fail(f"{flag} must be >= 1")
    if s["sigma"] <= 0:
        fail("--sigma must be > 0")
    fs = generate_blobs(
        BlobSpec(
            class_count=s["classes"],
            dim=s["dim"],
            per_class_mean_scale=s["mean_scale"],
            noise_sigma=s["sigma"],
            examples_per_class=s["per_class"],
            seed=s["seed"],
        )
    )
    save_features(fs, s["out"], format=s["format"])
    print(f"wrote {s['out']}: {fs.n_examples} x {fs.dim}, {fs.class_count} classes")
    return 0


COMMANDS = {
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
    "episode": _cmd_episode,
    "losshist": _cmd_losshist,
    "gen-blobs": _cmd_gen_blobs,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = merge_settings(args, parser)
        return COMMANDS[args.command](settings, parser.error)
    except SystemExit:
        raise
    except (ILPCError, OSError, ValueError) as exc:
        print(f"ilpc: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI must not crash with a traceback
        print(f"ilpc: unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
