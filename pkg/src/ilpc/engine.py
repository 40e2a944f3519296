"""Iterative inference: propagate labels over the graph, balance the scores,
keep the cleanest pseudo-labels, grow the support set, repeat until every
query is decided. Also the single-pass ablation variants and the inductive
and semi-supervised modes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from sklearn.linear_model import LogisticRegression

from . import balance as balance_mod
from . import cleaner as cleaner_mod
from .balance import BalanceConfig, BalanceOutcome
from .cleaner import CleanerConfig
from .episodes import Episode
from .errors import ILPCError
from .features import FeatureSet, PreprocessSpec, preprocess
from .graph import GraphConfig, build_graph
from .propagation import PropagationConfig, make_label_matrix, propagate

VARIANTS = ("full", "lp", "lp-balance", "lp-clean", "iprob", "class-balance")

# Single-pass variants stop after the first prediction round.
_SINGLE_PASS = ("lp", "lp-balance")
# Variants whose score matrix never goes through the marginal projection.
_NO_BALANCE = ("lp", "lp-clean")


@dataclass(frozen=True)
class PipelineConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    cleaner: CleanerConfig = field(default_factory=CleanerConfig)
    variant: str = "full"
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class InferenceResult:
    """Predictions aligned to the original query order, the score rows in
    force when each query was decided, and optional per-iteration
    diagnostics."""

    predicted: np.ndarray
    final_scores: np.ndarray
    iterations_run: int
    per_iteration_trace: list[dict[str, Any]] | None = None


def transduce(ep: Episode, cfg: PipelineConfig, trace: bool = False) -> InferenceResult:
    """Predict every query of the episode under the configured variant."""
    if ep.query_count == 0:
        raise ILPCError("episode has no queries to transduce")
    sx, qx = _preprocess_split(ep.support_x, ep.query_x, cfg.preprocess)
    return _transduce_arrays(sx, ep.support_y, qx, ep.n_way, cfg, trace=trace)


def inductive_baseline(ep: Episode, preprocess_spec: PreprocessSpec | None = None) -> np.ndarray:
    """Logistic regression on the support set only; queries predicted
    independently."""
    sx, qx = ep.support_x, ep.query_x
    if preprocess_spec is not None and preprocess_spec.steps:
        # Inductive setting: statistics come from the support only.
        sx, qx = _preprocess_split(sx, qx, preprocess_spec, stats_count=ep.support_count)
    return _fit_predict_logreg(sx, ep.support_y, qx, ep.n_way)


def semi_supervised(ep: Episode, cfg: PipelineConfig, trace: bool = False) -> np.ndarray:
    """Pseudo-label the unlabeled pool transductively, then classify queries
    inductively on the augmented support."""
    if ep.unlabeled_count == 0:
        return inductive_baseline(ep, cfg.preprocess)
    stacked = np.vstack([ep.support_x, ep.unlabeled_x, ep.query_x])
    l, mu = ep.support_count, ep.unlabeled_count
    if cfg.preprocess.steps:
        fs = preprocess(
            FeatureSet(data=stacked, source_tag="episode"),
            cfg.preprocess,
            stats_indices=np.arange(l + mu),
        )
        stacked = fs.data
    sx, ux, qx = stacked[:l], stacked[l : l + mu], stacked[l + mu :]
    result = _transduce_arrays(sx, ep.support_y, ux, ep.n_way, cfg, trace=trace)
    fit_x = np.vstack([sx, ux])
    fit_y = np.concatenate([ep.support_y, result.predicted])
    return _fit_predict_logreg(fit_x, fit_y, qx, ep.n_way)


def _preprocess_split(
    sx: np.ndarray,
    qx: np.ndarray,
    spec: PreprocessSpec,
    stats_count: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    if not spec.steps:
        return sx, qx
    stacked = np.vstack([sx, qx])
    stats = None if stats_count is None else np.arange(stats_count)
    fs = preprocess(FeatureSet(data=stacked, source_tag="episode"), spec, stats_indices=stats)
    return fs.data[: sx.shape[0]], fs.data[sx.shape[0] :]


def _fit_predict_logreg(sx, sy, qx, n_way) -> np.ndarray:
    if np.unique(sy).size < 2:
        raise ILPCError("logistic regression needs at least two support classes")
    clf = LogisticRegression(max_iter=1000)
    clf.fit(sx, sy)
    return clf.predict(qx).astype(np.int64)


def _transduce_arrays(
    sx: np.ndarray,
    sy: np.ndarray,
    qx: np.ndarray,
    n_way: int,
    cfg: PipelineConfig,
    trace: bool = False,
) -> InferenceResult:
    m0 = qx.shape[0]
    predicted = np.full(m0, -1, dtype=np.int64)
    final_scores = np.zeros((m0, n_way))
    orig_idx = np.arange(m0)
    moved_per_class = np.zeros(n_way)
    trace_log: list[dict[str, Any]] | None = [] if trace else None

    balance_cfg = cfg.balance
    if cfg.variant in _NO_BALANCE and balance_cfg.enabled:
        balance_cfg = replace(balance_cfg, enabled=False)

    # With a known prior, per-class balance targets shrink as queries of that
    # class are moved to the support.
    class_budget = None
    if balance_cfg.enabled and balance_cfg.prior_mode == "given":
        class_budget = balance_cfg.class_prior / balance_cfg.class_prior.sum() * m0

    iteration = 0
    while qx.shape[0] > 0:
        iteration += 1
        col_targets = None
        if class_budget is not None:
            remaining = np.maximum(class_budget - moved_per_class, 0.0)
            total = remaining.sum()
            if total <= 0:
                remaining = np.ones(n_way)
                total = float(n_way)
            col_targets = remaining / total  # scaled to the row mass below

        outcome = _score_round(sx, sy, qx, n_way, cfg, balance_cfg, col_targets)
        labels, scores = outcome.labels, outcome.scores

        remaining_q = qx.shape[0]
        admit_all = (
            cfg.variant in _SINGLE_PASS
            or remaining_q <= cfg.cleaner.selects_per_class * n_way
        )
        if admit_all:
            predicted[orig_idx] = labels
            final_scores[orig_idx] = scores
            if trace_log is not None:
                trace_log.append(_trace_entry(iteration, orig_idx, outcome))
            break

        if cfg.variant == "iprob":
            selected = _select_top_scores(scores, labels, cfg.cleaner.selects_per_class)
        else:
            iter_cfg = replace(cfg.cleaner, seed=cfg.cleaner.seed + iteration)
            report = cleaner_mod.train_and_score(
                sx, sy, qx, labels, outcome.row_weights, iter_cfg, n_way
            )
            selected = cleaner_mod.select_cleanest(
                report.avg_loss, labels, cfg.cleaner.selects_per_class
            )

        predicted[orig_idx[selected]] = labels[selected]
        final_scores[orig_idx[selected]] = scores[selected]
        moved_per_class += np.bincount(labels[selected], minlength=n_way)
        if trace_log is not None:
            trace_log.append(_trace_entry(iteration, orig_idx[selected], outcome))

        sx, sy, qx, keep = cleaner_mod.augment(sx, sy, qx, selected, labels)
        orig_idx = orig_idx[keep]

    return InferenceResult(
        predicted=predicted,
        final_scores=final_scores,
        iterations_run=iteration,
        per_iteration_trace=trace_log,
    )


def _score_round(
    sx: np.ndarray,
    sy: np.ndarray,
    qx: np.ndarray,
    n_way: int,
    cfg: PipelineConfig,
    balance_cfg: BalanceConfig,
    col_target_fractions: np.ndarray | None,
) -> BalanceOutcome:
    """One pass of scoring the current queries: label propagation (or the
    classifier variant), then balancing and prediction."""
    if cfg.variant == "class-balance":
        raw = _classifier_scores(sx, sy, qx, n_way)
        weights = _weights_from_scores(raw, balance_cfg.weight_policy)
    else:
        feats = np.vstack([sx, qx])
        k = min(cfg.graph.k, feats.shape[0] - 1)
        graph_cfg = cfg.graph if k == cfg.graph.k else GraphConfig(k=k, gamma=cfg.graph.gamma)
        g = build_graph(feats, graph_cfg)
        y = make_label_matrix(sy, n_way, feats.shape[0])
        z = propagate(g, y, cfg.propagation)
        raw = balance_mod.extract_unlabeled_block(z, sx.shape[0])
        weights = balance_mod.confidence_weights(z, sx.shape[0], balance_cfg.weight_policy)

    col_targets = None
    if col_target_fractions is not None:
        col_targets = float(np.sum(weights)) * col_target_fractions
    scores, info = balance_mod.balance_scores(raw, weights, balance_cfg, col_targets)
    labels, confidence = balance_mod.predict_pseudo_labels(scores)
    return BalanceOutcome(
        scores=scores,
        labels=labels,
        confidence=confidence,
        row_weights=weights,
        sinkhorn=info,
    )


def _classifier_scores(sx, sy, qx, n_way) -> np.ndarray:
    """Class probabilities from a support-trained logistic regression, with
    columns aligned to the episode classes."""
    if np.unique(sy).size < 2:
        raise ILPCError("logistic regression needs at least two support classes")
    clf = LogisticRegression(max_iter=1000)
    clf.fit(sx, sy)
    proba = clf.predict_proba(qx)
    aligned = np.zeros((qx.shape[0], n_way))
    aligned[:, clf.classes_.astype(int)] = proba
    return aligned


def _weights_from_scores(scores: np.ndarray, policy: str) -> np.ndarray:
    padded = np.vstack([np.zeros((0, scores.shape[1])), scores])
    return balance_mod.confidence_weights(padded, 0, policy)


def _select_top_scores(scores: np.ndarray, labels: np.ndarray, per_class: int) -> np.ndarray:
    """Selection by score instead of cleaning loss: per pseudo-class, the
    rows with the largest column value; ties to the lower index."""
    chosen: list[np.ndarray] = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order = members[np.lexsort((members, -scores[members, c]))]
        chosen.append(order[:per_class])
    return np.sort(np.concatenate(chosen))


def _trace_entry(iteration: int, decided: np.ndarray, outcome: BalanceOutcome) -> dict[str, Any]:
    entry: dict[str, Any] = {
        "iteration": iteration,
        "decided_queries": decided.tolist(),
    }
    if outcome.sinkhorn is not None:
        entry["sinkhorn_violation"] = outcome.sinkhorn.max_violation
        entry["sinkhorn_iterations"] = outcome.sinkhorn.iterations
    return entry
