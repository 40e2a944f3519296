"""Pseudo-label cleaning via loss statistics of a small linear classifier.

A linear softmax head is imprinted from class-mean features and trained with
momentum SGD on a weighted cross-entropy: support terms weigh 1, pseudo terms
weigh their confidence. Because the head barely fits the data, wrongly
pseudo-labeled examples keep a visibly higher loss across training; the
per-example loss averaged over epochs ranks them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import TrainingError


@dataclass(frozen=True)
class Constant:
    """Fixed learning rate."""


@dataclass(frozen=True)
class Cyclic:
    """Triangular cycle: within each period the rate falls linearly from
    lr_max to lr_min, then resets."""

    period: int = 100
    lr_min: float = 0.001
    lr_max: float = 0.1


@dataclass(frozen=True)
class FullBatch:
    """One update per pass over all examples."""


@dataclass(frozen=True)
class MiniBatch:
    size: int = 32


@dataclass(frozen=True)
class CleanerConfig:
    learning_rate: float = 0.1
    iterations: int = 1000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    selects_per_class: int = 3
    lr_schedule: Constant | Cyclic = Constant()
    batch_mode: FullBatch | MiniBatch = FullBatch()
    seed: int = 0
    record_per_epoch: bool = False

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.selects_per_class < 1:
            raise ValueError("selects_per_class must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class LinearClassifier:
    """Softmax linear head: probabilities propto exp(x @ weights.T + bias)."""

    weights: np.ndarray
    bias: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias

    def log_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def proba(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_proba(x))


@dataclass(frozen=True)
class CleaningReport:
    """Average per-pseudo-example loss over recorded epochs plus the chosen
    index set (attached after selection)."""

    avg_loss: np.ndarray
    selected: np.ndarray | None = None
    per_epoch_loss: np.ndarray | None = None

    def dump_per_epoch_csv(self, path: str | Path) -> None:
        if self.per_epoch_loss is None:
            raise ValueError("report was built without per-epoch recording")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"ex{i}" for i in range(self.per_epoch_loss.shape[1])])
            writer.writerows(self.per_epoch_loss.tolist())


def imprint_classifier(
    x: np.ndarray, y: np.ndarray, n_way: int, support_count: int
) -> LinearClassifier:
    """Class weights = mean feature of that class's support examples, zero
    bias; classes absent from the support fall back to their pseudo-labeled
    members."""
    d = x.shape[1]
    weights = np.zeros((n_way, d))
    for c in range(n_way):
        in_support = np.flatnonzero(y[:support_count] == c)
        members = in_support if in_support.size else support_count + np.flatnonzero(
            y[support_count:] == c
        )
        if members.size:
            weights[c] = x[members].mean(axis=0)
    return LinearClassifier(weights=weights, bias=np.zeros(n_way))


def loss_and_grad(
    clf: LinearClassifier,
    x: np.ndarray,
    y: np.ndarray,
    example_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted cross-entropy summed over examples, with gradients.

    Returns (total_loss, grad_weights, grad_bias, per_example_loss). The
    per-example terms are -w_i * log p(y_i | x_i); weight decay is an
    optimizer detail and is not part of this loss.
    """
    logp = clf.log_proba(x)
    idx = np.arange(x.shape[0])
    per_example = -example_weights * logp[idx, y]
    total = float(per_example.sum())

    g_logits = np.exp(logp)
    g_logits[idx, y] -= 1.0
    g_logits *= example_weights[:, None]
    grad_w = g_logits.T @ x
    grad_b = g_logits.sum(axis=0)
    return total, grad_w, grad_b, per_example


def _learning_rate(cfg: CleanerConfig, iteration: int) -> float:
    sched = cfg.lr_schedule
    if isinstance(sched, Constant):
        return cfg.learning_rate
    phase = (iteration - 1) % sched.period
    frac = phase / max(sched.period - 1, 1)
    return sched.lr_max - (sched.lr_max - sched.lr_min) * frac


def train_and_score(
    support_x: np.ndarray,
    support_y: np.ndarray,
    pseudo_x: np.ndarray,
    pseudo_y: np.ndarray,
    pseudo_weights: np.ndarray,
    cfg: CleanerConfig,
    n_way: int,
) -> CleaningReport:
    """Train the imprinted head and collect per-pseudo-example average loss.

    Losses are recorded after each update (never at initialization, where the
    imprinted head makes them uninformative) and averaged over all recorded
    epochs. Deterministic for a fixed config.
    """
    if pseudo_x.shape[0] == 0:
        raise ValueError("empty pseudo set")
    if support_x.shape[0] and support_x.shape[1] != pseudo_x.shape[1]:
        raise ValueError("support and pseudo feature dimensions differ")

    support_count = support_x.shape[0]
    x = np.vstack([support_x, pseudo_x]) if support_count else np.asarray(pseudo_x, float)
    y = np.concatenate([support_y, pseudo_y]).astype(np.int64)
    w = np.concatenate([np.ones(support_count), np.asarray(pseudo_weights, float)])

    clf = imprint_classifier(x, y, n_way, support_count)
    vel_w = np.zeros_like(clf.weights)
    vel_b = np.zeros_like(clf.bias)
    rng = np.random.default_rng(cfg.seed)

    m = pseudo_x.shape[0]
    loss_sum = np.zeros(m)
    per_epoch = np.empty((cfg.iterations, m)) if cfg.record_per_epoch else None

    for it in range(1, cfg.iterations + 1):
        lr = _learning_rate(cfg, it)
        if isinstance(cfg.batch_mode, FullBatch):
            _, gw, gb, _ = loss_and_grad(clf, x, y, w)
            _sgd_step(clf, gw, gb, vel_w, vel_b, lr, cfg)
        else:
            order = rng.permutation(x.shape[0])
            size = cfg.batch_mode.size
            for start in range(0, order.size, size):
                batch = order[start : start + size]
                _, gw, gb, _ = loss_and_grad(clf, x[batch], y[batch], w[batch])
                _sgd_step(clf, gw, gb, vel_w, vel_b, lr, cfg)

        logp = clf.log_proba(pseudo_x)
        epoch_losses = -w[support_count:] * logp[np.arange(m), pseudo_y]
        if not np.isfinite(epoch_losses).all():
            raise TrainingError(f"non-finite loss at iteration {it} (lr={lr:g})")
        loss_sum += epoch_losses
        if per_epoch is not None:
            per_epoch[it - 1] = epoch_losses

    return CleaningReport(avg_loss=loss_sum / cfg.iterations, per_epoch_loss=per_epoch)


def _sgd_step(clf, grad_w, grad_b, vel_w, vel_b, lr, cfg) -> None:
    grad_w = grad_w + cfg.weight_decay * clf.weights
    grad_b = grad_b + cfg.weight_decay * clf.bias
    vel_w *= cfg.momentum
    vel_w += grad_w
    vel_b *= cfg.momentum
    vel_b += grad_b
    clf.weights = clf.weights - lr * vel_w
    clf.bias = clf.bias - lr * vel_b


def select_cleanest(
    report_losses: np.ndarray, pseudo_labels: np.ndarray, per_class: int
) -> np.ndarray:
    """For each class present among the pseudo-labels, the per_class indices
    with the smallest average loss; ties broken by lower index."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    losses = np.asarray(report_losses, dtype=np.float64)
    labels = np.asarray(pseudo_labels)
    chosen: list[np.ndarray] = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order = members[np.lexsort((members, losses[members]))]
        chosen.append(order[:per_class])
    return np.sort(np.concatenate(chosen))


def attach_selection(report: CleaningReport, selected: np.ndarray) -> CleaningReport:
    return replace(report, selected=np.asarray(selected))


def augment(
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    selected: np.ndarray,
    pseudo_labels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Move the selected queries (with their pseudo-labels) into the support.

    Returns (support_x, support_y, query_x, keep_mask) where keep_mask marks
    the query rows that remain, letting callers remap bookkeeping indices.
    """
    selected = np.asarray(selected, dtype=np.intp)
    m = query_x.shape[0]
    if selected.size != np.unique(selected).size:
        raise ValueError("selected indices must be distinct")
    if selected.size and (selected.min() < 0 or selected.max() >= m):
        raise ValueError(f"selected index outside the query set (size {m})")
    keep = np.ones(m, dtype=bool)
    keep[selected] = False
    new_sx = np.vstack([support_x, query_x[selected]])
    new_sy = np.concatenate([support_y, np.asarray(pseudo_labels)[selected]])
    return new_sx, new_sy, query_x[keep], keep
