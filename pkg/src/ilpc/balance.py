"""Class balancing of score matrices: power transform, Sinkhorn-Knopp
projection onto prescribed marginals, confidence weights, and pseudo-label
prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleMarginalsError

# Floor added to fully-zero rows that carry a positive row-sum target, so the
# projection stays defined on degenerate solver outputs.
ZERO_ROW_FLOOR = 1e-300

WEIGHT_POLICIES = ("uniform", "entropy")
PRIOR_MODES = ("uniform", "given", "true")


@dataclass(frozen=True)
class BalanceConfig:
    """Score sharpening and marginal-projection settings.

    `prior_mode` "uniform" spreads the total row mass evenly over classes;
    "given" uses `class_prior`; "true" is a sentinel the evaluation layer
    resolves to the episode's actual class distribution before inference code
    ever sees it. `enabled` False skips the projection entirely.
    """

    tau: float = 3.0
    weight_policy: str = "uniform"
    prior_mode: str = "uniform"
    class_prior: np.ndarray | None = None
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-6
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.weight_policy not in WEIGHT_POLICIES:
            raise ValueError(f"weight_policy must be one of {WEIGHT_POLICIES}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.prior_mode == "given":
            u = np.asarray(self.class_prior, dtype=np.float64)
            if u.ndim != 1 or u.min() < 0 or abs(u.sum() - 1.0) > 1e-9:
                raise ValueError("class_prior must be a nonnegative vector summing to 1")
            u.setflags(write=False)
            object.__setattr__(self, "class_prior", u)


@dataclass(frozen=True)
class SinkhornInfo:
    """Diagnostics from one Sinkhorn run."""

    iterations: int
    max_violation: float
    converged: bool
    floored_rows: int = 0


@dataclass(frozen=True)
class BalanceOutcome:
    scores: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray
    row_weights: np.ndarray
    sinkhorn: SinkhornInfo | None = None


def extract_unlabeled_block(z: np.ndarray, support_count: int) -> np.ndarray:
    """Rows after the support block, clamped nonnegative (tiny negatives are
    solver residue)."""
    if support_count >= z.shape[0]:
        raise ValueError(f"support_count {support_count} leaves no unlabeled rows")
    return np.maximum(z[support_count:], 0.0)


def power_transform(p: np.ndarray, tau: float) -> np.ndarray:
    """Element-wise p**tau; sharpens rows without changing their argmax."""
    if tau == 1.0:
        return np.array(p, copy=True)
    return np.power(p, tau)


def confidence_weights(z: np.ndarray, support_count: int, policy: str = "uniform") -> np.ndarray:
    """Per-row confidence in [0, 1] for the unlabeled block of `z`.

    "uniform" gives every row weight 1. "entropy" gives
    1 - H(row) / log(N) on the l1-normalized row; all-zero rows get 0
    (maximum uncertainty).
    """
    rows = np.maximum(z[support_count:], 0.0)
    m, n = rows.shape
    if policy == "uniform":
        return np.ones(m)
    if policy != "entropy":
        raise ValueError(f"unknown weight policy {policy!r}")
    if n < 2:
        raise ValueError("entropy weights need at least 2 classes")
    sums = rows.sum(axis=1, keepdims=True)
    norm = np.divide(rows, sums, out=np.zeros_like(rows), where=sums > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(norm > 0, norm * np.log(norm), 0.0)
    entropy = -plogp.sum(axis=1)
    weights = 1.0 - entropy / np.log(n)
    weights[sums.ravel() == 0] = 0.0
    return np.clip(weights, 0.0, 1.0)


def sinkhorn(
    p_mat: np.ndarray,
    row_sums: np.ndarray,
    col_sums: np.ndarray,
    cfg: BalanceConfig,
) -> tuple[np.ndarray, SinkhornInfo]:
    """Alternately rescale rows then columns of `p_mat` toward the target
    marginals.

    Stops once the worst marginal violation drops to sinkhorn_tol or the
    iteration budget runs out; the final state is returned either way, with
    the achieved violation in the info. The output is diag(a) @ p_mat @
    diag(b) for positive scalings, so the zero pattern is preserved exactly.
    """
    x = np.array(p_mat, dtype=np.float64)
    p = np.asarray(row_sums, dtype=np.float64)
    q = np.asarray(col_sums, dtype=np.float64)
    m, n = x.shape
    if p.shape != (m,) or q.shape != (n,):
        raise ValueError("marginal vectors do not match the matrix shape")
    if x.min() < 0:
        raise ValueError("sinkhorn requires a nonnegative matrix")
    mass = p.sum()
    if abs(mass - q.sum()) > 1e-9 * max(1.0, mass):
        raise ValueError(f"row mass {mass!r} != column mass {q.sum()!r}")

    dead_cols = (q > 0) & (x.max(axis=0, initial=0.0) <= 0)
    if dead_cols.any():
        raise InfeasibleMarginalsError(
            f"columns {np.flatnonzero(dead_cols).tolist()} are all-zero but "
            "have positive target sums"
        )
    dead_rows = (p > 0) & (x.max(axis=1, initial=0.0) <= 0)
    floored = int(dead_rows.sum())
    if floored:
        x[dead_rows] += ZERO_ROW_FLOOR

    violation = np.inf
    it = 0
    for it in range(1, cfg.sinkhorn_max_iter + 1):
        rs = x.sum(axis=1)
        x *= np.divide(p, rs, out=np.ones_like(rs), where=rs > 0)[:, None]
        cs = x.sum(axis=0)
        x *= np.divide(q, cs, out=np.ones_like(cs), where=cs > 0)[None, :]
        violation = max(
            np.abs(x.sum(axis=1) - p).max(),
            np.abs(x.sum(axis=0) - q).max(),
        )
        if violation <= cfg.sinkhorn_tol:
            break
    info = SinkhornInfo(
        iterations=it,
        max_violation=float(violation),
        converged=violation <= cfg.sinkhorn_tol,
        floored_rows=floored,
    )
    return x, info


def predict_pseudo_labels(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise argmax labels (ties to the lowest class index) and the share
    of row mass at the argmax; all-zero rows get label 0 with confidence 0."""
    labels = np.argmax(p, axis=1)
    sums = p.sum(axis=1)
    confidence = p.max(axis=1) / np.maximum(sums, 1e-300)
    confidence[sums <= 0] = 0.0
    return labels.astype(np.int64), confidence


def column_targets(
    row_weights: np.ndarray, cfg: BalanceConfig, n_classes: int
) -> np.ndarray:
    """Per-class column sums distributing the total row mass by the prior."""
    mass = float(np.sum(row_weights))
    if cfg.prior_mode == "uniform":
        return np.full(n_classes, mass / n_classes)
    if cfg.prior_mode == "given":
        u = cfg.class_prior
        if u.shape != (n_classes,):
            raise ValueError(f"class_prior has {u.shape[0]} entries, expected {n_classes}")
        return mass * (u / u.sum())
    raise ValueError(
        "prior_mode 'true' must be resolved to a concrete prior by the "
        "evaluation layer before inference"
    )


def balance_scores(
    p_mat: np.ndarray,
    row_weights: np.ndarray,
    cfg: BalanceConfig,
    col_targets: np.ndarray | None = None,
) -> tuple[np.ndarray, SinkhornInfo | None]:
    """Power transform, then (if enabled) project onto the target marginals.

    `col_targets` overrides the config-derived column sums; the engine uses
    this to decrement a known prior as queries leave the pool.
    """
    scores = power_transform(np.maximum(p_mat, 0.0), cfg.tau)
    if not cfg.enabled:
        return scores, None
    if col_targets is None:
        col_targets = column_targets(row_weights, cfg, scores.shape[1])
    return sinkhorn(scores, np.asarray(row_weights, dtype=np.float64), col_targets, cfg)


def balance_and_predict(
    z: np.ndarray,
    support_count: int,
    cfg: BalanceConfig,
    col_targets: np.ndarray | None = None,
) -> BalanceOutcome:
    """Full pipeline from a propagation result to pseudo-labels.

    Extracts the unlabeled block, sharpens it, balances it over classes
    (unless disabled), and predicts the row-wise argmax.
    """
    weights = confidence_weights(z, support_count, cfg.weight_policy)
    block = extract_unlabeled_block(z, support_count)
    scores, info = balance_scores(block, weights, cfg, col_targets)
    labels, confidence = predict_pseudo_labels(scores)
    return BalanceOutcome(
        scores=scores,
        labels=labels,
        confidence=confidence,
        row_weights=weights,
        sinkhorn=info,
    )
