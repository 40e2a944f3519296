"""N-way K-shot episode sampling from a labeled FeatureSet."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EpisodeSamplingError
from .features import FeatureSet, save_features


@dataclass(frozen=True)
class EpisodeSpec:
    """One few-shot task layout.

    `queries_per_class` is either a fixed count or an inclusive `(lo, hi)`
    range from which each class's query count is drawn uniformly (the
    unbalanced regime). `unlabeled_per_class` 0 means pure transduction.
    """

    n_way: int
    k_shot: int
    queries_per_class: int | tuple[int, int] = 15
    unlabeled_per_class: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        q = self.queries_per_class
        if isinstance(q, tuple):
            lo, hi = q
            if lo < 1 or lo > hi:
                raise ValueError(f"query range must satisfy 1 <= lo <= hi, got {q}")
        elif q < 0:
            raise ValueError("queries_per_class must be >= 0")
        if self.unlabeled_per_class < 0:
            raise ValueError("unlabeled_per_class must be >= 0")


@dataclass(frozen=True)
class Episode:
    """Support / query / unlabeled splits with class ids remapped to [0, N).

    The `*_y_hidden` arrays carry ground truth for evaluation only; inference
    code must not read them (see `ilpc.evaluation.hidden_query_labels`).
    """

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y_hidden: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_y_hidden: np.ndarray
    class_map: np.ndarray

    @property
    def n_way(self) -> int:
        return self.class_map.size

    @property
    def support_count(self) -> int:
        return self.support_x.shape[0]

    @property
    def query_count(self) -> int:
        return self.query_x.shape[0]

    @property
    def unlabeled_count(self) -> int:
        return self.unlabeled_x.shape[0]


def sample_episode(fs: FeatureSet, spec: EpisodeSpec) -> Episode:
    """Draw one episode, deterministic given `spec.seed`.

    Sampling is without replacement within the episode: support, query and
    unlabeled index sets are pairwise disjoint.
    """
    if fs.labels is None:
        raise EpisodeSamplingError("cannot sample episodes from an unlabeled feature set")

    rng = np.random.default_rng(spec.seed)
    present = np.unique(fs.labels)
    if present.size < spec.n_way:
        raise EpisodeSamplingError(
            f"need {spec.n_way} classes, feature set has {present.size}"
        )
    chosen = rng.choice(present, size=spec.n_way, replace=False)

    q = spec.queries_per_class
    if isinstance(q, tuple):
        query_counts = rng.integers(q[0], q[1] + 1, size=spec.n_way)
    else:
        query_counts = np.full(spec.n_way, q)

    sup_x, sup_y, qry_x, qry_y, unl_x, unl_y = [], [], [], [], [], []
    for new_id, orig in enumerate(chosen):
        pool = np.flatnonzero(fs.labels == orig)
        need = spec.k_shot + int(query_counts[new_id]) + spec.unlabeled_per_class
        if pool.size < need:
            raise EpisodeSamplingError(
                f"class {int(orig)} has {pool.size} examples, episode needs {need}"
            )
        perm = rng.permutation(pool)
        k, nq = spec.k_shot, int(query_counts[new_id])
        sup_x.append(fs.data[perm[:k]])
        sup_y.append(np.full(k, new_id, dtype=np.int64))
        qry_x.append(fs.data[perm[k : k + nq]])
        qry_y.append(np.full(nq, new_id, dtype=np.int64))
        unl = perm[k + nq : need]
        unl_x.append(fs.data[unl])
        unl_y.append(np.full(unl.size, new_id, dtype=np.int64))

    d = fs.dim
    return Episode(
        support_x=np.vstack(sup_x),
        support_y=np.concatenate(sup_y),
        query_x=np.vstack(qry_x) if any(a.size for a in qry_x) else np.empty((0, d)),
        query_y_hidden=np.concatenate(qry_y),
        unlabeled_x=np.vstack(unl_x) if any(a.size for a in unl_x) else np.empty((0, d)),
        unlabeled_y_hidden=np.concatenate(unl_y),
        class_map=np.asarray(chosen, dtype=np.int64),
    )


def true_prior(ep: Episode) -> np.ndarray:
    """Normalized per-class query counts (the ground-truth class prior)."""
    counts = np.bincount(ep.query_y_hidden, minlength=ep.n_way).astype(np.float64)
    return counts / counts.sum()


def save_episode(ep: Episode, stem: str | Path) -> list[Path]:
    """Dump the episode splits as RAW_F32 files for debugging; returns the
    written paths."""
    stem = Path(stem)
    written = []
    splits = [
        ("support", ep.support_x, ep.support_y),
        ("query", ep.query_x, ep.query_y_hidden),
        ("unlabeled", ep.unlabeled_x, ep.unlabeled_y_hidden),
    ]
    for name, x, y in splits:
        if x.shape[0] == 0:
            continue
        path = stem.with_name(f"{stem.name}.{name}.raw")
        save_features(
            FeatureSet(data=x, labels=y, class_count=ep.n_way, source_tag=name),
            path,
            format="raw_f32",
        )
        written.append(path)
    return written
