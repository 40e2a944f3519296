"""Sparse k-NN affinity graph with symmetric degree normalization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GraphConfig:
    """Neighbor count and the exponent sharpening edge weights."""

    k: int = 15
    gamma: float = 3.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric normalized adjacency over the episode's feature vectors.

    `adjacency` has zero diagonal, nonnegative entries, and spectrum in
    [-1, 1]; `degree` is the raw row-sum degree vector before the
    isolated-node substitution.
    """

    adjacency: sp.csr_matrix
    degree: np.ndarray
    node_count: int


def directed_affinity(features: np.ndarray, cfg: GraphConfig) -> sp.csr_matrix:
    """Directed k-NN affinity by clamped dot product.

    Column j holds max(v_i . v_j, 0)**gamma for the k rows i != j with the
    highest dot product against v_j (ties broken by lower index), so each
    column has at most k nonzeros.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("features contain non-finite entries")
    t = x.shape[0]
    if t < 2:
        raise ValueError("graph needs at least 2 nodes")
    if cfg.k >= t:
        raise ValueError(f"k={cfg.k} must be < node count {t}")

    sims = x @ x.T
    np.fill_diagonal(sims, -np.inf)
    # Stable argsort on -sims: descending similarity, ties by lower row index.
    top = np.argsort(-sims, axis=0, kind="stable")[: cfg.k, :]
    cols = np.broadcast_to(np.arange(t), (cfg.k, t))
    vals = np.maximum(sims[top, cols], 0.0) ** cfg.gamma

    a = sp.coo_matrix((vals.ravel(), (top.ravel(), cols.ravel())), shape=(t, t))
    a.eliminate_zeros()
    return a.tocsr()


def build_graph(features: np.ndarray, cfg: GraphConfig) -> AffinityGraph:
    """Symmetrized, degree-normalized k-NN affinity graph.

    W = (A + A^T)/2 rescaled by D^{-1/2} on both sides, where D is the
    diagonal of row sums; zero-degree nodes keep a zero row, with their
    degree treated as 1 to avoid division by zero.
    """
    a = directed_affinity(features, cfg)
    t = a.shape[0]
    w = ((a + a.T) * 0.5).tocsr()

    degree = np.asarray(w.sum(axis=1)).ravel()
    safe = np.where(degree > 0, degree, 1.0)
    dinv = 1.0 / np.sqrt(safe)
    adjacency = w.multiply(dinv[:, None]).multiply(dinv[None, :]).tocsr()
    return AffinityGraph(adjacency=adjacency, degree=degree, node_count=t)


def dump_coo(g: AffinityGraph, path: str | Path) -> None:
    """Write the normalized adjacency as 'i j value' lines for debugging."""
    coo = g.adjacency.tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
