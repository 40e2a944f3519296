"""Label matrix construction and the propagation linear solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import SolverError
from .graph import AffinityGraph


@dataclass(frozen=True)
class PropagationConfig:
    """Diffusion strength and conjugate-gradient stopping rule.

    `solver_max_iter` None means 20 * node_count.
    """

    alpha: float = 0.8
    solver_tol: float = 1e-6
    solver_max_iter: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be > 0")


def make_label_matrix(support_y: np.ndarray, n_way: int, total: int) -> np.ndarray:
    """One-hot rows for the first len(support_y) nodes, zero rows after."""
    support_y = np.asarray(support_y, dtype=np.int64)
    if support_y.size > total:
        raise ValueError(f"{support_y.size} labeled rows exceed total {total}")
    if support_y.size and (support_y.min() < 0 or support_y.max() >= n_way):
        raise ValueError(f"labels must lie in [0, {n_way})")
    y = np.zeros((total, n_way))
    y[np.arange(support_y.size), support_y] = 1.0
    return y


def propagate(g: AffinityGraph, y: np.ndarray, cfg: PropagationConfig) -> np.ndarray:
    """Solve (I - alpha * adjacency) Z = Y column by column.

    The system is symmetric positive definite for alpha < 1 because the
    normalized adjacency has spectrum in [-1, 1], so conjugate gradients
    always converge on valid graphs. Each column's residual is verified
    against solver_tol * ||y_col||; failure raises SolverError with the
    achieved residual.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != g.node_count:
        raise ValueError(f"label matrix shape {y.shape} does not match {g.node_count} nodes")
    if cfg.alpha == 0.0:
        return y.copy()

    t = g.node_count
    system = (sp.identity(t, format="csr") - cfg.alpha * g.adjacency).tocsr()
    maxiter = cfg.solver_max_iter if cfg.solver_max_iter is not None else 20 * t
    # Solve tighter than the contract so entrywise error stays within
    # solver_tol despite the (1 - alpha) conditioning factor.
    inner_rtol = cfg.solver_tol * (1.0 - cfg.alpha)

    z = np.zeros_like(y)
    for j in range(y.shape[1]):
        b = y[:, j]
        norm_b = np.linalg.norm(b)
        if norm_b == 0.0:
            continue
        sol, _ = cg(system, b, rtol=inner_rtol, atol=0.0, maxiter=maxiter)
        achieved = np.linalg.norm(system @ sol - b)
        if achieved > cfg.solver_tol * norm_b:
            raise SolverError(
                f"column {j}: residual {achieved:.3e} above "
                f"{cfg.solver_tol:.1e} * ||y|| after {maxiter} iterations"
            )
        z[:, j] = sol
    if not np.isfinite(z).all():
        raise SolverError("propagation produced non-finite values")
    return z
