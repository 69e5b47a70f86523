"""Communication digraphs: Laplacians, balance/connectivity checks, spectra.

Conventions: ``weights[i][j] = a_ij > 0`` iff there is an edge j -> i, i.e.
agent i receives (and weighs) information from agent j.  The Laplacian is
``L = D_in - W`` with in-degrees on the diagonal, so ``L @ 1 = 0`` always;
``1^T L = 0`` holds exactly when the graph is weight balanced.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

DEFAULT_BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class Digraph:
    """Weighted digraph on ``n_nodes`` nodes, immutable after construction."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got shape {w.shape}")
        if w.shape[0] < 1:
            raise ValueError("graph needs at least one node")
        if np.any(w < 0):
            raise ValueError("edge weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-loops are not allowed (nonzero diagonal)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "Digraph":
        """Build from (from_node, to_node, weight) triples, 0-based nodes."""
        w = np.zeros((n_nodes, n_nodes))
        for src, dst, weight in edges:
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise ValueError(f"edge ({src}, {dst}) out of range for {n_nodes} nodes")
            if src == dst:
                raise ValueError(f"self-loop at node {src}")
            w[dst, src] += float(weight)
        return cls(w)


@dataclass(frozen=True)
class SpectralSummary:
    """Spectral quantities of a digraph used by the gain-condition checkers."""

    lambda2: float
    laplacian_norm: float
    is_weight_balanced: bool
    is_strongly_connected: bool


def laplacian(g: Digraph) -> np.ndarray:
    """Laplacian L = D_in - W; rows sum to zero by construction."""
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def check_weight_balanced(g: Digraph, tol: float = DEFAULT_BALANCE_TOL) -> bool:
    """True iff every column sum of L is within ``tol`` of zero."""
    col_sums = laplacian(g).sum(axis=0)
    return bool(np.max(np.abs(col_sums)) <= tol)


def check_strongly_connected(g: Digraph) -> bool:
    """True iff every node can reach every other along positive-weight edges."""
    if g.n_nodes == 1:
        return True
    # connected_components expects csgraph[i, j] = edge i -> j; our weights
    # store j -> i in row i, so transpose (irrelevant for strong components,
    # kept for clarity).
    adj = csr_matrix((g.weights > 0).T.astype(float))
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def symmetrized_laplacian(g: Digraph) -> np.ndarray:
    """The mirrored Laplacian (L + L^T) / 2."""
    lap = laplacian(g)
    return 0.5 * (lap + lap.T)


def spectral_summary(g: Digraph, balance_tol: float = DEFAULT_BALANCE_TOL) -> SpectralSummary:
    """Dense-eigensolver summary: lambda_2 of (L+L^T)/2, ||L||, and flags."""
    lap = laplacian(g)
    eigs = np.linalg.eigvalsh(0.5 * (lap + lap.T))
    lam2 = float(eigs[1]) if g.n_nodes > 1 else 0.0
    return SpectralSummary(
        lambda2=lam2,
        laplacian_norm=float(np.linalg.norm(lap, 2)),
        is_weight_balanced=check_weight_balanced(g, balance_tol),
        is_strongly_connected=check_strongly_connected(g),
    )


def random_balanced_digraph(n_nodes: int, n_cycles: int = 3, rng=None) -> Digraph:
    """Superpose directed Hamiltonian cycles with random positive weights.

    Balanced and strongly connected by construction: each cycle contributes
    equal in- and out-weight at every node, and a single Hamiltonian cycle
    already reaches everywhere.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes")
    rng = np.random.default_rng(rng)
    w = np.zeros((n_nodes, n_nodes))
    for k in range(max(1, n_cycles)):
        if k == 0:
            order = np.arange(n_nodes)  # plain cycle guarantees connectivity
        else:
            order = rng.permutation(n_nodes)
        weight = float(rng.uniform(0.2, 2.0))
        for idx in range(n_nodes):
            src = order[idx]
            dst = order[(idx + 1) % n_nodes]
            if src != dst:
                w[dst, src] += weight
    return Digraph(w)
