"""Aggregative game definition: costs, aggregator, coupling, local boxes.

Each player i has a box strategy set, a coupling block (A_i, d_i) of the
shared linear constraint sum_i A_i y_i = sum_i d_i, an aggregator
contribution phi_i, and a gradient map grad_i(y_i, s) that equals the true
partial gradient of the cost when evaluated at s = sigma(y).  Agents in the
closed loop evaluate grad_i at their private aggregate estimate instead.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box {x : lower <= x <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def project(box: BoxSet, x) -> np.ndarray:
    """Euclidean projection onto the box (componentwise clamp)."""
    return np.clip(np.asarray(x, dtype=float), box.lower, box.upper)


@dataclass(frozen=True)
class CouplingBlock:
    """Player block (A_i, d_i) of the coupled constraint sum A_i y_i = sum d_i."""

    a_mat: np.ndarray
    d_vec: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        d = np.atleast_1d(np.asarray(self.d_vec, dtype=float))
        if a.shape[0] != d.shape[0]:
            raise ValueError(f"A_i has {a.shape[0]} rows but d_i has {d.shape[0]} entries")
        a.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "d_vec", d)

    @property
    def n_constraints(self) -> int:
        return self.a_mat.shape[0]

    @classmethod
    def empty(cls, strategy_dim: int) -> "CouplingBlock":
        """Zero-row block for games without a coupled constraint."""
        return cls(np.zeros((0, strategy_dim)), np.zeros(0))


GradFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
PhiFn = Callable[[np.ndarray], np.ndarray]
CostFn = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class GameSpec:
    """N-player aggregative game with coupled equality constraint.

    cost_grad[i](y_i, s) must return the partial gradient of player i's cost,
    written as a function of the own strategy and the aggregate value s; the
    dependence of sigma on y_i is already folded into the formula.  cost[i],
    when provided, is the scalar cost (y_i, s) -> R used by the
    finite-difference gradient checker.  phi_jacobian is optional and only
    informational for linear aggregators.
    """

    n_players: int
    strategy_dim: int
    aggregate_dim: int
    cost_grad: Sequence[GradFn]
    phi: Sequence[PhiFn]
    coupling: Sequence[CouplingBlock]
    box: Sequence[BoxSet]
    phi_jacobian: Optional[Sequence[Callable[[np.ndarray], np.ndarray]]] = None
    cost: Optional[Sequence[CostFn]] = None
    # optional vectorized equivalents of the per-player maps; must agree with
    # them exactly (the per-player forms stay the semantic reference)
    grad_stacked: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    phi_stacked: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "game"

    def __post_init__(self):
        n = self.n_players
        for name in ("cost_grad", "phi", "coupling", "box"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} must have one entry per player ({n})", "game")
        dims = {b.dim for b in self.box}
        if dims != {self.strategy_dim}:
            raise ConfigError(f"box dims {dims} do not match strategy_dim {self.strategy_dim}", "game")
        ls = {c.n_constraints for c in self.coupling}
        if len(ls) != 1:
            raise ConfigError(f"players disagree on constraint dimension: {ls}", "game")
        cols = {c.a_mat.shape[1] for c in self.coupling}
        if cols != {self.strategy_dim}:
            raise ConfigError(f"A_i column counts {cols} do not match strategy_dim", "game")

    @property
    def n_constraints(self) -> int:
        return self.coupling[0].n_constraints

    def split(self, y: np.ndarray) -> np.ndarray:
        """View the stacked profile as an (N, n) array."""
        return np.asarray(y, dtype=float).reshape(self.n_players, self.strategy_dim)

    def block(self, y: np.ndarray, i: int) -> np.ndarray:
        n = self.strategy_dim
        return np.asarray(y)[i * n:(i + 1) * n]

    def coupling_matrix(self) -> np.ndarray:
        """Row concatenation A = [A_1, ..., A_N] (l x N*n)."""
        return np.hstack([c.a_mat for c in self.coupling])

    def coupling_blockdiag(self) -> np.ndarray:
        """Block diagonal blk{A_1, ..., A_N} (N*l x N*n)."""
        n, l, N = self.strategy_dim, self.n_constraints, self.n_players
        out = np.zeros((N * l, N * n))
        for i, c in enumerate(self.coupling):
            out[i * l:(i + 1) * l, i * n:(i + 1) * n] = c.a_mat
        return out

    def demand_total(self) -> np.ndarray:
        return sum((c.d_vec for c in self.coupling), np.zeros(self.n_constraints))

    def demand_stacked(self) -> np.ndarray:
        """col(d_1, ..., d_N) (N*l,)."""
        if self.n_constraints == 0:
            return np.zeros(0)
        return np.concatenate([c.d_vec for c in self.coupling])

    def project_all(self, x: np.ndarray) -> np.ndarray:
        """Blockwise projection of a stacked point onto Omega."""
        x = np.asarray(x, dtype=float)
        n = self.strategy_dim
        out = np.empty_like(x)
        for i, b in enumerate(self.box):
            out[i * n:(i + 1) * n] = np.clip(x[i * n:(i + 1) * n], b.lower, b.upper)
        return out


def aggregate(spec: GameSpec, y) -> np.ndarray:
    """sigma(y) = sum_i phi_i(y_i)."""
    y = np.asarray(y, dtype=float)
    expected = spec.n_players * spec.strategy_dim
    if y.shape != (expected,):
        raise ConfigError(f"strategy profile has shape {y.shape}, expected ({expected},)", "game")
    sigma = np.zeros(spec.aggregate_dim)
    for i in range(spec.n_players):
        contrib = np.atleast_1d(np.asarray(spec.phi[i](spec.block(y, i)), dtype=float))
        if contrib.shape != (spec.aggregate_dim,):
            raise ConfigError(
                f"phi_{i} returned shape {contrib.shape}, expected ({spec.aggregate_dim},)", "game")
        sigma += contrib
    return sigma


def pseudo_gradient(spec: GameSpec, y) -> np.ndarray:
    """F(y): stacked partial gradients evaluated at the true aggregate."""
    y = np.asarray(y, dtype=float)
    sigma = aggregate(spec, y)
    n = spec.strategy_dim
    out = np.empty(spec.n_players * n)
    for i in range(spec.n_players):
        out[i * n:(i + 1) * n] = np.atleast_1d(spec.cost_grad[i](spec.block(y, i), sigma))
    return out


def constraint_residual(spec: GameSpec, y) -> np.ndarray:
    """sum_i A_i y_i - sum_i d_i (an l-vector; empty when l = 0)."""
    y = np.asarray(y, dtype=float)
    res = -spec.demand_total()
    for i in range(spec.n_players):
        res = res + spec.coupling[i].a_mat @ spec.block(y, i)
    return res


def stacked_gradient(spec: GameSpec, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """col(grad_i(y_i, eta_i)): each player uses its private estimate eta_i."""
    if spec.grad_stacked is not None:
        return spec.grad_stacked(y, eta)
    n, m = spec.strategy_dim, spec.aggregate_dim
    out = np.empty(spec.n_players * n)
    for i in range(spec.n_players):
        out[i * n:(i + 1) * n] = np.atleast_1d(
            spec.cost_grad[i](y[i * n:(i + 1) * n], eta[i * m:(i + 1) * m]))
    return out


def random_quadratic_game(seed: int, n_players: int | None = None,
                          strategy_dim: int | None = None,
                          n_constraints: int | None = None,
                          box_halfwidth: float = 50.0,
                          min_monotonicity: float = 0.3) -> GameSpec:
    """Seeded strongly monotone quadratic aggregative game (identity phi).

    Costs are J_i = 0.5 y_i' R_i y_i + y_i' S_i sigma + q_i' y_i with
    sigma = sum_j y_j, giving grad_i(y_i, s) = R_i y_i + S_i s + S_i' y_i + q_i.
    S blocks are shrunk until the pseudo-gradient Jacobian has symmetric part
    bounded below by ``min_monotonicity``.
    """
    rng = np.random.default_rng(seed)
    N = int(n_players if n_players is not None else rng.integers(2, 6))
    n = int(strategy_dim if strategy_dim is not None else rng.integers(1, 3))
    l = int(n_constraints if n_constraints is not None else rng.integers(0, 3))

    r_blocks = []
    for _ in range(N):
        base = rng.normal(size=(n, n))
        r_blocks.append(base @ base.T / n + np.eye(n) * rng.uniform(1.0, 2.5))
    s_blocks = [rng.normal(scale=0.3 / N, size=(n, n)) for _ in range(N)]
    q_vecs = [rng.normal(scale=1.0, size=n) for _ in range(N)]

    def jacobian(scale: float) -> np.ndarray:
        m_full = np.zeros((N * n, N * n))
        for i in range(N):
            s_i = scale * s_blocks[i]
            for j in range(N):
                blockij = np.array(s_i)
                if i == j:
                    blockij = r_blocks[i] + s_i + s_i.T
                m_full[i * n:(i + 1) * n, j * n:(j + 1) * n] = blockij
        return m_full

    scale = 1.0
    while np.linalg.eigvalsh(0.5 * (jacobian(scale) + jacobian(scale).T))[0] < min_monotonicity:
        scale *= 0.5
    s_blocks = [scale * s for s in s_blocks]

    def make_grad(i):
        r_i, s_i, q_i = r_blocks[i], s_blocks[i], q_vecs[i]
        return lambda y_i, s: r_i @ y_i + s_i @ s + s_i.T @ y_i + q_i

    def make_cost(i):
        r_i, s_i, q_i = r_blocks[i], s_blocks[i], q_vecs[i]
        return lambda y_i, s: float(0.5 * y_i @ r_i @ y_i + y_i @ s_i @ s + q_i @ y_i)

    if l > 0:
        a_blocks = [rng.uniform(-1.0, 1.0, size=(l, n)) for _ in range(N)]
        y_feasible = rng.uniform(-2.0, 2.0, size=N * n)
        d_vecs = [a_blocks[i] @ y_feasible[i * n:(i + 1) * n] for i in range(N)]
        coupling = [CouplingBlock(a_blocks[i], d_vecs[i]) for i in range(N)]
    else:
        coupling = [CouplingBlock.empty(n) for _ in range(N)]

    box = [BoxSet(-box_halfwidth * np.ones(n), box_halfwidth * np.ones(n)) for _ in range(N)]
    identity = lambda y_i: np.asarray(y_i, dtype=float)
    eye = np.eye(n)
    return GameSpec(
        n_players=N, strategy_dim=n, aggregate_dim=n,
        cost_grad=[make_grad(i) for i in range(N)],
        phi=[identity] * N,
        phi_jacobian=[(lambda y_i, _e=eye: _e)] * N,
        coupling=coupling, box=box,
        cost=[make_cost(i) for i in range(N)],
        label=f"random_quadratic_seed{seed}",
    )
