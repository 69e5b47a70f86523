"""Closed-loop vector fields of the strategy-updating rules.

State vector layout (flat, in this order):

    chain   N*r*n   integrator chain states, component-major: the first
                    N*n entries are every agent's first chain coordinate
                    (whose projection is the strategy), the next N*n the
                    second coordinate (velocity for r = 2), and so on
    mu      N*l     per-agent Lagrange multiplier estimates
    z       N*l     multiplier-coordination auxiliaries
    eta     N*m     per-agent aggregate estimates (fast subsystem)
    w       N*m     estimator auxiliaries (fast subsystem)

The multiplier block integrates each agent's constraint mismatch while a
consensus term (gain alpha) aligns the local multipliers; the estimator
block is a dynamic average consensus protocol scaled by 1/epsilon so that
the aggregate estimates settle much faster than the strategies move.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .game import GameSpec, aggregate, stacked_gradient
from .graph import Digraph, laplacian

Z_SUM_TOL = 1e-12


@dataclass(frozen=True)
class AgentDynamicsSpec:
    """Integrator order and feedback gains of one agent.

    For order 2 ``gains`` is the scalar velocity gain k_i > 0.  For order
    r > 2 it is the feedback row [1, k_1, ..., k_{r-1}] with k_j > 1; the
    closed-loop chain matrix H = Abar - Bbar K must be Hurwitz, which is
    checked here via its eigenvalues.
    """

    order: int
    gains: np.ndarray

    def __post_init__(self):
        if self.order < 2:
            raise ConfigError(f"integrator order must be >= 2, got {self.order}", "dynamics")
        g = np.atleast_1d(np.asarray(self.gains, dtype=float))
        if self.order == 2:
            if g.shape != (1,):
                raise ConfigError("order-2 agents take a single scalar gain", "dynamics")
            if g[0] <= 0:
                raise ConfigError(f"velocity gain must be positive, got {g[0]}", "dynamics")
        else:
            if g.shape != (self.order,):
                raise ConfigError(
                    f"order-{self.order} agents need a feedback row of length {self.order}",
                    "dynamics")
            if g[0] != 1.0:
                raise ConfigError("feedback row must have leading entry 1", "dynamics")
            if np.any(g[1:] <= 1.0):
                raise ConfigError("feedback entries k_ij must exceed 1", "dynamics")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)
        if self.order > 2:
            eigs = np.linalg.eigvals(self.closed_loop_matrix())
            if np.max(eigs.real) >= 0:
                raise ConfigError(
                    f"closed-loop chain matrix is not Hurwitz (max Re eig = {np.max(eigs.real):.3g})",
                    "dynamics")

    def feedback_row(self) -> np.ndarray:
        """Gains as the full row [1, k_1, ..., k_{r-1}] (order 2 included)."""
        if self.order == 2:
            return np.array([1.0, float(self.gains[0])])
        return np.array(self.gains)

    def closed_loop_matrix(self) -> np.ndarray:
        """H = Abar - Bbar K: companion matrix of s^r + k_{r-1} s^{r-1} + ... + 1."""
        r = self.order
        h = np.zeros((r, r))
        h[:-1, 1:] = np.eye(r - 1)
        h[-1, :] = -self.feedback_row()
        return h


@dataclass(frozen=True)
class RuleParams:
    """Gains shared by all agents: multiplier coupling alpha, estimator epsilon."""

    alpha: float
    epsilon: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}", "rule")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}", "rule")


@dataclass(frozen=True)
class StateLayout:
    """Index map of the flat simulation state vector."""

    n_players: int
    strategy_dim: int
    order: int
    constraint_dim: int
    aggregate_dim: int

    @property
    def chain_size(self) -> int:
        return self.n_players * self.order * self.strategy_dim

    @property
    def size(self) -> int:
        N, l, m = self.n_players, self.constraint_dim, self.aggregate_dim
        return self.chain_size + 2 * N * l + 2 * N * m

    def _component_width(self) -> int:
        return self.n_players * self.strategy_dim

    def chain_component(self, j: int) -> slice:
        """Slice of the j-th chain coordinate (stacked over agents), j in [0, r)."""
        width = self._component_width()
        return slice(j * width, (j + 1) * width)

    @property
    def position(self) -> slice:
        return self.chain_component(0)

    @property
    def velocity(self) -> slice:
        if self.order != 2:
            raise ValueError("velocity slice only defined for order-2 agents")
        return self.chain_component(1)

    @property
    def mu(self) -> slice:
        start = self.chain_size
        return slice(start, start + self.n_players * self.constraint_dim)

    @property
    def z(self) -> slice:
        start = self.mu.stop
        return slice(start, start + self.n_players * self.constraint_dim)

    @property
    def eta(self) -> slice:
        start = self.z.stop
        return slice(start, start + self.n_players * self.aggregate_dim)

    @property
    def w(self) -> slice:
        start = self.eta.stop
        return slice(start, start + self.n_players * self.aggregate_dim)

    def offset(self, player: int, block: str, component: int = 0) -> int:
        """Flat index of ``component`` of ``block`` for ``player``.

        For the chain, ``component`` indexes the r*n per-agent chain states
        in component-major order.
        """
        N, n = self.n_players, self.strategy_dim
        if not 0 <= player < N:
            raise IndexError(f"player {player} out of range")
        if block == "chain":
            level, within = divmod(component, n)
            return self.chain_component(level).start + player * n + within
        widths = {"mu": self.constraint_dim, "z": self.constraint_dim,
                  "eta": self.aggregate_dim, "w": self.aggregate_dim}
        if block not in widths:
            raise KeyError(f"unknown block {block!r}")
        return getattr(self, block).start + player * widths[block] + component


@dataclass
class SimState:
    """Flat state vector plus its layout."""

    layout: StateLayout
    vec: np.ndarray

    def __post_init__(self):
        self.vec = np.asarray(self.vec, dtype=float)
        if self.vec.shape != (self.layout.size,):
            raise ConfigError(
                f"state vector has shape {self.vec.shape}, layout expects ({self.layout.size},)",
                "init")

    def copy(self) -> "SimState":
        return SimState(self.layout, self.vec.copy())

    @property
    def position(self) -> np.ndarray:
        return self.vec[self.layout.position]

    @property
    def mu(self) -> np.ndarray:
        return self.vec[self.layout.mu]

    @property
    def z(self) -> np.ndarray:
        return self.vec[self.layout.z]

    @property
    def eta(self) -> np.ndarray:
        return self.vec[self.layout.eta]

    @property
    def w(self) -> np.ndarray:
        return self.vec[self.layout.w]

    def outputs(self, spec: GameSpec) -> np.ndarray:
        """Strategies y = P_Omega(first chain coordinate)."""
        return spec.project_all(self.position)


def _uniform_order(dyn: Sequence[AgentDynamicsSpec]) -> int:
    orders = {d.order for d in dyn}
    if len(orders) != 1:
        raise ConfigError(f"agents must share one integrator order, got {orders}", "dynamics")
    return orders.pop()


def make_layout(spec: GameSpec, dyn: Sequence[AgentDynamicsSpec]) -> StateLayout:
    if len(dyn) != spec.n_players:
        raise ConfigError(
            f"need one dynamics spec per player ({spec.n_players}), got {len(dyn)}", "dynamics")
    return StateLayout(
        n_players=spec.n_players,
        strategy_dim=spec.strategy_dim,
        order=_uniform_order(dyn),
        constraint_dim=spec.n_constraints,
        aggregate_dim=spec.aggregate_dim,
    )


class ClosedLoopField:
    """Callable d(state)/dt for the stacked closed-loop system.

    Precomputes the Kronecker-lifted Laplacians, the block-diagonal coupling
    matrix and the gain rows so each evaluation is a handful of dense
    matrix-vector products plus one pass over the per-player gradient maps.
    """

    def __init__(self, g: Digraph, spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
                 params: RuleParams):
        if g.n_nodes != spec.n_players:
            raise ConfigError(
                f"graph has {g.n_nodes} nodes but game has {spec.n_players} players", "graph")
        self.layout = make_layout(spec, dyn)
        self.spec = spec
        self.params = params
        self.order = self.layout.order

        lap = laplacian(g)
        l, m, N, n = (spec.n_constraints, spec.aggregate_dim, spec.n_players,
                      spec.strategy_dim)
        self._lap_l = np.kron(lap, np.eye(l)) if l > 0 else np.zeros((0, 0))
        self._lap_m = np.kron(lap, np.eye(m))
        self._a_blk = spec.coupling_blockdiag()
        self._a_blk_t = self._a_blk.T
        self._d_stacked = spec.demand_stacked()
        # gain_rows[j] multiplies the j-th chain coordinate in the input row
        rows = np.stack([d.feedback_row() for d in dyn])  # (N, r)
        self._gain_rows = [np.repeat(rows[:, j], n) for j in range(self.order)]
        self._box_lower = np.concatenate([b.lower for b in spec.box])
        self._box_upper = np.concatenate([b.upper for b in spec.box])
        self._n_phi = float(N)

    def outputs(self, vec: np.ndarray) -> np.ndarray:
        return np.clip(vec[self.layout.position], self._box_lower, self._box_upper)

    def stacked_phi(self, y: np.ndarray) -> np.ndarray:
        spec = self.spec
        n, m = spec.strategy_dim, spec.aggregate_dim
        out = np.empty(spec.n_players * m)
        for i in range(spec.n_players):
            out[i * m:(i + 1) * m] = np.atleast_1d(spec.phi[i](y[i * n:(i + 1) * n]))
        return out

    def __call__(self, vec: np.ndarray) -> np.ndarray:
        lay = self.layout
        dv = np.empty_like(vec)
        y = self.outputs(vec)
        mu = vec[lay.mu]
        eta = vec[lay.eta]

        grad = stacked_gradient(self.spec, y, eta)
        drive = y - grad - self._a_blk_t @ mu

        # chain: shift coordinates, close the loop in the last one
        for j in range(self.order - 1):
            dv[lay.chain_component(j)] = vec[lay.chain_component(j + 1)]
        top = drive.copy()
        for j in range(self.order):
            top -= self._gain_rows[j] * vec[lay.chain_component(j)]
        dv[lay.chain_component(self.order - 1)] = top

        if lay.constraint_dim > 0:
            z = vec[lay.z]
            lap_mu = self._lap_l @ mu
            dv[lay.mu] = -self.params.alpha * lap_mu - z + self._a_blk @ y - self._d_stacked
            dv[lay.z] = self.params.alpha * lap_mu

        w = vec[lay.w]
        inv_eps = 1.0 / self.params.epsilon
        lap_eta = self._lap_m @ eta
        dv[lay.eta] = inv_eps * (-eta - lap_eta - self._lap_m @ w
                                 + self._n_phi * self.stacked_phi(y))
        dv[lay.w] = inv_eps * lap_eta
        return dv


def rhs_double_integrator(g: Digraph, spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
                          params: RuleParams) -> ClosedLoopField:
    """Stacked field of the double-integrator rule (order 2 for every agent)."""
    if _uniform_order(dyn) != 2:
        raise ConfigError("double-integrator rule requires order 2 everywhere", "dynamics")
    return ClosedLoopField(g, spec, dyn, params)


def rhs_multi_integrator(g: Digraph, spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
                         params: RuleParams) -> ClosedLoopField:
    """Stacked field of the multi-integrator rule (order r > 2)."""
    if _uniform_order(dyn) <= 2:
        raise ConfigError("multi-integrator rule requires order > 2", "dynamics")
    return ClosedLoopField(g, spec, dyn, params)


def make_rhs(g: Digraph, spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
             params: RuleParams) -> ClosedLoopField:
    """Order-agnostic entry point used by the runner."""
    return ClosedLoopField(g, spec, dyn, params)


def estimator_boundary_layer_rhs(g: Digraph, spec: GameSpec,
                                 y_frozen: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Fast-subsystem field in stretched time tau = t / epsilon, y held fixed.

    The state is the concatenation (eta, w); its equilibrium has every
    agent's estimate equal to the network aggregate of the frozen strategies.
    """
    lap_m = np.kron(laplacian(g), np.eye(spec.aggregate_dim))
    N, n, m = spec.n_players, spec.strategy_dim, spec.aggregate_dim
    y_frozen = np.asarray(y_frozen, dtype=float)
    phi_stack = np.concatenate([
        np.atleast_1d(spec.phi[i](y_frozen[i * n:(i + 1) * n])) for i in range(N)])
    nphi = N * phi_stack
    half = N * m

    def field(state: np.ndarray) -> np.ndarray:
        eta, w = state[:half], state[half:]
        lap_eta = lap_m @ eta
        return np.concatenate([-eta - lap_eta - lap_m @ w + nphi, lap_eta])

    return field


def validate_initial_state(s: SimState, spec: GameSpec) -> list[str]:
    """Report (not raise) violations of the required initialization.

    Checks mu(0) = 0, sum_i z_i(0) = 0, and that each agent's first chain
    coordinate starts inside its box.
    """
    violations = []
    lay = s.layout
    if lay.constraint_dim > 0:
        if np.any(s.mu != 0.0):
            violations.append("mu_nonzero")
        z_sum = s.z.reshape(lay.n_players, lay.constraint_dim).sum(axis=0)
        if np.max(np.abs(z_sum), initial=0.0) > Z_SUM_TOL:
            violations.append("z_sum_nonzero")
    pos = s.position
    n = lay.strategy_dim
    for i, box in enumerate(spec.box):
        if not box.contains(pos[i * n:(i + 1) * n]):
            violations.append(f"x0_outside_box_player_{i}")
    return violations


def default_initial_state(spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
                          x0: np.ndarray, chain_rest: np.ndarray | None = None) -> SimState:
    """Assemble the standard initial state from the first chain coordinate.

    Remaining chain coordinates default to zero, mu and z to zero, each
    agent's estimate is warm-started at N * phi_i(y_i(0)) and w at zero.
    """
    lay = make_layout(spec, dyn)
    vec = np.zeros(lay.size)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n_players * spec.strategy_dim,):
        raise ConfigError(
            f"x0 has shape {x0.shape}, expected ({spec.n_players * spec.strategy_dim},)", "init")
    vec[lay.position] = x0
    if chain_rest is not None:
        chain_rest = np.asarray(chain_rest, dtype=float)
        width = spec.n_players * spec.strategy_dim
        expected = (lay.order - 1) * width
        if chain_rest.shape != (expected,):
            raise ConfigError(
                f"chain_rest has shape {chain_rest.shape}, expected ({expected},)", "init")
        for j in range(1, lay.order):
            vec[lay.chain_component(j)] = chain_rest[(j - 1) * width:j * width]
    y0 = spec.project_all(x0)
    m, n = spec.aggregate_dim, spec.strategy_dim
    eta0 = np.empty(spec.n_players * m)
    for i in range(spec.n_players):
        eta0[i * m:(i + 1) * m] = spec.n_players * np.atleast_1d(
            spec.phi[i](y0[i * n:(i + 1) * n]))
    vec[lay.eta] = eta0
    return SimState(lay, vec)


def equilibrium_state(g: Digraph, spec: GameSpec, dyn: Sequence[AgentDynamicsSpec],
                      y_star: np.ndarray, mu_star: np.ndarray) -> SimState:
    """Construct the closed-loop equilibrium matching a KKT pair (y*, mu*).

    The first chain coordinate is y* - F(y*) - A_i' mu* per agent (so its
    projection is y*), the remaining coordinates are zero, multipliers are
    consensual at mu*, z balances the constraint mismatch, the estimates sit
    at the true aggregate, and w solves the estimator balance equation in
    the least-squares sense.
    """
    from .game import pseudo_gradient  # local to avoid cycles at import time

    lay = make_layout(spec, dyn)
    vec = np.zeros(lay.size)
    y_star = np.asarray(y_star, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)

    grad = pseudo_gradient(spec, y_star)
    a_t_mu = np.concatenate([c.a_mat.T @ mu_star for c in spec.coupling]) \
        if spec.n_constraints > 0 else np.zeros_like(y_star)
    vec[lay.position] = y_star - grad - a_t_mu

    if spec.n_constraints > 0:
        vec[lay.mu] = np.tile(mu_star, spec.n_players)
        z_star = np.concatenate([
            c.a_mat @ spec.block(y_star, i) - c.d_vec for i, c in enumerate(spec.coupling)])
        vec[lay.z] = z_star

    sigma = aggregate(spec, y_star)
    vec[lay.eta] = np.tile(sigma, spec.n_players)
    lap_m = np.kron(laplacian(g), np.eye(spec.aggregate_dim))
    n, m = spec.strategy_dim, spec.aggregate_dim
    phi_stack = np.concatenate([
        np.atleast_1d(spec.phi[i](spec.block(y_star, i))) for i in range(spec.n_players)])
    rhs = spec.n_players * phi_stack - np.tile(sigma, spec.n_players)
    w_star, *_ = np.linalg.lstsq(lap_m, rhs, rcond=None)
    vec[lay.w] = w_star
    return SimState(lay, vec)
