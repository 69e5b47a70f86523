"""Verification layer: KKT residuals, ground-truth oracle, condition checkers.

Everything here is independent of the closed-loop dynamics: the oracle
solves the variational KKT system directly, the residual report evaluates
the fixed-point characterization of the equilibrium with the true aggregate,
and the checkers evaluate the sufficient gain conditions of the two
convergence theorems.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .dynamics import AgentDynamicsSpec, RuleParams, SimState
from .errors import OracleError
from .game import GameSpec, aggregate, constraint_residual, pseudo_gradient
from .graph import Digraph, SpectralSummary, spectral_summary


@dataclass(frozen=True)
class KktReport:
    """Residuals of the equilibrium conditions at one state.

    stationarity: distance of y from the projected-gradient fixed point
    using the mean multiplier; feasibility: coupled-constraint violation;
    mu_consensus: worst deviation of a local multiplier from the mean;
    eta_tracking: worst deviation of a local estimate from the true
    aggregate.
    """

    stationarity: float
    feasibility: float
    mu_consensus: float
    eta_tracking: float

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.feasibility, self.mu_consensus, self.eta_tracking)

    def to_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "feasibility": self.feasibility,
            "mu_consensus": self.mu_consensus,
            "eta_tracking": self.eta_tracking,
            "max_residual": self.max_residual,
        }


def stationarity_residual(spec: GameSpec, y: np.ndarray, mu: np.ndarray) -> float:
    """|| y - P_Omega(y - F(y) - A' mu) || for a single multiplier vector."""
    grad = pseudo_gradient(spec, y)
    if spec.n_constraints > 0:
        a_t_mu = np.concatenate([c.a_mat.T @ mu for c in spec.coupling])
    else:
        a_t_mu = 0.0
    return float(np.linalg.norm(y - spec.project_all(y - grad - a_t_mu)))


def kkt_report(spec: GameSpec, s: SimState) -> KktReport:
    """Evaluate the four residuals at a simulation state."""
    lay = s.layout
    y = s.outputs(spec)
    sigma = aggregate(spec, y)

    l = lay.constraint_dim
    if l > 0:
        mu_rows = s.mu.reshape(lay.n_players, l)
        mu_bar = mu_rows.mean(axis=0)
        mu_consensus = float(np.max(np.linalg.norm(mu_rows - mu_bar, axis=1)))
    else:
        mu_bar = np.zeros(0)
        mu_consensus = 0.0

    feasibility = float(np.linalg.norm(constraint_residual(spec, y)))
    eta_rows = s.eta.reshape(lay.n_players, lay.aggregate_dim)
    eta_tracking = float(np.max(np.linalg.norm(eta_rows - sigma, axis=1)))
    return KktReport(
        stationarity=stationarity_residual(spec, y, mu_bar),
        feasibility=feasibility,
        mu_consensus=mu_consensus,
        eta_tracking=eta_tracking,
    )


def residual_fn(spec: GameSpec, layout) -> "callable":
    """Residual evaluator on flat state vectors (plugs into sim.integrate)."""
    def fn(vec: np.ndarray) -> KktReport:
        return kkt_report(spec, SimState(layout, vec))
    return fn


# ---------------------------------------------------------------------------
# Monotonicity / Lipschitz estimation


@dataclass(frozen=True)
class MonotonicityEstimate:
    """Strong-monotonicity lower bound and Lipschitz upper bound of F."""

    omega: float
    theta: float
    method: str  # "jacobian_exact" | "sampled"
    warning: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"omega": self.omega, "theta": self.theta, "method": self.method}
        if self.warning:
            d["warning"] = self.warning
        return d


def _fd_jacobian(spec: GameSpec, y: np.ndarray, step: float = 1e-4) -> np.ndarray:
    dim = y.shape[0]
    jac = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        jac[:, j] = (pseudo_gradient(spec, y + e) - pseudo_gradient(spec, y - e)) / (2 * step)
    return jac


def pseudo_gradient_jacobian(spec: GameSpec, y=None) -> np.ndarray:
    """Central-difference Jacobian of F at y (default: box midpoints)."""
    if y is None:
        y = np.concatenate([0.5 * (b.lower + b.upper) for b in spec.box])
    return _fd_jacobian(spec, np.asarray(y, dtype=float))


def _sample_in_box(spec: GameSpec, rng) -> np.ndarray:
    lows = np.concatenate([b.lower for b in spec.box])
    highs = np.concatenate([b.upper for b in spec.box])
    return rng.uniform(lows, highs)


def estimate_monotonicity(spec: GameSpec, samples: int = 200,
                          seed: int = 0) -> MonotonicityEstimate:
    """Estimate (omega, theta) of the pseudo-gradient on Omega.

    When the Jacobian is constant across three probe points (affine F) the
    exact spectral quantities of the Jacobian are returned; otherwise the
    bounds are sampled over random pairs in the box.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = np.random.default_rng(seed)
    probes = [_sample_in_box(spec, rng) for _ in range(3)]
    jacs = [_fd_jacobian(spec, p) for p in probes]
    scale = max(1.0, max(np.max(np.abs(j)) for j in jacs))
    affine = all(np.max(np.abs(j - jacs[0])) <= 1e-6 * scale for j in jacs[1:])

    if affine:
        m = jacs[0]
        omega = float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])
        theta = float(np.linalg.norm(m, 2))
        warning = None if omega > 0 else "assumption_violated: omega <= 0"
        return MonotonicityEstimate(omega, theta, "jacobian_exact", warning)

    omega, theta = math.inf, 0.0
    for _ in range(samples):
        a, b = _sample_in_box(spec, rng), _sample_in_box(spec, rng)
        diff = a - b
        norm2 = float(diff @ diff)
        if norm2 < 1e-16:
            continue
        fdiff = pseudo_gradient(spec, a) - pseudo_gradient(spec, b)
        omega = min(omega, float(fdiff @ diff) / norm2)
        theta = max(theta, float(np.linalg.norm(fdiff)) / math.sqrt(norm2))
    warning = None if omega > 0 else "assumption_violated: sampled omega <= 0"
    return MonotonicityEstimate(float(omega), float(theta), "sampled", warning)


# ---------------------------------------------------------------------------
# Ground-truth oracle


def _linear_kkt_solve(spec: GameSpec, m_mat: np.ndarray, q_vec: np.ndarray):
    """Direct solve of [M A'; A 0] [y; mu] = [-q; d] (least squares)."""
    a = spec.coupling_matrix()
    l = spec.n_constraints
    dim = m_mat.shape[0]
    kkt = np.zeros((dim + l, dim + l))
    kkt[:dim, :dim] = m_mat
    kkt[:dim, dim:] = a.T
    kkt[dim:, :dim] = a
    rhs = np.concatenate([-q_vec, spec.demand_total()])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:dim], sol[dim:]


def oracle_gne(spec: GameSpec, tol: float = 1e-12, max_iter: int = 1_000_000,
               gamma: float | None = None, mono: MonotonicityEstimate | None = None,
               cross_check: bool = True):
    """Ground-truth GNE via a projected extragradient primal-dual iteration.

    Returns (y_star, mu_star) with mu_star the common multiplier (length l).
    Iterates y <- P(y - gamma (F(y) + A' mu)), mu <- mu + gamma (A y - d)
    in predictor-corrector form until the unit-step KKT residual drops
    below ``tol``.  For affine F with an interior solution the result is
    cross-checked against the direct linear KKT solve.
    """
    if mono is None:
        mono = estimate_monotonicity(spec, samples=64, seed=1)
    if mono.omega <= 0:
        raise OracleError(f"pseudo-gradient not strongly monotone (omega={mono.omega:.3g})")
    a = spec.coupling_matrix()
    a_norm = float(np.linalg.norm(a, 2)) if spec.n_constraints > 0 else 0.0
    if gamma is None:
        gamma = mono.omega / (mono.theta + a_norm) ** 2
    d_total = spec.demand_total()

    y = np.concatenate([0.5 * (b.lower + b.upper) for b in spec.box])
    mu = np.zeros(spec.n_constraints)

    def residual(y, mu) -> float:
        feas = float(np.linalg.norm(a @ y - d_total)) if spec.n_constraints else 0.0
        return max(stationarity_residual(spec, y, mu), feas)

    for it in range(max_iter):
        grad = pseudo_gradient(spec, y)
        y_half = spec.project_all(y - gamma * (grad + a.T @ mu))
        mu_half = mu + gamma * (a @ y - d_total)
        grad_half = pseudo_gradient(spec, y_half)
        y = spec.project_all(y - gamma * (grad_half + a.T @ mu_half))
        mu = mu + gamma * (a @ y_half - d_total)
        if it % 25 == 0 and residual(y, mu) <= tol:
            break
    else:
        raise OracleError(
            f"no convergence after {max_iter} iterations (residual {residual(y, mu):.3g}); "
            "check Assumption 2 or the step size")

    if cross_check:
        _affine_cross_check(spec, y, mu, tol)
    return y, mu


def _affine_cross_check(spec: GameSpec, y: np.ndarray, mu: np.ndarray, tol: float) -> None:
    """For affine interior problems, compare against the direct linear solve."""
    rng = np.random.default_rng(7)
    probes = [_sample_in_box(spec, rng) for _ in range(2)]
    jacs = [_fd_jacobian(spec, p) for p in probes]
    scale = max(1.0, max(np.max(np.abs(j)) for j in jacs))
    if np.max(np.abs(jacs[0] - jacs[1])) > 1e-6 * scale:
        return  # not affine
    interior = all(
        np.all(spec.block(y, i) > b.lower + 1e-6) and np.all(spec.block(y, i) < b.upper - 1e-6)
        for i, b in enumerate(spec.box))
    if not interior:
        return
    m_mat = jacs[0]
    q_vec = pseudo_gradient(spec, np.zeros_like(y)) - m_mat @ np.zeros_like(y)
    y_lin, _ = _linear_kkt_solve(spec, m_mat, q_vec)
    if np.linalg.norm(y_lin - y) > max(1e-6, 1e4 * tol) * max(1.0, np.linalg.norm(y)):
        raise OracleError(
            f"fixed-point oracle and linear KKT solve disagree: "
            f"||dy|| = {np.linalg.norm(y_lin - y):.3g}")


def oracle_report(spec: GameSpec, y_star: np.ndarray, mu_star: np.ndarray) -> KktReport:
    """KKT residuals of an oracle pair (consensual multipliers, exact estimates)."""
    sigma = aggregate(spec, y_star)
    return KktReport(
        stationarity=stationarity_residual(spec, y_star, mu_star),
        feasibility=float(np.linalg.norm(constraint_residual(spec, y_star))),
        mu_consensus=0.0,
        eta_tracking=0.0,
    )


# ---------------------------------------------------------------------------
# Sufficient-condition checkers


@dataclass(frozen=True)
class ConditionMargin:
    inequality: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {"inequality": self.inequality, "lhs": self.lhs, "rhs": self.rhs,
                "slack": self.slack}


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of a sufficient-condition check (margins use slack = rhs - lhs)."""

    satisfied: bool
    margins: tuple
    searched_a1: Optional[float] = None
    notes: tuple = ()

    def margin(self, inequality: str) -> ConditionMargin:
        for m in self.margins:
            if m.inequality == inequality:
                return m
        raise KeyError(inequality)

    def to_dict(self) -> dict:
        d = {
            "satisfied": self.satisfied,
            "margins": [m.to_dict() for m in self.margins],
            "notes": list(self.notes),
        }
        if self.searched_a1 is not None:
            d["searched_a1"] = self.searched_a1
        return d


def coupling_block_norm(spec: GameSpec) -> float:
    """Spectral norm of blk{A_1, ..., A_N} = max_i ||A_i||_2."""
    if spec.n_constraints == 0:
        return 0.0
    return max(float(np.linalg.norm(c.a_mat, 2)) for c in spec.coupling)


def theorem1_k_threshold(a1: float) -> float:
    """Lower admissible bound on the smallest gain for a given free parameter."""
    return (a1 + 1.0) / math.sqrt(6.0 * a1 / 5.0)


def check_theorem1(g: Digraph, spec: GameSpec, gains: Sequence[float], p: RuleParams,
                   mono: MonotonicityEstimate,
                   spectral: SpectralSummary | None = None) -> ConditionReport:
    """Evaluate the four double-integrator gain inequalities.

    The free parameter a1 is searched on a log grid over [0.1, 10]; the
    report keeps the value maximizing the gain-threshold slack.  Note the
    third inequality has a negative right-hand side for every game with
    omega <= theta, so it can never hold; the checker reports margins
    rather than declaring anything about actual convergence.
    """
    if spectral is None:
        spectral = spectral_summary(g)
    if spectral.lambda2 <= 0:
        raise ValueError("lambda2 must be positive (graph must satisfy Assumption 3)")
    k_lo = float(np.min(gains))
    k_hi = float(np.max(gains))
    a_norm = coupling_block_norm(spec)

    a1_grid = np.logspace(-1, 1, 100)
    thresholds = (a1_grid + 1.0) / np.sqrt(6.0 * a1_grid / 5.0)
    best = int(np.argmin(thresholds))
    a1 = float(a1_grid[best])

    margins = (
        ConditionMargin("k_spread: k_max < 3 k_min", k_hi, 3.0 * k_lo),
        ConditionMargin("k_min > (a1+1)/sqrt(6 a1/5)", theorem1_k_threshold(a1), k_lo),
        ConditionMargin("||A||^2 < k_min (2 omega - theta^2) - 2 k_max",
                        a_norm ** 2,
                        k_lo * (2.0 * mono.omega - mono.theta ** 2) - 2.0 * k_hi),
        ConditionMargin("alpha > (k_min ||A||^2 + 2) / lambda2",
                        (k_lo * a_norm ** 2 + 2.0) / spectral.lambda2,
                        p.alpha),
    )
    notes = []
    if mono.omega < mono.theta ** 2 / 2.0:
        notes.append("third inequality unsatisfiable: omega < theta^2 / 2")
    return ConditionReport(
        satisfied=all(m.slack > 0 for m in margins),
        margins=margins,
        searched_a1=a1,
        notes=tuple(notes),
    )


def _chain_transfer_real_part(dyn: AgentDynamicsSpec, omega_f: float) -> float:
    """Re G(j w) for G(s) = Cbar (sI - H)^{-1} Bbar = 1 / char poly of H."""
    coeffs = np.concatenate([[1.0], dyn.feedback_row()[::-1]])  # s^r + k_{r-1} s^{r-1} + ... + 1
    val = np.polyval(coeffs, 1j * omega_f)
    return float((1.0 / val).real)


@dataclass(frozen=True)
class StorageSearchResult:
    """Outcome of the Lyapunov-grid search for the storage matrix P_i."""

    feasible: bool
    lambda_min: Optional[float]
    best_output_mismatch: float
    eps: Optional[float] = None
    rho: Optional[float] = None

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "lambda_min": self.lambda_min,
                "best_output_mismatch": self.best_output_mismatch,
                "eps": self.eps, "rho": self.rho}


def search_storage_matrix(dyn: AgentDynamicsSpec, grid_points: int = 12,
                          output_tol: float = 1e-8) -> StorageSearchResult:
    """Search P = P' > 0 with H'P + PH + eps P = -rho I and P Bbar = Cbar'.

    The Lyapunov equation is solved on an (eps, rho) grid over (0, 1]^2;
    a candidate qualifies if it is positive definite and matches the output
    constraint to ``output_tol``.  An empty result is reported as
    infeasible-by-search, not as a disproof.
    """
    h = dyn.closed_loop_matrix()
    r = dyn.order
    b = np.zeros(r)
    b[-1] = 1.0
    c = np.zeros(r)
    c[0] = 1.0

    best_mismatch = math.inf
    best = None
    for eps in np.linspace(1.0 / grid_points, 1.0, grid_points):
        shifted = h + 0.5 * eps * np.eye(r)
        if np.max(np.linalg.eigvals(shifted).real) >= 0:
            continue  # Lyapunov solution not guaranteed PD
        for rho in np.linspace(1.0 / grid_points, 1.0, grid_points):
            p = solve_continuous_lyapunov(shifted.T, -rho * np.eye(r))
            p = 0.5 * (p + p.T)
            if np.linalg.eigvalsh(p)[0] <= 0:
                continue
            mismatch = float(np.linalg.norm(p @ b - c))
            if mismatch < best_mismatch:
                best_mismatch = mismatch
                best = (p, eps, rho)
            if mismatch <= output_tol:
                return StorageSearchResult(
                    feasible=True, lambda_min=float(np.linalg.eigvalsh(p)[0]),
                    best_output_mismatch=mismatch, eps=float(eps), rho=float(rho))
    lam = float(np.linalg.eigvalsh(best[0])[0]) if best is not None else None
    return StorageSearchResult(feasible=False, lambda_min=lam,
                               best_output_mismatch=best_mismatch,
                               eps=best[1] if best else None,
                               rho=best[2] if best else None)


def check_theorem2(dyn: Sequence[AgentDynamicsSpec], spec: GameSpec, p: RuleParams,
                   g: Digraph, mono: MonotonicityEstimate,
                   spectral: SpectralSummary | None = None,
                   freq_points: int = 200) -> ConditionReport:
    """Evaluate the multi-integrator sufficient conditions.

    Runs, per agent: the exact Hurwitz check, a sampled strict-positive-
    realness frequency test of the chain transfer function, and the storage
    matrix search.  The branch thresholds on lambda_min(P) and the alpha
    bound are then evaluated; a failed storage search makes the overall
    verdict unsatisfied with an inconclusive note.
    """
    if spectral is None:
        spectral = spectral_summary(g)
    notes = []
    margins = []

    hurwitz_margin = -math.inf
    for i, d in enumerate(dyn):
        if d.order <= 2:
            raise ValueError("theorem-2 check applies to order > 2 agents")
        max_re = float(np.max(np.linalg.eigvals(d.closed_loop_matrix()).real))
        hurwitz_margin = max(hurwitz_margin, max_re)
    margins.append(ConditionMargin("max Re eig(H) < 0", hurwitz_margin, 0.0))

    freqs = np.logspace(-3, 3, freq_points)
    spr_min = math.inf
    for d in dyn:
        for wf in freqs:
            spr_min = min(spr_min, _chain_transfer_real_part(d, wf))
    margins.append(ConditionMargin("sampled min Re G(jw) > 0", 0.0, spr_min))
    if spr_min <= 0:
        notes.append("frequency sweep found Re G(jw) <= 0: chain transfer "
                     "function is not strictly positive real")

    searches = [search_storage_matrix(d) for d in dyn]
    lam_min = None
    if all(s.feasible for s in searches):
        lam_min = min(s.lambda_min for s in searches)
    else:
        worst = max(s.best_output_mismatch for s in searches)
        notes.append(f"storage-matrix search infeasible (best output mismatch {worst:.3g}); "
                     "lambda_min(P) condition is inconclusive, not disproved")

    a_norm = coupling_block_norm(spec)
    branch1 = mono.omega >= a_norm ** 2 / 2.0
    lam_threshold = 3.0 if branch1 else 3.0 + 2.0 * a_norm ** 2
    notes.append("branch 1: omega >= ||A||^2 / 2" if branch1
                 else "branch 2: omega < ||A||^2 / 2")
    margins.append(ConditionMargin(
        f"lambda_min(P) > {lam_threshold:g}",
        lam_threshold,
        lam_min if lam_min is not None else -math.inf))
    margins.append(ConditionMargin(
        "alpha > (4 + ||A||^2) / (2 lambda2)",
        (4.0 + a_norm ** 2) / (2.0 * spectral.lambda2),
        p.alpha))

    return ConditionReport(
        satisfied=all(m.slack > 0 for m in margins),
        margins=tuple(margins),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Gradient checking and serialization helpers


def check_gradients(spec: GameSpec, n_points: int = 100, seed: int = 0,
                    fd_step: float = 1e-5) -> float:
    """Max relative error of cost_grad vs central differences of the costs.

    Requires the scalar cost functions on the spec.  The differences
    recompute the aggregate at every perturbed profile, so the coupling of
    sigma back into each player's own strategy is exercised.
    """
    if spec.cost is None:
        raise ValueError("game spec carries no scalar costs to difference")
    rng = np.random.default_rng(seed)
    n = spec.strategy_dim
    worst = 0.0
    for _ in range(n_points):
        y = _sample_in_box(spec, rng)
        analytic = pseudo_gradient(spec, y)
        fd = np.empty_like(analytic)
        for i in range(spec.n_players):
            for j in range(n):
                idx = i * n + j
                y_hi = y.copy(); y_hi[idx] += fd_step
                y_lo = y.copy(); y_lo[idx] -= fd_step
                j_hi = spec.cost[i](spec.block(y_hi, i), aggregate(spec, y_hi))
                j_lo = spec.cost[i](spec.block(y_lo, i), aggregate(spec, y_lo))
                fd[idx] = (j_hi - j_lo) / (2 * fd_step)
        err = np.linalg.norm(fd - analytic) / max(1.0, np.linalg.norm(analytic))
        worst = max(worst, float(err))
    return worst


def report_to_text(title: str, payload: dict) -> str:
    """Flat human-readable key/value block."""
    lines = [title]
    def emit(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                emit(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(value, (list, tuple)):
            for idx, v in enumerate(value):
                emit(f"{prefix}[{idx}]", v)
        else:
            lines.append(f"{prefix} = {value}")
    emit("", payload)
    return "\n".join(lines) + "\n"


def report_to_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
