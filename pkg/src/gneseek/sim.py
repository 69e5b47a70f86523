"""Fixed-step integration of the closed-loop fields and trajectory tooling.

Classical RK4 with a fixed step: the two-time-scale stiffness is known and
mild, so reproducibility beats adaptivity here.  The step must not exceed
epsilon / 5 while the fast estimator block is active.
"""

import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import SimState
from .errors import ConfigError, IntegrationDiverged, ValidationFailure

STEP_GUARD_FRACTION = 0.2  # step <= epsilon / 5


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings."""

    step: float
    t_end: float
    record_every: int = 1
    stop_tol: float = 0.0

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError(f"step must be positive, got {self.step}", "integrator")
        if self.t_end <= 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}", "integrator")
        if self.record_every < 1:
            raise ConfigError("record_every must be a positive integer", "integrator")
        if self.stop_tol < 0:
            raise ConfigError("stop_tol must be non-negative", "integrator")

    def check_step_guard(self, epsilon: float) -> None:
        limit = STEP_GUARD_FRACTION * epsilon
        if self.step > limit * (1 + 1e-12):
            raise ValidationFailure(
                f"step {self.step} violates the stability guard step <= epsilon/5 = {limit}",
                ["step_guard"])

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.step)))


@dataclass
class Trajectory:
    """Recorded snapshots of one integration run."""

    layout: object
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)       # flat vectors
    residuals: list = field(default_factory=list)    # KktReport or None
    stopped_early: bool = False

    def append(self, t: float, vec: np.ndarray, report=None) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.states.append(np.array(vec))
        self.residuals.append(report)

    @property
    def final_state(self) -> SimState:
        return SimState(self.layout, self.states[-1].copy())

    @property
    def final_time(self) -> float:
        return self.times[-1]

    def state_at(self, idx: int) -> SimState:
        return SimState(self.layout, self.states[idx].copy())

    def series(self, fn: Callable[[np.ndarray], float]) -> np.ndarray:
        return np.array([fn(s) for s in self.states])

    def residual_series(self, name: str) -> np.ndarray:
        vals = []
        for rep in self.residuals:
            if rep is None:
                raise ValueError("trajectory was recorded without residual reports")
            vals.append(getattr(rep, name))
        return np.array(vals)


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def integrate(fld, s0: SimState, cfg: IntegratorConfig,
              residual_fn: Optional[Callable[[np.ndarray], object]] = None) -> Trajectory:
    """Integrate ``fld`` from ``s0`` with fixed-step RK4.

    Snapshots are kept every ``record_every`` steps (plus the last step).
    When ``stop_tol`` > 0 and a ``residual_fn`` is supplied, the run stops
    as soon as a recorded point has max residual <= stop_tol.  A non-finite
    state raises IntegrationDiverged carrying the partial trajectory.
    """
    traj = Trajectory(layout=s0.layout)
    x = s0.vec.copy()
    h = cfg.step

    def record(t: float, vec: np.ndarray):
        report = residual_fn(vec) if residual_fn is not None else None
        traj.append(t, vec, report)
        return report

    report = record(0.0, x)
    if cfg.stop_tol > 0 and report is not None and report.max_residual <= cfg.stop_tol:
        traj.stopped_early = True
        return traj

    n_steps = cfg.n_steps
    for step_idx in range(1, n_steps + 1):
        x = rk4_step(fld, x, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(step_idx * h, traj)
        if step_idx % cfg.record_every == 0 or step_idx == n_steps:
            report = record(step_idx * h, x)
            if cfg.stop_tol > 0 and report is not None \
                    and report.max_residual <= cfg.stop_tol:
                traj.stopped_early = True
                break
    return traj


def fit_log_decay(times: Sequence[float], values: Sequence[float],
                  skip_fraction: float = 0.2) -> tuple[float, float]:
    """Least-squares slope of log(values) vs time after a transient skip.

    Returns (rate, r_squared).  Non-positive values truncate the window at
    the first occurrence; a constant series yields rate 0 with r^2 = 1.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    start = int(len(values) * skip_fraction)
    t, v = times[start:], values[start:]
    bad = np.nonzero(v <= 0)[0]
    if bad.size:
        t, v = t[:bad[0]], v[:bad[0]]
    if len(v) < 3:
        raise ValueError("not enough positive samples to fit a decay rate")
    logv = np.log(v)
    coeffs, residuals_ss, *_ = np.polyfit(t, logv, 1, full=True)
    rate = float(coeffs[0])
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    if ss_tot == 0.0:
        return rate, 1.0
    ss_res = float(residuals_ss[0]) if len(residuals_ss) else 0.0
    return rate, 1.0 - ss_res / ss_tot


def fit_exponential_rate(traj: Trajectory, which,
                         skip_fraction: float = 0.2) -> tuple[float, float]:
    """Fit an exponential decay rate to a residual series of a trajectory.

    ``which`` is either the name of a KktReport field recorded along the
    trajectory or a callable mapping a flat state vector to a value.
    """
    if callable(which):
        values = traj.series(which)
    else:
        values = traj.residual_series(which)
    return fit_log_decay(traj.times, values, skip_fraction)


def _fmt(v: float) -> str:
    return repr(float(v))


def trajectory_to_csv(traj: Trajectory, spec) -> str:
    """Render a trajectory as CSV.

    Columns: time, strategies y_i_j, multipliers mu_i_j, estimates eta_i_j
    (players and components 1-based), then the four residual columns
    kkt_stationarity, kkt_feasibility, mu_consensus, eta_tracking.
    """
    lay = traj.layout
    N, n, l, m = lay.n_players, lay.strategy_dim, lay.constraint_dim, lay.aggregate_dim
    header = ["time"]
    header += [f"y_{i + 1}_{j + 1}" for i in range(N) for j in range(n)]
    header += [f"mu_{i + 1}_{j + 1}" for i in range(N) for j in range(l)]
    header += [f"eta_{i + 1}_{j + 1}" for i in range(N) for j in range(m)]
    header += ["kkt_stationarity", "kkt_feasibility", "mu_consensus", "eta_tracking"]

    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for t, vec, rep in zip(traj.times, traj.states, traj.residuals):
        state = SimState(lay, vec)
        row = [_fmt(t)]
        row += [_fmt(v) for v in state.outputs(spec)]
        row += [_fmt(v) for v in state.mu]
        row += [_fmt(v) for v in state.eta]
        if rep is None:
            row += ["", "", "", ""]
        else:
            row += [_fmt(rep.stationarity), _fmt(rep.feasibility),
                    _fmt(rep.mu_consensus), _fmt(rep.eta_tracking)]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
