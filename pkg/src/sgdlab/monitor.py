"""Consistency metrics across replicate runs and supermartingale diagnostics.

Convergence of the recursion is monitored two ways.  Risk-based: the excess
expected risk of each iterate over the constrained minimizer, and the
fraction of replicates whose excess exceeds a threshold at each checkpoint
(the empirical analogue of convergence in probability).  Sequence-based:
each replicate yields nonnegative sequences (V_n, beta_n, chi_n, eta_n)
satisfying the perturbed recursion E[V_{n+1} | F_n] <= V_n (1 + beta_n)
+ chi_n - eta_n, the Robbins-Siegmund premise; the checks here test that
recursion across replicates, classify the summability of the perturbation
series, and test the associated compensated supermartingale for positive
drift.  Summability of an empirical finite sequence is undecidable, so the
partial-sum classifier is a labeled heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Trajectory
from .losses import SquareLoss
from .model import (
    DEFAULT_MC_DRAWS,
    Dataset,
    LinearGaussian,
    empirical_risk,
    expected_risk,
    risk_report,
)

__all__ = [
    "norm_error",
    "excess_risk",
    "generalization_gap",
    "consistency_curve",
    "MonitorSeries",
    "sgd_monitor_series",
    "RobbinsSiegmundReport",
    "robbins_siegmund_check",
    "SupermartingaleReport",
    "supermartingale_test",
]

MIN_REPLICATES_FOR_BINS = 20
MIN_PER_BIN = 10
Z_DRIFT = 2.0  # standard errors before a conditional-mean violation counts
TAIL_FRACTION = 0.1
CONVERGENCE_TOL = 1e-2
SUMMABLE_INCREMENT_FRACTION = 0.01


def norm_error(f, f_min) -> float:
    """Euclidean distance to the reference minimizer."""
    f = np.asarray(f, dtype=float)
    f_min = np.asarray(f_min, dtype=float)
    if f.shape != f_min.shape:
        raise ValueError("dimension mismatch")
    return float(np.linalg.norm(f - f_min))


def excess_risk(dist, loss, f, f_min, mc_draws: int | None = DEFAULT_MC_DRAWS, seed: int = 0) -> float:
    """I(f) - I(f_min); exact when a closed-form risk exists.

    On the Monte Carlo path the difference can dip slightly below zero by
    sampling noise; the closed form never does.
    """
    a = risk_report(dist, loss, f, mc_draws=mc_draws, seed=seed)
    b = risk_report(dist, loss, f_min, mc_draws=mc_draws, seed=seed)
    return a.value - b.value


def generalization_gap(dist, loss, f, data: Dataset, mc_draws: int | None = DEFAULT_MC_DRAWS,
                       seed: int = 0) -> float:
    """|empirical risk - expected risk| at a fixed parameter vector."""
    return abs(empirical_risk(loss, f, data) - expected_risk(dist, loss, f, mc_draws=mc_draws, seed=seed))


def _excess_risk_at_iterates(trajs, dist, loss, f_min, idx, mc_draws, seed):
    """(R, len(idx)) matrix of excess risks at selected recorded steps."""
    if isinstance(dist, LinearGaussian) and isinstance(loss, SquareLoss):
        base = float(np.sum((np.asarray(f_min, float) - dist.w_star) ** 2))
        rows = [np.sum((t.iterates[idx] - dist.w_star) ** 2, axis=1) - base for t in trajs]
        return np.vstack(rows)
    rows = []
    for t in trajs:
        rows.append([excess_risk(dist, loss, f, f_min, mc_draws=mc_draws, seed=seed)
                     for f in t.iterates[idx]])
    return np.array(rows)


def consistency_curve(trajs, dist, loss, f_min, epsilon: float, steps=None,
                      mc_draws: int | None = DEFAULT_MC_DRAWS, seed: int = 0):
    """Fraction of replicates with excess risk above epsilon, per checkpoint.

    All trajectories must share the same recorded-step grid (replicates of
    one configuration do).  ``steps`` restricts evaluation to a subset of
    that grid, which matters when the risk needs Monte Carlo.  Returns a
    list of (step, fraction) pairs; the fractions are exact ratios of
    replicate counts.
    """
    if len(trajs) < 10:
        raise ValueError("consistency_curve needs at least 10 replicate runs")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid = trajs[0].recorded_steps
    for t in trajs[1:]:
        if not np.array_equal(t.recorded_steps, grid):
            raise ValueError("replicates have mismatched checkpoint grids")
    if steps is None:
        idx = np.arange(grid.size)
    else:
        idx = np.searchsorted(grid, np.asarray(steps, dtype=np.int64))
        if np.any(idx >= grid.size) or not np.array_equal(grid[idx], steps):
            raise ValueError("requested steps are not on the replicates' checkpoint grid")
    excess = _excess_risk_at_iterates(trajs, dist, loss, f_min, idx, mc_draws, seed)
    frac = (excess > epsilon).mean(axis=0)
    return [(int(n), float(v)) for n, v in zip(grid[idx], frac)]


@dataclass
class MonitorSeries:
    """Nonnegative sequences feeding the perturbed-recursion diagnostics.

    ``v`` has one entry per recorded state (length N+1); ``beta``, ``chi``
    and ``eta`` describe the N transitions between consecutive states.
    """

    v: np.ndarray
    beta: np.ndarray
    chi: np.ndarray
    eta: np.ndarray
    replicate_id: int = 0

    def __post_init__(self):
        n = self.v.size - 1
        if not (self.beta.size == self.chi.size == self.eta.size == n):
            raise ValueError("transition sequences must be one shorter than v")
        for name in ("v", "beta", "chi", "eta"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and nonnegative")


def _dense_prefix_length(traj: Trajectory) -> int:
    steps = traj.recorded_steps
    dense = np.nonzero(np.diff(steps) != 1)[0]
    return int(steps[dense[0]]) if dense.size else int(steps[-1])


def sgd_monitor_series(traj: Trajectory, dist, loss, constraint, f_min,
                       replicate_id: int = 0) -> MonitorSeries:
    """Monitor sequences for a square-loss linear-Gaussian run.

    Uses the exact per-step decomposition of the squared distance to the
    minimizer: V_n = ||f_n - f_min||^2, beta_n = 0, chi_n = gamma_n^2 times
    the closed-form gradient second moment at f_n, and eta_n = 2 gamma_n
    <f_n - f_min, grad I(f_n)>.  Needs the densely recorded prefix of the
    trajectory (consecutive iterates).
    """
    if not (isinstance(dist, LinearGaussian) and isinstance(loss, SquareLoss)):
        raise ValueError("monitor series require the closed-form square-loss family")
    n = _dense_prefix_length(traj)
    if n < 2:
        raise ValueError("trajectory has no dense prefix to monitor")
    f_min = np.asarray(f_min, dtype=float)
    iterates = traj.iterates[: n + 1]
    gammas = traj.schedule.gammas(n)
    p = dist.dim
    sigma2 = dist.noise_sigma**2
    delta_min = iterates - f_min
    delta_star = iterates - dist.w_star
    v = np.sum(delta_min * delta_min, axis=1)
    moment = 4.0 * ((p + 2.0) * np.sum(delta_star * delta_star, axis=1) + p * sigma2)
    chi = gammas**2 * moment[:-1]
    eta = 2.0 * gammas * np.einsum("ij,ij->i", delta_min[:-1], 2.0 * delta_star[:-1])
    if np.any(eta < -1e-10):
        raise ValueError("negative compensator term; iterates left the constraint set?")
    eta = np.maximum(eta, 0.0)
    return MonitorSeries(v=v, beta=np.zeros(n), chi=chi, eta=eta, replicate_id=replicate_id)


def _classify_summable(partial_sums: np.ndarray) -> bool:
    """Heuristic: the last decade of indices adds under 1% of the total."""
    total = float(partial_sums[-1])
    if total == 0.0:
        return True
    k = max(0, partial_sums.size // 10 - 1)
    increment = total - float(partial_sums[k])
    return increment <= SUMMABLE_INCREMENT_FRACTION * total


def _rank_bins(values: np.ndarray, n_bins: int) -> list[np.ndarray]:
    order = np.argsort(values, kind="stable")
    return np.array_split(order, n_bins)


def _effective_bins(n_replicates: int, bins: int) -> int:
    return max(1, min(bins, n_replicates // MIN_PER_BIN))


def _drift_violations(current: np.ndarray, nxt: np.ndarray, rhs: np.ndarray, n_bins: int):
    """Count rank-binned cells whose mean of (next - rhs) is significantly positive.

    ``current`` supplies the conditioning value; within each bin the paired
    differences d_r = next_r - rhs_r are averaged and tested at Z_DRIFT
    standard errors (a zero-spread bin counts as a violation when its mean is
    materially positive).
    """
    violations = 0
    tested = 0
    for idx in _rank_bins(current, n_bins):
        if idx.size < 2:
            continue
        d = nxt[idx] - rhs[idx]
        mean = float(d.mean())
        se = float(d.std(ddof=1) / np.sqrt(idx.size))
        tested += 1
        scale = 1e-12 * (1.0 + float(np.abs(rhs[idx]).mean()))
        if (se > 0 and mean > Z_DRIFT * se) or (se == 0 and mean > scale):
            violations += 1
    return violations, tested


@dataclass
class RobbinsSiegmundReport:
    recursion_violations: int
    tested_points: int
    beta_summable: bool
    chi_summable: bool
    v_converges: bool
    eta_series_bounded: bool
    deterministic_mode: bool
    notes: list[str] = field(default_factory=list)

    @property
    def violation_rate(self) -> float:
        return self.recursion_violations / self.tested_points if self.tested_points else 0.0


def _stack(series_list):
    v = np.vstack([s.v for s in series_list])
    beta = np.vstack([s.beta for s in series_list])
    chi = np.vstack([s.chi for s in series_list])
    eta = np.vstack([s.eta for s in series_list])
    return v, beta, chi, eta


def robbins_siegmund_check(series_list, bins: int = 10) -> RobbinsSiegmundReport:
    """Test the perturbed recursion and its convergence conclusions on data.

    With enough replicates the conditional mean E[V_{n+1} | F_n] is
    approximated by rank-binning on V_n and testing the paired differences
    against the recursion right-hand side; otherwise every transition of
    every series is checked deterministically (with a notice).  Summability
    of beta and chi, boundedness of the eta partial sums, and tail
    convergence of V are classified from partial sums, and those flags are
    heuristic by nature on finite data.
    """
    series_list = list(series_list)
    if not series_list:
        raise ValueError("no series given")
    v, beta, chi, eta = _stack(series_list)
    r, n1 = v.shape
    n = n1 - 1
    notes = []
    rhs = v[:, :-1] * (1.0 + beta) + chi - eta
    if r >= MIN_REPLICATES_FOR_BINS:
        n_bins = _effective_bins(r, bins)
        if n_bins != bins:
            notes.append(f"reduced conditioning bins to {n_bins} so each holds >= {MIN_PER_BIN} replicates")
        deterministic = False
        violations = 0
        tested = 0
        for k in range(n):
            viol, t = _drift_violations(v[:, k], v[:, k + 1], rhs[:, k], n_bins)
            violations += viol
            tested += t
    else:
        deterministic = True
        notes.append("fewer than 20 replicates: recursion checked deterministically per series")
        tol = 1e-12 * (1.0 + np.abs(rhs))
        bad = v[:, 1:] > rhs + tol
        violations = int(bad.sum())
        tested = int(bad.size)

    beta_ok = _classify_summable(np.cumsum(beta.mean(axis=0)))
    chi_ok = _classify_summable(np.cumsum(chi.mean(axis=0)))
    eta_ok = _classify_summable(np.cumsum(eta.mean(axis=0)))
    tail = max(2, int(np.ceil(TAIL_FRACTION * n1)))
    tails = v[:, -tail:]
    osc = tails.max(axis=1) - tails.min(axis=1)
    v_ok = bool(np.all(osc < CONVERGENCE_TOL * (1.0 + v[:, 0])))
    notes.append("summability and convergence flags are partial-sum heuristics on finite data")
    return RobbinsSiegmundReport(
        recursion_violations=violations,
        tested_points=tested,
        beta_summable=beta_ok,
        chi_summable=chi_ok,
        v_converges=v_ok,
        eta_series_bounded=eta_ok,
        deterministic_mode=deterministic,
        notes=notes,
    )


@dataclass
class SupermartingaleReport:
    violations: int
    tested_points: int
    deterministic_mode: bool
    notes: list[str] = field(default_factory=list)

    @property
    def violation_rate(self) -> float:
        return self.violations / self.tested_points if self.tested_points else 0.0


def compensated_supermartingale(series: MonitorSeries) -> np.ndarray:
    """Y_n = V_n / P_n + partial sums of (eta - chi) / P, with P_n = prod(1 + beta_k).

    Under the perturbed recursion, Y has nonpositive conditional drift; for
    series with beta = chi = 0 this reduces to V plus the eta partial sums.
    """
    p = np.concatenate([[1.0], np.cumprod(1.0 + series.beta)])
    comp = (series.eta - series.chi) / p[1:]
    return series.v / p + np.concatenate([[0.0], np.cumsum(comp)])


def supermartingale_test(series_list, bins: int = 10) -> SupermartingaleReport:
    """Test the compensated sequence for significantly positive conditional drift.

    Across-replicate rank bins on Y_n condition the increments Y_{n+1} - Y_n;
    with few replicates each series is checked for monotone violations
    deterministically (with a notice).
    """
    series_list = list(series_list)
    if not series_list:
        raise ValueError("no series given")
    y = np.vstack([compensated_supermartingale(s) for s in series_list])
    r, n1 = y.shape
    notes = []
    if r >= MIN_REPLICATES_FOR_BINS:
        n_bins = _effective_bins(r, bins)
        if n_bins != bins:
            notes.append(f"reduced conditioning bins to {n_bins} so each holds >= {MIN_PER_BIN} replicates")
        deterministic = False
        violations = 0
        tested = 0
        for k in range(n1 - 1):
            viol, t = _drift_violations(y[:, k], y[:, k + 1], y[:, k], n_bins)
            violations += viol
            tested += t
    else:
        deterministic = True
        notes.append("fewer than 20 replicates: drift checked deterministically per series")
        tol = 1e-12 * (1.0 + np.abs(y[:, :-1]))
        bad = y[:, 1:] > y[:, :-1] + tol
        violations = int(bad.sum())
        tested = int(bad.size)
    return SupermartingaleReport(violations=violations, tested_points=tested,
                                 deterministic_mode=deterministic, notes=notes)
