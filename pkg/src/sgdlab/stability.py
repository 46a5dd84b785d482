"""Online-stability diagnostics for the projected SGD recursion.

The central quantity is the conditional expected one-step improvement of
the loss on the incoming sample: with the current iterate frozen, draw a
fresh z, take one update, and average V(f_n, z) - V(f_next, z).  For convex
losses and convex sets this gap is nonnegative, and for smooth losses it
shrinks proportionally to the step size; the profile over a run, a log-log
rate fit, the second-order expansion behind that rate, and the converse
gradient-norm bound are all implemented here as Monte Carlo estimators on
isolated random streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Trajectory
from .model import Sample
from .rng import MOMENT_PURPOSE, STABILITY_PURPOSE, philox_generator, substream

__all__ = [
    "StabilitySeries",
    "stability_gap",
    "stability_profile",
    "default_checkpoints",
    "RateFit",
    "fit_rate",
    "pooled_gap",
    "TaylorTerms",
    "taylor_decomposition",
    "gradient_second_moment",
    "BoundCheck",
    "converse_bound_check",
    "gradient_growth_check",
]

Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass
class StabilitySeries:
    """Per-checkpoint gap estimates with confidence half-widths."""

    steps: np.ndarray          # checkpoint step indices
    gamma: np.ndarray          # step size at each checkpoint
    beta_hat: np.ndarray       # Monte Carlo mean of the one-step gap
    ci_halfwidth: np.ndarray   # 95% normal-approximation half-width
    m: int                     # fresh draws per checkpoint

    @property
    def usable(self) -> np.ndarray:
        """Checkpoints whose confidence interval excludes zero."""
        return self.beta_hat - self.ci_halfwidth > 0.0

    def rows(self):
        for i in range(self.steps.size):
            yield (int(self.steps[i]), float(self.gamma[i]), float(self.beta_hat[i]),
                   float(self.ci_halfwidth[i]), self.m)


def _mean_ci(values: np.ndarray):
    m = values.size
    mean = float(values.mean())
    if m < 2:
        return mean, float("inf")
    return mean, float(Z95 * values.std(ddof=1) / np.sqrt(m))


def stability_gap(f, gamma: float, loss, constraint, dist, m: int, seed: int,
                  stream: int | None = None):
    """Monte Carlo estimate of the one-step improvement gap at a frozen iterate.

    Draws m fresh samples on an isolated stream (never the data stream), takes
    one projected step per sample, and averages V(f, z) - V(f', z).  Returns
    (mean, 95% CI half-width).
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    f = np.asarray(f, dtype=float)
    gen = philox_generator(seed, substream(STABILITY_PURPOSE, 0) if stream is None else stream)
    x, y = dist._sample_batch(gen, m)
    before = loss.values(f, x, y)
    grads = loss.grads(f, x, y)
    stepped = constraint.project(f - gamma * grads)
    after = loss.values(stepped, x, y)
    return _mean_ci(before - after)


def default_checkpoints(traj: Trajectory, count: int = 20) -> np.ndarray:
    """Geometrically spaced checkpoint steps snapped to recorded iterates."""
    lo = max(10, traj.n_steps // 1000)
    hi = traj.n_steps
    if lo >= hi:
        lo = 1
    targets = np.geomspace(lo, hi, count)
    rec = traj.recorded_steps
    snapped = rec[np.clip(np.searchsorted(rec, targets), 0, rec.size - 1)]
    return np.unique(snapped)


def stability_profile(traj: Trajectory, dist, loss, constraint, m: int = 10_000,
                      seed: int | None = None, checkpoints: np.ndarray | None = None) -> StabilitySeries:
    """Gap estimates along a trajectory, one isolated stream per checkpoint."""
    if checkpoints is None:
        checkpoints = default_checkpoints(traj)
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    seed = traj.seed if seed is None else seed
    gammas = np.array([traj.gamma_at(int(n)) for n in checkpoints])
    means = np.empty(checkpoints.size)
    cis = np.empty(checkpoints.size)
    for i, n in enumerate(checkpoints):
        f = traj.iterate_at(int(n))
        means[i], cis[i] = stability_gap(
            f, gammas[i], loss, constraint, dist, m, seed,
            stream=substream(STABILITY_PURPOSE, int(n)),
        )
    return StabilitySeries(steps=checkpoints, gamma=gammas, beta_hat=means, ci_halfwidth=cis, m=m)


@dataclass(frozen=True)
class RateFit:
    slope: float
    c_hat: float
    r_squared: float
    n_used: int


def fit_rate(series: StabilitySeries, min_points: int = 5) -> RateFit:
    """Least squares of log(gap) on log(gamma) over checkpoints whose CI excludes 0.

    ``c_hat`` is the geometric mean of gap/gamma over the same points: the
    proportionality constant under an exact linear rate.
    """
    mask = series.usable
    n = int(mask.sum())
    if n < min_points:
        raise ValueError(f"need at least {min_points} checkpoints with CI excluding 0, have {n}")
    lx = np.log(series.gamma[mask])
    ly = np.log(series.beta_hat[mask])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    c_hat = float(np.exp(np.mean(ly - lx)))
    return RateFit(slope=float(slope), c_hat=c_hat, r_squared=r2, n_used=n)


def pooled_gap(series: StabilitySeries):
    """Inverse-variance pooled gap estimate and its standard error."""
    se = series.ci_halfwidth / Z95
    mask = se > 0
    if not mask.any():
        return float(series.beta_hat.mean()), 0.0
    w = 1.0 / se[mask] ** 2
    mean = float((w * series.beta_hat[mask]).sum() / w.sum())
    return mean, float(1.0 / np.sqrt(w.sum()))


def envelope_constant(series: StabilitySeries) -> float:
    """Smallest C with gap_n <= C * gamma_n across usable checkpoints (upper CI edges).

    The rate fit's c_hat is a geometric mean and sits below the profile's
    peaks; the converse gradient-norm bound quantifies over all steps, so it
    needs this envelope value instead.
    """
    mask = series.usable
    if not mask.any():
        raise ValueError("no checkpoint has a CI excluding zero")
    return float(((series.beta_hat[mask] + series.ci_halfwidth[mask]) / series.gamma[mask]).max())


@dataclass(frozen=True)
class TaylorTerms:
    """Second-order decomposition of the one-step loss change at a sample.

    ``exact_diff = V(f, z) - V(f - gamma * grad, z)``; the first term is
    gamma * ||grad||^2, the second is the half-squared-step curvature term
    evaluated at f, and the residual is what the two leave unexplained
    (identically zero for quadratic losses, third order in gamma otherwise).
    """

    first_term: float
    second_term: float
    exact_diff: float
    residual: float


def taylor_decomposition(f, z: Sample, gamma: float, loss) -> TaylorTerms:
    if not loss.twice_differentiable:
        raise ValueError(f"{loss.kind} loss has no second-order expansion")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    f = np.asarray(f, dtype=float)
    g = loss.gradient(f, z)
    first = gamma * float(g @ g)
    second = 0.5 * gamma * gamma * loss.hessian_quadratic_form(f, z, g, g)
    exact = loss.value(f, z) - loss.value(f - gamma * g, z)
    return TaylorTerms(first_term=first, second_term=second, exact_diff=exact,
                       residual=exact - (first - second))


def gradient_second_moment(f, loss, dist, m: int, seed: int, stream: int):
    """Monte Carlo E_z ||grad V(f, z)||^2 with a 95% CI half-width."""
    f = np.asarray(f, dtype=float)
    gen = philox_generator(seed, stream)
    x, y = dist._sample_batch(gen, m)
    grads = loss.grads(f, x, y)
    return _mean_ci(np.einsum("ij,ij->i", grads, grads))


@dataclass(frozen=True)
class BoundCheck:
    """One checkpoint of a moment-versus-bound comparison."""

    step: int
    gamma: float
    moment: float
    ci_halfwidth: float
    bound: float
    within_bound: bool            # point estimate below the bound
    significant_violation: bool   # even the lower CI edge exceeds the bound
    skipped: bool = False
    note: str = ""


def converse_bound_check(traj: Trajectory, dist, loss, c_hat: float, hessian_bound: float,
                         m: int = 10_000, seed: int | None = None,
                         checkpoints: np.ndarray | None = None) -> list[BoundCheck]:
    """Check E||grad V(f_n, .)||^2 <= c_hat * gamma_n / (gamma_n - M/2 * gamma_n^2).

    Checkpoints where the denominator is nonpositive (step size too large for
    the curvature bound) are reported as skipped.  Both sides are estimates,
    so the verdict carries the Monte Carlo CI.
    """
    if checkpoints is None:
        checkpoints = default_checkpoints(traj)
    seed = traj.seed if seed is None else seed
    out = []
    for n in np.asarray(checkpoints, dtype=np.int64):
        gamma = traj.gamma_at(int(n))
        denom = gamma - 0.5 * hessian_bound * gamma * gamma
        if denom <= 0:
            out.append(BoundCheck(step=int(n), gamma=gamma, moment=float("nan"), ci_halfwidth=float("nan"),
                                  bound=float("nan"), within_bound=False, significant_violation=False,
                                  skipped=True, note="gamma too large for the curvature bound"))
            continue
        f = traj.iterate_at(int(n))
        moment, ci = gradient_second_moment(f, loss, dist, m, seed, substream(MOMENT_PURPOSE, int(n)))
        bound = c_hat * gamma / denom
        out.append(BoundCheck(step=int(n), gamma=gamma, moment=moment, ci_halfwidth=ci, bound=bound,
                              within_bound=moment <= bound,
                              significant_violation=moment - ci > bound))
    return out


def gradient_growth_check(traj: Trajectory, dist, loss, f_min, growth_constant: float,
                          m: int = 10_000, seed: int | None = None,
                          checkpoints: np.ndarray | None = None) -> list[BoundCheck]:
    """Check E||grad V(f_n, .)||^2 <= D (1 + ||f_n - f_min||^2) along a run."""
    if checkpoints is None:
        checkpoints = default_checkpoints(traj)
    seed = traj.seed if seed is None else seed
    f_min = np.asarray(f_min, dtype=float)
    out = []
    for n in np.asarray(checkpoints, dtype=np.int64):
        f = traj.iterate_at(int(n))
        moment, ci = gradient_second_moment(f, loss, dist, m, seed, substream(MOMENT_PURPOSE, int(n)))
        bound = growth_constant * (1.0 + float(np.sum((f - f_min) ** 2)))
        out.append(BoundCheck(step=int(n), gamma=traj.gamma_at(int(n)), moment=moment, ci_halfwidth=ci,
                              bound=bound, within_bound=moment <= bound,
                              significant_violation=moment - ci > bound))
    return out
