"""Projected stochastic gradient descent and a batch ERM baseline.

The online recursion starts at the origin and, at step n, takes the n-th
sample of the data stream, moves against the per-sample (sub)gradient with
step size gamma_n, and projects back onto the constraint set.  Step sizes
come from the family ``gamma_n = a / (b + n + 1)**alpha``; the classical
divergent-sum / convergent-square-sum condition is decidable from alpha
alone (0.5 < alpha <= 1).  Schedules violating it are allowed on purpose:
they are the negative controls of the convergence experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, Sample
from .rng import DATA_STREAM, CounterStream

__all__ = [
    "StepSchedule",
    "RobbinsMonroReport",
    "robbins_monro_check",
    "Trajectory",
    "DivergenceError",
    "sgd_step",
    "run_sgd",
    "default_record_steps",
    "projection_inactivity_index",
    "ErmResult",
    "erm_solve",
]

FEASIBILITY_TOL = 1e-12
DENSE_RECORD_CAP = 10_000
RECORD_PER_DECADE = 20


@dataclass(frozen=True)
class StepSchedule:
    """gamma_n = a / (b + n + 1)**alpha; alpha = 0 gives a constant step."""

    a: float
    b: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("schedule requires a > 0")
        if not self.b >= 0:
            raise ValueError("schedule requires b >= 0")
        if not self.alpha >= 0:
            raise ValueError("schedule requires alpha >= 0")

    def gamma(self, n: int) -> float:
        return self.a / (self.b + n + 1.0) ** self.alpha

    def gammas(self, n_steps: int) -> np.ndarray:
        # elementwise via gamma(): SIMD power kernels round differently in the
        # last ulp, and gammas(n)[k] must equal gamma(k) bit for bit
        return np.fromiter((self.gamma(n) for n in range(n_steps)), dtype=float, count=n_steps)

    def to_config(self) -> dict:
        return {"a": self.a, "b": self.b, "alpha": self.alpha}


@dataclass(frozen=True)
class RobbinsMonroReport:
    divergent_sum: bool
    convergent_sq_sum: bool
    passes: bool


def robbins_monro_check(schedule: StepSchedule) -> RobbinsMonroReport:
    """p-series test: sum gamma_n diverges iff alpha <= 1, sum gamma_n^2 converges iff alpha > 1/2."""
    divergent = schedule.alpha <= 1.0
    convergent_sq = schedule.alpha > 0.5
    return RobbinsMonroReport(
        divergent_sum=divergent,
        convergent_sq_sum=convergent_sq,
        passes=divergent and convergent_sq,
    )


class DivergenceError(RuntimeError):
    """Raised when an iterate leaves the guard region or turns non-finite."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


@dataclass
class Trajectory:
    """Recorded state of one online run.

    ``iterates[i]`` is the parameter vector after ``recorded_steps[i]``
    updates (step 0 is the initial point); per-step scalars are kept for
    every step.  ``projection_active[k]`` is True when the pre-projection
    point of step k fell outside the constraint set.
    """

    n_steps: int
    seed: int
    schedule: StepSchedule
    recorded_steps: np.ndarray
    iterates: np.ndarray
    step_losses: np.ndarray
    projection_active: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.iterates.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def iterate_at(self, n: int) -> np.ndarray:
        i = np.searchsorted(self.recorded_steps, n)
        if i >= len(self.recorded_steps) or self.recorded_steps[i] != n:
            raise KeyError(f"step {n} was not recorded")
        return self.iterates[i]

    def gamma_at(self, n: int) -> float:
        return self.schedule.gamma(n)


def sgd_step(f: np.ndarray, z: Sample, gamma: float, loss, constraint):
    """One projected update from f on sample z; returns (next point, projection active).

    Uses the subgradient oracle, which equals the gradient for the smooth
    losses, so hinge runs share this path.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    f = np.asarray(f, dtype=float)
    g = loss.subgradient(f, z)
    pre = f - gamma * g
    nxt = constraint.project(pre)
    d = pre - nxt
    active = bool(d @ d > FEASIBILITY_TOL * FEASIBILITY_TOL)
    return nxt, active


def default_record_steps(n_steps: int, stride: int | None = None) -> np.ndarray:
    """Iterate indices to record: dense up to a cap, then geometric checkpoints.

    ``stride=k`` forces every k-th step instead; 0 and n_steps are always
    included.
    """
    if stride is not None:
        if stride < 1:
            raise ValueError("record stride must be >= 1")
        steps = set(range(0, n_steps + 1, stride))
    else:
        steps = set(range(0, min(n_steps, DENSE_RECORD_CAP) + 1))
        if n_steps > DENSE_RECORD_CAP:
            n_geo = int(np.ceil(RECORD_PER_DECADE * np.log10(n_steps / DENSE_RECORD_CAP))) + 1
            geo = np.geomspace(DENSE_RECORD_CAP, n_steps, max(n_geo, 2))
            steps.update(int(round(v)) for v in geo)
    steps.add(0)
    steps.add(n_steps)
    return np.array(sorted(steps), dtype=np.int64)


def run_sgd(
    dist,
    loss,
    constraint,
    schedule: StepSchedule,
    n_steps: int,
    seed: int,
    record_stride: int | None = None,
    f0: np.ndarray | None = None,
    guard_factor: float = 1e6,
) -> Trajectory:
    """Run the projected recursion for n_steps from the origin.

    Step k consumes exactly the k-th draw of the (seed-keyed) data stream,
    in order, so the trajectory is reproducible bit-for-bit.  Non-finite or
    runaway iterates abort with a DivergenceError naming the step.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    p = dist.dim
    f = np.zeros(p) if f0 is None else np.asarray(f0, dtype=float).copy()
    if f.shape != (p,):
        raise ValueError("f0 has the wrong dimension")

    record = default_record_steps(n_steps, record_stride)
    record_mask = np.zeros(n_steps + 1, dtype=bool)
    record_mask[record] = True
    iterates = np.empty((record.size, p))
    step_losses = np.empty(n_steps)
    active = np.zeros(n_steps, dtype=bool)
    gammas = schedule.gammas(n_steps)
    guard = guard_factor * (1.0 + constraint.diameter_proxy())

    stream = CounterStream(seed, DATA_STREAM)
    sample = dist._sample
    vg = loss._value_and_grad_xy
    project = constraint.project
    tol_sq = FEASIBILITY_TOL * FEASIBILITY_TOL
    guard_sq = guard * guard

    ptr = 0
    for k in range(n_steps):
        if record_mask[k]:
            iterates[ptr] = f
            ptr += 1
        x, y = sample(stream.generator_at(k))
        val, g = vg(f, x, y)
        step_losses[k] = val
        pre = f - gammas[k] * g
        f = project(pre)
        d = pre - f
        active[k] = d @ d > tol_sq
        nrm_sq = float(f @ f)
        if not nrm_sq <= guard_sq:  # catches runaway norms and NaN alike
            raise DivergenceError(
                k, f"iterate diverged at step {k}: norm {float(np.sqrt(nrm_sq)):.3e} (step size too large?)"
            )
    iterates[ptr] = f

    return Trajectory(
        n_steps=n_steps,
        seed=seed,
        schedule=schedule,
        recorded_steps=record,
        iterates=iterates,
        step_losses=step_losses,
        projection_active=active,
        meta={
            "distribution": dist.describe(),
            "loss": loss.kind,
            "constraint": constraint.to_config(),
            "schedule": schedule.to_config(),
            "seed": seed,
            "n_steps": n_steps,
        },
    )


def projection_inactivity_index(traj: Trajectory) -> int | None:
    """Smallest N with no projection activity at any step after N.

    Returns 0 when the projection never fired, and None when it fired at
    the final step (no inactivity tail exists yet).
    """
    flags = traj.projection_active
    if not flags.any():
        return 0
    if flags[-1]:
        return None
    return int(np.nonzero(flags)[0].max())


@dataclass
class ErmResult:
    f: np.ndarray
    converged: bool
    iterations: int
    projected_grad_norm: float
    objective_history: np.ndarray


def erm_solve(data: Dataset, loss, constraint, tol: float = 1e-8, max_iters: int = 1000) -> ErmResult:
    """Minimize the empirical risk over the constraint set.

    Projected gradient descent with Armijo backtracking from the origin;
    stops when the projected-gradient norm (unit reference step) drops
    below tol.  Deterministic.  If the iteration budget runs out, the best
    iterate found is returned with ``converged=False``.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if not loss.convex:
        raise ValueError("erm_solve requires a convex loss")
    p = data.xs.shape[1]
    f = constraint.project(np.zeros(p))
    obj = float(loss.values(f, data.xs, data.ys).mean())
    history = [obj]
    step = 1.0
    pg_norm = np.inf
    for it in range(max_iters):
        g = loss.grads(f, data.xs, data.ys).mean(axis=0)
        pg = f - constraint.project(f - g)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm < tol:
            return ErmResult(f=f, converged=True, iterations=it, projected_grad_norm=pg_norm,
                             objective_history=np.array(history))
        step = min(step * 2.0, 1e8)
        accepted = False
        while step > 1e-18:
            cand = constraint.project(f - step * g)
            cand_obj = float(loss.values(cand, data.xs, data.ys).mean())
            d = f - cand
            if cand_obj <= obj - 1e-4 / step * float(d @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        f, obj = cand, cand_obj
        history.append(obj)
    return ErmResult(f=f, converged=False, iterations=max_iters, projected_grad_norm=pg_norm,
                     objective_history=np.array(history))
