"""Synthetic data distributions with known risk structure.

Two parametric families ship with analytic ground truth: a linear-Gaussian
regression model (standard-normal inputs, Gaussian label noise), for which
the expected square-loss risk is exactly ``||f - w*||^2 + sigma^2``, and a
well-specified logistic model over sign labels whose population minimizer is
the generating parameter.  A third kind wraps a fixed finite sample set for
tests.  All sampling is a pure function of (seed, stream, index); see rng.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import SquareLoss, _sigmoid
from .rng import DATA_STREAM, RISK_PURPOSE, philox_generator, substream

__all__ = [
    "Sample",
    "Dataset",
    "LinearGaussian",
    "LogisticGaussian",
    "EmpiricalDistribution",
    "make_linear_gaussian",
    "make_logistic_gaussian",
    "draw",
    "sample_batch",
    "sample_dataset",
    "RiskEstimate",
    "NoClosedFormError",
    "risk_report",
    "expected_risk",
    "empirical_risk",
    "NoAnalyticMinimizerError",
    "true_minimizer",
    "risk_gradient",
    "monotonicity_probe",
]

DEFAULT_MC_DRAWS = 100_000
_MC_CHUNK = 262_144


class NoClosedFormError(RuntimeError):
    """Raised when no closed form exists and Monte Carlo is disabled."""


class NoAnalyticMinimizerError(RuntimeError):
    """Raised for (distribution, loss, set) triples without exact ground truth."""


@dataclass(frozen=True)
class Sample:
    """One observation z = (x, y)."""

    x: np.ndarray
    y: float


@dataclass(frozen=True)
class Dataset:
    """Ordered sample sequence; order is the online presentation order."""

    xs: np.ndarray          # (n, p)
    ys: np.ndarray          # (n,)
    seed: int
    origin: str

    def __len__(self) -> int:
        return self.xs.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(x=self.xs[i], y=float(self.ys[i]))


def _check_finite_vector(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a finite nonempty vector")
    return v


@dataclass(frozen=True)
class LinearGaussian:
    """y = <w*, x> + sigma * eps with x ~ N(0, I) and eps ~ N(0, 1)."""

    w_star: np.ndarray
    noise_sigma: float
    kind = "linear-gaussian"

    @property
    def dim(self) -> int:
        return self.w_star.size

    def _sample(self, gen):
        v = gen.standard_normal(self.dim + 1)
        x = v[: self.dim]
        return x, float(self.w_star @ x + self.noise_sigma * v[self.dim])

    def _sample_batch(self, gen, m: int):
        x = gen.standard_normal((m, self.dim))
        eps = gen.standard_normal(m)
        return x, x @ self.w_star + self.noise_sigma * eps

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "w_star": [float(v) for v in self.w_star],
            "noise_sigma": float(self.noise_sigma),
        }


@dataclass(frozen=True)
class LogisticGaussian:
    """x ~ N(0, I); y = +1 with probability sigmoid(<w*, x>), else -1."""

    w_star: np.ndarray
    kind = "logistic-gaussian"

    @property
    def dim(self) -> int:
        return self.w_star.size

    def _sample(self, gen):
        x = gen.standard_normal(self.dim)
        u = gen.random()
        return x, 1.0 if u < _sigmoid(float(self.w_star @ x)) else -1.0

    def _sample_batch(self, gen, m: int):
        x = gen.standard_normal((m, self.dim))
        u = gen.random(m)
        y = np.where(u < _sigmoid(x @ self.w_star), 1.0, -1.0)
        return x, y

    def describe(self) -> dict:
        return {"kind": self.kind, "w_star": [float(v) for v in self.w_star]}


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniform resampling (with replacement) from a fixed finite sample set."""

    xs: np.ndarray
    ys: np.ndarray
    kind = "custom-empirical"

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def _sample(self, gen):
        i = int(gen.integers(0, self.xs.shape[0]))
        return self.xs[i], float(self.ys[i])

    def _sample_batch(self, gen, m: int):
        idx = gen.integers(0, self.xs.shape[0], size=m)
        return self.xs[idx], self.ys[idx]

    def describe(self) -> dict:
        return {"kind": self.kind, "n_atoms": int(self.xs.shape[0])}


def make_linear_gaussian(w_star, noise_sigma: float) -> LinearGaussian:
    w = _check_finite_vector(w_star, "w_star")
    if not (np.isfinite(noise_sigma) and noise_sigma >= 0):
        raise ValueError("noise_sigma must be finite and >= 0")
    return LinearGaussian(w_star=w, noise_sigma=float(noise_sigma))


def make_logistic_gaussian(w_star) -> LogisticGaussian:
    return LogisticGaussian(w_star=_check_finite_vector(w_star, "w_star"))


def draw(dist, seed: int, index: int) -> Sample:
    """The index-th observation of the online stream keyed by seed.

    Deterministic: the same (seed, index) always yields a bit-identical
    sample; distinct indices use disjoint counter ranges.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    x, y = dist._sample(philox_generator(seed, DATA_STREAM, index))
    return Sample(x=x, y=y)


def sample_batch(dist, seed: int, stream: int, m: int):
    """Block of m draws on an isolated stream (for Monte Carlo estimators)."""
    return dist._sample_batch(philox_generator(seed, stream), m)


def sample_dataset(dist, seed: int, n: int) -> Dataset:
    """Materialize the first n draws of the online stream, in order."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    p = dist.dim
    xs = np.empty((n, p))
    ys = np.empty(n)
    from .rng import CounterStream

    stream = CounterStream(seed, DATA_STREAM)
    for i in range(n):
        x, y = dist._sample(stream.generator_at(i))
        xs[i] = x
        ys[i] = y
    return Dataset(xs=xs, ys=ys, seed=seed, origin=dist.kind)


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    stderr: float
    n_draws: int
    exact: bool


def _has_closed_form(dist, loss) -> bool:
    return isinstance(dist, LinearGaussian) and isinstance(loss, SquareLoss)


def risk_report(dist, loss, f, mc_draws: int | None = DEFAULT_MC_DRAWS, seed: int = 0) -> RiskEstimate:
    """Expected risk of f: exact closed form when available, else Monte Carlo.

    The closed form covers square loss on the linear-Gaussian family,
    where the risk is ``||f - w*||^2 + sigma^2``.  The Monte Carlo path
    reports its sample count and standard error; pass ``mc_draws=None`` to
    forbid it (an error is then raised when no closed form exists).
    """
    f = np.asarray(f, dtype=float)
    if _has_closed_form(dist, loss):
        d = f - dist.w_star
        return RiskEstimate(value=float(d @ d + dist.noise_sigma**2), stderr=0.0, n_draws=0, exact=True)
    if mc_draws is None or mc_draws < 2:
        raise NoClosedFormError(
            f"no closed-form risk for ({dist.kind}, {loss.kind}) and Monte Carlo is disabled"
        )
    gen = philox_generator(seed, substream(RISK_PURPOSE, 0))
    total = 0.0
    total_sq = 0.0
    left = mc_draws
    while left > 0:
        m = min(left, _MC_CHUNK)
        x, y = dist._sample_batch(gen, m)
        v = loss.values(f, x, y)
        total += float(v.sum())
        total_sq += float((v * v).sum())
        left -= m
    mean = total / mc_draws
    var = max(0.0, total_sq / mc_draws - mean * mean)
    return RiskEstimate(value=mean, stderr=float(np.sqrt(var / mc_draws)), n_draws=mc_draws, exact=False)


def expected_risk(dist, loss, f, mc_draws: int | None = DEFAULT_MC_DRAWS, seed: int = 0) -> float:
    return risk_report(dist, loss, f, mc_draws=mc_draws, seed=seed).value


def empirical_risk(loss, f, data: Dataset) -> float:
    """Arithmetic mean of the loss over the dataset."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(loss.values(np.asarray(f, dtype=float), data.xs, data.ys).mean())


def _unconstrained_minimizer(dist, loss):
    if isinstance(dist, LinearGaussian) and isinstance(loss, SquareLoss):
        return dist.w_star
    from .losses import LogisticLoss

    if isinstance(dist, LogisticGaussian) and isinstance(loss, LogisticLoss):
        # well-specified model: the population gradient vanishes at w_star
        return dist.w_star
    return None


def true_minimizer(dist, loss, constraint) -> np.ndarray:
    """Exact risk minimizer over the constraint set, when analytically known.

    For square loss on the linear-Gaussian family the risk is a shifted
    squared distance to w*, so the constrained minimizer is the projection
    of w* for any closed convex set.  For the well-specified logistic model
    the unconstrained minimizer w* is returned when it lies in the set.
    """
    m = _unconstrained_minimizer(dist, loss)
    if m is None:
        raise NoAnalyticMinimizerError(
            f"no analytic minimizer for ({dist.kind}, {loss.kind}); fit one with erm_solve on a large dataset"
        )
    if _has_closed_form(dist, loss):
        return constraint.project(m)
    if constraint.contains(m, 1e-12):
        return np.asarray(m, dtype=float)
    raise NoAnalyticMinimizerError(
        f"minimizer of ({dist.kind}, {loss.kind}) under an active constraint has no closed form"
    )


def risk_gradient(dist, loss, f, mc_draws: int | None = None, seed: int = 0) -> np.ndarray:
    """Gradient of the expected risk: analytic when known, else Monte Carlo mean."""
    f = np.asarray(f, dtype=float)
    if _has_closed_form(dist, loss):
        return 2.0 * (f - dist.w_star)
    if mc_draws is None or mc_draws < 2:
        raise NoClosedFormError(
            f"no analytic risk gradient for ({dist.kind}, {loss.kind}) and Monte Carlo is disabled"
        )
    gen = philox_generator(seed, substream(RISK_PURPOSE, 1))
    x, y = dist._sample_batch(gen, mc_draws)
    return loss.grads(f, x, y).mean(axis=0)


def monotonicity_probe(dist, loss, f_min, probes: int = 200, radius: float = 5.0, seed: int = 0,
                       mc_draws: int | None = None) -> float:
    """Smallest probed value of <f - f_min, grad I(f)> over random f != f_min.

    A positive return supports the curvature hypothesis behind almost-sure
    convergence; probing cannot verify it globally, so this is a partial,
    documented check.
    """
    f_min = np.asarray(f_min, dtype=float)
    gen = philox_generator(seed, substream(RISK_PURPOSE, 2))
    worst = np.inf
    for _ in range(probes):
        d = gen.standard_normal(f_min.size)
        nrm = np.linalg.norm(d)
        if nrm == 0:
            continue
        f = f_min + d * (radius * gen.random() / nrm)
        g = risk_gradient(dist, loss, f, mc_draws=mc_draws, seed=seed)
        worst = min(worst, float((f - f_min) @ g))
    return worst
