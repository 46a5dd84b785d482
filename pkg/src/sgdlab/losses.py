"""Loss functions for linear predictors with first- and second-order oracles.

All shipped losses are convex in the parameter vector and act on a sample
``z = (x, y)`` through the prediction ``<f, x>``.  Hessians are exposed only
as quadratic forms (never as dense matrices) so the parameter dimension can
grow without p^2 memory.  The empirical constants used by the step-size and
stability analyses (Lipschitz bound ``L``, Hessian operator-norm bound ``M``,
gradient-growth bound ``D``) are estimated by probing and reported as lower
bounds on the true suprema, which are unobservable in general.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .rng import PROBE_PURPOSE, philox_generator, substream

__all__ = [
    "SquareLoss",
    "LogisticLoss",
    "HingeLoss",
    "NonDifferentiableError",
    "LossConstants",
    "check_gradient_fd",
    "hessian_operator_norm",
    "estimate_constants",
    "loss_from_name",
]


class NonDifferentiableError(ValueError):
    """Raised when a gradient or Hessian is requested where it does not exist."""


def _check_dim(f, x) -> None:
    if np.shape(f)[-1] != np.shape(x)[-1]:
        raise ValueError(f"dimension mismatch: parameter has {np.shape(f)[-1]} coordinates, input has {np.shape(x)[-1]}")


def _predict(f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """<f, x> rowwise; f may be a single point (p,) or one row per sample (m, p)."""
    if f.ndim == 1:
        return x @ f
    return np.einsum("ij,ij->i", x, f)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class _Loss:
    kind: str = "abstract"
    convex = True
    twice_differentiable = True

    # -- scalar interface on samples -------------------------------------
    def value(self, f: np.ndarray, z) -> float:
        _check_dim(f, z.x)
        return self._value_and_grad_xy(np.asarray(f, float), z.x, z.y)[0]

    def gradient(self, f: np.ndarray, z) -> np.ndarray:
        _check_dim(f, z.x)
        return self._value_and_grad_xy(np.asarray(f, float), z.x, z.y)[1]

    def subgradient(self, f: np.ndarray, z) -> np.ndarray:
        """A valid subgradient; equals the gradient wherever one exists."""
        return self.gradient(f, z)

    def hessian_quadratic_form(self, f: np.ndarray, z, u: np.ndarray, v: np.ndarray) -> float:
        _check_dim(f, z.x)
        _check_dim(u, z.x)
        _check_dim(v, z.x)
        return self._hqf_xy(np.asarray(f, float), z.x, z.y, np.asarray(u, float), np.asarray(v, float))

    # -- vectorized interface on sample arrays ---------------------------
    def values(self, f: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grads(self, f: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _value_and_grad_xy(self, f, x, y):
        raise NotImplementedError

    def _hqf_xy(self, f, x, y, u, v) -> float:
        raise NotImplementedError


class SquareLoss(_Loss):
    """V(f, z) = (y - <f, x>)^2 with gradient -2(y - <f,x>) x and Hessian 2 x x^T."""

    kind = "square"

    def _value_and_grad_xy(self, f, x, y):
        r = y - f @ x
        return r * r, (-2.0 * r) * x

    def _hqf_xy(self, f, x, y, u, v):
        return 2.0 * float(u @ x) * float(v @ x)

    def values(self, f, x, y):
        r = y - _predict(f, x)
        return r * r

    def grads(self, f, x, y):
        r = y - _predict(f, x)
        return (-2.0 * r)[:, None] * x


class LogisticLoss(_Loss):
    """V(f, z) = log(1 + exp(-y <f, x>)) for labels y in {-1, +1}."""

    kind = "logistic"

    def _value_and_grad_xy(self, f, x, y):
        m = y * (f @ x)
        return float(np.logaddexp(0.0, -m)), (-y * _sigmoid(-m)) * x

    def _hqf_xy(self, f, x, y, u, v):
        m = y * (f @ x)
        s = _sigmoid(m)
        return float(y * y * s * (1.0 - s)) * float(u @ x) * float(v @ x)

    def values(self, f, x, y):
        return np.logaddexp(0.0, -y * _predict(f, x))

    def grads(self, f, x, y):
        m = y * _predict(f, x)
        return (-y * _sigmoid(-m))[:, None] * x


class HingeLoss(_Loss):
    """V(f, z) = max(0, 1 - y <f, x>); only the subgradient oracle is exact.

    At the kink (margin exactly 1) the zero vector is returned: it belongs to
    the subdifferential and makes the update a no-op on a measure-zero event.
    """

    kind = "hinge"
    twice_differentiable = False

    def _value_and_grad_xy(self, f, x, y):
        m = y * (f @ x)
        if m >= 1.0:
            return 0.0, np.zeros_like(np.asarray(x, float))
        return 1.0 - m, -y * np.asarray(x, float)

    def gradient(self, f, z):
        _check_dim(f, z.x)
        m = z.y * (np.asarray(f, float) @ z.x)
        if m == 1.0:
            raise NonDifferentiableError("hinge loss is non-differentiable at margin 1; use subgradient")
        return self._value_and_grad_xy(np.asarray(f, float), z.x, z.y)[1]

    def subgradient(self, f, z):
        _check_dim(f, z.x)
        return self._value_and_grad_xy(np.asarray(f, float), z.x, z.y)[1]

    def _hqf_xy(self, f, x, y, u, v):
        raise NonDifferentiableError("hinge loss has no Hessian")

    def values(self, f, x, y):
        return np.maximum(0.0, 1.0 - y * _predict(f, x))

    def grads(self, f, x, y):
        m = y * _predict(f, x)
        return np.where(m < 1.0, -y, 0.0)[:, None] * x


def loss_from_name(name: str) -> _Loss:
    table = {"square": SquareLoss, "logistic": LogisticLoss, "hinge": HingeLoss}
    if name not in table:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(table)}")
    return table[name]()


def check_gradient_fd(loss: _Loss, f: np.ndarray, z, h: float = 1e-6) -> float:
    """Max relative disagreement between the analytic gradient and central differences.

    Per coordinate the error is normalized by max(1, |gradient entry|).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    f = np.asarray(f, dtype=float)
    g = loss.gradient(f, z)
    worst = 0.0
    for i in range(f.size):
        e = np.zeros_like(f)
        e[i] = h
        fd = (loss.value(f + e, z) - loss.value(f - e, z)) / (2.0 * h)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return worst


def hessian_operator_norm(loss: _Loss, f: np.ndarray, z, iters: int = 60, tol: float = 1e-12, seed: int = 0) -> float:
    """Operator norm of the Hessian at (f, z) by power iteration on the quadratic form.

    Matrix-vector products are assembled from p quadratic-form evaluations, so
    the p x p matrix is never materialized.  Exact up to the iteration
    tolerance for the shipped (positive semidefinite) losses.
    """
    f = np.asarray(f, dtype=float)
    p = f.size
    gen = philox_generator(seed, substream(PROBE_PURPOSE, 1))
    v = gen.standard_normal(p)
    v /= np.linalg.norm(v)
    basis = np.eye(p)
    lam = 0.0
    for _ in range(iters):
        hv = np.array([loss._hqf_xy(f, z.x, z.y, basis[i], v) for i in range(p)])
        n = float(np.linalg.norm(hv))
        if n == 0.0:
            return 0.0
        new_lam = float(v @ hv)
        v = hv / n
        if abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            return new_lam
        lam = new_lam
    return lam


@dataclass(frozen=True)
class LossConstants:
    """Empirical lower bounds for the analysis constants, from probing."""

    lipschitz: float        # max ||grad V|| over probed (f, z)
    hessian_bound: float    # max operator norm of the Hessian over probes
    growth: float           # max E_z ||grad V(f, z)||^2 / (1 + ||f - f_ref||^2)
    probe_radius: float
    probes: int


def estimate_constants(
    loss: _Loss,
    constraint,
    dist,
    f_reference: np.ndarray,
    probes: int = 200,
    seed: int = 0,
    probe_radius: float = 2.0,
    inner_draws: int = 256,
) -> LossConstants:
    """Probe-based estimates of (L, M, D) around ``f_reference`` within the set.

    Probe parameters are uniform in a ball of ``probe_radius`` around the
    reference point, projected into the constraint set; each probe pairs with
    fresh samples.  All three numbers are running maxima and therefore lower
    bounds that never decrease as ``probes`` grows.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    f_reference = np.asarray(f_reference, dtype=float)
    p = f_reference.size
    gen = philox_generator(seed, substream(PROBE_PURPOSE, 0))
    lipschitz = 0.0
    hess = 0.0
    growth = 0.0
    for k in range(probes):
        direction = gen.standard_normal(p)
        radius = probe_radius * gen.random() ** (1.0 / p)
        nrm = np.linalg.norm(direction)
        point = f_reference if nrm == 0 else f_reference + direction * (radius / nrm)
        point = constraint.project(point)
        x, y = dist._sample_batch(gen, inner_draws)
        grads = loss.grads(point, x, y)
        sq = np.einsum("ij,ij->i", grads, grads)
        lipschitz = max(lipschitz, float(np.sqrt(sq.max())))
        growth = max(growth, float(sq.mean()) / (1.0 + float(np.sum((point - f_reference) ** 2))))
        if loss.twice_differentiable:
            z = SimpleNamespace(x=x[0], y=float(y[0]))
            hess = max(hess, hessian_operator_norm(loss, point, z, seed=seed + k))
    return LossConstants(
        lipschitz=lipschitz,
        hessian_bound=hess,
        growth=growth,
        probe_radius=probe_radius,
        probes=probes,
    )
