import math

import numpy as np
import pytest

from sgdlab import (
    Ball,
    HingeLoss,
    LogisticLoss,
    NonDifferentiableError,
    Sample,
    SquareLoss,
    check_gradient_fd,
    estimate_constants,
    make_linear_gaussian,
)
from sgdlab.losses import hessian_operator_norm
from sgdlab.model import EmpiricalDistribution
from sgdlab.rng import philox_generator


def _z(x, y):
    return Sample(x=np.asarray(x, dtype=float), y=float(y))


def test_square_value_hand_cases():
    loss = SquareLoss()
    assert loss.value(np.zeros(2), _z([1.0, 0.0], 1.0)) == 1.0
    w = np.array([0.7, -0.2])
    x = np.array([0.3, 1.1])
    assert loss.value(w, _z(x, float(w @ x))) == 0.0


def test_logistic_value_at_origin_is_log_two():
    loss = LogisticLoss()
    for y in (-1.0, 1.0):
        v = loss.value(np.zeros(3), _z([0.4, -1.0, 2.0], y))
        assert abs(v - math.log(2.0)) < 1e-15


def test_square_gradient_hand_case_and_fd():
    loss = SquareLoss()
    z = _z([1.0, 0.0], 1.0)
    g = loss.gradient(np.zeros(2), z)
    assert np.allclose(g, [-2.0, 0.0], atol=1e-15)
    assert check_gradient_fd(loss, np.zeros(2), z) < 1e-5


def test_square_gradient_zero_at_per_sample_minimum():
    loss = SquareLoss()
    w = np.array([1.0, 2.0, -0.5])
    x = np.array([0.2, -1.0, 0.7])
    z = _z(x, float(w @ x))
    assert np.allclose(loss.gradient(w, z), 0.0, atol=1e-14)
    assert check_gradient_fd(loss, w, z) < 1e-5


def test_logistic_gradient_at_origin_and_fd():
    loss = LogisticLoss()
    x = np.array([0.5, -1.5, 2.0])
    g = loss.gradient(np.zeros(3), _z(x, 1.0))
    assert np.allclose(g, -x / 2.0, atol=1e-15)
    gen = philox_generator(21)
    for _ in range(100):
        f = gen.standard_normal(3)
        z = _z(gen.standard_normal(3), 1.0 if gen.random() < 0.5 else -1.0)
        assert check_gradient_fd(loss, f, z) < 1e-5


def test_gradient_fd_over_random_probes_square():
    loss = SquareLoss()
    gen = philox_generator(22)
    for _ in range(100):
        f = gen.standard_normal(5)
        z = _z(gen.standard_normal(5), float(gen.standard_normal()))
        assert check_gradient_fd(loss, f, z) < 1e-5


def test_hinge_subgradient_branches():
    loss = HingeLoss()
    x = np.array([2.0, -1.0])
    # margin > 1: flat region
    assert np.array_equal(loss.subgradient(np.array([1.0, 0.0]), _z(x, 1.0)), [0.0, 0.0])
    # margin < 1: slope -y x
    g = loss.subgradient(np.zeros(2), _z(x, 1.0))
    assert np.array_equal(g, -x)
    # margin exactly 1: the zero element of the subdifferential is chosen
    f = np.array([0.5, 0.0])
    assert float(f @ x) == 1.0
    assert np.array_equal(loss.subgradient(f, _z(x, 1.0)), [0.0, 0.0])
    with pytest.raises(NonDifferentiableError):
        loss.gradient(f, _z(x, 1.0))


def test_hinge_has_no_hessian():
    loss = HingeLoss()
    with pytest.raises(NonDifferentiableError):
        loss.hessian_quadratic_form(np.zeros(2), _z([1.0, 0.0], 1.0), np.ones(2), np.ones(2))


def test_hessian_quadratic_form_square_cases():
    loss = SquareLoss()
    x = np.array([1.0, 0.0])
    z = _z(x, 1.0)
    f = np.array([0.3, -0.8])
    # <x, 2 x x^T x> = 2 ||x||^4 = 2 for a unit x
    assert loss.hessian_quadratic_form(f, z, x, x) == 2.0
    assert loss.hessian_quadratic_form(f, z, np.zeros(2), x) == 0.0
    perp = np.array([0.0, 3.0])
    assert loss.hessian_quadratic_form(f, z, perp, perp) == 0.0


def test_hessian_psd_probes():
    gen = philox_generator(23)
    for loss in (SquareLoss(), LogisticLoss()):
        for _ in range(500):
            f = gen.standard_normal(4)
            z = _z(gen.standard_normal(4), 1.0 if gen.random() < 0.5 else -1.0)
            u = gen.standard_normal(4)
            assert loss.hessian_quadratic_form(f, z, u, u) >= -1e-12


def test_convexity_probes():
    gen = philox_generator(24)
    for loss in (SquareLoss(), LogisticLoss(), HingeLoss()):
        for _ in range(334):
            f = gen.standard_normal(4)
            g = gen.standard_normal(4)
            z = _z(gen.standard_normal(4), 1.0 if gen.random() < 0.5 else -1.0)
            t = gen.random()
            lhs = loss.value(t * f + (1 - t) * g, z)
            rhs = t * loss.value(f, z) + (1 - t) * loss.value(g, z)
            assert lhs <= rhs + 1e-12


def test_hinge_subgradient_inequality_probes():
    loss = HingeLoss()
    gen = philox_generator(25)
    for _ in range(1000):
        f = gen.standard_normal(4)
        g = gen.standard_normal(4)
        z = _z(gen.standard_normal(4), 1.0 if gen.random() < 0.5 else -1.0)
        sub = loss.subgradient(f, z)
        assert loss.value(g, z) >= loss.value(f, z) + float(sub @ (g - f)) - 1e-12


def test_dimension_mismatch_signaled():
    loss = SquareLoss()
    with pytest.raises(ValueError, match="dimension"):
        loss.value(np.zeros(3), _z([1.0, 0.0], 1.0))
    with pytest.raises(ValueError, match="dimension"):
        loss.gradient(np.zeros(2), _z([1.0, 0.0, 0.0], 1.0))


def test_hessian_operator_norm_rank_one_exact():
    # square-loss Hessian is 2 x x^T with operator norm 2 ||x||^2
    gen = philox_generator(26)
    loss = SquareLoss()
    for _ in range(10):
        x = gen.standard_normal(5)
        z = _z(x, 0.3)
        got = hessian_operator_norm(loss, gen.standard_normal(5), z)
        assert abs(got - 2.0 * float(x @ x)) < 1e-9


def test_estimate_constants_unit_sphere_inputs():
    # inputs on the unit sphere: Hessian norm is exactly 2 everywhere
    gen = philox_generator(27)
    xs = gen.standard_normal((64, 4))
    xs /= np.linalg.norm(xs, axis=1)[:, None]
    ys = gen.standard_normal(64)
    dist = EmpiricalDistribution(xs=xs, ys=ys)
    K = Ball(radius=1.0)
    consts = estimate_constants(SquareLoss(), K, dist, np.zeros(4), probes=50, seed=3)
    assert abs(consts.hessian_bound - 2.0) < 1e-9
    assert consts.lipschitz > 0


def test_estimate_constants_monotone_in_probes():
    w = np.array([0.4, -0.1, 0.3])
    dist = make_linear_gaussian(w, 0.5)
    K = Ball(radius=2.0)
    prev = None
    for probes in (10, 40, 160):
        consts = estimate_constants(SquareLoss(), K, dist, w, probes=probes, seed=5)
        if prev is not None:
            assert consts.lipschitz >= prev.lipschitz
            assert consts.hessian_bound >= prev.hessian_bound
            assert consts.growth >= prev.growth
        prev = consts


def test_lipschitz_bound_holds_on_probed_ball():
    w = np.array([0.4, -0.1, 0.3])
    dist = make_linear_gaussian(w, 0.5)
    K = Ball(radius=2.0)
    consts = estimate_constants(SquareLoss(), K, dist, w, probes=150, seed=8, probe_radius=2.0)
    loss = SquareLoss()
    gen = philox_generator(29)
    for _ in range(300):
        # pairs inside the probed ball around the reference point
        d1, d2 = gen.standard_normal(3), gen.standard_normal(3)
        f1 = K.project(w + d1 / max(1.0, np.linalg.norm(d1) / 2.0) * gen.random())
        f2 = K.project(w + d2 / max(1.0, np.linalg.norm(d2) / 2.0) * gen.random())
        x, y = dist._sample_batch(gen, 1)
        z = _z(x[0], y[0])
        gap = abs(loss.value(f1, z) - loss.value(f2, z))
        # L is a probed lower bound of the true constant; allow estimation slack
        assert gap <= 1.5 * consts.lipschitz * np.linalg.norm(f1 - f2) + 1e-9
