import numpy as np
import pytest

from sgdlab import Ball, SquareLoss, StepSchedule, make_linear_gaussian


@pytest.fixture(scope="session")
def small_problem():
    """p=4 linear-Gaussian square-loss problem with the minimizer inside a ball."""
    w_star = np.array([0.5, -0.3, 0.2, 0.4])
    dist = make_linear_gaussian(w_star, 0.5)
    return {
        "dist": dist,
        "loss": SquareLoss(),
        "constraint": Ball(radius=2.0),
        "schedule": StepSchedule(a=0.5, b=1.0, alpha=1.0),
        "w_star": w_star,
    }
