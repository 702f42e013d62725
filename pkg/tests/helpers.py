"""Monte Carlo tolerance helpers shared by the tests."""

import numpy as np
from scipy import optimize

from probode import problems
from probode.calibration import error_indicator_step_halving
from probode.convergence import linear_moments
from probode.ode import EULER, solve_deterministic
from probode.perturbation import PerturbationSpec


def var_with_se(x):
    """Sample variance of a 1-D sample and the standard error of that estimate."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    v = x.var(ddof=1)
    centred = (x - x.mean()) ** 2
    return v, centred.std(ddof=1) / np.sqrt(n)


def mean_with_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / np.sqrt(len(x))


def within(estimate, target, se, k=3.0):
    return abs(estimate - target) <= k * se


def implied_scale(lam, u0, T, h):
    """Closed-form maximiser of log pi for randomized Euler on du/dt = lam u.

    Randomized Euler has mean equal to the deterministic solution and variance
    sigma^2 v_k; only the variance-mismatch term of the distance remains.
    """
    pr = problems.linear(lam, u0, T)
    ind = error_indicator_step_halving(pr, EULER, h).values[1:, 0]
    _, v = linear_moments(EULER, lam, u0, T, h, PerturbationSpec(1, 1.0))
    v = v[1:]
    _, det = solve_deterministic(pr, EULER, h)
    e2 = np.maximum(ind**2, (1e-12 * (1 + np.abs(det[1:, 0]))) ** 2)

    def neg(log_s):
        s2 = np.exp(2 * log_s)
        return np.sum(0.5 * np.log((s2 * v + e2) / (2 * np.sqrt(s2 * v * e2))))

    return float(np.exp(optimize.minimize_scalar(neg, bounds=(-10, 10), method="bounded").x))
