"""Vector fields used by the experiments.

Every field broadcasts over leading axes of ``u``.  Parameter values are
always passed in; the experiment presets own the concrete numbers.
"""

import numpy as np

from probode.ode import ODEProblem


def linear_field(lam):
    def f(u):
        return lam * u

    return f


def linear(lam, u0, T):
    """``du/dt = lam u``."""
    return ODEProblem(linear_field(lam), np.atleast_1d(np.asarray(u0, dtype=float)), T)


def zero(u0, T):
    """``du/dt = 0``; every one-step method is exact."""
    return ODEProblem(lambda u: np.zeros_like(u), np.atleast_1d(np.asarray(u0, dtype=float)), T)


def fitzhugh_nagumo_field(a, b, c):
    """FitzHugh-Nagumo oscillator with state ``(V, R)``.

    ``dV/dt = c (V - V**3/3 + R)``, ``dR/dt = -(V - a + b R) / c``.
    """

    def f(u):
        V = u[..., 0]
        R = u[..., 1]
        out = np.empty_like(u)
        out[..., 0] = c * (V - V**3 / 3.0 + R)
        out[..., 1] = -(V - a + b * R) / c
        return out

    return f


def fitzhugh_nagumo(a, b, c, V0, R0, T):
    return ODEProblem(fitzhugh_nagumo_field(a, b, c), np.array([V0, R0], dtype=float), T)
