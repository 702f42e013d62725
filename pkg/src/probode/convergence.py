"""Empirical convergence orders for the randomized integrators.

Strong order: root-mean-square of the worst mesh error over many random
trajectories, fitted against ``h`` on a log-log scale.

Weak order: for the scalar linear problem every expectation is available in
closed form, so the randomized Euler scheme can be compared exactly with both
the original ODE and its modified SDE.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from probode import _io
from probode._rng import substream
from probode.ode import RK4, mesh_size, solve_ensemble


@dataclass
class OrderFit:
    """Errors on a ladder of step sizes and their fitted log-log slope."""

    h_values: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    stderr: np.ndarray | None = None

    def to_csv(self, path):
        stderr = self.stderr if self.stderr is not None else np.full(len(self.h_values), np.nan)
        return _io.write_csv(path, ["h", "error", "stderr"], [self.h_values, self.errors, stderr])

    def summary(self):
        return {"slope": float(self.slope), "intercept": float(self.intercept), "r2": float(self.r_squared)}


def fit_loglog(hs, errs):
    """Least-squares line through ``(log h, log err)``: ``(slope, intercept, r2)``."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if hs.shape != errs.shape or hs.size < 2:
        raise ValueError("need at least two (h, error) pairs of equal length")
    if np.any(hs <= 0) or np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("step sizes and errors must be positive and finite")
    res = stats.linregress(np.log(hs), np.log(errs))
    r2 = res.rvalue**2
    if not np.isfinite(r2):
        r2 = 1.0
    return float(res.slope), float(res.intercept), float(r2)


def order_fit(hs, errs, stderr=None):
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if np.all(errs == 0):
        # exact solver: no finite order to report
        return OrderFit(hs, errs, np.inf, np.nan, np.nan, stderr)
    slope, intercept, r2 = fit_loglog(hs, errs)
    return OrderFit(hs, errs, slope, intercept, r2, stderr)


def reference_solution(problem, h, h_min, refine=20):
    """Deterministic RK4 states on the mesh of step ``h``.

    Each coarse step is split into sub-steps no longer than ``h_min / refine``.
    """
    K = mesh_size(problem.T, h)
    m = int(np.ceil(refine * h / h_min - 1e-9))
    dt = h / m
    states = np.empty((K + 1, problem.n))
    states[0] = u = problem.u0
    for k in range(K):
        for _ in range(m):
            u = RK4.flow(problem.f, u, dt)
        states[k + 1] = u
    return states


def strong_errors(problem, method, spec, h, M, rng, reference=None, h_min=None):
    """Per-trajectory ``sup_k |u_k - U_k|**2`` for ``M`` randomized solves."""
    if reference is None:
        reference = reference_solution(problem, h, h if h_min is None else h_min)
    ens = solve_ensemble(problem, method, spec, h, M, rng)
    sq = np.sum((ens.states - reference[None]) ** 2, axis=-1)
    return sq.max(axis=1)


def estimate_strong_order(problem, method, spec, h_values, M, seed, exact=None):
    """Fit the strong order ``min(p, q)`` from randomized solves.

    For every ``h`` the error statistic is ``sqrt(mean_m sup_k |u_k - U_k|**2)``
    over ``M`` trajectories.  The reference is deterministic RK4 at step
    ``min(h_values) / 20`` unless ``exact(times)`` is supplied.
    """
    h_values = np.asarray(h_values, dtype=float)
    if len(h_values) < 2:
        raise ValueError("need at least two step sizes")
    if M < 2:
        raise ValueError("need at least two trajectories per step size")
    h_min = h_values.min()
    errors = np.empty(len(h_values))
    stderr = np.empty(len(h_values))
    for i, h in enumerate(h_values):
        K = mesh_size(problem.T, h)
        if exact is not None:
            reference = np.asarray(exact(h * np.arange(K + 1))).reshape(K + 1, problem.n)
        else:
            reference = reference_solution(problem, h, h_min)
        sq = strong_errors(problem, method, spec, h, M, substream(seed, i), reference=reference)
        mse = sq.mean()
        errors[i] = np.sqrt(mse)
        # delta method for the square root of a sample mean
        se_mse = sq.std(ddof=1) / np.sqrt(M)
        stderr[i] = se_mse / (2 * errors[i]) if errors[i] > 0 else 0.0
    return order_fit(h_values, errors, stderr)


# --------------------------------------------------------------------------
# closed-form Gaussian recursions for f(u) = lam * u


def linear_growth(method, lam, h):
    """Amplification factor of ``Psi_h`` on ``f(u) = lam u``."""
    z = lam * h
    if method.kind == "euler":
        return 1.0 + z
    if method.kind == "rk4":
        return 1.0 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    lam_ou = float(np.asarray(method.lam).ravel()[0])
    return 1.0 + lam * (-np.expm1(-lam_ou * h)) / lam_ou


def linear_moments(method, lam, u0, T, h, spec):
    """Mean and variance of ``U_k``, ``k = 0..K``, for scalar ``f(u) = lam u``.

    ``U_{k+1} = g U_k + xi_k`` with ``g`` the amplification factor, so ``U_k``
    is Gaussian with mean ``g**k u0`` and variance
    ``v sum_{j<k} g**(2j)``, ``v = sigma**2 h**(2p+1)``.
    """
    K = mesh_size(T, h)
    g = linear_growth(method, lam, h)
    k = np.arange(K + 1)
    mean = g**k * u0
    v = spec.end_variance(h)
    var = v * np.concatenate([[0.0], np.cumsum(g ** (2 * np.arange(K)))])
    return mean, var


def linear_mean_square_errors(method, lam, u0, T, h, spec):
    """``E|u(t_k) - U_k|**2`` on the mesh for the scalar linear problem."""
    mean, var = linear_moments(method, lam, u0, T, h, spec)
    t = h * np.arange(len(mean))
    return (np.exp(lam * t) * u0 - mean) ** 2 + var


@dataclass(frozen=True)
class ModifiedSDE:
    """Modified equation of randomized Euler for scalar ``f(u) = lam u``.

    ``du = a_h u dt + sigma h**p dW`` with
    ``a_h = lam - h lam**2 / 2 + h**2 lam**3 / 3``, obtained from
    ``f - (h/2) f' f + (h**2/12)(f'' f**2 + 4 f'**2 f)``.
    """

    lam: float
    h: float
    p: int
    sigma: float

    @property
    def drift(self):
        lam, h = self.lam, self.h
        return lam - h * lam**2 / 2 + h**2 * lam**3 / 3

    @property
    def diffusion(self):
        return self.sigma * self.h**self.p

    def moments(self, u0, T):
        """Exact mean and variance of the SDE solution at time ``T``."""
        a = self.drift
        D = self.diffusion**2
        mean = np.exp(a * T) * u0
        if a == 0:
            var = D * T
        else:
            var = D * np.expm1(2 * a * T) / (2 * a)
        return mean, var


def _apply_phi(phi, mean, var):
    if phi in ("identity", "u"):
        return mean
    if phi in ("square", "u2", "u^2"):
        return mean**2 + var
    raise ValueError(f"unsupported functional {phi!r}; use 'identity' or 'square'")


def weak_error_linear(lam, u0, T, h, spec, phi):
    """Exact ``(E^h phi(U_K), E phi(u~(T)), phi(u(T)))`` for randomized Euler.

    The three entries are the randomized Euler expectation, the modified-SDE
    expectation and the value on the exact ODE solution.
    """
    from probode.ode import EULER

    mean, var = linear_moments(EULER, lam, u0, T, h, spec)
    numerical = _apply_phi(phi, mean[-1], var[-1])
    sde_mean, sde_var = ModifiedSDE(lam, h, spec.p, spec.sigma).moments(u0, T)
    modified = _apply_phi(phi, sde_mean, sde_var)
    original = _apply_phi(phi, np.exp(lam * T) * u0, 0.0)
    return float(numerical), float(modified), float(original)


def weak_order_linear(lam, u0, T, h_values, spec, phi):
    """Order fits of the weak error against the modified SDE and the ODE."""
    rows = np.array([weak_error_linear(lam, u0, T, h, spec, phi) for h in h_values])
    err_sde = np.abs(rows[:, 0] - rows[:, 1])
    err_ode = np.abs(rows[:, 0] - rows[:, 2])
    return order_fit(h_values, err_sde), order_fit(h_values, err_ode), rows
