"""Choosing the noise scale ``sigma`` from a classical error indicator.

At every mesh point the randomized solver's marginal law is approximated by a
Gaussian (Monte Carlo mean and variance) and compared with
``N(U^{h,0}_k, E_k**2)`` built from the deterministic solution and the error
indicator ``E_k``.  The unnormalised log density of ``sigma`` is minus the sum
of Bhattacharyya distances between the two, and ``sigma*`` is its maximiser.
Common random numbers make the estimate a smooth, repeatable function of
``sigma`` for a fixed seed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from probode import _io
from probode._rng import substream
from probode.ode import deterministic_interpolant, mesh_size, solve_deterministic, solve_ensemble
from probode.perturbation import PerturbationSpec

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ErrorIndicatorSeries:
    """Error indicator values ``E_k`` (shape ``(K+1, n)``) at mesh times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.times) != len(self.values):
            raise ValueError("indicator times and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("indicator values must be finite")


@dataclass
class CalibrationResult:
    sigma_star: float
    profile: list = field(default_factory=list)
    mc_samples: int = 0
    seed: int = 0

    def profile_arrays(self):
        prof = sorted(self.profile)
        return np.array([s for s, _ in prof]), np.array([lp for _, lp in prof])

    def to_csv(self, path):
        sig, lp = self.profile_arrays()
        return _io.write_csv(path, ["sigma", "log_pi"], [sig, lp])

    def summary(self):
        return {"sigma_star": float(self.sigma_star), "n_mc": int(self.mc_samples), "seed": int(self.seed)}


def error_indicator_step_halving(problem, method, h, times=None):
    """``E(t) = U^{h,0}(t) - U^{2h,0}(t)`` on the mesh of step ``h``.

    Fine-mesh points that fall between coarse mesh points use the coarse
    solver's deterministic continuous interpolant.
    """
    mesh_size(problem.T, h)
    mesh_size(problem.T, 2 * h)
    t_fine, fine = solve_deterministic(problem, method, h)
    t_coarse, coarse = solve_deterministic(problem, method, 2 * h)
    if times is None:
        times = t_fine
        fine_at = fine
    else:
        fine_at = deterministic_interpolant(t_fine, fine, method, problem.f, times)
    coarse_at = deterministic_interpolant(t_coarse, coarse, method, problem.f, times)
    return ErrorIndicatorSeries(np.asarray(times, dtype=float), fine_at - coarse_at)


def bhattacharyya_gaussian(mu1, v1, mu2, v2):
    """Bhattacharyya distance between ``N(mu1, v1)`` and ``N(mu2, v2)``.

    Array inputs are treated as independent components and their distances
    are summed.
    """
    mu1, v1, mu2, v2 = (np.asarray(x, dtype=float) for x in (mu1, v1, mu2, v2))
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise ValueError("variances must be positive")
    vs = v1 + v2
    d = 0.25 * (mu1 - mu2) ** 2 / vs + 0.5 * np.log(vs / (2.0 * np.sqrt(v1 * v2)))
    return float(np.sum(d))


def indicator_variance(reference, indicator, floor_scale=1e-12):
    """``max(E_k**2, eps**2)`` with ``eps = floor_scale (1 + |U_k|)``."""
    eps = floor_scale * (1.0 + np.abs(reference))
    var = np.maximum(indicator**2, eps**2)
    if np.any(var <= 0):
        raise ValueError("indicator vanishes and the variance floor is zero")
    return var


def log_pi_from_moments(mean, var, reference, indicator, floor_scale=1e-12):
    """``-sum_k d(N(mean_k, var_k), N(reference_k, E_k**2))`` over ``k >= 1``."""
    ref_var = indicator_variance(reference[1:], indicator[1:], floor_scale)
    return -bhattacharyya_gaussian(mean[1:], var[1:], reference[1:], ref_var)


def log_pi_sigma(sigma, problem, method, h, spec_template, indicator, N, seed, floor_scale=1e-12):
    """Monte Carlo estimate of ``log pi(sigma)`` up to an additive constant.

    The ``N`` trajectories reuse the standard-normal draws of stream ``seed``
    for every ``sigma`` (common random numbers), so the result is a
    deterministic function of ``(sigma, seed)``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if N < 2:
        raise ValueError("need at least two Monte Carlo trajectories")
    K = mesh_size(problem.T, h)
    if len(indicator.times) != K + 1:
        raise ValueError("indicator does not live on the solver mesh")
    noise = substream(seed, 0).standard_normal((N, K, problem.n))
    return _log_pi_with_noise(sigma, problem, method, h, spec_template, indicator, noise, floor_scale)


def _log_pi_with_noise(sigma, problem, method, h, spec_template, indicator, noise, floor_scale, reference=None):
    if reference is None:
        _, reference = solve_deterministic(problem, method, h)
    spec = PerturbationSpec(spec_template.p, sigma, problem.n)
    with np.errstate(over="ignore", invalid="ignore"):
        ens = solve_ensemble(problem, method, spec, h, noise.shape[0], noise=noise)
        mean = ens.states.mean(axis=0)
        var = ens.states.var(axis=0, ddof=1)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        # trajectories blew up: the spread cannot match any finite indicator
        return -np.inf
    return log_pi_from_moments(mean, var, reference, indicator.values, floor_scale)


def maximize_log_pi(log_pi, sigma_grid, refine_rounds=3):
    """Grid scan of ``log_pi`` followed by golden-section refinement in ``log sigma``.

    Returns ``(sigma_star, profile)`` where ``profile`` lists every evaluated
    ``(sigma, log_pi)`` pair and ``sigma_star`` is the best of them.
    """
    grid = np.asarray(sigma_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("sigma grid must be non-empty, positive and increasing")
    profile = [(float(s), float(log_pi(s))) for s in grid]
    values = np.array([lp for _, lp in profile])
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    if hi > lo and refine_rounds > 0:
        a, b = np.log(lo), np.log(hi)
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc = log_pi(np.exp(c))
        fd = log_pi(np.exp(d))
        profile += [(float(np.exp(c)), float(fc)), (float(np.exp(d)), float(fd))]
        for _ in range(refine_rounds):
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = log_pi(np.exp(c))
                profile.append((float(np.exp(c)), float(fc)))
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = log_pi(np.exp(d))
                profile.append((float(np.exp(d)), float(fd)))
    best = max(profile, key=lambda item: item[1])
    return best[0], profile


def calibrate(problem, method, h, p, indicator, N, seed, sigma_grid, refine_rounds=3, floor_scale=1e-12):
    """MAP noise scale ``sigma*`` for a single ODE problem."""
    K = mesh_size(problem.T, h)
    noise = substream(seed, 0).standard_normal((N, K, problem.n))
    _, reference = solve_deterministic(problem, method, h)
    template = PerturbationSpec(p, 1.0, problem.n)

    def log_pi(sigma):
        return _log_pi_with_noise(
            sigma, problem, method, h, template, indicator, noise, floor_scale, reference=reference
        )

    sigma_star, profile = maximize_log_pi(log_pi, sigma_grid, refine_rounds)
    return CalibrationResult(sigma_star, profile, N, seed)


def calibrate_marginal(problems, method, h, p, N, seed, sigma_grid, refine_rounds=3, floor_scale=1e-12):
    """``sigma*`` with the ODE inputs marginalised over prior draws.

    ``problems`` is a sequence of problems (one per prior draw); the step-halving
    indicator is recomputed for each and
    ``log pi(sigma) = log mean_i exp(log pi_i(sigma))``.
    """
    problems = list(problems)
    setups = []
    for i, pr in enumerate(problems):
        K = mesh_size(pr.T, h)
        noise = substream(seed, 1, i).standard_normal((N, K, pr.n))
        _, reference = solve_deterministic(pr, method, h)
        setups.append((pr, noise, reference, error_indicator_step_halving(pr, method, h)))
    template = PerturbationSpec(p, 1.0, problems[0].n)

    def log_pi(sigma):
        vals = [
            _log_pi_with_noise(sigma, pr, method, h, template, ind, noise, floor_scale, reference=ref)
            for pr, noise, ref, ind in setups
        ]
        return float(logsumexp(vals) - np.log(len(vals)))

    sigma_star, profile = maximize_log_pi(log_pi, sigma_grid, refine_rounds)
    return CalibrationResult(sigma_star, profile, N, seed)
