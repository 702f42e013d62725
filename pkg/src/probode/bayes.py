"""Bayesian parameter inference with deterministic or randomized solvers.

The randomized posterior replaces the likelihood by its expectation over
solver noise, estimated by averaging ``R`` randomized trajectories
(pseudo-marginal).  Sampling uses an adaptive Gaussian random-walk Metropolis
kernel on an unconstrained parametrisation; adaptation stops after burn-in.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from probode import _io
from probode._rng import substream
from probode.ode import interpolate_ensemble, solve_ensemble
from probode.perturbation import PerturbationSpec

LOG_2PI = np.log(2.0 * np.pi)


# --------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def to_unconstrained(self, theta):
        return theta

    def from_unconstrained(self, z):
        return z

    def logpdf_unconstrained(self, z):
        return -0.5 * ((z - self.mean) / self.sd) ** 2 - np.log(self.sd) - 0.5 * LOG_2PI

    def in_support(self, theta):
        return np.isfinite(theta)

    def sample(self, rng, size=None):
        return rng.normal(self.mean, self.sd, size)


@dataclass(frozen=True)
class LogNormal:
    """``log theta ~ N(log_mean, log_sd**2)``; sampled on the log scale."""

    log_mean: float
    log_sd: float

    def to_unconstrained(self, theta):
        return np.log(theta)

    def from_unconstrained(self, z):
        return np.exp(z)

    def logpdf_unconstrained(self, z):
        return -0.5 * ((z - self.log_mean) / self.log_sd) ** 2 - np.log(self.log_sd) - 0.5 * LOG_2PI

    def in_support(self, theta):
        return theta > 0 and np.isfinite(theta)

    def sample(self, rng, size=None):
        return np.exp(rng.normal(self.log_mean, self.log_sd, size))


def log_prior_unconstrained(priors, z):
    return float(sum(pr.logpdf_unconstrained(zi) for pr, zi in zip(priors, z)))


# --------------------------------------------------------------------------
# likelihoods


@dataclass
class ObservationSet:
    """Noisy observations ``d_j = u(tau_j)[components] + eta_j``.

    ``noise_var`` is the diagonal of ``Gamma`` (scalar or one entry per
    observed component).  ``components=None`` observes the full state.
    """

    times: np.ndarray
    values: np.ndarray
    noise_var: object
    components: tuple | None = None

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if len(self.times) != len(self.values):
            raise ValueError("observation times and values differ in length")
        nv = np.broadcast_to(np.asarray(self.noise_var, dtype=float), (values.shape[1],))
        if np.any(nv <= 0):
            raise ValueError("observation noise variances must be positive")
        self.noise_var = nv.copy()
        order = np.argsort(self.times, kind="stable")
        self.times = self.times[order]
        self.values = self.values[order]

    def select(self, states):
        if self.components is None:
            return states
        return states[..., list(self.components)]


def gaussian_loglik(pred, obs):
    """Log density of ``obs.values`` given predictions ``(..., m, n_obs)``."""
    resid = obs.values - pred
    nv = obs.noise_var
    return -0.5 * np.sum(resid**2 / nv + np.log(nv) + LOG_2PI, axis=(-2, -1))


def log_likelihood(evaluator, obs):
    """Gaussian log-likelihood of ``obs`` for a trajectory evaluator.

    ``evaluator(times)`` returns the model state at each observation time,
    shape ``(m, n)``.
    """
    pred = obs.select(np.asarray(evaluator(obs.times), dtype=float))
    return float(gaussian_loglik(pred, obs))


@dataclass
class PosteriorSpec:
    """Model, prior and solver configuration for ODE parameter inference.

    ``model(theta)`` returns an :class:`~probode.ode.ODEProblem`.  ``sigma = 0``
    selects the deterministic solver; otherwise ``R`` randomized trajectories
    of order ``p`` are averaged per likelihood evaluation.
    """

    model: object
    method: object
    priors: list
    h: float
    sigma: float = 0.0
    p: int = 1
    R: int = 10

    def __post_init__(self):
        if self.sigma > 0 and self.R < 1:
            raise ValueError("need at least one inner trajectory (R >= 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def randomized(self):
        return self.sigma > 0


def _ensemble_loglik(theta, spec, obs, rng, n_traj):
    problem = spec.model(theta)
    pspec = PerturbationSpec(spec.p, spec.sigma, problem.n)
    ens = solve_ensemble(problem, spec.method, pspec, spec.h, n_traj, rng)
    pred = obs.select(interpolate_ensemble(ens, obs.times, rng))
    return gaussian_loglik(pred, obs)


def deterministic_loglik(theta, spec, obs):
    det = PosteriorSpec(spec.model, spec.method, spec.priors, spec.h, 0.0, spec.p, 1)
    return float(_ensemble_loglik(theta, det, obs, None, 1)[0])


def pseudo_marginal_loglik(theta, spec, obs, rng):
    """``log mean_r exp(loglik_r)`` over ``R`` fresh randomized trajectories.

    With ``sigma = 0`` this is the deterministic log-likelihood.  Returns
    ``-inf`` when every inner likelihood underflows.
    """
    if not spec.randomized:
        return deterministic_loglik(theta, spec, obs)
    with np.errstate(over="ignore", invalid="ignore"):
        ll = _ensemble_loglik(theta, spec, obs, rng, spec.R)
    ll = np.where(np.isnan(ll), -np.inf, ll)
    if np.all(ll == -np.inf):
        return -np.inf
    return float(logsumexp(ll) - np.log(len(ll)))


# --------------------------------------------------------------------------
# adaptive random-walk Metropolis


@dataclass
class AdaptConfig:
    """Proposal tuning for :func:`adaptive_rwm`.

    The proposal starts as ``N(0, initial_scale**2 I)``; from ``adapt_start``
    iterations until the end of burn-in it uses the running covariance of the
    chain times a global factor tuned towards ``target_accept``.
    """

    initial_scale: float = 0.1
    adapt_start: int = 200
    burn_in_fraction: float = 0.1
    target_accept: float = 0.234
    regularization: float = 1e-10
    refresh_current: bool = True


@dataclass
class ChainOutput:
    samples: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    seed: int
    burn_in: int
    param_names: list = field(default_factory=list)

    @property
    def posterior(self):
        """Samples after burn-in."""
        return self.samples[self.burn_in :]

    def to_csv(self, path):
        d = self.samples.shape[1]
        names = self.param_names or [f"theta_{i + 1}" for i in range(d)]
        header = ["iter"] + list(names) + ["log_post"]
        cols = [np.arange(len(self.samples))] + [self.samples[:, i] for i in range(d)] + [self.log_post]
        return _io.write_csv(path, header, cols)


def adaptive_rwm(log_target, z0, n_steps, rng, config=None, noisy=False):
    """Adaptive random-walk Metropolis on an unconstrained vector ``z``.

    ``log_target(z)`` may be a random estimate.  When ``noisy`` and
    ``config.refresh_current`` are set, the current state's estimate is
    recomputed every iteration (the noisy pseudo-marginal variant); otherwise
    it is carried forward, which keeps the chain exact for unbiased
    likelihood estimators.

    Returns ``(zs, log_targets, acceptance_rate, burn_in)``.
    """
    config = config or AdaptConfig()
    z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
    d = z.size
    burn_in = int(np.floor(config.burn_in_fraction * n_steps))
    current = log_target(z)
    if not np.isfinite(current):
        raise ValueError("initial point has zero posterior density")
    chol = config.initial_scale * np.eye(d)
    log_scale = 0.0
    mean = z.copy()
    m2 = np.zeros((d, d))
    zs = np.empty((n_steps, d))
    lps = np.empty(n_steps)
    accepted = 0
    for t in range(n_steps):
        if noisy and config.refresh_current and t > 0:
            refreshed = log_target(z)
            if np.isfinite(refreshed):
                current = refreshed
        prop = z + np.exp(log_scale) * (chol @ rng.standard_normal(d))
        cand = log_target(prop)
        log_alpha = cand - current
        alpha = 1.0 if log_alpha >= 0 else (np.exp(log_alpha) if np.isfinite(log_alpha) else 0.0)
        if rng.uniform() < alpha:
            z, current = prop, cand
            accepted += 1
        zs[t] = z
        lps[t] = current
        if t < burn_in:
            # running mean / covariance (Welford) over the chain so far
            delta = z - mean
            mean = mean + delta / (t + 2)
            m2 = m2 + np.outer(delta, z - mean)
            log_scale += (alpha - config.target_accept) / (t + 1) ** 0.6
            if t + 1 >= config.adapt_start:
                cov = m2 / (t + 1) * (2.38**2 / d) + config.regularization * np.eye(d)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
    return zs, lps, accepted / n_steps, burn_in


def rwm_chain(spec, obs, n_steps, seed, config=None, theta0=None, param_names=None):
    """Sample the (pseudo-marginal) posterior of ``spec`` given ``obs``.

    Proposals and accept decisions use stream ``(seed, 0)`` and solver noise
    stream ``(seed, 1)``, so a ``sigma = 0`` run reproduces the deterministic
    chain exactly.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    priors = spec.priors
    if theta0 is None:
        raise ValueError("an initial parameter value is required")
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if not all(pr.in_support(t) for pr, t in zip(priors, theta0)):
        raise ValueError("initial point has zero prior density")
    prop_rng = substream(seed, 0)
    noise_rng = substream(seed, 1)

    def to_theta(z):
        return np.array([pr.from_unconstrained(zi) for pr, zi in zip(priors, z)])

    def log_target(z):
        theta = to_theta(z)
        with np.errstate(over="ignore", invalid="ignore"):
            ll = pseudo_marginal_loglik(theta, spec, obs, noise_rng)
        if not np.isfinite(ll):
            return -np.inf
        return log_prior_unconstrained(priors, z) + ll

    z0 = np.array([pr.to_unconstrained(t) for pr, t in zip(priors, theta0)])
    zs, lps, acc, burn_in = adaptive_rwm(log_target, z0, n_steps, prop_rng, config, noisy=spec.randomized)
    samples = np.array([to_theta(z) for z in zs])
    return ChainOutput(samples, lps, acc, seed, burn_in, list(param_names or []))


# --------------------------------------------------------------------------
# closed-form linear example


def linear_effective_variance(lam, h, k, gamma2, sigma, p=1):
    """Observation variance of ``U_k`` for randomized Euler on ``du/dt = lam u``.

    ``gamma2 + sigma**2 h**(2p+1) ((1+lam h)**(2k) - 1) / ((1+lam h)**2 - 1)``.
    """
    g2 = (1.0 + lam * h) ** 2
    return gamma2 + sigma**2 * h ** (2 * p + 1) * (g2**k - 1.0) / (g2 - 1.0)


def linear_conjugate_posterior(lam, h, k, gamma2, sigma, p, m0, zeta0_2, d_k):
    """Posterior ``(m, zeta**2)`` of ``u0`` from one observation ``d_k`` of ``U_k``.

    Prior ``u0 ~ N(m0, zeta0_2)``; the solver is Euler, deterministic when
    ``sigma = 0``.
    """
    gh2 = linear_effective_variance(lam, h, k, gamma2, sigma, p)
    g = (1.0 + h * lam) ** k
    precision = g**2 / gh2 + 1.0 / zeta0_2
    zeta2 = 1.0 / precision
    m = zeta2 * (g * d_k / gh2 + m0 / zeta0_2)
    return m, zeta2


def linear_posterior_variance_limit(lam, h, sigma, zeta0_2):
    """Large-``k`` limit of ``zeta**2`` for the randomized solver (``p = 1``)."""
    return 1.0 / (1.0 / zeta0_2 + lam * (2.0 + lam * h) / (sigma**2 * h**2))


def linear_marginal_density(lam, h, k, gamma2, sigma, p, u0, d_k):
    """``N(d_k; (1 + lam h)**k u0, gamma_h**2)`` - the exact expected likelihood."""
    gh2 = linear_effective_variance(lam, h, k, gamma2, sigma, p)
    mean = (1.0 + lam * h) ** k * u0
    return np.exp(-0.5 * (d_k - mean) ** 2 / gh2) / np.sqrt(2 * np.pi * gh2)


# --------------------------------------------------------------------------
# diagnostics


def batch_means_mcse(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    b = len(x) // n_batches
    if b < 1:
        raise ValueError("series too short for the requested number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
