"""Gaussian step perturbations for randomized one-step integrators.

Each integration step ``k`` owns a zero-mean Gaussian process ``xi_k`` on
``[0, h]`` with ``xi_k(0) = 0`` and end-of-step covariance
``sigma**2 * h**(2p+1) * I``.  The default process is a scaled Brownian motion,
``xi_k(t) = sigma * h**p * B_k(t)``.  The integrated Ornstein-Uhlenbeck
fluctuation used by :func:`probode.ode.integrated_ou` is provided as a second
kernel with the same end-of-step variance.

Off-grid values of a step are sampled from the conditional law given
everything already drawn for that step, so a step may be refined after the
fact without changing the joint distribution.
"""

from dataclasses import dataclass, field

import numpy as np


class NoiseStateError(RuntimeError):
    """Raised when a step's noise record is used out of order."""


@dataclass(frozen=True)
class PerturbationSpec:
    """Order ``p``, scale ``sigma`` and state dimension of the step noise.

    ``sigma`` has units of state per time**(p + 1/2); the end-of-step
    covariance is ``sigma**2 * h**(2p+1) * I``.
    """

    p: int
    sigma: float
    dim: int = 1

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"perturbation order p must be an integer >= 1, got {self.p}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be an integer >= 1, got {self.dim}")

    @property
    def is_zero(self):
        return self.sigma == 0

    def end_variance(self, h):
        """Per-component variance of ``xi_k(h)``."""
        return self.sigma**2 * h ** (2 * self.p + 1)

    def with_sigma(self, sigma):
        return PerturbationSpec(self.p, sigma, self.dim)


@dataclass
class StepNoiseState:
    """Record of the noise values already drawn for a single step."""

    h: float
    xi_h: np.ndarray | None = None
    drawn_interior: list = field(default_factory=list)

    def known(self):
        """Times and values (``(m,)``, ``(m, n)``) recorded so far."""
        times = [s for s, _ in self.drawn_interior]
        values = [v for _, v in self.drawn_interior]
        if self.xi_h is not None:
            times.append(self.h)
            values.append(self.xi_h)
        return np.asarray(times, dtype=float), values


# --------------------------------------------------------------------------
# covariance kernels (diagonal across state components)


class BrownianKernel:
    """``cov(xi(s), xi(t)) = sigma**2 h**(2p) min(s, t)`` in every component."""

    def __init__(self, spec, h):
        self.scale = spec.sigma**2 * h ** (2 * spec.p)
        self.dim = spec.dim

    def cov(self, s, t):
        return np.full(self.dim, self.scale * min(s, t))


def _one_minus_exp_gap(x):
    """``x - (1 - exp(-x))``, accurate for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.1
    xs = x[small]
    term = np.ones_like(xs)
    acc = np.zeros_like(xs)
    for k in range(2, 16):
        term = term * xs / k if k > 2 else xs**2 / 2
        acc += (-1) ** k * term
    out[small] = acc
    xl = x[~small]
    out[~small] = xl + np.expm1(-xl)
    return out


def _integrated_sq_gap(x):
    """``x - 2(1 - exp(-x)) + (1 - exp(-2x))/2``, accurate for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.1
    xs = x[small]
    acc = np.zeros_like(xs)
    fact = 1.0
    for k in range(1, 18):
        fact *= k
        if k >= 3:
            acc += (-1) ** (k + 1) * (2.0 ** (k - 1) - 2.0) * xs**k / fact
    out[small] = acc
    xl = x[~small]
    out[~small] = xl + 2.0 * np.expm1(-xl) - 0.5 * np.expm1(-2.0 * xl)
    return out


def integrated_ou_variance(lam, t, strength):
    """Variance of ``int_0^t chi(tau) dtau`` for the OU fluctuation ``chi``.

    ``chi`` solves ``d chi = -lam chi dt + sqrt(2 * strength) dW`` with
    ``chi(0) = 0``.  Closed form:
    ``(2 strength / lam**2) (t - 2(1 - e^{-lam t})/lam + (1 - e^{-2 lam t})/(2 lam))``.
    """
    lam = np.asarray(lam, dtype=float)
    return 2.0 * strength / lam**3 * _integrated_sq_gap(lam * t)


class IntegratedOUKernel:
    """Covariance of the integrated OU fluctuation, rescaled so that the
    end-of-step variance equals ``sigma**2 h**(2p+1)`` exactly.

    ``lam`` is the (positive) OU rate per component.
    """

    def __init__(self, spec, h, lam):
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (spec.dim,)).copy()
        if np.any(lam <= 0):
            raise ValueError("integrated-OU rate must be positive")
        self.lam = lam
        self.h = h
        self.end_var = spec.end_variance(h)
        self._norm = _integrated_sq_gap(lam * h) / lam

    def strength(self):
        """Diffusion strength ``Sigma`` per component implied by the rescaling."""
        return self.end_var * self.lam**3 / (2.0 * _integrated_sq_gap(self.lam * self.h))

    def cov(self, s, t):
        s, t = min(s, t), max(s, t)
        lam = self.lam
        gap = t - s
        decay = np.exp(-lam * gap)
        # int_0^s (1 - e^{-lam w})(1 - e^{-lam (w + gap)}) dw
        g = (-np.expm1(-lam * gap)) * _one_minus_exp_gap(lam * s) / lam + decay * _integrated_sq_gap(
            lam * s
        ) / lam
        return self.end_var * g / self._norm


def default_kernel(spec, h):
    return BrownianKernel(spec, h)


def conditional_weights(kernel, known_times, s):
    """Gaussian conditioning of ``xi(s)`` on ``xi(known_times)``.

    Returns ``(weights, var)`` with shapes ``(n, m)`` and ``(n,)`` such that
    ``E[xi_i(s) | values] = sum_j weights[i, j] * values[j, i]``.
    """
    m = len(known_times)
    var_s = kernel.cov(s, s)
    if m == 0:
        return np.zeros((var_s.shape[0], 0)), var_s
    # (m, m, n) -> (n, m, m)
    K = np.transpose(np.array([[kernel.cov(a, b) for b in known_times] for a in known_times]), (2, 0, 1))
    k_s = np.array([kernel.cov(s, b) for b in known_times]).T  # (n, m)
    weights = np.linalg.solve(K, k_s[..., None])[..., 0]
    var = var_s - np.einsum("nm,nm->n", weights, k_s)
    return weights, np.maximum(var, 0.0)


# --------------------------------------------------------------------------
# sampling


def _check_step(h):
    if not h > 0:
        raise ValueError(f"step length must be positive, got {h}")


def draw_end_increment(spec, h, rng, size=None):
    """Draw ``xi_k(h) ~ N(0, sigma**2 h**(2p+1) I)``.

    ``size`` adds leading batch dimensions; the result has shape
    ``(*size, spec.dim)``.
    """
    _check_step(h)
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (spec.dim,)
    if spec.is_zero:
        return np.zeros(shape)
    return np.sqrt(spec.end_variance(h)) * rng.standard_normal(shape)


def draw_interior_increment(state, spec, s, rng, kernel=None):
    """Draw ``xi_k(s)`` for ``0 < s < h`` conditionally on ``state``.

    The draw is appended to ``state.drawn_interior``.  Interior times must be
    requested in increasing order.
    """
    h = state.h
    if not 0 < s < h:
        raise ValueError(f"interior time must lie in (0, {h}), got {s}")
    if state.drawn_interior and s <= state.drawn_interior[-1][0]:
        raise ValueError(
            f"interior times must increase within a step: {s} <= {state.drawn_interior[-1][0]}"
        )
    if spec.is_zero:
        value = np.zeros(spec.dim)
    else:
        kernel = kernel or default_kernel(spec, h)
        times, values = state.known()
        weights, var = conditional_weights(kernel, times, s)
        mean = np.einsum("nm,mn->n", weights, np.asarray(values).reshape(len(times), spec.dim))
        value = mean + np.sqrt(var) * rng.standard_normal(spec.dim)
    state.drawn_interior.append((s, value))
    return value


def complete_end_increment(state, spec, rng, kernel=None):
    """Draw ``xi_k(h)`` conditionally on the interior values already drawn."""
    if state.xi_h is not None:
        raise NoiseStateError("end-of-step increment already drawn for this step")
    if spec.is_zero:
        value = np.zeros(spec.dim)
    else:
        kernel = kernel or default_kernel(spec, state.h)
        times, values = state.known()
        weights, var = conditional_weights(kernel, times, state.h)
        mean = np.einsum("nm,mn->n", weights, np.asarray(values).reshape(len(times), spec.dim))
        value = mean + np.sqrt(var) * rng.standard_normal(spec.dim)
    state.xi_h = value
    return value
