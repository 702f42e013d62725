"""One-step integrators and their randomized counterparts.

A randomized step takes the deterministic update and adds a draw of the step
noise, ``U_{k+1} = Psi_h(U_k) + xi_k(h)``.  Between mesh points the solution is
``U(t_k + tau) = Psi_tau(U_k) + xi_k(tau)``, with ``xi_k(tau)`` drawn
conditionally on the recorded end-of-step value.

Vector fields are autonomous and must broadcast over leading axes: ``f`` maps
an array of shape ``(..., n)`` to an array of the same shape.
"""

from dataclasses import dataclass, field

import numpy as np

from probode import _io
from probode.perturbation import (
    BrownianKernel,
    IntegratedOUKernel,
    PerturbationSpec,
    StepNoiseState,
    conditional_weights,
    draw_end_increment,
    draw_interior_increment,
)

MESH_TOL = 1e-9


@dataclass(frozen=True)
class ODEProblem:
    """Autonomous initial value problem ``du/dt = f(u)``, ``u(0) = u0`` on ``[0, T]``."""

    f: object
    u0: np.ndarray
    T: float

    def __post_init__(self):
        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float))
        if u0.ndim != 1:
            raise ValueError("u0 must be a vector")
        object.__setattr__(self, "u0", u0)
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")

    @property
    def n(self):
        return self.u0.shape[0]


@dataclass(frozen=True)
class OneStepMethod:
    """Deterministic flow-map approximation ``Psi_h``.

    Use the module constants :data:`EULER`, :data:`RK4` or
    :func:`integrated_ou` rather than constructing this directly.
    """

    kind: str
    lam: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("euler", "rk4", "integrated_ou"):
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind == "integrated_ou":
            if self.lam is None or np.any(np.asarray(self.lam) <= 0):
                raise ValueError("integrated-OU method needs a positive rate")

    @property
    def q(self):
        return 4 if self.kind == "rk4" else 1

    def flow(self, f, u, tau):
        """``Psi_tau(u)``; ``tau`` may be any non-negative step."""
        if self.kind == "euler":
            return u + tau * f(u)
        if self.kind == "rk4":
            k1 = f(u)
            k2 = f(u + 0.5 * tau * k1)
            k3 = f(u + 0.5 * tau * k2)
            k4 = f(u + tau * k3)
            return u + tau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        lam = np.asarray(self.lam, dtype=float)
        return u + (-np.expm1(-lam * tau) / lam) * f(u)

    def noise_kernel(self, spec, h):
        if self.kind == "integrated_ou":
            return IntegratedOUKernel(spec, h, self.lam)
        return BrownianKernel(spec, h)


EULER = OneStepMethod("euler")
RK4 = OneStepMethod("rk4")


def integrated_ou(lam):
    """Integrated Ornstein-Uhlenbeck map with rate ``lam`` (scalar or per component)."""
    lam = tuple(np.atleast_1d(np.asarray(lam, dtype=float)).tolist())
    return OneStepMethod("integrated_ou", lam)


def method_from_name(name, lam=None):
    name = name.lower().replace("-", "_")
    if name == "euler":
        return EULER
    if name == "rk4":
        return RK4
    if name in ("integrated_ou", "iou"):
        return integrated_ou(1.0 if lam is None else lam)
    raise ValueError(f"unknown method {name!r}")


def mesh_size(T, h):
    """Number of steps ``K`` with ``K h = T``; rejects non-divisible meshes."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    ratio = T / h
    K = int(round(ratio))
    if K < 1 or abs(ratio - K) > MESH_TOL * max(1.0, ratio):
        raise ValueError(f"step size {h} does not divide the interval length {T}")
    return K


def deterministic_step(method, f, u, h):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    return method.flow(f, np.asarray(u, dtype=float), h)


def probabilistic_step(method, spec, f, u, h, rng):
    """One randomized step; returns the new state and the step's noise record.

    ``u`` may carry leading batch axes, in which case an independent increment
    is drawn for every batch member.
    """
    u = np.asarray(u, dtype=float)
    psi = deterministic_step(method, f, u, h)
    xi = draw_end_increment(spec, h, rng, size=u.shape[:-1] or None)
    if spec.is_zero:
        return psi, StepNoiseState(h, xi)
    return psi + xi, StepNoiseState(h, xi)


@dataclass
class TrajectorySample:
    """One randomized solve: mesh states plus per-step noise records."""

    problem: ODEProblem
    method: OneStepMethod
    spec: PerturbationSpec
    h: float
    times: np.ndarray
    states: np.ndarray
    noise_states: list = field(default_factory=list)

    def to_csv(self, path):
        write_trajectory_csv(path, self.times, self.states)


def solve(problem, method, spec, h, rng):
    """Iterate :func:`probabilistic_step` over the fixed mesh ``t_k = k h``."""
    K = mesh_size(problem.T, h)
    states = np.empty((K + 1, problem.n))
    states[0] = problem.u0
    noise_states = []
    u = problem.u0
    for k in range(K):
        u, st = probabilistic_step(method, spec, problem.f, u, h, rng)
        states[k + 1] = u
        noise_states.append(st)
    times = h * np.arange(K + 1)
    return TrajectorySample(problem, method, spec, h, times, states, noise_states)


def solve_deterministic(problem, method, h):
    """Deterministic mesh solution ``(times, states)``."""
    K = mesh_size(problem.T, h)
    states = np.empty((K + 1, problem.n))
    states[0] = problem.u0
    u = problem.u0
    for k in range(K):
        u = method.flow(problem.f, u, h)
        states[k + 1] = u
    return h * np.arange(K + 1), states


def _locate(times, h, s, T):
    if not (-MESH_TOL <= s <= T + MESH_TOL * max(1.0, T)):
        raise ValueError(f"query time {s} outside [0, {T}]")
    K = len(times) - 1
    k = int(np.floor(s / h + MESH_TOL))
    k = min(max(k, 0), K)
    tau = s - times[k]
    if abs(tau) <= MESH_TOL * max(1.0, h) or k == K:
        return k, 0.0
    return k, tau


def interpolate(sample, s, rng):
    """Evaluate the randomized solution at time ``s``.

    Mesh points return the stored state.  Inside step ``k`` the value is
    ``Psi_tau(U_k) + xi_k(tau)`` where ``xi_k(tau)`` is drawn conditionally on
    the step's recorded noise; repeated queries inside one step must increase.
    """
    k, tau = _locate(sample.times, sample.h, s, sample.problem.T)
    if tau == 0.0:
        return sample.states[k].copy()
    psi = sample.method.flow(sample.problem.f, sample.states[k], tau)
    if sample.spec.is_zero:
        return psi
    kernel = sample.method.noise_kernel(sample.spec, sample.h)
    xi = draw_interior_increment(sample.noise_states[k], sample.spec, tau, rng, kernel=kernel)
    return psi + xi


def deterministic_interpolant(times, states, method, f, s):
    """Continuous deterministic solution ``Psi_{s - t_k}(U_k)`` at times ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    h = times[1] - times[0]
    out = np.empty((len(s), states.shape[1]))
    for i, si in enumerate(s):
        k, tau = _locate(times, h, si, times[-1])
        out[i] = states[k] if tau == 0.0 else method.flow(f, states[k], tau)
    return out


# --------------------------------------------------------------------------
# ensembles: many trajectories advanced together


@dataclass
class EnsembleSample:
    """``M`` randomized trajectories stored as arrays.

    ``states`` has shape ``(M, K+1, n)`` and ``increments`` ``(M, K, n)``.
    """

    problem: ODEProblem
    method: OneStepMethod
    spec: PerturbationSpec
    h: float
    times: np.ndarray
    states: np.ndarray
    increments: np.ndarray


def solve_ensemble(problem, method, spec, h, n_samples, rng=None, noise=None):
    """Solve ``n_samples`` independent randomized trajectories at once.

    ``noise`` may supply the standard-normal draws ``(n_samples, K, n)``
    directly; reusing one array across calls gives common random numbers.
    """
    K = mesh_size(problem.T, h)
    n = problem.n
    if noise is None and not spec.is_zero:
        noise = rng.standard_normal((n_samples, K, n))
    if spec.is_zero:
        increments = np.zeros((n_samples, K, n))
    else:
        noise = np.asarray(noise)
        if noise.shape != (n_samples, K, n):
            raise ValueError(f"noise must have shape {(n_samples, K, n)}, got {noise.shape}")
        increments = np.sqrt(spec.end_variance(h)) * noise
    states = np.empty((n_samples, K + 1, n))
    u = np.broadcast_to(problem.u0, (n_samples, n)).copy()
    states[:, 0] = u
    for k in range(K):
        u = method.flow(problem.f, u, h)
        if not spec.is_zero:
            u = u + increments[:, k]
        states[:, k + 1] = u
    return EnsembleSample(problem, method, spec, h, h * np.arange(K + 1), states, increments)


def interpolate_ensemble(ens, s_values, rng):
    """Evaluate every ensemble member at the sorted times ``s_values``.

    Returns an array ``(M, len(s_values), n)``.  Several queries inside one
    step are conditioned on each other as well as on the step's end value.
    """
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    if np.any(np.diff(s_values) < 0):
        raise ValueError("query times must be sorted")
    M, _, n = ens.states.shape
    out = np.empty((M, len(s_values), n))
    kernel = None
    drawn = {}
    for i, s in enumerate(s_values):
        k, tau = _locate(ens.times, ens.h, s, ens.problem.T)
        if tau == 0.0:
            out[:, i] = ens.states[:, k]
            continue
        psi = ens.method.flow(ens.problem.f, ens.states[:, k], tau)
        if ens.spec.is_zero:
            out[:, i] = psi
            continue
        if kernel is None:
            kernel = ens.method.noise_kernel(ens.spec, ens.h)
        prev_t, prev_v = drawn.get(k, ([], []))
        times = np.array(prev_t + [ens.h])
        values = np.stack(prev_v + [ens.increments[:, k]], axis=1)  # (M, m, n)
        weights, var = conditional_weights(kernel, times, tau)
        xi = np.einsum("nm,Mmn->Mn", weights, values) + np.sqrt(var) * rng.standard_normal((M, n))
        drawn[k] = (prev_t + [tau], prev_v + [xi])
        out[:, i] = psi + xi
    return out


def write_trajectory_csv(path, times, states):
    """Write ``t,u_1,...,u_n`` with one row per mesh point."""
    states = np.asarray(states)
    header = ["t"] + [f"u_{i + 1}" for i in range(states.shape[1])]
    return _io.write_csv(path, header, [times] + [states[:, i] for i in range(states.shape[1])])
