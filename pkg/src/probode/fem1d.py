"""Piecewise-linear Galerkin solver for ``(kappa u')' = 4x`` on ``[0, 1]``.

Dirichlet data ``u(0) = 0``, ``u(1) = 2``.  The weak form is
``a(u, v) = int kappa u' v'`` and ``r(v) = -int 4x v``; the boundary value
enters through the boundary hat function of the right end node.

``log kappa`` is piecewise constant on ten equal intervals, so meshes must
have a multiple of ten elements.

The randomized method perturbs every interior hat function by independent
Brownian-bridge fields on each of its two support elements (truncated
Karhunen-Loeve series), which vanish at every node.  Systematic and random
parts are orthogonal in the energy inner product element by element, so the
sparsity pattern of the stiffness matrix is unchanged.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg, sparse
from scipy.sparse.linalg import spsolve
from scipy.special import logsumexp

from probode import _io
from probode._rng import substream
from probode.calibration import bhattacharyya_gaussian, maximize_log_pi, CalibrationResult
from probode.convergence import order_fit

N_INTERVALS = 10
U_LEFT = 0.0
U_RIGHT = 2.0


class FemSolveError(RuntimeError):
    pass


def quadrature_order(n_kl):
    """Gauss-Legendre points per element for bridge integrands with ``n_kl`` modes.

    The integrands contain frequencies up to ``2 n_kl pi``; this order keeps the
    element integrals accurate to about 1e-13 relative for ``n_kl <= 40``.
    """
    return max(16, 2 * n_kl + 12)


def gauss_on_unit(n):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of ``n_elements`` elements on ``[0, 1]``."""

    n_elements: int

    def __post_init__(self):
        if self.n_elements < N_INTERVALS or self.n_elements % N_INTERVALS:
            raise ValueError(
                f"element count must be a positive multiple of {N_INTERVALS}, got {self.n_elements}"
            )

    @classmethod
    def from_interior(cls, J):
        """Mesh with ``J`` interior nodes, ``h = 1 / (J + 1)``."""
        return cls(J + 1)

    @property
    def h(self):
        return 1.0 / self.n_elements

    @property
    def J(self):
        """Number of interior nodes (unknowns)."""
        return self.n_elements - 1

    @property
    def nodes(self):
        return np.arange(self.n_elements + 1) * self.h


@dataclass(frozen=True)
class CoefficientField:
    """``log kappa`` on ten equal intervals; the first value is pinned to 0."""

    log_kappa: tuple

    def __post_init__(self):
        lk = np.asarray(self.log_kappa, dtype=float)
        if lk.shape != (N_INTERVALS,):
            raise ValueError(f"need {N_INTERVALS} log-coefficients, got {lk.shape}")
        if lk[0] != 0.0:
            raise ValueError("the first log-coefficient is fixed to 0")
        if not np.all(np.isfinite(lk)):
            raise ValueError("log-coefficients must be finite")
        object.__setattr__(self, "log_kappa", tuple(lk.tolist()))

    @classmethod
    def from_free(cls, theta):
        """Build from the nine free log-coefficients."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N_INTERVALS - 1,):
            raise ValueError(f"need {N_INTERVALS - 1} free parameters, got {theta.shape}")
        return cls(tuple([0.0] + theta.tolist()))

    @classmethod
    def constant(cls, value=1.0):
        if value != 1.0:
            raise ValueError("the first interval is pinned to kappa = 1")
        return cls(tuple([0.0] * N_INTERVALS))

    @property
    def kappa(self):
        return np.exp(np.asarray(self.log_kappa))

    def on_elements(self, mesh):
        per = mesh.n_elements // N_INTERVALS
        return np.repeat(self.kappa, per)

    def __call__(self, x):
        idx = np.minimum((np.asarray(x) * N_INTERVALS).astype(int), N_INTERVALS - 1)
        return self.kappa[idx]


@dataclass(frozen=True)
class RandomBasisSpec:
    """Order ``p``, scale ``sigma_fem`` and KL truncation ``n_kl`` of the bridges."""

    p: int
    sigma_fem: float
    n_kl: int = 20

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.sigma_fem < 0:
            raise ValueError("sigma_fem must be >= 0")
        if self.n_kl < 1:
            raise ValueError("n_kl must be >= 1")

    def amplitude(self, h):
        return self.sigma_fem * h ** (self.p + 1) / np.sqrt(self.n_kl)

    def quadrature_order(self):
        return quadrature_order(self.n_kl)


@dataclass
class RandomBasis:
    """Bridge coefficients for every node.

    ``eta[i, 0]`` and ``eta[i, 1]`` hold the standard-normal KL coefficients of
    node ``i``'s bridge on its left and right element.  Boundary nodes carry
    zeros.  On an element of width ``h`` with local coordinate ``t``, a bridge
    is ``amplitude * sum_n sqrt(2)/(n pi) sin(n pi t) eta_n``.
    """

    mesh: Mesh1D
    amplitude: float
    eta: np.ndarray

    @property
    def n_kl(self):
        return self.eta.shape[-1]

    def element_bridges(self):
        """Coefficients ``(n_el, 2, n_kl)`` of the left- and right-node bridges per element."""
        return np.stack([self.eta[:-1, 1], self.eta[1:, 0]], axis=1)


def draw_random_basis(mesh, spec, rng):
    """Independent bridge fields for each interior basis function and support element."""
    eta = np.zeros((mesh.n_elements + 1, 2, spec.n_kl))
    if spec.sigma_fem > 0:
        eta[1:-1] = rng.standard_normal((mesh.J, 2, spec.n_kl))
    return RandomBasis(mesh, spec.amplitude(mesh.h), eta)


def _mode_tables(n_kl, t):
    n = np.arange(1, n_kl + 1)
    arg = np.pi * np.outer(t, n)
    values = np.sqrt(2.0) / (np.pi * n) * np.sin(arg)
    slopes = np.sqrt(2.0) * np.cos(arg)  # d/dt of the values
    return values, slopes


def _element_fields(basis, t):
    """Values and x-derivatives of the two nodal basis functions on every element.

    Returns ``(phi, dphi)`` each with shape ``(n_el, 2, len(t))``; index 1 is
    0 for the left node and 1 for the right node.
    """
    mesh = basis.mesh
    h = mesh.h
    vals, slopes = _mode_tables(basis.n_kl, t)
    coef = basis.element_bridges()
    bridge = basis.amplitude * np.einsum("ekn,qn->ekq", coef, vals)
    dbridge = basis.amplitude / h * np.einsum("ekn,qn->ekq", coef, slopes)
    phi = np.empty((mesh.n_elements, 2, len(t)))
    dphi = np.empty_like(phi)
    phi[:, 0] = (1.0 - t) + bridge[:, 0]
    phi[:, 1] = t + bridge[:, 1]
    dphi[:, 0] = -1.0 / h + dbridge[:, 0]
    dphi[:, 1] = 1.0 / h + dbridge[:, 1]
    return phi, dphi


@dataclass
class Fem1DSystem:
    """Symmetric tridiagonal system ``A U = r`` for the interior nodal values.

    ``diag`` has length ``J`` and ``off`` length ``J - 1``.
    """

    mesh: Mesh1D
    kappa: CoefficientField | None
    diag: np.ndarray
    off: np.ndarray
    rhs: np.ndarray
    basis: RandomBasis | None = None
    seed: object = None

    def matrix(self):
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def to_json(self, path):
        return _io.write_json(
            path,
            {
                "n_elements": self.mesh.n_elements,
                "diag": self.diag.tolist(),
                "off": self.off.tolist(),
                "rhs": self.rhs.tolist(),
                "randomized": self.basis is not None,
            },
        )


def _check_aligned(mesh):
    if mesh.n_elements % N_INTERVALS:
        raise ValueError("mesh is not aligned with the coefficient breakpoints")


def assemble_deterministic(mesh, kappa, source=4.0):
    """Hat-function Galerkin system with exact element integrals.

    ``source`` is the coefficient ``c`` of the right-hand side ``c x``.
    """
    _check_aligned(mesh)
    h = mesh.h
    ke = kappa.on_elements(mesh)
    diag = (ke[:-1] + ke[1:]) / h
    off = -ke[1:-1] / h
    # -int 4x phi_i dx, two-point Gauss per element (exact for linear * linear)
    t, w = gauss_on_unit(2)
    x = mesh.nodes[:-1, None] + h * t[None, :]
    left = -h * np.sum(w * source * x * (1.0 - t), axis=1)  # contribution to the element's left node
    right = -h * np.sum(w * source * x * t, axis=1)
    rhs = left[1:] + right[:-1]
    # boundary value at x = 1 through the boundary hat: a(2 phi_end, phi_J) = -2 kappa_last / h
    rhs[-1] += U_RIGHT * ke[-1] / h
    return Fem1DSystem(mesh, kappa, diag, off, rhs)


def assemble_randomized(mesh, kappa, spec, rng, basis=None):
    """Galerkin system for randomly perturbed basis functions.

    Element integrals use Gauss-Legendre quadrature with
    :func:`quadrature_order` points.  ``basis`` may be passed to reuse a draw.
    """
    _check_aligned(mesh)
    if spec.sigma_fem == 0 and basis is None:
        return assemble_deterministic(mesh, kappa)
    if basis is None:
        basis = draw_random_basis(mesh, spec, rng)
    h = mesh.h
    ke = kappa.on_elements(mesh)
    t, w = gauss_on_unit(spec.quadrature_order())
    phi, dphi = _element_fields(basis, t)
    # local stiffness entries, one per unordered pair
    s_ll = ke * h * np.sum(w * dphi[:, 0] ** 2, axis=1)
    s_lr = ke * h * np.sum(w * dphi[:, 0] * dphi[:, 1], axis=1)
    s_rr = ke * h * np.sum(w * dphi[:, 1] ** 2, axis=1)
    x = mesh.nodes[:-1, None] + h * t[None, :]
    load = -h * np.sum(w * 4.0 * x[:, None, :] * phi, axis=2)  # (n_el, 2)
    diag = s_rr[:-1] + s_ll[1:]
    off = s_lr[1:-1].copy()
    rhs = load[1:, 0] + load[:-1, 1]
    # the boundary hat on the last element is unperturbed
    rhs[-1] -= U_RIGHT * s_lr[-1]
    return Fem1DSystem(mesh, kappa, diag, off, rhs, basis=basis)


@dataclass
class FemSolution:
    """Interior nodal values plus the basis needed to evaluate ``U(x)``."""

    mesh: Mesh1D
    values: np.ndarray
    basis: RandomBasis | None = None

    @property
    def nodal(self):
        """Values at all nodes including the two boundary nodes."""
        return np.concatenate([[U_LEFT], self.values, [U_RIGHT]])

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
            raise ValueError("evaluation points must lie in [0, 1]")
        s = x * self.mesh.n_elements
        # snap points within rounding of a node onto it so nodal values are reproduced exactly
        r = np.rint(s)
        s = np.where(np.abs(s - r) < 1e-9, r, s)
        e = np.clip(np.floor(s).astype(int), 0, self.mesh.n_elements - 1)
        return e, s - e

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """``(U(x), U'(x))`` at the points ``x``."""
        e, t = self._locate(np.atleast_1d(x))
        h = self.mesh.h
        u = self.nodal
        val = u[e] * (1.0 - t) + u[e + 1] * t
        der = (u[e + 1] - u[e]) / h
        if self.basis is not None and self.basis.amplitude > 0:
            coef = self.basis.element_bridges()[e]  # (P, 2, n_kl)
            n = np.arange(1, self.basis.n_kl + 1)
            arg = np.pi * t[:, None] * n
            vals = np.sqrt(2.0) / (np.pi * n) * np.sin(arg)
            slopes = np.sqrt(2.0) * np.cos(arg)
            a = self.basis.amplitude
            weights = np.stack([u[e], u[e + 1]], axis=1)  # (P, 2)
            val = val + a * np.einsum("pk,pkn,pn->p", weights, coef, vals)
            der = der + a / h * np.einsum("pk,pkn,pn->p", weights, coef, slopes)
        return val, der


def solve_system(system):
    """Direct banded solve of ``A U = r``."""
    J = len(system.diag)
    ab = np.zeros((2, J))
    ab[0, 1:] = system.off
    ab[1] = system.diag
    try:
        U = linalg.solveh_banded(ab, system.rhs)
    except linalg.LinAlgError:
        try:
            cond = np.linalg.cond(system.matrix())
        except np.linalg.LinAlgError:
            cond = np.inf
        raise FemSolveError(
            f"stiffness matrix is singular or indefinite (condition number {cond:.3g}); seed={system.seed}"
        ) from None
    return FemSolution(system.mesh, U, system.basis)


def solve_deterministic(mesh, kappa):
    return solve_system(assemble_deterministic(mesh, kappa))


# --------------------------------------------------------------------------
# quadratic elements (reference solutions and error indicator)


@dataclass
class QuadraticSolution:
    mesh: Mesh1D
    nodal: np.ndarray  # 2 n_el + 1 values at element ends and midpoints

    def evaluate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = self.mesh.h
        e = np.clip(np.floor(x / h).astype(int), 0, self.mesh.n_elements - 1)
        t = x / h - e
        u0, u1, u2 = self.nodal[2 * e], self.nodal[2 * e + 1], self.nodal[2 * e + 2]
        val = u0 * (1 - t) * (1 - 2 * t) + u1 * 4 * t * (1 - t) + u2 * t * (2 * t - 1)
        der = (u0 * (4 * t - 3) + u1 * (4 - 8 * t) + u2 * (4 * t - 1)) / h
        return val, der

    def __call__(self, x):
        return self.evaluate(x)[0]


def solve_quadratic(mesh, kappa):
    """Continuous piecewise-quadratic Galerkin solution on ``mesh``."""
    _check_aligned(mesh)
    n_el = mesh.n_elements
    h = mesh.h
    ke = kappa.on_elements(mesh)
    local = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / (3.0 * h)
    t, w = gauss_on_unit(3)
    shapes = np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)])  # (3, q)
    n = 2 * n_el + 1
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for e in range(n_el):
        idx = [2 * e, 2 * e + 1, 2 * e + 2]
        x = mesh.nodes[e] + h * t
        for a in range(3):
            rhs[idx[a]] += -h * np.sum(w * 4.0 * x * shapes[a])
            for b in range(3):
                rows.append(idx[a])
                cols.append(idx[b])
                vals.append(ke[e] * local[a, b])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    bc = np.zeros(n)
    bc[0], bc[-1] = U_LEFT, U_RIGHT
    rhs = rhs - A @ bc
    inner = slice(1, n - 1)
    u = bc.copy()
    u[inner] = spsolve(A[inner, inner].tocsc(), rhs[inner])
    return QuadraticSolution(mesh, u)


def exact_solution(kappa):
    """Closed-form solution for piecewise-constant ``kappa``.

    ``kappa u' = 2x**2 + C`` with ``C`` fixed by ``u(1) - u(0) = 2``; ``u`` is
    piecewise cubic.  Returns a callable ``x -> (u, u')``.
    """
    k = kappa.kappa
    edges = np.linspace(0.0, 1.0, N_INTERVALS + 1)
    # integrals over each interval of 2x^2 / k and 1 / k
    i_x2 = 2.0 * (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0 / k
    i_1 = (edges[1:] - edges[:-1]) / k
    C = (U_RIGHT - U_LEFT - i_x2.sum()) / i_1.sum()
    start = U_LEFT + np.concatenate([[0.0], np.cumsum(i_x2 + C * i_1)[:-1]])

    def u(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = np.minimum((x * N_INTERVALS).astype(int), N_INTERVALS - 1)
        a = edges[j]
        val = start[j] + (2.0 * (x**3 - a**3) / 3.0 + C * (x - a)) / k[j]
        der = (2.0 * x**2 + C) / k[j]
        return val, der

    return u


# --------------------------------------------------------------------------
# error norms and rates


def error_norms(solution, reference, kappa, n_sub, n_gauss=None):
    """Energy-norm and L2-norm errors of ``solution`` against ``reference``.

    Each element of the solution mesh is split into ``n_sub`` sub-intervals
    (chosen to align with the reference mesh) integrated by Gauss-Legendre.
    """
    mesh = solution.mesh
    basis = getattr(solution, "basis", None)
    n_kl = basis.n_kl if basis is not None else 1
    if n_gauss is None:
        n_gauss = max(4, int(np.ceil(2 * n_kl / n_sub)) + 4)
    t, w = gauss_on_unit(n_gauss)
    width = mesh.h / n_sub
    left = np.arange(mesh.n_elements * n_sub) * width
    x = (left[:, None] + width * t[None, :]).ravel()
    weights = np.tile(w * width, len(left))
    u_val, u_der = solution.evaluate(x)
    r_val, r_der = reference.evaluate(x) if hasattr(reference, "evaluate") else reference(x)
    energy = np.sqrt(np.sum(weights * kappa(x) * (r_der - u_der) ** 2))
    l2 = np.sqrt(np.sum(weights * (r_val - u_val) ** 2))
    return energy, l2


def random_energy_sum(basis, kappa):
    """``sum_j ||phi_j^r||_a**2`` for one draw, by quadrature."""
    mesh = basis.mesh
    h = mesh.h
    t, w = gauss_on_unit(quadrature_order(basis.n_kl))
    _, slopes = _mode_tables(basis.n_kl, t)
    coef = basis.element_bridges()
    dbridge = basis.amplitude / h * np.einsum("ekn,qn->ekq", coef, slopes)
    ke = kappa.on_elements(mesh)
    return float(np.sum(ke[:, None] * h * np.sum(w * dbridge**2, axis=2)))


def estimate_fem_rates(kappa, spec, element_counts, M, seed, n_ref=None):
    """Energy and L2 convergence fits against a fine quadratic-element reference.

    The energy statistic is ``sqrt(E ||u - U||_a**2)`` and the L2 statistic is
    ``E ||u - U||_{L2}`` over ``M`` random draws per mesh.
    """
    element_counts = [int(n) for n in element_counts]
    if n_ref is None:
        n_ref = 16 * max(element_counts)
    if any(n_ref % n for n in element_counts):
        raise ValueError("reference mesh must refine every mesh on the ladder")
    reference = solve_quadratic(Mesh1D(n_ref), kappa)
    hs, energy, l2 = [], [], []
    for i, n_el in enumerate(element_counts):
        mesh = Mesh1D(n_el)
        n_sub = n_ref // n_el
        draws = M if spec.sigma_fem > 0 else 1
        rng = substream(seed, i)
        e_sq, l2s = [], []
        for _ in range(draws):
            sol = solve_system(assemble_randomized(mesh, kappa, spec, rng))
            e, l = error_norms(sol, reference, kappa, n_sub)
            e_sq.append(e**2)
            l2s.append(l)
        hs.append(mesh.h)
        energy.append(np.sqrt(np.mean(e_sq)))
        l2.append(np.mean(l2s))
    return order_fit(hs, energy), order_fit(hs, l2)


def write_solution_csv(path, solution, x):
    x = np.asarray(x, dtype=float)
    return _io.write_csv(path, ["x", "u"], [x, solution(x)])


# --------------------------------------------------------------------------
# calibration and inference for the elliptic inverse problem


def element_midpoints(mesh):
    return mesh.nodes[:-1] + 0.5 * mesh.h


def linear_quadratic_indicator(mesh, kappa, x):
    """``U_linear(x) - U_quadratic(x)`` on the same mesh."""
    return solve_deterministic(mesh, kappa)(x) - solve_quadratic(mesh, kappa)(x)


def calibrate_fem(mesh, kappas, p, n_kl, x_eval, N, seed, sigma_grid, refine_rounds=3, floor_scale=1e-12):
    """MAP ``sigma_fem`` matching randomized spread to the linear-vs-quadratic indicator.

    ``kappas`` are prior draws of the coefficient field; the per-draw
    densities are averaged (``log mean exp``).  Bridge coefficients are drawn
    once per (prior draw, replicate) and rescaled with ``sigma`` (common random
    numbers).

    Piecewise-linear Galerkin solutions of this 1D problem are exact at the
    nodes, so ``x_eval`` should include points between nodes (for example
    the element midpoints, see :func:`element_midpoints`).
    """
    x_eval = np.asarray(x_eval, dtype=float)
    setups = []
    for i, kappa in enumerate(kappas):
        rng = substream(seed, i)
        unit = RandomBasisSpec(p, 1.0, n_kl)
        etas = [draw_random_basis(mesh, unit, rng).eta for _ in range(N)]
        det = solve_deterministic(mesh, kappa)(x_eval)
        ind = linear_quadratic_indicator(mesh, kappa, x_eval)
        ref_var = np.maximum(ind**2, (floor_scale * (1 + np.abs(det))) ** 2)
        setups.append((kappa, etas, det, ref_var))

    def log_pi(sigma):
        spec = RandomBasisSpec(p, sigma, n_kl)
        amp = spec.amplitude(mesh.h)
        vals = []
        for kappa, etas, det, ref_var in setups:
            draws = np.array(
                [
                    solve_system(assemble_randomized(mesh, kappa, spec, None, basis=RandomBasis(mesh, amp, eta)))(x_eval)
                    for eta in etas
                ]
            )
            var = np.maximum(draws.var(axis=0, ddof=1), np.finfo(float).tiny)
            vals.append(-bhattacharyya_gaussian(draws.mean(axis=0), var, det, ref_var))
        return float(logsumexp(vals) - np.log(len(vals)))

    sigma_star, profile = maximize_log_pi(log_pi, sigma_grid, refine_rounds)
    return CalibrationResult(sigma_star, profile, N, seed)


def elliptic_loglik(theta, mesh, spec, x_obs, data, noise_var, R, rng):
    """Log-likelihood of nodal observations; pseudo-marginal over ``R`` bases when randomized."""
    kappa = CoefficientField.from_free(theta)
    if spec is None or spec.sigma_fem == 0:
        pred = solve_deterministic(mesh, kappa)(x_obs)
        return float(-0.5 * np.sum((data - pred) ** 2 / noise_var + np.log(2 * np.pi * noise_var)))
    ll = np.empty(R)
    for r in range(R):
        pred = solve_system(assemble_randomized(mesh, kappa, spec, rng))(x_obs)
        ll[r] = -0.5 * np.sum((data - pred) ** 2 / noise_var + np.log(2 * np.pi * noise_var))
    return float(logsumexp(ll) - np.log(R))


def elliptic_posterior_chain(mesh, spec, x_obs, data, noise_var, n_steps, seed, R=10, config=None, theta0=None):
    """Adaptive RWM over the nine free log-coefficients with ``N(0, 1)`` priors."""
    from probode.bayes import ChainOutput, adaptive_rwm

    prop_rng = substream(seed, 0)
    noise_rng = substream(seed, 1)
    theta0 = np.zeros(N_INTERVALS - 1) if theta0 is None else np.asarray(theta0, dtype=float)

    def log_target(z):
        lp = -0.5 * np.sum(z**2)
        try:
            return lp + elliptic_loglik(z, mesh, spec, x_obs, data, noise_var, R, noise_rng)
        except FemSolveError:
            return -np.inf

    randomized = spec is not None and spec.sigma_fem > 0
    zs, lps, acc, burn_in = adaptive_rwm(log_target, theta0, n_steps, prop_rng, config, noisy=randomized)
    return ChainOutput(zs, lps, acc, seed, burn_in)
