"""Experiment configurations and their runners.

Every experiment is a pydantic model with unknown keys rejected; the ``kind``
field selects the runner.  Runners write CSV/JSON files into an output
directory and return their relative paths, so the CLI can list them in the
manifest.  All randomness derives from the config's ``seed``.
"""

from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from probode import _io, bayes, calibration, convergence, fem1d, problems
from probode._rng import substream
from probode.ode import (
    RK4,
    deterministic_interpolant,
    mesh_size,
    method_from_name,
    solve_deterministic,
    solve_ensemble,
)
from probode.perturbation import PerturbationSpec


class NumericalFailure(RuntimeError):
    """A run produced non-finite or otherwise unusable numbers."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


PositiveFloat = Annotated[float, Field(gt=0)]
PositiveInt = Annotated[int, Field(gt=0)]


# --------------------------------------------------------------------------
# problem selections


class LinearProblem(_Strict):
    kind: Literal["linear"] = "linear"
    lam: float
    u0: float
    T: PositiveFloat

    def build(self):
        return problems.linear(self.lam, self.u0, self.T)


class FitzHughNagumoProblem(_Strict):
    kind: Literal["fitzhugh_nagumo"] = "fitzhugh_nagumo"
    a: float
    b: float
    c: float = Field(gt=0)
    V0: float
    R0: float
    T: PositiveFloat

    def build(self, theta=None):
        a, b, c = (self.a, self.b, self.c) if theta is None else theta
        return problems.fitzhugh_nagumo(a, b, c, self.V0, self.R0, self.T)


ODEProblemConfig = Annotated[Union[LinearProblem, FitzHughNagumoProblem], Field(discriminator="kind")]


class SigmaGrid(_Strict):
    """Log-spaced scan grid for ``sigma`` followed by golden-section refinement."""

    low: PositiveFloat
    high: PositiveFloat
    n: int = Field(ge=2)
    refine_rounds: int = Field(default=3, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.high <= self.low:
            raise ValueError("high must exceed low")
        return self

    def values(self):
        return np.geomspace(self.low, self.high, self.n)


class MCMCSettings(_Strict):
    n_steps: int = Field(ge=10)
    burn_in_fraction: float = Field(default=0.1, ge=0, lt=1)
    initial_scale: PositiveFloat = 0.1
    target_accept: float = Field(default=0.234, gt=0, lt=1)
    R: PositiveInt = 10
    refresh_current: bool = True

    def adapt(self):
        return bayes.AdaptConfig(
            initial_scale=self.initial_scale,
            burn_in_fraction=self.burn_in_fraction,
            target_accept=self.target_accept,
            refresh_current=self.refresh_current,
        )


def _check_method(name):
    method_from_name(name, lam=1.0)
    return name


def _check_steps(h_values, T, factor=1):
    for h in h_values:
        mesh_size(T, factor * h)


class _Experiment(_Strict):
    seed: int = Field(default=0, ge=0)


# --------------------------------------------------------------------------
# configurations


class ForwardConfig(_Experiment):
    """Randomized ensembles of one ODE at several step sizes."""

    kind: Literal["forward"] = "forward"
    problem: ODEProblemConfig
    method: str = "euler"
    h_values: list[PositiveFloat] = Field(min_length=1)
    p: PositiveInt = 1
    sigma: float = Field(ge=0)
    n_samples: int = Field(ge=1)
    reference_h: PositiveFloat = 0.001

    _m = field_validator("method")(_check_method)

    @model_validator(mode="after")
    def _steps(self):
        _check_steps(self.h_values + [self.reference_h], self.problem.T)
        return self


class CalibrateConfig(_Experiment):
    """MAP noise scale from the step-halving indicator at each step size."""

    kind: Literal["calibrate"] = "calibrate"
    problem: ODEProblemConfig
    method: str = "euler"
    h_values: list[PositiveFloat] = Field(min_length=1)
    p: PositiveInt = 1
    n_mc: int = Field(ge=2)
    grid: SigmaGrid

    _m = field_validator("method")(_check_method)

    @model_validator(mode="after")
    def _steps(self):
        _check_steps(self.h_values, self.problem.T, factor=2)
        return self


class ODEPosteriorConfig(_Experiment):
    """FitzHugh-Nagumo parameter inference with deterministic or randomized solvers.

    ``sigma = "calibrate"`` selects the MAP scale from ``calibration`` per step size.
    """

    kind: Literal["ode-posterior"] = "ode-posterior"
    problem: FitzHughNagumoProblem
    method: str = "euler"
    h_values: list[PositiveFloat] = Field(min_length=1)
    p: PositiveInt = 1
    sigma: Union[Annotated[float, Field(ge=0)], Literal["calibrate"]] = 0.0
    calibration_n_mc: int = Field(default=100, ge=2)
    calibration_grid: SigmaGrid | None = None
    obs_times: list[PositiveFloat] = Field(min_length=1)
    noise_var: PositiveFloat
    prior_log_sd: PositiveFloat = 1.0
    data_seed: int = Field(default=0, ge=0)
    data_h: PositiveFloat = 0.001
    mcmc: MCMCSettings

    _m = field_validator("method")(_check_method)

    @model_validator(mode="after")
    def _grid_needed(self):
        if self.sigma == "calibrate" and self.calibration_grid is None:
            raise ValueError("sigma='calibrate' requires calibration_grid")
        if max(self.obs_times) > self.problem.T + 1e-12:
            raise ValueError("observation times exceed the problem horizon T")
        _check_steps(self.h_values + [self.data_h], self.problem.T, factor=1)
        if self.sigma == "calibrate":
            _check_steps(self.h_values, self.problem.T, factor=2)
        return self


class LinearConjugateConfig(_Experiment):
    """Inference of ``u0`` for ``du/dt = lam u`` from one observation at step ``k``."""

    kind: Literal["linear-conjugate"] = "linear-conjugate"
    lam: PositiveFloat
    h: PositiveFloat
    k_chain: PositiveInt
    k_values: list[PositiveInt] = Field(min_length=1)
    gamma2: PositiveFloat
    sigma: PositiveFloat
    p: PositiveInt = 1
    m0: float = 0.0
    zeta0_2: PositiveFloat = 1.0
    u0_true: float = 1.0
    data_seed: int = Field(default=0, ge=0)
    mcmc: MCMCSettings


class MethodOrder(_Strict):
    method: str
    p: PositiveInt

    _m = field_validator("method")(_check_method)


class StrongOrderConfig(_Experiment):
    kind: Literal["strong-order"] = "strong-order"
    problem: ODEProblemConfig
    methods: list[MethodOrder] = Field(min_length=1)
    h_values: list[PositiveFloat] = Field(min_length=2)
    sigma: float = Field(ge=0)
    M: int = Field(ge=2)

    @model_validator(mode="after")
    def _steps(self):
        _check_steps(self.h_values, self.problem.T)
        return self


class WeakOrderConfig(_Experiment):
    kind: Literal["weak-order-linear"] = "weak-order-linear"
    lam: float
    u0: float
    T: PositiveFloat
    h_values: list[PositiveFloat] = Field(min_length=2)
    p: PositiveInt = 1
    sigma: PositiveFloat
    functionals: list[Literal["identity", "square"]] = Field(min_length=1)

    @model_validator(mode="after")
    def _steps(self):
        _check_steps(self.h_values, self.T)
        return self


def _check_log_kappa(v):
    if v is None:
        return v
    if len(v) != fem1d.N_INTERVALS:
        raise ValueError(f"need {fem1d.N_INTERVALS} log-coefficients")
    if v[0] != 0.0:
        raise ValueError("the first log-coefficient is fixed to 0")
    return v


class FemRatesConfig(_Experiment):
    kind: Literal["fem-rates"] = "fem-rates"
    log_kappa: list[float]
    element_counts: list[PositiveInt] = Field(min_length=2)
    p: PositiveInt = 1
    sigma_fem: float = Field(ge=0)
    n_kl: PositiveInt = 20
    M: PositiveInt
    n_ref: PositiveInt | None = None
    energy_sum_draws: PositiveInt = 1000

    _k = field_validator("log_kappa")(_check_log_kappa)

    @field_validator("element_counts")
    @classmethod
    def _aligned(cls, v):
        for n in v:
            fem1d.Mesh1D(n)
        return v


class EllipticInverseConfig(_Experiment):
    """Nine log-coefficients from noisy point values, per mesh, deterministic and randomized."""

    kind: Literal["elliptic-inverse"] = "elliptic-inverse"
    true_log_kappa: list[float]
    element_counts: list[PositiveInt] = Field(min_length=1)
    x_obs: list[float] = Field(min_length=1)
    noise_var: PositiveFloat
    data_n_elements: PositiveInt = 1280
    data_seed: int = Field(default=0, ge=0)
    p: PositiveInt = 1
    n_kl: PositiveInt = 20
    sigma_fem: Union[Annotated[float, Field(ge=0)], Literal["calibrate"]] = "calibrate"
    calibration_prior_draws: PositiveInt = 20
    calibration_n_mc: int = Field(default=50, ge=2)
    calibration_grid: SigmaGrid | None = None
    mcmc: MCMCSettings

    _k = field_validator("true_log_kappa")(_check_log_kappa)

    @model_validator(mode="after")
    def _checks(self):
        for n in list(self.element_counts) + [self.data_n_elements]:
            fem1d.Mesh1D(n)
        if any(not 0.0 < x < 1.0 for x in self.x_obs):
            raise ValueError("observation points must lie strictly inside (0, 1)")
        if self.sigma_fem == "calibrate" and self.calibration_grid is None:
            raise ValueError("sigma_fem='calibrate' requires calibration_grid")
        return self


ExperimentConfig = Annotated[
    Union[
        ForwardConfig,
        CalibrateConfig,
        ODEPosteriorConfig,
        LinearConjugateConfig,
        StrongOrderConfig,
        WeakOrderConfig,
        FemRatesConfig,
        EllipticInverseConfig,
    ],
    Field(discriminator="kind"),
]


class RunConfig(_Strict):
    """Top-level file format: an experiment plus an optional name."""

    name: str = "run"
    experiment: ExperimentConfig


# --------------------------------------------------------------------------
# runners


def _fmt_h(h):
    return f"{h:g}"


def _require_finite(arr, what, seed):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in {what} (seed={seed})")


def _method(name):
    return method_from_name(name, lam=1.0)


def run_forward(cfg, out):
    problem = cfg.problem.build()
    method = _method(cfg.method)
    files = []
    t_ref, u_ref = solve_deterministic(problem, RK4, cfg.reference_h)
    files.append(_io.write_csv(out / "reference.csv", ["t"] + [f"u_{j + 1}" for j in range(problem.n)],
                               [t_ref] + [u_ref[:, j] for j in range(problem.n)]))
    for i, h in enumerate(cfg.h_values):
        spec = PerturbationSpec(cfg.p, cfg.sigma, problem.n)
        ens = solve_ensemble(problem, method, spec, h, cfg.n_samples, substream(cfg.seed, i))
        _require_finite(ens.states, f"ensemble at h={h}", cfg.seed)
        M, K1, n = ens.states.shape
        draw = np.repeat(np.arange(M), K1)
        t = np.tile(ens.times, M)
        cols = [draw, t] + [ens.states[:, :, j].ravel() for j in range(n)]
        files.append(_io.write_csv(out / f"ensemble_h{_fmt_h(h)}.csv",
                                   ["draw", "t"] + [f"u_{j + 1}" for j in range(n)], cols))
    return files, {}


def _calibrate_one(problem, method, h, p, n_mc, grid, seed):
    indicator = calibration.error_indicator_step_halving(problem, method, h)
    return calibration.calibrate(problem, method, h, p, indicator, n_mc, seed, grid.values(), grid.refine_rounds)


def run_calibrate(cfg, out):
    problem = cfg.problem.build()
    method = _method(cfg.method)
    files, stars = [], []
    for i, h in enumerate(cfg.h_values):
        res = _calibrate_one(problem, method, h, cfg.p, cfg.n_mc, cfg.grid, int(substream(cfg.seed, i).integers(2**31)))
        files.append(res.to_csv(out / f"profile_h{_fmt_h(h)}.csv"))
        stars.append(res.sigma_star)
    files.append(_io.write_csv(out / "sigma_star.csv", ["h", "sigma_star"], [np.array(cfg.h_values), np.array(stars)]))
    return files, {"sigma_star": dict(zip(map(_fmt_h, cfg.h_values), stars))}


def _fn_observations(cfg):
    truth = cfg.problem.build()
    t, u = solve_deterministic(truth, RK4, cfg.data_h)
    times = np.array(cfg.obs_times, dtype=float)
    clean = deterministic_interpolant(t, u, RK4, truth.f, times)
    rng = substream(cfg.data_seed, 0)
    data = clean + np.sqrt(cfg.noise_var) * rng.standard_normal(clean.shape)
    return bayes.ObservationSet(times, data, cfg.noise_var)


def run_ode_posterior(cfg, out):
    method = _method(cfg.method)
    obs = _fn_observations(cfg)
    true = np.array([cfg.problem.a, cfg.problem.b, cfg.problem.c])
    priors = [bayes.LogNormal(float(np.log(v)), cfg.prior_log_sd) for v in true]
    files = [_io.write_csv(out / "observations.csv", ["t"] + [f"d_{j + 1}" for j in range(obs.values.shape[1])],
                           [obs.times] + [obs.values[:, j] for j in range(obs.values.shape[1])])]
    summary = {}
    for i, h in enumerate(cfg.h_values):
        if cfg.sigma == "calibrate":
            g = cfg.calibration_grid
            res = _calibrate_one(cfg.problem.build(), method, h, cfg.p, cfg.calibration_n_mc, g,
                                 int(substream(cfg.seed, 1, i).integers(2**31)))
            sigma = res.sigma_star
            files.append(res.to_csv(out / f"calibration_h{_fmt_h(h)}.csv"))
        else:
            sigma = float(cfg.sigma)
        spec = bayes.PosteriorSpec(lambda th: cfg.problem.build(th), method, priors, h, sigma=sigma, p=cfg.p, R=cfg.mcmc.R)
        chain = bayes.rwm_chain(spec, obs, cfg.mcmc.n_steps, int(substream(cfg.seed, 0, i).integers(2**31)),
                                config=cfg.mcmc.adapt(), theta0=true)
        files.append(chain.to_csv(out / f"chain_h{_fmt_h(h)}.csv"))
        post = chain.posterior
        summary[_fmt_h(h)] = {
            "h": h,
            "sigma": sigma,
            "R": cfg.mcmc.R,
            "n_steps": cfg.mcmc.n_steps,
            "seed": chain.seed,
            "acceptance_rate": float(chain.acceptance_rate),
            "mean": post.mean(axis=0).tolist(),
            "sd": post.std(axis=0, ddof=1).tolist(),
        }
    return files, summary


def run_linear_conjugate(cfg, out):
    rng = substream(cfg.data_seed, 0)
    eta = rng.standard_normal()
    ks = np.array(sorted(set(cfg.k_values) | {cfg.k_chain}))
    d = np.exp(cfg.lam * ks * cfg.h) * cfg.u0_true + np.sqrt(cfg.gamma2) * eta
    rows = {"k": ks.astype(float)}
    for label, s in (("det", 0.0), ("rand", cfg.sigma)):
        m, z2 = bayes.linear_conjugate_posterior(cfg.lam, cfg.h, ks, cfg.gamma2, s, cfg.p, cfg.m0, cfg.zeta0_2, d)
        rows[f"m_{label}"] = m
        rows[f"zeta2_{label}"] = z2
    limit = bayes.linear_posterior_variance_limit(cfg.lam, cfg.h, cfg.sigma, cfg.zeta0_2)
    files = [_io.write_csv(out / "closed_form.csv", list(rows), list(rows.values()))]
    d_chain = float(d[list(ks).index(cfg.k_chain)])
    T = cfg.k_chain * cfg.h
    obs = bayes.ObservationSet(np.array([T]), np.array([[d_chain]]), cfg.gamma2)
    prior = [bayes.Normal(cfg.m0, float(np.sqrt(cfg.zeta0_2)))]
    summary = {"zeta2_limit": float(limit), "d_chain": d_chain}
    for j, (label, s) in enumerate((("det", 0.0), ("rand", cfg.sigma))):
        spec = bayes.PosteriorSpec(lambda th: problems.linear(cfg.lam, th[0], T), method_from_name("euler"),
                                   prior, cfg.h, sigma=s, p=cfg.p, R=cfg.mcmc.R)
        chain = bayes.rwm_chain(spec, obs, cfg.mcmc.n_steps, int(substream(cfg.seed, j).integers(2**31)),
                                config=cfg.mcmc.adapt(), theta0=np.array([cfg.m0]))
        files.append(chain.to_csv(out / f"chain_{label}.csv"))
        post = chain.posterior[:, 0]
        m, z2 = bayes.linear_conjugate_posterior(cfg.lam, cfg.h, cfg.k_chain, cfg.gamma2, s, cfg.p, cfg.m0,
                                                 cfg.zeta0_2, d_chain)
        summary[label] = {"chain_mean": float(post.mean()), "chain_var": float(post.var(ddof=1)),
                          "exact_mean": float(m), "exact_var": float(z2),
                          "acceptance_rate": float(chain.acceptance_rate)}
    return files, summary


def run_strong_order(cfg, out):
    problem = cfg.problem.build()
    exact = None
    if isinstance(cfg.problem, LinearProblem):
        lam, u0 = cfg.problem.lam, cfg.problem.u0

        def exact(t):
            return np.exp(lam * t) * u0

    files, summary = [], {}
    for i, mo in enumerate(cfg.methods):
        method = _method(mo.method)
        spec = PerturbationSpec(mo.p, cfg.sigma, problem.n)
        fit = convergence.estimate_strong_order(problem, method, spec, cfg.h_values, cfg.M,
                                                int(substream(cfg.seed, i).integers(2**31)), exact=exact)
        files.append(fit.to_csv(out / f"strong_{mo.method}_p{mo.p}.csv"))
        summary[f"{mo.method}_p{mo.p}"] = fit.summary()
    return files, summary


def run_weak_order(cfg, out):
    spec = PerturbationSpec(cfg.p, cfg.sigma, 1)
    files, summary = [], {}
    h = np.array(cfg.h_values)
    for phi in cfg.functionals:
        fit_sde, fit_ode, rows = convergence.weak_order_linear(cfg.lam, cfg.u0, cfg.T, cfg.h_values, spec, phi)
        files.append(_io.write_csv(
            out / f"weak_{phi}.csv",
            ["h", "numerical", "modified_sde", "ode", "error_sde", "error_ode"],
            [h, rows[:, 0], rows[:, 1], rows[:, 2], fit_sde.errors, fit_ode.errors],
        ))
        summary[phi] = {"slope_sde": fit_sde.slope, "slope_ode": fit_ode.slope}
    return files, summary


def run_fem_rates(cfg, out):
    kappa = fem1d.CoefficientField(tuple(cfg.log_kappa))
    spec = fem1d.RandomBasisSpec(cfg.p, cfg.sigma_fem, cfg.n_kl)
    energy, l2 = fem1d.estimate_fem_rates(kappa, spec, cfg.element_counts, cfg.M, cfg.seed, n_ref=cfg.n_ref)
    files = [energy.to_csv(out / "energy_errors.csv"), l2.to_csv(out / "l2_errors.csv")]
    sums = []
    for i, n in enumerate(cfg.element_counts):
        mesh = fem1d.Mesh1D(n)
        rng = substream(cfg.seed, 1, i)
        sums.append(np.mean([fem1d.random_energy_sum(fem1d.draw_random_basis(mesh, spec, rng), kappa)
                             for _ in range(cfg.energy_sum_draws)]))
    h = 1.0 / np.array(cfg.element_counts, dtype=float)
    files.append(_io.write_csv(out / "energy_sum.csv", ["h", "mean_energy_sum"], [h, np.array(sums)]))
    summary = {"energy": energy.summary(), "l2": l2.summary()}
    if spec.sigma_fem > 0:
        summary["energy_sum"] = convergence.order_fit(h, np.array(sums)).summary()
    return files, summary


def run_elliptic_inverse(cfg, out):
    truth = fem1d.CoefficientField(tuple(cfg.true_log_kappa))
    x_obs = np.array(cfg.x_obs)
    ref = fem1d.solve_quadratic(fem1d.Mesh1D(cfg.data_n_elements), truth)
    data = ref(x_obs) + np.sqrt(cfg.noise_var) * substream(cfg.data_seed, 0).standard_normal(len(x_obs))
    files = [_io.write_csv(out / "observations.csv", ["x", "d"], [x_obs, data])]
    summary = {}
    prior_rng = substream(cfg.seed, 2)
    prior_draws = [fem1d.CoefficientField.from_free(prior_rng.standard_normal(fem1d.N_INTERVALS - 1))
                   for _ in range(cfg.calibration_prior_draws)]
    for i, n in enumerate(cfg.element_counts):
        mesh = fem1d.Mesh1D(n)
        if cfg.sigma_fem == "calibrate":
            g = cfg.calibration_grid
            res = fem1d.calibrate_fem(mesh, prior_draws, cfg.p, cfg.n_kl, fem1d.element_midpoints(mesh), cfg.calibration_n_mc,
                                      int(substream(cfg.seed, 1, i).integers(2**31)), g.values(), g.refine_rounds)
            files.append(res.to_csv(out / f"calibration_n{n}.csv"))
            sigma = res.sigma_star
        else:
            sigma = float(cfg.sigma_fem)
        entry = {"sigma_fem": sigma}
        for j, (label, s) in enumerate((("det", 0.0), ("rand", sigma))):
            spec = fem1d.RandomBasisSpec(cfg.p, s, cfg.n_kl)
            chain = fem1d.elliptic_posterior_chain(
                mesh, spec, x_obs, data, cfg.noise_var, cfg.mcmc.n_steps,
                int(substream(cfg.seed, 0, i, j).integers(2**31)), R=cfg.mcmc.R, config=cfg.mcmc.adapt(),
            )
            files.append(chain.to_csv(out / f"chain_{label}_n{n}.csv"))
            post = chain.posterior
            entry[label] = {"acceptance_rate": float(chain.acceptance_rate),
                            "mean": post.mean(axis=0).tolist(), "sd": post.std(axis=0, ddof=1).tolist()}
        summary[str(n)] = entry
    return files, summary


RUNNERS = {
    "forward": run_forward,
    "calibrate": run_calibrate,
    "ode-posterior": run_ode_posterior,
    "linear-conjugate": run_linear_conjugate,
    "strong-order": run_strong_order,
    "weak-order-linear": run_weak_order,
    "fem-rates": run_fem_rates,
    "elliptic-inverse": run_elliptic_inverse,
}


def run_experiment(cfg, out_dir):
    """Run ``cfg`` into ``out_dir``; returns ``(relative file paths, summary dict)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, summary = RUNNERS[cfg.kind](cfg, out)
    return [str(Path(f).relative_to(out)) for f in files], summary
