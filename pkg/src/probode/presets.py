"""Named experiment configurations at full scale.

The concrete problem constants for every experiment live here and nowhere
else in the library.
"""

from dataclasses import dataclass

from probode.experiments import RunConfig

FN_PROBLEM = {"kind": "fitzhugh_nagumo", "a": 0.2, "b": 0.2, "c": 3.0, "V0": -1.0, "R0": 1.0}
FN_STEPS = [0.005, 0.01, 0.02, 0.05, 0.1]
FN_OBS_TIMES = [float(t) for t in range(1, 41)]
ELLIPTIC_TRUTH = [0.0, 0.5, -0.3, 0.8, -0.6, 0.2, 0.4, -0.5, 0.1, -0.2]


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    source: str
    config: RunConfig


def build_registry(entries):
    """Map preset names to presets; rejects an empty list and duplicate names."""
    entries = list(entries)
    if not entries:
        raise ValueError("preset registry is empty")
    registry = {}
    for entry in entries:
        if entry.name in registry:
            raise ValueError(f"duplicate preset name {entry.name!r}")
        registry[entry.name] = entry
    return registry


def _preset(name, description, source, experiment):
    return Preset(name, description, source, RunConfig.model_validate({"name": name, "experiment": experiment}))


_FN_MCMC = {"n_steps": 100_000, "burn_in_fraction": 0.1, "R": 10}

PRESETS = build_registry(
    [
        _preset(
            "fn-forward",
            "FitzHugh-Nagumo randomized Euler ensembles, 100 draws per step size, sigma = 0.1",
            "forward ensembles at several step sizes",
            {
                "kind": "forward",
                "problem": {**FN_PROBLEM, "T": 20.0},
                "method": "euler",
                "h_values": FN_STEPS,
                "p": 1,
                "sigma": 0.1,
                "n_samples": 100,
                "seed": 1,
            },
        ),
        _preset(
            "fn-calibrate",
            "FitzHugh-Nagumo MAP noise scale from the step-halving indicator",
            "noise-scale calibration by Bhattacharyya matching",
            {
                "kind": "calibrate",
                "problem": {**FN_PROBLEM, "T": 20.0},
                "method": "euler",
                "h_values": FN_STEPS,
                "p": 1,
                "n_mc": 100,
                "grid": {"low": 1e-3, "high": 10.0, "n": 41, "refine_rounds": 3},
                "seed": 2,
            },
        ),
        _preset(
            "fn-posterior-det",
            "FitzHugh-Nagumo (a, b, c) posterior with deterministic Euler, 100000 steps",
            "parameter inference, deterministic solver",
            {
                "kind": "ode-posterior",
                "problem": {**FN_PROBLEM, "T": 40.0},
                "method": "euler",
                "h_values": FN_STEPS,
                "sigma": 0.0,
                "obs_times": FN_OBS_TIMES,
                "noise_var": 1e-3,
                "prior_log_sd": 1.0,
                "data_seed": 11,
                "mcmc": _FN_MCMC,
                "seed": 3,
            },
        ),
        _preset(
            "fn-posterior-rand",
            "FitzHugh-Nagumo (a, b, c) posterior with calibrated randomized Euler, 100000 steps",
            "parameter inference, randomized solver with noisy pseudo-marginal MCMC",
            {
                "kind": "ode-posterior",
                "problem": {**FN_PROBLEM, "T": 40.0},
                "method": "euler",
                "h_values": FN_STEPS,
                "sigma": "calibrate",
                "calibration_n_mc": 100,
                "calibration_grid": {"low": 1e-3, "high": 10.0, "n": 41, "refine_rounds": 3},
                "obs_times": FN_OBS_TIMES,
                "noise_var": 1e-3,
                "prior_log_sd": 1.0,
                "data_seed": 11,
                "mcmc": _FN_MCMC,
                "seed": 4,
            },
        ),
        _preset(
            "linear-conjugate",
            "initial-condition inference for du/dt = u from one Euler observation",
            "closed-form conjugate posterior versus MCMC",
            {
                "kind": "linear-conjugate",
                "lam": 1.0,
                "h": 0.1,
                "k_chain": 10,
                "k_values": [1, 2, 5, 10, 20, 50, 100, 200],
                "gamma2": 0.01,
                "sigma": 0.2,
                "p": 1,
                "m0": 0.0,
                "zeta0_2": 1.0,
                "u0_true": 1.0,
                "data_seed": 5,
                "mcmc": {"n_steps": 60_000, "burn_in_fraction": 0.1, "R": 10, "refresh_current": False},
                "seed": 5,
            },
        ),
        _preset(
            "strong-order",
            "strong order of randomized Euler (p=1) and RK4 (p=4) on du/dt = u",
            "mean-square convergence rate",
            {
                "kind": "strong-order",
                "problem": {"kind": "linear", "lam": 1.0, "u0": 1.0, "T": 1.0},
                "methods": [{"method": "euler", "p": 1}, {"method": "rk4", "p": 4}],
                "h_values": [0.1, 0.05, 0.025, 0.0125],
                "sigma": 1.0,
                "M": 200,
                "seed": 6,
            },
        ),
        _preset(
            "weak-order-linear",
            "weak error of randomized Euler against the modified SDE and the ODE",
            "weak convergence via backward error analysis",
            {
                "kind": "weak-order-linear",
                "lam": 1.0,
                "u0": 1.0,
                "T": 1.0,
                "h_values": [0.1, 0.05, 0.025, 0.0125],
                "p": 1,
                "sigma": 1.0,
                "functionals": ["identity", "square"],
                "seed": 7,
            },
        ),
        _preset(
            "fem-rates",
            "energy and L2 rates of randomized linear elements, p = 1",
            "randomized Galerkin convergence",
            {
                "kind": "fem-rates",
                "log_kappa": ELLIPTIC_TRUTH,
                "element_counts": [10, 20, 40, 80],
                "p": 1,
                "sigma_fem": 1.0,
                "n_kl": 20,
                "M": 100,
                "energy_sum_draws": 1000,
                "seed": 8,
            },
        ),
        _preset(
            "elliptic-inverse",
            "nine log-coefficients of a 1D elliptic problem from nine point values",
            "elliptic inverse problem, deterministic and randomized elements",
            {
                "kind": "elliptic-inverse",
                "true_log_kappa": ELLIPTIC_TRUTH,
                "element_counts": [10, 20, 40],
                "x_obs": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
                "noise_var": 1e-5,
                "data_n_elements": 1280,
                "data_seed": 9,
                "p": 1,
                "n_kl": 20,
                "sigma_fem": "calibrate",
                "calibration_prior_draws": 20,
                "calibration_n_mc": 50,
                "calibration_grid": {"low": 1e-2, "high": 1e3, "n": 31, "refine_rounds": 3},
                "mcmc": {"n_steps": 100_000, "burn_in_fraction": 0.1, "R": 10},
                "seed": 10,
            },
        ),
    ]
)
