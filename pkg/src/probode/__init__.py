"""Randomized one-step ODE integrators, randomized 1D finite elements, and
the calibration / inference machinery built on top of them."""

__version__ = "0.1.0"

from probode.perturbation import (
    PerturbationSpec,
    StepNoiseState,
    complete_end_increment,
    draw_end_increment,
    draw_interior_increment,
)
from probode.ode import (
    EULER,
    RK4,
    ODEProblem,
    OneStepMethod,
    TrajectorySample,
    deterministic_step,
    integrated_ou,
    interpolate,
    probabilistic_step,
    solve,
    solve_ensemble,
)

__all__ = [
    "EULER",
    "RK4",
    "ODEProblem",
    "OneStepMethod",
    "PerturbationSpec",
    "StepNoiseState",
    "TrajectorySample",
    "complete_end_increment",
    "deterministic_step",
    "draw_end_increment",
    "draw_interior_increment",
    "integrated_ou",
    "interpolate",
    "probabilistic_step",
    "solve",
    "solve_ensemble",
]
