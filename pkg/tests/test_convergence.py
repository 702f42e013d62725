import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import mean_with_se
from probode import problems
from probode.convergence import (
    ModifiedSDE,
    OrderFit,
    estimate_strong_order,
    fit_loglog,
    linear_mean_square_errors,
    order_fit,
    reference_solution,
    weak_error_linear,
    weak_order_linear,
)
from probode.ode import EULER, RK4, solve_ensemble
from probode.perturbation import PerturbationSpec

LADDER = [0.1, 0.05, 0.025, 0.0125]


def _exact_linear(t):
    return np.exp(t)


def test_fit_loglog_exact_power_laws():
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    s, c, r2 = fit_loglog(hs, hs)
    assert s == pytest.approx(1.0) and r2 == pytest.approx(1.0)
    assert fit_loglog(hs, hs**2)[0] == pytest.approx(2.0)
    s, c, _ = fit_loglog(hs, 3 * hs**1.5)
    assert s == pytest.approx(1.5) and c == pytest.approx(np.log(3.0))


def test_fit_loglog_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_loglog([0.1, 0.05], [1.0, 0.0])
    with pytest.raises(ValueError):
        fit_loglog([0.1], [1.0])


def test_zero_errors_give_infinite_order():
    pr = problems.zero(np.array([1.0]), 1.0)
    fit = estimate_strong_order(pr, EULER, PerturbationSpec(1, 0.0), LADDER, 50, 0, exact=lambda t: np.ones_like(t))
    assert fit.slope == np.inf


def test_strong_order_euler():
    pr = problems.linear(1.0, 1.0, 1.0)
    fit = estimate_strong_order(pr, EULER, PerturbationSpec(1, 1.0), LADDER, 200, 20)
    assert 0.85 <= fit.slope <= 1.15
    assert isinstance(fit, OrderFit) and len(fit.stderr) == 4


def test_strong_order_rk4():
    pr = problems.linear(1.0, 1.0, 1.0)
    fit = estimate_strong_order(pr, RK4, PerturbationSpec(4, 1.0), LADDER, 200, 21)
    assert 3.5 <= fit.slope <= 4.5


def test_deterministic_euler_order():
    pr = problems.linear(1.0, 1.0, 1.0)
    fit = estimate_strong_order(pr, EULER, PerturbationSpec(1, 0.0), LADDER, 50, 0)
    assert 0.9 <= fit.slope <= 1.1


def test_reference_solution_accuracy():
    pr = problems.linear(1.0, 1.0, 1.0)
    ref = reference_solution(pr, 0.1, 0.0125)
    assert np.max(np.abs(ref[:, 0] - np.exp(0.1 * np.arange(11)))) < 1e-10


def test_mc_mean_square_error_matches_closed_form():
    pr = problems.linear(1.0, 1.0, 1.0)
    spec = PerturbationSpec(1, 0.5)
    ens = solve_ensemble(pr, EULER, spec, 0.1, 10_000, np.random.default_rng(30))
    sq = (ens.states[:, :, 0] - np.exp(0.1 * np.arange(11))) ** 2
    exact = linear_mean_square_errors(EULER, 1.0, 1.0, 1.0, 0.1, spec)
    for k in range(1, 11):
        m, se = mean_with_se(sq[:, k])
        assert abs(m - exact[k]) <= 3 * se


def test_weak_zero_noise_identity():
    num, mod, orig = weak_error_linear(1.0, 1.0, 1.0, 0.1, PerturbationSpec(1, 0.0), "identity")
    assert num == pytest.approx(1.1**10, rel=1e-14)
    assert orig == pytest.approx(np.e, rel=1e-14)


@pytest.mark.parametrize("phi", ["identity", "square"])
def test_weak_orders(phi):
    fit_sde, fit_ode, rows = weak_order_linear(1.0, 1.0, 1.0, LADDER, PerturbationSpec(1, 1.0), phi)
    assert 2.6 <= fit_sde.slope <= 3.4
    assert 0.8 <= fit_ode.slope <= 1.2
    assert np.all(fit_sde.errors < fit_ode.errors)


def test_weak_unknown_functional():
    with pytest.raises(ValueError):
        weak_error_linear(1.0, 1.0, 1.0, 0.1, PerturbationSpec(1, 1.0), "cube")


def test_modified_sde_limits():
    sde = ModifiedSDE(1.5, 1e-8, 1, 1.0)
    assert sde.drift == pytest.approx(1.5, rel=1e-7)
    assert sde.diffusion == pytest.approx(1e-8)
    mean, var = ModifiedSDE(0.0, 0.1, 1, 1.0).moments(2.0, 3.0)
    assert mean == 2.0 and var == pytest.approx(0.01 * 3.0)


def test_order_fit_csv(tmp_path):
    fit = order_fit([0.1, 0.05], [0.2, 0.1], stderr=np.array([0.01, 0.005]))
    path = fit.to_csv(tmp_path / "fit.csv")
    assert path.read_text().splitlines()[0] == "h,error,stderr"
    assert set(fit.summary()) == {"slope", "intercept", "r2"}


@settings(max_examples=40, deadline=None)
@given(
    order=st.floats(0.5, 5.0),
    scale=st.floats(1e-3, 1e3),
    hs=st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=6, unique=True),
)
def test_fit_recovers_any_power_law(order, scale, hs):
    hs = np.array(hs)
    if np.ptp(np.log(hs)) < 1e-3:
        return
    slope, intercept, _ = fit_loglog(hs, scale * hs**order)
    assert slope == pytest.approx(order, rel=1e-6)
