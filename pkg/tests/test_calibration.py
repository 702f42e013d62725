import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from helpers import implied_scale
from probode import problems
from probode.calibration import (
    GOLDEN,
    CalibrationResult,
    ErrorIndicatorSeries,
    bhattacharyya_gaussian,
    calibrate,
    calibrate_marginal,
    error_indicator_step_halving,
    indicator_variance,
    log_pi_sigma,
    maximize_log_pi,
)
from probode.ode import EULER, RK4
from probode.perturbation import PerturbationSpec


def _bhattacharyya_numeric(mu1, v1, mu2, v2):
    p = stats.norm(mu1, np.sqrt(v1)).pdf
    q = stats.norm(mu2, np.sqrt(v2)).pdf
    bc, _ = integrate.quad(lambda x: np.sqrt(p(x) * q(x)), -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
    return -np.log(bc)


def test_bhattacharyya_closed_form_cases():
    assert bhattacharyya_gaussian(0.3, 2.0, 0.3, 2.0) == 0.0
    assert bhattacharyya_gaussian(0.0, 1.0, 0.0, 4.0) == pytest.approx(0.5 * np.log(5 / 4), abs=1e-12)
    assert bhattacharyya_gaussian(0.0, 1.0, 2.0, 1.0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.0, 4.0), (0.0, 1.0, 2.0, 1.0), (1.0, 0.3, -0.5, 2.5)])
def test_bhattacharyya_matches_numerical_integral(args):
    assert bhattacharyya_gaussian(*args) == pytest.approx(_bhattacharyya_numeric(*args), abs=1e-9)


def test_bhattacharyya_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        bhattacharyya_gaussian(0.0, 0.0, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    mu=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    v=st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=2),
    mu_b=st.floats(-10, 10),
    v_b=st.floats(1e-3, 1e3),
)
def test_bhattacharyya_symmetric_nonnegative_additive(mu, v, mu_b, v_b):
    d12 = bhattacharyya_gaussian(mu[0], v[0], mu[1], v[1])
    assert d12 == pytest.approx(bhattacharyya_gaussian(mu[1], v[1], mu[0], v[0]), rel=1e-12, abs=1e-15)
    assert d12 >= -1e-15
    joint = bhattacharyya_gaussian([mu[0], mu_b], [v[0], v_b], [mu[1], mu_b], [v[1], v_b])
    assert joint == pytest.approx(d12, rel=1e-9, abs=1e-12)


def test_step_halving_indicator_linear_euler():
    pr = problems.linear(1.0, 1.0, 1.0)
    ind = error_indicator_step_halving(pr, EULER, 0.1)
    assert ind.values[-1, 0] == pytest.approx(1.1**10 - 1.2**5, rel=1e-12)
    assert ind.values[-1, 0] == pytest.approx(0.10542, abs=1e-5)
    assert ind.values[0, 0] == 0.0
    assert len(ind.times) == 11


def test_step_halving_indicator_rk4_closed_form():
    ind = error_indicator_step_halving(problems.linear(1.0, 1.0, 1.0), RK4, 0.1)

    def growth(z):
        return 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24

    assert ind.values[-1, 0] == pytest.approx(growth(0.1) ** 10 - growth(0.2) ** 5, rel=1e-10)
    assert abs(ind.values[-1, 0]) < 3e-5


def test_step_halving_indicator_zero_field():
    ind = error_indicator_step_halving(problems.zero(np.array([1.0, 2.0]), 1.0), EULER, 0.1)
    assert not np.any(ind.values)


def test_step_halving_mesh_mismatch():
    with pytest.raises(ValueError):
        error_indicator_step_halving(problems.linear(1.0, 1.0, 1.0), EULER, 0.2)


def test_indicator_floor():
    var = indicator_variance(np.array([0.0, 5.0]), np.array([0.0, 0.0]))
    assert var[0] == pytest.approx(1e-24) and var[1] == pytest.approx(36e-24)
    with pytest.raises(ValueError):
        indicator_variance(np.array([0.0]), np.array([0.0]), floor_scale=0.0)


def _constant_indicator_problem():
    pr = problems.zero(np.array([0.0]), 1.0)
    times = 0.1 * np.arange(11)
    return pr, ErrorIndicatorSeries(times, np.full(11, 0.05))


def test_log_pi_is_deterministic_given_seed():
    pr, ind = _constant_indicator_problem()
    spec = PerturbationSpec(1, 1.0)
    a = log_pi_sigma(0.7, pr, EULER, 0.1, spec, ind, 50, 3)
    b = log_pi_sigma(0.7, pr, EULER, 0.1, spec, ind, 50, 3)
    assert a == b
    with pytest.raises(ValueError):
        log_pi_sigma(0.0, pr, EULER, 0.1, spec, ind, 50, 3)
    with pytest.raises(ValueError):
        log_pi_sigma(0.7, pr, EULER, 0.1, spec, ind, 1, 3)


def test_log_pi_seed_consistency():
    pr, ind = _constant_indicator_problem()
    spec = PerturbationSpec(1, 1.0)
    vals = np.array([log_pi_sigma(1.5, pr, EULER, 0.1, spec, ind, 2000, s) for s in range(20)])
    a, b = vals[:10], vals[10:]
    se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(10)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_calibrate_matches_brute_force_grid():
    pr, ind = _constant_indicator_problem()
    grid = np.geomspace(0.1, 100.0, 13)
    res = calibrate(pr, EULER, 0.1, 1, ind, 200, 4, grid)
    fine = np.geomspace(0.1, 100.0, 1201)
    spec = PerturbationSpec(1, 1.0)
    lp = [log_pi_sigma(s, pr, EULER, 0.1, spec, ind, 200, 4) for s in fine]
    best = fine[int(np.argmax(lp))]
    step = np.log(grid[1] / grid[0])
    tol = 2 * step * GOLDEN**3 + np.log(fine[1] / fine[0])
    assert abs(np.log(res.sigma_star) - np.log(best)) <= tol
    # the scan grid value at the optimum is recorded and maximal
    sig, vals = res.profile_arrays()
    assert res.sigma_star == sig[np.argmax(vals)]
    # f = 0: step-k spread sigma^2 h^3 k; the maximiser lies where that straddles 0.05^2
    spread = res.sigma_star**2 * 0.1**3 * np.arange(1, 11)
    assert spread.min() < 0.05**2 < spread.max()


def test_profile_unimodal_and_large_sigma_penalised():
    pr = problems.fitzhugh_nagumo(0.2, 0.2, 3.0, -1.0, 1.0, 10.0)
    ind = error_indicator_step_halving(pr, EULER, 0.1)
    res = calibrate(pr, EULER, 0.1, 1, ind, 50, 5, np.geomspace(1e-2, 10, 25), refine_rounds=0)
    _, vals = res.profile_arrays()
    changes = np.sum(np.diff(np.sign(np.diff(vals))) != 0)
    assert changes <= 2
    spec = PerturbationSpec(1, 1.0, 2)
    assert log_pi_sigma(1e3, pr, EULER, 0.1, spec, ind, 50, 5) < max(vals)


def test_linear_calibration_reproducesimplied_scale():
    lam, u0, T, h = 1.0, 1.0, 1.0, 0.05
    target = implied_scale(lam, u0, T, h)
    pr = problems.linear(lam, u0, T)
    ind = error_indicator_step_halving(pr, EULER, h)
    for seed in range(5):
        res = calibrate(pr, EULER, h, 1, ind, 100, seed, np.geomspace(1e-2, 1e2, 41))
        assert abs(res.sigma_star / target - 1) <= 0.5


def test_marginal_calibration_over_prior_draws():
    pr = problems.linear(1.0, 1.0, 1.0)
    res = calibrate_marginal([pr], EULER, 0.1, 1, 30, 0, np.geomspace(0.1, 10, 9))
    assert res.sigma_star > 0
    res2 = calibrate_marginal([pr, problems.linear(0.8, 1.0, 1.0)], EULER, 0.1, 1, 30, 0, np.geomspace(0.1, 10, 9))
    assert res2.sigma_star > 0


def test_maximize_log_pi_quadratic():
    sigma, profile = maximize_log_pi(lambda s: -(np.log(s) - np.log(0.3)) ** 2, np.geomspace(0.01, 10, 31), 10)
    assert sigma == pytest.approx(0.3, rel=0.01)
    assert sigma == max(profile, key=lambda p: p[1])[0]
    with pytest.raises(ValueError):
        maximize_log_pi(lambda s: 0.0, [1.0, 0.5])


def test_result_exports(tmp_path):
    res = CalibrationResult(0.2, [(0.3, -1.0), (0.1, -2.0), (0.2, -0.5)], 10, 7)
    path = res.to_csv(tmp_path / "p.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "sigma,log_pi" and lines[1].startswith("0.1")
    assert res.summary() == {"sigma_star": 0.2, "n_mc": 10, "seed": 7}
