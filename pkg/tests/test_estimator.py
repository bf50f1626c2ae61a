import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from data.sample_data import scenario_params
from logic import estimator
from logic.errors import DegenerateData, EmptyTrace, NotConverged, ZeroDerivative
from logic.estimator import (FitOptions, FitReport, InitKind, alpha_derivative, alpha_equation,
                             bounded_beta_update, bracket_alpha_root, convergence_criteria, estimate_scale,
                             fit_joint, fit_scatter_fp, fit_sigma_unnormalized, fp_map, log_profile_gradient,
                             newton_beta_step, scale_from_quadratic_forms, scatter_path, solve_beta)
from logic.linalg import loewner_geq, min_eigenvalue, normalize_trace, random_spd, relative_frobenius
from logic.model import SampleSet, log_profile_objective, sample_quadratic_forms
from logic.sampler import RngSeed, sample_mggd

seeds = st.integers(min_value=0, max_value=2**32 - 1)
betas = st.floats(min_value=0.05, max_value=0.99)

SYMMETRIC_CLUSTER = SampleSet.from_array(
    [[1.0, 0.0], [0.0, 1.0], [2**-0.5, 2**-0.5], [2**-0.5, -(2**-0.5)]])


def _random_problem(seed, p=3):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(p + 1, 40))
    return random_spd(p, rng), SampleSet.from_array(rng.standard_normal((n, p)))


def _true_y(params, n, seed):
    data = sample_mggd(params, n, RngSeed(seed))
    return sample_quadratic_forms(params.scatter, data)


# fixed-point map

def test_fp_map_identity_fixed_point():
    data = SampleSet.from_array(np.eye(2))
    assert np.allclose(fp_map(np.eye(2), data, 0.5).entries, np.eye(2), atol=1e-15)


def test_fp_map_symmetric_cluster():
    assert np.allclose(fp_map(np.eye(2), SYMMETRIC_CLUSTER, 0.5).entries, np.eye(2), atol=1e-15)


@given(seed=seeds, beta=betas)
def test_fp_map_trace_identity(seed, beta):
    m, data = _random_problem(seed)
    f = fp_map(m, data, beta)
    assert np.trace(m.solve(f.entries)) == pytest.approx(3.0, abs=1e-9)


@given(seed=seeds, beta=betas, lam=st.sampled_from([1e-3, 1.0, 1e3]))
def test_fp_map_homogeneity(seed, beta, lam):
    m, data = _random_problem(seed)
    scaled = fp_map(m.scaled(lam), data, beta).entries
    expected = lam * fp_map(m, data, beta).entries
    assert np.max(np.abs(scaled - expected)) < 1e-11 * np.max(np.abs(expected))


@given(seed=seeds, beta=betas)
def test_fp_map_is_loewner_monotone(seed, beta):
    m, data = _random_problem(seed)
    c = np.random.default_rng(seed + 1).standard_normal(3)
    q = m.entries + np.outer(c, c)
    assert loewner_geq(fp_map(q, data, beta), fp_map(m, data, beta), 1e-10)


@given(seed=seeds, beta=betas)
def test_fp_map_is_superadditive(seed, beta):
    m, data = _random_problem(seed)
    q = random_spd(3, np.random.default_rng(seed + 1))
    gap = fp_map(m.entries + q.entries, data, beta).entries - fp_map(m, data, beta).entries \
        - fp_map(q, data, beta).entries
    assert min_eigenvalue(gap) >= -1e-10
    assert np.linalg.norm(gap) > 0.0


@given(seed=seeds, beta=betas, a=st.floats(min_value=0.1, max_value=10.0),
       b=st.floats(min_value=0.1, max_value=10.0))
def test_fp_map_additive_on_collinear_pairs(seed, beta, a, b):
    m, data = _random_problem(seed)
    total = fp_map(m.scaled(a + b), data, beta).entries
    gap = total - fp_map(m.scaled(a), data, beta).entries - fp_map(m.scaled(b), data, beta).entries
    assert np.max(np.abs(gap)) < 1e-10 * np.max(np.abs(total))


def test_fp_map_small_shape_approaches_tyler():
    m, data = _random_problem(13)
    x = data.vectors
    y = sample_quadratic_forms(m, data)
    tyler = 3.0 / data.count * (x.T / y) @ x
    near = relative_frobenius(fp_map(m, data, 0.01), tyler)
    far = relative_frobenius(fp_map(m, data, 0.5), tyler)
    assert near < 0.1
    assert near < far


def test_fp_map_gaussian_hook_is_scm_direction():
    m, data = _random_problem(14)
    assert np.allclose(normalize_trace(fp_map(m, data, 1.0)).entries, normalize_trace(data.scm()).entries,
                       atol=1e-12)


def test_fp_map_rejects_zero_quadratic_form():
    with pytest.raises(DegenerateData):
        fp_map(np.eye(2), SampleSet.from_array([[1e-200, 0.0], [0.0, 1.0]]), 0.5)


@given(seed=seeds, beta=betas)
def test_profile_gradient_matches_finite_differences(seed, beta):
    m, data = _random_problem(seed)
    analytic = log_profile_gradient(m, data, beta)
    numeric = np.zeros((3, 3))
    h = 1e-5
    for i, j in itertools.product(range(3), repeat=2):
        if j < i:
            continue
        e = np.zeros((3, 3))
        e[i, j] = e[j, i] = 1.0
        diff = log_profile_objective(m.entries + h * e, data, beta) - log_profile_objective(m.entries - h * e, data, beta)
        numeric[i, j] = numeric[j, i] = diff / (2 * h) / (1.0 if i == j else 2.0)
    assert np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic) < 1e-5


# scale

def test_scale_gaussian_hook():
    assert scale_from_quadratic_forms(np.full(10, 3.0), 1.0, 3) == pytest.approx(1.0, rel=1e-14)


def test_scale_hand_value():
    assert scale_from_quadratic_forms([1.0, 1.0], 0.5, 2) == pytest.approx(0.0625, rel=1e-14)


@pytest.mark.parametrize("c", [0.1, 5.0])
def test_scale_scaling_law(c):
    m, data = _random_problem(15)
    assert estimate_scale(m, data.scaled(c), 0.3) == pytest.approx(c**2 * estimate_scale(m, data, 0.3), rel=1e-12)


# shape equation

def test_alpha_changes_sign_across_true_shape():
    y = _true_y(scenario_params(3, 0.5, 1.0, rho=0.8), 10**4, 21)
    assert alpha_equation(0.45, y, 3) * alpha_equation(0.55, y, 3) < 0


def test_alpha_is_permutation_invariant():
    y = _true_y(scenario_params(3, 0.3, 1.0, rho=0.8), 500, 22)
    shuffled = np.random.default_rng(0).permutation(y)
    assert alpha_equation(0.4, shuffled, 3) == pytest.approx(alpha_equation(0.4, y, 3), rel=1e-12)


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_alpha_is_scale_invariant(c):
    y = _true_y(scenario_params(3, 0.3, 1.0, rho=0.8), 200, 23)
    assert alpha_equation(0.4, c * y, 3) == pytest.approx(alpha_equation(0.4, y, 3), rel=1e-9, abs=1e-7)


@pytest.mark.parametrize("beta", [0.05, 0.2, 0.5, 0.9])
def test_alpha_derivative_matches_finite_differences(beta):
    y = _true_y(scenario_params(3, 0.3, 1.0, rho=0.8), 200, 24)
    h = 1e-5
    numeric = (alpha_equation(beta + h, y, 3) - alpha_equation(beta - h, y, 3)) / (2 * h)
    assert alpha_derivative(beta, y, 3) == pytest.approx(numeric, rel=1e-6)


def test_bounded_update_clips_and_clamps():
    opts = FitOptions()
    assert bounded_beta_update(0.5, 0.5, opts) == pytest.approx(0.7)
    assert bounded_beta_update(0.9, 0.5, opts) == 0.99
    assert bounded_beta_update(0.05, -0.2, opts) == 0.01


def test_newton_converges_and_matches_grid_search():
    y = _true_y(scenario_params(3, 0.2, 1.0, rho=0.8), 10**4, 25)
    root, steps = solve_beta(y, 3, beta0=0.5, tol=1e-8)
    assert steps <= 15
    assert abs(alpha_equation(root, y, 3)) < 1e-8

    grid = np.linspace(0.01, 0.99, 2000)
    values = np.array([alpha_equation(b, y, 3) for b in grid])
    k = int(np.flatnonzero(np.sign(values[:-1]) != np.sign(values[1:]))[0])
    assert abs(root - 0.5 * (grid[k] + grid[k + 1])) < 1e-3


def test_newton_step_fixed_at_root():
    y = _true_y(scenario_params(3, 0.3, 1.0, rho=0.8), 2000, 26)
    root, _ = solve_beta(y, 3, tol=1e-9)
    assert newton_beta_step(root, y, 3) == pytest.approx(root, abs=1e-10)


def test_zero_derivative_falls_back_to_bisection(monkeypatch):
    y = _true_y(scenario_params(3, 0.3, 1.0, rho=0.8), 2000, 27)
    root, _ = solve_beta(y, 3, tol=1e-9)
    monkeypatch.setattr(estimator, "alpha_derivative", lambda beta, y, p: 0.0)
    with pytest.raises(ZeroDerivative):
        newton_beta_step(0.5, y, 3)
    assert bracket_alpha_root(y, 3) is not None
    assert estimator._beta_update(0.5, y, 3, FitOptions()) == pytest.approx(root, abs=1e-8)


def test_no_bracket_raises_not_converged(monkeypatch):
    monkeypatch.setattr(estimator, "alpha_equation", lambda beta, y, p: 1.0)
    monkeypatch.setattr(estimator, "alpha_derivative", lambda beta, y, p: 0.0)
    with pytest.raises(NotConverged):
        estimator._beta_update(0.5, np.ones(10), 3, FitOptions())


def test_joint_fit_stops_when_shape_update_fails(monkeypatch, toeplitz_data):
    monkeypatch.setattr(estimator, "alpha_equation", lambda beta, y, p: 1.0)
    monkeypatch.setattr(estimator, "alpha_derivative", lambda beta, y, p: 0.0)
    report = fit_joint(toeplitz_data)
    assert not report.converged
    assert report.iterations == 1


# fits

def test_symmetric_cluster_fit_is_identity():
    report = fit_scatter_fp(SYMMETRIC_CLUSTER, 0.5)
    assert report.converged
    assert np.allclose(report.m_hat.entries, np.eye(2), atol=1e-8)


def test_fit_residual_and_trace(toeplitz_data):
    opts = FitOptions()
    report = fit_scatter_fp(toeplitz_data, 0.2, opts)
    m_hat = report.m_hat
    f = fp_map(m_hat, toeplitz_data, 0.2).entries
    residual = np.linalg.norm(f - np.trace(f) / 3 * m_hat.entries) / np.linalg.norm(m_hat.entries)
    assert report.converged
    assert residual < 10 * opts.tol_c
    assert m_hat.trace == pytest.approx(3.0, abs=1e-12)
    assert report.ascent_violations == 0
    assert len(report.c_trace) == report.iterations


def test_fit_counts_and_logs_ascent_violations(monkeypatch, caplog, toeplitz_data):
    values = itertools.count()
    monkeypatch.setattr(estimator, "log_profile_objective", lambda m, data, beta: -float(next(values)))
    with caplog.at_level(logging.WARNING, logger="logic.estimator"):
        report = fit_scatter_fp(toeplitz_data, 0.2, FitOptions(tol_c=1e-300, max_iter=5))
    assert report.iterations == 5
    assert report.ascent_violations == 4
    assert sum("log F decreased" in r.getMessage() for r in caplog.records) == 4


@pytest.mark.parametrize("seed", range(10))
def test_fit_converges_from_every_start(seed, toeplitz_scenario):
    data = sample_mggd(toeplitz_scenario, 200, RngSeed(seed))
    starts = [FitOptions(init=InitKind.IDENTITY), FitOptions(init=InitKind.SCM),
              FitOptions(init=InitKind.USER, init_matrix=toeplitz_scenario.scatter.entries)]
    finals = []
    for opts in starts:
        report = fit_scatter_fp(data, 0.2, opts)
        assert report.converged
        assert report.iterations <= 60
        assert report.c_trace[-1] < 1e-6
        finals.append(report.m_hat)
    for a, b in itertools.combinations(finals, 2):
        assert relative_frobenius(a, b) < 1e-4


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.8])
def test_fixed_point_is_unique_maximizer(beta):
    params = scenario_params(3, beta, 1.0, rho=0.8)
    data = sample_mggd(params, 500, RngSeed(31))
    rng = np.random.default_rng(32)
    finals = []
    for _ in range(10):
        opts = FitOptions(init=InitKind.USER, init_matrix=random_spd(3, rng).entries, tol_c=1e-9, max_iter=500)
        report = fit_scatter_fp(data, beta, opts)
        assert report.converged
        finals.append(report.m_hat)
    for a, b in itertools.combinations(finals, 2):
        assert relative_frobenius(a, b) < 1e-5

    best = log_profile_objective(finals[0], data, beta)
    for _ in range(100):
        candidate = normalize_trace(random_spd(3, rng))
        assert best >= log_profile_objective(candidate, data, beta)


def test_fit_is_scale_equivariant(toeplitz_data):
    base = fit_joint(toeplitz_data)
    scaled = fit_joint(toeplitz_data.scaled(3.0))
    assert relative_frobenius(scaled.m_hat, base.m_hat) < 1e-5
    assert scaled.beta_hat == pytest.approx(base.beta_hat, abs=1e-5)
    assert scaled.scale_hat == pytest.approx(9.0 * base.scale_hat, rel=1e-5)


def test_fit_is_permutation_invariant(toeplitz_data):
    order = np.random.default_rng(33).permutation(toeplitz_data.count)
    shuffled = SampleSet.from_array(toeplitz_data.vectors[order])
    a, b = fit_joint(toeplitz_data), fit_joint(shuffled)
    assert np.allclose(a.m_hat.entries, b.m_hat.entries, rtol=0, atol=1e-12)
    assert a.beta_hat == pytest.approx(b.beta_hat, abs=1e-12)


def test_known_beta_joint_fit_is_fixed_point_fit(toeplitz_data):
    opts = FitOptions(beta_fixed=0.2)
    joint = fit_joint(toeplitz_data, opts)
    direct = fit_scatter_fp(toeplitz_data, 0.2, opts)
    assert np.array_equal(joint.m_hat.entries, direct.m_hat.entries)
    assert joint.beta_hat == 0.2
    assert joint.scale_hat == estimate_scale(direct.m_hat, toeplitz_data, 0.2)


def test_joint_fit_recovers_shape(toeplitz_scenario):
    data = sample_mggd(toeplitz_scenario, 5000, RngSeed(34))
    report = fit_joint(data)
    assert report.converged
    assert report.beta_hat == pytest.approx(0.2, abs=0.03)
    y = sample_quadratic_forms(report.m_hat, data)
    assert report.alpha_residual < 1e-5 * abs(alpha_derivative(report.beta_hat, y, 3))
    assert len(report.beta_trace) == report.iterations + 1


def test_fit_rejects_too_few_observations():
    with pytest.raises(DegenerateData):
        fit_scatter_fp(SampleSet.from_array(np.eye(3)), 0.5)


def test_fit_rejects_shape_outside_working_range(toeplitz_data):
    with pytest.raises(ValueError):
        fit_scatter_fp(toeplitz_data, 1.0)


def test_not_converged_returns_last_iterate(toeplitz_data):
    report = fit_joint(toeplitz_data, FitOptions(max_iter=2))
    assert not report.converged
    assert report.iterations == 2
    assert report.m_hat.trace == pytest.approx(3.0)


@pytest.mark.slow
def test_texture_round_trip(texture):
    hits = 0
    for seed in range(10):
        data = sample_mggd(texture, 10**4, RngSeed(500 + seed))
        report = fit_joint(data)
        hits += (abs(report.beta_hat - texture.shape_beta) < 0.02
                 and abs(report.scale_hat / texture.scale_m - 1.0) < 0.1
                 and np.linalg.norm(report.m_hat.entries - texture.scatter.entries) < 0.05)
    assert hits >= 9


# convergence criteria and recursions

def test_convergence_criteria_examples():
    assert convergence_criteria([np.eye(2)] * 4) == [0.0, 0.0, 0.0]
    assert convergence_criteria([np.eye(2), 2 * np.eye(2)]) == [pytest.approx(1.0)]
    with pytest.raises(EmptyTrace):
        convergence_criteria([np.eye(2)])


def test_converged_recursion_has_flat_tail(toeplitz_data):
    path = scatter_path(toeplitz_data, 0.2, toeplitz_data.scm(), 100)
    assert max(convergence_criteria(path)[-10:]) < 1e-5


def test_unnormalized_iterates_stay_proportional(toeplitz_data):
    normalized = scatter_path(toeplitz_data, 0.2, toeplitz_data.scm(), 10)
    raw = scatter_path(toeplitz_data, 0.2, normalize_trace(toeplitz_data.scm()), 10, normalize=False)
    for a, b in zip(normalized, raw):
        assert np.allclose(a.entries, normalize_trace(b).entries, rtol=1e-10, atol=1e-12)


def test_sigma_recursion_matches_decomposed_fit(toeplitz_data):
    opts = FitOptions(tol_c=1e-11, max_iter=1000)
    sigma, d_trace, converged = fit_sigma_unnormalized(toeplitz_data, 0.2, opts=opts)
    report = fit_scatter_fp(toeplitz_data, 0.2, opts)
    assert converged
    assert d_trace[-1] < 1e-11
    assert relative_frobenius(sigma, report.sigma_hat) < 1e-6


# options and reports

def test_options_validation():
    with pytest.raises(ValueError):
        FitOptions(init=InitKind.USER)
    with pytest.raises(ValueError):
        FitOptions(beta_fixed=1.0)
    with pytest.raises(ValueError):
        FitOptions(tol_c=0.0)
    with pytest.raises(ValueError):
        FitOptions(init="moments")


def test_report_dict_round_trip(toeplitz_data):
    report = fit_joint(toeplitz_data)
    restored = FitReport.from_dict(report.to_dict())
    assert np.array_equal(restored.m_hat.entries, report.m_hat.entries)
    assert restored.to_dict() == report.to_dict()
