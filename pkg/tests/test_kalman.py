import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad_vec
from scipy.linalg import expm
from mcarma.core.config import settings
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.models.kalman import DiscretizedModel
from mcarma.models.levy import Sample
from mcarma.models.model_core import StateSpaceModel
from mcarma.services.kalman.kalman_service import LOG_2PI, KalmanService
from mcarma.services.levy.levy_service import LevyService
from mcarma.services.model_core.model_core_service import ModelCoreService
from mcarma.utils.linalg import spectral_radius, symmetrize
from mcarma.utils.rng import PURPOSE_SIMULATE, stream


def _scalar_disc(phi: float, sigma: float, K: float, V: float) -> DiscretizedModel:
    return DiscretizedModel(
        h=1.0, Phi=[[phi]], sigma_h=[[sigma]], C=[[1.0]], omega=[[V]], K=[[K]], V=[[V]], residual=0.0, iterations=1
    )


def _toeplitz_objective(model, sample: Sample) -> float:
    """
    ガウス尤度を共分散行列を直接組んで計算する（-2/n log L）
    """
    n, d = sample.values.shape
    omega_inf = LevyService.stationary_covariance(model)
    gamma = np.empty((n * d, n * d))
    for lag in range(n):
        block = model.C @ expm(model.A * lag * sample.h) @ omega_inf @ model.C.T
        for i in range(lag, n):
            j = i - lag
            gamma[i * d:(i + 1) * d, j * d:(j + 1) * d] = block
            gamma[j * d:(j + 1) * d, i * d:(i + 1) * d] = block.T
    y = sample.values.reshape(-1)
    _, logdet = np.linalg.slogdet(gamma)
    return float((n * d * LOG_2PI + logdet + y @ np.linalg.solve(gamma, y)) / n)


def test_matrix_exponential():
    assert_allclose(KalmanService.matrix_exponential(np.diag([1.0, -2.0])), np.diag([np.e, np.exp(-2.0)]))
    assert_allclose(KalmanService.matrix_exponential([[0.0, 1.0], [0.0, 0.0]]), [[1.0, 1.0], [0.0, 1.0]])


def test_noise_covariance_scalar():
    sigma_h = KalmanService.noise_covariance(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]), 1.0)
    assert_allclose(sigma_h, [[(1.0 - np.exp(-2.0)) / 2.0]], rtol=1e-12)


def test_noise_covariance_matches_quadrature(make_stable_model, rng):
    model = make_stable_model(rng, 3, 2)
    Q = model.B @ model.sigma_L @ model.B.T
    expected, _ = quad_vec(lambda u: expm(model.A * u) @ Q @ expm(model.A * u).T, 0.0, 0.7, epsabs=1e-12)
    sigma_h = KalmanService.noise_covariance(model.A, model.B, model.sigma_L, 0.7)
    assert_allclose(sigma_h, expected, rtol=1e-8, atol=1e-10)
    assert_allclose(sigma_h, sigma_h.T)


def test_noise_covariance_requires_stability():
    with pytest.raises(AppException) as exc:
        KalmanService.noise_covariance(np.array([[0.1]]), np.array([[1.0]]), np.array([[1.0]]), 1.0)
    assert exc.value.error_code == ErrorCode.INVALID_PARAMETER


def test_riccati_fully_observed_scalar():
    omega, K, V = KalmanService.riccati_solve(np.array([[0.5]]), np.array([[2.0]]), np.array([[1.0]]))
    assert_allclose(omega, [[2.0]])
    assert_allclose(K, [[0.5]])
    assert_allclose(V, [[2.0]])

    omega, K, V = KalmanService.riccati_solve(np.zeros((1, 1)), np.array([[2.0]]), np.array([[1.0]]))
    assert_allclose(K, [[0.0]], atol=1e-12)
    assert_allclose(V, [[2.0]])


def test_riccati_errors():
    with pytest.raises(AppException) as exc:
        KalmanService.riccati_solve(np.array([[0.5]]), np.array([[2.0]]), np.array([[1.0]]), max_iter=1)
    assert exc.value.error_code == ErrorCode.RICCATI_DIVERGENCE

    with pytest.raises(AppException) as exc:
        KalmanService.riccati_solve(np.zeros((1, 1)), np.zeros((1, 1)), np.array([[1.0]]))
    assert exc.value.error_code == ErrorCode.SINGULAR_INNOVATION


@pytest.mark.parametrize("N,d", [(2, 1), (3, 2), (4, 2)])
def test_discretize_random_models(make_stable_model, rng, N, d):
    model = make_stable_model(rng, N, d)
    disc = KalmanService.discretize(model, 1.0)
    assert disc.residual < 1e-8
    assert spectral_radius(disc.Phi - disc.K @ disc.C) < 1.0
    assert np.all(np.linalg.eigvalsh(disc.V) > 0.0)
    assert_allclose(disc.V, disc.C @ disc.omega @ disc.C.T)


def test_filter_without_gain(rng):
    y = rng.standard_normal(50)
    result = KalmanService.filter(_scalar_disc(0.0, 1.0, 0.0, 1.0), Sample(h=1.0, values=y))
    assert_allclose(result.innovations[:, 0], y)
    assert_allclose(result.per_step, LOG_2PI + y ** 2)
    assert result.value == pytest.approx(np.mean(LOG_2PI + y ** 2))


def test_filter_per_step_lower_bound(study_truth, study_sigma, rng):
    _, _, model = study_truth
    disc = KalmanService.discretize(model, 1.0)
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 300, rng)
    result = KalmanService.filter(disc, sample)
    floor = 2 * LOG_2PI + np.linalg.slogdet(disc.V)[1]
    assert np.all(result.per_step >= floor - 1e-12)
    assert result.innovations.shape == (300, 2)


def test_filter_forgets_initial_state(study_truth, study_sigma, rng):
    _, _, model = study_truth
    disc = KalmanService.discretize(model, 1.0)
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 400, rng)
    a = KalmanService.filter(disc, sample)
    b = KalmanService.filter(disc, sample, x_init=np.array([5.0, -3.0, 2.0]))
    assert not np.allclose(a.innovations[0], b.innovations[0])
    assert_allclose(a.innovations[300:], b.innovations[300:], atol=1e-6)


def test_filter_rejects_dimension_mismatch(study_truth, rng):
    _, _, model = study_truth
    disc = KalmanService.discretize(model, 1.0)
    with pytest.raises(AppException) as exc:
        KalmanService.filter(disc, Sample(h=1.0, values=rng.standard_normal(10)))
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH


@pytest.mark.parametrize("n", [50, 200])
def test_filter_matches_dense_gaussian_likelihood(car1_space, car1_theta, rng, n):
    model = ModelCoreService.echelon_model(car1_space, car1_theta)
    sample = LevyService.exact_gaussian_sample(model, model.sigma_L, 1.0, n, rng)
    value = KalmanService.evaluate(car1_space, car1_theta, sample).value
    assert value == pytest.approx(_toeplitz_objective(model, sample), rel=0.02)


def test_evaluate_penalises_unstable_parameter(study_truth, study_sigma, rng):
    space, theta, model = study_truth
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 100, rng)
    bad = theta.copy()
    bad[0] = 5.0
    result = KalmanService.evaluate(space, bad, sample)
    assert not result.feasible
    assert result.reason == "unstable"
    assert result.value > settings.PENALTY_VALUE

    outside = theta.copy()
    outside[1] = space.bound + 1.0
    result = KalmanService.evaluate(space, outside, sample)
    assert result.reason == "outside box"
    assert result.value == pytest.approx(settings.PENALTY_VALUE + 2.0)


def test_evaluate_rejects_shape_errors(study_truth, study_sigma, rng):
    space, theta, model = study_truth
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 20, rng)
    with pytest.raises(AppException) as exc:
        KalmanService.evaluate(space, theta[:-1], sample)
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH
    with pytest.raises(AppException) as exc:
        KalmanService.evaluate(space, theta, Sample(h=1.0, values=rng.standard_normal(20)))
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH


def test_objective_at_truth_matches_expectation(study_truth, study_sigma, rng):
    space, theta, model = study_truth
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 2000, rng)
    result = KalmanService.evaluate(space, theta, sample)
    assert result.feasible
    disc = KalmanService.discretize(model, 1.0)
    expected = 2 * LOG_2PI + np.linalg.slogdet(disc.V)[1] + 2
    per_step = result.likelihood.per_step[100:]
    se = per_step.std() / np.sqrt(per_step.size)
    assert abs(per_step.mean() - expected) < 4 * se
    assert KalmanService.quasi_log_likelihood(space, theta, sample) == result.value


def test_innovations_are_white_at_truth(study_truth, study_sigma, rng):
    space, theta, model = study_truth
    n = 2000
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, n, rng)
    eps = KalmanService.evaluate(space, theta, sample).likelihood.innovations[100:]
    eps = eps - eps.mean(axis=0)
    lag1 = np.sum(eps[1:] * eps[:-1], axis=0) / np.sum(eps ** 2, axis=0)
    assert np.all(np.abs(lag1) < 4.0 / np.sqrt(n))


def test_misspecified_parameter_has_larger_mean_objective(car1_space, car1_theta):
    model = ModelCoreService.echelon_model(car1_space, car1_theta)
    wrong = np.array([-2.0, 1.0])
    truth_values, wrong_values = [], []
    for r in range(50):
        sample = LevyService.exact_gaussian_sample(model, model.sigma_L, 1.0, 2000, stream(77, r, PURPOSE_SIMULATE))
        truth_values.append(KalmanService.quasi_log_likelihood(car1_space, car1_theta, sample))
        wrong_values.append(KalmanService.quasi_log_likelihood(car1_space, wrong, sample))
    assert np.mean(wrong_values) > np.mean(truth_values)


def test_initial_state_effect_vanishes(study_truth, study_sigma, rng):
    _, _, model = study_truth
    disc = KalmanService.discretize(model, 1.0)
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 2000, rng)
    prefix = Sample(h=1.0, values=sample.values[:1000])
    x_init = 10.0 * np.ones(disc.N)

    def total_shift(s: Sample) -> float:
        # 平均の差に n を掛けた値は初期状態の寄与の総和
        a = KalmanService.filter(disc, s)
        b = KalmanService.filter(disc, s, x_init=x_init)
        return (b.value - a.value) * s.n

    assert total_shift(sample) != 0.0
    assert total_shift(sample) == pytest.approx(total_shift(prefix), abs=1e-6)
    a = KalmanService.filter(disc, sample)
    b = KalmanService.filter(disc, sample, x_init=x_init)
    assert_allclose(a.per_step[500:], b.per_step[500:], atol=1e-6)


def test_objective_invariant_to_cholesky_column_signs(study_truth, study_sigma, rng):
    space, theta, model = study_truth
    sample = LevyService.exact_gaussian_sample(model, study_sigma, 1.0, 500, rng)
    L = np.zeros((space.s, space.s))
    for value, (r, c) in zip(space.split(theta)[2], space.chol_slots):
        L[r, c] = value
    flipped = L.copy()
    flipped[:, 0] *= -1.0
    flipped_model = StateSpaceModel(A=model.A, B=model.B, C=model.C, sigma_L=symmetrize(flipped @ flipped.T))

    value = KalmanService.filter(KalmanService.discretize(flipped_model, 1.0), sample).value
    assert value == pytest.approx(KalmanService.evaluate(space, theta, sample).value, rel=1e-12)


@pytest.mark.slow
def test_riccati_random_models(make_stable_model, rng):
    for _ in range(200):
        N = int(rng.integers(1, 7))
        d = int(rng.integers(1, min(3, N) + 1))
        model = make_stable_model(rng, N, d)
        disc = KalmanService.discretize(model, float(rng.uniform(0.2, 2.0)))
        residual = KalmanService.riccati_residual(disc.Phi, disc.sigma_h, disc.C, disc.omega)
        assert residual < 1e-9 * (1.0 + np.linalg.norm(disc.omega))
        assert spectral_radius(disc.Phi - disc.K @ disc.C) < 1.0


@pytest.mark.slow
def test_noise_covariance_random_models_match_quadrature(make_stable_model, rng):
    for _ in range(50):
        N = int(rng.integers(1, 4))
        model = make_stable_model(rng, N, 1)
        h = float(rng.uniform(0.1, 2.0))
        B = model.B / np.sqrt(np.linalg.norm(model.B @ model.sigma_L @ model.B.T))
        Q = B @ model.sigma_L @ B.T
        expected, _ = quad_vec(
            lambda u: expm(model.A * u) @ Q @ expm(model.A * u).T, 0.0, h, epsabs=1e-13, epsrel=1e-13
        )
        assert_allclose(KalmanService.noise_covariance(model.A, B, model.sigma_L, h), expected, rtol=0.0, atol=1e-9)
