import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.models.model_core import KroneckerIndex, ModelFile, NestingMap, ParameterSpace, PolynomialPair, SpaceConfig, StateSpaceModel
from mcarma.services.model_core.model_core_service import STUDY_THETA_1, STUDY_THETA_2, ModelCoreService

Z = 0.3 + 0.7j


def test_study_catalogue_parameter_counts():
    counts = [space.n_params for space in ModelCoreService.study_spaces()]
    assert counts == [7, 10, 8, 11, 9, 15, 11, 19]


def test_unknown_study_space():
    with pytest.raises(AppException) as exc:
        ModelCoreService.study_space("space9")
    assert exc.value.error_code == ErrorCode.INVALID_INPUT


def test_kronecker_index_properties():
    m = KroneckerIndex(m=(1, 2))
    assert (m.d, m.N, m.p) == (2, 3, 2)
    assert m.offsets == (0, 1)
    assert m.width(1, 0) == 1
    assert m.width(0, 1) == 1
    assert m.width(1, 1) == 2


def test_ma_cap_must_be_below_p():
    with pytest.raises(AppException):
        ParameterSpace(name="bad", kronecker=KroneckerIndex(m=(1, 1)), ma_cap=1)


def test_echelon_model_study_truth(study_sigma):
    space = ModelCoreService.study_space("space3")
    model = ModelCoreService.echelon_model(space, space.theta_from(STUDY_THETA_1[:space.n_structural], study_sigma))
    assert_array_equal(model.A, [[-1.0, -2.0, 0.0], [0.0, 0.0, 1.0], [1.0, -2.0, -3.0]])
    assert_allclose(model.B, [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]], atol=1e-14)
    assert_array_equal(model.C, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert_allclose(model.sigma_L, study_sigma, atol=1e-12)
    assert model.is_stable


def test_echelon_model_with_moving_average(study_sigma):
    space = ModelCoreService.study_space("space2")
    theta = space.theta_from(STUDY_THETA_2, study_sigma)
    model = ModelCoreService.echelon_model(space, theta)
    assert_allclose(model.B, [[1.0, 0.0], [1.0, 2.0], [-3.0, -5.0]], atol=1e-12)

    coeffs = ModelCoreService.echelon_coefficients(model, space.kronecker)
    assert coeffs.ma_degree == 1
    assert_allclose(coeffs.q_coeffs[1], [[0.0, 0.0], [1.0, 2.0]], atol=1e-12)


@pytest.mark.parametrize("name", ["space1", "space2", "space3", "space4", "space5", "space6", "space7", "space8"])
def test_echelon_transfer_function_round_trip(name, rng):
    space = ModelCoreService.study_space(name)
    # 構造パラメータを小さく取り、Σ^L は単位行列
    theta = space.theta_from(0.5 * rng.standard_normal(space.n_structural), np.eye(space.s))
    model = ModelCoreService.echelon_model(space, theta)
    expected = ModelCoreService.transfer_function(model, Z)

    coeffs = ModelCoreService.echelon_coefficients(model, space.kronecker)
    assert_allclose(coeffs.transfer_function(Z), expected, rtol=1e-9, atol=1e-10)

    poly = ModelCoreService.echelon_polynomials(model, space.kronecker)
    assert poly.p == space.kronecker.p
    assert_allclose(poly.transfer_function(Z), expected, rtol=1e-9, atol=1e-10)


def test_echelon_model_rejects_bad_theta():
    space = ModelCoreService.study_space("space3")
    with pytest.raises(AppException) as exc:
        ModelCoreService.echelon_model(space, np.zeros(3))
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH

    theta = space.center.copy()
    theta[0] = 11.0
    with pytest.raises(AppException) as exc:
        ModelCoreService.echelon_model(space, theta)
    assert exc.value.error_code == ErrorCode.INVALID_PARAMETER


def test_companion_realization_carma21():
    # P(z) = z^2 + 3z + 2, Q(z) = z + 0.5
    poly = PolynomialPair(ar_coeffs=[[[3.0]], [[2.0]]], ma_coeffs=[[[1.0]], [[0.5]]])
    model = ModelCoreService.companion_realization(poly)
    assert_array_equal(model.A, [[0.0, 1.0], [-2.0, -3.0]])
    assert_allclose(model.B, [[1.0], [-2.5]])
    assert_allclose(ModelCoreService.transfer_function(model, Z), (Z + 0.5) / (Z ** 2 + 3 * Z + 2))
    assert_allclose(poly.transfer_function(Z), ModelCoreService.transfer_function(model, Z))


def test_companion_realization_bivariate(rng):
    poly = PolynomialPair(
        ar_coeffs=[np.eye(2) * 3.0 + 0.1 * rng.standard_normal((2, 2)), np.eye(2) * 2.0],
        ma_coeffs=[np.eye(2), 0.5 * np.eye(2)],
    )
    model = ModelCoreService.companion_realization(poly)
    assert model.N == 4
    assert_allclose(ModelCoreService.transfer_function(model, Z), poly.transfer_function(Z), rtol=1e-10)


def test_polynomial_pair_validation():
    with pytest.raises(AppException):
        PolynomialPair(ar_coeffs=[[[1.0]]], ma_coeffs=[[[0.0]]])
    with pytest.raises(AppException):
        PolynomialPair(ar_coeffs=[[[1.0]]], ma_coeffs=[[[1.0]], [[1.0]]])


def test_state_space_model_validation():
    with pytest.raises(AppException) as exc:
        StateSpaceModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], sigma_L=[[-1.0]])
    assert exc.value.error_code == ErrorCode.INVALID_PARAMETER
    with pytest.raises(AppException) as exc:
        StateSpaceModel(A=[[-1.0]], B=[[1.0, 0.0]], C=[[1.0]], sigma_L=[[1.0]])
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH


def test_stable_minimal_report():
    model = StateSpaceModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], sigma_L=[[1.0]])
    report = ModelCoreService.is_stable_minimal(model, h=1.0)
    assert report.ok
    assert report.violation == 0.0

    unstable = StateSpaceModel(A=[[0.5]], B=[[1.0]], C=[[1.0]], sigma_L=[[1.0]])
    report = ModelCoreService.is_stable_minimal(unstable, h=1.0)
    assert not report.stable
    assert report.violation > 1.0


def test_fast_oscillation_is_rejected():
    # |Im λ| = 4 > π/h
    model = StateSpaceModel(A=[[-0.1, -4.0], [4.0, -0.1]], B=np.eye(2), C=np.eye(2), sigma_L=np.eye(2))
    assert not ModelCoreService.is_stable_minimal(model, h=1.0).stable
    assert ModelCoreService.is_stable_minimal(model, h=0.5).stable


def test_non_minimal_model():
    model = StateSpaceModel(A=np.diag([-1.0, -2.0]), B=[[1.0], [0.0]], C=[[1.0, 1.0]], sigma_L=[[1.0]])
    report = ModelCoreService.is_stable_minimal(model, h=1.0)
    assert report.stable
    assert not report.minimal
    assert report.controllability_rank == 1


def test_nesting_map_space3_in_space2(study_sigma):
    inner = ModelCoreService.study_space("space3")
    outer = ModelCoreService.study_space("space2")
    F = ModelCoreService.nesting_map(inner, outer)
    assert F.F.shape == (10, 8)
    assert_allclose(F.F.T @ F.F, np.eye(8))
    assert np.flatnonzero(F.F.sum(axis=1)).tolist() == [0, 1, 2, 3, 4, 7, 8, 9]

    theta0 = inner.theta_from(STUDY_THETA_1[:inner.n_structural], study_sigma)
    a = ModelCoreService.echelon_model(inner, theta0)
    b = ModelCoreService.echelon_model(outer, F.embed(theta0))
    assert_allclose(a.A, b.A)
    assert_allclose(a.B, b.B, atol=1e-14)


def test_nesting_map_errors():
    space2 = ModelCoreService.study_space("space2")
    space3 = ModelCoreService.study_space("space3")
    with pytest.raises(AppException) as exc:
        ModelCoreService.nesting_map(space2, space3)
    assert exc.value.error_code == ErrorCode.NOT_NESTED
    with pytest.raises(AppException) as exc:
        NestingMap(F=np.eye(3), c=np.zeros(3))
    assert exc.value.error_code == ErrorCode.NOT_NESTED


def test_space_config_and_theta_from(study_sigma):
    space = SpaceConfig(name="s", kronecker=[1, 2], ma_cap=1, bound=5.0).to_space()
    assert space.n_params == 10
    assert_allclose(space.upper, 5.0)
    theta = space.theta_from(list(STUDY_THETA_2), study_sigma)
    _, _, chol = space.split(theta)
    L = np.array([[chol[0], 0.0], [chol[1], chol[2]]])
    assert_allclose(L @ L.T, study_sigma, atol=1e-12)
    assert space.contains(theta)


def test_model_file_round_trip(study_truth):
    space, theta, _ = study_truth
    model_file = ModelFile.from_theta(space, theta)
    assert model_file.kronecker == [1, 2]
    assert len(model_file.theta) == space.n_structural
    assert_allclose(model_file.full_theta(), theta)

    broken = model_file.model_copy(update={"sigma_chol": [1.0]})
    with pytest.raises(AppException) as exc:
        broken.full_theta()
    assert exc.value.error_code == ErrorCode.DIMENSION_MISMATCH
