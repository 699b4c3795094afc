import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.core.sparse_space import gauss_points_1d
from app.core.wavelet_basis import (
    BasisConfig,
    Transform1D,
    Wavelet1DIndex,
    eval_basis,
    forward_transform_1d,
    gauss_rule,
    get_wavelets,
    hierarchical_position,
    hierarchical_values_1d,
    inverse_transform_1d,
    legendre_values,
    position_to_index,
)


@pytest.mark.parametrize("k_poly", [0, 1, 2, 3])
def test_hierarchical_basis_is_orthonormal(k_poly):
    N = 3
    x, w = gauss_points_1d(N, k_poly + 2)
    values = hierarchical_values_1d(k_poly, N, x)
    gram = values.T @ (w[:, None] * values)
    np.testing.assert_allclose(gram, np.eye(values.shape[1]), atol=1e-12)


@pytest.mark.parametrize("k_poly", [0, 1, 2, 3])
def test_wavelets_have_vanishing_moments(k_poly):
    N = 3
    x, w = gauss_points_1d(N, k_poly + 2)
    values = hierarchical_values_1d(k_poly, N, x)[:, k_poly + 1:]
    for m in range(k_poly + 1):
        np.testing.assert_allclose((w * x ** m) @ values, 0.0, atol=1e-12)


def test_legendre_values_are_orthonormal_on_unit_interval():
    nodes, weights = gauss_rule(6)
    values = legendre_values(4, nodes)
    np.testing.assert_allclose(values.T @ (weights[:, None] * values), np.eye(5), atol=1e-13)


def test_level_zero_functions_are_scaled_legendre():
    assert eval_basis(Wavelet1DIndex(0, 0, 1), 0.3, k_poly=1) == pytest.approx(1.0)
    assert eval_basis(Wavelet1DIndex(0, 0, 2), 0.3, k_poly=1) == pytest.approx(np.sqrt(3.0) * (0.6 - 1.0))


def test_piecewise_constant_wavelet_is_haar():
    assert eval_basis(Wavelet1DIndex(1, 0, 1), 0.25, k_poly=0) == pytest.approx(-1.0)
    assert eval_basis(Wavelet1DIndex(1, 0, 1), 0.75, k_poly=0) == pytest.approx(1.0)
    wavelets = get_wavelets(0)
    assert wavelets.right[0, 0] > 0


def test_breakpoint_belongs_to_left_cell():
    assert eval_basis(Wavelet1DIndex(2, 0, 1), 0.5, k_poly=0) == pytest.approx(np.sqrt(2.0))
    assert eval_basis(Wavelet1DIndex(2, 1, 1), 0.5, k_poly=0) == 0.0
    assert eval_basis(Wavelet1DIndex(2, 0, 1), 0.0, k_poly=0) == pytest.approx(-np.sqrt(2.0))


@pytest.mark.parametrize("x", [0.0, 0.125, 0.25, 0.3, 0.5, 0.8, 1.0])
def test_point_evaluation_matches_transformed_local_values(x):
    k_poly, N = 2, 3
    row = hierarchical_values_1d(k_poly, N, [x])[0]
    for pos in range(row.size):
        idx = position_to_index(pos, k_poly)
        assert eval_basis(idx, x, k_poly=k_poly) == pytest.approx(row[pos], abs=1e-12)


def test_derivative_matches_finite_difference():
    idx = Wavelet1DIndex(3, 2, 2)
    x, step = 0.55, 1e-6
    fd = (eval_basis(idx, x + step, k_poly=2) - eval_basis(idx, x - step, k_poly=2)) / (2 * step)
    assert eval_basis(idx, x, deriv=1, k_poly=2) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_transform_roundtrip_and_orthogonality(rng):
    k_poly, N = 2, 4
    local = rng.standard_normal((3, (k_poly + 1) * 2 ** N))
    hier = forward_transform_1d(local, k_poly, N)
    np.testing.assert_allclose(inverse_transform_1d(hier, k_poly, N), local, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(hier, axis=1), np.linalg.norm(local, axis=1), rtol=1e-12)

    T = Transform1D(k_poly, N).matrix
    np.testing.assert_allclose(T @ T.T, np.eye(T.shape[0]), atol=1e-12)


def test_transform_along_other_axis(rng):
    k_poly, N = 1, 3
    data = rng.standard_normal((16, 5))
    along_rows = forward_transform_1d(data, k_poly, N, axis=0)
    np.testing.assert_allclose(along_rows, forward_transform_1d(data.T, k_poly, N).T, atol=1e-14)


def test_position_index_roundtrip():
    k_poly, N = 2, 4
    for pos in range((k_poly + 1) * 2 ** N):
        idx = position_to_index(pos, k_poly)
        idx.validate(k_poly)
        assert hierarchical_position(idx, k_poly) == pos


def test_invalid_inputs_are_rejected():
    with pytest.raises(ConfigurationError):
        eval_basis(Wavelet1DIndex(1, 0, 1), 1.5, k_poly=1)
    with pytest.raises(ConfigurationError):
        eval_basis(Wavelet1DIndex(2, 2, 1), 0.5, k_poly=1)
    with pytest.raises(ConfigurationError):
        eval_basis(Wavelet1DIndex(1, 0, 3), 0.5, k_poly=1)
    with pytest.raises(ConfigurationError):
        gauss_rule(0)
    with pytest.raises(ConfigurationError):
        BasisConfig(k_poly=-1, N_max=2)
    with pytest.raises(ConfigurationError):
        forward_transform_1d(np.zeros(7), 1, 2)


def test_basis_config_size():
    assert BasisConfig(k_poly=2, N_max=5).size == 96
