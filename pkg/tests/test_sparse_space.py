import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.core.sparse_space import (
    FullGridField,
    check_fullgrid_size,
    GridKind,
    HierIndex,
    count_dofs,
    enumerate_dofs,
    eval_point,
    from_fullgrid,
    gauss_points_1d,
    project_l2,
    snapshot_frame,
    split_species,
    to_fullgrid,
)

PUBLISHED_DOFS = [
    (2, 1, GridKind.SPARSE, range(3, 10), [80, 192, 448, 1024, 2304, 5120, 11264]),
    (2, 2, GridKind.SPARSE, range(3, 9), [180, 432, 1008, 2304, 5184, 11520]),
    (3, 1, GridKind.SPARSE, range(3, 10), [304, 832, 2176, 5504, 13568, 32768, 77824]),
    (3, 2, GridKind.SPARSE, range(3, 9), [1026, 2808, 7344, 18576, 45792, 110592]),
    (2, 1, GridKind.FULL, range(3, 7), [256, 1024, 4096, 16384]),
]


@pytest.mark.parametrize("d, k_poly, grid_kind, levels, expected", PUBLISHED_DOFS)
def test_dof_counts_match_published_tables(d, k_poly, grid_kind, levels, expected):
    assert [count_dofs(d, k_poly, N, grid_kind) for N in levels] == expected
    assert [enumerate_dofs(d, k_poly, N, grid_kind).size for N in levels] == expected


def test_enumeration_is_complete_and_duplicate_free(sparse_2d):
    assert len(set(sparse_2d.flat.tolist())) == sparse_2d.size
    assert np.all(sparse_2d.levels().sum(axis=1) <= sparse_2d.N)
    assert np.all(np.diff(sparse_2d.levels().sum(axis=1)) >= 0)


def test_index_lookup_roundtrip(sparse_2d):
    for i in range(sparse_2d.size):
        idx = sparse_2d[i]
        assert isinstance(idx, HierIndex)
        assert sparse_2d.index(idx) == i
    assert sparse_2d.constant_mode() == 0


def test_sparse_space_is_contained_in_full_space(sparse_2d, full_2d):
    assert set(sparse_2d.flat.tolist()) <= set(full_2d.flat.tolist())


def test_dof_guard():
    with pytest.raises(ConfigurationError):
        enumerate_dofs(3, 2, 8, max_dofs=1000)
    with pytest.raises(ConfigurationError):
        enumerate_dofs(0, 1, 3)


def test_projection_reproduces_polynomials_in_the_space(sparse_2d, rng):
    f = lambda x: (1.0 + x[0]) * (2.0 - 3.0 * x[1])
    c = project_l2(f, sparse_2d)
    for point in rng.uniform(0.0, 1.0, size=(10, 2)):
        assert eval_point(c, sparse_2d, point) == pytest.approx(f(point), abs=1e-12)


def test_parseval_identity(sparse_2d):
    c = project_l2(lambda x: np.sin(2 * np.pi * x[0]) * np.exp(x[1]), sparse_2d)
    q = 4
    values = to_fullgrid(c, sparse_2d).values_at_gauss(q)
    _, w = gauss_points_1d(sparse_2d.N, q)
    l2_squared = w @ (values ** 2) @ w
    assert np.sqrt(l2_squared) == pytest.approx(np.linalg.norm(c), rel=1e-10)


def test_fullgrid_roundtrip(sparse_2d, rng):
    c = rng.standard_normal(sparse_2d.size)
    field = to_fullgrid(c, sparse_2d)
    assert isinstance(field, FullGridField)
    np.testing.assert_allclose(from_fullgrid(field, sparse_2d), c, atol=1e-12)


def test_gauss_values_roundtrip(rng):
    dofmap = enumerate_dofs(2, 2, 2, GridKind.FULL)
    c = rng.standard_normal(dofmap.size)
    field = to_fullgrid(c, dofmap)
    again = FullGridField.from_gauss_values(field.values_at_gauss(), dofmap.k_poly, dofmap.N)
    np.testing.assert_allclose(again.coeffs, field.coeffs, atol=1e-12)


def test_point_evaluation_agrees_with_tensor_evaluation(sparse_2d, rng):
    c = rng.standard_normal(sparse_2d.size)
    xs, ys = np.array([0.1, 0.55, 0.9]), np.array([0.2, 0.7])
    grid = to_fullgrid(c, sparse_2d).evaluate_tensor([xs, ys])
    for a, x in enumerate(xs):
        for b, y in enumerate(ys):
            assert eval_point(c, sparse_2d, [x, y]) == pytest.approx(grid[a, b], abs=1e-12)


def test_eval_point_rejects_bad_input(sparse_2d):
    with pytest.raises(ConfigurationError):
        eval_point(np.zeros(sparse_2d.size), sparse_2d, [0.5, 1.5])
    with pytest.raises(ConfigurationError):
        eval_point(np.zeros(3), sparse_2d, [0.5, 0.5])


def test_species_layout_and_snapshot(sparse_2d):
    u = project_l2(lambda x: 1.0 + 0.0 * x[0], sparse_2d)
    U = np.concatenate([u, 2.0 * u])
    blocks = split_species(U, sparse_2d)
    assert blocks.shape == (2, sparse_2d.size)
    frame = snapshot_frame(U, sparse_2d, n_points=8)
    assert list(frame.columns) == ["x1", "x2", "species_0", "species_1"]
    assert len(frame) == 64
    np.testing.assert_allclose(frame["species_0"], 1.0, atol=1e-12)
    np.testing.assert_allclose(frame["species_1"], 2.0, atol=1e-12)


def test_fullgrid_guard_counts_coefficients(sparse_2d, monkeypatch):
    check_fullgrid_size(3, 1, 7)
    with pytest.raises(ConfigurationError):
        check_fullgrid_size(3, 1, 8)
    monkeypatch.setenv("SGIIF_MAX_FULLGRID_VALUES", "255")
    with pytest.raises(ConfigurationError):
        to_fullgrid(np.zeros(sparse_2d.size), sparse_2d)
    monkeypatch.setenv("SGIIF_MAX_FULLGRID_VALUES", "256")
    assert to_fullgrid(np.zeros(sparse_2d.size), sparse_2d).coeffs.size == 256


@pytest.mark.parametrize("d, max_values", [(2, 1), (2, 200), (3, 500)])
def test_gauss_slabs_cover_the_gauss_grid(rng, d, max_values):
    dofmap = enumerate_dofs(d, 1, 3, GridKind.SPARSE)
    field = to_fullgrid(rng.standard_normal(dofmap.size), dofmap)
    slabs = list(field.gauss_slabs(q=3, max_values=max_values))
    assert len(slabs) > 1
    np.testing.assert_allclose(np.concatenate([x0 for x0, _ in slabs]), gauss_points_1d(3, 3)[0])
    np.testing.assert_allclose(np.concatenate([v for _, v in slabs], axis=0), field.values_at_gauss(3), atol=1e-12)
