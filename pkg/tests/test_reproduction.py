"""Published table values; run with `pytest -m slow`."""
import numpy as np
import pytest

from app.core.sparse_space import GridKind
from app.harness.studies import (
    RunConfig,
    find_cfl,
    run_convergence,
    run_krylov_study,
    run_pattern,
    run_single,
    spectral_diagnostics,
)

pytestmark = pytest.mark.slow


def test_heat_accuracy_at_level_5():
    row = run_single(RunConfig(example=1, k_poly=1, N=5, dt="h", T_final=2.0), 5)
    assert row["DOF"] == 448
    assert row["errors"][0] == pytest.approx(7.42e-3, rel=0.3)


def test_three_dimensional_spectrum():
    result = spectral_diagnostics(3, 1, 3, GridKind.SPARSE)
    assert result.dofs == 304
    assert result.lambda0 == pytest.approx(-4.03e4, rel=0.05)


@pytest.mark.parametrize("grid_kind, N, expected", [(GridKind.FULL, 4, 0.00416), (GridKind.SPARSE, 5, 0.00806)])
def test_rk2_cfl_numbers(grid_kind, N, expected):
    assert find_cfl(2, 1, N, grid_kind, rk_order=2) == pytest.approx(expected, rel=0.10)


def test_stiff_system_error_ratio():
    cfg = RunConfig(example=4, k_poly=1, N=5)
    errors = run_single(cfg, 5)["errors"]
    assert errors[1] / errors[0] == pytest.approx(99.0, rel=0.05)


def test_single_step_matches_fine_steps_with_large_krylov_space(tmp_path):
    cfg = RunConfig(example=1, k_poly=1, N=7, T_final=0.6, output_dir=str(tmp_path))
    table = run_krylov_study(cfg, dims=(100,))
    dt_rule, one_step = table.loc[0, ["error_dt_rule", "error_one_step"]]
    assert one_step == pytest.approx(8.4e-4, rel=0.05)
    assert abs(one_step - dt_rule) <= 0.02 * dt_rule
    assert np.isfinite(table.to_numpy()).all()


@pytest.mark.parametrize("k_poly, nmin, integrator, final_order", [(1, 4, "iif2", 2.01), (2, 3, "iif3", 2.80)])
def test_heat_convergence_orders(tmp_path, k_poly, nmin, integrator, final_order):
    cfg = RunConfig(example=1, k_poly=k_poly, nmin=nmin, nmax=8, integrator=integrator, T_final=2.0,
                    output_dir=str(tmp_path))
    table = run_convergence(cfg)
    orders = table["order_s0"].to_numpy()[1:]
    assert np.all(np.diff(table["error_s0"]) < 0)
    assert orders[-1] == pytest.approx(final_order, abs=0.25)
    assert np.all(orders > k_poly + 0.5)


@pytest.mark.parametrize("example", [2, 3])
@pytest.mark.parametrize("k_poly, integrator, final_order", [(1, "iif2", 2.0), (2, "iif3", 2.75)])
def test_reaction_convergence_orders(tmp_path, example, k_poly, integrator, final_order):
    cfg = RunConfig(example=example, k_poly=k_poly, nmin=3, nmax=7, integrator=integrator,
                    output_dir=str(tmp_path))
    table = run_convergence(cfg)
    assert np.all(np.diff(table["error_s0"]) < 0)
    assert table["order_s0"].iloc[-1] == pytest.approx(final_order, abs=0.3)


def test_activator_forms_spots(tmp_path):
    cfg = RunConfig(example=5, k_poly=2, N=7, M=100, integrator="iif3", output_dir=str(tmp_path))
    result = run_pattern(cfg)
    final = result.snapshots[1.5]
    assert np.isfinite(final[["C_a", "C_i"]].to_numpy()).all()
    assert result.maxima[1.5] >= 3
