import logging
import os
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from app.core.config import get_settings
from app.core.errors import ConfigurationError, NumericalError
from app.core.integrators import IIFConfig, SemiDiscreteSystem, run_integration
from app.core.operator_assembly import DEFAULT_SIGMA, BoundaryCondition, PenaltySpec, assemble_diffusion
from app.core.problems import heat_kappa, l2_errors, make_example, species_names
from app.core.sparse_space import GridKind, enumerate_dofs, snapshot_frame

logger = logging.getLogger(__name__)

PATTERN_TIMES = (0.5, 0.6, 0.7, 0.8, 1.0, 1.5)
KRYLOV_STUDY_DIMS = (10, 25, 100, 250, 500)
DENSE_EIGEN_LIMIT = 2000


class RunConfig(BaseModel):
    """One experiment, validated before anything is allocated."""
    example: int = Field(1, ge=1, le=5)
    d: int = Field(2, ge=2, le=3)
    k_poly: int = Field(1, ge=0, le=5)
    N: Optional[int] = Field(None, ge=0)
    nmin: Optional[int] = Field(None, ge=0)
    nmax: Optional[int] = Field(None, ge=0)
    grid_kind: GridKind = GridKind.SPARSE
    dt: str = "h"
    T_final: Optional[float] = Field(None, ge=0)
    M: int = Field(25, ge=1)
    integrator: Literal["iif2", "iif3", "rk2", "rk3"] = "iif2"
    output_dir: Optional[str] = None
    snapshot_times: List[float] = Field(default_factory=list)
    seed: int = 0
    sigma: float = Field(DEFAULT_SIGMA, gt=0)
    v_amplitude: Optional[float] = None
    perturbation: Optional[float] = None

    @field_validator("dt")
    @classmethod
    def _check_dt(cls, value: str) -> str:
        value = value.strip().lower()
        number = value[:-1] if value.endswith("h") else value
        if number:
            try:
                factor = float(number)
            except ValueError:
                raise ValueError(f"dt must be 'h', '<factor>h' or an absolute step, got {value!r}")
            if not factor > 0:
                raise ValueError(f"dt must be positive, got {value!r}")
        return value

    @model_validator(mode="after")
    def _check_levels(self) -> "RunConfig":
        if self.nmin is not None and self.nmax is not None and self.nmin > self.nmax:
            raise ValueError(f"nmin={self.nmin} is larger than nmax={self.nmax}")
        if self.example == 5 and self.d != 2:
            raise ValueError("example 5 is two-dimensional")
        return self

    def levels(self) -> List[int]:
        if self.nmin is not None or self.nmax is not None:
            low = self.nmin if self.nmin is not None else self.nmax
            high = self.nmax if self.nmax is not None else self.nmin
            return list(range(low, high + 1))
        if self.N is None:
            raise ConfigurationError("a mesh level N (or nmin/nmax) is required")
        return [self.N]

    def level(self) -> int:
        return self.N if self.N is not None else self.levels()[-1]

    def dt_for(self, N: int) -> float:
        if self.dt.endswith("h"):
            factor = float(self.dt[:-1]) if self.dt[:-1] else 1.0
            return factor * 2.0 ** (-N)
        return float(self.dt)

    def problem(self):
        params = {}
        if self.v_amplitude is not None:
            params["v_amplitude"] = self.v_amplitude
        if self.perturbation is not None:
            params["perturbation"] = self.perturbation
        if self.T_final is not None:
            params["T_final"] = self.T_final
        return make_example(self.example, self.d, **params)

    def iif_config(self, N: int, T_final: float) -> IIFConfig:
        return IIFConfig(
            order=int(self.integrator[-1]), dt=self.dt_for(N), M=self.M, T_final=T_final,
            scheme=self.integrator[:-1],
        )

    def build_system(self, problem, dofmap) -> SemiDiscreteSystem:
        return SemiDiscreteSystem.build(problem, dofmap, PenaltySpec(self.sigma, dofmap.N), M=self.M)

    def output_path(self, name: str) -> str:
        directory = self.output_dir or get_settings().output_dir
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, name)


def write_diagnostics(cfg: RunConfig, diagnostics: pd.DataFrame, label: str) -> str:
    """Per-step table (step, t, norm2, newton_iters, krylov_dim_effective) as CSV."""
    path = cfg.output_path(f"diagnostics_{label}.csv")
    diagnostics.to_csv(path, index=False)
    logger.debug(f"Wrote {len(diagnostics)} diagnostic rows to {path}")
    return path


def run_single(cfg: RunConfig, N: int) -> Dict[str, object]:
    """Integrate one level to T_final and measure the per-species L2 errors."""
    problem = cfg.problem()
    dofmap = enumerate_dofs(problem.d, cfg.k_poly, N, cfg.grid_kind)
    started = time.perf_counter()
    result = run_integration(cfg.iif_config(N, problem.T_final), problem, dofmap,
                             system=cfg.build_system(problem, dofmap))
    errors = l2_errors(result.U, result.t, problem, dofmap)
    cpu = time.perf_counter() - started
    label = f"ex{cfg.example}_{cfg.d}d_P{cfg.k_poly}_{cfg.grid_kind.value}_{cfg.integrator}_N{N}"
    diagnostics_path = write_diagnostics(cfg, result.diagnostics, label)
    logger.info(f"N={N} DOF={dofmap.size} errors={np.array2string(errors, precision=3)} "
                f"cpu={cpu:.2f}s ({cpu / max(result.steps, 1) / dofmap.size:.3e} s per step and dof)")
    return {"N": N, "DOF": dofmap.size, "errors": errors, "cpu_seconds": cpu, "diagnostics_path": diagnostics_path}


def convergence_table(runs: Sequence[Dict[str, object]]) -> pd.DataFrame:
    """Columns N, DOF, error_s0, order_s0, ..., cpu_seconds; order(N) = log2(e(N-1) / e(N))."""
    runs = sorted(runs, key=lambda row: row["N"])
    n_species = len(runs[0]["errors"]) if runs else 1
    data = {"N": [r["N"] for r in runs], "DOF": [r["DOF"] for r in runs]}
    for s in range(n_species):
        errors = np.array([r["errors"][s] for r in runs], dtype=float)
        orders = np.full(len(runs), np.nan)
        consecutive = np.diff([r["N"] for r in runs]) == 1
        with np.errstate(divide="ignore", invalid="ignore"):
            orders[1:] = np.where(consecutive, np.log2(errors[:-1] / errors[1:]), np.nan)
        data[f"error_s{s}"] = errors
        data[f"order_s{s}"] = orders
    data["cpu_seconds"] = [r["cpu_seconds"] for r in runs]
    return pd.DataFrame(data)


def run_convergence(cfg: RunConfig, path: Optional[str] = None) -> pd.DataFrame:
    """One run per level in cfg.levels(); the CSV is rewritten (partially) even when a run fails."""
    problem = cfg.problem()
    if problem.exact is None:
        raise ConfigurationError(f"example {cfg.example} has no exact solution for a convergence study")
    path = path or cfg.output_path(
        f"convergence_ex{cfg.example}_{cfg.d}d_P{cfg.k_poly}_{cfg.grid_kind.value}_{cfg.integrator}.csv")
    levels = cfg.levels()
    logger.info(f"Convergence study: example {cfg.example}, d={cfg.d}, P{cfg.k_poly}, N={levels}")

    runs = []
    n_jobs = min(get_settings().n_jobs, len(levels)) if get_settings().n_jobs > 0 else -1
    try:
        jobs = Parallel(n_jobs=n_jobs, return_as="generator")(delayed(run_single)(cfg, N) for N in levels)
        for row in jobs:
            runs.append(row)
    except Exception:
        if runs:
            convergence_table(runs).to_csv(path, index=False)
            logger.error(f"Study aborted; wrote {len(runs)} completed rows to {path}")
        raise
    table = convergence_table(runs)
    table.to_csv(path, index=False)
    logger.info(f"Wrote convergence table to {path}")
    return table


def _cfl_system(d: int, k_poly: int, N: int, grid_kind: GridKind, sigma: float) -> SemiDiscreteSystem:
    problem = make_example(1, d)
    dofmap = enumerate_dofs(d, k_poly, N, grid_kind)
    return SemiDiscreteSystem.build(problem, dofmap, PenaltySpec(sigma, N))


def is_stable(system: SemiDiscreteSystem, U0: np.ndarray, rk_order: int, dt: float,
              T_final: float = 1.0, growth: float = 10.0) -> bool:
    """Explicit RK run to T_final whose norm never exceeds growth * |U0|."""
    cfg = IIFConfig(order=rk_order, dt=dt, T_final=T_final, scheme="rk",
                    max_norm=growth * float(np.linalg.norm(U0)))
    try:
        run_integration(cfg, system.problem, system.dofmap, system=system, U0=U0)
    except NumericalError:
        return False
    return True


def find_cfl(d: int, k_poly: int, N: int, grid_kind: GridKind = GridKind.SPARSE, rk_order: int = 2,
             seed: int = 0, T_final: float = 1.0, max_doublings: int = 60,
             sigma: float = DEFAULT_SIGMA) -> float:
    """
    Numerical CFL number kappa d dt / h_N^2 of explicit RK on the Example 1 operator.

    The bracket starts at CFL 0.001 and doubles until the run is unstable, then
    bisects to three significant digits.
    """
    system = _cfl_system(d, k_poly, N, grid_kind, sigma)
    U0 = system.initial_state()
    rng = np.random.default_rng(seed)
    U0 = U0 + rng.standard_normal(U0.shape) * np.linalg.norm(U0) / np.sqrt(U0.size)
    scale = 2.0 ** (-2 * N) / (heat_kappa(d) * d)

    def stable(cfl):
        return is_stable(system, U0, rk_order, cfl * scale, T_final)

    low, high = None, 0.001
    for _ in range(max_doublings):
        if not stable(high):
            break
        low, high = high, 2.0 * high
    else:
        raise NumericalError(f"no unstable CFL found within {max_doublings} doublings")
    if low is None:
        low = high
        for _ in range(max_doublings):
            low = 0.5 * low
            if stable(low):
                break
        else:
            raise NumericalError(f"no stable CFL found within {max_doublings} halvings")
        high = 2.0 * low

    while (high - low) / low > 1e-4:
        mid = 0.5 * (low + high)
        if stable(mid):
            low = mid
        else:
            high = mid
    cfl = float(f"{0.5 * (low + high):.3g}")
    logger.info(f"CFL d={d} P{k_poly} N={N} {GridKind(grid_kind).value} RK{rk_order}: {cfl}")
    return cfl


@dataclass
class SpectralResult:
    lambda_min: float
    lambda_max: float
    cond2: float
    dofs: int

    @property
    def lambda0(self) -> float:
        return self.lambda_min


def spectral_diagnostics(d: int, k_poly: int, N: int, grid_kind: GridKind = GridKind.SPARSE,
                         bc: Optional[BoundaryCondition] = None, tol: float = 1e-6,
                         max_iter: int = 5000, sigma: float = DEFAULT_SIGMA) -> SpectralResult:
    """Most negative eigenvalue of the kappa = 1 operator and cond2(I - h_N A)."""
    dofmap = enumerate_dofs(d, k_poly, N, grid_kind)
    operator = assemble_diffusion(dofmap, 1.0, bc or BoundaryCondition.periodic(), PenaltySpec(sigma, N))
    A = operator.matrix
    if dofmap.size <= DENSE_EIGEN_LIMIT:
        eigenvalues = scipy.linalg.eigh(A.toarray(), eigvals_only=True)
        lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    else:
        try:
            lam_min = float(eigsh(A, k=1, which="SA", tol=tol, maxiter=max_iter, return_eigenvectors=False)[0])
            lam_max = float(eigsh(A, k=1, which="LA", tol=tol, maxiter=max_iter, return_eigenvectors=False)[0])
        except ArpackNoConvergence as exc:
            raise NumericalError(f"extremal eigenvalue iteration did not converge in {max_iter} steps") from exc
    h = 2.0 ** (-N)
    cond2 = (1.0 - h * lam_min) / (1.0 - h * lam_max)
    logger.info(f"Spectrum d={d} P{k_poly} N={N} {dofmap.grid_kind.value}: "
                f"lambda0={lam_min:.4e} cond2={cond2:.4e}")
    return SpectralResult(lambda_min=lam_min, lambda_max=lam_max, cond2=cond2, dofs=dofmap.size)


def run_krylov_study(cfg: RunConfig, dims: Sequence[int] = KRYLOV_STUDY_DIMS,
                     path: Optional[str] = None) -> pd.DataFrame:
    """Error at T_final for several Krylov dimensions, with dt from cfg and with a single step."""
    if not cfg.integrator.startswith("iif"):
        raise ConfigurationError(f"the Krylov study needs an IIF integrator, got {cfg.integrator}")
    problem = cfg.problem()
    N = cfg.level()
    dofmap = enumerate_dofs(problem.d, cfg.k_poly, N, cfg.grid_kind)
    T = problem.T_final if cfg.T_final is not None else 0.6
    base = cfg.build_system(problem, dofmap)
    rows = []
    for M in dims:
        system = base.with_krylov_dim(M)
        row = {"M": M}
        for label, dt in (("error_dt_rule", cfg.dt_for(N)), ("error_one_step", T)):
            step_cfg = replace(cfg.iif_config(N, T), dt=dt, M=M)
            result = run_integration(step_cfg, problem, dofmap, system=system)
            row[label] = float(np.sqrt(np.sum(l2_errors(result.U, result.t, problem, dofmap) ** 2)))
        logger.info(f"Krylov study M={M}: {row}")
        rows.append(row)
    table = pd.DataFrame(rows)
    path = path or cfg.output_path(f"krylov_ex{cfg.example}_{cfg.d}d_P{cfg.k_poly}_N{N}.csv")
    table.to_csv(path, index=False)
    return table


def count_local_maxima(values: np.ndarray, atol: float = 1e-10) -> int:
    """Strict local maxima more than atol above the mean on a periodic 2D lattice (8-neighbourhood)."""
    above = values > values.mean() + atol
    for shift in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]:
        above &= values > np.roll(values, shift, axis=(0, 1))
    return int(above.sum())


@dataclass
class PatternResult:
    snapshots: Dict[float, pd.DataFrame]
    maxima: Dict[float, int]
    paths: List[str]
    diagnostics_path: str = ""


def run_pattern(cfg: RunConfig, times: Sequence[float] = PATTERN_TIMES, n_points: int = 256) -> PatternResult:
    """Schnakenberg run writing both species on the plotting lattice at every snapshot time."""
    if cfg.example != 5:
        raise ConfigurationError("pattern runs use example 5")
    problem = cfg.problem()
    N = cfg.level()
    times = sorted(set(cfg.snapshot_times or times))
    T_final = max(times)
    dofmap = enumerate_dofs(2, cfg.k_poly, N, cfg.grid_kind)
    result = run_integration(cfg.iif_config(N, T_final), problem, dofmap, snapshot_times=times,
                             system=cfg.build_system(problem, dofmap))

    names = species_names(problem)
    frames, maxima, paths = {}, {}, []
    for t in times:
        frame = snapshot_frame(result.snapshots[t], dofmap, n_points)
        frame = frame.rename(columns={f"species_{s}": name for s, name in enumerate(names)})
        # the lattice repeats x = 0 at x = 1; drop it before the periodic comparison
        field = frame[names[0]].to_numpy().reshape(n_points, n_points)[:-1, :-1]
        maxima[t] = count_local_maxima(field)
        path = cfg.output_path(f"pattern_N{N}_t{t:.2f}.csv")
        frame.to_csv(path, index=False)
        frames[t] = frame
        paths.append(path)
        logger.info(f"t={t:.2f}: {names[0]} in [{field.min():.5f}, {field.max():.5f}], "
                    f"{maxima[t]} local maxima -> {path}")
    diagnostics_path = write_diagnostics(cfg, result.diagnostics, f"pattern_N{N}")
    return PatternResult(snapshots=frames, maxima=maxima, paths=paths, diagnostics_path=diagnostics_path)
