"""
Time integration of the semi-discrete system dU/dt = A U + F(U, t).

Implicit integration factor (IIF) schemes of order r treat A exactly through
Krylov exponential actions and the reaction implicitly:

    U^{n+1} = e^{A dt} U^n + dt sum_{i=0}^{r-2} alpha_{-i} e^{A (dt + i dt)} F^{n-i}
              + dt alpha_1 F(U^{n+1}, t^{n+1})

The alphas integrate the Lagrange basis through t^{n+1}, t^n, ..., t^{n+2-r}.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy

from app.core.errors import BlowUpError, ConfigurationError, ConvergenceError, NumericalError
from app.core.krylov_expm import DEFAULT_KRYLOV_DIM, expm_multiply, gmres
from app.core.operator_assembly import (
    BCKind,
    DiffusionOperator,
    PenaltySpec,
    assemble_species_operators,
    dirichlet_load,
)
from app.core.problems import ProblemSpec, ReactionJacobian, eval_reaction, initial_coefficients
from app.core.sparse_space import DofMap, split_species

logger = logging.getLogger(__name__)

DIAGNOSTIC_COLUMNS = ["step", "t", "norm2", "newton_iters", "krylov_dim_effective"]
SCHEMES = ("iif", "rk")


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    inner_tol: float = 1e-12
    inner_max_iter: int = 200

    def __post_init__(self):
        if min(self.abs_tol, self.rel_tol, self.inner_tol) <= 0:
            raise ConfigurationError("Newton tolerances must be positive")
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise ConfigurationError("Newton iteration limits must be >= 1")


@dataclass
class IIFConfig:
    """
    Time-stepping setup. scheme "iif" runs IIF of the given order, "rk" the
    explicit Runge-Kutta method of the same order.
    """
    order: int = 2
    dt: float = 0.0
    M: int = DEFAULT_KRYLOV_DIM
    T_final: float = 1.0
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    scheme: str = "iif"
    max_norm: float = 1e6

    def __post_init__(self):
        if self.order not in (2, 3):
            raise ConfigurationError(f"time integration order must be 2 or 3, got {self.order}")
        if not self.dt > 0:
            raise ConfigurationError(f"time step must be positive, got {self.dt}")
        if self.M < 1:
            raise ConfigurationError(f"Krylov dimension must be >= 1, got {self.M}")
        if self.T_final < 0:
            raise ConfigurationError(f"final time must be >= 0, got {self.T_final}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    @property
    def name(self) -> str:
        return f"{self.scheme}{self.order}"


@lru_cache(maxsize=None)
def iif_coefficients(r: int, ratio=1) -> Tuple[sympy.Rational, ...]:
    """
    Exact coefficients (alpha_1, alpha_0, ..., alpha_{2-r}).

    Nodes in units of the current step: 1, 0, -ratio, -2 ratio, ... where ratio is
    the spacing of the history nodes over the current step (1 for uniform steps).
    """
    if not 1 <= r <= 6:
        raise ConfigurationError(f"IIF order must be between 1 and 6, got {r}")
    s = sympy.Symbol("s")
    rho = sympy.nsimplify(ratio)
    if not rho > 0:
        raise ConfigurationError(f"history spacing ratio must be positive, got {ratio}")
    nodes = [sympy.Integer(1)] + [-i * rho for i in range(r - 1)]
    coeffs = []
    for i, node in enumerate(nodes):
        basis = sympy.Integer(1)
        for j, other in enumerate(nodes):
            if j != i:
                basis *= (s - other) / (node - other)
        coeffs.append(sympy.nsimplify(sympy.integrate(sympy.expand(basis), (s, 0, 1))))
    return tuple(coeffs)


def iif_weights(r: int, ratio: float = 1.0) -> np.ndarray:
    if ratio == 1.0:
        return np.array([float(c) for c in iif_coefficients(r)])
    return np.array([float(c) for c in iif_coefficients(r, sympy.Rational(ratio).limit_denominator(10 ** 12))])


class SemiDiscreteSystem:
    """Block-diagonal diffusion per species plus the reaction/forcing/boundary functional F."""

    def __init__(self, problem: ProblemSpec, dofmap: DofMap, operators: Sequence[DiffusionOperator],
                 penalty: PenaltySpec, M: int = DEFAULT_KRYLOV_DIM):
        self.problem = problem
        self.dofmap = dofmap
        self.operators = list(operators)
        self.penalty = penalty
        self.M = M
        self.has_boundary_data = BCKind(problem.bc.kind) is BCKind.DIRICHLET and problem.bc.g is not None

    @classmethod
    def build(cls, problem: ProblemSpec, dofmap: DofMap, penalty: Optional[PenaltySpec] = None,
              M: int = DEFAULT_KRYLOV_DIM) -> "SemiDiscreteSystem":
        if dofmap.d != problem.d:
            raise ConfigurationError(f"{dofmap} does not match the {problem.d}-dimensional {problem.name} problem")
        penalty = penalty or PenaltySpec(N=dofmap.N)
        operators = assemble_species_operators(dofmap, problem.kappa, problem.bc, penalty)
        return cls(problem, dofmap, operators, penalty, M)

    def with_krylov_dim(self, M: int) -> "SemiDiscreteSystem":
        """Same assembled operators, another Krylov dimension."""
        return SemiDiscreteSystem(self.problem, self.dofmap, self.operators, self.penalty, M)

    @property
    def size(self) -> int:
        return self.dofmap.size * self.problem.n_species

    @property
    def has_source(self) -> bool:
        return self.problem.has_reaction or self.has_boundary_data

    def initial_state(self) -> np.ndarray:
        return initial_coefficients(self.problem, self.dofmap)

    def diffusion(self, U: np.ndarray) -> np.ndarray:
        blocks = split_species(U, self.dofmap)
        return np.concatenate([op.matvec(block) for op, block in zip(self.operators, blocks)])

    def propagate(self, U: np.ndarray, tau: float) -> Tuple[np.ndarray, int]:
        """e^{A tau} U species by species; also the largest Krylov dimension used."""
        parts, dims = [], [0]
        for op, block in zip(self.operators, split_species(U, self.dofmap)):
            part, m_eff = expm_multiply(op.matrix, block, tau, self.M, full_output=True)
            parts.append(part)
            dims.append(m_eff)
        return np.concatenate(parts), max(dims)

    def source(self, U: np.ndarray, t: float) -> np.ndarray:
        """F(U, t) = projected reaction + forcing + Dirichlet boundary functional."""
        out = eval_reaction(U, t, self.problem, self.dofmap)
        if self.has_boundary_data:
            out = out + np.concatenate([
                dirichlet_load(self.dofmap, self.problem.bc, op.kappa, self.penalty, t) for op in self.operators
            ])
        return out

    def jacobian(self, U: np.ndarray, t: float) -> ReactionJacobian:
        return ReactionJacobian(U, t, self.problem, self.dofmap)

    def rhs(self, U: np.ndarray, t: float) -> np.ndarray:
        out = self.diffusion(U)
        if self.has_source:
            out = out + self.source(U, t)
        return out


@dataclass
class StepHistory:
    """U^n with F^n, F^{n-1}, ... (most recent first) and the spacing of those history nodes."""
    U: np.ndarray
    t: float
    F: List[np.ndarray]
    spacing: float = 0.0

    @property
    def depth(self) -> int:
        return len(self.F)


@dataclass
class NewtonResult:
    U: np.ndarray
    iterations: int
    residuals: List[float]


def newton_solve(residual: Callable[[np.ndarray], np.ndarray],
                 jacobian: Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]],
                 U_guess: np.ndarray, cfg: NewtonConfig) -> NewtonResult:
    """
    Newton iteration for G(U) = 0 with GMRES inner solves.

    jacobian(U) returns the action w -> G'(U) w. Stops when ||G||_inf <= abs_tol
    or ||G||_inf <= rel_tol * ||G(U_guess)||_inf.
    """
    U = np.array(U_guess, dtype=float)
    G = residual(U)
    r0 = float(np.max(np.abs(G))) if G.size else 0.0
    history = [r0]
    if r0 <= cfg.abs_tol:
        return NewtonResult(U, 0, history)

    for iteration in range(1, cfg.max_iter + 1):
        delta, _ = gmres(jacobian(U), -G, tol=cfg.inner_tol, max_iter=cfg.inner_max_iter)
        U = U + delta
        G = residual(U)
        r = float(np.max(np.abs(G)))
        history.append(r)
        if not np.isfinite(r):
            raise NumericalError(f"Newton residual became {r} at iteration {iteration}")
        logger.debug(f"Newton iteration {iteration}: residual {r:.3e}")
        if r <= cfg.abs_tol or r <= cfg.rel_tol * r0:
            return NewtonResult(U, iteration, history)
    raise ConvergenceError(f"Newton did not converge in {cfg.max_iter} iterations "
                           f"(residual {history[-1]:.3e})", residuals=history)


@dataclass
class StepResult:
    U: np.ndarray
    F: Optional[np.ndarray]
    newton_iters: int
    krylov_dim: int


def step_iif(order: int, system: SemiDiscreteSystem, history: StepHistory, dt: float,
             newton: Optional[NewtonConfig] = None) -> StepResult:
    """One IIF step of the given order from history.t to history.t + dt."""
    if history.depth < order - 1:
        raise ConfigurationError(f"IIF{order} needs {order - 1} history terms, got {history.depth}")
    newton = newton or NewtonConfig()
    t_next = history.t + dt
    krylov_dim = 0

    if not system.has_source:
        U_next, krylov_dim = system.propagate(history.U, dt)
        return StepResult(U_next, None, 0, krylov_dim)

    ratio = history.spacing / dt if order > 2 else 1.0
    alpha = iif_weights(order, ratio)
    # Horner form: only the outermost propagation uses the current step.
    w = dt * alpha[order - 1] * history.F[order - 2]
    for i in range(order - 3, -1, -1):
        w, m_eff = system.propagate(w, history.spacing)
        krylov_dim = max(krylov_dim, m_eff)
        w = w + dt * alpha[i + 1] * history.F[i]
    explicit, m_eff = system.propagate(history.U + w, dt)
    krylov_dim = max(krylov_dim, m_eff)

    implicit_weight = dt * alpha[0]
    latest = {}

    def residual(V):
        latest["F"] = system.source(V, t_next)
        return V - implicit_weight * latest["F"] - explicit

    def jacobian(V):
        reaction = system.jacobian(V, t_next)
        return lambda w_: w_ - implicit_weight * reaction.matvec(w_)

    result = newton_solve(residual, jacobian, explicit, newton)
    if not np.all(np.isfinite(result.U)):
        raise NumericalError(f"IIF{order} step to t={t_next:.6g} produced NaN/Inf")
    return StepResult(result.U, latest["F"], result.iterations, krylov_dim)


def step_rk_explicit(order: int, rhs: Callable[[np.ndarray, float], np.ndarray],
                     U: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Heun's method (order 2) or Kutta's third-order method (order 3)."""
    if order == 2:
        k1 = rhs(U, t)
        k2 = rhs(U + dt * k1, t + dt)
        U_next = U + 0.5 * dt * (k1 + k2)
    elif order == 3:
        k1 = rhs(U, t)
        k2 = rhs(U + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = rhs(U - dt * k1 + 2.0 * dt * k2, t + dt)
        U_next = U + dt / 6.0 * (k1 + 4.0 * k2 + k3)
    else:
        raise ConfigurationError(f"explicit Runge-Kutta order must be 2 or 3, got {order}")
    if not np.all(np.isfinite(U_next)):
        raise NumericalError(f"RK{order} step to t={t + dt:.6g} produced NaN/Inf")
    return U_next


@dataclass
class IntegrationResult:
    U: np.ndarray
    t: float
    diagnostics: pd.DataFrame
    snapshots: Dict[float, np.ndarray]
    system: SemiDiscreteSystem

    @property
    def steps(self) -> int:
        return len(self.diagnostics)


def _stop_times(T_final: float, snapshot_times: Sequence[float]) -> List[float]:
    stops = sorted({float(s) for s in snapshot_times if 0.0 < s < T_final} | {float(T_final)})
    return [s for s in stops if s > 0.0]


def run_integration(cfg: IIFConfig, problem: ProblemSpec, dofmap: DofMap,
                    snapshot_times: Sequence[float] = (), system: Optional[SemiDiscreteSystem] = None,
                    U0: Optional[np.ndarray] = None) -> IntegrationResult:
    """
    Integrate from t = 0 to cfg.T_final. Steps are shortened to land exactly on
    snapshot times and on T_final; IIF3 starts with one IIF2 step.
    """
    snapshot_times = tuple(float(s) for s in snapshot_times)
    if system is None:
        system = SemiDiscreteSystem.build(problem, dofmap, M=cfg.M)
    U = system.initial_state() if U0 is None else np.array(U0, dtype=float)
    if U.shape != (system.size,):
        raise ConfigurationError(f"initial state of shape {U.shape}, expected ({system.size},)")

    snapshots = {}
    if any(s == 0.0 for s in snapshot_times):
        snapshots[0.0] = U.copy()
    rows = []
    t = 0.0
    step = 0
    history = None
    eps = 1e-12 * max(cfg.dt, 1.0)
    logger.info(f"Integrating {problem.name} with {cfg.name}: {system.size} unknowns, "
                f"dt={cfg.dt:.6g}, T={cfg.T_final:.6g}, M={cfg.M}")

    for stop in _stop_times(cfg.T_final, snapshot_times):
        while t < stop - eps:
            dt = stop - t if stop - t <= cfg.dt * (1.0 + 1e-9) else cfg.dt
            t_next = stop if dt == stop - t else t + dt
            newton_iters, krylov_dim = 0, 0
            if cfg.scheme == "rk":
                U = step_rk_explicit(cfg.order, system.rhs, U, t, dt)
            else:
                if history is None:
                    F0 = system.source(U, t) if system.has_source else None
                    history = StepHistory(U, t, [F0], spacing=dt)
                order = 2 if history.depth < cfg.order - 1 else cfg.order
                result = step_iif(order, system, history, dt, cfg.newton)
                U, newton_iters, krylov_dim = result.U, result.newton_iters, result.krylov_dim
                F_next = result.F
                if system.has_source and F_next is None:
                    F_next = system.source(U, t_next)
                history = StepHistory(U, t_next, ([F_next] + history.F)[:cfg.order - 1], spacing=dt)
            t = t_next
            step += 1
            norm = float(np.linalg.norm(U))
            rows.append((step, t, norm, newton_iters, krylov_dim))
            if not np.isfinite(norm):
                raise NumericalError(f"solution became NaN/Inf at step {step} (t={t:.6g})", step=step)
            if norm > cfg.max_norm:
                raise BlowUpError(f"solution norm {norm:.3e} exceeded {cfg.max_norm:.3e} at step {step} "
                                  f"(t={t:.6g})", step=step)
            logger.debug(f"step {step}: t={t:.6g} |U|={norm:.6e} newton={newton_iters} m={krylov_dim}")
        if stop in snapshot_times or any(abs(stop - s) <= eps for s in snapshot_times):
            snapshots[stop] = U.copy()

    diagnostics = pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS)
    logger.info(f"Finished {problem.name} at t={t:.6g} after {step} steps")
    return IntegrationResult(U=U, t=t, diagnostics=diagnostics, snapshots=snapshots, system=system)
