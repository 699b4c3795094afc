"""
Benchmark reaction-diffusion problems and the weak-form reaction term.

Pointwise callables take x as a tuple of broadcastable coordinate arrays and
return one array per species stacked on a leading axis:

    initial(x) -> (S, ...)          exact(x, t) -> (S, ...)
    reaction(u, x, t) -> (S, ...)   reaction_jacobian(u, x, t) -> (S, S, ...)
    forcing(x, t) -> (S, ...)
"""
import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, NumericalError
from app.core.operator_assembly import BoundaryCondition
from app.core.sparse_space import (
    DofMap,
    FullGridField,
    default_quadrature,
    from_fullgrid,
    gauss_coordinates,
    gauss_points_1d,
    project_l2,
    split_species,
    to_fullgrid,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def _stack(*species) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*[np.asarray(s, dtype=float) for s in species]))


def _prod(factors) -> np.ndarray:
    return reduce(np.multiply, factors)


def prod_sin(x) -> np.ndarray:
    return _prod(np.sin(TWO_PI * xi) for xi in x)


def prod_cos(x) -> np.ndarray:
    return _prod(np.cos(TWO_PI * xi) for xi in x)


def heat_kappa(d: int) -> float:
    """k = 1 / (4 d pi^2): Prod sin(2 pi x_i) decays like e^-t."""
    return 1.0 / (4.0 * d * np.pi ** 2)


@dataclass
class ProblemSpec:
    example_id: int
    name: str
    d: int
    kappa: Tuple[float, ...]
    bc: BoundaryCondition
    initial: Callable
    T_final: float
    reaction: Optional[Callable] = None
    reaction_jacobian: Optional[Callable] = None
    forcing: Optional[Callable] = None
    exact: Optional[Callable] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if any(k < 0 for k in self.kappa):
            raise ConfigurationError(f"diffusion constants must be >= 0, got {self.kappa}")
        if self.reaction is not None and self.reaction_jacobian is None:
            raise ConfigurationError(f"{self.name}: a reaction needs its pointwise Jacobian")

    @property
    def n_species(self) -> int:
        return len(self.kappa)

    @property
    def has_reaction(self) -> bool:
        return self.reaction is not None or self.forcing is not None


def _example_1(d: int, **params) -> ProblemSpec:
    k = params.get("kappa", heat_kappa(d))
    return ProblemSpec(
        example_id=1, name="heat", d=d, kappa=(k,),
        bc=BoundaryCondition.periodic(),
        initial=lambda x: _stack(prod_sin(x)),
        exact=lambda x, t: _stack(np.exp(-t) * prod_sin(x)),
        T_final=params.get("T_final", 2.0),
        params={"kappa": k},
    )


def _example_2(d: int, **params) -> ProblemSpec:
    return ProblemSpec(
        example_id=2, name="linear-reaction", d=d, kappa=(heat_kappa(d),),
        bc=BoundaryCondition.periodic(),
        initial=lambda x: _stack(prod_sin(x)),
        reaction=lambda u, x, t: u,
        reaction_jacobian=lambda u, x, t: np.ones((1, 1) + u.shape[1:]),
        forcing=lambda x, t: _stack(-np.exp(-t) * prod_sin(x)),
        exact=lambda x, t: _stack(np.exp(-t) * prod_sin(x)),
        T_final=params.get("T_final", 1.0 if d == 2 else 0.4),
    )


def _example_3(d: int, **params) -> ProblemSpec:
    return ProblemSpec(
        example_id=3, name="quadratic-reaction", d=d, kappa=(heat_kappa(d),),
        bc=BoundaryCondition.dirichlet(),
        initial=lambda x: _stack(prod_sin(x)),
        reaction=lambda u, x, t: u ** 2,
        reaction_jacobian=lambda u, x, t: (2.0 * u)[None],
        forcing=lambda x, t: _stack(-np.exp(-2.0 * t) * prod_sin(x) ** 2),
        exact=lambda x, t: _stack(np.exp(-t) * prod_sin(x)),
        T_final=params.get("T_final", 1.0 if d == 2 else 0.2),
    )


def _example_4(d: int, **params) -> ProblemSpec:
    a = params.get("a", 1.0)
    b = params.get("b", 100.0)
    c = params.get("c", 1.0)
    v_amp = params.get("v_amplitude", b - c)
    if b == c:
        raise ConfigurationError("example 4 needs b != c")
    coupled = v_amp / (b - c)
    k = heat_kappa(d) * a

    def exact(x, t):
        shape = prod_cos(x)
        fast, slow = np.exp(-(a + b) * t), np.exp(-(a + c) * t)
        return _stack(((2.0 - coupled) * fast + coupled * slow) * shape, v_amp * slow * shape)

    def jacobian(u, x, t):
        jac = np.zeros((2, 2) + u.shape[1:])
        jac[0, 0], jac[0, 1], jac[1, 1] = -b, 1.0, -c
        return jac

    return ProblemSpec(
        example_id=4, name="stiff-system", d=d, kappa=(k, k),
        bc=BoundaryCondition.periodic(),
        initial=lambda x: exact(x, 0.0),
        reaction=lambda u, x, t: _stack(-b * u[0] + u[1], -c * u[1]),
        reaction_jacobian=jacobian,
        exact=exact,
        T_final=params.get("T_final", 1.0 if d == 2 else 0.2),
        params={"a": a, "b": b, "c": c, "v_amplitude": v_amp},
    )


def _example_5(d: int, **params) -> ProblemSpec:
    if d != 2:
        raise ConfigurationError("the Schnakenberg pattern problem is two-dimensional")
    a = params.get("a", 0.1305)
    b = params.get("b", 0.7695)
    rate = params.get("rate", 100.0)
    D1 = params.get("D1", 0.05)
    D2 = params.get("D2", 1.0)
    bump = params.get("perturbation", 1e-3)
    center = params.get("center", (1.0 / 3.0, 0.5))

    def initial(x):
        r2 = (x[0] - center[0]) ** 2 + (x[1] - center[1]) ** 2
        return _stack(a + b + bump * np.exp(-100.0 * r2), np.full_like(r2, b / (a + b) ** 2))

    def reaction(u, x, t):
        growth = u[0] ** 2 * u[1]
        return _stack(rate * (a - u[0] + growth), rate * (b - growth))

    def jacobian(u, x, t):
        ca, ci = u
        return rate * np.array([[2.0 * ca * ci - 1.0, ca ** 2], [-2.0 * ca * ci, -ca ** 2]])

    return ProblemSpec(
        example_id=5, name="schnakenberg", d=2, kappa=(D1, D2),
        bc=BoundaryCondition.periodic(),
        initial=initial, reaction=reaction, reaction_jacobian=jacobian,
        T_final=params.get("T_final", 1.5),
        params={"a": a, "b": b, "rate": rate, "D1": D1, "D2": D2, "perturbation": bump},
    )


EXAMPLES = {1: _example_1, 2: _example_2, 3: _example_3, 4: _example_4, 5: _example_5}


def make_example(example_id: int, d: int = 2, **params) -> ProblemSpec:
    """Build one of the five benchmark problems on [0, 1]^d."""
    if example_id not in EXAMPLES:
        raise ConfigurationError(f"unknown example {example_id}; choose one of {sorted(EXAMPLES)}")
    if d not in (2, 3):
        raise ConfigurationError(f"examples are defined for d = 2 or 3, got d = {d}")
    problem = EXAMPLES[example_id](d, **params)
    logger.debug(f"Example {example_id} ({problem.name}) d={d} kappa={problem.kappa}")
    return problem


def project_species(f: Callable, dofmap: DofMap, n_species: int, q: Optional[int] = None) -> np.ndarray:
    """Species-major coefficients of the L2 projection of a stacked pointwise function."""
    blocks = [project_l2(lambda x, s=s: np.asarray(f(x))[s], dofmap, q) for s in range(n_species)]
    return np.concatenate(blocks)


def initial_coefficients(problem: ProblemSpec, dofmap: DofMap) -> np.ndarray:
    return project_species(problem.initial, dofmap, problem.n_species)


def exact_coefficients(problem: ProblemSpec, dofmap: DofMap, t: float) -> np.ndarray:
    if problem.exact is None:
        raise ConfigurationError(f"{problem.name} has no exact solution")
    return project_species(lambda x: problem.exact(x, t), dofmap, problem.n_species)


def _check_state(U: np.ndarray, problem: ProblemSpec, dofmap: DofMap) -> np.ndarray:
    blocks = split_species(U, dofmap)
    if blocks.shape[0] != problem.n_species:
        raise ConfigurationError(f"state has {blocks.shape[0]} species, {problem.name} has {problem.n_species}")
    return blocks


def _gauss_values(blocks: np.ndarray, dofmap: DofMap, q: int) -> np.ndarray:
    return np.array([to_fullgrid(block, dofmap).values_at_gauss(q) for block in blocks])


def _project_values(values: np.ndarray, dofmap: DofMap, q: int) -> np.ndarray:
    return np.concatenate([
        from_fullgrid(FullGridField.from_gauss_values(v, dofmap.k_poly, dofmap.N, q), dofmap)
        for v in values
    ])


def _check_finite(values: np.ndarray, coords, what: str) -> None:
    if np.all(np.isfinite(values)):
        return
    bad = np.unravel_index(np.flatnonzero(~np.isfinite(values))[0], values.shape)
    point = tuple(float(np.broadcast_to(c, values.shape[1:])[bad[1:]]) for c in coords)
    raise NumericalError(f"{what} is not finite for species {bad[0]} at x = {point}")


@dataclass
class ReactionEvaluation:
    """Gauss-point values of u_h and of f(u_h) + forcing, and the projected coefficients."""
    u_values: Optional[np.ndarray]
    f_values: np.ndarray
    coeffs: np.ndarray


def evaluate_reaction(U: np.ndarray, t: float, problem: ProblemSpec, dofmap: DofMap,
                      q: Optional[int] = None) -> ReactionEvaluation:
    blocks = _check_state(U, problem, dofmap)
    q = q or default_quadrature(dofmap.k_poly)
    shape = (problem.n_species,) + (2 ** dofmap.N * q,) * dofmap.d
    if not problem.has_reaction:
        return ReactionEvaluation(None, np.zeros(shape), np.zeros(np.asarray(U).size))

    coords = gauss_coordinates(dofmap.d, dofmap.N, q)
    u_values = None
    values = np.zeros(shape)
    with np.errstate(over="ignore", invalid="ignore"):
        if problem.reaction is not None:
            u_values = _gauss_values(blocks, dofmap, q)
            values += np.broadcast_to(problem.reaction(u_values, coords, t), shape)
        if problem.forcing is not None:
            values += np.broadcast_to(problem.forcing(coords, t), shape)
    _check_finite(values, coords, "reaction")
    return ReactionEvaluation(u_values, values, _project_values(values, dofmap, q))


def eval_reaction(U: np.ndarray, t: float, problem: ProblemSpec, dofmap: DofMap,
                  q: Optional[int] = None) -> np.ndarray:
    """F(U, t): projection of f(u_h, x, t) + forcing, by finest-grid Gauss quadrature."""
    return evaluate_reaction(U, t, problem, dofmap, q).coeffs


class ReactionJacobian:
    """dF/dU frozen at one state; matvec(w) projects f'(u_h) w_h pointwise."""

    def __init__(self, U: np.ndarray, t: float, problem: ProblemSpec, dofmap: DofMap, q: Optional[int] = None):
        self.problem = problem
        self.dofmap = dofmap
        self.q = q or default_quadrature(dofmap.k_poly)
        self.size = np.asarray(U).size
        self.jac = None
        if problem.reaction is not None:
            coords = gauss_coordinates(dofmap.d, dofmap.N, self.q)
            u_values = _gauss_values(_check_state(U, problem, dofmap), dofmap, self.q)
            S = problem.n_species
            self.jac = np.broadcast_to(problem.reaction_jacobian(u_values, coords, t), (S, S) + u_values.shape[1:])
            _check_finite(self.jac.reshape((S * S,) + u_values.shape[1:]), coords, "reaction Jacobian")

    def matvec(self, w: np.ndarray) -> np.ndarray:
        if self.jac is None:
            return np.zeros(self.size)
        w_values = _gauss_values(_check_state(w, self.problem, self.dofmap), self.dofmap, self.q)
        return _project_values(np.einsum("rs...,s...->r...", self.jac, w_values), self.dofmap, self.q)


def reaction_jacobian_matvec(U: np.ndarray, w: np.ndarray, t: float, problem: ProblemSpec,
                             dofmap: DofMap, q: Optional[int] = None) -> np.ndarray:
    return ReactionJacobian(U, t, problem, dofmap, q).matvec(w)


def l2_errors(U: np.ndarray, t: float, problem: ProblemSpec, dofmap: DofMap,
              q: Optional[int] = None) -> np.ndarray:
    """Per-species L2 error against the exact solution, q = k+3 Gauss points per cell and direction."""
    if problem.exact is None:
        raise ConfigurationError(f"{problem.name} has no exact solution")
    q = q or dofmap.k_poly + 3
    blocks = _check_state(U, problem, dofmap)
    x1d, w1d = gauss_points_1d(dofmap.N, q)
    others = np.meshgrid(*([x1d] * (dofmap.d - 1)), indexing="ij", sparse=True)
    squared = np.zeros(problem.n_species)
    for s, block in enumerate(blocks):
        for x0, values in to_fullgrid(block, dofmap).gauss_slabs(q):
            coords = (x0.reshape((-1,) + (1,) * (dofmap.d - 1)),) + tuple(c[None] for c in others)
            diff = values - np.broadcast_to(np.asarray(problem.exact(coords, t))[s], values.shape)
            sq = diff ** 2
            for _ in range(dofmap.d - 1):
                sq = sq @ w1d
            squared[s] += sq @ w1d[:x0.size]  # weights repeat cell by cell
    return np.sqrt(squared)


def l2_error(U: np.ndarray, t: float, problem: ProblemSpec, dofmap: DofMap, q: Optional[int] = None) -> float:
    """L2 error over all species (the plain error for scalar problems)."""
    return float(np.sqrt(np.sum(l2_errors(U, t, problem, dofmap, q) ** 2)))


def species_names(problem: ProblemSpec) -> Sequence[str]:
    if problem.example_id == 5:
        return ("C_a", "C_i")
    if problem.n_species == 2:
        return ("u", "v")
    return ("u",)
