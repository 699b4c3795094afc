"""
Symmetric interior-penalty DG diffusion operator on hierarchical spaces.

With an orthonormal basis the mass matrix is the identity and every face of
the level-N tensor grid is normal to one direction, so the d-dimensional
form is a Kronecker sum of 1D forms restricted to the DofMap index set:

    A[I, J] = -kappa * sum_m S_m[I_m, J_m] * prod_{m' != m} delta(I_m', J_m')
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Sequence

import joblib
import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from app.core.config import get_settings
from app.core.errors import ConfigurationError
from app.core.sparse_space import DofMap, check_fullgrid_size, project_fullgrid
from app.core.wavelet_basis import (
    forward_transform_1d,
    gauss_rule,
    hierarchical_values_1d,
    legendre_values,
)

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 20.0


class BCKind(str, Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class BoundaryCondition:
    """Periodic, or Dirichlet with boundary data g(x, t) (None means g = 0)."""
    kind: BCKind = BCKind.PERIODIC
    g: Optional[Callable] = None

    @classmethod
    def periodic(cls) -> "BoundaryCondition":
        return cls(BCKind.PERIODIC)

    @classmethod
    def dirichlet(cls, g: Optional[Callable] = None) -> "BoundaryCondition":
        return cls(BCKind.DIRICHLET, g)


@dataclass(frozen=True)
class PenaltySpec:
    """
    Penalty sigma / h with h = h_N = 2^-N, summed over cell boundaries.

    An interior face (the periodic wrap-around face included) lies on the
    boundary of both neighbouring cells and carries 2 sigma / h; a Dirichlet
    face belongs to one cell and carries sigma / h.
    """
    sigma: float = DEFAULT_SIGMA
    N: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"penalty sigma must be positive, got {self.sigma}")

    @property
    def h(self) -> float:
        return 2.0 ** (-self.N)

    @property
    def boundary_weight(self) -> float:
        return self.sigma / self.h

    @property
    def interior_weight(self) -> float:
        return 2.0 * self.sigma / self.h


def _memory() -> joblib.Memory:
    return joblib.Memory(get_settings().cache_dir, verbose=0)


def _face_traces(k_poly: int, N: int, bc_kind: BCKind):
    """
    Yield (dofs, jump, average, interior) for every face of the level-N grid.

    jump and average are the linear functionals [w] and {w'} restricted to
    the local dofs touching the face; interior is False on Dirichlet faces.
    """
    width = k_poly + 1
    n_cells = 2 ** N
    h = 2.0 ** (-N)
    val0 = legendre_values(k_poly, 0.0) / np.sqrt(h)
    val1 = legendre_values(k_poly, 1.0) / np.sqrt(h)
    der0 = legendre_values(k_poly, 0.0, 1) / h ** 1.5
    der1 = legendre_values(k_poly, 1.0, 1) / h ** 1.5
    block = lambda cell: np.arange(cell * width, (cell + 1) * width)

    for left in range(n_cells - 1):
        dofs = np.concatenate([block(left), block(left + 1)])
        yield dofs, np.concatenate([val1, -val0]), 0.5 * np.concatenate([der1, der0]), True
    if bc_kind is BCKind.PERIODIC:
        dofs = np.concatenate([block(n_cells - 1), block(0)])
        yield dofs, np.concatenate([val1, -val0]), 0.5 * np.concatenate([der1, der0]), True
    else:
        yield block(0), -val0, der0, False
        yield block(n_cells - 1), val1, der1, False


def _volume_block(k_poly: int, N: int) -> np.ndarray:
    nodes, weights = gauss_rule(k_poly + 2)
    dphi = legendre_values(k_poly, nodes, 1)
    return (dphi.T * weights) @ dphi * 4.0 ** N


def _assemble_local(k_poly: int, N: int, bc_kind: BCKind, face_form: Callable) -> np.ndarray:
    width = k_poly + 1
    size = width * 2 ** N
    out = np.zeros((size, size))
    volume = _volume_block(k_poly, N)
    for cell in range(2 ** N):
        out[cell * width:(cell + 1) * width, cell * width:(cell + 1) * width] += volume
    for dofs, jump, average, interior in _face_traces(k_poly, N, bc_kind):
        np.add.at(out, (dofs[:, None], dofs[None, :]), face_form(jump, average, interior))
    return out


def _to_hierarchical(local: np.ndarray, k_poly: int, N: int) -> np.ndarray:
    """T @ local @ T^T, symmetrised."""
    hier = forward_transform_1d(forward_transform_1d(local, k_poly, N, axis=0), k_poly, N, axis=1)
    return 0.5 * (hier + hier.T)


def _ipdg_hierarchical(k_poly: int, N: int, bc_kind: str, sigma: float) -> np.ndarray:
    penalty = PenaltySpec(sigma, N)

    def face_form(jump, average, interior):
        weight = penalty.interior_weight if interior else penalty.boundary_weight
        return -np.outer(jump, average) - np.outer(average, jump) + weight * np.outer(jump, jump)

    local = _assemble_local(k_poly, N, BCKind(bc_kind), face_form)
    return _to_hierarchical(local, k_poly, N)


def _energy_hierarchical(k_poly: int, N: int, bc_kind: str) -> np.ndarray:
    h = 2.0 ** (-N)

    def face_form(jump, average, interior):
        return h * np.outer(average, average) + np.outer(jump, jump) / h

    local = _assemble_local(k_poly, N, BCKind(bc_kind), face_form)
    return _to_hierarchical(local, k_poly, N)


@lru_cache(maxsize=64)
def _cached_ipdg(k_poly: int, N: int, bc_kind: str, sigma: float) -> np.ndarray:
    matrix = _memory().cache(_ipdg_hierarchical)(k_poly, N, bc_kind, sigma)
    matrix.setflags(write=False)
    return matrix


def build_1d_ipdg(k_poly: int, N: int, bc: BoundaryCondition,
                  penalty: Optional[PenaltySpec] = None) -> np.ndarray:
    """
    Matrix of the 1D SIPG form B(., .) in the hierarchical basis (read-only).

    B(u, v) = sum_cells int u'v' - sum_faces ({u'}[v] + {v'}[u]) + sum_cells sigma/h int_{boundary} [u][v]
    """
    penalty = penalty or PenaltySpec(N=N)
    logger.debug(f"1D IPDG k={k_poly} N={N} bc={bc.kind.value} sigma={penalty.sigma}")
    return _cached_ipdg(k_poly, N, BCKind(bc.kind).value, float(penalty.sigma))


def _group_by_other_directions(positions: np.ndarray, m: int, n1d: int) -> List[np.ndarray]:
    """Split dof indices into groups sharing every 1D index except direction m."""
    d = positions.shape[1]
    if d == 1:
        return [np.arange(positions.shape[0])]
    other = np.delete(positions, m, axis=1)
    keys = np.ravel_multi_index(tuple(other.T), (n1d,) * (d - 1))
    order = np.argsort(keys, kind="stable")
    cuts = np.flatnonzero(np.diff(keys[order])) + 1
    return np.split(order, cuts)


def kronecker_sum_matrix(dofmap: DofMap, mats_1d: Sequence[np.ndarray], scale: float = 1.0) -> sp.csr_matrix:
    """Restriction of scale * sum_m (I x ... x M_m x ... x I) to the dofmap index set."""
    rows, cols, vals = [], [], []
    for m in range(dofmap.d):
        mat = mats_1d[m]
        for group in _group_by_other_directions(dofmap.positions, m, dofmap.n1d):
            local = dofmap.positions[group, m]
            rr, cc = np.meshgrid(group, group, indexing="ij")
            rows.append(rr.reshape(-1))
            cols.append(cc.reshape(-1))
            vals.append(mat[np.ix_(local, local)].reshape(-1))
    matrix = sp.coo_matrix(
        (scale * np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.size, dofmap.size),
    ).tocsr()
    matrix.eliminate_zeros()
    return matrix


@dataclass
class DiffusionOperator:
    """A = -kappa * (matrix of B) for one species, stored CSR."""
    matrix: sp.csr_matrix
    kappa: float
    dofmap: DofMap
    stiffness_1d: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def matvec_free(self, v: np.ndarray) -> np.ndarray:
        """Same action computed on the full hierarchical array, without the stored matrix."""
        dofmap = self.dofmap
        check_fullgrid_size(dofmap.d, dofmap.k_poly, dofmap.N)
        hier = np.zeros(dofmap.full_shape)
        hier.reshape(-1)[dofmap.flat] = v
        out = np.zeros(dofmap.full_shape)
        for m in range(dofmap.d):
            out += np.moveaxis(np.tensordot(self.stiffness_1d, hier, axes=([1], [m])), 0, m)
        return -self.kappa * out.reshape(-1)[dofmap.flat]

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.matvec, dtype=float)

    def to_matrix_market(self, path: str) -> None:
        scipy.io.mmwrite(path, sp.tril(self.matrix).tocoo(), symmetry="symmetric")
        logger.info(f"Wrote {self.shape[0]}x{self.shape[1]} operator ({self.nnz} nonzeros) to {path}")


def assemble_diffusion(dofmap: DofMap, kappa: float, bc: BoundaryCondition,
                       penalty: Optional[PenaltySpec] = None) -> DiffusionOperator:
    """Assemble the diffusion operator of one species once, before time evolution."""
    if kappa < 0:
        raise ConfigurationError(f"diffusion constant must be >= 0, got {kappa}")
    penalty = penalty or PenaltySpec(N=dofmap.N)
    stiffness = build_1d_ipdg(dofmap.k_poly, dofmap.N, bc, penalty)
    matrix = kronecker_sum_matrix(dofmap, [stiffness] * dofmap.d, scale=-float(kappa))
    logger.info(f"Assembled diffusion operator on {dofmap}: kappa={kappa:.6g}, nnz={matrix.nnz}")
    return DiffusionOperator(matrix=matrix, kappa=float(kappa), dofmap=dofmap, stiffness_1d=stiffness)


def assemble_species_operators(dofmap: DofMap, kappas: Sequence[float], bc: BoundaryCondition,
                               penalty: Optional[PenaltySpec] = None) -> List[DiffusionOperator]:
    """One operator per species, sharing the kappa = 1 assembly."""
    unit = assemble_diffusion(dofmap, 1.0, bc, penalty)
    operators = []
    for kappa in kappas:
        if kappa < 0:
            raise ConfigurationError(f"diffusion constant must be >= 0, got {kappa}")
        operators.append(DiffusionOperator(
            matrix=(unit.matrix * float(kappa)).tocsr(), kappa=float(kappa),
            dofmap=dofmap, stiffness_1d=unit.stiffness_1d,
        ))
    return operators


def boundary_trace_vectors(k_poly: int, N: int, sigma: float):
    """
    1D functionals -(v'(x) n - sigma/h v(x)) at x = 0 (n = -1) and x = 1 (n = +1),
    one entry per hierarchical basis function.
    """
    weight = PenaltySpec(sigma, N).boundary_weight
    v0, v1 = hierarchical_values_1d(k_poly, N, [0.0, 1.0])
    d0, d1 = hierarchical_values_1d(k_poly, N, [0.0, 1.0], deriv=1)
    return {0.0: d0 + weight * v0, 1.0: weight * v1 - d1}


def dirichlet_load(dofmap: DofMap, bc: BoundaryCondition, kappa: float,
                   penalty: Optional[PenaltySpec] = None, t: float = 0.0) -> np.ndarray:
    """
    Boundary part of the right-hand side, kappa * L_bd(v) for every basis v:

        L_bd(v) = -int_{boundary} (grad v . n - sigma/h v) g ds

    The penalty part enters with a plus sign (+sigma/h int v g), the sign that
    makes the discrete form consistent: linear solutions satisfy A c + load = 0.
    """
    if BCKind(bc.kind) is not BCKind.DIRICHLET:
        raise ConfigurationError("dirichlet_load requires a Dirichlet boundary condition")
    out = np.zeros(dofmap.size)
    if bc.g is None or kappa == 0:
        return out
    penalty = penalty or PenaltySpec(N=dofmap.N)
    d = dofmap.d
    traces = boundary_trace_vectors(dofmap.k_poly, dofmap.N, penalty.sigma)
    for m in range(d):
        others = [axis for axis in range(d) if axis != m]
        for side, trace in traces.items():
            def on_face(y, m=m, side=side):
                coords = list(y)
                coords.insert(m, np.asarray(side))
                return bc.g(tuple(coords), t)

            if d == 1:
                face = np.asarray(float(np.asarray(on_face(())).reshape(-1)[0]))
                face_part = np.full(dofmap.size, float(face))
            else:
                face = project_fullgrid(on_face, d - 1, dofmap.k_poly, dofmap.N)
                face_part = face[tuple(dofmap.positions[:, others].T)]
            out += trace[dofmap.positions[:, m]] * face_part
    return kappa * out


def energy_norm(c: np.ndarray, dofmap: DofMap, penalty: Optional[PenaltySpec] = None,
                bc: Optional[BoundaryCondition] = None) -> float:
    """
    |||v|||^2 = sum_T int |grad v|^2 + sum_e h int {dv/dn}^2 + sum_e 1/h int [v]^2.

    The penalty spec only fixes the mesh level; sigma does not enter the norm.
    """
    bc = bc or BoundaryCondition.periodic()
    energy_1d = _energy_hierarchical(dofmap.k_poly, dofmap.N, BCKind(bc.kind).value)
    matrix = kronecker_sum_matrix(dofmap, [energy_1d] * dofmap.d)
    c = np.asarray(c, dtype=float)
    return float(np.sqrt(max(float(c @ (matrix @ c)), 0.0)))
