"""
Tensor-product hierarchical DG spaces on [0, 1]^d.

A DofMap enumerates the multi-indices (l, j, p) admitted by the sparse
(|l|_1 <= N) or full (max_m l_m <= N) truncation. Every d-dimensional
operation goes through the full level-N hierarchical array (shape
((k+1) 2^N,)^d): scatter the coefficients, run 1D transforms direction by
direction, then evaluate or gather.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import get_settings
from app.core.errors import ConfigurationError
from app.core.wavelet_basis import (
    forward_transform_1d,
    gauss_rule,
    hierarchical_values_1d,
    inverse_transform_1d,
    legendre_values,
    level_offset,
    local_values_1d,
    position_to_index,
)

logger = logging.getLogger(__name__)

PointFunction = Callable[[Tuple[np.ndarray, ...]], np.ndarray]


class GridKind(str, Enum):
    SPARSE = "sparse"
    FULL = "full"


@dataclass(frozen=True)
class HierIndex:
    """Global degree of freedom: per-dimension level, translation and 1-based polynomial index."""
    l: Tuple[int, ...]
    j: Tuple[int, ...]
    p: Tuple[int, ...]


def admissible_levels(d: int, N: int, grid_kind: GridKind) -> List[Tuple[int, ...]]:
    """Level multi-indices in (|l|_1, l) order."""
    levels = itertools.product(range(N + 1), repeat=d)
    if GridKind(grid_kind) is GridKind.SPARSE:
        levels = (l for l in levels if sum(l) <= N)
    return sorted(levels, key=lambda l: (sum(l), l))


def count_dofs(d: int, k_poly: int, N: int, grid_kind: GridKind) -> int:
    """Closed-form count: sum over admissible l of (k+1)^d prod max(1, 2^(l_m - 1))."""
    total = 0
    for l in admissible_levels(d, N, grid_kind):
        total += (k_poly + 1) ** d * int(np.prod([max(1, 2 ** (lm - 1)) for lm in l]))
    return total


class DofMap:
    """Ordered enumeration of HierIndex values with inverse lookup."""

    def __init__(self, d: int, k_poly: int, N: int, grid_kind: GridKind, positions: np.ndarray):
        self.d = d
        self.k_poly = k_poly
        self.N = N
        self.grid_kind = GridKind(grid_kind)
        self.positions = positions
        self.positions.setflags(write=False)
        self.flat = np.ravel_multi_index(tuple(positions.T), self.full_shape)
        self.flat.setflags(write=False)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"DofMap(d={self.d}, k={self.k_poly}, N={self.N}, {self.grid_kind.value}, size={self.size})"

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def n1d(self) -> int:
        return (self.k_poly + 1) * 2 ** self.N

    @property
    def full_shape(self) -> Tuple[int, ...]:
        return (self.n1d,) * self.d

    @property
    def h(self) -> float:
        return 2.0 ** (-self.N)

    def __getitem__(self, i: int) -> HierIndex:
        parts = [position_to_index(int(pos), self.k_poly) for pos in self.positions[i]]
        return HierIndex(
            l=tuple(w.n for w in parts),
            j=tuple(w.j for w in parts),
            p=tuple(w.p for w in parts),
        )

    @cached_property
    def _lookup(self) -> Dict[int, int]:
        return {int(f): i for i, f in enumerate(self.flat)}

    def index(self, idx: HierIndex) -> int:
        """Position of idx in the enumeration (KeyError if not admitted)."""
        pos = []
        for n, j, p in zip(idx.l, idx.j, idx.p):
            pos.append(level_offset(n, self.k_poly) + j * (self.k_poly + 1) + (p - 1))
        return self._lookup[int(np.ravel_multi_index(tuple(pos), self.full_shape))]

    def indices(self) -> List[HierIndex]:
        return [self[i] for i in range(self.size)]

    def levels(self) -> np.ndarray:
        """Per-dimension levels of every dof, shape (size, d)."""
        block = self.positions // (self.k_poly + 1)
        return np.where(block == 0, 0, np.floor(np.log2(np.maximum(block, 1))).astype(int) + 1)

    def constant_mode(self) -> int:
        """Index of the l = 0, p = (1, ..., 1) function (the constant 1)."""
        return self.index(HierIndex((0,) * self.d, (0,) * self.d, (1,) * self.d))


def enumerate_dofs(d: int, k_poly: int, N: int, grid_kind: GridKind = GridKind.SPARSE,
                   max_dofs: Optional[int] = None) -> DofMap:
    """Complete, duplicate-free enumeration in lexicographic (|l|_1, l, j, p) order."""
    if d < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    if N < 0:
        raise ConfigurationError(f"level must be >= 0, got {N}")
    if k_poly < 0:
        raise ConfigurationError(f"k_poly must be >= 0, got {k_poly}")
    limit = max_dofs if max_dofs is not None else get_settings().max_dofs
    expected = count_dofs(d, k_poly, N, grid_kind)
    if expected > limit:
        raise ConfigurationError(f"{expected} degrees of freedom exceed the configured maximum {limit}")

    width = k_poly + 1
    blocks = []
    for l in admissible_levels(d, N, grid_kind):
        n_trans = [max(1, 2 ** (lm - 1)) for lm in l]
        grid = np.indices(tuple(n_trans) + (width,) * d).reshape(2 * d, -1)
        offsets = np.array([level_offset(lm, k_poly) for lm in l])[:, None]
        blocks.append(offsets + grid[:d] * width + grid[d:])
    positions = np.ascontiguousarray(np.concatenate(blocks, axis=1).T.astype(np.int64))
    dofmap = DofMap(d, k_poly, N, grid_kind, positions)
    logger.debug(f"Enumerated {dofmap}")
    return dofmap


def fullgrid_size(d: int, k_poly: int, N: int) -> int:
    return (k_poly + 1) ** d * 2 ** (d * N)


def check_fullgrid_size(d: int, k_poly: int, N: int) -> None:
    """Full-grid paths hold (k+1)^d 2^(dN) coefficients; refuse above SGIIF_MAX_FULLGRID_VALUES."""
    total = fullgrid_size(d, k_poly, N)
    limit = get_settings().max_fullgrid_values
    if total > limit:
        raise ConfigurationError(f"full-grid path needs {total:.3g} values, above the limit {limit}")


def _apply_cellwise(arr: np.ndarray, mat: np.ndarray, axis: int, n_cells: int) -> np.ndarray:
    """Apply mat (out x in) independently on each cell block along one axis."""
    moved = np.moveaxis(arr, axis, -1)
    lead = moved.shape[:-1]
    out = moved.reshape(lead + (n_cells, -1)) @ mat.T
    return np.moveaxis(out.reshape(lead + (-1,)), -1, axis)


def default_quadrature(k_poly: int) -> int:
    return k_poly + 2


def gauss_points_1d(N: int, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """All level-N Gauss nodes (cell-major) and their weights on [0, 1]."""
    nodes, weights = gauss_rule(q)
    h = 2.0 ** (-N)
    cells = np.arange(2 ** N)[:, None]
    return ((cells + nodes[None, :]) * h).reshape(-1), np.tile(weights * h, 2 ** N)


def gauss_coordinates(d: int, N: int, q: int) -> Tuple[np.ndarray, ...]:
    """Sparse (broadcastable) coordinate arrays of the tensor Gauss grid."""
    x1d, _ = gauss_points_1d(N, q)
    return tuple(np.meshgrid(*([x1d] * d), indexing="ij", sparse=True))


@dataclass
class FullGridField:
    """Local Legendre coefficients on every level-N cell, shape ((k+1) 2^N,)^d."""
    coeffs: np.ndarray
    k_poly: int
    N: int

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    def _value_matrix(self, q: int) -> np.ndarray:
        nodes, _ = gauss_rule(q)
        return legendre_values(self.k_poly, nodes) * 2.0 ** (self.N / 2.0)

    def values_at_gauss(self, q: Optional[int] = None) -> np.ndarray:
        """Point values on the tensor Gauss grid (q points per cell per direction)."""
        q = q or default_quadrature(self.k_poly)
        mat = self._value_matrix(q)
        out = self.coeffs
        for axis in range(self.d):
            out = _apply_cellwise(out, mat, axis, 2 ** self.N)
        return out

    def gauss_slabs(self, q: Optional[int] = None,
                    max_values: int = 2 ** 22) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """
        Gauss-point values in blocks of level-N cells along the first axis.

        Yields (x0, values): the first-axis nodes of the block and the values
        there on the full tensor Gauss grid of the remaining axes. No block
        holds more than max_values numbers (at least one cell).
        """
        q = q or default_quadrature(self.k_poly)
        mat = self._value_matrix(q)
        n_cells, width = 2 ** self.N, self.k_poly + 1
        per_cell = q * (n_cells * q) ** (self.d - 1)
        step = int(min(n_cells, max(1, max_values // per_cell)))
        x0, _ = gauss_points_1d(self.N, q)
        for start in range(0, n_cells, step):
            stop = min(n_cells, start + step)
            out = self.coeffs[start * width:stop * width]
            for axis in range(1, self.d):
                out = _apply_cellwise(out, mat, axis, n_cells)
            yield x0[start * q:stop * q], _apply_cellwise(out, mat, 0, stop - start)

    @classmethod
    def from_gauss_values(cls, values: np.ndarray, k_poly: int, N: int, q: Optional[int] = None) -> "FullGridField":
        """Cellwise L2 projection of Gauss-point values by quadrature."""
        q = q or default_quadrature(k_poly)
        nodes, weights = gauss_rule(q)
        mat = (weights[:, None] * legendre_values(k_poly, nodes)).T * 2.0 ** (-N / 2.0)
        out = np.asarray(values, dtype=float)
        for axis in range(out.ndim):
            out = _apply_cellwise(out, mat, axis, 2 ** N)
        return cls(out, k_poly, N)

    def evaluate_tensor(self, points_1d: Sequence[np.ndarray]) -> np.ndarray:
        """Values on the tensor lattice points_1d[0] x ... x points_1d[d-1]."""
        out = self.coeffs
        for axis, pts in enumerate(points_1d):
            mat = local_values_1d(self.k_poly, self.N, pts)
            out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
        return out


def project_fullgrid(f: PointFunction, d: int, k_poly: int, N: int, q: Optional[int] = None) -> np.ndarray:
    """Hierarchical coefficients of the L2 projection onto the full level-N space."""
    q = q or default_quadrature(k_poly)
    check_fullgrid_size(d, k_poly, N)
    coords = gauss_coordinates(d, N, q)
    shape = (2 ** N * q,) * d
    values = np.broadcast_to(np.asarray(f(coords), dtype=float), shape)
    local = FullGridField.from_gauss_values(values, k_poly, N, q).coeffs
    for axis in range(d):
        local = forward_transform_1d(local, k_poly, N, axis=axis)
    return local


def _check_coeffs(c: np.ndarray, dofmap: DofMap) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] != dofmap.size:
        raise ConfigurationError(f"coefficient vector of shape {c.shape} does not match {dofmap}")
    return c


def project_l2(f: PointFunction, dofmap: DofMap, q: Optional[int] = None) -> np.ndarray:
    """L2 projection of a pointwise function f(x) onto the space of dofmap."""
    hier = project_fullgrid(f, dofmap.d, dofmap.k_poly, dofmap.N, q)
    return hier.reshape(-1)[dofmap.flat].copy()


def to_fullgrid(c: np.ndarray, dofmap: DofMap) -> FullGridField:
    """Zero-pad into the full hierarchical array and inverse-transform each direction."""
    c = _check_coeffs(c, dofmap)
    check_fullgrid_size(dofmap.d, dofmap.k_poly, dofmap.N)
    hier = np.zeros(dofmap.full_shape)
    hier.reshape(-1)[dofmap.flat] = c
    for axis in range(dofmap.d):
        hier = inverse_transform_1d(hier, dofmap.k_poly, dofmap.N, axis=axis)
    return FullGridField(hier, dofmap.k_poly, dofmap.N)


def from_fullgrid(g: FullGridField, dofmap: DofMap) -> np.ndarray:
    """Forward-transform each direction and restrict to the index set of dofmap."""
    if g.coeffs.shape != dofmap.full_shape or g.k_poly != dofmap.k_poly or g.N != dofmap.N:
        raise ConfigurationError(f"full-grid field of shape {g.coeffs.shape} does not match {dofmap}")
    hier = g.coeffs
    for axis in range(dofmap.d):
        hier = forward_transform_1d(hier, dofmap.k_poly, dofmap.N, axis=axis)
    return hier.reshape(-1)[dofmap.flat].copy()


def eval_point(c: np.ndarray, dofmap: DofMap, x: Sequence[float]) -> np.ndarray:
    """Sum_i c_i basis_i(x); c may carry a leading species axis."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dofmap.d:
        raise ConfigurationError(f"point of dimension {x.shape[0]} for a {dofmap.d}-dimensional space")
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != dofmap.size:
        raise ConfigurationError(f"coefficient vector of shape {c.shape} does not match {dofmap}")
    basis = np.ones(dofmap.size)
    for m in range(dofmap.d):
        vals = hierarchical_values_1d(dofmap.k_poly, dofmap.N, [x[m]])[0]
        basis = basis * vals[dofmap.positions[:, m]]
    return c @ basis


def split_species(U: np.ndarray, dofmap: DofMap) -> np.ndarray:
    """View a species-major CoeffVector as shape (n_species, size)."""
    U = np.asarray(U, dtype=float)
    if U.size % dofmap.size:
        raise ConfigurationError(f"vector of length {U.size} is not a multiple of {dofmap.size}")
    return U.reshape(-1, dofmap.size)


def sample_lattice(U: np.ndarray, dofmap: DofMap, n_points: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform plotting lattice and the field values per species on it."""
    lattice = np.linspace(0.0, 1.0, n_points)
    fields = [to_fullgrid(block, dofmap).evaluate_tensor([lattice] * dofmap.d)
              for block in split_species(U, dofmap)]
    return lattice, np.array(fields)


def snapshot_frame(U: np.ndarray, dofmap: DofMap, n_points: int = 256) -> pd.DataFrame:
    """Rows x1..xd, species_0, ... sampled on the plotting lattice."""
    lattice, fields = sample_lattice(U, dofmap, n_points)
    grids = np.meshgrid(*([lattice] * dofmap.d), indexing="ij")
    data = {f"x{m + 1}": grid.reshape(-1) for m, grid in enumerate(grids)}
    for s, field_values in enumerate(fields):
        data[f"species_{s}"] = field_values.reshape(-1)
    return pd.DataFrame(data)
