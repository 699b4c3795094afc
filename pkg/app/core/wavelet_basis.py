"""
One-dimensional piecewise-polynomial hierarchy on [0, 1].

Level 0 holds the scaled Legendre polynomials; level n >= 1 holds the Alpert
multiwavelets v_{p,n}^j(x) = 2^{n/2} f_p(2^n x - (2j + 1)), supported on
[2^{-(n-1)} j, 2^{-(n-1)} (j + 1)]. All functions are orthonormal in L2(0, 1).

Hierarchical coefficient vectors of length (k+1) 2^N are laid out level by
level, then by translation j, then by polynomial index p. Local (nodal)
vectors on the level-N grid are laid out cell by cell, then by p.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.polynomial import Legendre, Polynomial
from numpy.polynomial import legendre as leg
from numpy.polynomial import polynomial as poly

from app.core.errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

MAX_GAUSS_POINTS = 16
GRAM_TOLERANCE = 1e-13


@dataclass(frozen=True)
class BasisConfig:
    """Polynomial degree k and maximal mesh level N (h_N = 2^-N)."""
    k_poly: int
    N_max: int

    def __post_init__(self):
        if self.k_poly < 0:
            raise ConfigurationError(f"k_poly must be >= 0, got {self.k_poly}")
        if self.N_max < 0:
            raise ConfigurationError(f"N_max must be >= 0, got {self.N_max}")

    @property
    def size(self) -> int:
        return (self.k_poly + 1) * 2 ** self.N_max


@dataclass(frozen=True)
class Wavelet1DIndex:
    """Level n, translation j, polynomial index p (1-based, as in the literature)."""
    n: int
    j: int
    p: int

    def validate(self, k_poly: int) -> None:
        if self.n < 0:
            raise ConfigurationError(f"level must be >= 0, got {self.n}")
        j_max = max(0, 2 ** (self.n - 1) - 1) if self.n > 0 else 0
        if not 0 <= self.j <= j_max:
            raise ConfigurationError(f"translation {self.j} out of range [0, {j_max}] at level {self.n}")
        if not 1 <= self.p <= k_poly + 1:
            raise ConfigurationError(f"polynomial index {self.p} out of range [1, {k_poly + 1}]")

    def support(self) -> Tuple[float, float]:
        if self.n == 0:
            return 0.0, 1.0
        width = 2.0 ** (-(self.n - 1))
        return self.j * width, (self.j + 1) * width


@dataclass(frozen=True)
class AlpertWavelets:
    """
    Mother wavelets f_p on (-1, 1) together with the two-scale filters.

    scaling_filter[p] and wavelet_filter[p] hold the coefficients of the
    level-0 scaling function / level-1 wavelet in the orthonormal level-1
    local Legendre basis (left half first). left/right hold the monomial
    coefficients (in y, lowest degree first) of f_p on (-1, 0] and (0, 1).
    """
    k_poly: int
    scaling_filter: np.ndarray
    wavelet_filter: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def evaluate(self, y: float, deriv: int = 0) -> np.ndarray:
        """Values of all f_p at y in [-1, 1]; y = 0 belongs to the left piece."""
        coeffs = self.left if y <= 0.0 else self.right
        return np.array([poly.polyval(y, _derivative(c) if deriv else c) for c in coeffs])


def _derivative(coeffs: np.ndarray) -> np.ndarray:
    if len(coeffs) < 2:
        return np.zeros(1)
    return poly.polyder(coeffs)


def gauss_rule(q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1], exact up to degree 2q - 1."""
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= MAX_GAUSS_POINTS:
        raise ConfigurationError(f"unsupported quadrature size q={q}; expected 1..{MAX_GAUSS_POINTS}")
    nodes, weights = leg.leggauss(int(q))
    return 0.5 * (nodes + 1.0), 0.5 * weights


def legendre_values(k_poly: int, xi, deriv: int = 0) -> np.ndarray:
    """Orthonormal Legendre polynomials on [0, 1]: array of shape xi.shape + (k_poly + 1,)."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty(xi.shape + (k_poly + 1,))
    for p in range(k_poly + 1):
        coef = np.zeros(p + 1)
        coef[p] = np.sqrt(2 * p + 1)
        if deriv:
            coef = 2.0 * leg.legder(coef) if p > 0 else np.zeros(1)
        out[..., p] = leg.legval(2.0 * xi - 1.0, coef)
    return out


def _two_scale_inner(k_poly: int, func) -> np.ndarray:
    """Coefficients of func (given on [0, 1]) in the level-1 local Legendre basis."""
    nodes, weights = gauss_rule(k_poly + 2)
    phi = legendre_values(k_poly, nodes)
    out = np.empty((2, k_poly + 1))
    for c in range(2):
        vals = func(0.5 * (c + nodes))
        out[c] = (weights * vals) @ phi / np.sqrt(2.0)
    return out.reshape(-1)


def _orthonormalize(rows: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt over rows with one re-orthogonalisation pass."""
    basis = []
    for row in rows:
        vec = row.copy()
        for _ in range(2):
            for b in basis:
                vec -= (vec @ b) * b
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise NumericalError("linearly dependent wavelet candidates")
        basis.append(vec / norm)
    return np.array(basis)


def _piece_monomials(filter_row: np.ndarray, k_poly: int, c: int) -> np.ndarray:
    """Monomial coefficients in y of f_p on piece c (0 = (-1, 0], 1 = (0, 1))."""
    block = filter_row[c * (k_poly + 1):(c + 1) * (k_poly + 1)]
    scaled = block * np.sqrt(2.0 * np.arange(k_poly + 1) + 1.0)
    in_t = Legendre(scaled).convert(kind=Polynomial)
    in_y = in_t(Polynomial([1.0 - 2.0 * c, 2.0]))
    out = np.zeros(k_poly + 1)
    out[:len(in_y.coef)] = in_y.coef[:k_poly + 1]
    return out


def build_alpert_wavelets(k_poly: int) -> AlpertWavelets:
    """
    Construct the k_poly + 1 orthonormal multiwavelets with vanishing moments.

    Candidates sign(y) y^i are made orthogonal to P^k on (-1, 1) and then to
    each other. Signs are fixed so that the highest-degree coefficient of each
    f_p on (0, 1) is positive.
    """
    if k_poly < 0:
        raise ConfigurationError(f"k_poly must be >= 0, got {k_poly}")

    scaling = np.array([
        _two_scale_inner(k_poly, lambda x, p=p: legendre_values(k_poly, x)[..., p])
        for p in range(k_poly + 1)
    ])

    candidates = []
    for i in range(k_poly + 1):
        cand = _two_scale_inner(k_poly, lambda x, i=i: np.sign(2.0 * x - 1.0) * (2.0 * x - 1.0) ** i)
        for _ in range(2):
            cand = cand - scaling.T @ (scaling @ cand)
        candidates.append(cand)
    wavelet = _orthonormalize(np.array(candidates))
    for _ in range(2):
        wavelet = wavelet - (wavelet @ scaling.T) @ scaling
    wavelet = _orthonormalize(wavelet)

    left = np.array([_piece_monomials(row, k_poly, 0) for row in wavelet])
    right = np.array([_piece_monomials(row, k_poly, 1) for row in wavelet])
    for p in range(k_poly + 1):
        significant = np.nonzero(np.abs(right[p]) > 1e-10)[0]
        if len(significant) and right[p, significant[-1]] < 0:
            wavelet[p] *= -1.0
            left[p] *= -1.0
            right[p] *= -1.0

    full = np.vstack([scaling, wavelet])
    residual = np.max(np.abs(full @ full.T - np.eye(2 * (k_poly + 1))))
    if residual > GRAM_TOLERANCE:
        raise NumericalError(f"Alpert construction lost orthogonality (residual {residual:.2e})")
    logger.debug(f"Built Alpert wavelets k={k_poly}, Gram residual {residual:.1e}")
    return AlpertWavelets(k_poly=k_poly, scaling_filter=scaling, wavelet_filter=wavelet, left=left, right=right)


@lru_cache(maxsize=None)
def get_wavelets(k_poly: int) -> AlpertWavelets:
    return build_alpert_wavelets(k_poly)


def level_offset(n: int, k_poly: int) -> int:
    """First position of level n in a hierarchical vector."""
    return 0 if n == 0 else (k_poly + 1) * 2 ** (n - 1)


def hierarchical_position(idx: Wavelet1DIndex, k_poly: int) -> int:
    return level_offset(idx.n, k_poly) + idx.j * (k_poly + 1) + (idx.p - 1)


def position_to_index(pos: int, k_poly: int) -> Wavelet1DIndex:
    """Inverse of hierarchical_position."""
    width = k_poly + 1
    block, p = divmod(pos, width)
    if block == 0:
        return Wavelet1DIndex(0, 0, p + 1)
    n = int(block).bit_length()
    return Wavelet1DIndex(n, block - 2 ** (n - 1), p + 1)


def _check_domain(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ConfigurationError("evaluation point outside [0, 1]")
    return x


def eval_basis(idx: Wavelet1DIndex, x: float, deriv: int = 0, *, k_poly: int) -> float:
    """Value (deriv=0) or broken derivative (deriv=1) of one hierarchical basis function."""
    idx.validate(k_poly)
    x = float(_check_domain(x))
    if deriv not in (0, 1):
        raise ConfigurationError(f"deriv must be 0 or 1, got {deriv}")
    if idx.n == 0:
        return float(legendre_values(k_poly, x, deriv)[idx.p - 1])

    a, b = idx.support()
    owned = (a < x <= b) or (x == 0.0 and idx.j == 0)
    if not owned:
        return 0.0
    scale = 2.0 ** (idx.n / 2.0)
    y = min(1.0, max(-1.0, 2.0 ** idx.n * x - (2 * idx.j + 1)))
    wavelets = get_wavelets(k_poly)
    coeffs = wavelets.left[idx.p - 1] if y <= 0.0 else wavelets.right[idx.p - 1]
    if deriv:
        return float(scale * 2.0 ** idx.n * poly.polyval(y, _derivative(coeffs)))
    return float(scale * poly.polyval(y, coeffs))


def cell_coordinates(x, N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Owning level-N cell (half-open on the left) and local coordinate in (0, 1]."""
    x = _check_domain(x)
    n_cells = 2 ** N
    cell = np.clip(np.ceil(x * n_cells).astype(int) - 1, 0, n_cells - 1)
    return cell, x * n_cells - cell


def local_values_1d(k_poly: int, N: int, x, deriv: int = 0) -> np.ndarray:
    """Values of the level-N local Legendre basis at points x: shape (len(x), (k+1) 2^N)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cell, xi = cell_coordinates(x, N)
    h_inv = 2.0 ** N
    vals = legendre_values(k_poly, xi, deriv) * np.sqrt(h_inv) * (h_inv if deriv else 1.0)
    out = np.zeros((x.size, (k_poly + 1) * 2 ** N))
    cols = cell[:, None] * (k_poly + 1) + np.arange(k_poly + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def hierarchical_values_1d(k_poly: int, N: int, x, deriv: int = 0) -> np.ndarray:
    """Values of every hierarchical basis function at points x."""
    return forward_transform_1d(local_values_1d(k_poly, N, x, deriv), k_poly, N, axis=-1)


def _check_length(arr: np.ndarray, k_poly: int, N: int) -> None:
    expected = (k_poly + 1) * 2 ** N
    if arr.shape[-1] != expected:
        raise ConfigurationError(f"transform length mismatch: got {arr.shape[-1]}, expected {expected}")


def forward_transform_1d(values, k_poly: int, N: int, axis: int = -1) -> np.ndarray:
    """Local level-N Legendre coefficients -> hierarchical multiwavelet coefficients along one axis."""
    arr = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    _check_length(arr, k_poly, N)
    wavelets = get_wavelets(k_poly)
    lead = arr.shape[:-1]
    width = k_poly + 1
    smooth = arr.reshape(lead + (2 ** N, width))
    details = []
    for n in range(N, 0, -1):
        pairs = smooth.reshape(lead + (2 ** (n - 1), 2 * width))
        details.append((pairs @ wavelets.wavelet_filter.T).reshape(lead + (-1,)))
        smooth = pairs @ wavelets.scaling_filter.T
    out = np.concatenate([smooth.reshape(lead + (width,))] + details[::-1], axis=-1)
    return np.moveaxis(out, -1, axis)


def inverse_transform_1d(coeffs, k_poly: int, N: int, axis: int = -1) -> np.ndarray:
    """Hierarchical multiwavelet coefficients -> local level-N Legendre coefficients along one axis."""
    arr = np.moveaxis(np.asarray(coeffs, dtype=float), axis, -1)
    _check_length(arr, k_poly, N)
    wavelets = get_wavelets(k_poly)
    lead = arr.shape[:-1]
    width = k_poly + 1
    smooth = arr[..., :width].reshape(lead + (1, width))
    for n in range(1, N + 1):
        detail = arr[..., level_offset(n, k_poly):level_offset(n + 1, k_poly)]
        detail = detail.reshape(lead + (2 ** (n - 1), width))
        pairs = smooth @ wavelets.scaling_filter + detail @ wavelets.wavelet_filter
        smooth = pairs.reshape(lead + (2 ** n, width))
    return np.moveaxis(smooth.reshape(lead + (-1,)), -1, axis)


@dataclass
class Transform1D:
    """Orthogonal map between the level-N local basis and the hierarchical basis."""
    k_poly: int
    N: int
    _matrix: np.ndarray = field(default=None, init=False, repr=False)

    def forward(self, values, axis: int = -1) -> np.ndarray:
        return forward_transform_1d(values, self.k_poly, self.N, axis)

    def inverse(self, coeffs, axis: int = -1) -> np.ndarray:
        return inverse_transform_1d(coeffs, self.k_poly, self.N, axis)

    @property
    def matrix(self) -> np.ndarray:
        """Dense T with hierarchical = T @ local (built column by column; for checks only)."""
        if self._matrix is None:
            size = (self.k_poly + 1) * 2 ** self.N
            self._matrix = self.forward(np.eye(size), axis=0)
        return self._matrix
