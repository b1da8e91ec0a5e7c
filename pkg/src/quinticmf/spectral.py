"""Periodic grids, discrete Fourier analysis and plane-wave mode bases.

Fields live on a uniform periodic grid of ``n**d`` points in the box
``[0, L)**d``.  Integrals are approximated by the rectangle rule, so the
grid inner product is ``<f, g> = h**d * sum(conj(f) * g)``.  Fourier
coefficients are normalized so that Parseval holds with this measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "ModeBasis",
    "make_grid",
    "fourier_coefficients",
    "sobolev_norm",
    "apply_laplacian",
    "lowest_modes",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``n`` points per axis in ``d`` dimensions."""

    d: int
    n: int
    L: float

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        """Wavenumbers per axis in FFT order, ``(2 pi / L) * m``."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.L

    @cached_property
    def k_squared(self) -> np.ndarray:
        """``|k|^2`` on the FFT frequency lattice, shaped like the grid."""
        k = self.axis_wavenumbers
        grids = np.meshgrid(*([k] * self.d), indexing="ij")
        return sum(g**2 for g in grids)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    def min_image_distance(self) -> np.ndarray:
        """Distance from the origin to every grid point under periodic wrap."""
        j = np.arange(self.n)
        r1 = np.minimum(j, self.n - j) * self.h
        grids = np.meshgrid(*([r1] * self.d), indexing="ij")
        return np.sqrt(sum(g**2 for g in grids))


def make_grid(d: int, n: int, L: float) -> GridSpec:
    """Validate and build a :class:`GridSpec`.

    Raises
    ------
    ValueError
        If ``d`` is not 1, 2 or 3, ``n`` is odd or below 4, or ``L <= 0``.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension d must be 1, 2 or 3, got {d}")
    if int(n) != n or n < 4 or n % 2:
        raise ValueError(f"points per axis n must be an even integer >= 4, got {n}")
    if not L > 0:
        raise ValueError(f"box length L must be positive, got {L}")
    return GridSpec(int(d), int(n), float(L))


@dataclass
class Field:
    """Complex samples of a function on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.size != self.grid.size:
            raise ValueError(
                f"field has {vals.size} samples, grid expects {self.grid.size}"
            )
        self.values = vals.reshape(self.grid.shape)

    def inner(self, other: "Field") -> complex:
        return complex(np.vdot(self.values, other.values) * self.grid.cell_volume)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))

    def density(self) -> "Field":
        return Field(self.grid, np.abs(self.values) ** 2)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def fourier_coefficients(f: Field) -> np.ndarray:
    """Fourier coefficients with ``sum |fhat|^2 == ||f||_{L^2}^2``."""
    g = f.grid
    return np.fft.fftn(f.values) * np.sqrt(g.cell_volume / g.size)


def sobolev_norm(f: Field, s: float) -> float:
    """``(sum_k (1 + |k|^2)^s |fhat(k)|^2)^(1/2)``."""
    if s < 0:
        raise ValueError("Sobolev index s must be nonnegative")
    fhat = fourier_coefficients(f)
    weight = (1.0 + f.grid.k_squared) ** s
    return float(np.sqrt(np.sum(weight * np.abs(fhat) ** 2)))


def apply_laplacian(f: Field) -> Field:
    """Spectral Laplacian: multiply Fourier coefficients by ``-|k|^2``."""
    vals = np.fft.ifftn(-f.grid.k_squared * np.fft.fftn(f.values))
    return Field(f.grid, vals)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """The ``K`` lowest plane waves ``exp(i k.x) / L^(d/2)`` on a grid.

    Attributes
    ----------
    momenta : (K, d) int array
        Integer labels ``m`` with ``k = 2 pi m / L``.
    eps : (K,) array
        Kinetic eigenvalues ``|k_p|^2``, nondecreasing.
    """

    grid: GridSpec
    momenta: np.ndarray
    eps: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.eps)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Mode samples as a ``(K, n**d)`` array (row p is ``u_p``)."""
        g = self.grid
        x = [c.ravel() for c in g.coordinates]
        phase = sum(
            np.outer(self.momenta[:, a], x[a]) for a in range(g.d)
        ) * (2.0 * np.pi / g.L)
        return np.exp(1j * phase) / g.L ** (g.d / 2)

    @property
    def modes(self) -> list[Field]:
        return [Field(self.grid, row) for row in self.matrix]

    def coefficients(self, f: Field) -> np.ndarray:
        """Grid projections ``<u_p, f>``."""
        return self.matrix.conj() @ f.values.ravel() * self.grid.cell_volume

    def synthesize(self, coeffs: np.ndarray) -> Field:
        return Field(self.grid, np.asarray(coeffs) @ self.matrix)

    def gram(self) -> np.ndarray:
        m = self.matrix
        return m.conj() @ m.T * self.grid.cell_volume


def lowest_modes(grid: GridSpec, K: int) -> ModeBasis:
    """Select the ``K`` plane waves with smallest ``|k|^2``.

    Ties are broken by lexicographic order of the integer momentum, and
    modes with a Nyquist component are never selected.
    """
    available = (grid.n - 1) ** grid.d
    if K < 1 or K > available:
        raise ValueError(
            f"K={K} modes requested but the grid offers {available} non-Nyquist plane waves"
        )
    half = grid.n // 2
    axis = np.arange(-half + 1, half)
    labels = np.array(np.meshgrid(*([axis] * grid.d), indexing="ij")).reshape(grid.d, -1).T
    norms = np.sum(labels**2, axis=1)
    order = np.lexsort(tuple(labels[:, a] for a in reversed(range(grid.d))) + (norms,))
    chosen = labels[order[:K]]
    eps = np.sum(chosen**2, axis=1) * (2.0 * np.pi / grid.L) ** 2
    return ModeBasis(grid, chosen, eps.astype(float))
