"""Regularized Coulomb kernel, symmetric three-body potential and its matrix elements.

The pair kernel is ``vbar(x) = min(1/|x|, 1/alpha)`` with ``|x|`` the
minimal-image distance, and the three-body potential is

    Vbar(x, y, z) = lam * (vbar(x-y) vbar(x-z) + vbar(y-z) vbar(y-x) + vbar(z-x) vbar(z-y)).

Because each term is centred on one point, every integral against
``Vbar`` reduces to pair convolutions ``vbar * g`` computed by FFT.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import permutations

import numpy as np

from .spectral import Field, GridSpec, ModeBasis

__all__ = [
    "RegularizedKernel",
    "InteractionTensor",
    "alpha_from_eta",
    "build_kernel",
    "floor_kernel",
    "three_body_value",
    "hartree_potential",
    "interaction_energy",
    "interaction_tensor",
    "brute_force_tensor",
    "kernel_to_json",
    "tensor_to_json",
    "tensor_from_json",
]

# relative slack when comparing alpha against the grid floor h/2
_FLOOR_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class RegularizedKernel:
    grid: GridSpec
    alpha: float
    lam: float
    values: np.ndarray

    @cached_property
    def spectrum(self) -> np.ndarray:
        return np.fft.fftn(self.values)

    def convolve(self, g: np.ndarray) -> np.ndarray:
        """Periodic convolution ``(vbar * g)(x) = h^d sum_y vbar(x-y) g(y)``.

        ``g`` may carry leading batch axes; the trailing axes must match the grid.
        """
        axes = tuple(range(-self.grid.d, 0))
        out = np.fft.ifftn(np.fft.fftn(g, axes=axes) * self.spectrum, axes=axes)
        out *= self.grid.cell_volume
        if np.isrealobj(g):
            return out.real
        return out

    def at(self, displacement) -> float:
        """Kernel value at an integer grid displacement (wrapped periodically)."""
        idx = tuple(np.mod(np.atleast_1d(np.asarray(displacement, dtype=int)), self.grid.n))
        return float(self.values[idx])


@dataclass(frozen=True, eq=False)
class InteractionTensor:
    """Entries ``T[p,q,r,s,t,u]`` of the three-body potential in a mode basis."""

    basis: ModeBasis
    entries: np.ndarray

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    def as_matrix(self) -> np.ndarray:
        """``(K^3, K^3)`` matrix with rows (p,q,r) and columns (s,t,u)."""
        k3 = self.K**3
        return self.entries.reshape(k3, k3)

    def hermiticity_residual(self) -> float:
        swapped = np.conj(self.entries.transpose(3, 4, 5, 0, 1, 2))
        return float(np.max(np.abs(swapped - self.entries)))

    def permutation_residual(self) -> float:
        worst = 0.0
        for perm in permutations(range(3)):
            axes = list(perm) + [3 + p for p in perm]
            worst = max(worst, float(np.max(np.abs(self.entries.transpose(axes) - self.entries))))
        return worst


def alpha_from_eta(N: int, eta: float) -> float:
    """Cutoff ``alpha_N = N**(-eta)``."""
    return float(N) ** (-float(eta))


def build_kernel(grid: GridSpec, alpha: float, lam: float = 1.0) -> RegularizedKernel:
    """Sample ``min(1/|x|, 1/alpha)`` on the grid.

    ``alpha`` may not go below half the grid spacing. That floor kernel
    plays the role of the unregularized Coulomb kernel on the grid.
    """
    floor = grid.h / 2
    if alpha < floor * (1 - _FLOOR_SLACK):
        raise ValueError(
            f"alpha={alpha} is below the grid floor h/2={floor}; use alpha >= {floor}"
        )
    if not lam >= 0:
        raise ValueError(f"coupling lam must be nonnegative, got {lam}")
    r = grid.min_image_distance()
    cap = 1.0 / alpha
    with np.errstate(divide="ignore"):
        vals = np.where(r > 0, 1.0 / r, np.inf)
    vals = np.minimum(vals, cap)
    return RegularizedKernel(grid, float(alpha), float(lam), vals)


def floor_kernel(grid: GridSpec, lam: float = 1.0) -> RegularizedKernel:
    """Kernel at the grid floor ``alpha = h/2``."""
    return build_kernel(grid, grid.h / 2, lam)


def three_body_value(kernel: RegularizedKernel, x, y, z) -> float:
    """``Vbar(x, y, z)`` for integer grid points ``x, y, z``."""
    x, y, z = (np.asarray(a, dtype=int) for a in (x, y, z))
    v = kernel.at
    return kernel.lam * (
        v(x - y) * v(x - z) + v(y - z) * v(y - x) + v(z - x) * v(z - y)
    )


def _as_density(kernel: RegularizedKernel, rho) -> np.ndarray:
    vals = rho.values if isinstance(rho, Field) else np.asarray(rho)
    if np.iscomplexobj(vals):
        if np.max(np.abs(vals.imag), initial=0.0) > 1e-12:
            raise ValueError("density must be real")
        vals = vals.real
    if np.min(vals, initial=0.0) < -1e-12:
        raise ValueError(f"density has negative entries (min {vals.min():.3e})")
    return vals.reshape(kernel.grid.shape)


def hartree_potential(kernel: RegularizedKernel, rho) -> Field:
    """Mean-field potential ``(1/2) int Vbar(x-y, x-z) rho(y) rho(z) dy dz``.

    Evaluated as ``(lam/2) [ (vbar*rho)^2 + 2 vbar*(rho (vbar*rho)) ]``.
    """
    r = _as_density(kernel, rho)
    c = kernel.convolve(r)
    u = 0.5 * kernel.lam * (c**2 + 2.0 * kernel.convolve(r * c))
    return Field(kernel.grid, u)


def interaction_energy(kernel: RegularizedKernel, rho) -> float:
    """``int int int Vbar rho(x) rho(y) rho(z)``, equal to ``3 lam int rho (vbar*rho)^2``."""
    r = _as_density(kernel, rho)
    c = kernel.convolve(r)
    return float(3.0 * kernel.lam * np.sum(r * c**2) * kernel.grid.cell_volume)


def interaction_tensor(kernel: RegularizedKernel, basis: ModeBasis) -> InteractionTensor:
    """Three-body matrix elements via pair convolutions.

    With pair densities ``rho_{ps} = conj(u_p) u_s`` and ``W_{qt} = vbar * rho_{qt}``,
    the term centred on ``x`` is ``A[ps, qt, ru] = <rho_ps, W_qt W_ru>``.  The
    other two centres follow by relabelling, so

        T[pqr, stu] = lam * (A[ps,qt,ru] + A[qt,ps,ru] + A[ru,ps,qt]).
    """
    if basis.grid != kernel.grid:
        raise ValueError("kernel and basis live on different grids")
    K = basis.K
    u = basis.matrix
    pair = (u.conj()[:, None, :] * u[None, :, :]).reshape(K * K, *kernel.grid.shape)
    W = kernel.convolve(pair).reshape(K * K, -1)
    pair = pair.reshape(K * K, -1)
    A = np.einsum("ax,bx,cx->abc", pair, W, W, optimize=True) * kernel.grid.cell_volume
    # exact symmetry in the two convolved slots
    A = 0.5 * (A + A.transpose(0, 2, 1))
    T = A + A.transpose(1, 0, 2) + A.transpose(1, 2, 0)
    T = kernel.lam * T.reshape((K,) * 6)
    # axes are (p, s, q, t, r, u); reorder to (p, q, r, s, t, u)
    return InteractionTensor(basis, np.ascontiguousarray(T.transpose(0, 2, 4, 1, 3, 5)))


def brute_force_tensor(kernel: RegularizedKernel, basis: ModeBasis) -> InteractionTensor:
    """Direct triple sum over grid points. Costs ``O(n^(3d) K^6)``; small grids only."""
    g = kernel.grid
    npts = g.size
    idx = np.array(np.unravel_index(np.arange(npts), g.shape)).T
    diff = (idx[:, None, :] - idx[None, :, :]) % g.n
    vpair = kernel.values[tuple(diff[..., a] for a in range(g.d))]
    V = kernel.lam * (
        vpair[:, :, None] * vpair[:, None, :]
        + vpair[None, :, :] * vpair.T[:, :, None]
        + vpair.T[:, None, :] * vpair.T[None, :, :]
    )
    u = basis.matrix
    ub = u.conj()
    w = g.cell_volume**3
    # contract z first, then y, then x
    Z = np.einsum("xyz,rz,uz->xyru", V, ub, u, optimize=True)
    Y = np.einsum("xyru,qy,ty->xqtru", Z, ub, u, optimize=True)
    T = np.einsum("xqtru,px,sx->pqrstu", Y, ub, u, optimize=True)
    return InteractionTensor(basis, T * w)


def _complex_pairs(a: np.ndarray) -> list:
    flat = np.asarray(a, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in flat]


def kernel_to_json(kernel: RegularizedKernel) -> str:
    g = kernel.grid
    doc = {
        "type": "RegularizedKernel",
        "grid": {"d": g.d, "n": g.n, "L": g.L},
        "alpha": kernel.alpha,
        "lambda": kernel.lam,
        "shape": list(g.shape),
        "values": [float(v) for v in kernel.values.ravel()],
    }
    return json.dumps(doc)


def tensor_to_json(tensor: InteractionTensor) -> str:
    b = tensor.basis
    doc = {
        "type": "InteractionTensor",
        "grid": {"d": b.grid.d, "n": b.grid.n, "L": b.grid.L},
        "K": tensor.K,
        "momenta": b.momenta.tolist(),
        "index_order": "p,q,r,s,t,u (row-major)",
        "entries": _complex_pairs(tensor.entries),
    }
    return json.dumps(doc)


def tensor_from_json(text: str, basis: ModeBasis) -> InteractionTensor:
    doc = json.loads(text)
    K = int(doc["K"])
    if K != basis.K:
        raise ValueError(f"dump has K={K}, basis has K={basis.K}")
    arr = np.array(doc["entries"], dtype=float)
    entries = (arr[:, 0] + 1j * arr[:, 1]).reshape((K,) * 6)
    return InteractionTensor(basis, entries)
