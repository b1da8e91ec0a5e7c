"""N-particle sector dynamics for the second-quantized three-body Hamiltonian

    H = sum_p eps_p a*_p a_p + (1 / (6 N^2)) sum T[p,q,r,s,t,u] a*_p a*_q a*_r a_u a_t a_s,

together with one-particle reduced densities and the two comparisons used
in the experiments: the many-body versus Hartree trace distance, and the
distance between evolutions under two kernel cutoffs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse.linalg import expm_multiply

from .fock import DENSE_LIMIT, FockBasis, FockVector, product_state
from .hartree import GalerkinFlow, galerkin_energy
from .potentials import InteractionTensor, RegularizedKernel, build_kernel, interaction_tensor
from .spectral import GridSpec, ModeBasis, lowest_modes, make_grid

__all__ = [
    "SectorHamiltonian",
    "DensityMatrix",
    "MeanFieldSetup",
    "make_setup",
    "three_body_lowering",
    "build_sector_hamiltonian",
    "propagate",
    "reduced_density",
    "trace_distance",
    "regularization_gap",
    "mean_field_run",
    "mean_field_error",
]


def three_body_lowering(basis: FockBasis, N: int) -> np.ndarray:
    """Dense blocks of ``a_u a_t a_s`` from sector N to sector N-3.

    Returns an array of shape ``(K^3, dim(N-3), dim(N))`` whose first index
    runs over ``(s, t, u)`` in row-major order.
    """
    K = basis.K
    src, dst = basis.sector(N), basis.sector(N - 3)
    a = basis.annihilators
    blocks = []
    for s, t, u in product(range(K), repeat=3):
        op = a[u] @ (a[t] @ a[s][:, src])
        blocks.append(op[dst].toarray())
    return np.array(blocks)


@dataclass
class SectorHamiltonian:
    N: int
    basis: FockBasis
    matrix: np.ndarray

    @property
    def sector(self) -> slice:
        return self.basis.sector(self.N)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def restrict(self, v: FockVector) -> np.ndarray:
        sl = self.sector
        outside = np.delete(v.amplitudes, np.r_[sl])
        if outside.size and np.max(np.abs(outside)) > 0:
            raise ValueError(f"vector has weight outside the N={self.N} sector")
        return v.amplitudes[sl]

    def embed(self, x: np.ndarray) -> FockVector:
        out = np.zeros(self.basis.dim, dtype=complex)
        out[self.sector] = x
        return FockVector(self.basis, out)

    def expectation(self, v: FockVector) -> float:
        x = self.restrict(v)
        return float(np.vdot(x, self.matrix @ x).real / np.vdot(x, x).real)


def build_sector_hamiltonian(N: int, tensor: InteractionTensor, basis: FockBasis) -> SectorHamiltonian:
    if not 1 <= N <= basis.N_max:
        raise ValueError(f"N={N} outside 1..{basis.N_max}")
    if tensor.K != basis.K:
        raise ValueError("tensor and Fock basis disagree on K")
    sl = basis.sector(N)
    occ = basis.occupations[sl]
    H = np.diag(occ @ tensor.basis.eps).astype(complex)
    if N >= 3:
        B = three_body_lowering(basis, N)
        H += np.einsum("iab,ij,jac->bc", B.conj(), tensor.as_matrix(), B, optimize=True) / (6.0 * N**2)
    H = 0.5 * (H + H.conj().T)
    return SectorHamiltonian(N, basis, H)


def propagate(H: SectorHamiltonian, psi0: FockVector, t: float, tol: float = 1e-10) -> FockVector:
    """``exp(-i H t) psi0``; dense eigendecomposition up to DENSE_LIMIT, Krylov beyond.

    Raises if the norm defect of the result exceeds ``tol``.
    """
    x = H.restrict(psi0)
    if t == 0:
        return H.embed(x.copy())
    if H.dim <= DENSE_LIMIT:
        w, V = np.linalg.eigh(H.matrix)
        y = V @ (np.exp(-1j * w * t) * (V.conj().T @ x))
    else:
        y = expm_multiply(-1j * t * H.matrix, x)
    defect = abs(np.linalg.norm(y) - np.linalg.norm(x))
    if defect > tol * max(1.0, np.linalg.norm(x)):
        raise RuntimeError(f"propagation norm defect {defect:.3e} exceeds tol={tol:.1e}")
    return H.embed(y)


@dataclass
class DensityMatrix:
    matrix: np.ndarray

    def check(self, tol_herm: float = 1e-12, tol_eig: float = 1e-12, tol_trace: float = 1e-10) -> None:
        g = self.matrix
        if np.max(np.abs(g - g.conj().T)) > tol_herm:
            raise AssertionError("density matrix not Hermitian")
        if np.min(np.linalg.eigvalsh(g)) < -tol_eig:
            raise AssertionError("density matrix has a negative eigenvalue")
        if abs(np.trace(g).real - 1) > tol_trace:
            raise AssertionError(f"density matrix trace {np.trace(g).real} != 1")

    @classmethod
    def pure(cls, phi) -> "DensityMatrix":
        phi = np.asarray(phi, dtype=complex)
        return cls(np.outer(phi, phi.conj()))


def reduced_density(psi: FockVector) -> DensityMatrix:
    """``gamma_pq = <psi, a*_q a_p psi> / <psi, N psi>``."""
    basis = psi.basis
    n = float(np.sum(basis.totals * np.abs(psi.amplitudes) ** 2))
    if n <= 0:
        raise ValueError("reduced density undefined for a state with no particles")
    lowered = np.array([a @ psi.amplitudes for a in basis.annihilators])
    g = lowered @ lowered.conj().T / n
    g = 0.5 * (g + g.conj().T)
    return DensityMatrix(g)


def trace_distance(g1: DensityMatrix, g2: DensityMatrix) -> float:
    """Trace norm ``sum |eig(g1 - g2)|``."""
    a, b = np.asarray(g1.matrix), np.asarray(g2.matrix)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


@dataclass
class MeanFieldSetup:
    """Grid, mode basis, kernel, tensor and one-particle initial data shared by a comparison."""

    grid: GridSpec
    basis: ModeBasis
    kernel: RegularizedKernel
    tensor: InteractionTensor
    phi0: np.ndarray
    eta: float | None = None
    _tensors: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return self.basis.K

    def tensor_for(self, alpha: float) -> InteractionTensor:
        if alpha == self.kernel.alpha:
            return self.tensor
        if alpha not in self._tensors:
            kern = build_kernel(self.grid, alpha, self.kernel.lam)
            self._tensors[alpha] = interaction_tensor(kern, self.basis)
        return self._tensors[alpha]


def make_setup(d: int = 1, n: int = 16, L: float = 2 * np.pi, K: int = 2,
               alpha: float = 0.25, lam: float = 1.0, phi0=None, eta: float | None = None) -> MeanFieldSetup:
    """Build a :class:`MeanFieldSetup`; ``phi0`` defaults to the lowest mode."""
    grid = make_grid(d, n, L)
    basis = lowest_modes(grid, K)
    kernel = build_kernel(grid, alpha, lam)
    tensor = interaction_tensor(kernel, basis)
    if phi0 is None:
        phi0 = np.eye(K)[0]
    phi0 = np.asarray(phi0, dtype=complex)
    if phi0.shape != (K,):
        raise ValueError(f"phi0 must have length K={K}")
    phi0 = phi0 / np.linalg.norm(phi0)
    return MeanFieldSetup(grid, basis, kernel, tensor, phi0, eta)


def regularization_gap(N: int, alpha1: float, alpha2: float, t: float, setup: MeanFieldSetup) -> float:
    """``|| exp(-i H_1 t) psi0 - exp(-i H_2 t) psi0 ||`` for the product state ``psi0``."""
    floor = setup.grid.h / 2
    for a in (alpha1, alpha2):
        if a < floor * (1 - 1e-12):
            raise ValueError(f"alpha={a} is below the grid floor {floor}")
    fb = FockBasis(setup.K, N)
    psi0 = product_state(setup.phi0, N, fb)
    states = []
    for a in (alpha1, alpha2):
        H = build_sector_hamiltonian(N, setup.tensor_for(a), fb)
        states.append(propagate(H, psi0, t))
    return float(np.linalg.norm(states[0].amplitudes - states[1].amplitudes))


def mean_field_run(N: int, t: float, setup: MeanFieldSetup, check_density: bool = True) -> dict:
    """Many-body vs Hartree comparison at time ``t``; returns a result record."""
    start = time.perf_counter()
    fb = FockBasis(setup.K, N)
    H = build_sector_hamiltonian(N, setup.tensor, fb)
    psi = propagate(H, product_state(setup.phi0, N, fb), t)
    gamma = reduced_density(psi)
    if check_density:
        gamma.check()
    flow = GalerkinFlow(setup.phi0, setup.tensor, setup.basis)
    c = flow(t)
    dist = trace_distance(gamma, DensityMatrix.pure(c))
    return {
        "N": int(N),
        "K": setup.K,
        "eta": setup.eta,
        "alpha": setup.kernel.alpha,
        "t": float(t),
        "trace_distance": dist,
        "mass": float(np.sum(np.abs(c) ** 2)),
        "energy": galerkin_energy(c, setup.tensor, setup.basis),
        "runtime_ms": (time.perf_counter() - start) * 1e3,
    }


def mean_field_error(N: int, t: float, setup: MeanFieldSetup) -> float:
    return mean_field_run(N, t, setup)["trace_distance"]
