"""Bosonic Fock space over K modes, truncated at N_max particles in total.

Basis vectors are occupation tuples ``(n_1, ..., n_K)`` with ``sum n <= N_max``,
ranked graded-lexicographically: by total particle number first, then in
descending lexicographic order inside a sector.  Sectors are therefore
contiguous index ranges.

Creation operators clip: amplitudes pushed above ``N_max`` are dropped,
which makes the truncated ``a*`` the exact adjoint of the truncated ``a``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.sparse.linalg import expm_multiply

__all__ = [
    "FockBasis",
    "FockVector",
    "DENSE_LIMIT",
    "vacuum",
    "basis_vector",
    "creation_operator",
    "annihilation_operator",
    "apply_creation",
    "apply_annihilation",
    "number_operator",
    "moment",
    "second_quantization",
    "weyl_operator",
    "weyl_apply",
    "coherent_state",
    "product_state",
    "displaced_number_amplitudes",
    "d_N",
    "project_sector",
    "occupation_csv",
    "vector_to_json",
    "interior_vectors",
    "ccr_residual",
    "weyl_unitarity_residual",
    "weyl_shift_residual",
]

DENSE_LIMIT = 4096


def _compositions(n: int, K: int):
    """All K-tuples of nonnegative ints summing to n, descending lexicographic."""
    if K == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, K - 1):
            yield (first,) + rest


class FockBasis:
    """Occupation basis with rank/unrank and cached ladder matrices."""

    def __init__(self, K: int, N_max: int):
        if K < 1 or N_max < 0:
            raise ValueError("need K >= 1 and N_max >= 0")
        self.K = int(K)
        self.N_max = int(N_max)
        occ = []
        offsets = [0]
        for n in range(self.N_max + 1):
            occ.extend(_compositions(n, self.K))
            offsets.append(len(occ))
        self.occupations = np.array(occ, dtype=np.int64).reshape(-1, self.K)
        self.offsets = np.array(offsets)
        self._rank = {o: i for i, o in enumerate(occ)}

    @property
    def dim(self) -> int:
        return len(self.occupations)

    def rank(self, occupation) -> int:
        key = tuple(int(x) for x in occupation)
        try:
            return self._rank[key]
        except KeyError:
            raise KeyError(f"occupation {key} not in basis (K={self.K}, N_max={self.N_max})") from None

    def unrank(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.occupations[index])

    def sector(self, n: int) -> slice:
        if not 0 <= n <= self.N_max:
            raise ValueError(f"sector {n} outside 0..{self.N_max}")
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    @cached_property
    def totals(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    @cached_property
    def annihilators(self) -> list[sp.csr_matrix]:
        """``a_p`` as sparse matrices, one per mode."""
        mats = []
        for p in range(self.K):
            cols = np.nonzero(self.occupations[:, p] > 0)[0]
            target = self.occupations[cols].copy()
            target[:, p] -= 1
            rows = np.array([self._rank[tuple(t)] for t in target], dtype=np.int64)
            vals = np.sqrt(self.occupations[cols, p].astype(float))
            mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim)))
        return mats

    @cached_property
    def creators(self) -> list[sp.csr_matrix]:
        return [a.T.conj().tocsr() for a in self.annihilators]

    def number_diagonal(self) -> np.ndarray:
        return self.totals.astype(float)


@dataclass
class FockVector:
    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError(f"amplitude vector has shape {self.amplitudes.shape}, basis dim {self.basis.dim}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "FockVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def vacuum(basis: FockBasis) -> FockVector:
    v = np.zeros(basis.dim, dtype=complex)
    v[0] = 1.0
    return FockVector(basis, v)


def basis_vector(basis: FockBasis, occupation) -> FockVector:
    v = np.zeros(basis.dim, dtype=complex)
    v[basis.rank(occupation)] = 1.0
    return FockVector(basis, v)


def _coeffs(basis: FockBasis, f) -> np.ndarray:
    f = np.asarray(f, dtype=complex).ravel()
    if f.shape != (basis.K,):
        raise ValueError(f"mode vector has length {f.size}, expected K={basis.K}")
    return f


def annihilation_operator(basis: FockBasis, f) -> sp.csr_matrix:
    """``a(f) = sum_p conj(f_p) a_p``."""
    f = _coeffs(basis, f)
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for p, a in enumerate(basis.annihilators):
        if f[p] != 0:
            out = out + np.conj(f[p]) * a
    return out.tocsr()


def creation_operator(basis: FockBasis, f) -> sp.csr_matrix:
    """``a*(f) = sum_p f_p a*_p`` with cutoff clipping."""
    return annihilation_operator(basis, f).T.conj().tocsr()


def apply_creation(f, v: FockVector) -> FockVector:
    return FockVector(v.basis, creation_operator(v.basis, f) @ v.amplitudes)


def apply_annihilation(f, v: FockVector) -> FockVector:
    return FockVector(v.basis, annihilation_operator(v.basis, f) @ v.amplitudes)


def number_operator(v: FockVector) -> FockVector:
    return FockVector(v.basis, v.basis.totals * v.amplitudes)


def moment(v: FockVector, j: float) -> float:
    """``<v, (N+1)^j v> / <v, v>``."""
    w = np.abs(v.amplitudes) ** 2
    total = w.sum()
    if total == 0:
        raise ValueError("moment of the zero vector is undefined")
    return float(np.sum(w * (v.basis.totals + 1.0) ** j) / total)


def second_quantization(J, basis: FockBasis, atol: float = 1e-12) -> sp.csr_matrix:
    """``dGamma(J) = sum_pq J_pq a*_p a_q`` for Hermitian ``J``."""
    J = np.asarray(J, dtype=complex)
    if J.shape != (basis.K, basis.K):
        raise ValueError(f"J must be {basis.K}x{basis.K}")
    if np.max(np.abs(J - J.conj().T)) > atol:
        raise ValueError("J is not Hermitian")
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for p in range(basis.K):
        for q in range(basis.K):
            if J[p, q] != 0:
                out = out + J[p, q] * (basis.creators[p] @ basis.annihilators[q])
    return out.tocsr()


def _weyl_generator(basis: FockBasis, f) -> sp.csr_matrix:
    a = annihilation_operator(basis, f)
    return (a.T.conj() - a).tocsr()


def weyl_operator(f, basis: FockBasis) -> np.ndarray:
    """Dense unitary ``exp(a*(f) - a(f))`` on the truncated space.

    The skew-Hermitian generator ``G`` is written as ``-iH`` with ``H``
    Hermitian and exponentiated through its eigendecomposition, which
    keeps the result unitary to rounding.
    """
    if basis.dim > DENSE_LIMIT:
        raise ValueError(f"dense Weyl operator limited to dim <= {DENSE_LIMIT}")
    H = (1j * _weyl_generator(basis, f)).toarray()
    H = 0.5 * (H + H.conj().T)
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w)) @ V.conj().T


def weyl_apply(f, v: FockVector) -> FockVector:
    basis = v.basis
    if basis.dim <= DENSE_LIMIT:
        return FockVector(basis, weyl_operator(f, basis) @ v.amplitudes)
    G = _weyl_generator(basis, f)
    return FockVector(basis, expm_multiply(G, v.amplitudes))


def _log_powers(f: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """``sum_p n_p log|f_p|`` per row, with ``0 log 0 = 0`` and ``-inf`` when ``f_p = 0 < n_p``."""
    mag = np.abs(f)
    safe = np.log(np.where(mag > 0, mag, 1.0))
    out = occ @ safe
    dead = ((occ > 0) & (mag == 0)[None, :]).any(axis=1)
    return np.where(dead, -np.inf, out)


def coherent_state(f, basis: FockBasis) -> FockVector:
    """Series amplitudes ``exp(-|f|^2/2) prod_p f_p^{n_p} / sqrt(n_p!)``.

    These are the exact coherent-state amplitudes restricted to the
    truncated space (the vector is not renormalized).
    """
    f = _coeffs(basis, f)
    occ = basis.occupations
    logmag = -0.5 * np.sum(np.abs(f) ** 2) - 0.5 * np.sum(gammaln(occ + 1.0), axis=1)
    amp = np.exp(logmag + _log_powers(f, occ))
    phase = np.exp(1j * np.sum(occ * np.angle(f)[None, :], axis=1))
    return FockVector(basis, amp * phase)


def product_state(phi, N: int, basis: FockBasis) -> FockVector:
    """``(a*(phi))^N Omega / sqrt(N!)``, amplitude ``sqrt(N!) prod phi_p^{n_p}/sqrt(n_p!)``."""
    phi = _coeffs(basis, phi)
    if not 0 <= N <= basis.N_max:
        raise ValueError(f"N={N} outside 0..{basis.N_max}")
    sl = basis.sector(N)
    occ = basis.occupations[sl]
    logmag = 0.5 * gammaln(N + 1.0) - 0.5 * np.sum(gammaln(occ + 1.0), axis=1) + _log_powers(phi, occ)
    phase = np.exp(1j * np.sum(occ * np.angle(phi)[None, :], axis=1))
    v = np.zeros(basis.dim, dtype=complex)
    v[sl] = np.exp(logmag) * phase
    return FockVector(basis, v)


def displaced_number_amplitudes(n: int, alpha: complex, m_max: int, cutoff: int | None = None) -> np.ndarray:
    """Single-mode amplitudes ``<m| D(alpha) |n>`` for ``m = 0..m_max``.

    Computed in a one-mode space of dimension ``cutoff + 1``, large enough
    by default that the truncation is invisible at double precision.
    """
    if cutoff is None:
        r = abs(alpha)
        cutoff = int(max(m_max, n) + (r + 1) ** 2 + 12 * (r + math.sqrt(n) + 3) + 40)
    one = FockBasis(1, cutoff)
    D = weyl_operator(np.array([alpha]), one)
    return D[: m_max + 1, n].copy()


def d_N(N: int) -> float:
    """``sqrt(N!) / (N^(N/2) exp(-N/2))`` via log-gamma."""
    if N < 1:
        raise ValueError("d_N needs N >= 1")
    return float(np.exp(0.5 * gammaln(N + 1.0) - 0.5 * N * np.log(N) + 0.5 * N))


def project_sector(v: FockVector, n: int) -> FockVector:
    sl = v.basis.sector(n)
    out = np.zeros_like(v.amplitudes)
    out[sl] = v.amplitudes[sl]
    return FockVector(v.basis, out)


def occupation_csv(basis: FockBasis) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank"] + [f"n{p}" for p in range(basis.K)])
    for i, occ in enumerate(basis.occupations):
        w.writerow([i] + [int(x) for x in occ])
    return buf.getvalue()


def vector_to_json(v: FockVector) -> str:
    return json.dumps({
        "K": v.basis.K,
        "N_max": v.basis.N_max,
        "amplitudes": [[float(z.real), float(z.imag)] for z in v.amplitudes],
    })


def interior_vectors(basis: FockBasis, count: int, rng=None, margin: int = 1) -> list[FockVector]:
    """Random unit vectors supported on sectors ``<= N_max - margin``."""
    rng = np.random.default_rng(0) if rng is None else rng
    top = int(basis.offsets[basis.N_max + 1 - margin])
    out = []
    for _ in range(count):
        v = np.zeros(basis.dim, dtype=complex)
        v[:top] = rng.normal(size=top) + 1j * rng.normal(size=top)
        out.append(FockVector(basis, v / np.linalg.norm(v)))
    return out


def ccr_residual(vectors) -> float:
    """``max ||([a_p, a*_q] - delta_pq) v|| + ||[a_p, a_q] v||`` over modes and vectors.

    The relations hold exactly on vectors with no weight in the top sector.
    """
    worst = 0.0
    for v in vectors:
        basis, x = v.basis, v.amplitudes
        a, ad = basis.annihilators, basis.creators
        for p in range(basis.K):
            for q in range(basis.K):
                comm = a[p] @ (ad[q] @ x) - ad[q] @ (a[p] @ x) - (p == q) * x
                anti = a[p] @ (a[q] @ x) - a[q] @ (a[p] @ x)
                worst = max(worst, float(np.linalg.norm(comm)), float(np.linalg.norm(anti)))
    return worst


def weyl_unitarity_residual(f, basis: FockBasis) -> float:
    """``max |W* W - 1|`` entrywise for the dense truncated Weyl operator."""
    W = weyl_operator(f, basis)
    return float(np.max(np.abs(W.conj().T @ W - np.eye(basis.dim))))


def weyl_shift_residual(f, basis: FockBasis, max_sector: int = 2) -> float:
    """``max_p ||(W* a_p W - a_p - f_p) e||`` over basis vectors ``e`` in sectors ``<= max_sector``.

    The shift ``W*(f) a(g) W(f) = a(g) + <g, f>`` is exact on the full Fock
    space; on the truncated space the residual measures cutoff leakage.
    """
    f = _coeffs(basis, f)
    W = weyl_operator(f, basis)
    top = int(basis.offsets[max_sector + 1])
    E = np.eye(basis.dim, dtype=complex)[:, :top]
    worst = 0.0
    for p, a in enumerate(basis.annihilators):
        lhs = W.conj().T @ (a @ (W @ E))
        rhs = a @ E + f[p] * E
        worst = max(worst, float(np.max(np.linalg.norm(lhs - rhs, axis=0))))
    return worst
