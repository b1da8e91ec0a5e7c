"""Fluctuation dynamics around the Hartree trajectory in a truncated Fock space.

Conjugating the Fock Hamiltonian with Weyl operators,

    U(t) = W*(sqrt(N) phi_t) exp(-i H t) W(sqrt(N) phi_0),

gives ``i dU/dt = L(t) U`` where ``L`` is the expansion of
``(1/6N^2) int Vbar (a* + sqrt(N) conj(phi))^3 (a + sqrt(N) phi)^3`` plus the
kinetic part, minus the terms produced by differentiating the Weyl
operators.  Each normal-ordered monomial is labelled by the set ``B`` of
positions (x, y, z) carrying a creation operator and the set ``A`` carrying
an annihilation operator; the remaining slots are filled with ``conj(phi)``
and ``phi``.  In the mode basis every such term is a contraction of the
interaction tensor with the Hartree coefficients.

Terms are grouped by degree:

    L2  = dGamma(eps) + (|B|,|A|) in {(2,0),(0,2),(1,1)}
    L3  = (3,0),(0,3),(2,1),(1,2)
    L4c = (3,1),(1,3)        L4r = (2,2)
    L5  = (3,2),(2,3)        L6  = (3,3)

``literal=True`` keeps only the monomials that appear in the printed
generator list (no direct term ``|phi_y|^2|phi_z|^2 a*_x a_x`` in L2 and
no ``|phi_z|^2 phi_y a*_x a*_y a_x`` terms in L3); it exists so that the
effect of those omissions can be measured by the identity check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .fock import (
    FockBasis,
    FockVector,
    annihilation_operator,
    creation_operator,
    d_N,
    displaced_number_amplitudes,
    product_state,
    second_quantization,
    vacuum,
)
from .hartree import GalerkinFlow, galerkin_rhs
from .potentials import InteractionTensor

__all__ = [
    "GeneratorSet",
    "GeneratorTemplate",
    "FluctuationPropagator",
    "ExactFluctuation",
    "build_generators",
    "fock_hamiltonian",
    "generator_identity_check",
    "propagate_fluctuation",
    "parity_expectation",
    "moment_growth",
    "truncated_vs_full",
    "displaced_product_state",
    "evaluate_Et",
    "reconstruction_target",
    "sector_shifts",
    "operator_bound_ratio",
]

_SLOTS = (0, 1, 2)
_LETTERS_BAR = "abc"
_LETTERS = "def"


def _lowering_stack(basis: FockBasis, k: int) -> sp.csr_matrix:
    """Vertical stack of ``a_{s_1} ... a_{s_k}`` over all ``K^k`` multi-indices."""
    cache = basis.__dict__.setdefault("_lowering_stacks", {})
    if k not in cache:
        if k == 0:
            cache[k] = sp.identity(basis.dim, dtype=complex, format="csr")
        else:
            prev = _lowering_stack(basis, k - 1)
            a = basis.annihilators
            blocks = [a[s] @ prev[i * basis.dim:(i + 1) * basis.dim]
                      for i in range(basis.K ** (k - 1)) for s in range(basis.K)]
            cache[k] = sp.vstack(blocks, format="csr").astype(complex)
    return cache[k]


def _normal_ordered(basis: FockBasis, coeff: np.ndarray, b: int, a: int) -> sp.csr_matrix:
    """``sum C[P, S] a*_P a_S`` for a coefficient array of shape ``(K,)*(b+a)``."""
    K, D = basis.K, basis.dim
    C = np.asarray(coeff, dtype=complex).reshape(K**b, K**a)
    middle = sp.kron(sp.csr_matrix(C), sp.identity(D, format="csr"), format="csr")
    return (_lowering_stack(basis, b).conj().T @ middle @ _lowering_stack(basis, a)).tocsr()


def _contract(T: np.ndarray, c: np.ndarray, B: tuple, A: tuple) -> np.ndarray:
    """Fill bar slots outside ``B`` with conj(c), unbar slots outside ``A`` with c."""
    subs_T = _LETTERS_BAR + _LETTERS
    operands, subs = [T], [subs_T]
    for i in _SLOTS:
        if i not in B:
            operands.append(c.conj())
            subs.append(_LETTERS_BAR[i])
        if i not in A:
            operands.append(c)
            subs.append(_LETTERS[i])
    out = "".join(_LETTERS_BAR[i] for i in B) + "".join(_LETTERS[i] for i in A)
    return np.einsum(",".join(subs) + "->" + out, *operands)


def _degree_coefficient(T, c, b, a, keep=None) -> np.ndarray:
    """Sum of contractions over all position sets of sizes (b, a) accepted by ``keep``."""
    K = T.shape[0]
    total = np.zeros((K,) * (b + a), dtype=complex)
    for B in combinations(_SLOTS, b):
        for A in combinations(_SLOTS, a):
            if keep is None or keep(B, A):
                total = total + _contract(T, c, B, A)
    return total


def _herm(op: sp.csr_matrix) -> sp.csr_matrix:
    return (0.5 * (op + op.conj().T)).tocsr()


def fock_hamiltonian(N: int, tensor: InteractionTensor, basis: FockBasis) -> sp.csr_matrix:
    """``dGamma(eps) + (1/(6 N^2)) sum T a*a*a* aaa`` on the whole truncated space."""
    kin = sp.diags(basis.occupations @ tensor.basis.eps).astype(complex)
    return (kin + _interaction_six(N, tensor, basis)).tocsr()


def _interaction_six(N, tensor, basis):
    cache = basis.__dict__.setdefault("_six_cache", {})
    key = (id(tensor), N)
    if key not in cache:
        cache[key] = _herm(_normal_ordered(basis, tensor.entries, 3, 3) / (6.0 * N**2))
    return cache[key]


@dataclass
class GeneratorSet:
    """Assembled generators at one time slice.

    ``L0`` is the scalar ``(N/6) int Vbar |phi|^6``.  ``weyl_phase`` is the
    further scalar ``-(N/2) int Vbar |phi|^6`` contributed by the time
    derivative of the Weyl operators; only the identity check needs it.
    ``raising`` holds the number-raising halves of L3, L4c and L5 so that
    the cutoff can be inserted as ``X chi + chi X*``.
    """

    basis: FockBasis
    N: int
    coeffs: np.ndarray
    L0: float
    weyl_phase: float
    L2: sp.csr_matrix
    L3: sp.csr_matrix
    L4c: sp.csr_matrix
    L4r: sp.csr_matrix
    L5: sp.csr_matrix
    L6: sp.csr_matrix
    raising: dict = field(repr=False, default_factory=dict)
    M: int | None = None

    L1 = 0.0

    def cutoff(self) -> sp.dia_matrix:
        M = self.basis.N_max if self.M is None else self.M
        return sp.diags((self.basis.totals <= M).astype(float))

    def truncated(self, name: str) -> sp.csr_matrix:
        """``X chi(N<=M) + chi(N<=M) X*`` for L3, L4c, L5; ``chi L4r`` for L4r."""
        chi = self.cutoff()
        if name == "L4r":
            return (chi @ self.L4r).tocsr()
        X = self.raising[name]
        Y = X @ chi
        return (Y + Y.conj().T).tocsr()

    def operator(self, selection: str = "full", include_scalars: bool = False) -> sp.csr_matrix:
        """Sum of generators for ``selection`` in {"full", "truncated", "reduced"}."""
        if selection == "reduced":
            op = self.L2 + self.L4r + self.L6
        elif selection == "full":
            op = self.L2 + self.L3 + self.L4c + self.L4r + self.L5 + self.L6
        elif selection == "truncated":
            op = (self.L2 + self.truncated("L3") + self.truncated("L4c")
                  + self.truncated("L4r") + self.truncated("L5") + self.L6)
        else:
            raise ValueError(f"unknown generator selection {selection!r}")
        if include_scalars:
            op = op + (self.L0 + self.weyl_phase) * sp.identity(self.basis.dim, format="csr")
        return op.tocsr()

    def terms(self) -> dict:
        return {"L2": self.L2, "L3": self.L3, "L4c": self.L4c, "L4r": self.L4r,
                "L5": self.L5, "L6": self.L6}


def build_generators(phi_t, tensor: InteractionTensor, N: int, basis: FockBasis,
                     M: int | None = None, literal: bool = False) -> GeneratorSet:
    """Assemble L0, L2, ..., L6 for Hartree coefficients ``phi_t``."""
    c = np.asarray(phi_t, dtype=complex)
    if abs(np.linalg.norm(c) - 1) > 1e-8:
        raise ValueError(f"phi_t must be normalized (norm {np.linalg.norm(c):.3e})")
    if tensor.K != basis.K or c.shape != (basis.K,):
        raise ValueError("tensor, basis and phi_t disagree on K")
    T = tensor.entries
    pref = lambda k: N ** ((6 - k) / 2) / (6.0 * N**2)  # noqa: E731

    sextic = float(_contract(T, c, (), ()).real)
    L0 = pref(0) * sextic
    weyl_phase = -0.5 * N * sextic

    def op(b, a, keep=None):
        coeff = _degree_coefficient(T, c, b, a, keep)
        return _normal_ordered(basis, coeff, b, a)

    if literal:
        keep11 = lambda B, A: B[0] != A[0]  # noqa: E731
        keep21 = lambda B, A: A[0] not in B  # noqa: E731
    else:
        keep11 = keep21 = None

    kin = sp.diags(basis.occupations @ tensor.basis.eps).astype(complex)
    pair = op(2, 0) * pref(2)
    L2 = (kin + pair + pair.conj().T + _herm(op(1, 1, keep11) * pref(2))).tocsr()

    X3 = (op(3, 0) + op(2, 1, keep21)) * pref(3)
    X4 = op(3, 1) * pref(4)
    X5 = op(3, 2) * pref(5)
    L3 = (X3 + X3.conj().T).tocsr()
    L4c = (X4 + X4.conj().T).tocsr()
    L5 = (X5 + X5.conj().T).tocsr()
    L4r = _herm(op(2, 2) * pref(4))
    L6 = _interaction_six(N, tensor, basis)
    return GeneratorSet(basis, N, c, L0, weyl_phase, L2, L3, L4c, L4r, L5, L6,
                        raising={"L3": X3.tocsr(), "L4c": X4.tocsr(), "L5": X5.tocsr()}, M=M)


def sector_shifts(op: sp.spmatrix, basis: FockBasis) -> set[int]:
    """Set of particle-number changes produced by the nonzero entries of ``op``."""
    coo = sp.coo_matrix(op)
    mask = np.abs(coo.data) > 0
    return set(np.unique(basis.totals[coo.row[mask]] - basis.totals[coo.col[mask]]).tolist())


# (b, a) degree, group, whether the group is Hermitized as (O + O*)/2
# rather than paired as X + X*
_GROUPS = (
    ((2, 0), "L2", False), ((1, 1), "L2", True),
    ((3, 0), "L3", False), ((2, 1), "L3", False),
    ((3, 1), "L4c", False), ((2, 2), "L4r", True),
    ((3, 2), "L5", False),
)


class GeneratorTemplate:
    """Precompiled generator for one selection on a fixed sparsity pattern.

    Every time-dependent generator is ``sum_k w_k F_k + conj(w_k) F_k*`` plus
    a fixed part, with ``F_k`` single normal-ordered monomials (times the
    cutoff where the truncated selection requires it) and ``w_k`` the
    contracted tensor coefficients.  All ``F_k`` are scattered onto the
    union pattern once, so evaluating the generator is a single
    sparse-times-vector product.
    """

    def __init__(self, tensor: InteractionTensor, N: int, basis: FockBasis,
                 selection: str = "full", M: int | None = None):
        if selection not in ("full", "truncated", "reduced"):
            raise ValueError(f"unknown generator selection {selection!r}")
        self.tensor, self.N, self.basis, self.selection, self.M = tensor, N, basis, selection, M
        K, D = basis.K, basis.dim
        chi = sp.diags((basis.totals <= (basis.N_max if M is None else M)).astype(float))
        groups = {"reduced": ("L2", "L4r")}.get(selection, ("L2", "L3", "L4c", "L4r", "L5"))
        self._blocks = [(ba, herm) for ba, name, herm in _GROUPS if name in groups]
        mats, fixed = [], sp.diags(basis.occupations @ tensor.basis.eps).astype(complex)
        fixed = fixed + _interaction_six(N, tensor, basis)
        for (b, a), herm in self._blocks:
            name = next(n for ba, n, _ in _GROUPS if ba == (b, a))
            up, down = _lowering_stack(basis, b), _lowering_stack(basis, a)
            for P in range(K**b):
                left = up[P * D:(P + 1) * D].conj().T
                for S in range(K**a):
                    F = left @ down[S * D:(S + 1) * D]
                    if selection == "truncated" and name != "L2":
                        F = chi @ F if name == "L4r" else F @ chi
                    mats.append(F.tocsr() * (0.5 if herm else 1.0))
        everything = mats + [m.conj().T.tocsr() for m in mats] + [fixed.tocsr()]
        union = abs(everything[0])
        for m in everything[1:]:
            union = union + abs(m)
        union = union.tocsr()
        union.sort_indices()
        self._indptr, self._indices = union.indptr, union.indices
        rows = np.repeat(np.arange(D), np.diff(union.indptr))
        keys = rows * D + union.indices
        order = np.argsort(keys)
        skeys = keys[order]
        stack_rows, stack_cols, stack_vals = [], [], []
        for k, m in enumerate(everything):
            coo = m.tocoo()
            pos = order[np.searchsorted(skeys, coo.row * D + coo.col)]
            stack_rows.append(np.full(len(pos), k))
            stack_cols.append(pos)
            stack_vals.append(coo.data)
        self._stack = sp.csr_matrix(
            (np.concatenate(stack_vals), (np.concatenate(stack_rows), np.concatenate(stack_cols))),
            shape=(len(everything), len(keys)), dtype=complex,
        ).T.tocsr()
        self._n = len(mats)

    def weights(self, phi_t) -> np.ndarray:
        c = np.asarray(phi_t, dtype=complex)
        T, N = self.tensor.entries, self.N
        parts = []
        for (b, a), _ in self._blocks:
            pref = N ** ((6 - b - a) / 2) / (6.0 * N**2)
            parts.append(pref * _degree_coefficient(T, c, b, a).ravel())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)

    def __call__(self, phi_t) -> sp.csr_matrix:
        w = self.weights(phi_t)
        coeffs = np.concatenate([w, w.conj(), [1.0]])
        data = self._stack @ coeffs
        D = self.basis.dim
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(D, D))


_BOUND_POWERS = {"L3": (3, 0.5), "L4c": (4, 1.0), "L5": (5, 1.5)}


def operator_bound_ratio(gens: GeneratorSet, name: str, j: int, vectors) -> dict:
    """Largest ``||(N+1)^(j/2) L v|| / ||(N+1)^((j+p)/2) v||`` over ``vectors``.

    ``p`` is 3, 4, 5 for L3, L4c, L5.  ``scaled`` multiplies the ratio by the
    expected decay ``N^(1/2)``, ``N`` and ``N^(3/2)`` respectively.
    """
    if name not in _BOUND_POWERS:
        raise ValueError(f"no bound registered for {name!r}")
    p, q = _BOUND_POWERS[name]
    op = gens.terms()[name]
    weight = gens.basis.totals + 1.0
    worst = 0.0
    for v in vectors:
        num = np.linalg.norm(weight ** (j / 2) * (op @ v))
        den = np.linalg.norm(weight ** ((j + p) / 2) * v)
        worst = max(worst, num / den)
    return {"ratio": float(worst), "scaled": float(worst * gens.N**q)}


# ---------------------------------------------------------------------------
# propagation

_ROUNDOFF = 1e-13
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_CF4 = ((3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12)


@dataclass
class FluctuationPropagator:
    """Time-ordered propagation ``i dv/dt = L(t) v`` for a generator selection.

    ``scheme="midpoint"`` freezes the generator at the step midpoint
    (second order).  ``scheme="cf4"`` (default) uses the fourth-order
    commutator-free product of two exponentials with the generator sampled
    at the Gauss points.  Steps are controlled by step doubling: a step of
    size ``h`` is accepted when it agrees with two half steps to ``tol * h``.
    """

    tensor: InteractionTensor
    basis: FockBasis
    N: int
    flow: GalerkinFlow
    selection: str = "full"
    M: int | None = None
    tol: float = 1e-8
    h_max: float = 0.05
    max_steps: int = 5000
    include_scalars: bool = False
    scheme: str = "cf4"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.N > self.basis.N_max / 4:
            raise ValueError(f"N={self.N} violates the margin N <= N_max/4 (N_max={self.basis.N_max})")
        if self.scheme not in ("cf4", "midpoint"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.selection not in ("full", "truncated", "reduced"):
            raise ValueError(f"unknown generator selection {self.selection!r}")

    def generator(self, t: float) -> sp.csr_matrix:
        if "template" not in self._cache:
            self._cache["template"] = GeneratorTemplate(self.tensor, self.N, self.basis,
                                                        self.selection, self.M)
        c = self.flow(t)
        op = self._cache["template"](c)
        if self.include_scalars:
            sextic = float(_contract(self.tensor.entries, c, (), ()).real)
            op = op + (-self.N / 3.0) * sextic * sp.identity(self.basis.dim, format="csr")
        return op

    def _step(self, v, t, h):
        if self.scheme == "midpoint":
            return expm_multiply(-1j * h * self.generator(t + h / 2), v)
        A1, A2 = self.generator(t + _GAUSS[0] * h), self.generator(t + _GAUSS[1] * h)
        a1, a2 = _CF4
        v = expm_multiply(-1j * h * (a2 * A1 + a1 * A2), v)
        return expm_multiply(-1j * h * (a1 * A1 + a2 * A2), v)

    def initial_step(self) -> float:
        speed = np.linalg.norm(galerkin_rhs(self.flow(0.0), self.tensor, self.tensor.basis))
        return min(self.h_max, 0.05 / max(speed, 1e-12))

    def run(self, v0: np.ndarray, t_end: float, t_start: float = 0.0) -> np.ndarray:
        """Propagate ``v0`` from ``t_start`` to ``t_end`` (either direction)."""
        v = np.asarray(v0, dtype=complex).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("initial vector is not finite")
        span = t_end - t_start
        if span == 0:
            return v
        sign = 1.0 if span > 0 else -1.0
        order = 4 if self.scheme == "cf4" else 2
        t, remaining = t_start, abs(span)
        h = self.initial_step()
        steps = 0
        while remaining > 1e-14:
            h = min(h, remaining)
            full = self._step(v, t, sign * h)
            half = self._step(self._step(v, t, sign * h / 2), t + sign * h / 2, sign * h / 2)
            err = np.linalg.norm(full - half)
            steps += 1
            if steps > self.max_steps:
                raise RuntimeError(f"fluctuation propagation exceeded {self.max_steps} steps "
                                   f"(t={t:.4g}, h={h:.3e}, err={err:.3e})")
            budget = self.tol * h + _ROUNDOFF
            factor = 2.0 if err == 0 else 0.9 * (budget / err) ** (1 / order)
            if err <= budget:
                v = half
                t += sign * h
                remaining -= h
                h = min(self.h_max, h * min(2.0, max(factor, 0.5)))
            else:
                h *= max(0.2, factor)
        return v

    def trajectory(self, v0: np.ndarray, times) -> list[np.ndarray]:
        out, v, t_prev = [], np.asarray(v0, dtype=complex), 0.0
        for t in times:
            v = self.run(v, t, t_prev)
            out.append(v.copy())
            t_prev = t
        return out


class ExactFluctuation:
    """Full fluctuation dynamics from its definition.

    ``U(t; s) v = W*(sqrt N phi_t) exp(-i H (t - s)) W(sqrt N phi_s) v`` is
    evaluated on a Fock space padded by ``pad`` extra particles (default
    ``2 * N_max``) and projected back.  ``H`` is diagonalized sector by
    sector once.  This is the reference for the full generator; it has the
    same ``run`` interface as :class:`FluctuationPropagator`.
    """

    selection = "full"

    def __init__(self, tensor: InteractionTensor, basis: FockBasis, N: int, flow: GalerkinFlow,
                 pad: int | None = None):
        if N > basis.N_max / 4:
            raise ValueError(f"N={N} violates the margin N <= N_max/4 (N_max={basis.N_max})")
        self.tensor, self.basis, self.N, self.flow = tensor, basis, N, flow
        self.big = FockBasis(basis.K, basis.N_max + (2 * basis.N_max if pad is None else pad))
        H = fock_hamiltonian(N, tensor, self.big)
        self._blocks = []
        for n in range(self.big.N_max + 1):
            sl = self.big.sector(n)
            w, V = np.linalg.eigh(H[sl, sl].toarray())
            self._blocks.append((sl, w, V))

    def _evolve(self, x, tau):
        out = np.empty_like(x)
        for sl, w, V in self._blocks:
            out[sl] = V @ (np.exp(-1j * w * tau)[:, None] * (V.conj().T @ x[sl]))
        return out

    def _weyl(self, f, x, sign):
        a = annihilation_operator(self.big, f)
        return expm_multiply(sign * (a.conj().T - a).tocsc(), x)

    def run_padded(self, x, t_end: float, t_start: float = 0.0) -> np.ndarray:
        """``U(t_end; t_start)`` on vectors of the padded space."""
        x = np.asarray(x, dtype=complex)
        single = x.ndim == 1
        x = x.reshape(self.big.dim, -1)
        root = math.sqrt(self.N)
        x = self._weyl(root * self.flow(t_start), x, 1.0)
        x = self._evolve(x, t_end - t_start)
        x = self._weyl(root * self.flow(t_end), x, -1.0)
        return x[:, 0] if single else x

    def run(self, v0, t_end: float, t_start: float = 0.0) -> np.ndarray:
        v0 = np.asarray(v0, dtype=complex)
        D = self.basis.dim
        x = np.zeros((self.big.dim,) + v0.shape[1:], dtype=complex)
        x[:D] = v0
        return self.run_padded(x, t_end, t_start)[:D]

    def leakage(self, v0, t_end: float, t_start: float = 0.0) -> float:
        """Norm lost by projecting ``U v0`` back onto the unpadded space."""
        v0 = np.asarray(v0, dtype=complex)
        return float(abs(np.linalg.norm(v0) - np.linalg.norm(self.run(v0, t_end, t_start))))

    def trajectory(self, v0, times) -> list[np.ndarray]:
        return [self.run(v0, t) for t in times]


def propagate_fluctuation(prop: FluctuationPropagator, v0: FockVector, t: float) -> FockVector:
    return FockVector(v0.basis, prop.run(v0.amplitudes, t))


def parity_expectation(prop: FluctuationPropagator, t: float, f) -> complex:
    """``<Omega, U*(t) a(f) U(t) Omega>`` for the propagator's generator selection."""
    v = prop.run(vacuum(prop.basis).amplitudes, t)
    a = annihilation_operator(prop.basis, f)
    return complex(np.vdot(v, a @ v))


def moment_growth(prop, j: float, t_grid) -> dict:
    """``<(N+1)^j>`` along ``U(t) Omega`` with an affine fit of its logarithm.

    For an :class:`ExactFluctuation` the moments are taken on its padded
    space.  ``saturated`` is set when ``<N>`` exceeds ``N_max / 4`` of the
    working basis at any sampled time; the series is then untrusted.
    ``excess`` is the largest amount by which ``log <(N+1)^j>`` rises above
    the least-squares line.
    """
    if j > 4:
        raise ValueError("moment order j > 4 is not supported")
    exact = isinstance(prop, ExactFluctuation)
    basis = prop.big if exact else prop.basis
    run = prop.run_padded if exact else prop.run
    omega = vacuum(basis).amplitudes
    t = np.asarray(t_grid, dtype=float)
    if exact:
        states = [run(omega, tau) for tau in t]
    else:
        states, v, prev = [], omega, 0.0
        for tau in t:
            v = run(v, tau, prev)
            states.append(v)
            prev = tau
    totals = basis.totals
    series, mean_n = [], []
    for v in states:
        w = np.abs(v) ** 2 / np.sum(np.abs(v) ** 2)
        series.append(float(np.sum(w * (totals + 1.0) ** j)))
        mean_n.append(float(np.sum(w * totals)))
    logs = np.log(series)
    slope, intercept = np.polyfit(t, logs, 1)
    excess = logs - (slope * t + intercept)
    return {
        "t": t.tolist(),
        "series": series,
        "mean_number": mean_n,
        "rate": float(slope),
        "intercept": float(intercept),
        "excess": float(max(0.0, excess.max())),
        "max_abs_residual": float(np.abs(excess).max()),
        "saturated": bool(max(mean_n) > prop.basis.N_max / 4),
    }


def truncated_vs_full(M: int, j: float, t: float, full: FluctuationPropagator) -> float:
    """``|<U Omega, (N+1)^j (U - U^(M)) Omega>|`` at time ``t``."""
    omega = vacuum(full.basis).amplitudes
    u = full.run(omega, t)
    if M >= full.basis.N_max:
        um = u
    else:
        trunc = FluctuationPropagator(full.tensor, full.basis, full.N, full.flow, "truncated", M,
                                      full.tol, full.h_max, full.max_steps, full.include_scalars,
                                      full.scheme)
        um = trunc.run(omega, t)
    weight = (full.basis.totals + 1.0) ** j
    return float(abs(np.vdot(u, weight * (u - um))))


# ---------------------------------------------------------------------------
# E-functionals

def displaced_product_state(phi, N: int, basis: FockBasis) -> np.ndarray:
    """``W*(sqrt(N) phi) (a*(phi))^N Omega / sqrt(N!)`` restricted to the truncated space.

    All particles sit in the single mode ``phi``, so the vector is
    ``sum_m <m|D(-sqrt N)|N> |m>_phi`` with one-mode displaced number-state
    amplitudes; no truncation of the K-mode space enters.
    """
    amps = displaced_number_amplitudes(N, -math.sqrt(N), basis.N_max)
    out = np.zeros(basis.dim, dtype=complex)
    for m in range(basis.N_max + 1):
        out += amps[m] * product_state(phi, m, basis).amplitudes
    return out


def evaluate_Et(J, t: float, which: int, prop, phi0=None) -> complex:
    """``E_t^1(J)`` (which=1) or ``E_t^2(J)`` (which=2) for the full fluctuation dynamics.

    ``E^1 = (d_N/N) <Phi, U*(t) dGamma(J) U(t) Omega>`` and
    ``E^2 = (d_N/sqrt N) <Phi, U*(t) (a*(J phi_t) + a(J phi_t)) U(t) Omega>``
    with ``Phi = W*(sqrt(N) phi_0) (a*(phi_0))^N Omega / sqrt(N!)``.

    ``prop`` is an :class:`ExactFluctuation` (the computation then runs on
    its padded space) or a full-selection :class:`FluctuationPropagator`.
    The adjoint is applied by propagating backward from ``t`` to 0.
    """
    N = prop.N
    if N > prop.basis.N_max / 4:
        raise ValueError(f"N={N} violates the margin N <= N_max/4 (N_max={prop.basis.N_max})")
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    if prop.selection != "full":
        raise ValueError("E-functionals are defined with the full fluctuation dynamics")
    exact = isinstance(prop, ExactFluctuation)
    basis = prop.big if exact else prop.basis
    run = prop.run_padded if exact else prop.run
    phi0 = prop.flow(0.0) if phi0 is None else np.asarray(phi0, dtype=complex)
    J = np.asarray(J, dtype=complex)
    u = run(vacuum(basis).amplitudes, t)
    if which == 1:
        x = second_quantization(J, basis) @ u
        scale = d_N(N) / N
    else:
        g = J @ prop.flow(t)
        x = (creation_operator(basis, g) + annihilation_operator(basis, g)) @ u
        scale = d_N(N) / math.sqrt(N)
    back = run(x, 0.0, t_start=t)
    Phi = displaced_product_state(phi0, N, basis)
    return complex(scale * np.vdot(Phi, back))


def reconstruction_target(J, t: float, N: int, tensor: InteractionTensor, phi0, flow: GalerkinFlow) -> complex:
    """``Tr J (gamma_N(t) - |phi_t><phi_t|)`` from exact sector dynamics."""
    from .manybody import build_sector_hamiltonian, propagate, reduced_density

    fb = FockBasis(tensor.K, N)
    H = build_sector_hamiltonian(N, tensor, fb)
    psi = propagate(H, product_state(phi0, N, fb), t)
    gamma = reduced_density(psi).matrix
    c = flow(t)
    J = np.asarray(J, dtype=complex)
    return complex(np.trace(J @ (gamma - np.outer(c, c.conj()))))


# ---------------------------------------------------------------------------
# identity check

def generator_identity_check(flow: GalerkinFlow, tensor: InteractionTensor, N: int, basis: FockBasis,
                             s: float, h: float = 1e-3, vectors=None, literal: bool = False,
                             rng=None, pad: int | None = None) -> float:
    """Relative residual of ``i dU/dt = L U`` at ``t = s`` by central differences.

    ``U(t) = W*(sqrt N phi_t) exp(-i H (t - s)) W(sqrt N phi_s)`` is applied
    to the test vectors with Krylov exponentials and differentiated at
    ``t = s``, where ``U(s) = 1``.  ``L`` includes both scalars.  Default
    test vectors are the vacuum and three random vectors on sectors <= 2.

    The exponentials act on a padded space with
    ``N_max + pad`` particles (default ``pad = N_max``) and the difference
    quotient is projected back, so that cutoff artifacts of the dense
    exponentials do not pollute the comparison.
    """
    if N > basis.N_max / 4:
        raise ValueError(f"N={N} violates the margin N <= N_max/4 (N_max={basis.N_max})")
    if s - h < 0:
        raise ValueError("need s >= h")
    big = FockBasis(basis.K, basis.N_max + (basis.N_max if pad is None else pad))
    H = fock_hamiltonian(N, tensor, big)
    rootN = math.sqrt(N)

    def weyl_generator(f):
        a = annihilation_operator(big, f)
        return (a.conj().T - a).tocsc()

    if vectors is None:
        rng = np.random.default_rng(0) if rng is None else rng
        top = basis.offsets[3]
        vecs = [vacuum(basis).amplitudes]
        for _ in range(3):
            v = np.zeros(basis.dim, dtype=complex)
            v[:top] = rng.normal(size=top) + 1j * rng.normal(size=top)
            vecs.append(v / np.linalg.norm(v))
    else:
        vecs = [np.asarray(v, dtype=complex) for v in vectors]
    D = basis.dim
    X = np.zeros((big.dim, len(vecs)), dtype=complex)
    X[:D] = np.column_stack(vecs)
    X = expm_multiply(weyl_generator(rootN * flow(s)), X)

    def U(tau):
        Y = expm_multiply(-1j * tau * H, X)
        return expm_multiply(-weyl_generator(rootN * flow(s + tau)), Y)[:D]

    diff = 1j * (U(h) - U(-h)) / (2 * h)
    L = build_generators(flow(s), tensor, N, basis, literal=literal).operator("full", include_scalars=True)
    worst = 0.0
    for k, v in enumerate(vecs):
        lhs = diff[:, k]
        rhs = L @ v
        worst = max(worst, np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.linalg.norm(v)))
    return float(worst)
