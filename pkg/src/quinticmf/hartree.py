"""Time integration of the quintic Hartree equation

    i d/dt phi = -Laplace(phi) + U[|phi|^2] phi,   U = hartree_potential,

on the grid (Strang splitting) and in a plane-wave Galerkin basis (RK4).

The energy reported by :func:`energy` is the invariant of this flow,
``(1/2) <phi, -Laplace phi> + (1/12) int Vbar |phi|^2 |phi|^2 |phi|^2``,
i.e. one half of the Hamiltonian that generates the equation above.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .potentials import InteractionTensor, RegularizedKernel, hartree_potential, interaction_energy
from .spectral import Field, ModeBasis, fourier_coefficients, sobolev_norm

__all__ = [
    "HartreeState",
    "Trajectory",
    "GalerkinFlow",
    "strang_step",
    "evolve",
    "energy",
    "kinetic_energy",
    "galerkin_rhs",
    "galerkin_energy",
    "rk4_step",
    "galerkin_evolve",
    "trajectory_to_csv",
]


@dataclass
class HartreeState:
    """Either a grid field or a Galerkin coefficient vector, stamped with time ``t``."""

    field: Field | None = None
    coeffs: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        if (self.field is None) == (self.coeffs is None):
            raise ValueError("HartreeState needs exactly one of field or coeffs")

    @property
    def mass(self) -> float:
        if self.field is not None:
            return self.field.norm() ** 2
        return float(np.sum(np.abs(self.coeffs) ** 2))


@dataclass
class Trajectory:
    states: list[HartreeState] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    mass: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    h1_norm: list[float] = field(default_factory=list)

    @property
    def final(self) -> HartreeState:
        return self.states[-1]


def _kinetic_phase(f: Field, tau: float) -> np.ndarray:
    return np.fft.ifftn(np.exp(-1j * f.grid.k_squared * tau) * np.fft.fftn(f.values))


def strang_step(state: HartreeState, kernel: RegularizedKernel, dt: float) -> HartreeState:
    """Half kinetic step, nonlinear phase ``exp(-i U dt)``, half kinetic step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = state.field
    psi = Field(f.grid, _kinetic_phase(f, dt / 2))
    U = hartree_potential(kernel, np.abs(psi.values) ** 2).values
    psi = Field(f.grid, psi.values * np.exp(-1j * U * dt))
    out = Field(f.grid, _kinetic_phase(psi, dt / 2))
    if not np.all(np.isfinite(out.values)):
        raise FloatingPointError(
            f"non-finite field after Strang step at t={state.t + dt:.6g} (dt={dt})"
        )
    return HartreeState(field=out, t=state.t + dt)


def kinetic_energy(f: Field) -> float:
    """``<f, -Laplace f>``."""
    fhat = fourier_coefficients(f)
    return float(np.sum(f.grid.k_squared * np.abs(fhat) ** 2))


def energy(state: HartreeState, kernel: RegularizedKernel) -> float:
    f = state.field
    rho = np.abs(f.values) ** 2
    return 0.5 * kinetic_energy(f) + interaction_energy(kernel, rho) / 12.0


def _record(traj: Trajectory, state: HartreeState, kernel: RegularizedKernel) -> None:
    traj.states.append(state)
    traj.times.append(state.t)
    traj.mass.append(state.mass)
    traj.energy.append(energy(state, kernel))
    traj.h1_norm.append(sobolev_norm(state.field, 1.0))


def evolve(
    state0: HartreeState,
    kernel: RegularizedKernel,
    T: float,
    dt: float,
    sample_every: int | None = None,
) -> Trajectory:
    """Strang-split trajectory on ``[t0, t0 + T]``.

    The step is shrunk to ``T / ceil(T / dt)`` so the final time is hit
    exactly. States are recorded every ``sample_every`` steps (default:
    only the endpoints) and always at the final time.
    """
    if T < 0 or not dt > 0:
        raise ValueError("need T >= 0 and dt > 0")
    traj = Trajectory()
    _record(traj, state0, kernel)
    if T == 0:
        return traj
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    step = T / nsteps
    state = state0
    for k in range(1, nsteps + 1):
        state = strang_step(state, kernel, step)
        state.t = state0.t + k * step
        if k == nsteps or (sample_every and k % sample_every == 0):
            _record(traj, state, kernel)
    return traj


def _cubic(c: np.ndarray) -> np.ndarray:
    return np.einsum("p,q,r->pqr", c, c, c).ravel()


def galerkin_rhs(coeffs: np.ndarray, tensor: InteractionTensor, basis: ModeBasis) -> np.ndarray:
    """``-i (eps_p c_p + (1/2) sum T[p,q,r,s,t,u] conj(c_q c_r) c_s c_t c_u)``."""
    c = np.asarray(coeffs, dtype=complex)
    K = len(c)
    tc = (tensor.as_matrix() @ _cubic(c)).reshape(K, K, K)
    nonlinear = 0.5 * np.einsum("pqr,q,r->p", tc, c.conj(), c.conj())
    return -1j * (basis.eps * c + nonlinear)


def galerkin_energy(coeffs: np.ndarray, tensor: InteractionTensor, basis: ModeBasis) -> float:
    c = np.asarray(coeffs, dtype=complex)
    v = _cubic(c)
    sextic = np.vdot(v, tensor.as_matrix() @ v).real
    return float(0.5 * np.sum(basis.eps * np.abs(c) ** 2) + sextic / 12.0)


def rk4_step(c: np.ndarray, tensor: InteractionTensor, basis: ModeBasis, dt: float) -> np.ndarray:
    k1 = galerkin_rhs(c, tensor, basis)
    k2 = galerkin_rhs(c + 0.5 * dt * k1, tensor, basis)
    k3 = galerkin_rhs(c + 0.5 * dt * k2, tensor, basis)
    k4 = galerkin_rhs(c + dt * k3, tensor, basis)
    return c + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _cfl_step(basis: ModeBasis, dt: float | None) -> float:
    top = float(np.max(basis.eps))
    limit = 0.1 / top if top > 0 else np.inf
    if dt is None:
        dt = min(limit, 1e-3)
    return min(dt, limit)


def galerkin_evolve(
    c0: np.ndarray,
    tensor: InteractionTensor,
    basis: ModeBasis,
    T: float,
    dt: float | None = None,
    sample_every: int | None = None,
) -> Trajectory:
    """RK4 for the Galerkin system with ``dt <= 0.1 / max eps``."""
    dt = _cfl_step(basis, dt)
    traj = Trajectory()

    def rec(c, t):
        traj.states.append(HartreeState(coeffs=c.copy(), t=t))
        traj.times.append(t)
        traj.mass.append(float(np.sum(np.abs(c) ** 2)))
        traj.energy.append(galerkin_energy(c, tensor, basis))
        traj.h1_norm.append(float(np.sqrt(np.sum((1 + basis.eps) * np.abs(c) ** 2))))

    c = np.asarray(c0, dtype=complex).copy()
    rec(c, 0.0)
    if T <= 0:
        return traj
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    step = T / nsteps
    for k in range(1, nsteps + 1):
        c = rk4_step(c, tensor, basis, step)
        if k == nsteps or (sample_every and k % sample_every == 0):
            rec(c, k * step)
    return traj


class GalerkinFlow:
    """Galerkin Hartree solution evaluable at arbitrary times ``t >= 0``.

    The system is integrated lazily with an adaptive 8th-order Runge-Kutta
    method and evaluated through its dense output, so repeated queries at
    nearby times are cheap.

    Parameters
    ----------
    c0 : (K,) complex array
        Initial coefficients.
    rtol, atol : float
        Tolerances passed to the integrator.
    horizon : float
        Length of each integration segment.
    """

    def __init__(self, c0, tensor: InteractionTensor, basis: ModeBasis,
                 rtol: float = 1e-12, atol: float = 1e-14, horizon: float = 1.0):
        self.tensor = tensor
        self.basis = basis
        self.rtol, self.atol, self.horizon = rtol, atol, horizon
        self.c0 = np.asarray(c0, dtype=complex).copy()
        self._segments: list = []
        self._end = 0.0
        self._last = self.c0.copy()

    def _extend(self):
        t0 = self._end
        sol = solve_ivp(lambda t, c: galerkin_rhs(c, self.tensor, self.basis),
                        (t0, t0 + self.horizon), self._last, method="DOP853",
                        rtol=self.rtol, atol=self.atol, dense_output=True)
        if not sol.success:
            raise RuntimeError(f"Galerkin integration failed: {sol.message}")
        self._segments.append((t0, sol.sol))
        self._end = t0 + self.horizon
        self._last = sol.y[:, -1].copy()

    def __call__(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("GalerkinFlow only runs forward from t=0")
        if t == 0:
            return self.c0.copy()
        while t > self._end:
            self._extend()
        k = min(int(t // self.horizon), len(self._segments) - 1)
        return np.asarray(self._segments[k][1](t), dtype=complex)


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV with columns t, mass, energy, h1_norm and, for Galerkin states, re/im per mode."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    galerkin = traj.states and traj.states[0].coeffs is not None
    header = ["t", "mass", "energy", "h1_norm"]
    if galerkin:
        K = len(traj.states[0].coeffs)
        for p in range(K):
            header += [f"re_c{p}", f"im_c{p}"]
    w.writerow(header)
    for i, st in enumerate(traj.states):
        row = [repr(traj.times[i]), repr(traj.mass[i]), repr(traj.energy[i]), repr(traj.h1_norm[i])]
        if galerkin:
            for z in st.coeffs:
                row += [repr(float(z.real)), repr(float(z.imag))]
        w.writerow(row)
    return buf.getvalue()
