"""Numerical boundedness evidence for the functional inequalities behind the estimates.

Trial functions are positive mixtures of Gaussians ``sum_k w_k exp(-b_k |x - c_k|^2)``.
For these, Riesz potentials and convolutions have closed forms, so only the
outermost integral is done by quadrature (midpoint rule on a box, refined
once to measure stability).  The ratios reported are evidence that a
constant exists, not estimates of sharp constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.special import gamma, hyp1f1

from .hartree import HartreeState
from .potentials import RegularizedKernel, floor_kernel
from .spectral import Field, GridSpec, fourier_coefficients

__all__ = [
    "GaussianMixture",
    "HLSCheckSpec",
    "InequalityResult",
    "gaussian_trials",
    "riesz_potential",
    "pairwise_hls",
    "triple_hls_integral",
    "check_generalized_hls",
    "young_integral",
    "check_generalized_young",
    "hardy_quadratic_check",
    "hardy_constant",
    "random_unit_fields",
    "check_V2phi6",
    "v2phi6_direct",
    "v2phi6_along",
    "HARDY_GOLDEN",
]

_TOL = 1e-12

# sup of <f, vbar f> / <f, (1 - Laplace) f> with the floor kernel, L = 2 pi,
# keyed by (d, n); frozen from hardy_constant
HARDY_GOLDEN = {(3, 16): 0.5123454383636227, (1, 64): 2.9612502854986302}


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """``f(x) = sum_k w_k exp(-b_k |x - c_k|^2)`` on ``R^n``."""

    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., n)``."""
        out = np.zeros(x.shape[:-1])
        for w, c, b in zip(self.weights, self.centers, self.widths):
            out += w * np.exp(-b * np.sum((x - c) ** 2, axis=-1))
        return out

    def integral(self) -> float:
        return float(sum(w * (math.pi / b) ** (self.n / 2) for w, b in zip(self.weights, self.widths)))

    def scaled(self, s: float) -> "GaussianMixture":
        return GaussianMixture(self.weights * s, self.centers, self.widths)

    def reach(self) -> float:
        """Radius beyond which every component is below ``exp(-40)`` of its peak."""
        return float(np.max(np.linalg.norm(self.centers, axis=1)) + math.sqrt(40.0 / np.min(self.widths)))


def gaussian_trials(n: int, count: int, seed: int = 0, max_components: int = 3) -> list[GaussianMixture]:
    """Seeded mixtures of 1 to ``max_components`` Gaussians with centers in ``[-1, 1]^n``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        k = int(rng.integers(1, max_components + 1))
        out.append(GaussianMixture(
            weights=rng.uniform(0.5, 1.5, size=k),
            centers=rng.uniform(-1.0, 1.0, size=(k, n)),
            widths=rng.uniform(0.5, 2.0, size=k),
        ))
    return out


def riesz_potential(f: GaussianMixture, lam: float, x: np.ndarray) -> np.ndarray:
    """``int |x - y|^(-lam) f(y) dy`` in closed form (Kummer function), ``0 <= lam < n``."""
    n = f.n
    if not 0 <= lam < n:
        raise ValueError(f"need 0 <= lambda < n, got lambda={lam}, n={n}")
    out = np.zeros(x.shape[:-1])
    for w, c, b in zip(f.weights, f.centers, f.widths):
        pref = math.pi ** (n / 2) * b ** ((lam - n) / 2) * gamma((n - lam) / 2) / gamma(n / 2)
        out += w * pref * hyp1f1(lam / 2, n / 2, -b * np.sum((x - c) ** 2, axis=-1))
    return out


def pairwise_hls(f: GaussianMixture, g: GaussianMixture, lam: float) -> float:
    """``int int f(x) g(y) |x - y|^(-lam) dx dy`` in closed form."""
    n = f.n
    total = 0.0
    for wf, cf, a in zip(f.weights, f.centers, f.widths):
        for wg, cg, b in zip(g.weights, g.centers, g.widths):
            s = a * b / (a + b)
            amp = wf * wg * (math.pi / (a + b)) ** (n / 2)
            # the difference x - y has Gaussian density centered at cf - cg
            diff = GaussianMixture(np.array([amp]), np.array([cf - cg]), np.array([s]))
            total += float(riesz_potential(diff, lam, np.zeros((1, n)))[0])
    return total


def _box(fs, m: int):
    """Midpoint grid on ``[-R, R]^n`` covering every mixture in ``fs``."""
    n = fs[0].n
    R = max(f.reach() for f in fs)
    h = 2 * R / m
    axis = -R + (np.arange(m) + 0.5) * h
    pts = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1)
    return pts, h**n


def _lp_norm(f: GaussianMixture, p: float, m: int) -> float:
    if f.widths.size == 1:
        w, b = f.weights[0], f.widths[0]
        return float(abs(w) * (math.pi / (p * b)) ** (f.n / (2 * p)))
    pts, dv = _box([f], m)
    return float((np.sum(np.abs(f(pts)) ** p) * dv) ** (1 / p))


@dataclass(frozen=True)
class HLSCheckSpec:
    """Exponents for the three-function Hardy-Littlewood-Sobolev form.

    The form is ``int f1(x) f2(y) f3(z) |x-y|^(-lam1) |x-z|^(-lam2)`` and is
    admissible when ``1/p1 + 1/p2 + 1/p3 + (lam1 + lam2)/n = 3``.
    """

    n: int
    p: tuple[float, float, float]
    lam: tuple[float, float]
    seed: int = 0
    max_components: int = 3

    def violations(self) -> list[str]:
        out = []
        if any(pj <= 1 for pj in self.p):
            out.append(f"every p_j must exceed 1 (got {self.p})")
        if any(not 0 < lj < self.n for lj in self.lam):
            out.append(f"every lambda_j must lie in (0, n={self.n}) (got {self.lam})")
        total = sum(1 / pj for pj in self.p) + sum(self.lam) / self.n
        if abs(total - 3) > _TOL:
            out.append(f"1/p1+1/p2+1/p3+(lam1+lam2)/n = {total!r}, must equal 3")
        return out

    @property
    def valid(self) -> bool:
        return not self.violations()


@dataclass
class InequalityResult:
    name: str
    ratios: np.ndarray
    refinement_change: float
    threshold: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)) and self.refinement_change < self.threshold)


def triple_hls_integral(f1, f2, f3, lam1: float, lam2: float, m: int = 32) -> float:
    """``int f1(x) (R_lam1 f2)(x) (R_lam2 f3)(x) dx`` by midpoint quadrature."""
    pts, dv = _box([f1], m)
    vals = f1(pts) * riesz_potential(f2, lam1, pts) * riesz_potential(f3, lam2, pts)
    return float(np.sum(vals) * dv)


def check_generalized_hls(spec: HLSCheckSpec, trials: int = 100, m: int = 24,
                          refine_trials: int = 3) -> InequalityResult:
    """Ratios ``|I| / prod ||f_j||_{p_j}`` over seeded Gaussian-mixture triples.

    ``refinement_change`` is the largest relative change of a ratio when the
    quadrature grid is doubled, over the first ``refine_trials`` triples.

    Raises
    ------
    ValueError
        If the exponent tuple is not admissible; the message names the
        violated constraint.
    """
    bad = spec.violations()
    if bad:
        raise ValueError("inadmissible HLS exponents: " + "; ".join(bad))
    fs = gaussian_trials(spec.n, 3 * trials, spec.seed, spec.max_components)
    ratios, change = [], 0.0
    for k in range(trials):
        f1, f2, f3 = fs[3 * k:3 * k + 3]

        def ratio(mm):
            num = triple_hls_integral(f1, f2, f3, spec.lam[0], spec.lam[1], mm)
            den = np.prod([_lp_norm(f, pj, mm) for f, pj in zip((f1, f2, f3), spec.p)])
            return abs(num) / den

        r = ratio(m)
        if k < refine_trials:
            change = max(change, abs(ratio(2 * m) / r - 1))
        ratios.append(r)
    return InequalityResult("generalized_hls", np.array(ratios), change, 0.02)


def _gauss_convolution(f: GaussianMixture, g: GaussianMixture) -> GaussianMixture:
    n = f.n
    w, c, b = [], [], []
    for wf, cf, a in zip(f.weights, f.centers, f.widths):
        for wg, cg, bb in zip(g.weights, g.centers, g.widths):
            w.append(wf * wg * (math.pi / (a + bb)) ** (n / 2))
            c.append(cf + cg)
            b.append(a * bb / (a + bb))
    return GaussianMixture(np.array(w), np.array(c), np.array(b))


def young_integral(fs, m: int = 32) -> float:
    """``int int int f1(x) f2(y) f3(z) f4(x-y) f5(x-z)`` as ``int f1 (f2*f4)(f3*f5)``."""
    f1, f2, f3, f4, f5 = fs
    g24, g35 = _gauss_convolution(f2, f4), _gauss_convolution(f3, f5)
    pts, dv = _box([f1], m)
    return float(np.sum(f1(pts) * g24(pts) * g35(pts)) * dv)


def check_generalized_young(p, trials: int = 20, n: int = 1, seed: int = 0, m: int = 32,
                            equal: bool = False) -> InequalityResult:
    """Ratios of the quintuple convolution form to ``prod ||f_j||_{p_j}``.

    With ``equal=True`` every trial uses five copies of one Gaussian.

    Raises
    ------
    ValueError
        If some ``p_j <= 1`` or ``sum 1/p_j != 3``.
    """
    p = tuple(float(x) for x in p)
    if len(p) != 5:
        raise ValueError("need exactly five exponents")
    if any(pj <= 1 for pj in p):
        raise ValueError(f"every p_j must exceed 1 (got {p})")
    total = sum(1 / pj for pj in p)
    if abs(total - 3) > _TOL:
        raise ValueError(f"sum of 1/p_j = {total!r}, must equal 3")
    count = trials if equal else 5 * trials
    fs = gaussian_trials(n, count, seed, 1 if equal else 3)
    ratios, change = [], 0.0
    for k in range(trials):
        group = [fs[k]] * 5 if equal else fs[5 * k:5 * k + 5]

        def ratio(mm):
            den = np.prod([_lp_norm(f, pj, mm) for f, pj in zip(group, p)])
            return abs(young_integral(group, mm)) / den

        r = ratio(m)
        if k < 3:
            change = max(change, abs(ratio(2 * m) / r - 1))
        ratios.append(r)
    return InequalityResult("generalized_young", np.array(ratios), change, 0.02)


# ---------------------------------------------------------------------------
# grid quadratic forms

def hardy_quadratic_check(f: Field, kernel: RegularizedKernel | None = None) -> tuple[float, float]:
    """``(<f, vbar f>, <f, (1 - Laplace) f>)`` with the floor kernel by default.

    ``vbar`` acts as a multiplication operator centred at the origin.
    """
    if abs(f.norm() - 1) > 1e-10:
        raise ValueError(f"f must have unit norm (got {f.norm():.3e})")
    kern = floor_kernel(f.grid) if kernel is None else kernel
    pot = float(np.sum(kern.values * np.abs(f.values) ** 2) * f.grid.cell_volume)
    fhat = fourier_coefficients(f)
    kin = float(np.sum((1.0 + f.grid.k_squared) * np.abs(fhat) ** 2))
    return pot, kin


def hardy_constant(grid: GridSpec, kernel: RegularizedKernel | None = None) -> float:
    """``sup_f <f, vbar f> / <f, (1 - Laplace) f>`` as a generalized eigenvalue.

    Computed as the top eigenvalue of ``(1-Laplace)^(-1/2) vbar (1-Laplace)^(-1/2)``.
    """
    kern = floor_kernel(grid) if kernel is None else kernel
    symbol = 1.0 / np.sqrt(1.0 + grid.k_squared)
    v = kern.values

    def apply(x):
        u = np.fft.ifftn(symbol * np.fft.fftn(x.reshape(grid.shape)))
        u = np.fft.ifftn(symbol * np.fft.fftn(v * u))
        return u.real.ravel()

    op = LinearOperator((grid.size, grid.size), matvec=apply, dtype=float)
    vals = eigsh(op, k=1, which="LA", return_eigenvectors=False, tol=1e-12)
    return float(vals[0])


def random_unit_fields(grid: GridSpec, count: int, seed: int = 0) -> list[Field]:
    """Complex Gaussian random fields normalized to unit grid norm."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        vals = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
        f = Field(grid, vals)
        out.append(Field(grid, vals / f.norm()))
    return out


def _circulant(kern_vals: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Dense matrix ``v(x - z)`` on the flattened grid with periodic wrap."""
    idx = np.array(np.unravel_index(np.arange(grid.size), grid.shape)).T
    diff = (idx[:, None, :] - idx[None, :, :]) % grid.n
    return kern_vals[tuple(diff[..., a] for a in range(grid.d))]


def check_V2phi6(kernel: RegularizedKernel, phi) -> float:
    """``int int int |Vbar|^2 rho(x) rho(y) rho(z)`` with ``rho = |phi|^2``.

    Expanding the square of the three-term kernel gives
    ``lam^2 (3 S1 + 6 S2)`` with ``S1 = int rho (v^2 * rho)^2`` and
    ``S2 = sum_{x,y} v(x-y)^2 rho(x) rho(y) G(x, y)``,
    ``G(x, y) = sum_z v(x-z) v(y-z) rho(z) h^d``.
    """
    grid = kernel.grid
    f = phi if isinstance(phi, Field) else Field(grid, phi)
    if abs(f.norm() - 1) > 1e-8:
        raise ValueError(f"phi must have unit norm (got {f.norm():.3e})")
    if grid.size > 4096:
        raise ValueError("check_V2phi6 uses dense grid matrices; need n^d <= 4096")
    dv = grid.cell_volume
    rho = (np.abs(f.values) ** 2).ravel()
    v = kernel.values
    sq = RegularizedKernel(grid, kernel.alpha, kernel.lam, v**2)
    s1 = float(np.sum(rho * sq.convolve(rho.reshape(grid.shape)).ravel() ** 2) * dv)
    C = _circulant(v, grid)
    G = (C * (rho * dv)[None, :]) @ C.T
    s2 = float(np.sum((C**2) * G * np.outer(rho, rho)) * dv**2)
    return kernel.lam**2 * (3 * s1 + 6 * s2)


def v2phi6_direct(kernel: RegularizedKernel, phi) -> float:
    """Brute-force triple grid sum of ``|Vbar|^2 rho rho rho`` (small grids only)."""
    grid = kernel.grid
    f = phi if isinstance(phi, Field) else Field(grid, phi)
    if grid.size > 64:
        raise ValueError("direct sum limited to n^d <= 64")
    rho = (np.abs(f.values) ** 2).ravel()
    C = _circulant(kernel.values, grid)
    A = C[:, :, None] * C[:, None, :]          # v(x-y) v(x-z)
    B = np.transpose(C[:, :, None] * C[:, None, :], (1, 0, 2))  # v(y-x) v(y-z)
    Cz = np.transpose(C[:, :, None] * C[:, None, :], (1, 2, 0))  # v(z-x) v(z-y)
    V = kernel.lam * (A + B + Cz)
    w = np.einsum("x,y,z->xyz", rho, rho, rho)
    return float(np.sum(V**2 * w) * grid.cell_volume**3)


def v2phi6_along(states: list[HartreeState], kernel: RegularizedKernel) -> np.ndarray:
    """``check_V2phi6`` evaluated on each state of a grid trajectory (renormalized)."""
    out = []
    for st in states:
        f = st.field
        out.append(check_V2phi6(kernel, Field(f.grid, f.values / f.norm())))
    return np.array(out)
