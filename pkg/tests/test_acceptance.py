"""Acceptance suite: one test and one PASS/FAIL line per criterion."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from quinticmf.experiments import DESK_CONFIG, parse_config, run_sweep
from quinticmf.fluctuation import (
    ExactFluctuation,
    FluctuationPropagator,
    evaluate_Et,
    generator_identity_check,
    moment_growth,
    parity_expectation,
    reconstruction_target,
)
from quinticmf.fock import (
    FockBasis,
    ccr_residual,
    coherent_state,
    d_N,
    interior_vectors,
    product_state,
    weyl_shift_residual,
    weyl_unitarity_residual,
)
from quinticmf.hartree import HartreeState, evolve
from quinticmf.inequalities import (
    HARDY_GOLDEN,
    HLSCheckSpec,
    check_generalized_hls,
    check_generalized_young,
    hardy_quadratic_check,
    random_unit_fields,
)
from quinticmf.manybody import DensityMatrix, reduced_density, regularization_gap, trace_distance
from quinticmf.potentials import build_kernel
from quinticmf.rates import fit_slope, theoretical_rate
from quinticmf.spectral import Field, make_grid


def report(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def _conservation_field():
    g = make_grid(1, 64, 2 * np.pi)
    x = g.coordinates[0]
    f = Field(g, 1 + 0.5 * np.cos(x) + 0.3j * np.sin(2 * x))
    return g, Field(g, f.values / f.norm())


def test_criterion_01_conservation():
    g, psi = _conservation_field()
    k = build_kernel(g, 1 / 8, 1.0)
    start = time.perf_counter()
    tr = evolve(HartreeState(field=psi), k, 1.0, 1e-3, sample_every=50)
    elapsed = time.perf_counter() - start
    mass = max(abs(m - 1) for m in tr.mass)
    drift = max(abs(e - tr.energy[0]) for e in tr.energy) / abs(tr.energy[0])
    ok = mass <= 1e-10 and drift <= 1e-6 and elapsed < 10
    report(1, ok, f"|mass-1|={mass:.2e} energy drift={drift:.2e} runtime={elapsed:.2f}s")


def test_criterion_02_strang_order():
    g, psi = _conservation_field()
    k = build_kernel(g, 1 / 8, 1.0)
    ends = [evolve(HartreeState(field=psi), k, 1.0, dt).final.field.values for dt in (0.02, 0.01, 0.005)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    report(2, 3.6 <= ratio <= 4.4, f"self-convergence ratio={ratio:.3f}")


def test_criterion_03_fock_algebra():
    rng = np.random.default_rng(0)
    ccr = ccr_residual(interior_vectors(FockBasis(3, 12), 100, rng, margin=2))
    f = np.array([0.6, 0.8j])
    unit = weyl_unitarity_residual(f, FockBasis(2, 20))
    s20 = weyl_shift_residual(f, FockBasis(2, 20))
    s30 = weyl_shift_residual(f, FockBasis(2, 30))
    ok = ccr <= 1e-12 and unit <= 1e-12 and s20 <= 1e-6 and s30 < s20
    report(3, ok, f"CCR={ccr:.1e} Weyl unitarity={unit:.1e} shift N_max=20: {s20:.1e}, 30: {s30:.1e}")


def test_criterion_04_coherent_statistics():
    f = np.array([0.6, 0.8j])
    b = FockBasis(2, 20)
    w = np.abs(coherent_state(f, b).amplitudes) ** 2
    w = w / w.sum()
    mean = np.sum(w * b.totals)
    var = np.sum(w * b.totals**2) - mean**2
    ok = abs(mean - 1) <= 1e-8 and abs(var - 1) <= 1e-6
    report(4, ok, f"|<N>-1|={abs(mean - 1):.1e} |Var-1|={abs(var - 1):.1e}")


def test_criterion_05_dN():
    target = (2 * math.pi) ** 0.25
    worst = max(abs(d_N(N) / N**0.25 / target - 1) for N in range(20, 61))
    report(5, worst <= 0.01, f"max relative deviation={worst:.2e}")


@pytest.fixture(scope="module")
def desk_sweep():
    cfg = parse_config(DESK_CONFIG)
    start = time.perf_counter()
    rep = run_sweep(cfg)
    return rep, time.perf_counter() - start


def test_criterion_06_reduced_density(desk, desk_sweep):
    fb = FockBasis(2, 8)
    gamma = reduced_density(product_state(desk.phi0, 8, fb))
    d0 = trace_distance(gamma, DensityMatrix.pure(desk.phi0))
    rep, _ = desk_sweep
    # every sweep cell validates trace, Hermiticity and positivity of its density
    cells_ok = not rep.failed
    report(6, d0 <= 1e-12 and cells_ok, f"t=0 distance={d0:.1e}, {len(rep.records)} sweep densities valid={cells_ok}")


def test_criterion_07_mean_field(desk_sweep):
    rep, elapsed = desk_sweep
    tds = [r["trace_distance"] for r in rep.records]
    decreasing = all(a > b for a, b in zip(tds, tds[1:]))
    slope = rep.fits["0.5"]["slope"]
    ok = decreasing and -1.35 <= slope <= -0.75 and elapsed < 600
    report(7, ok, f"trace distances={[f'{x:.4g}' for x in tds]} slope={slope:.3f} runtime={elapsed:.1f}s")


def test_criterion_08_regularization_gap(desk):
    floor = desk.grid.h / 2
    ts = (0.1, 0.2, 0.4)
    gaps = [regularization_gap(8, 0.25, floor, t, desk) for t in ts]
    q = [g**2 / t for g, t in zip(gaps, ts)]
    spread = max(q) / min(q)
    alphas = (0.5, 0.4, 0.3, 0.25, 0.22, floor)
    toward = [regularization_gap(8, a, floor, 0.4, desk) for a in alphas]
    shrinking = all(a > b for a, b in zip(toward, toward[1:]))
    ok = spread <= 2 and shrinking
    report(8, ok, f"gap^2/t={[f'{x:.4f}' for x in q]} (spread {spread:.2f}x, limit 2x); "
                  f"gap toward floor decreasing={shrinking}")


def test_criterion_09_parity(desk, desk_flow):
    prop = FluctuationPropagator(desk.tensor, FockBasis(2, 16), 4, desk_flow, "reduced")
    worst = max(abs(parity_expectation(prop, t, f)) for t in (0.25, 0.5) for f in np.eye(2))
    report(9, worst <= 1e-10, f"max |<a(u_p)>|={worst:.1e}")


def test_criterion_10_generator_identity(desk, desk_flow):
    fb = FockBasis(2, 20)
    r1 = generator_identity_check(desk_flow, desk.tensor, 4, fb, s=0.2, h=1e-3)
    r2 = generator_identity_check(desk_flow, desk.tensor, 4, fb, s=0.2, h=5e-4)
    ratio = r1 / r2
    ok = r1 <= 1e-4 and 3 <= ratio <= 5
    report(10, ok, f"residual(h=1e-3)={r1:.2e} (limit 1e-4), reduction at h/2={ratio:.2f}x")


def test_criterion_11_reconstruction(desk, desk_flow):
    rng = np.random.default_rng(11)
    ex6 = ExactFluctuation(desk.tensor, FockBasis(2, 24), 6, desk_flow)
    worst = 0.0
    Js = []
    for _ in range(5):
        A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        J = 0.5 * (A + A.conj().T)
        Js.append(J)
        total = evaluate_Et(J, 0.3, 1, ex6) + evaluate_Et(J, 0.3, 2, ex6)
        worst = max(worst, abs(total - reconstruction_target(J, 0.3, 6, desk.tensor, desk.phi0, desk_flow)))
    sizes = []
    for N in (4, 6, 8):
        ex = ExactFluctuation(desk.tensor, FockBasis(2, 4 * N), N, desk_flow)
        sizes.append(abs(evaluate_Et(Js[0], 0.3, 1, ex)) + abs(evaluate_Et(Js[0], 0.3, 2, ex)))
    decreasing = all(a > b for a, b in zip(sizes, sizes[1:]))
    report(11, worst <= 1e-6 and decreasing,
           f"max reconstruction error={worst:.1e}; |E1|+|E2| over N=4,6,8: {[f'{s:.4f}' for s in sizes]}")


def test_criterion_12_moment_growth(desk, desk_flow):
    ex = ExactFluctuation(desk.tensor, FockBasis(2, 64), 8, desk_flow)
    grid = np.linspace(0, 1, 21)
    res = {j: moment_growth(ex, j, grid) for j in (1, 2)}
    resid = {j: r["max_abs_residual"] for j, r in res.items()}
    saturated = any(r["saturated"] for r in res.values())
    ok = all(v <= 0.1 for v in resid.values()) and not saturated
    report(12, ok, f"affine-fit residual j=1: {resid[1]:.3f}, j=2: {resid[2]:.3f} (limit 0.1); "
                   f"saturated={saturated}")


def test_criterion_13_inequalities():
    accepted = HLSCheckSpec(3, (2, 2, 2), (9 / 4, 9 / 4)).valid
    rejected = not HLSCheckSpec(3, (2, 2, 2), (2.0, 2.0)).valid and not HLSCheckSpec(3, (1.0, 2, 2), (9 / 4, 9 / 4)).valid
    try:
        check_generalized_young((2, 2, 2, 2, 1 / 0.9), trials=1)
        young_rejects = False
    except ValueError:
        young_rejects = True
    hls = check_generalized_hls(HLSCheckSpec(3, (2, 2, 2), (9 / 4, 9 / 4)), trials=100)
    young = check_generalized_young((5 / 3,) * 5, trials=20)
    hardy = 0.0
    for (d, n), golden in HARDY_GOLDEN.items():
        for f in random_unit_fields(make_grid(d, n, 2 * np.pi), 100, seed=1):
            pot, kin = hardy_quadratic_check(f)
            hardy = max(hardy, pot / kin / golden)
    ok = (accepted and rejected and young_rejects and hls.passed and young.passed
          and hardy <= 1 + 1e-12)
    report(13, ok, f"tuples ok={accepted and rejected and young_rejects}; HLS max={hls.max_ratio:.3g} "
                   f"refine={hls.refinement_change:.1e}; Young max={young.max_ratio:.3g} "
                   f"refine={young.refinement_change:.1e}; Hardy/golden max={hardy:.3f}")


def test_criterion_14_rates():
    r0, r2 = theoretical_rate(0), theoretical_rate(2)
    worst = max(abs(fit_slope([(N, 5.0 * N**s) for N in (4, 8, 16, 32)]).slope - s)
                for s in (-1.0, -1 / 3, -0.75))
    ok = r0 == 1 / 3 and r2 == 1.0 and worst <= 1e-10
    report(14, ok, f"r(0)={r0!r} r(2)={r2!r} planted-slope error={worst:.1e}")
