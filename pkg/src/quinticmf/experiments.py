"""Configuration, sweeps over particle number and the named check table."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fock import FockBasis, FockVector, moment, vacuum
from .rates import RateModel, fit_slope, recommended_eta

__all__ = [
    "DESK_CONFIG",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "cell_alpha",
    "run_cell",
    "run_sweep",
    "SweepReport",
    "CSV_COLUMNS",
    "CheckRow",
    "CHECKS",
    "run_checks",
    "checks_to_csv",
]

CSV_COLUMNS = ["N", "K", "eta", "alpha", "t", "trace_distance", "et1_abs", "et2_abs",
               "moment_j1", "moment_j2", "runtime_ms"]

DESK_CONFIG = """{
  "N_list": [8, 16, 32, 64],
  "a": 0,
  "grid": {"d": 1, "n": 16, "L": 6.283185307179586},
  "K": 2,
  "potential": {"lam": 1.0, "alpha": 0.25},
  "phi0": [0.8, 0.6],
  "t_list": [0.5],
  "seed": 0
}
"""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of a sweep over ``N`` at the times ``t_list``.

    ``alpha`` fixes the kernel cutoff for every ``N``; when it is ``None``
    each cell uses ``N**-eta`` raised to the grid floor ``h/2``.  Fluctuation
    observables (E-functionals, moments) are computed for ``N <= fluct_max_N``
    and left as NaN above.  ``synthetic`` replaces the simulation by the
    planted law ``amplitude * N**exponent``.
    """

    N_list: tuple[int, ...]
    a: float = 0.0
    d: int = 1
    n: int = 16
    L: float = 2 * math.pi
    K: int = 2
    N_max: int | None = None
    lam: float = 1.0
    eta: float = 1.25
    alpha: float | None = None
    t_list: tuple[float, ...] = (0.5,)
    dt: float = 1e-3
    seed: int = 0
    out: str = "results"
    phi0: tuple[tuple[float, float], ...] | None = None
    fluct_max_N: int = 16
    record_timing: bool = True
    synthetic: dict | None = None

    @property
    def phi0_array(self) -> np.ndarray | None:
        if self.phi0 is None:
            return None
        return np.array([complex(re, im) for re, im in self.phi0])

    def to_json(self) -> str:
        d = asdict(self)
        out = {
            "N_list": list(d["N_list"]),
            "a": d["a"],
            "grid": {"d": d["d"], "n": d["n"], "L": d["L"]},
            "K": d["K"],
            "N_max": d["N_max"],
            "potential": {"lam": d["lam"], "eta": d["eta"], "alpha": d["alpha"]},
            "t_list": list(d["t_list"]),
            "dt": d["dt"],
            "seed": d["seed"],
            "out": d["out"],
            "phi0": None if d["phi0"] is None else [list(z) for z in d["phi0"]],
            "fluct_max_N": d["fluct_max_N"],
            "record_timing": d["record_timing"],
            "synthetic": d["synthetic"],
        }
        return json.dumps(out, indent=2, sort_keys=True)


_TOP_KEYS = {"N_list", "a", "grid", "K", "N_max", "potential", "t_list", "dt", "seed", "out",
             "phi0", "fluct_max_N", "record_timing", "synthetic"}


def _number(value, name, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON configuration, filling defaults.

    Raises
    ------
    ConfigError
        Naming the first offending field (e.g. ``grid.n``).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", str(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("<json>", "top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    grid = raw.get("grid", {}) or {}
    pot = raw.get("potential", {}) or {}
    for name, sub, keys in (("grid", grid, {"d", "n", "L"}), ("potential", pot, {"lam", "eta", "alpha"})):
        if not isinstance(sub, dict):
            raise ConfigError(name, "must be an object")
        extra = set(sub) - keys
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")

    if "N_list" not in raw:
        raise ConfigError("N_list", "required")
    Ns = raw["N_list"]
    if not isinstance(Ns, list) or not Ns:
        raise ConfigError("N_list", "must be a nonempty list")
    N_list = tuple(_number(x, "N_list", int) for x in Ns)
    if min(N_list) < 1:
        raise ConfigError("N_list", "entries must be >= 1")

    a = _number(raw.get("a", 0.0), "a")
    if a < 0 or 0.5 <= a <= 1:
        raise ConfigError("a", f"must be in [0, 1/2) or (1, inf), got {a}")
    d = _number(grid.get("d", 1), "grid.d", int)
    if d not in (1, 2, 3):
        raise ConfigError("grid.d", f"must be 1, 2 or 3, got {d}")
    n = _number(grid.get("n", 16), "grid.n", int)
    if n < 4 or n % 2:
        raise ConfigError("grid.n", f"must be an even integer >= 4, got {n}")
    L = _number(grid.get("L", 2 * math.pi), "grid.L")
    if not L > 0:
        raise ConfigError("grid.L", "must be positive")
    K = _number(raw.get("K", 2), "K", int)
    if not 1 <= K <= n**d:
        raise ConfigError("K", f"must lie in 1..n^d={n**d}")
    N_max = raw.get("N_max")
    if N_max is not None:
        N_max = _number(N_max, "N_max", int)
    lam = _number(pot.get("lam", 1.0), "potential.lam")
    if lam < 0:
        raise ConfigError("potential.lam", "must be nonnegative")
    eta = pot.get("eta")
    eta = recommended_eta(a) if eta is None else _number(eta, "potential.eta")
    if not eta > 0:
        raise ConfigError("potential.eta", "must be positive")
    alpha = pot.get("alpha")
    if alpha is not None:
        alpha = _number(alpha, "potential.alpha")
        if alpha < (L / n) / 2 * (1 - 1e-12):
            raise ConfigError("potential.alpha", f"below the grid floor h/2={L / n / 2}")
    t_list = raw.get("t_list", [0.5])
    if not isinstance(t_list, list) or not t_list:
        raise ConfigError("t_list", "must be a nonempty list")
    t_list = tuple(_number(x, "t_list") for x in t_list)
    if min(t_list) < 0:
        raise ConfigError("t_list", "times must be nonnegative")
    dt = _number(raw.get("dt", 1e-3), "dt")
    if not dt > 0:
        raise ConfigError("dt", "must be positive")
    seed = _number(raw.get("seed", 0), "seed", int)
    out = raw.get("out", "results")
    if not isinstance(out, str) or not out:
        raise ConfigError("out", "must be a nonempty string")
    phi0 = raw.get("phi0")
    if phi0 is not None:
        if not isinstance(phi0, list) or len(phi0) != K:
            raise ConfigError("phi0", f"must list K={K} entries")
        pairs = []
        for z in phi0:
            if isinstance(z, list) and len(z) == 2:
                pairs.append((_number(z[0], "phi0"), _number(z[1], "phi0")))
            else:
                pairs.append((_number(z, "phi0"), 0.0))
        if sum(re * re + im * im for re, im in pairs) == 0:
            raise ConfigError("phi0", "must be nonzero")
        phi0 = tuple(pairs)
    fluct_max_N = _number(raw.get("fluct_max_N", 16), "fluct_max_N", int)
    if N_max is not None and N_max < 4 * min(max(N_list), max(fluct_max_N, 0)):
        raise ConfigError("N_max", "must be at least 4 N for every N with fluctuation observables")
    record_timing = raw.get("record_timing", True)
    if not isinstance(record_timing, bool):
        raise ConfigError("record_timing", "must be true or false")
    synthetic = raw.get("synthetic")
    if synthetic is not None:
        if not isinstance(synthetic, dict) or set(synthetic) != {"amplitude", "exponent"}:
            raise ConfigError("synthetic", "must be {amplitude, exponent}")
        synthetic = {"amplitude": _number(synthetic["amplitude"], "synthetic.amplitude"),
                     "exponent": _number(synthetic["exponent"], "synthetic.exponent")}
        if not synthetic["amplitude"] > 0:
            raise ConfigError("synthetic.amplitude", "must be positive")
    return ExperimentConfig(N_list, a, d, n, L, K, N_max, lam, eta, alpha, t_list, dt, seed, out,
                            phi0, fluct_max_N, record_timing, synthetic)


def cell_alpha(config: ExperimentConfig, N: int) -> float:
    """Kernel cutoff used for particle number ``N``."""
    if config.alpha is not None:
        return config.alpha
    return max(float(N) ** (-config.eta), config.L / config.n / 2)


def _observable_J(config: ExperimentConfig) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    A = rng.normal(size=(config.K, config.K)) + 1j * rng.normal(size=(config.K, config.K))
    return 0.5 * (A + A.conj().T)


def run_cell(config: ExperimentConfig, N: int, t: float) -> dict:
    """One ``(N, t)`` cell; failures are returned as a record with an ``error`` field."""
    start = time.perf_counter()
    alpha = cell_alpha(config, N)
    rec = {"N": int(N), "K": config.K, "eta": config.eta, "alpha": alpha, "t": float(t)}
    nan = float("nan")
    try:
        if config.synthetic is not None:
            s = config.synthetic
            rec.update(trace_distance=s["amplitude"] * float(N) ** s["exponent"],
                       mass=nan, energy=nan, et1_abs=nan, et2_abs=nan, moment_j1=nan, moment_j2=nan)
        else:
            rec.update(_simulate_cell(config, N, t, alpha))
    except Exception as exc:  # noqa: BLE001 - recorded, the sweep continues
        rec["error"] = f"{type(exc).__name__}: {exc}"
        for key in CSV_COLUMNS[5:10]:
            rec.setdefault(key, nan)
    rec["runtime_ms"] = (time.perf_counter() - start) * 1e3 if config.record_timing else 0.0
    return rec


def _simulate_cell(config: ExperimentConfig, N: int, t: float, alpha: float) -> dict:
    from .fluctuation import ExactFluctuation, evaluate_Et
    from .hartree import GalerkinFlow
    from .manybody import make_setup, mean_field_run

    setup = make_setup(config.d, config.n, config.L, config.K, alpha, config.lam,
                       config.phi0_array, config.eta)
    mf = mean_field_run(N, t, setup)
    out = {"trace_distance": mf["trace_distance"], "mass": mf["mass"], "energy": mf["energy"]}
    nan = float("nan")
    if N > config.fluct_max_N:
        out.update(et1_abs=nan, et2_abs=nan, moment_j1=nan, moment_j2=nan)
        return out
    basis = FockBasis(config.K, config.N_max or 4 * N)
    flow = GalerkinFlow(setup.phi0, setup.tensor, setup.basis)
    ex = ExactFluctuation(setup.tensor, basis, N, flow)
    J = _observable_J(config)
    u = FockVector(ex.big, ex.run_padded(vacuum(ex.big).amplitudes, t))
    out.update(
        et1_abs=abs(evaluate_Et(J, t, 1, ex)),
        et2_abs=abs(evaluate_Et(J, t, 2, ex)),
        moment_j1=moment(u, 1),
        moment_j2=moment(u, 2),
    )
    return out


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class SweepReport:
    config: ExperimentConfig
    records: list[dict]
    fits: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.records if "error" in r]

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        model = RateModel(self.config.a, self.config.eta)
        return {"fits": self.fits, "predicted_slopes": model.predicted_slopes(),
                "failed_cells": [(r["N"], r["t"]) for r in self.failed]}

    def write(self, out_dir: str) -> None:
        cells = os.path.join(out_dir, "cells")
        os.makedirs(cells, exist_ok=True)
        for r in self.records:
            name = f"N{r['N']}_t{r['t']!r}.json"
            with open(os.path.join(cells, name), "w") as fh:
                json.dump(r, fh, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write(self.csv())
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(self.config.to_json())


def run_sweep(config: ExperimentConfig, workers: int = 1, cells=None) -> SweepReport:
    """Run every ``(N, t)`` cell, aggregate sorted by ``(N, t)`` and fit slopes per ``t``.

    ``cells`` restricts the run to the given ``(N, t)`` pairs.
    """
    todo = list(cells) if cells is not None else [(N, t) for N in config.N_list for t in config.t_list]
    args = [(config, N, t) for N, t in todo]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell_args, args))
    else:
        records = [run_cell(*a) for a in args]
    records.sort(key=lambda r: (r["N"], r["t"]))
    fits = {}
    for t in sorted({r["t"] for r in records}):
        pts = {}
        for r in records:
            if r["t"] == t and "error" not in r and r["trace_distance"] > 0:
                pts.setdefault(r["N"], r["trace_distance"])
        if len(pts) >= 3:
            fit = fit_slope(sorted(pts.items()))
            fits[repr(t)] = {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual}
    return SweepReport(config, records, fits)


# ---------------------------------------------------------------------------
# named checks

@dataclass(frozen=True)
class CheckRow:
    check_name: str
    max_ratio: float
    threshold: float
    passed: bool


def _check_ccr():
    from .fock import ccr_residual, interior_vectors
    return ccr_residual(interior_vectors(FockBasis(3, 12), 100)), 1e-12


def _check_weyl():
    from .fock import weyl_unitarity_residual
    return weyl_unitarity_residual(np.array([0.6, 0.8j]), FockBasis(2, 20)), 1e-12


def _check_weyl_shift():
    from .fock import weyl_shift_residual
    return weyl_shift_residual(np.array([0.6, 0.8j]), FockBasis(2, 20)), 1e-6


def _hartree_short():
    from .hartree import HartreeState, evolve
    from .potentials import build_kernel
    from .spectral import Field, make_grid

    grid = make_grid(1, 64, 2 * math.pi)
    x = grid.coordinates[0]
    psi = Field(grid, (1 + 0.5 * np.cos(x) + 0.3j * np.sin(2 * x)).astype(complex))
    psi = Field(grid, psi.values / psi.norm())
    return evolve(HartreeState(field=psi), build_kernel(grid, 1 / 8), 0.2, 1e-3)


def _check_mass():
    tr = _hartree_short()
    return max(abs(m - 1) for m in tr.mass), 1e-10


def _check_energy():
    tr = _hartree_short()
    return abs(tr.energy[-1] - tr.energy[0]) / abs(tr.energy[0]), 1e-6


def _check_parity():
    from .fluctuation import FluctuationPropagator
    from .hartree import GalerkinFlow
    from .manybody import make_setup

    s = make_setup(phi0=(0.8, 0.6))
    basis = FockBasis(2, 16)
    flow = GalerkinFlow(s.phi0, s.tensor, s.basis)
    prop = FluctuationPropagator(s.tensor, basis, 4, flow, selection="reduced", tol=1e-6)
    v = prop.run(vacuum(basis).amplitudes, 0.25)
    worst = max(abs(np.vdot(v, a @ v)) for a in basis.annihilators)
    return float(worst), 1e-10


def _bounded_trials(ratios):
    return float(np.max(ratios) / (10 * np.max(ratios[:10])))


def _check_hls():
    from .inequalities import HLSCheckSpec, check_generalized_hls
    res = check_generalized_hls(HLSCheckSpec(3, (2.0, 2.0, 2.0), (2.25, 2.25)), trials=30)
    return _bounded_trials(res.ratios), 1.0, res.refinement_change < 0.02


def _check_young():
    from .inequalities import check_generalized_young
    res = check_generalized_young((5 / 3,) * 5, trials=30)
    return _bounded_trials(res.ratios), 1.0, res.refinement_change < 0.02


def _check_hardy():
    from .inequalities import HARDY_GOLDEN, hardy_quadratic_check, random_unit_fields
    from .spectral import make_grid

    grid = make_grid(3, 16, 2 * math.pi)
    worst = max(p / q for p, q in (hardy_quadratic_check(f) for f in random_unit_fields(grid, 100)))
    return worst, HARDY_GOLDEN[(3, 16)]


def _check_v2phi6():
    from .inequalities import check_V2phi6, v2phi6_direct
    from .potentials import build_kernel
    from .spectral import Field, make_grid

    grid = make_grid(1, 8, 2 * math.pi)
    rng = np.random.default_rng(0)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    f = Field(grid, v)
    f = Field(grid, v / f.norm())
    kern = build_kernel(grid, 0.5)
    a, b = check_V2phi6(kern, f), v2phi6_direct(kern, f)
    return abs(a - b) / abs(b), 1e-10


CHECKS: dict[str, Callable] = {
    "ccr": _check_ccr,
    "weyl_unitarity": _check_weyl,
    "weyl_shift": _check_weyl_shift,
    "hartree_mass": _check_mass,
    "hartree_energy": _check_energy,
    "parity": _check_parity,
    "generalized_hls": _check_hls,
    "generalized_young": _check_young,
    "hardy": _check_hardy,
    "v2phi6_oracle": _check_v2phi6,
}


def run_checks(selection=None, thresholds: dict | None = None) -> list[CheckRow]:
    """Evaluate named checks; ``thresholds`` overrides individual tolerances.

    A check passes when its measured value is at most its threshold (and,
    for the quadrature checks, the refinement change is below 2%).
    """
    names = list(CHECKS) if selection is None else list(selection)
    thresholds = thresholds or {}
    rows = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; known: {', '.join(CHECKS)}")
        value, threshold, *extra = CHECKS[name]()
        threshold = thresholds.get(name, threshold)
        ok = bool(np.isfinite(value) and value <= threshold and all(extra))
        rows.append(CheckRow(name, float(value), float(threshold), ok))
    return rows


def checks_to_csv(rows: list[CheckRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check_name", "max_ratio", "threshold", "pass"])
    for r in rows:
        w.writerow([r.check_name, repr(r.max_ratio), repr(r.threshold), str(r.passed).lower()])
    return buf.getvalue()
