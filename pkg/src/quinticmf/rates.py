"""Predicted convergence exponents and log-log slope fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RateModel", "RateFit", "theoretical_rate", "recommended_eta", "fit_slope"]


def _check_band(a: float) -> None:
    if not a >= 0:
        raise ValueError(f"Sobolev surplus a must be nonnegative, got {a}")
    if 0.5 <= a <= 1:
        raise ValueError(f"no rate is stated for a in [1/2, 1] (got a={a})")


def theoretical_rate(a: float) -> float:
    """Decay exponent ``r`` of the trace distance ``O(N^-r)``.

    ``r = (1 + 4a) / (3 + 2a)`` for ``0 <= a < 1/2`` and ``r = 1`` for ``a > 1``.

    Raises
    ------
    ValueError
        For ``a < 0`` or ``a`` in the band ``[1/2, 1]``.
    """
    _check_band(a)
    if a > 1:
        return 1.0
    return (1 + 4 * a) / (3 + 2 * a)


def recommended_eta(a: float) -> float:
    """Cutoff exponent ``eta``: ``5/4`` for ``0 <= a < 1/2``, ``1`` for ``a > 1``."""
    _check_band(a)
    return 1.0 if a > 1 else 1.25


@dataclass(frozen=True)
class RateModel:
    """Exponents attached to a Sobolev surplus ``a`` and cutoff exponent ``eta``.

    ``theorem_rate``, ``regularized_rate`` are decay rates (error ``~ N^-rate``).
    ``density_exponent`` and ``gap_exponent`` are powers of ``N`` as stated
    (negative values mean decay).
    """

    a: float
    eta: float | None = None

    def __post_init__(self):
        _check_band(self.a)
        if self.eta is None:
            object.__setattr__(self, "eta", recommended_eta(self.a))

    @property
    def theorem_rate(self) -> float:
        return theoretical_rate(self.a)

    @property
    def regularized_rate(self) -> float:
        return 2 - self.eta

    @property
    def density_exponent(self) -> float:
        return 1 - self.eta * (1 + 2 * self.a)

    @property
    def gap_exponent(self) -> float:
        return self.density_exponent / 2

    def predicted_slopes(self) -> dict:
        """Log-log slopes in ``N`` implied by each exponent."""
        return {
            "theorem": -self.theorem_rate,
            "regularized": -self.regularized_rate,
            "density": self.density_exponent,
            "gap": self.gap_exponent,
        }


@dataclass(frozen=True)
class RateFit:
    N: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray

    @property
    def residual(self) -> float:
        """Root-mean-square log residual."""
        return float(np.sqrt(np.mean(self.residuals**2)))

    def predict(self, N) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(N, dtype=float) ** self.slope


def fit_slope(points) -> RateFit:
    """Least-squares line through ``(log N, log value)``.

    Parameters
    ----------
    points : iterable of (N, value)
        At least three points with distinct positive ``N`` and positive values.
    """
    arr = np.asarray(list(points), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be (N, value) pairs")
    if len(arr) < 3:
        raise ValueError(f"need at least 3 points, got {len(arr)}")
    N, vals = arr[:, 0], arr[:, 1]
    if len(np.unique(N)) != len(N):
        raise ValueError("N values must be distinct")
    if np.any(N <= 0):
        raise ValueError("N values must be positive")
    if np.any(~(vals > 0)):
        raise ValueError("values must be positive to fit in log-log coordinates")
    x, y = np.log(N), np.log(vals)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return RateFit(N, vals, float(slope), float(intercept), y - A @ np.array([slope, intercept]))
