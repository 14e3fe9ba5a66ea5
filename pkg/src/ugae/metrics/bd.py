"""Akima interpolation and Bjontegaard delta metrics.

Curves are fitted as piecewise cubics and integrated exactly over the
common interval, so no sampling error enters the averages. Two knots fall
back to a line and three knots to the interpolating parabola.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import OverlapError


@dataclass(frozen=True)
class PiecewiseCubic:
    """``y = c0 + c1 t + c2 t^2 + c3 t^3`` with ``t = x - knots[i]`` on interval i."""

    knots: np.ndarray
    coeffs: np.ndarray  # (n - 1, 4)
    values: np.ndarray  # y at the knots, returned exactly there

    def _locate(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.knots[0], self.knots[-1]
        if np.any((x < lo) | (x > hi)) or np.any(np.isnan(x)):
            raise ValueError(f"query outside the knot range [{lo}, {hi}]")
        i = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.coeffs) - 1)
        return x, i

    def __call__(self, x):
        x, i = self._locate(x)
        t = x - self.knots[i]
        c = self.coeffs[i]
        y = c[..., 0] + t * (c[..., 1] + t * (c[..., 2] + t * c[..., 3]))
        return np.where(x == self.knots[i + 1], self.values[i + 1], y)

    def derivative(self, x):
        x, i = self._locate(x)
        t = x - self.knots[i]
        c = self.coeffs[i]
        return c[..., 1] + t * (2 * c[..., 2] + 3 * t * c[..., 3])

    def _antiderivative(self, i, t):
        c = self.coeffs[i]
        return t * (c[0] + t * (c[1] / 2 + t * (c[2] / 3 + t * c[3] / 4)))

    def integrate(self, a: float, b: float) -> float:
        """Exact integral over ``[a, b]`` (``a <= b`` within the knot range)."""
        if a > b:
            return -self.integrate(b, a)
        self._locate(np.array([a, b]))
        total = 0.0
        for i in range(len(self.coeffs)):
            x0, x1 = self.knots[i], self.knots[i + 1]
            lo, hi = max(a, x0), min(b, x1)
            if hi > lo:
                total += self._antiderivative(i, hi - x0) - self._antiderivative(i, lo - x0)
        return total


def _check_knots(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
        raise ValueError("need at least two (x, y) knots")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("knots must be finite")
    if np.any(np.diff(x) <= 0):
        raise ValueError("knot x values must be strictly increasing")
    return x, y


def akima_fit(x, y) -> PiecewiseCubic:
    """Akima spline through the knots (line for 2 knots, parabola for 3)."""
    x, y = _check_knots(x, y)
    n = len(x)
    h = np.diff(x)
    m = np.diff(y) / h
    if n == 2:
        return PiecewiseCubic(x, np.array([[y[0], m[0], 0.0, 0.0]]), y)
    if n == 3:
        a = (m[1] - m[0]) / (x[2] - x[0])
        slope = m[0] - a * h[0]                 # derivative at x[0]
        coeffs = [[y[0], slope, a, 0.0],
                  [y[1], slope + 2 * a * h[0], a, 0.0]]
        return PiecewiseCubic(x, np.array(coeffs), y)
    # two extrapolated secants on each side
    ext = np.empty(n + 3)
    ext[2:-2] = m
    ext[1] = 2 * m[0] - m[1]
    ext[0] = 2 * ext[1] - m[0]
    ext[-2] = 2 * m[-1] - m[-2]
    ext[-1] = 2 * ext[-2] - m[-1]
    w_right = np.abs(ext[3:] - ext[2:-1])      # |m_{i+1} - m_i|
    w_left = np.abs(ext[1:-2] - ext[:-3])      # |m_{i-1} - m_{i-2}|
    den = w_right + w_left
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0,
                     (w_right * ext[1:-2] + w_left * ext[2:-1]) / den,
                     0.5 * (ext[1:-2] + ext[2:-1]))
    c2 = (3 * m - 2 * t[:-1] - t[1:]) / h
    c3 = (t[:-1] + t[1:] - 2 * m) / h ** 2
    return PiecewiseCubic(x, np.column_stack([y[:-1], t[:-1], c2, c3]), y)


def akima_interpolate(x, y, query):
    return akima_fit(x, y)(query)


@dataclass(frozen=True)
class RDCurve:
    rates: np.ndarray
    qualities: np.ndarray

    @classmethod
    def from_points(cls, rates: Sequence[float], qualities: Sequence[float]) -> "RDCurve":
        """Keep finite points, sort by rate, and validate."""
        r = np.asarray(rates, dtype=np.float64)
        q = np.asarray(qualities, dtype=np.float64)
        if r.shape != q.shape:
            raise ValueError("rates and qualities differ in length")
        keep = np.isfinite(r) & np.isfinite(q)
        r, q = r[keep], q[keep]
        if np.any(r <= 0):
            raise ValueError("rates must be positive")
        order = np.argsort(r, kind="stable")
        r, q = r[order], q[order]
        if len(r) < 2:
            raise OverlapError("a curve needs at least two finite R-D points")
        if np.any(np.diff(r) <= 0):
            raise ValueError("rates must be strictly increasing")
        return cls(r, q)


def _mean_gap(x_ref, y_ref, x_test, y_test) -> float:
    lo = max(x_ref.min(), x_test.min())
    hi = min(x_ref.max(), x_test.max())
    if not hi > lo:
        raise OverlapError(f"curves do not overlap (common interval [{lo:.6g}, {hi:.6g}])")
    f_ref = akima_fit(x_ref, y_ref)
    f_test = akima_fit(x_test, y_test)
    return (f_test.integrate(lo, hi) - f_ref.integrate(lo, hi)) / (hi - lo)


def bd_psnr(reference: RDCurve, test: RDCurve) -> float:
    """Mean quality gain of ``test`` over the common log-rate interval (dB)."""
    return _mean_gap(np.log10(reference.rates), reference.qualities,
                     np.log10(test.rates), test.qualities)


def _by_quality(curve: RDCurve):
    order = np.argsort(curve.qualities, kind="stable")
    q = curve.qualities[order]
    if np.any(np.diff(q) <= 0):
        raise ValueError("qualities must be distinct for BD-rate")
    return q, np.log10(curve.rates[order])


def bd_br(reference: RDCurve, test: RDCurve) -> float:
    """Mean bitrate change of ``test`` at equal quality, in percent."""
    q_ref, lr_ref = _by_quality(reference)
    q_test, lr_test = _by_quality(test)
    delta = _mean_gap(q_ref, lr_ref, q_test, lr_test)
    return 100.0 * (math.pow(10.0, delta) - 1.0)
