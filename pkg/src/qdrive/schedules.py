"""Schedules ``s(tau)``: monotone maps of scaled time onto the curve parameter."""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P


class Schedule:
    """Base class with vectorized ``value``, ``d1``, ``d2`` and ``inverse``."""

    kind = "schedule"

    def value(self, tau):
        raise NotImplementedError

    def d1(self, tau):
        raise NotImplementedError

    def d2(self, tau):
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        """Scaled times where the schedule may lose smoothness (includes 0 and 1)."""
        return np.array([0.0, 1.0])

    def inverse(self, s):
        """Solve ``s(tau) = s`` for tau by bisection (valid for any monotone schedule)."""
        s = np.asarray(s, dtype=float)
        lo, hi = np.zeros_like(s), np.ones_like(s)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.value(mid) < s
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def config(self) -> dict:
        return {"schedule": self.kind}


@lru_cache(maxsize=None)
def polynomial_coefficients_exact(k: int) -> tuple[Fraction, ...]:
    """Exact coefficients ``(s_0, ..., s_{2k+1})`` of the odd-order polynomial schedule.

    Solves ``s(1) = 1`` and ``s^(i)(0) = s^(i)(1) = 0`` for ``i = 1..k`` by
    Gauss-Jordan elimination over the rationals. The conditions at 0 remove
    ``s_1..s_k``; the remaining ``k + 1`` unknowns are ``s_{k+1}..s_{2k+1}``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    powers = list(range(k + 1, 2 * k + 2))
    rows = [[Fraction(1)] * len(powers) + [Fraction(1)]]
    for i in range(1, k + 1):
        row = []
        for n in powers:
            falling = 1
            for j in range(i):
                falling *= n - j
            row.append(Fraction(falling))
        rows.append(row + [Fraction(0)])
    size = len(powers)
    for col in range(size):
        pivot = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[pivot] = rows[pivot], rows[col]
        lead = rows[col][col]
        rows[col] = [v / lead for v in rows[col]]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    coeffs = [Fraction(0)] * (2 * k + 2)
    for idx, n in enumerate(powers):
        coeffs[n] = rows[idx][-1]
    return tuple(coeffs)


class PolynomialSchedule(Schedule):
    """Polynomial of order ``2k+1`` with ``k`` vanishing derivatives at both ends.

    ``k = 0`` is the linear schedule ``s = tau``.
    """

    def __init__(self, k: int):
        self.k = int(k)
        self.exact = polynomial_coefficients_exact(self.k)
        self.coefficients = np.array([float(c) for c in self.exact])
        self._c1 = P.polyder(self.coefficients, 1)
        self._c2 = P.polyder(self.coefficients, 2)

    @property
    def kind(self):
        return "linear" if self.k == 0 else f"poly({self.k})"

    def value(self, tau):
        # s(tau) = 1 - s(1 - tau): evaluating on [0, 1/2] only avoids the
        # cancellation that breaks monotonicity near tau = 1 for large k
        tau = np.asarray(tau, dtype=float)
        upper = tau > 0.5
        out = P.polyval(np.where(upper, 1.0 - tau, tau), self.coefficients)
        out = np.where(upper, 1.0 - out, out)
        out = np.where(tau == 0.0, 0.0, out)
        return np.where(tau == 1.0, 1.0, out)

    def d1(self, tau):
        tau = np.asarray(tau, dtype=float)
        return P.polyval(np.where(tau > 0.5, 1.0 - tau, tau), self._c1)

    def d2(self, tau):
        tau = np.asarray(tau, dtype=float)
        upper = tau > 0.5
        out = P.polyval(np.where(upper, 1.0 - tau, tau), self._c2)
        return np.where(upper, -out, out)

    def evaluate_exact(self, tau: Fraction) -> Fraction:
        tau = Fraction(tau)
        return sum((c * tau ** n for n, c in enumerate(self.exact)), Fraction(0))

    def inverse(self, s):
        if self.k == 0:
            return np.asarray(s, dtype=float).copy()
        return super().inverse(s)

    def config(self):
        return {"schedule": "linear"} if self.k == 0 else {"schedule": "poly", "k": self.k}


def polynomial_schedule(k: int) -> PolynomialSchedule:
    return PolynomialSchedule(k)


class TabulatedSchedule(Schedule):
    """Schedule defined implicitly by ``A(s) = A(1) tau`` for a tabulated increasing ``A``.

    ``A`` is represented by a piecewise cubic Hermite interpolant through the
    grid values with the exact density ``A'(s)`` as node slopes. Slopes that
    would break monotonicity are limited (Fritsch-Carlson), which is recorded
    in ``n_limited``.
    """

    def __init__(self, s_grid, cumulative, density, kind: str = "const-speed"):
        s = np.asarray(s_grid, dtype=float)
        a = np.asarray(cumulative, dtype=float)
        m = np.asarray(density, dtype=float).copy()
        if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
            raise ValueError("schedule grid must increase strictly from 0 to 1")
        if a[0] != 0.0 or np.any(np.diff(a) <= 0) or np.any(m < 0):
            raise ValueError("tabulated cumulative function must increase strictly")
        self._kind = kind
        self.s_grid, self.cumulative = s, a
        self.total = float(a[-1])
        h = np.diff(s)
        secant = np.diff(a) / h
        alpha, beta = m[:-1] / secant, m[1:] / secant
        bad = alpha ** 2 + beta ** 2 > 9.0
        self.n_limited = int(np.count_nonzero(bad))
        if self.n_limited:
            scale = np.where(bad, 3.0 / np.sqrt(alpha ** 2 + beta ** 2), 1.0)
            m[:-1] = np.where(bad, scale * alpha * secant, m[:-1])
            m[1:] = np.where(bad, np.minimum(m[1:], scale * beta * secant), m[1:])
        self.slopes = m
        self._h = h
        self._tau_nodes = a / self.total
        self._tau_nodes[-1] = 1.0

    @property
    def kind(self):
        return self._kind

    def _segment(self, s):
        i = np.clip(np.searchsorted(self.s_grid, s, side="right") - 1, 0, self.s_grid.size - 2)
        h = self._h[i]
        u = (s - self.s_grid[i]) / h
        return i, h, u

    def _hermite(self, i, h, u, order):
        y0, y1 = self.cumulative[i], self.cumulative[i + 1]
        m0, m1 = self.slopes[i] * h, self.slopes[i + 1] * h
        if order == 0:
            h00 = (1 + 2 * u) * (1 - u) ** 2
            h10 = u * (1 - u) ** 2
            h01 = u * u * (3 - 2 * u)
            h11 = u * u * (u - 1)
            return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
        if order == 1:
            d00 = 6 * u * u - 6 * u
            d10 = 3 * u * u - 4 * u + 1
            d01 = -d00
            d11 = 3 * u * u - 2 * u
            return (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / h
        e00 = 12 * u - 6
        e10 = 6 * u - 4
        e11 = 6 * u - 2
        return (e00 * y0 + e10 * m0 - e00 * y1 + e11 * m1) / (h * h)

    def cumulative_at(self, s):
        s = np.asarray(s, dtype=float)
        return self._hermite(*self._segment(s), 0)

    def density_at(self, s):
        s = np.asarray(s, dtype=float)
        return self._hermite(*self._segment(s), 1)

    def value(self, tau):
        tau = np.asarray(tau, dtype=float)
        target = np.clip(tau, 0.0, 1.0) * self.total
        i = np.clip(np.searchsorted(self.cumulative, target, side="right") - 1,
                    0, self.s_grid.size - 2)
        h = self._h[i]
        y0, y1 = self.cumulative[i], self.cumulative[i + 1]
        lo, hi = np.zeros_like(target), np.ones_like(target)
        u = np.clip((target - y0) / (y1 - y0), 0.0, 1.0)
        # safeguarded Newton on the Hermite cubic within the bracketing cell
        for _ in range(50):
            f = self._hermite(i, h, u, 0) - target
            lo = np.where(f < 0, u, lo)
            hi = np.where(f < 0, hi, u)
            df = self._hermite(i, h, u, 1) * h
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(df > 0, f / df, np.inf)
            new = u - step
            outside = ~((new > lo) & (new < hi))
            new = np.where(outside, 0.5 * (lo + hi), new)
            done = np.abs(new - u) <= 1e-15
            u = new
            if np.all(done):
                break
        s = self.s_grid[i] + h * u
        s = np.where(tau <= 0.0, 0.0, s)
        return np.where(tau >= 1.0, 1.0, s)

    def d1(self, tau):
        return self.total / self.density_at(self.value(tau))

    def d2(self, tau):
        s = self.value(tau)
        dens = self.density_at(s)
        sdot = self.total / dens
        return -sdot * sdot * self.cumulative_curvature(s) / dens

    def cumulative_curvature(self, s):
        s = np.asarray(s, dtype=float)
        return self._hermite(*self._segment(s), 2)

    def inverse(self, s):
        return self.cumulative_at(s) / self.total

    def breakpoints(self):
        return self._tau_nodes.copy()

    def config(self):
        return {"schedule": self._kind, "grid": int(self.s_grid.size)}
