"""Post-processing: Landau-Zener law, Lambert-W crossover time, envelope
fits, crossover detection from sweeps, APT relative errors and gap maps.

Logarithms of infidelities in fits and tables are base 10 unless a name
says otherwise (``ln`` for natural logarithms).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import DimensionError, FitError
from .geometry import ground_gap
from .models import LipkinModel, as_point

__all__ = ["XI", "landau_zener_infidelity", "lambert_w_minus1", "CrossoverEstimate",
           "crossover_time_lambert", "EnvelopeFit", "upper_envelope", "LinearFit",
           "landau_zener_window", "crossover_from_sweep", "asymptotic_onset",
           "apt_relative_error",
           "GapMap", "gap_map", "min_gap_along_line"]

# lower bound on x0/z0 for a sharp two-level crossover
XI = float(np.sqrt((np.e * np.pi / (4.0 * np.sqrt(2.0))) ** (2.0 / 3.0) - 1.0))
_BRANCH = -1.0 / np.e


def landau_zener_infidelity(x0: float, z0: float, T) -> np.ndarray:
    """Landau-Zener estimate ``exp(-pi z0^2 T / (2 x0))`` of the final infidelity."""
    T = np.asarray(T, dtype=float)
    if x0 <= 0 or z0 < 0 or np.any(T < 0):
        raise ValueError("need x0 > 0, z0 >= 0 and T >= 0")
    return np.exp(-np.pi * z0 * z0 * T / (2.0 * x0))


def lambert_w_minus1(a: float, rtol: float = 1e-15, max_iter: int = 50) -> float:
    """Lower real branch ``w <= -1`` of ``w exp(w) = a`` for ``-1/e <= a < 0``.

    Halley iteration seeded with the branch-point series near ``-1/e`` and
    with ``ln(-a) - ln(-ln(-a))`` elsewhere.
    """
    a = float(a)
    if not _BRANCH <= a < 0.0:
        # tolerate rounding at the branch point
        if a < _BRANCH and a > _BRANCH * (1 + 4e-16):
            a = _BRANCH
        else:
            raise ValueError(f"lower Lambert branch needs -1/e <= a < 0, got {a!r}")
    if a == _BRANCH:
        return -1.0
    q = 2.0 * (1.0 + np.e * a)
    if q < 0.5:
        p = -np.sqrt(q)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
        for _ in range(max_iter):
            ew = np.exp(w)
            f = w * ew - a
            wp1 = w + 1.0
            if wp1 == 0.0 or f == 0.0:
                break
            w_new = min(w - f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1)), -1.0)
            done = abs(w_new - w) <= rtol * abs(w_new)
            w = w_new
            if done:
                break
        return float(w)
    # away from the branch point solve w + ln(-w) = ln(-a), immune to underflow
    target = np.log(-a)
    w = target - np.log(-target)
    w += np.log(-w) / w if w < -1.0 else 0.0
    for _ in range(max_iter):
        g = w + np.log(-w) - target
        g1 = 1.0 + 1.0 / w
        g2 = -1.0 / (w * w)
        w_new = min(w - g / (g1 - 0.5 * g * g2 / g1), -1.0 - 1e-15)
        done = abs(w_new - w) <= rtol * abs(w_new)
        w = w_new
        if done:
            break
    return float(w)


@dataclass
class CrossoverEstimate:
    """Crossover time between the Landau-Zener and algebraic regimes.

    ``exists`` is False when no sharp crossover is defined; ``T_c`` is then
    NaN.
    """

    T_c: float
    method: str
    inputs: dict
    exists: bool
    metadata: dict = field(default_factory=dict)


def crossover_time_lambert(x0: float, z0: float) -> CrossoverEstimate:
    """Analytic two-level crossover time for the linear protocol.

    Equates the Landau-Zener law with the phase-averaged first-order
    asymptote ``x0^2 z0^2 / (2 (x0^2 + z0^2)^3 T^2)``.
    """
    if x0 <= 0 or z0 <= 0:
        raise ValueError("need x0 > 0 and z0 > 0")
    a = -np.pi * z0 ** 3 / (4.0 * np.sqrt(2.0) * (x0 * x0 + z0 * z0) ** 1.5)
    inputs = {"x0": float(x0), "z0": float(z0)}
    meta = {"lambert_argument": float(a), "ratio": float(x0 / z0), "xi": XI}
    if a < _BRANCH * (1 + 4e-16):
        return CrossoverEstimate(np.nan, "lambert-analytic", inputs, False, meta)
    w = lambert_w_minus1(max(a, _BRANCH))
    T_c = -4.0 * x0 / (np.pi * z0 * z0) * w
    return CrossoverEstimate(float(T_c), "lambert-analytic", inputs, True, meta)


@dataclass
class EnvelopeFit:
    """Least-squares line through local maxima on log-log axes."""

    log_T: np.ndarray
    log_I: np.ndarray
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    residual_rms: float
    window: int
    T_range: tuple

    def __call__(self, T) -> np.ndarray:
        """Envelope value ``10^intercept T^slope``."""
        return 10.0 ** (self.intercept + self.slope * np.log10(np.asarray(T, dtype=float)))


def _sweep_column(sweep, label):
    if hasattr(sweep, "infidelity") and hasattr(sweep, "labels"):
        if label is None:
            if len(sweep.labels) != 1:
                raise ValueError("sweep has several protocols; pass a label")
            label = sweep.labels[0]
        return np.asarray(sweep.T, dtype=float), np.asarray(sweep.column(label), dtype=float)
    T, I = sweep
    return np.asarray(T, dtype=float), np.asarray(I, dtype=float)


def _local_maxima(values, window):
    half = window // 2
    idx = []
    for i in range(half, values.size - half):
        seg = values[i - half:i + half + 1]
        if values[i] == np.max(seg) and np.isfinite(values[i]):
            idx.append(i)
    return np.array(idx, dtype=int)


def upper_envelope(sweep, window: int = 7, T_range=None, label=None, slope=None,
                   min_maxima: int = 5) -> EnvelopeFit:
    """Fit the upper envelope ``log I = intercept + slope log T`` of a sweep.

    Parameters
    ----------
    sweep : SweepResult or tuple
        Either a sweep with ``label`` selecting the protocol, or ``(T, I)``.
    window : int
        Odd number of consecutive grid points a maximum must dominate.
    T_range : tuple, optional
        Restrict the fit to ``T_range[0] <= T <= T_range[1]``.
    slope : float, optional
        Fix the slope and fit the intercept only.
    min_maxima : int
        Minimum number of support points.

    Raises
    ------
    FitError
        Too few grid points or maxima.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    T, I = _sweep_column(sweep, label)
    keep = np.isfinite(I)
    if T_range is not None:
        keep &= (T >= T_range[0]) & (T <= T_range[1])
    T, I = T[keep], I[keep]
    if T.size < 30 or np.log10(T[-1] / T[0]) < 1.0 - 1e-9:
        raise FitError(f"envelope fit needs >= 30 points over a decade, got {T.size} "
                       f"spanning {np.log10(T[-1] / T[0]) if T.size else 0:.2f} decades")
    lx, ly = np.log10(T), np.log10(np.where(I > 0, I, np.nan))
    # maxima are taken on the series with the current envelope trend removed,
    # otherwise a steep decay hides peaks behind earlier, higher samples
    fin = np.isfinite(ly)
    trend = float(slope) if slope is not None else float(np.polyfit(lx[fin], ly[fin], 1)[0])
    idx = np.array([], dtype=int)
    for _ in range(10):
        resid = np.where(np.isfinite(ly), ly - trend * lx, -np.inf)
        new_idx = _local_maxima(resid, window)
        if new_idx.size < min_maxima:
            raise FitError(f"only {new_idx.size} local maxima in the fit range "
                           f"(need {min_maxima})")
        if np.array_equal(new_idx, idx):
            break
        idx = new_idx
        if slope is not None:
            break
        trend = float(stats.linregress(lx[idx], ly[idx]).slope)
    x, y = lx[idx], ly[idx]
    if slope is None:
        fit = stats.linregress(x, y)
        s, c = float(fit.slope), float(fit.intercept)
        s_err, c_err = float(fit.stderr), float(fit.intercept_stderr)
    else:
        s = float(slope)
        c = float(np.mean(y - s * x))
        s_err = 0.0
        c_err = float(np.std(y - s * x, ddof=1) / np.sqrt(x.size))
    rms = float(np.sqrt(np.mean((y - c - s * x) ** 2)))
    return EnvelopeFit(x, y, s, c, s_err, c_err, rms, window, (float(T[0]), float(T[-1])))


@dataclass
class LinearFit:
    """Straight line ``ln I = intercept + slope T`` over an index window."""

    slope: float
    intercept: float
    r_squared: float
    start: int
    stop: int
    T_range: tuple


def landau_zener_window(T, I, r2_min: float = 0.999, min_points: int = 6,
                        max_start: int | None = None) -> LinearFit:
    """Longest early run of the sweep on which ``ln I`` is linear in ``T``.

    Every window ``[i, j]`` with ``i <= max_start`` is scored by the
    coefficient of determination of a least-squares line; the longest
    window with ``R^2 > r2_min`` and negative slope wins, ties going to the
    earliest start.
    """
    T = np.asarray(T, dtype=float)
    y = np.log(np.asarray(I, dtype=float))
    ok = np.isfinite(y)
    n = T.size
    if max_start is None:
        max_start = n // 3
    best = None
    # prefix sums make every window O(1)
    Tz = np.where(ok, T, 0.0)
    yz = np.where(ok, y, 0.0)
    c1 = np.concatenate([[0], np.cumsum(ok)])
    cx = np.concatenate([[0.0], np.cumsum(Tz)])
    cy = np.concatenate([[0.0], np.cumsum(yz)])
    cxx = np.concatenate([[0.0], np.cumsum(Tz * Tz)])
    cyy = np.concatenate([[0.0], np.cumsum(yz * yz)])
    cxy = np.concatenate([[0.0], np.cumsum(Tz * yz)])
    for i in range(0, min(max_start + 1, n)):
        j = np.arange(i + min_points, n + 1)
        if j.size == 0:
            break
        k = c1[j] - c1[i]
        full = k == (j - i)
        sx, sy = cx[j] - cx[i], cy[j] - cy[i]
        sxx = cxx[j] - cxx[i] - sx * sx / np.maximum(k, 1)
        syy = cyy[j] - cyy[i] - sy * sy / np.maximum(k, 1)
        sxy = cxy[j] - cxy[i] - sx * sy / np.maximum(k, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = sxy * sxy / (sxx * syy)
        good = full & (r2 > r2_min) & (sxy < 0)
        if not np.any(good):
            continue
        jj = int(j[np.nonzero(good)[0][-1]])
        if best is None or jj - i > best[1] - best[0]:
            best = (i, jj)
    if best is None:
        raise FitError("no early window with ln I linear in T; the regimes are not separable")
    i, j = best
    fit = stats.linregress(T[i:j], y[i:j])
    return LinearFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), i, j,
                     (float(T[i]), float(T[j - 1])))


def crossover_from_sweep(sweep, label=None, lz_window=None, algebraic=None,
                         r2_min: float = 0.999, window: int = 7) -> CrossoverEstimate:
    """Crossover time from the intersection of the two fitted regimes.

    Parameters
    ----------
    sweep : SweepResult or tuple
        Final infidelities; ``(T, I)`` tuples are accepted.
    lz_window : tuple, optional
        ``(T_min, T_max)`` for the exponential fit; detected automatically
        by :func:`landau_zener_window` when omitted.
    algebraic : AptPrediction, EnvelopeFit or tuple, optional
        The algebraic branch. An APT prediction contributes its
        phase-averaged level ``sum(|A_n|^2 + |B_n|^2) / T^(2p)``; a tuple is
        ``(slope, log10 intercept)``. By default the upper envelope of the
        sweep beyond the exponential window is fitted.

    Returns
    -------
    CrossoverEstimate
        ``exists`` is False when the two branches do not intersect beyond
        the start of the exponential window (a gradual transition).
    """
    T, I = _sweep_column(sweep, label)
    good = np.isfinite(I) & (I > 0)
    T, I = T[good], I[good]
    if lz_window is None:
        lz = landau_zener_window(T, I, r2_min=r2_min)
    else:
        sel = np.nonzero((T >= lz_window[0]) & (T <= lz_window[1]))[0]
        if sel.size < 3:
            raise FitError("fewer than three points in the Landau-Zener window")
        fit = stats.linregress(T[sel], np.log(I[sel]))
        lz = LinearFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                       int(sel[0]), int(sel[-1]) + 1, (float(T[sel[0]]), float(T[sel[-1]])))
    if algebraic is None:
        tail = (T[lz.stop - 1], T[-1])
        algebraic = upper_envelope((T, I), window=window, T_range=tail)
        source = "sweep-envelope"
    else:
        source = type(algebraic).__name__
    if hasattr(algebraic, "order") and hasattr(algebraic, "end_terms"):
        level = float(np.sum(np.abs(algebraic.end_terms) ** 2 + np.abs(algebraic.start_terms) ** 2))
        slope, ln_c = -2.0 * algebraic.order, np.log(level)
    elif isinstance(algebraic, EnvelopeFit):
        slope, ln_c = algebraic.slope, algebraic.intercept * np.log(10.0)
    else:
        slope, ln_c = float(algebraic[0]), float(algebraic[1]) * np.log(10.0)
    inputs = {"lz_slope": lz.slope, "lz_intercept": lz.intercept, "lz_r2": lz.r_squared,
              "lz_T_range": lz.T_range, "algebraic_slope": float(slope),
              "algebraic_ln_coefficient": float(ln_c), "algebraic_source": source}

    # ln I_lz - ln I_alg, root beyond the start of the exponential window
    def gap(t):
        return lz.intercept + lz.slope * t - ln_c - slope * np.log(t)

    lo = lz.T_range[0]
    hi = max(T[-1], lo) * 10.0
    if not (gap(lo) > 0 > gap(hi)):
        return CrossoverEstimate(np.nan, "curve-intersection", inputs, False)
    # the difference is concave in T; past a positive start it crosses zero once
    T_c = optimize.brentq(gap, lo, hi, xtol=1e-12 * hi, rtol=1e-12)
    return CrossoverEstimate(float(T_c), "curve-intersection", inputs, True)


def asymptotic_onset(T, I_exact, prediction, threshold: float = 0.1) -> CrossoverEstimate:
    """Crossover time as the onset of the APT regime.

    ``T_c`` is where ``|(I_exact - I_APT) / I_APT_max|`` falls below
    ``threshold`` for the last time on the sampled grid, interpolated
    linearly in ``log T`` between the last violating sample and its
    successor. ``exists`` is False when the last sample still violates the
    bound; when no sample violates it ``T_c`` is the first grid point.
    """
    table = apt_relative_error(T, I_exact, prediction)
    T = table[:, 0]
    err = np.abs(table[:, 4])
    finite = np.isfinite(err)
    inputs = {"threshold": float(threshold), "order": int(getattr(prediction, "order", 0))}
    bad = np.nonzero(~finite | (err > threshold))[0]
    if bad.size == 0:
        return CrossoverEstimate(float(T[0]), "apt-onset", inputs, True,
                                 {"censored": "below"})
    i = int(bad[-1])
    if i == T.size - 1:
        return CrossoverEstimate(np.nan, "apt-onset", inputs, False)
    if not finite[i]:
        return CrossoverEstimate(float(T[i + 1]), "apt-onset", inputs, True)
    frac = (err[i] - threshold) / (err[i] - err[i + 1])
    T_c = T[i] * (T[i + 1] / T[i]) ** frac
    return CrossoverEstimate(float(T_c), "apt-onset", inputs, True)


def apt_relative_error(T, I_exact, prediction) -> np.ndarray:
    """Relative APT error ``(I_exact - I_APT) / I_APT_max`` per ``T``.

    ``prediction`` is an ``AptPrediction`` or a table with columns
    ``T, I_APT, I_APT_max`` on the same grid. Returns columns
    ``T, I_exact, I_APT, I_APT_max, relative_error``.
    """
    T = np.asarray(T, dtype=float)
    I_exact = np.asarray(I_exact, dtype=float)
    if I_exact.shape != T.shape:
        raise DimensionError("exact infidelities and T grid differ in length")
    if hasattr(prediction, "infidelity") and hasattr(prediction, "envelope"):
        apt, top = prediction.infidelity(T), prediction.envelope(T)
    else:
        table = np.asarray(prediction, dtype=float)
        if table.ndim != 2 or table.shape[0] != T.size or not np.allclose(table[:, 0], T,
                                                                            rtol=1e-12, atol=0):
            raise DimensionError("prediction table is on a different T grid")
        apt, top = table[:, 1], table[:, 2]
    # orders whose leading coefficients vanish identically have no scale
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(top > 0, (I_exact - apt) / top, np.nan)
    return np.column_stack([T, I_exact, apt, top, rel])


@dataclass
class GapMap:
    """Gap ``E_1 - E_0`` on a ``(lambda, chi)`` grid; ``gaps[i, j]`` is at ``(lam[j], chi[i])``."""

    lam: np.ndarray
    chi: np.ndarray
    gaps: np.ndarray
    N: int

    @staticmethod
    def _refine(values, grid):
        i = int(np.argmin(values))
        if 0 < i < grid.size - 1:
            y0, y1, y2 = values[i - 1], values[i], values[i + 1]
            den = y0 - 2.0 * y1 + y2
            if den > 0:
                u = 0.5 * (y0 - y2) / den
                h = grid[i + 1] - grid[i] if u > 0 else grid[i] - grid[i - 1]
                return float(grid[i] + np.clip(u, -1.0, 1.0) * h), float(y1 - 0.25 * (y0 - y2) * u)
        return float(grid[i]), float(values[i])

    def ridge_in_chi(self) -> np.ndarray:
        """Per-``lambda`` minimum over ``chi``: columns ``lambda, chi_min, gap_min``."""
        rows = [(lv, *self._refine(self.gaps[:, j], self.chi)) for j, lv in enumerate(self.lam)]
        return np.array(rows)

    def ridge_in_lambda(self) -> np.ndarray:
        """Per-``chi`` minimum over ``lambda``: columns ``chi, lambda_min, gap_min``."""
        rows = [(cv, *self._refine(self.gaps[i], self.lam)) for i, cv in enumerate(self.chi)]
        return np.array(rows)

    def table(self) -> np.ndarray:
        """Long format: ``lambda, chi, gap`` per cell."""
        L, C = np.meshgrid(self.lam, self.chi)
        return np.column_stack([L.ravel(), C.ravel(), self.gaps.ravel()])


def gap_map(model: LipkinModel, lam_grid, chi_grid, chunk: int = 4096) -> GapMap:
    """Gap ``Delta_10`` of the Lipkin model on a rectangular grid."""
    lam = np.asarray(lam_grid, dtype=float)
    chi = np.asarray(chi_grid, dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(chi))):
        raise ValueError("grids must be finite")
    L, C = np.meshgrid(lam, chi)
    pts = np.column_stack([L.ravel(), C.ravel()])
    out = np.concatenate([ground_gap(model, pts[i:i + chunk])
                          for i in range(0, pts.shape[0], chunk)])
    return GapMap(lam, chi, out.reshape(chi.size, lam.size), getattr(model, "n_qubits", 0))


def min_gap_along_line(model, start, end, n: int = 401) -> tuple[float, float]:
    """Minimum gap on the segment ``start -> end``; returns ``(s_min, gap_min)``."""
    start = as_point(start, model.param_dim)
    end = as_point(end, model.param_dim)
    s = np.linspace(0.0, 1.0, n)
    g = ground_gap(model, start + np.outer(s, end - start))
    i = int(np.argmin(g))
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, n - 1)]
    f = lambda u: float(ground_gap(model, (start + u * (end - start))[None])[0])
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    if res.fun < g[i]:
        return float(res.x), float(res.fun)
    return float(s[i]), float(g[i])
