"""Landau-Zener law, Lambert W crossover, envelope fits and gap maps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import lambertw

from qdrive.analysis import (
    XI,
    EnvelopeFit,
    apt_relative_error,
    asymptotic_onset,
    crossover_from_sweep,
    crossover_time_lambert,
    gap_map,
    lambert_w_minus1,
    landau_zener_infidelity,
    landau_zener_window,
    min_gap_along_line,
    upper_envelope,
)
from qdrive.apt import AptPrediction
from qdrive.errors import DimensionError, FitError
from qdrive.models import LipkinModel


def bisect(f, lo, hi, tol=1e-13):
    flo = f(lo)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestLandauZener:

    def test_zero_time(self):
        assert landau_zener_infidelity(0.5, 1.0, 0.0) == 1.0

    def test_value(self):
        assert landau_zener_infidelity(0.5, 1.0, 10.0) == pytest.approx(np.exp(-10 * np.pi), rel=1e-14)
        assert landau_zener_infidelity(0.5, 1.0, 10.0) == pytest.approx(2.27e-14, rel=1e-3)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, -1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            landau_zener_infidelity(*args)


class TestLambert:

    def test_branch_point(self):
        assert lambert_w_minus1(-1 / np.e) == -1.0

    def test_tenth(self):
        w = lambert_w_minus1(-0.1)
        assert w == pytest.approx(-3.577152063957297, abs=1e-12)
        assert w * np.exp(w) == pytest.approx(-0.1, abs=1e-12)

    def test_small_argument(self):
        a = -1e-6
        w = lambert_w_minus1(a)
        lead = np.log(-a) - np.log(-np.log(-a))
        assert w == pytest.approx(lead, rel=0.02)
        assert w == pytest.approx(lambertw(a, -1).real, rel=1e-14)

    @pytest.mark.parametrize("a", [-5e-324, -1e-300, -1e-200])
    def test_tiny_argument(self, a):
        # w exp(w) underflows here, so check the logarithmic form of the identity
        w = lambert_w_minus1(a)
        assert w + np.log(-w) == pytest.approx(np.log(-a), rel=1e-15)

    @pytest.mark.parametrize("a", [0.0, 0.1, -0.5])
    def test_domain(self, a):
        with pytest.raises(ValueError):
            lambert_w_minus1(a)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1 / np.e, -1e-300, exclude_max=False))
    def test_matches_scipy(self, a):
        w = lambert_w_minus1(a)
        assert w <= -1.0
        ref = lambertw(a, -1).real
        if np.isfinite(ref):
            # the branch point is a square-root singularity: relax near it
            assert w == pytest.approx(ref, rel=1e-12, abs=1e-7 if a < -0.3678 else 0)
        else:
            assert w * np.exp(w) == pytest.approx(a, rel=1e-12)


class TestCrossoverLambert:

    def test_xi(self):
        assert XI == pytest.approx(0.56211, abs=1e-5)

    @pytest.mark.parametrize("z0", [0.1, 1.0, 3.0])
    def test_limiting_ratio(self, z0):
        est = crossover_time_lambert(XI * z0, z0)
        assert est.exists
        assert est.T_c == pytest.approx(4 * XI / (np.pi * z0), abs=1e-6)

    def test_below_limit(self):
        est = crossover_time_lambert(0.5, 1.0)
        assert not est.exists and np.isnan(est.T_c)
        assert est.method == "lambert-analytic"

    @pytest.mark.parametrize("x0,z0", [(1.0, 0.1), (0.5, 0.05), (2.0, 0.3)])
    def test_bisection_oracle(self, x0, z0):
        rhs = np.log(x0 ** 2 * z0 ** 2 / (2 * (x0 ** 2 + z0 ** 2) ** 3))
        f = lambda T: 2 * np.log(T) - np.pi * z0 ** 2 * T / (2 * x0) - rhs
        # the larger root is the crossover into the algebraic regime
        peak = 4 * x0 / (np.pi * z0 ** 2)
        root = bisect(f, peak, 1e9)
        assert crossover_time_lambert(x0, z0).T_c == pytest.approx(root, rel=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 10), st.floats(0.01, 10))
    def test_existence_flag(self, x0, z0):
        est = crossover_time_lambert(x0, z0)
        assert est.exists == (x0 / z0 >= XI * (1 - 1e-12)) or abs(x0 / z0 - XI) < 1e-9
        if est.exists:
            assert est.T_c > 0

    def test_invalid(self):
        with pytest.raises(ValueError):
            crossover_time_lambert(0.0, 1.0)


def synthetic(T, c=0.3, slope=-2.0, omega=0.05):
    return c * T ** slope * np.sin(omega * T) ** 2


class TestEnvelope:

    def test_synthetic(self):
        T = np.geomspace(10, 1000, 2000)
        fit = upper_envelope((T, synthetic(T)))
        assert fit.slope == pytest.approx(-2.0, abs=0.05)
        assert fit.intercept == pytest.approx(np.log10(0.3), abs=0.05)
        assert isinstance(fit, EnvelopeFit)
        assert fit(100.0) == pytest.approx(10 ** (fit.intercept + 2 * fit.slope))

    @pytest.mark.parametrize("slope", [-2.0, -4.0, -8.0])
    def test_steep_decay(self, slope):
        T = np.geomspace(50, 1000, 1500)
        assert upper_envelope((T, synthetic(T, slope=slope, omega=0.2))).slope == pytest.approx(slope, abs=0.05)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-6, 1e6))
    def test_scale_equivariance(self, c):
        T = np.geomspace(10, 1000, 600)
        base = upper_envelope((T, synthetic(T)))
        scaled = upper_envelope((T, c * synthetic(T)))
        assert scaled.slope == pytest.approx(base.slope, abs=1e-9)
        assert scaled.intercept - base.intercept == pytest.approx(np.log10(c), abs=1e-9)

    def test_fixed_slope(self):
        T = np.geomspace(10, 1000, 2000)
        fit = upper_envelope((T, synthetic(T)), slope=-2.0)
        assert fit.slope == -2.0 and fit.slope_err == 0.0
        assert fit.intercept == pytest.approx(np.log10(0.3), abs=0.01)

    def test_range_and_errors(self):
        T = np.geomspace(10, 1000, 200)
        with pytest.raises(FitError):
            upper_envelope((T, synthetic(T)), T_range=(10, 50))
        with pytest.raises(FitError):
            upper_envelope((T, synthetic(T)), window=199)
        with pytest.raises(ValueError):
            upper_envelope((T, synthetic(T)), window=4)


class TestCrossoverFromSweep:

    def make(self, T_star=200.0, rate=0.05):
        T = np.geomspace(2, 4000, 1500)
        c = np.exp(-rate * T_star) * T_star ** 2
        lz = np.exp(-rate * T)
        alg = c * T ** -2.0 * np.sin(0.7 * T) ** 2
        return T, np.where(T < T_star, np.maximum(lz, alg), alg), c

    def test_window_detection(self):
        T, I, _ = self.make()
        win = landau_zener_window(T, I)
        assert win.slope == pytest.approx(-0.05, rel=0.01)
        assert win.T_range[0] == T[0] and win.T_range[1] < 260.0

    def test_known_intersection(self):
        T, I, c = self.make()
        est = crossover_from_sweep((T, I))
        assert est.exists and est.method == "curve-intersection"
        assert est.T_c == pytest.approx(200.0, rel=0.02)
        exact = crossover_from_sweep((T, I), algebraic=(-2.0, np.log10(c)))
        assert exact.T_c == pytest.approx(200.0, rel=0.01)

    def test_apt_level(self):
        T, I, c = self.make()
        pred = AptPrediction(1, "x", np.array([np.sqrt(c / 2)]), np.array([np.sqrt(c / 2)]),
                             np.ones(1), np.zeros(1))
        assert crossover_from_sweep((T, I), algebraic=pred).T_c == pytest.approx(200.0, rel=0.01)
        exact_lz = crossover_from_sweep((T, I), lz_window=(2.0, 150.0), algebraic=pred)
        assert exact_lz.T_c == pytest.approx(200.0, rel=1e-9)

    def test_no_window(self):
        T = np.geomspace(1, 1000, 200)
        with pytest.raises(FitError):
            landau_zener_window(T, synthetic(T, omega=3.0) + 1e-30)


class TestOnset:

    def pred(self):
        return AptPrediction(1, "x", np.array([0.1 + 0j]), np.array([0.0 + 0j]), np.ones(1), np.zeros(1))

    def test_identity(self):
        pred = self.pred()
        T = np.geomspace(1, 100, 20)
        table = apt_relative_error(T, pred.infidelity(T), pred)
        assert np.array_equal(table[:, 4], np.zeros(20))
        est = asymptotic_onset(T, pred.infidelity(T), pred)
        assert est.T_c == 1.0 and est.metadata["censored"] == "below"

    def test_interpolated(self):
        pred = self.pred()
        T = np.geomspace(1, 1000, 31)
        exact = pred.infidelity(T) + pred.envelope(T) * np.where(T < 50, 0.5, 0.01)
        est = asymptotic_onset(T, exact, pred)
        assert 40 < est.T_c < 60 and est.method == "apt-onset"
        assert not asymptotic_onset(T, pred.infidelity(T) * 2 + 1, pred).exists

    def test_grid_mismatch(self):
        pred = self.pred()
        with pytest.raises(DimensionError):
            apt_relative_error([1.0, 2.0], [0.1], pred)
        with pytest.raises(DimensionError):
            apt_relative_error([1.0, 2.0], [0.1, 0.2], pred.table([1.0, 3.0]))


class TestGapMap:

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_origin(self, n):
        gm = gap_map(LipkinModel(n), [0.0], [0.0])
        assert gm.gaps.shape == (1, 1) and gm.gaps[0, 0] == pytest.approx(1.0, abs=1e-14)
        assert gm.table().shape == (1, 3) and gm.N == n

    def test_mirror_symmetry(self, lipkin10):
        chi = np.linspace(-1, 1, 41)
        gm = gap_map(lipkin10, np.linspace(-2, 2, 31), chi)
        assert np.allclose(gm.gaps, gm.gaps[::-1], atol=1e-12)
        ridge = gm.ridge_in_lambda()
        assert np.allclose(ridge[:, 1:], ridge[::-1, 1:], atol=1e-9)

    def test_ridge_from_triple_point(self, lipkin10):
        gm = gap_map(lipkin10, np.linspace(0.0, 1.5, 31), np.linspace(0.0, 1.0, 201))
        ridge = gm.ridge_in_chi()
        below = ridge[ridge[:, 0] < 1.0]
        # the minimal-gap curve climbs away from chi = 0 as lambda drops below one
        assert np.all(np.diff(below[:, 1]) < 0) and np.all(below[:, 1] > 0.3)
        assert ridge[ridge[:, 0] >= 1.3, 1].max() == 0.0

    def test_min_gap_decreases_with_n(self):
        gaps = [min_gap_along_line(LipkinModel(n), (0, 0), (1.5, 0.2))[1] for n in (5, 6, 8, 10, 15, 20)]
        assert np.all(np.diff(gaps) < 0)

    def test_min_gap_refined(self, lipkin10):
        s, g = min_gap_along_line(lipkin10, (0, 0), (1.5, 0.2), n=21)
        s_fine, g_fine = min_gap_along_line(lipkin10, (0, 0), (1.5, 0.2), n=4001)
        assert g <= g_fine + 1e-10 and s == pytest.approx(s_fine, abs=1e-3)

    def test_nonfinite_grid(self, lipkin5):
        with pytest.raises(ValueError):
            gap_map(lipkin5, [0.0, np.nan], [0.0])
