"""Ground-state metric, path lengths, Christoffel symbols and geodesics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdrive.analysis import gap_map
from qdrive.errors import SingularMetricError
from qdrive.geometry import (
    christoffel,
    geodesic_bvp,
    ground_gap,
    manifold_speed,
    metric_derivatives,
    metric_field,
    metric_tensor,
    path_length,
    stencil_matrices,
)
from qdrive.models import LipkinModel, eigensystem
from qdrive.protocols import arc_shape, assemble_protocol, line_shape
from qdrive.schedules import polynomial_schedule


def two_level_metric(x, z):
    r4 = (x * x + z * z) ** 2
    return np.array([[z * z, -x * z], [-x * z, x * x]]) / (4.0 * r4)


class TestMetric:

    def test_unit_x(self, two_level):
        assert np.allclose(metric_tensor(two_level, (1.0, 0.0)), [[0, 0], [0, 0.25]], atol=1e-15)

    def test_closed_form_and_polar(self, two_level, rng):
        radius = rng.uniform(0.05, 5.0, 200)
        alpha = rng.uniform(-np.pi, np.pi, 200)
        pts = np.column_stack([radius * np.cos(alpha), radius * np.sin(alpha)])
        g = metric_field(two_level, pts)
        for gi, (x, z) in zip(g, pts):
            assert np.allclose(gi, two_level_metric(x, z), atol=1e-10)
            jac = np.array([[x, -z], [z, x]]) / np.array([np.hypot(x, z), 1.0])
            polar = jac.T @ gi @ jac
            assert polar[0, 0] == pytest.approx(0.0, abs=1e-12)
            assert polar[1, 1] == pytest.approx(0.25, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-2, 2), st.floats(-1, 1), st.integers(2, 12))
    def test_lipkin_symmetric_semidefinite(self, lam, chi, n):
        model = LipkinModel(n)
        if ground_gap(model, [(lam, chi)])[0] < 1e-6:
            return
        g = metric_tensor(model, (lam, chi))
        assert np.allclose(g, g.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(g)) >= -1e-10

    @pytest.mark.parametrize("direction", [(1.0, 0.0), (0.0, 1.0), (0.6, -0.8)])
    def test_lipkin_quench_overlap(self, direction):
        model = LipkinModel(8)
        point = np.array([0.5, 0.2])
        g = metric_tensor(model, point)
        ground = eigensystem(model, point).ground
        errors = []
        for eps in (1e-2, 1e-3, 1e-4):
            delta = eps * np.asarray(direction)
            other = eigensystem(model, point + delta).ground
            ratio = (1 - abs(np.vdot(ground, other)) ** 2) / (delta @ g @ delta)
            errors.append(abs(ratio - 1))
        # the ratio approaches one linearly in the quench size
        assert errors[2] < 1e-3
        assert errors[1] < 0.2 * errors[0] and errors[2] < 0.2 * errors[1]


class TestLengths:

    def test_zero_length(self, lipkin5):
        assert path_length(lipkin5, line_shape((0.3, 0.1), (0.3, 0.1))) == 0.0

    def test_two_level_line(self, two_level):
        length = path_length(two_level, line_shape((-0.5, 1.0), (0.5, 1.0)))
        assert length == pytest.approx(np.arctan(0.5), abs=1e-9)

    def test_arc_equals_line(self, two_level):
        for x0, z0 in [(0.5, 1.0), (1.0, 0.1), (0.3, 2.0)]:
            arc = path_length(two_level, arc_shape(x0, z0))
            line = path_length(two_level, line_shape((-x0, z0), (x0, z0)))
            assert arc == pytest.approx(line, abs=1e-9)
            assert arc == pytest.approx(np.arctan(x0 / z0), abs=1e-9)

    def test_bad_parameter(self, two_level):
        with pytest.raises(ValueError):
            path_length(two_level, arc_shape(0.5, 1.0), 1.5)


class TestManifoldSpeed:

    def test_static(self, lipkin5):
        proto = assemble_protocol(line_shape((0.2, 0.1), (0.2, 0.1)), polynomial_schedule(0))
        assert np.array_equal(manifold_speed(lipkin5, proto, np.linspace(0, 1, 5)), np.zeros(5))

    def test_arc_constant(self, two_level):
        proto = assemble_protocol(arc_shape(0.5, 1.0), polynomial_schedule(0))
        speed = manifold_speed(two_level, proto, np.linspace(0, 1, 51))
        assert np.allclose(speed, (np.pi - 2 * np.arctan(2.0)) / 2, atol=1e-12)

    def test_line_peaks_at_midpoint(self, two_level):
        proto = assemble_protocol(line_shape((-0.5, 1.0), (0.5, 1.0)), polynomial_schedule(0))
        tau = np.linspace(0, 1, 101)
        speed = manifold_speed(two_level, proto, tau)
        assert tau[np.argmax(speed)] == pytest.approx(0.5)
        # |alpha_dot| / 2 = x0 z0 / r^2 along the line
        x = -0.5 + tau
        assert np.allclose(speed, 0.5 / (x * x + 1), atol=1e-12)


class TestChristoffel:

    def test_two_level_is_singular(self, two_level):
        with pytest.raises(SingularMetricError):
            christoffel(two_level, (0.5, 1.0))
        with pytest.raises(SingularMetricError):
            geodesic_bvp(two_level, (-0.5, 1.0), (0.5, 1.0))

    def test_derivatives_richardson(self):
        model = LipkinModel(6)
        point = np.array([0.4, 0.1])
        _, dg = metric_derivatives(model, point[None])

        def central(h):
            out = np.empty((2, 2, 2))
            for rho in range(2):
                e = np.zeros(2)
                e[rho] = h
                out[rho] = (metric_tensor(model, point + e) - metric_tensor(model, point - e)) / (2 * h)
            return out

        ref = (4 * central(1e-4) - central(2e-4)) / 3
        assert np.allclose(dg[0], ref, rtol=1e-6, atol=1e-6 * np.max(np.abs(ref)))

    def test_symmetric_lower_indices(self, lipkin5):
        gamma = christoffel(lipkin5, (0.7, 0.2))
        assert np.allclose(gamma, np.swapaxes(gamma, 1, 2))

    def test_metric_compatibility(self, lipkin5):
        # d_rho g_mu,nu = Gamma^x_rho,mu g_x,nu + Gamma^x_rho,nu g_mu,x
        point = np.array([0.7, 0.2])
        g, dg = metric_derivatives(lipkin5, point[None])
        gamma = christoffel(lipkin5, point)
        rebuilt = (np.einsum("xrm,xv->rmv", gamma, g[0]) + np.einsum("xrv,mx->rmv", gamma, g[0]))
        assert np.allclose(rebuilt, dg[0], atol=1e-8 * np.max(np.abs(dg)))


class TestStencils:

    @pytest.mark.parametrize("order", [2, 4])
    def test_exact_on_polynomials(self, order):
        n = 21
        s = np.linspace(0, 1, n)
        h = s[1] - s[0]
        d1, d2 = stencil_matrices(n, order)
        p = order
        assert np.allclose(d1 @ s ** p / h, p * s[1:-1] ** (p - 1), atol=1e-9)
        assert np.allclose(d2 @ s ** p / h ** 2, p * (p - 1) * s[1:-1] ** (p - 2), atol=1e-7)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            stencil_matrices(11, 3)


class TestGeodesic:

    def test_constant_curve(self, lipkin5):
        geo = geodesic_bvp(lipkin5, (0.3, 0.1), (0.3, 0.1))
        assert np.allclose(geo.nodes, [0.3, 0.1])

    def test_bends_toward_small_gap(self, lipkin5):
        end = np.array([1.2, 0.29])
        geo = geodesic_bvp(lipkin5, (0.0, 0.0), end)
        normal = np.array([-end[1], end[0]]) / np.linalg.norm(end)
        area = np.trapezoid((geo.nodes - np.outer(geo.s_nodes, end)) @ normal, geo.s_nodes)
        # minimal-gap curve over chi for lambda in [0, 1]; its gap shrinks as lambda decreases
        ridge = gap_map(lipkin5, np.linspace(0.0, 1.0, 21), np.linspace(0.0, 1.0, 201)).ridge_in_chi()
        side = np.sign((ridge[:, :2] - 0.5 * end) @ normal)
        assert np.all(side == 1)
        assert np.all(np.diff(ridge[:, 2]) > 0)
        assert area > 0

    def test_short_geodesic_is_nearly_straight(self, lipkin5):
        def sagitta(end):
            end = np.asarray(end)
            geo = geodesic_bvp(lipkin5, (0.0, 0.0), end)
            normal = np.array([-end[1], end[0]]) / np.linalg.norm(end)
            return np.max(np.abs(geo.nodes @ normal))

        full, half = sagitta((0.05, 0.02)), sagitta((0.025, 0.01))
        assert full < 5e-3 * np.hypot(0.05, 0.02)
        # deviation from the chord is quadratic in the chord length
        assert full / half == pytest.approx(4.0, rel=0.05)

    def test_shorter_than_line(self):
        model = LipkinModel(8)
        geo = geodesic_bvp(model, (0.0, 0.0), (0.3, 0.3))
        line = path_length(model, line_shape((0.0, 0.0), (0.3, 0.3)))
        assert geo.length(model) < line

    def test_converged_quality(self, lipkin5):
        geo = geodesic_bvp(lipkin5, (0.0, 0.0), (1.2, 0.15))
        assert geo.max_residual < 1e-6
        assert geo.speed_uniformity(lipkin5) < 1e-5
        table = geo.table(lipkin5)
        assert table.shape == (201, 5)
        assert table[-1, 3] == pytest.approx(geo.length(lipkin5), rel=1e-8)

    def test_mesh_size_validation(self, lipkin5):
        with pytest.raises(ValueError):
            geodesic_bvp(lipkin5, (0, 0), (1, 0.1), mesh_size=5)
