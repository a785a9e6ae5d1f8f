"""Curves, schedules and their composition into driving protocols."""

from fractions import Fraction as Fr
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdrive.curves import ArcCurve, LineCurve, MeshCurve
from qdrive.errors import DimensionError
from qdrive.geometry import constant_speed_schedule, manifold_speed
from qdrive.protocols import (
    arc_shape,
    assemble_protocol,
    build_protocol,
    label_spec,
    line_shape,
)
from qdrive.schedules import (
    PolynomialSchedule,
    polynomial_coefficients_exact,
    polynomial_schedule,
)

# tabulated polynomial schedules, coefficient of tau^n
TABLE = {
    0: {1: Fr(1)},
    1: {3: Fr(-2), 2: Fr(3)},
    2: {5: Fr(6), 4: Fr(-15), 3: Fr(10)},
    3: {7: -20 * Fr(1), 6: 20 * Fr(7, 2), 5: -20 * Fr(21, 5), 4: 20 * Fr(7, 4)},
    4: {9: 70 * Fr(1), 8: -70 * Fr(9, 2), 7: 70 * Fr(54, 7), 6: -70 * Fr(6), 5: 70 * Fr(9, 5)},
    5: {11: -252 * Fr(1), 10: 252 * Fr(11, 2), 9: -252 * Fr(110, 9), 8: 252 * Fr(55, 4),
        7: -252 * Fr(55, 7), 6: 252 * Fr(11, 6)},
}


def smoothstep(k):
    """Closed-form smoothstep ``tau^(k+1) sum_n C(k+n, n) C(2k+1, k-n) (-tau)^n``."""
    out = [Fr(0)] * (2 * k + 2)
    for n in range(k + 1):
        out[k + 1 + n] = Fr(comb(k + n, n) * comb(2 * k + 1, k - n) * (-1) ** n)
    return tuple(out)


class TestPolynomialSchedule:

    @pytest.mark.parametrize("k", range(6))
    def test_matches_table(self, k):
        exact = polynomial_coefficients_exact(k)
        expected = [TABLE[k].get(n, Fr(0)) for n in range(2 * k + 2)]
        assert list(exact) == expected

    @pytest.mark.parametrize("k", range(12))
    def test_matches_closed_form(self, k):
        assert polynomial_coefficients_exact(k) == smoothstep(k)

    def test_linear(self):
        tau = np.linspace(0, 1, 11)
        assert np.array_equal(polynomial_schedule(0).value(tau), tau)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_endpoint_derivatives_vanish_exactly(self, k):
        coeffs = polynomial_coefficients_exact(k)
        for i in range(1, k + 1):
            for tau in (Fr(0), Fr(1)):
                deriv = Fr(0)
                for n, c in enumerate(coeffs):
                    if n >= i:
                        falling = 1
                        for j in range(i):
                            falling *= n - j
                        deriv += c * falling * tau ** (n - i)
                assert deriv == 0

    @pytest.mark.parametrize("k", range(6))
    def test_float_endpoints(self, k):
        sched = PolynomialSchedule(k)
        assert sched.value(0.0) == 0.0 and sched.value(1.0) == 1.0
        assert sched.evaluate_exact(Fr(1)) == 1
        if k:
            assert abs(sched.d1(0.0)) < 1e-12 and abs(sched.d1(1.0)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 8))
    def test_monotone(self, k):
        tau = np.linspace(0, 1, 2001)
        assert np.all(np.diff(PolynomialSchedule(k).value(tau)) >= 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.floats(0.0, 1.0))
    def test_inverse(self, k, s):
        sched = PolynomialSchedule(k)
        assert sched.value(sched.inverse(s)) == pytest.approx(s, abs=1e-12)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            polynomial_coefficients_exact(-1)


class TestCurves:

    def test_line_endpoints_and_midpoint(self):
        line = line_shape((0.0, 0.0), (1.2, 0.4))
        assert np.array_equal(line.point(0.0), [0.0, 0.0])
        assert np.array_equal(line.point(1.0), [1.2, 0.4])
        assert np.allclose(line.point(0.5), [0.6, 0.2])

    def test_symmetric_two_level_line(self):
        s = np.linspace(0, 1, 7)
        pts = line_shape((-0.5, 1.0), (0.5, 1.0)).point(s)
        assert np.allclose(pts, np.column_stack([2 * 0.5 * s - 0.5, np.ones_like(s)]))

    def test_arc(self):
        arc = arc_shape(0.5, 1.0)
        assert np.allclose(arc.point(0.0), [-0.5, 1.0])
        assert np.allclose(arc.point(1.0), [0.5, 1.0])
        assert arc.alpha0 == pytest.approx(1.1071487177940904, abs=1e-15)
        r = np.linalg.norm(arc.point(np.linspace(0, 1, 101)), axis=1)
        assert np.allclose(r, np.sqrt(1.25), atol=1e-14)

    @pytest.mark.parametrize("curve", [LineCurve((0.1, -0.3), (1.2, 0.4)), ArcCurve(0.7, 0.3)])
    def test_derivatives_match_differences(self, curve):
        s = np.linspace(0.05, 0.95, 13)
        h = 1e-5
        d1 = (curve.point(s + h) - curve.point(s - h)) / (2 * h)
        d2 = (curve.point(s + h) - 2 * curve.point(s) + curve.point(s - h)) / h ** 2
        assert np.allclose(curve.d1(s), d1, atol=1e-8)
        assert np.allclose(curve.d2(s), d2, atol=1e-4)

    def test_mesh_curve_interpolates(self):
        s = np.linspace(0, 1, 41)
        nodes = np.column_stack([s, np.sin(s)])
        mesh = MeshCurve(s, nodes)
        assert np.allclose(mesh.point(0.3), [0.3, np.sin(0.3)], atol=1e-7)
        assert np.array_equal(mesh.point(1.0), nodes[-1])

    def test_mesh_curve_validation(self):
        with pytest.raises(ValueError):
            MeshCurve([0.0, 0.6, 0.5, 1.0], np.zeros((4, 2)))


class TestProtocols:

    def test_protocol_a(self):
        proto = build_protocol(None, "A", (0.0, 0.0), (1.2, 0.4))
        vel = proto.velocity(np.linspace(0, 1, 9))
        assert proto.label == "A"
        assert np.allclose(vel, [1.2, 0.4], atol=1e-14)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_protocol_b_zero_endpoint_speed(self, k):
        proto = build_protocol(None, f"B{k}", (0.0, 0.0), (1.2, 0.4))
        assert proto.label == f"B{k}"
        assert np.max(np.abs(proto.velocity(np.array([0.0, 1.0])))) < 1e-12
        assert proto.speed_zero
        assert proto.acceleration_zero == (k >= 2)

    def test_label_spec(self, two_level, lipkin5):
        assert label_spec("b(2)", lipkin5) == {"shape": "line", "schedule": "poly", "k": 2}
        assert label_spec("D", two_level)["shape"] == "arc"
        assert label_spec("D", lipkin5)["shape"] == "geodesic"
        with pytest.raises(ValueError):
            label_spec("E", lipkin5)

    def test_protocol_c_flat_speed(self, lipkin5):
        proto = build_protocol(lipkin5, "C", (0.0, 0.0), (1.2, 0.4))
        speed = manifold_speed(lipkin5, proto, np.linspace(0, 1, 401))
        assert speed.max() / speed.min() < 1 + 1e-5

    def test_protocol_d_two_level(self, two_level):
        proto = build_protocol(two_level, "D", (-0.5, 1.0), (0.5, 1.0))
        assert proto.label == "D"
        assert np.allclose(proto.point(1.0), [0.5, 1.0])

    def test_arc_needs_symmetric_endpoints(self, two_level):
        with pytest.raises(ValueError):
            build_protocol(two_level, {"shape": "arc"}, (-0.5, 1.0), (0.6, 1.0))

    def test_schedule_must_fix_endpoints(self):
        class Shifted(PolynomialSchedule):
            def value(self, tau):
                return 0.5 + 0.5 * np.asarray(tau)
        with pytest.raises(DimensionError):
            assemble_protocol(line_shape((0, 0), (1, 1)), Shifted(0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 4), st.floats(-2, 2), st.floats(-2, 2))
    def test_velocity_matches_difference(self, k, x1, z1):
        proto = assemble_protocol(line_shape((0.1, 0.2), (x1, z1)), polynomial_schedule(k))
        tau = np.linspace(0.1, 0.9, 9)
        h = 1e-6
        fd = (proto.point(tau + h) - proto.point(tau - h)) / (2 * h)
        assert np.allclose(proto.velocity(tau), fd, atol=1e-6)
        assert np.allclose(proto.point(0.0), [0.1, 0.2])
        assert np.allclose(proto.point(1.0), [x1, z1])

    def test_constant_speed_schedule_two_level_line(self, two_level):
        line = line_shape((-0.5, 1.0), (0.5, 1.0))
        sched = constant_speed_schedule(two_level, line)
        tau = np.linspace(0, 1, 201)
        x = line.point(sched.value(tau))[:, 0]
        r2 = x ** 2 + 1.0
        # ds/dtau is proportional to r^2 along the two-level line
        ratio = sched.d1(tau) / r2
        assert np.allclose(ratio, ratio[0], rtol=1e-6)

    def test_constant_speed_schedule_arc_is_linear(self, two_level):
        sched = constant_speed_schedule(two_level, arc_shape(0.5, 1.0))
        tau = np.linspace(0, 1, 101)
        assert np.allclose(sched.value(tau), tau, atol=1e-10)

    def test_tabulated_inverse(self, lipkin5):
        sched = constant_speed_schedule(lipkin5, line_shape((0, 0), (1.2, 0.4)))
        tau = np.linspace(0, 1, 57)
        assert np.allclose(sched.inverse(sched.value(tau)), tau, atol=1e-12)
        assert np.all(np.diff(sched.value(tau)) > 0)

    def test_config_roundtrip(self, lipkin5):
        proto = build_protocol(lipkin5, "B2", (0.0, 0.0), (1.2, 0.4))
        assert proto.config() == {"label": "B2", "shape": "line", "start": [0.0, 0.0],
                                  "end": [1.2, 0.4], "schedule": "poly", "k": 2}
