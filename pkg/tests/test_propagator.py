"""Time evolution, infidelity diagnostics and sweeps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdrive import _kernels
from qdrive.models import LipkinModel, eigensystem
from qdrive.protocols import build_protocol
from qdrive.propagator import (
    PreparedProtocol,
    energy_moments,
    evolve,
    infidelity_minima,
    instantaneous_infidelity,
    sweep_final_infidelity,
    two_level_coupling,
    two_level_reduced_ode,
)


@pytest.fixture(scope="module")
def arc_d(two_level):
    return build_protocol(two_level, "D", (-0.5, 1.0), (0.5, 1.0))


@pytest.fixture(scope="module")
def line_a(two_level):
    return build_protocol(two_level, "A", (-0.5, 1.0), (0.5, 1.0))


def rabi_infidelity(T, tau, x0=0.5, z0=1.0):
    """Arc with linear schedule: constant gap 2 r0 and constant coupling."""
    m10 = np.arctan(z0 / x0) - np.pi / 2
    half_gap = T * np.hypot(x0, z0)
    omega = np.hypot(half_gap, m10)
    return (m10 / omega) ** 2 * np.sin(omega * tau) ** 2


class TestDiagnostics:

    def test_eigenstates(self, lipkin5):
        snap = eigensystem(lipkin5, (0.7, 0.2))
        assert instantaneous_infidelity(snap.vectors[:, 0], snap) == pytest.approx(0.0, abs=1e-15)
        assert instantaneous_infidelity(snap.vectors[:, 1], snap) == pytest.approx(1.0, abs=1e-15)
        assert energy_moments(snap.vectors[:, 2], lipkin5, (0.7, 0.2))[1] == pytest.approx(0.0, abs=1e-12)

    def test_equal_superposition(self, two_level):
        snap = eigensystem(two_level, (0.3, 0.4))
        psi = (snap.vectors[:, 0] + snap.vectors[:, 1]) / np.sqrt(2)
        assert instantaneous_infidelity(psi, snap) == pytest.approx(0.5, abs=1e-15)
        # F = I = 1/2 and a gap of 1 give V = 1/4
        assert energy_moments(psi, two_level, (0.3, 0.4))[1] == pytest.approx(0.25, abs=1e-15)

    def test_variance_identity_unit_gap(self, two_level):
        snap = eigensystem(two_level, (0.0, 1.0))
        psi = (snap.vectors[:, 0] + 1j * snap.vectors[:, 1]) / np.sqrt(2)
        assert energy_moments(psi, two_level, (0.0, 1.0))[1] == pytest.approx(1.0, abs=1e-15)

    def test_variance_identity_random(self, two_level, rng):
        pts = rng.uniform(-2, 2, size=(10_000, 2))
        states = rng.normal(size=(10_000, 2)) + 1j * rng.normal(size=(10_000, 2))
        worst = 0.0
        for point, psi in zip(pts, states):
            psi = psi / np.linalg.norm(psi)
            snap = eigensystem(two_level, point)
            infid = instantaneous_infidelity(psi, snap)
            var = energy_moments(psi, two_level, point)[1]
            worst = max(worst, abs(var - (1 - infid) * infid * snap.gap(1, 0) ** 2))
        assert worst < 1e-12


class TestEvolution:

    def test_static_protocol(self, lipkin5):
        proto = build_protocol(lipkin5, "A", (0.6, 0.2), (0.6, 0.2))
        for T in (0.5, 50.0):
            assert PreparedProtocol(lipkin5, proto).final_infidelity(T) == pytest.approx(0.0, abs=1e-14)

    def test_sudden_limit(self):
        model = LipkinModel(6)
        proto = build_protocol(model, "A", (0.0, 0.0), (0.3, 0.1))
        overlap = np.vdot(eigensystem(model, (0.0, 0.0)).ground, eigensystem(model, (0.3, 0.1)).ground)
        sudden = 1 - abs(overlap) ** 2
        assert PreparedProtocol(model, proto).final_infidelity(1e-4) == pytest.approx(sudden, rel=1e-5)

    def test_landau_zener_regime(self, two_level):
        proto = build_protocol(two_level, "A", (-1.0, 0.1), (1.0, 0.1))
        prep = PreparedProtocol(two_level, proto)
        for T in (50.0, 100.0):
            lz = -np.pi * 0.01 * T / 2
            assert np.log(prep.final_infidelity(T)) == pytest.approx(lz, rel=0.05)

    def test_invariants(self, lipkin5):
        proto = build_protocol(lipkin5, "B1", (0.0, 0.0), (1.2, 0.4))
        res = evolve(lipkin5, proto, 40.0, n_samples=400)
        assert res.norm_drift < 1e-9
        assert np.all((res.infidelity >= 0) & (res.infidelity <= 1))
        assert np.array_equal(res.infidelity + res.fidelity, np.ones(400))
        assert res.table().shape == (400, 5)
        assert res.final_infidelity == pytest.approx(
            PreparedProtocol(lipkin5, proto).final_infidelity(40.0), rel=1e-8)

    def test_reduced_matches_full(self, two_level, line_a):
        full = evolve(two_level, line_a, 100.0, tol=1e-12)
        reduced = two_level_reduced_ode(two_level, line_a, 100.0)
        assert abs(full.final_infidelity - reduced.final_infidelity) < 1e-8
        assert np.max(np.abs(full.infidelity - reduced.infidelity)) < 1e-8

    def test_arc_closed_form(self, two_level, arc_d):
        for T in (3.0, 30.0):
            res = evolve(two_level, arc_d, T, tol=1e-12)
            assert np.max(np.abs(res.infidelity - rabi_infidelity(T, res.tau))) < 1e-10

    def test_arc_exact_zeros(self, two_level, arc_d):
        T = 30.0
        taus, values = infidelity_minima(two_level, arc_d, T)
        omega = np.hypot(T * np.sqrt(1.25), np.arctan(2.0) - np.pi / 2)
        assert len(taus) == int(omega / np.pi)
        assert np.max(values) < 1e-10
        assert np.allclose(taus, np.arange(1, len(taus) + 1) * np.pi / omega, atol=1e-8)

    def test_real_model_coupling(self, two_level, line_a):
        # constant gap: real Hamiltonian, diagonal couplings vanish, relative phase in {0, pi}
        gap, m10 = two_level_coupling(line_a, np.linspace(0, 1, 11))
        x = np.linspace(-0.5, 0.5, 11)
        assert np.allclose(gap, 2 * np.hypot(x, 1.0))
        assert np.allclose(np.abs(m10), 1.0 * 1.0 / (2 * (x * x + 1)))

    def test_invalid_time(self, lipkin5):
        proto = build_protocol(lipkin5, "A", (0.0, 0.0), (1.2, 0.4))
        with pytest.raises(ValueError):
            PreparedProtocol(lipkin5, proto).final_infidelity(0.0)
        with pytest.raises(ValueError):
            evolve(lipkin5, proto, 10.0, n_samples=1)

    @pytest.mark.skipif("cython" not in _kernels.available_backends(), reason="compiled kernel missing")
    def test_backends_agree(self, lipkin5):
        proto = build_protocol(lipkin5, "C", (0.0, 0.0), (1.2, 0.4))
        prep = PreparedProtocol(lipkin5, proto)
        stops = np.linspace(0.1, 1.0, 10)
        a, sa = prep.run(60.0, stops, backend="cython")
        b, sb = prep.run(60.0, stops, backend="python")
        assert np.max(np.abs(a - b)) < 1e-12
        assert sa["n_steps"] == sb["n_steps"]

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            _kernels.get_propagate("fortran")

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.1, 1.5), st.floats(-0.6, 0.6), st.floats(0.5, 200.0))
    def test_lipkin_chi_mirror(self, lam, chi, T):
        model = LipkinModel(4)
        plus = build_protocol(model, "A", (0.0, 0.0), (lam, chi))
        minus = build_protocol(model, "A", (0.0, 0.0), (lam, -chi))
        ip = PreparedProtocol(model, plus).final_infidelity(T)
        im = PreparedProtocol(model, minus).final_infidelity(T)
        assert abs(ip - im) < 1e-9

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.5, 300.0))
    def test_unitarity(self, x0, z0, T):
        from qdrive.models import TwoLevelModel
        model = TwoLevelModel()
        proto = build_protocol(model, "B2", (-x0, z0), (x0, z0))
        assert evolve(model, proto, T, n_samples=50).norm_drift < 1e-9


class TestSweep:

    def test_worker_independence(self, lipkin5):
        protos = [build_protocol(lipkin5, k, (0.0, 0.0), (1.2, 0.4)) for k in ("A", "B1")]
        grid = np.geomspace(1, 100, 9)
        one = sweep_final_infidelity(lipkin5, protos, grid, workers=1)
        two = sweep_final_infidelity(lipkin5, protos, grid, workers=2)
        assert np.array_equal(one.infidelity, two.infidelity)
        assert one.labels == ["A", "B1"] and not one.failures
        assert np.array_equal(one.column("B1"), one.table()[:, 2])

    @pytest.mark.parametrize("grid", [[], [1.0, 1.0], [0.0, 1.0], [3.0, 2.0]])
    def test_grid_validation(self, lipkin5, grid):
        proto = build_protocol(lipkin5, "A", (0.0, 0.0), (1.2, 0.4))
        with pytest.raises(ValueError):
            sweep_final_infidelity(lipkin5, [proto], grid)

    def test_empty_protocols(self, lipkin5):
        with pytest.raises(ValueError):
            sweep_final_infidelity(lipkin5, [], [1.0])
