"""Adiabatic perturbation theory in powers of ``1/T``.

Conventions: ``M_nm = <E_n| d/dtau E_m>``, ``Delta_nm = E_n - E_m``,
``phi_n = T omega_n - gamma_n`` with ``omega_n = int E_n`` and
``gamma_n = i int M_nn``. The final-time coefficients used here have the
two-term structure ``b_n = A_n exp(i phi_n0(1)) + B_n``: ``A_n`` comes from
the end of the path and ``B_n`` from its start. The envelope replaces the
interference factor by its constructive extreme, ``(|A_n| + |B_n|)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, ProtocolConditionError, QuadratureError, TrackingError
from .models import HamiltonianModel, align_phases, eigensystem, track_spectrum

PHASE_ATOL = 1e-10


@dataclass(frozen=True)
class CouplingMatrix:
    """``M_nm`` at one scaled time together with the driving velocity."""

    tau: float
    M: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class PhaseRecord:
    """Dynamical and geometric phases accumulated up to ``tau``."""

    tau: float
    T: float
    omega: np.ndarray
    gamma: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.T * self.omega - self.gamma

    def difference(self, n: int, m: int) -> float:
        return float(self.phi[n] - self.phi[m])


def _offdiagonal_coupling(model, energies, vectors, velocities, points):
    """``-Lambda_dot . <E_n|dH|E_m> / Delta_nm`` with zero diagonal, batched over points."""
    grads = np.einsum("nkm,kij->nmij", model.coefficient_jacobian(points), model.terms)
    dh = np.einsum("nm,nmij->nij", velocities, grads)
    elems = np.einsum("nia,nij,njb->nab", np.conj(vectors), dh, vectors)
    gaps = energies[:, :, None] - energies[:, None, :]
    d = energies.shape[1]
    off = ~np.eye(d, dtype=bool)
    out = np.zeros_like(elems)
    out[:, off] = -elems[:, off] / gaps[:, off]
    return out


def tracked_path(model: HamiltonianModel, protocol, taus=None, n_initial: int = 512,
                 max_points: int = 1 << 17):
    """Eigen-decompose along the protocol with continuous eigenvector phases.

    Without explicit ``taus`` the uniform grid is doubled until tracking is
    unambiguous. Returns ``(taus, energies, vectors)``.
    """
    if taus is not None:
        taus = np.asarray(taus, dtype=float)
        energies, vectors = track_spectrum(model, protocol.point(taus))
        return taus, energies, vectors
    n = n_initial
    while True:
        grid = np.linspace(0.0, 1.0, n + 1)
        try:
            energies, vectors = track_spectrum(model, protocol.point(grid))
            return grid, energies, vectors
        except TrackingError:
            n *= 2
            if n > max_points:
                raise


def coupling_field(model: HamiltonianModel, protocol, taus=None):
    """``M`` (off-diagonal) and energies along the protocol in the continuity gauge.

    Returns ``(taus, energies, M)`` with ``M`` of shape ``(n, d, d)``.
    """
    taus, energies, vectors = tracked_path(model, protocol, taus)
    points = protocol.point(taus)
    M = _offdiagonal_coupling(model, energies, vectors, protocol.velocity(taus), points)
    return taus, energies, M


def coupling_matrix(model: HamiltonianModel, protocol, tau: float, snapshot=None,
                    delta: float = 1e-5) -> CouplingMatrix:
    """Coupling matrix at one scaled time.

    Off-diagonal elements use the gradient formula. Diagonal elements come
    from eigenvector differencing with neighbours aligned to the centre
    snapshot; they vanish for real Hamiltonians in this gauge.
    """
    tau = float(tau)
    point = protocol.point(tau)
    snap = snapshot or eigensystem(model, point)
    vel = protocol.velocity(np.array([tau]))
    M = _offdiagonal_coupling(model, snap.energies[None], snap.vectors[None], vel,
                              point[None])[0].astype(complex)
    lo, hi = max(0.0, tau - delta), min(1.0, tau + delta)
    if hi > lo:
        plus = align_phases(snap, eigensystem(model, protocol.point(hi)))
        minus = align_phases(snap, eigensystem(model, protocol.point(lo)))
        diff = (np.einsum("in,in->n", np.conj(snap.vectors), plus.vectors)
                - np.einsum("in,in->n", np.conj(snap.vectors), minus.vectors)) / (hi - lo)
        M[np.diag_indices_from(M)] = 1j * diff.imag
    return CouplingMatrix(tau, M, vel[0])


def _diag_geometric_rate(model, protocol, tau, delta=1e-5):
    """``Im M_nn`` by differencing in the local continuity gauge."""
    snap = eigensystem(model, protocol.point(tau))
    lo, hi = max(0.0, tau - delta), min(1.0, tau + delta)
    plus = align_phases(snap, eigensystem(model, protocol.point(hi)))
    minus = align_phases(snap, eigensystem(model, protocol.point(lo)))
    diff = (np.einsum("in,in->n", np.conj(snap.vectors), plus.vectors)
            - np.einsum("in,in->n", np.conj(snap.vectors), minus.vectors)) / (hi - lo)
    return diff.imag


def adaptive_gauss(func, edges, atol: float = PHASE_ATOL, max_rounds: int = 40):
    """Vectorized adaptive Gauss-Legendre quadrature over consecutive pieces.

    ``func`` maps an array of tau values ``(n,)`` to ``(n, K)``. Each piece
    is integrated with 10 and 20 nodes; pieces whose difference exceeds their
    share of ``atol`` are bisected. Returns the 20-node total ``(K,)``.
    """
    x10, w10 = np.polynomial.legendre.leggauss(10)
    x20, w20 = np.polynomial.legendre.leggauss(20)
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    span = edges[-1] - edges[0]
    total = 0.0
    for _ in range(max_rounds):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        pts = np.concatenate([(mid[:, None] + half[:, None] * x20).ravel(),
                              (mid[:, None] + half[:, None] * x10).ravel()])
        vals = np.asarray(func(pts), dtype=float)
        vals = vals.reshape(pts.size, -1)
        n20 = a.size * 20
        v20 = vals[:n20].reshape(a.size, 20, -1)
        v10 = vals[n20:].reshape(a.size, 10, -1)
        i20 = half[:, None] * np.einsum("j,njk->nk", w20, v20)
        i10 = half[:, None] * np.einsum("j,njk->nk", w10, v10)
        err = np.max(np.abs(i20 - i10), axis=1)
        ok = err <= atol * (b - a) / span
        total = total + np.sum(i20[ok], axis=0)
        if np.all(ok):
            return total
        a, b = a[~ok], b[~ok]
        m = 0.5 * (a + b)
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
    raise QuadratureError(f"adaptive quadrature did not reach {atol:.1e} "
                          f"({a.size} unresolved pieces)")


def _phase_edges(protocol, tau, width=1.0 / 64):
    bp = protocol.breakpoints()
    bp = bp[(bp > 0) & (bp < tau)]
    return np.unique(np.concatenate([[0.0], bp, np.arange(1, int(np.ceil(tau / width))) * width,
                                     [tau]]).clip(0.0, tau))


def _energies_along(model, protocol):
    def func(t):
        ham = np.einsum("nk,kij->nij", model.coefficients(protocol.point(t)), model.terms)
        return np.linalg.eigvalsh(ham)
    return func


def phases(model: HamiltonianModel, protocol, T: float, tau: float = 1.0,
           geometric: bool | None = None) -> PhaseRecord:
    """Phases ``omega_n(tau)`` and ``gamma_n(tau)``.

    ``omega`` uses adaptive quadrature to 1e-10 absolute. For real
    Hamiltonians the continuity gauge makes ``M_nn = 0`` and ``gamma = 0``
    exactly; ``geometric=True`` integrates the differenced ``Im M_nn`` anyway.
    """
    d = model.dimension
    if tau <= 0.0:
        return PhaseRecord(0.0, float(T), np.zeros(d), np.zeros(d))
    edges = _phase_edges(protocol, tau)
    omega = adaptive_gauss(_energies_along(model, protocol), edges)
    if geometric is None:
        geometric = np.iscomplexobj(model.terms)
    if geometric:
        # gamma_n = i int M_nn = -int Im M_nn
        rate = lambda t: np.array([_diag_geometric_rate(model, protocol, ti) for ti in t])
        gamma = -adaptive_gauss(rate, np.linspace(0.0, tau, 17), atol=1e-8)
    else:
        gamma = np.zeros(d)
    return PhaseRecord(float(tau), float(T), omega, gamma)


@dataclass
class AptPrediction:
    """Leading non-vanishing APT order at the end of a protocol.

    ``b_n(T) = end_terms[n] * exp(i (T omega[n] - gamma[n])) + start_terms[n]``
    for ``n = 1 .. d-1`` and ``I_APT(T) = sum |b_n|^2 / T^(2 order)``.
    """

    order: int
    label: str
    end_terms: np.ndarray
    start_terms: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    b0: complex = 0j
    metadata: dict = field(default_factory=dict)

    def coefficients(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        phase = np.exp(1j * (T[..., None] * self.omega - self.gamma))
        return self.end_terms * phase + self.start_terms

    @property
    def envelope_coefficient(self) -> float:
        return float(np.sum((np.abs(self.end_terms) + np.abs(self.start_terms)) ** 2))

    @property
    def envelope_slope(self) -> float:
        return -2.0 * self.order

    @property
    def envelope_intercept(self) -> float:
        """``log10`` of the envelope's absolute term."""
        return float(np.log10(self.envelope_coefficient)) if self.envelope_coefficient > 0 else -np.inf

    def infidelity(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        b = self.coefficients(T)
        return np.sum(np.abs(b) ** 2, axis=-1) / T ** (2 * self.order)

    def envelope(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        return self.envelope_coefficient / T ** (2 * self.order)

    def series_terms(self, T) -> dict:
        """Coefficients ``I^(p)`` of ``I = sum_p I^(p) / T^p`` known at this order.

        Order 1 gives ``I^(2)``; order 2 gives ``I^(2) = I^(3) = 0`` and ``I^(4)``.
        ``I^(3)`` of a generic protocol needs ``b^(2)`` and is reported as None.
        """
        s = float(np.sum(np.abs(self.coefficients(T)) ** 2))
        if self.order == 1:
            return {2: s, 3: None}
        return {2: 0.0, 3: 0.0, 4: s}

    def table(self, T_grid) -> np.ndarray:
        """Columns ``T, I_APT, I_APT_max, order``."""
        T_grid = np.asarray(T_grid, dtype=float)
        return np.column_stack([T_grid, self.infidelity(T_grid), self.envelope(T_grid),
                                np.full(T_grid.size, self.order)])


def _endpoint_data(model, protocol):
    taus, energies, vectors = tracked_path(model, protocol)
    ends = np.array([0, -1])
    points = protocol.point(taus[ends])
    M = _offdiagonal_coupling(model, energies[ends], vectors[ends],
                              protocol.velocity(taus[ends]), points)
    return taus, energies, vectors, M


def _b0_first_order(model, protocol):
    """``i sum_m int |M_m0|^2 / Delta_m0`` (gauge independent) by adaptive quadrature."""
    def func(t):
        pts = protocol.point(t)
        ham = np.einsum("nk,kij->nij", model.coefficients(pts), model.terms)
        energies, vectors = np.linalg.eigh(ham)
        M = _offdiagonal_coupling(model, energies, vectors, protocol.velocity(t), pts)
        gaps = energies[:, 1:] - energies[:, :1]
        return np.sum(np.abs(M[:, 1:, 0]) ** 2 / gaps, axis=1)[:, None]
    return 1j * float(adaptive_gauss(func, _phase_edges(protocol, 1.0))[0])


def first_order_prediction(model: HamiltonianModel, protocol) -> AptPrediction:
    """First-order end and start terms ``i M_n0/Delta_n0`` at ``tau = 1`` and ``0``."""
    taus, energies, vectors, M = _endpoint_data(model, protocol)
    gaps_end = energies[-1, 1:] - energies[-1, 0]
    gaps_start = energies[0, 1:] - energies[0, 0]
    end = 1j * M[1, 1:, 0] / gaps_end
    start = -1j * M[0, 1:, 0] / gaps_start
    rec = phases(model, protocol, 1.0)
    b0 = _b0_first_order(model, protocol)
    return AptPrediction(1, protocol.label, end, start, rec.omega[1:] - rec.omega[0],
                         rec.gamma[1:] - rec.gamma[0], b0,
                         {"grid_points": int(taus.size)})


def first_order_coefficients(model: HamiltonianModel, protocol, T: float) -> np.ndarray:
    """``b_n^(1)(1)`` for ``n = 0 .. d-1`` (index 0 is the purely imaginary ground term)."""
    pred = first_order_prediction(model, protocol)
    return np.concatenate([[pred.b0], pred.coefficients(T)])


def coupling_over_gap_rate(model: HamiltonianModel, protocol, tau: float, vectors=None,
                           method: str = "analytic", step: float = 1e-3) -> np.ndarray:
    """``d/dtau (M_n0 / Delta_n0)`` at an endpoint, for ``n = 1 .. d-1``.

    ``analytic`` needs zero speed at ``tau``: then
    ``d/dtau (M_n0/Delta_n0) = -Lambda_ddot . <E_n|dH|E_0> / Delta_n0^2``.
    ``difference`` uses one-sided fourth-order differences with Richardson
    step halving on a locally tracked grid.
    """
    point = protocol.point(tau)
    if method == "analytic":
        vel = protocol.velocity(np.array([tau]))[0]
        if np.any(np.abs(vel) > 1e-12 * max(1.0, np.max(np.abs(point)))):
            raise ProtocolConditionError("analytic endpoint rate needs zero speed")
        snap = eigensystem(model, point)
        vec = snap.vectors if vectors is None else vectors
        acc = protocol.acceleration(np.array([tau]))[0]
        dh = np.tensordot(acc, model.gradients(point), axes=1)
        elem = np.conj(vec[:, 1:]).T @ dh @ vec[:, 0]
        gaps = snap.energies[1:] - snap.energies[0]
        return -elem / gaps ** 2
    if method != "difference":
        raise ValueError("method must be 'analytic' or 'difference'")
    if tau not in (0.0, 1.0):
        raise ValueError("differencing is implemented at the endpoints only")
    sign = 1.0 if tau == 0.0 else -1.0
    weights = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
    ref = eigensystem(model, point).vectors if vectors is None else vectors

    def rate(h):
        # walk away from the endpoint on a fine grid so the gauge stays continuous
        fine = tau + sign * h * np.linspace(0.0, 4.0, 33)
        _, energies, vecs = tracked_path(model, protocol, fine)
        M = _offdiagonal_coupling(model, energies, vecs, protocol.velocity(fine),
                                  protocol.point(fine))
        c = np.einsum("in,in->n", np.conj(ref), vecs[0])
        c = c / np.abs(c)
        ratio = M[::8, 1:, 0] / (energies[::8, 1:] - energies[::8, :1])
        ratio = ratio * c[1:] * np.conj(c[0])
        return sign * (weights @ ratio) / h

    r1, r2 = rate(step), rate(step / 2)
    return (16.0 * r2 - r1) / 15.0


def second_order_prediction(model: HamiltonianModel, protocol) -> AptPrediction:
    """Second-order end and start terms for protocols with zero endpoint speed."""
    if not protocol.speed_zero:
        raise ProtocolConditionError(
            f"protocol {protocol.label} has nonzero endpoint speed; the second-order "
            "final-time formula needs dLambda/dtau = 0 at both ends")
    taus, energies, vectors = tracked_path(model, protocol)
    r_end = coupling_over_gap_rate(model, protocol, 1.0, vectors[-1])
    r_start = coupling_over_gap_rate(model, protocol, 0.0, vectors[0])
    gaps_end = energies[-1, 1:] - energies[-1, 0]
    gaps_start = energies[0, 1:] - energies[0, 0]
    rec = phases(model, protocol, 1.0)
    return AptPrediction(2, protocol.label, -r_end / gaps_end, r_start / gaps_start,
                         rec.omega[1:] - rec.omega[0], rec.gamma[1:] - rec.gamma[0], 0j,
                         {"grid_points": int(taus.size)})


def second_order_final(model: HamiltonianModel, protocol, T: float) -> np.ndarray:
    """``b_n^(2)(1)`` for ``n = 1 .. d-1``."""
    return second_order_prediction(model, protocol).coefficients(T)


def apt_prediction(model: HamiltonianModel, protocol, order: int | None = None) -> AptPrediction:
    """Leading-order prediction: second order for zero-speed endpoints, else first."""
    if order is None:
        order = 2 if protocol.speed_zero else 1
    if order == 1:
        return first_order_prediction(model, protocol)
    if order == 2:
        return second_order_prediction(model, protocol)
    raise ValueError("only orders 1 and 2 have closed final-time forms")


def infidelity_series(prediction: AptPrediction, T) -> np.ndarray:
    """Leading APT infidelity ``sum_n |b_n^(p)(1)|^2 / T^(2p)``."""
    if prediction is None:
        raise ValueError("no APT coefficients available")
    return prediction.infidelity(T)


def recursion_step(M: np.ndarray, energies: np.ndarray, b: np.ndarray, taus: np.ndarray,
                   b_dot: np.ndarray | None = None, gap_tol: float = 1e-12) -> np.ndarray:
    """One order of the APT recurrence for the off-diagonal ``b_nm``.

    ``b^(p+1)_nm = (i / Delta_nm) [b_dot^(p)_nm + (M_nn - M_mm) b^(p)_nm
    + sum_{k != n} M_nk b^(p)_km]`` on a tau grid. ``M`` and ``b`` have
    shape ``(n_tau, d, d)``, ``energies`` ``(n_tau, d)``. The diagonal of the
    result is left at zero. ``b_dot`` defaults to second-order differences.
    """
    M = np.asarray(M)
    b = np.asarray(b, dtype=complex)
    if b_dot is None:
        b_dot = np.gradient(b, taus, axis=0, edge_order=2) if len(taus) > 2 else np.zeros_like(b)
    d = b.shape[1]
    gaps = energies[:, :, None] - energies[:, None, :]
    off = ~np.eye(d, dtype=bool)
    if np.any(np.abs(gaps[:, off]) < gap_tol):
        raise DegeneracyError("energy difference below tolerance in the APT recurrence")
    diag = np.einsum("tnn->tn", M)
    m_off = M * off[None]
    rhs = b_dot + (diag[:, :, None] - diag[:, None, :]) * b + np.einsum("tnk,tkm->tnm", m_off, b)
    out = np.zeros_like(b)
    out[:, off] = 1j * rhs[:, off] / gaps[:, off]
    return out
