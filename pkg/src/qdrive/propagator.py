"""Exact driven dynamics ``i d/dtau |psi> = T H(Lambda(tau)) |psi>``.

Integration runs in the fixed model basis. Before integrating, every
protocol is reduced to scalar coefficient functions ``c_k(tau)`` that are
fitted by piecewise Chebyshev series; the kernels then only evaluate short
polynomials per stage. The identity part of each term is removed before
integration and its phase restored exactly afterwards.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb_mod
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from . import _kernels
from .errors import DegeneracyError, IntegrationError
from .models import DEGENERACY_RTOL, HamiltonianModel, TwoLevelModel, eigensystem

DEFAULT_RTOL = 1e-10
DEFAULT_SAMPLES = 2000
MAX_PHASE_STEP = 0.1
MAX_STEPS = 50_000_000
# below this the embedded error estimate is dominated by round-off
MIN_RTOL = 1e-14


def _refine(breaks: np.ndarray, max_width: float) -> np.ndarray:
    out = [breaks[:1]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / max_width - 1e-12)))
        out.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(out)


def _chebyshev_nodes(degree: int) -> np.ndarray:
    j = np.arange(degree + 1)
    return np.cos(np.pi * (j + 0.5) / (degree + 1))


def fit_pieces(func, breaks: np.ndarray, degree: int) -> np.ndarray:
    """Chebyshev interpolants of a vector function on every piece.

    ``func`` maps tau values ``(n,)`` to ``(n, K)``. Returns coefficients
    of shape ``(m, K, degree + 1)`` for ``m = len(breaks) - 1`` pieces.
    """
    p1 = degree + 1
    u = _chebyshev_nodes(degree)
    a, b = breaks[:-1], breaks[1:]
    taus = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * u[None]
    values = np.asarray(func(taus.ravel()))
    values = values.reshape(taus.shape + values.shape[1:])
    j = np.arange(p1)
    basis = np.cos(np.pi * np.outer(np.arange(p1), j + 0.5) / p1)
    coef = (2.0 / p1) * np.einsum("nj,mjk->mkn", basis, values)
    coef[:, :, 0] *= 0.5
    return coef


def evaluate_pieces(coef: np.ndarray, breaks: np.ndarray, tau) -> np.ndarray:
    """Evaluate piecewise Chebyshev series at ``tau``; returns ``(n, K)``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    idx = np.clip(np.searchsorted(breaks, tau, side="right") - 1, 0, breaks.size - 2)
    a, b = breaks[idx], breaks[idx + 1]
    u = (2.0 * tau - a - b) / (b - a)
    c = coef[idx]
    b1 = np.zeros(c.shape[:2])
    b2 = np.zeros(c.shape[:2])
    for n in range(c.shape[2] - 1, 0, -1):
        b1, b2 = 2.0 * u[:, None] * b1 - b2 + c[:, :, n], b1
    return c[:, :, 0] + u[:, None] * b1 - b2


class PreparedProtocol:
    """Propagation data for one ``(model, protocol)`` pair, reusable for every ``T``.

    Parameters
    ----------
    model, protocol
        The Hamiltonian family and the driving path.
    degree : int
        Chebyshev degree per piece.
    max_width : float
        Largest piece width in scaled time; pieces also align with the
        protocol's own breakpoints.
    max_phase : float
        Ceiling on the phase advance per step, ``T * rho * h <= max_phase``
        with ``rho`` the spectral radius of the traceless Hamiltonian.
    """

    def __init__(self, model: HamiltonianModel, protocol, degree: int = 12,
                 max_width: float = 1.0 / 64, max_phase: float = MAX_PHASE_STEP):
        self.model = model
        self.protocol = protocol
        self.degree = degree
        self.max_phase = max_phase
        self.breaks = _refine(protocol.breakpoints(), max_width)
        coeff_fn = lambda t: model.coefficients(protocol.point(t))
        self.cheb = fit_pieces(coeff_fn, self.breaks, degree)
        # fit quality at points between the interpolation nodes
        a, b = self.breaks[:-1], self.breaks[1:]
        check = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None]
                 * np.array([-0.999, -0.61, 0.0, 0.37, 0.93])[None]).ravel()
        exact = coeff_fn(check)
        self.fit_error = float(np.max(np.abs(evaluate_pieces(self.cheb, self.breaks, check) - exact)))
        d = model.dimension
        self.traces = np.trace(model.terms, axis1=1, axis2=2) / d
        self.terms = model.terms - self.traces[:, None, None] * np.eye(d)[None]
        trace_coef = np.einsum("mkn,k->mn", self.cheb, self.traces)
        self._trace_int = np.array([cheb_mod.chebint(c, lbnd=-1.0) for c in trace_coef])
        half = 0.5 * (b - a)
        ends = np.array([cheb_mod.chebval(1.0, c) for c in self._trace_int]) * half
        self._trace_cum = np.concatenate([[0.0], np.cumsum(ends)])
        grid = np.concatenate([self.breaks, 0.5 * (a + b)])
        ham = np.einsum("nk,kij->nij", coeff_fn(grid), self.terms)
        self.spectral_radius = float(np.max(np.abs(np.linalg.eigvalsh(ham)))) * 1.05
        start = eigensystem(model, protocol.point(0.0), levels=[0])
        self.initial_state = start.ground.astype(complex)
        end_h = model.hamiltonian(protocol.point(1.0))
        self.final_energies, self.final_vectors = np.linalg.eigh(end_h)

    def trace_integral(self, tau) -> np.ndarray:
        """``integral_0^tau sum_k c_k(t) tr(H_k)/d dt`` (phase removed from the kernel)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        idx = np.clip(np.searchsorted(self.breaks, tau, side="right") - 1, 0, self.breaks.size - 2)
        a, b = self.breaks[idx], self.breaks[idx + 1]
        u = (2.0 * tau - a - b) / (b - a)
        part = np.array([cheb_mod.chebval(ui, self._trace_int[i]) for ui, i in zip(u, idx)])
        return self._trace_cum[idx] + 0.5 * (b - a) * part

    def step_ceiling(self, T: float) -> float:
        if self.spectral_radius * T <= 0:
            return 0.125
        return min(0.125, self.max_phase / (T * self.spectral_radius))

    def run(self, T: float, stops, rtol: float = DEFAULT_RTOL, atol: float | None = None,
            backend: str | None = None):
        """Integrate to each time in ``stops`` (sorted, in (0, 1]); returns states and stats."""
        if not T > 0:
            raise ValueError("total time T must be positive")
        if not rtol >= MIN_RTOL:
            raise IntegrationError(f"relative tolerance {rtol:g} is below the attainable "
                                   f"{MIN_RTOL:g}")
        stops = np.asarray(stops, dtype=float)
        if atol is None:
            atol = 1e-3 * rtol
        kernel = _kernels.get_propagate(backend)
        states, n_steps, n_rej, n_eval, status = kernel(
            self.initial_state, self.terms, self.breaks, self.cheb, float(T), float(rtol),
            float(atol), self.step_ceiling(T), stops, MAX_STEPS)
        if status == _kernels.STATUS_MAX_STEPS:
            raise IntegrationError(f"step limit {MAX_STEPS} reached at T={T}")
        if status == _kernels.STATUS_UNDERFLOW:
            raise IntegrationError(f"step size underflow at T={T}")
        states = states * np.exp(-1j * T * self.trace_integral(stops))[:, None]
        return states, {"n_steps": int(n_steps), "n_rejected": int(n_rej),
                        "n_evals": int(n_eval), "rtol": float(rtol), "atol": float(atol)}

    def final_infidelity(self, T: float, rtol: float = DEFAULT_RTOL, atol: float | None = None,
                         backend: str | None = None) -> float:
        states, _ = self.run(T, [1.0], rtol, atol, backend)
        amps = self.final_vectors.T @ states[0]
        w = np.abs(amps) ** 2
        return float(np.sum(w[1:]) / np.sum(w))


@dataclass
class EvolutionResult:
    """Trajectory diagnostics of one driven run."""

    label: str
    T: float
    tau: np.ndarray
    infidelity: np.ndarray
    energy_mean: np.ndarray
    energy_variance: np.ndarray
    final_state: np.ndarray
    norm_drift: float
    stats: dict = field(default_factory=dict)
    basis: str = "model"
    states: np.ndarray | None = None

    @property
    def fidelity(self) -> np.ndarray:
        return 1.0 - self.infidelity

    @property
    def final_infidelity(self) -> float:
        return float(self.infidelity[-1])

    def table(self) -> np.ndarray:
        """Columns ``tau, I, F, E_mean, E_var``."""
        return np.column_stack([self.tau, self.infidelity, self.fidelity,
                                self.energy_mean, self.energy_variance])


def instantaneous_infidelity(state, snapshot) -> float:
    """``1 - |<E0|psi>|^2`` for a normalized state, computed as the excited weight."""
    state = np.asarray(state, dtype=complex)
    amps = np.conj(snapshot.vectors).T @ state
    w = np.abs(amps) ** 2
    return float(np.sum(w[1:]) / np.sum(w))


def energy_moments(state, model: HamiltonianModel, point) -> tuple[float, float]:
    """Mean and variance of ``H(point)`` in ``state``."""
    state = np.asarray(state, dtype=complex)
    state = state / np.linalg.norm(state)
    ham = model.hamiltonian(point)
    h_psi = ham @ state
    mean = float(np.real(np.vdot(state, h_psi)))
    resid = h_psi - mean * state
    return mean, float(np.real(np.vdot(resid, resid)))


def _spectral_samples(model, points):
    ham = np.einsum("nk,kij->nij", model.coefficients(points), model.terms)
    energies, vectors = np.linalg.eigh(ham)
    scale = np.max(np.abs(energies), axis=1)
    if np.any(energies[:, 1] - energies[:, 0] <= DEGENERACY_RTOL * scale):
        raise DegeneracyError("ground state degenerate on the sampled path")
    return energies, vectors


def evolve(model: HamiltonianModel, protocol, T: float, tol: float = DEFAULT_RTOL,
           n_samples: int = DEFAULT_SAMPLES, prepared: PreparedProtocol | None = None,
           backend: str | None = None, keep_states: bool = False) -> EvolutionResult:
    """Propagate the initial ground state and sample ``I(tau)`` on a uniform grid.

    The infidelity is the weight outside the instantaneous ground state,
    ``sum_{n>0} |<E_n|psi>|^2 / ||psi||^2``, so ``I + F = 1`` holds exactly.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    prep = prepared or PreparedProtocol(model, protocol)
    tau = np.linspace(0.0, 1.0, n_samples)
    states, stats = prep.run(T, tau[1:], tol, backend=backend)
    states = np.vstack([prep.initial_state[None], states])
    energies, vectors = _spectral_samples(model, protocol.point(tau))
    amps = np.einsum("nij,ni->nj", np.conj(vectors), states)
    w = np.abs(amps) ** 2
    norm2 = np.sum(w, axis=1)
    infid = np.sum(w[:, 1:], axis=1) / norm2
    mean = np.sum(w * energies, axis=1) / norm2
    var = np.sum(w * (energies - mean[:, None]) ** 2, axis=1) / norm2
    stats["backend"] = backend or _kernels.BACKEND
    stats["fit_error"] = prep.fit_error
    return EvolutionResult(protocol.label, float(T), tau, infid, mean, var, states[-1],
                           float(np.max(np.abs(np.sqrt(norm2) - 1.0))), stats,
                           states=states if keep_states else None)


def infidelity_minima(model: HamiltonianModel, protocol, T: float, tol: float = DEFAULT_RTOL,
                      n_samples: int = DEFAULT_SAMPLES, prepared: PreparedProtocol | None = None,
                      backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Interior local minima of ``I(tau)`` refined below the sampling grid.

    Minima bracketed on a uniform grid are polished by bounded Brent
    minimization; each evaluation propagates from ``tau = 0``. Returns
    ``(tau_min, I_min)``.
    """
    prep = prepared or PreparedProtocol(model, protocol)
    result = evolve(model, protocol, T, tol, n_samples, prep, backend)
    I = result.infidelity
    idx = np.nonzero((I[1:-1] <= I[:-2]) & (I[1:-1] < I[2:]))[0] + 1

    def at(tau):
        state = prep.run(T, [tau], tol, backend=backend)[0][0]
        return instantaneous_infidelity(state, eigensystem(model, protocol.point(tau)))

    taus, values = [], []
    for i in idx:
        res = minimize_scalar(at, bounds=(result.tau[i - 1], result.tau[i + 1]), method="bounded",
                              options={"xatol": 1e-13})
        best = (res.x, res.fun) if res.fun < I[i] else (result.tau[i], I[i])
        taus.append(float(best[0]))
        values.append(float(best[1]))
    return np.array(taus), np.array(values)


@dataclass
class SweepResult:
    """Final infidelities on a ``(protocol, T)`` grid; failed cells hold NaN."""

    T: np.ndarray
    labels: list
    infidelity: np.ndarray
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, label: str) -> np.ndarray:
        return self.infidelity[self.labels.index(label)]

    def table(self) -> np.ndarray:
        return np.column_stack([self.T, self.infidelity.T])


def _sweep_task(args):
    model, protocol, T_values, tol, backend = args
    prep = PreparedProtocol(model, protocol)
    out = np.full(len(T_values), np.nan)
    errors = []
    for i, T in enumerate(T_values):
        try:
            out[i] = prep.final_infidelity(T, tol, backend=backend)
        except (IntegrationError, DegeneracyError) as exc:
            errors.append((i, str(exc)))
    return out, errors


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def sweep_final_infidelity(model: HamiltonianModel, protocols, T_grid, tol: float = DEFAULT_RTOL,
                           workers: int | None = None, backend: str | None = None) -> SweepResult:
    """Final infidelity for every protocol on a strictly increasing ``T`` grid.

    Cells are farmed out in contiguous chunks and merged by index, so the
    result does not depend on the worker count. Integrator failures are
    recorded per cell in ``failures`` and leave NaN in the table.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.size == 0 or not protocols:
        raise ValueError("sweep needs a non-empty T grid and protocol list")
    if np.any(np.diff(T_grid) <= 0) or T_grid[0] <= 0:
        raise ValueError("T grid must be positive and strictly increasing")
    protocols = list(protocols)
    workers = default_workers() if workers is None else max(1, int(workers))
    n_chunks = max(1, min(T_grid.size, int(np.ceil(workers / len(protocols)))))
    chunks = np.array_split(np.arange(T_grid.size), n_chunks)
    tasks, index = [], []
    for p, proto in enumerate(protocols):
        for ch in chunks:
            tasks.append((model, proto, T_grid[ch], tol, backend))
            index.append((p, ch))
    if workers == 1 or len(tasks) == 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    table = np.full((len(protocols), T_grid.size), np.nan)
    failures = []
    for (p, ch), (vals, errs) in zip(index, results):
        table[p, ch] = vals
        for i, msg in errs:
            failures.append({"protocol": protocols[p].label, "T": float(T_grid[ch][i]),
                             "error": msg})
    meta = {"model": model.config(), "tol": tol, "backend": backend or _kernels.BACKEND,
            "protocols": [pr.config() for pr in protocols]}
    return SweepResult(T_grid, [pr.label for pr in protocols], table, failures, meta)


def two_level_coupling(protocol, tau):
    """Closed-form gap and coupling along a two-level protocol.

    With ``x = r cos(alpha)``, ``z = r sin(alpha)`` and the continuous gauge
    ``|E0> = (-sin(theta/2), cos(theta/2))``, ``theta = pi/2 - alpha``, the
    gap is ``2r`` and ``M10 = <E1|d/dtau E0> = alpha_dot / 2`` is real.
    """
    tau = np.asarray(tau, dtype=float)
    p = protocol.point(tau)
    v = protocol.velocity(tau)
    x, z = p[..., 0], p[..., 1]
    r2 = x * x + z * z
    alpha_dot = (x * v[..., 1] - z * v[..., 0]) / r2
    return 2.0 * np.sqrt(r2), 0.5 * alpha_dot


def two_level_reduced_ode(model: TwoLevelModel, protocol, T: float, tol: float = 1e-12,
                          n_samples: int = DEFAULT_SAMPLES, switch: float = 1e-8) -> EvolutionResult:
    """Integrate the two-level dynamics in the adiabatic basis.

    Uses the infidelity/relative-phase pair ``(I, phi)`` with

        dI/dtau   = -2 M10 sqrt(F I) cos(phi)
        dphi/dtau = -T Delta + M10 sin(phi) (F - I) / sqrt(F I)

    and falls back to the amplitude equations whenever ``I < switch`` or
    ``I > 1 - switch``, where the phase equation is singular.
    """
    if model.dimension != 2:
        raise ValueError("reduced ODE is defined for the two-level model only")

    def amp_rhs(t, y):
        gap, m10 = two_level_coupling(protocol, t)
        half = 0.5 * T * gap
        return np.array([1j * half * y[0] + m10 * y[1], -1j * half * y[1] - m10 * y[0]])

    def phase_rhs(t, y):
        gap, m10 = two_level_coupling(protocol, t)
        inf, phi = y
        inf = min(max(inf, 0.0), 1.0)
        f = 1.0 - inf
        root = max(np.sqrt(f * inf), 1e-300)
        return np.array([-2.0 * m10 * root * np.cos(phi),
                         -T * gap + m10 * np.sin(phi) * (f - inf) / root])

    def leave_amp(t, y):
        inf = abs(y[1]) ** 2
        return min(inf - 2 * switch, 1 - 2 * switch - inf)

    leave_amp.terminal = True
    leave_amp.direction = 1

    def leave_phase(t, y):
        return min(y[0] - switch, 1 - switch - y[0])

    leave_phase.terminal = True
    leave_phase.direction = -1

    tau = np.linspace(0.0, 1.0, n_samples)
    infid = np.empty(n_samples)
    t0, mode = 0.0, "amp"
    y = np.array([1.0 + 0j, 0j])
    filled = 0
    n_switch = 0
    n_evals = 0
    while t0 < 1.0:
        if mode == "amp":
            sol = solve_ivp(amp_rhs, (t0, 1.0), y, method="DOP853", rtol=tol, atol=tol * 1e-3,
                            events=leave_amp, dense_output=True)
        else:
            sol = solve_ivp(phase_rhs, (t0, 1.0), y, method="DOP853", rtol=tol, atol=tol * 1e-3,
                            events=leave_phase, dense_output=True)
        if sol.status < 0:
            raise IntegrationError(f"reduced ODE failed: {sol.message}")
        n_evals += sol.nfev
        t1 = sol.t[-1]
        sel = (tau >= t0) & (tau <= t1)
        sel[:filled] = False
        if np.any(sel):
            vals = sol.sol(tau[sel])
            infid[sel] = np.abs(vals[1]) ** 2 if mode == "amp" else np.clip(vals[0].real, 0, 1)
            filled = int(np.nonzero(sel)[0][-1]) + 1
        y_end = sol.y[:, -1]
        if t1 >= 1.0:
            break
        n_switch += 1
        if mode == "amp":
            a0, a1 = y_end
            norm = abs(a0) ** 2 + abs(a1) ** 2
            y = np.array([abs(a1) ** 2 / norm, np.angle(a1 * np.conj(a0))])
            mode = "phase"
        else:
            inf, phi = float(np.real(y_end[0])), float(np.real(y_end[1]))
            y = np.array([np.sqrt(1 - inf) + 0j, np.sqrt(inf) * np.exp(1j * phi)])
            mode = "amp"
        t0 = t1
    if mode == "amp":
        final_state = y_end.astype(complex)
        infid[-1] = abs(final_state[1]) ** 2 / np.sum(np.abs(final_state) ** 2)
    else:
        inf, phi = float(np.real(y_end[0])), float(np.real(y_end[1]))
        final_state = np.array([np.sqrt(1 - inf), np.sqrt(inf) * np.exp(1j * phi)])
        infid[-1] = inf
    gap, _ = two_level_coupling(protocol, tau)
    # E = -/+ r: mean and variance in the eigenbasis
    r = 0.5 * gap
    mean = r * (2 * infid - 1)
    var = infid * (1 - infid) * gap ** 2
    stats = {"n_evals": int(n_evals), "n_switches": n_switch, "rtol": tol}
    return EvolutionResult(protocol.label, float(T), tau, infid, mean, var, final_state, 0.0,
                           stats, basis="adiabatic")
