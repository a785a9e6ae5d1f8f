"""Ground-state manifold geometry.

The metric is the real part of the ground-state quantum geometric tensor,

    g_mu,nu = Re sum_{n>0} <E0|d_mu H|En><En|d_nu H|E0> / (En - E0)^2,

so ``g_mu,nu dL^mu dL^nu`` is the infidelity of a small sudden quench.
All field evaluations are batched through stacked ``eigh`` calls.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .curves import Curve, MeshCurve
from .errors import (DegeneracyError, GeodesicError, QuadratureError,
                     SingularMetricError)
from .models import DEGENERACY_RTOL, HamiltonianModel, TwoLevelModel, as_point
from .schedules import TabulatedSchedule

CONDITION_LIMIT = 1e12
GEODESIC_MIN_GAP = 1e-8


def ground_data(model: HamiltonianModel, points):
    """Batched ground-state data at points ``(n, D)``.

    Returns ``(gaps, weighted)`` where ``gaps`` has shape ``(n, d-1)`` with
    ``E_k - E_0`` and ``weighted[n, mu, k] = <E_k|d_mu H|E_0> / (E_k - E_0)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    terms = model.terms
    coeffs = model.coefficients(points)
    ham = np.einsum("nk,kij->nij", coeffs, terms)
    energies, vectors = np.linalg.eigh(ham)
    gaps = energies[:, 1:] - energies[:, :1]
    scale = np.max(np.abs(energies), axis=1)
    if np.any(gaps[:, 0] <= DEGENERACY_RTOL * scale):
        bad = int(np.argmin(gaps[:, 0] / np.maximum(scale, 1e-300)))
        raise DegeneracyError(f"ground state degenerate at {points[bad]}")
    jac = model.coefficient_jacobian(points)
    grads = np.einsum("nkm,kij->nmij", jac, terms)
    ground = vectors[:, :, 0]
    applied = np.matmul(grads, ground[:, None, :, None])[..., 0]
    elements = np.matmul(applied, np.conj(vectors[:, :, 1:]))
    return gaps, elements / gaps[:, None, :]


def metric_field(model: HamiltonianModel, points) -> np.ndarray:
    """Metric tensors at points ``(n, D)``, returned as ``(n, D, D)``."""
    _, w = ground_data(model, points)
    g = np.einsum("nma,nva->nmv", np.conj(w), w).real
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def metric_tensor(model: HamiltonianModel, point) -> np.ndarray:
    """Metric tensor ``g_mu,nu`` (D x D) at a single point."""
    point = as_point(point, model.param_dim)
    return metric_field(model, point[None])[0]


def ground_gap(model: HamiltonianModel, points) -> np.ndarray:
    """Gap ``E_1 - E_0`` at points ``(n, D)`` without degeneracy checks."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ham = np.einsum("nk,kij->nij", model.coefficients(points), model.terms)
    e = np.linalg.eigvalsh(ham)
    return e[:, 1] - e[:, 0]


def speed_density(model: HamiltonianModel, curve: Curve, s) -> np.ndarray:
    """Line element ``dl/ds = sqrt(g(C(s)) C'(s) C'(s))`` along a curve."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    pts = curve.point(s)
    vel = curve.d1(s)
    if not np.any(vel):
        return np.zeros(s.shape)
    g = metric_field(model, pts)
    q = np.einsum("nm,nmv,nv->n", vel, g, vel)
    return np.sqrt(np.maximum(q, 0.0))


def path_length(model: HamiltonianModel, curve: Curve, s: float = 1.0, rtol: float = 1e-8) -> float:
    """Length ``l(s)`` of the curve up to parameter ``s`` under the ground-state metric."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("curve parameter must lie in [0, 1]")
    if s == 0.0:
        return 0.0
    pieces = curve.breakpoints()
    pieces = np.unique(np.concatenate([pieces[(pieces > 0) & (pieces < s)], [0.0, s]]))
    if pieces.size > 40:
        # dense meshes: integrate cell groups separately
        pieces = np.unique(np.concatenate([pieces[::max(1, pieces.size // 40)], [s]]))
    total = 0.0
    f = lambda u: float(speed_density(model, curve, u)[0])
    for a, b in zip(pieces[:-1], pieces[1:]):
        val, err, info = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=500,
                                        full_output=1)[:3]
        if not np.isfinite(val) or err > max(10 * rtol * abs(val), 1e-14):
            raise QuadratureError(f"length quadrature did not converge on [{a}, {b}]: "
                                  f"value {val}, error {err}")
        total += val
    return total


def manifold_speed(model: HamiltonianModel, protocol, tau) -> np.ndarray:
    """Instantaneous manifold speed ``sqrt(g_mu,nu dL^mu/dtau dL^nu/dtau)``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    vel = protocol.velocity(tau)
    out = np.zeros(tau.shape)
    moving = np.any(vel != 0.0, axis=-1)
    if np.any(moving):
        g = metric_field(model, protocol.point(tau[moving]))
        q = np.einsum("nm,nmv,nv->n", vel[moving], g, vel[moving])
        out[moving] = np.sqrt(np.maximum(q, 0.0))
    return out


def _fd_step(points):
    return 1e-5 * np.maximum(1.0, np.linalg.norm(points, axis=-1))


def metric_derivatives(model: HamiltonianModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Metric and its first derivatives at points ``(n, D)``.

    Central differences at steps ``h`` and ``h/2`` combined by Richardson
    extrapolation. Returns ``(g, dg)`` with ``dg[n, rho, mu, nu] = d_rho g_mu,nu``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = points.shape
    h = _fd_step(points)
    eye = np.eye(dim)
    offsets = []
    for scale in (1.0, 0.5):
        for sign in (1.0, -1.0):
            offsets.append(sign * scale * h[:, None, None] * eye[None])
    shifted = np.concatenate([points[:, None, :] + off for off in offsets], axis=1)
    stack = np.concatenate([points, shifted.reshape(-1, dim)])
    g_all = metric_field(model, stack)
    g0 = g_all[:n]
    gs = g_all[n:].reshape(n, 4 * dim, dim, dim)
    plus_h, minus_h = gs[:, :dim], gs[:, dim:2 * dim]
    plus_h2, minus_h2 = gs[:, 2 * dim:3 * dim], gs[:, 3 * dim:]
    d_h = (plus_h - minus_h) / (2 * h[:, None, None, None])
    d_h2 = (plus_h2 - minus_h2) / (h[:, None, None, None])
    return g0, (4.0 * d_h2 - d_h) / 3.0


def _christoffel_from(g, dg):
    cond = np.linalg.cond(g)
    if np.any(~np.isfinite(cond)) or np.any(cond > CONDITION_LIMIT):
        raise SingularMetricError(f"metric condition number {np.max(cond):.3e} exceeds "
                                  f"{CONDITION_LIMIT:.0e}")
    ginv = np.linalg.inv(g)
    # lowered symbols [xi, nu, rho] = d_rho g_xi,nu + d_nu g_xi,rho - d_xi g_nu,rho
    first = np.einsum("nrxv->nxvr", dg)
    lowered = first + np.swapaxes(first, 2, 3) - dg
    gamma = 0.5 * np.einsum("nmx,nxvr->nmvr", ginv, lowered)
    return 0.5 * (gamma + np.swapaxes(gamma, 2, 3))


def christoffel_field(model: HamiltonianModel, points) -> np.ndarray:
    """Christoffel symbols ``Gamma[n, mu, nu, rho]`` at points ``(n, D)``."""
    if isinstance(model, TwoLevelModel):
        raise SingularMetricError("the two-level metric has rank one everywhere")
    g, dg = metric_derivatives(model, points)
    return _christoffel_from(g, dg)


def christoffel(model: HamiltonianModel, point) -> np.ndarray:
    """Christoffel symbols of the second kind ``Gamma^mu_nu,rho`` at a point."""
    point = as_point(point, model.param_dim)
    return christoffel_field(model, point[None])[0]


class GeodesicCurve(MeshCurve):
    """Converged geodesic mesh with ODE residuals, Newton iterations and node gaps."""

    kind = "geodesic"

    def __init__(self, s_nodes, nodes, residuals, iterations, gap_nodes):
        super().__init__(s_nodes, nodes)
        self.residuals = np.asarray(residuals, dtype=float)
        self.iterations = int(iterations)
        self.gap_nodes = np.asarray(gap_nodes, dtype=float)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0

    def length(self, model, rtol=1e-8) -> float:
        return path_length(model, self, 1.0, rtol)

    def node_speeds(self, model) -> np.ndarray:
        """``dl/ds`` at the mesh nodes from the spline tangent."""
        return speed_density(model, self, self.s_nodes)

    def cumulative_length(self, model) -> np.ndarray:
        """Length ``l(s_i)`` at the nodes (composite Gauss-Legendre per cell)."""
        x, w = np.polynomial.legendre.leggauss(6)
        a, b = self.s_nodes[:-1], self.s_nodes[1:]
        s = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x[None]
        dens = speed_density(model, self, s.ravel()).reshape(s.shape)
        cells = 0.5 * (b - a) * (dens @ w)
        return np.concatenate([[0.0], np.cumsum(cells)])

    def speed_uniformity(self, model) -> float:
        """Relative spread ``stdev(dl/ds) / mean(dl/ds)`` over the nodes."""
        v = self.node_speeds(model)
        return float(np.std(v) / np.mean(v)) if np.mean(v) > 0 else 0.0

    def table(self, model) -> np.ndarray:
        """Columns ``s, Lambda^1..Lambda^D, l(s), gap`` for export."""
        return np.column_stack([self.s_nodes, self.nodes, self.cumulative_length(model),
                                self.gap_nodes])

    def config(self):
        return {"shape": "geodesic", "start": self.nodes[0].tolist(),
                "end": self.nodes[-1].tolist(), "mesh_size": int(self.s_nodes.size)}


def _fd_weights(offsets, order):
    """Finite-difference weights for derivative ``order`` on integer ``offsets`` (unit spacing)."""
    offsets = np.asarray(offsets, dtype=float)
    k = offsets.size
    vander = offsets[None, :] ** np.arange(k)[:, None]
    rhs = np.zeros(k)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def stencil_matrices(mesh_size: int, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative matrices at interior nodes, shape ``(M-2, M)``.

    ``order = 2`` gives the three-point central formulas. ``order = 4`` uses
    five-point central stencils and six-point off-centre stencils next to the
    boundary. Unit spacing; divide by ``h`` and ``h**2``.
    """
    if order not in (2, 4):
        raise ValueError("stencil order must be 2 or 4")
    m = mesh_size - 2
    d1 = np.zeros((m, mesh_size))
    d2 = np.zeros((m, mesh_size))
    half = order // 2
    for row, i in enumerate(range(1, mesh_size - 1)):
        if order == 2 or half <= i <= mesh_size - 1 - half:
            off1 = off2 = np.arange(-half, half + 1)
        else:
            width = order + 2
            lo = 0 if i < half else mesh_size - width
            off2 = np.arange(lo, lo + width) - i
            off1 = off2[:-1] if i < half else off2[1:]
        d1[row, i + off1] = _fd_weights(off1, 1)
        d2[row, i + off2] = _fd_weights(off2, 2)
    return d1, d2


def geodesic_bvp(model: HamiltonianModel, start, end, mesh_size: int = 201, tol: float = 1e-7,
                 max_iter: int = 60, order: int = 4) -> GeodesicCurve:
    """Solve ``L'' + Gamma(L', L') = 0`` with Dirichlet endpoints by damped Newton.

    Finite-difference collocation on a uniform mesh of ``mesh_size`` nodes
    with a straight-line initial guess. ``order`` selects second- or
    fourth-order stencils. The Jacobian is exact in the stencil terms; the
    Christoffel derivatives come from central differences of ``Gamma``.
    Residuals reported on the result are those of the discrete equations.
    """
    if isinstance(model, TwoLevelModel):
        raise SingularMetricError("geodesics of the two-level model are not unique "
                                  "(rank-one metric); use the line or arc shapes")
    start = as_point(start, model.param_dim)
    end = as_point(end, model.param_dim)
    if mesh_size < 7:
        raise ValueError("mesh_size must be at least 7")
    s = np.linspace(0.0, 1.0, mesh_size)
    full = start + np.outer(s, end - start)
    dim = start.size
    if np.array_equal(start, end):
        gaps = ground_gap(model, full)
        return GeodesicCurve(s, full, np.zeros((mesh_size - 2, dim)), 0, gaps)
    h = s[1] - s[0]
    m = mesh_size - 2
    eye = np.eye(dim)
    d1, d2 = stencil_matrices(mesh_size, order)
    d1 /= h
    d2 /= h * h

    def check_gap(points):
        gaps = ground_gap(model, points)
        if np.min(gaps) < GEODESIC_MIN_GAP:
            i = int(np.argmin(gaps))
            raise GeodesicError(f"mesh node {points[i]} has gap {gaps[i]:.2e} below "
                                f"{GEODESIC_MIN_GAP:.0e}; near-diabolic attraction")
        return gaps

    def residual(points):
        vel = d1 @ points
        gamma = christoffel_field(model, points[1:-1])
        return d2 @ points + np.einsum("nmvr,nv,nr->nm", gamma, vel, vel), vel, gamma

    def newton(full, patience=None):
        check_gap(full)
        damped = 0
        res, vel, gamma = residual(full)
        norm = float(np.sqrt(np.mean(res ** 2)))
        for it in range(1, max_iter + 1):
            interior = full[1:-1]
            step = 1e-4 * np.maximum(1.0, np.linalg.norm(interior, axis=1))
            shifted = np.concatenate([interior + sgn * step[:, None] * eye[k]
                                      for k in range(dim) for sgn in (1.0, -1.0)])
            gam_s = christoffel_field(model, shifted).reshape(dim, 2, m, dim, dim, dim)
            dgamma = np.stack([(gam_s[k, 0] - gam_s[k, 1]) / (2 * step[:, None, None, None])
                               for k in range(dim)], axis=-1)
            # dR_i/dX_j = D2_ij I + 2 Gamma_i(v_i, .) D1_ij + delta_ij dGamma_i(v_i, v_i)
            gv = 2.0 * np.einsum("nmvr,nv->nmr", gamma, vel)
            local = np.einsum("nmvrk,nv,nr->nmk", dgamma, vel, vel)
            a2, a1 = d2[:, 1:-1], d1[:, 1:-1]
            jac = (np.einsum("ij,mr->imjr", a2, eye)
                   + np.einsum("imr,ij->imjr", gv, a1))
            idx = np.arange(m)
            jac[idx, :, idx, :] += local
            delta = np.linalg.solve(jac.reshape(m * dim, m * dim),
                                    -res.ravel()).reshape(m, dim)
            lam = 1.0
            while True:
                trial = full.copy()
                trial[1:-1] += lam * delta
                try:
                    check_gap(trial)
                    t_res, t_vel, t_gamma = residual(trial)
                    t_norm = float(np.sqrt(np.mean(t_res ** 2)))
                except (SingularMetricError, DegeneracyError, GeodesicError):
                    t_norm = np.inf
                if t_norm < (1 - 1e-4 * lam) * norm or (t_norm <= norm and lam < 1e-3):
                    break
                lam *= 0.5
                if lam < 1e-6:
                    break
            if lam < 1e-6:
                # no descent left: accept only at the finite-difference noise floor
                if norm < tol:
                    return full, res, it
                raise GeodesicError(f"damped Newton stalled at rms residual {norm:.3e} "
                                    f"after {it} iterations")
            full, res, vel, gamma, norm = trial, t_res, t_vel, t_gamma, t_norm
            damped = damped + 1 if lam < 0.25 else 0
            if patience is not None and damped >= patience:
                raise GeodesicError(f"damped Newton making slow progress at rms residual "
                                    f"{norm:.3e} after {it} iterations")
            if norm < tol and lam * np.max(np.abs(delta)) < 1e-8:
                return full, res, it
        raise GeodesicError(f"geodesic solver did not converge: rms residual {norm:.3e} "
                            f"after {max_iter} iterations")

    try:
        # heavily damped steps mean the straight line is a poor guess
        full, res, iterations = newton(full, patience=5)
    except GeodesicError as exc:
        if "below" in str(exc):
            raise
        full, res, iterations = _continuation(newton, start, end, s, full, exc)
    gaps = check_gap(full)
    return GeodesicCurve(s, full, res, iterations, gaps)


def _continuation(newton, start, end, s, guess, failure, min_step=1.0 / 64):
    """Walk the far endpoint from ``start`` to ``end``, reusing each solution.

    The previous geodesic, shifted by the endpoint increment linearly in
    ``s``, seeds the next solve. Steps halve on failure.
    """
    done, step = 0.0, 0.25
    current = start + np.outer(s, 0.0 * (end - start))
    total = 0
    while done < 1.0:
        target = min(1.0, done + step)
        seed = current + np.outer(s, (target - done) * (end - start))
        try:
            current, res, its = newton(seed)
        except GeodesicError as exc:
            if "below" in str(exc):
                raise
            step *= 0.5
            if step < min_step:
                raise GeodesicError(f"continuation failed at fraction {done:.3f}: {exc}; "
                                    f"direct solve: {failure}") from exc
            continue
        total += its
        done = target
        step = min(2.0 * step, 0.5)
    return current, res, total


def constant_speed_schedule(model: HamiltonianModel, curve: Curve, n_grid: int = 2001,
                            n_gauss: int = 8) -> TabulatedSchedule:
    """Schedule with constant manifold speed along ``curve``.

    Solves ``A(s) = A(1) tau`` with ``A(s) = integral of dl/ds``. ``A`` is
    tabulated on a uniform ``n_grid`` mesh by composite Gauss-Legendre
    quadrature and interpolated by Hermite cubics with the exact density as
    node slopes.
    """
    s = np.linspace(0.0, 1.0, n_grid)
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    a, b = s[:-1], s[1:]
    nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x[None]
    dens_q = speed_density(model, curve, nodes.ravel()).reshape(nodes.shape)
    cells = 0.5 * (b - a) * (dens_q @ w)
    cumulative = np.concatenate([[0.0], np.cumsum(cells)])
    density = speed_density(model, curve, s)
    if not np.all(np.isfinite(cumulative)) or cumulative[-1] <= 0:
        raise QuadratureError("constant-speed schedule needs a curve of positive finite length")
    if np.any(cells <= 0):
        raise QuadratureError("manifold speed vanishes on part of the curve")
    return TabulatedSchedule(s, cumulative, density, kind="const-speed")
