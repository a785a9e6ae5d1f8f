"""Parametric Hamiltonian families and their instantaneous spectra.

Both families implemented here are polynomial in their control parameters,
so every model is stored as a fixed set of real symmetric matrices ``H_k``
together with scalar coefficient functions ``c_k(Lambda)``::

    H(Lambda) = sum_k c_k(Lambda) H_k

The propagator kernels rely on this decomposition: along a protocol only the
scalar coefficients change with time.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegeneracyError, DimensionError, TrackingError

DEGENERACY_RTOL = 1e-12
TRACKING_MIN_OVERLAP = 0.5


def as_point(values, dim: int | None = None) -> np.ndarray:
    """Validate a control-parameter point and return it as a float array."""
    point = np.atleast_1d(np.asarray(values, dtype=float))
    if point.ndim != 1 or point.size < 1:
        raise DimensionError(f"parameter point must be a non-empty vector, got shape {point.shape}")
    if dim is not None and point.size != dim:
        raise DimensionError(f"expected {dim} parameters, got {point.size}")
    if not np.all(np.isfinite(point)):
        raise DimensionError(f"parameter point has non-finite components: {point}")
    return point


class HamiltonianModel(abc.ABC):
    """A Hamiltonian ``H(Lambda) = sum_k c_k(Lambda) H_k`` with real symmetric terms."""

    name: str = "model"
    param_names: tuple[str, ...] = ()

    def __init__(self, terms: np.ndarray):
        terms = np.asarray(terms, dtype=float)
        if terms.ndim != 3 or terms.shape[1] != terms.shape[2]:
            raise ValueError("terms must have shape (K, d, d)")
        if not np.array_equal(terms, terms.transpose(0, 2, 1)):
            raise ValueError("Hamiltonian terms must be exactly symmetric")
        self._terms = terms
        self._terms.setflags(write=False)

    @property
    def terms(self) -> np.ndarray:
        return self._terms

    @property
    def dimension(self) -> int:
        return self._terms.shape[1]

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    @property
    def n_terms(self) -> int:
        return self._terms.shape[0]

    @abc.abstractmethod
    def coefficients(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape ``(..., D)`` to term coefficients ``(..., K)``."""

    @abc.abstractmethod
    def coefficient_jacobian(self, points: np.ndarray) -> np.ndarray:
        """Derivatives ``d c_k / d Lambda^mu`` with shape ``(..., K, D)``."""

    def hamiltonian(self, point) -> np.ndarray:
        point = as_point(point, self.param_dim)
        return np.tensordot(self.coefficients(point), self._terms, axes=1)

    def gradient(self, point, mu: int) -> np.ndarray:
        point = as_point(point, self.param_dim)
        if not 0 <= mu < self.param_dim:
            raise DimensionError(f"parameter index {mu} out of range for D={self.param_dim}")
        return np.tensordot(self.coefficient_jacobian(point)[:, mu], self._terms, axes=1)

    def gradients(self, point) -> np.ndarray:
        """All parameter derivatives of H stacked as ``(D, d, d)``."""
        point = as_point(point, self.param_dim)
        jac = self.coefficient_jacobian(point)
        return np.einsum("km,kij->mij", jac, self._terms)

    def config(self) -> dict:
        return {"name": self.name}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items() if k != "name")
        return f"{type(self).__name__}({args})"


PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


class TwoLevelModel(HamiltonianModel):
    """Single qubit ``H = x sigma_x + z sigma_z`` with one diabolic point at the origin."""

    name = "two-level"
    param_names = ("x", "z")

    def __init__(self):
        super().__init__(np.stack([PAULI_X, PAULI_Z]))

    def coefficients(self, points):
        return np.asarray(points, dtype=float).copy()

    def coefficient_jacobian(self, points):
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(np.eye(2), points.shape[:-1] + (2, 2)).copy()


def quasispin_operators(n_qubits: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(J_x, J_y, J_z)`` in the ``j = N/2`` multiplet, basis ``m = -j .. j``."""
    if n_qubits < 1:
        raise ValueError("need at least one qubit")
    j = n_qubits / 2
    m = np.arange(-j, j + 1)
    # <m+1| J_+ |m> = sqrt(j(j+1) - m(m+1))
    up = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    j_plus = np.diag(up, -1)
    jx = 0.5 * (j_plus + j_plus.T)
    jy = -0.5j * (j_plus - j_plus.T)
    jz = np.diag(m)
    return jx, jy, jz


class LipkinModel(HamiltonianModel):
    """Fully connected N-qubit model in the symmetric quasispin sector.

    ``H = J_z - (1/N) [lam J_x^2 + chi {J_x, n} + chi^2 n^2]`` with
    ``n = J_z + N/2``. Parity ``(-1)^n`` is conserved only at ``chi = 0``.
    """

    name = "lipkin"
    param_names = ("lambda", "chi")

    def __init__(self, n_qubits: int):
        n_qubits = int(n_qubits)
        if n_qubits < 1:
            raise ValueError("LipkinModel needs N >= 1")
        self.n_qubits = n_qubits
        jx, _, jz = quasispin_operators(n_qubits)
        n_op = jz + 0.5 * n_qubits * np.eye(n_qubits + 1)
        inv_n = 1.0 / n_qubits
        terms = np.stack([
            jz,
            -inv_n * (jx @ jx),
            -inv_n * (jx @ n_op + n_op @ jx),
            -inv_n * (n_op @ n_op),
        ])
        # symmetrize away round-off from the matrix products
        terms = 0.5 * (terms + terms.transpose(0, 2, 1))
        super().__init__(terms)

    def coefficients(self, points):
        points = np.asarray(points, dtype=float)
        lam, chi = points[..., 0], points[..., 1]
        return np.stack([np.ones_like(lam), lam, chi, chi * chi], axis=-1)

    def coefficient_jacobian(self, points):
        points = np.asarray(points, dtype=float)
        lam, chi = points[..., 0], points[..., 1]
        zero, one = np.zeros_like(lam), np.ones_like(lam)
        rows = [
            np.stack([zero, zero], -1),
            np.stack([one, zero], -1),
            np.stack([zero, one], -1),
            np.stack([zero, 2.0 * chi], -1),
        ]
        return np.stack(rows, axis=-2)

    def parity(self) -> np.ndarray:
        n = np.arange(self.dimension)
        return np.diag((-1.0) ** n)

    def config(self) -> dict:
        return {"name": self.name, "N": self.n_qubits}


def model_from_config(spec: dict) -> HamiltonianModel:
    """Build a model from ``{"name": "two-level"}`` or ``{"name": "lipkin", "N": 10}``."""
    name = spec.get("name")
    if name == "two-level":
        return TwoLevelModel()
    if name == "lipkin":
        if "N" not in spec:
            raise ValueError("lipkin model needs N")
        return LipkinModel(int(spec["N"]))
    raise ValueError(f"unknown model {name!r}")


@dataclass(frozen=True)
class SpectralSnapshot:
    """Ordered eigenvalues and eigenvectors (columns) of ``H`` at one point."""

    point: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray

    @property
    def dimension(self) -> int:
        return self.energies.size

    def gap(self, n: int, m: int) -> float:
        return float(self.energies[n] - self.energies[m])

    @property
    def ground(self) -> np.ndarray:
        return self.vectors[:, 0]


def build_hamiltonian(model: HamiltonianModel, point) -> np.ndarray:
    return model.hamiltonian(point)


def hamiltonian_gradient(model: HamiltonianModel, point, mu: int) -> np.ndarray:
    return model.gradient(point, mu)


def _fix_gauge(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    lead = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.conj(lead) / np.abs(lead))


def eigensystem(model: HamiltonianModel, point, levels: Sequence[int] | None = None) -> SpectralSnapshot:
    """Diagonalize ``H(point)``.

    Each eigenvector is gauged so its largest-magnitude component is real and
    positive. A gap below ``1e-12 * ||H||`` raises :class:`DegeneracyError`;
    ``levels`` restricts that check to gaps adjacent to the listed levels.
    """
    point = as_point(point, model.param_dim)
    ham = model.hamiltonian(point)
    energies, vectors = np.linalg.eigh(ham)
    gaps = np.diff(energies)
    if levels is not None:
        keep = set()
        for n in levels:
            if n > 0:
                keep.add(n - 1)
            if n < len(gaps):
                keep.add(n)
        gaps = gaps[sorted(keep)]
    scale = np.max(np.abs(energies)) if energies.size else 0.0
    if gaps.size and np.min(gaps) <= DEGENERACY_RTOL * scale:
        raise DegeneracyError(
            f"degenerate spectrum at {point}: min gap {np.min(gaps):.3e}, ||H|| = {scale:.3e}"
        )
    return SpectralSnapshot(point, energies, _fix_gauge(vectors))


def align_phases(previous: SpectralSnapshot, current: SpectralSnapshot,
                 levels: Sequence[int] | None = None) -> SpectralSnapshot:
    """Re-phase ``current`` so that every overlap with ``previous`` is real positive.

    Only ``levels`` are checked and re-phased when given; the others keep the
    reference gauge.
    """
    if previous.dimension != current.dimension:
        raise DimensionError("snapshots have different dimensions")
    idx = np.arange(current.dimension) if levels is None else np.asarray(levels, dtype=int)
    overlaps = np.einsum("in,in->n", np.conj(previous.vectors[:, idx]), current.vectors[:, idx])
    mags = np.abs(overlaps)
    if np.any(mags <= TRACKING_MIN_OVERLAP):
        bad = idx[mags <= TRACKING_MIN_OVERLAP]
        raise TrackingError(
            f"ambiguous eigenvector continuation for levels {bad.tolist()} "
            f"(min overlap {mags.min():.3f}); refine the path step"
        )
    vectors = current.vectors.copy()
    vectors[:, idx] = vectors[:, idx] * (np.conj(overlaps) / mags)
    return SpectralSnapshot(current.point, current.energies, vectors)


def track_spectrum(model: HamiltonianModel, points: np.ndarray,
                   levels: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose along a sequence of points with continuous eigenvector phases.

    Returns ``(energies, vectors)`` with shapes ``(n, d)`` and ``(n, d, d)``.
    The first point keeps the deterministic reference gauge; every later
    vector is re-phased so its overlap with its predecessor is real positive
    (the same rule as :func:`align_phases`, applied to the whole batch).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.param_dim:
        raise DimensionError(f"expected {model.param_dim} parameters, got {points.shape[1]}")
    ham = np.einsum("nk,kij->nij", model.coefficients(points), model.terms)
    energies, vectors = np.linalg.eigh(ham)
    idx = np.arange(model.dimension) if levels is None else np.asarray(levels, dtype=int)
    gaps = np.diff(energies, axis=1)
    if levels is not None:
        keep = sorted({g for n in idx for g in (n - 1, n) if 0 <= g < gaps.shape[1]})
        gaps = gaps[:, keep]
    scale = np.max(np.abs(energies), axis=1)
    if gaps.size and np.any(gaps <= DEGENERACY_RTOL * scale[:, None]):
        bad = int(np.argmin(np.min(gaps, axis=1) / np.maximum(scale, 1e-300)))
        raise DegeneracyError(f"degenerate spectrum at {points[bad]}")
    vectors = vectors.astype(np.result_type(vectors.dtype, model.terms.dtype))
    vectors[0] = _fix_gauge(vectors[0])
    if len(points) > 1:
        sub = vectors[:, :, idx]
        overlaps = np.einsum("tin,tin->tn", np.conj(sub[:-1]), sub[1:])
        mags = np.abs(overlaps)
        if np.any(mags <= TRACKING_MIN_OVERLAP):
            t, n = np.argwhere(mags <= TRACKING_MIN_OVERLAP)[0]
            raise TrackingError(f"ambiguous eigenvector continuation for level {idx[n]} between "
                                f"points {t} and {t + 1} (overlap {mags[t, n]:.3f}); refine the path")
        unit = np.conj(overlaps) / mags
        sub[1:] = sub[1:] * np.cumprod(unit, axis=0)[:, None, :]
        vectors[:, :, idx] = sub
    return energies, vectors
