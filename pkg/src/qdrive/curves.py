"""Parameter-space curves ``s -> Lambda(s)`` on ``s in [0, 1]``.

Curves only define the geometric shape of a driving path; the time
dependence is supplied separately by a schedule ``s(tau)``.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .models import as_point


class Curve:
    """Base class. Subclasses implement vectorized ``point``, ``d1`` and ``d2``."""

    kind = "curve"

    @property
    def dim(self) -> int:
        return self.start.size

    @property
    def start(self) -> np.ndarray:
        return self.point(0.0)

    @property
    def end(self) -> np.ndarray:
        return self.point(1.0)

    def breakpoints(self) -> np.ndarray:
        """Parameter values where the curve may lose smoothness (always includes 0 and 1)."""
        return np.array([0.0, 1.0])

    def point(self, s):
        raise NotImplementedError

    def d1(self, s):
        raise NotImplementedError

    def d2(self, s):
        raise NotImplementedError

    def config(self) -> dict:
        return {"shape": self.kind}


def _column(s):
    s = np.asarray(s, dtype=float)
    return s, s[..., None]


class LineCurve(Curve):
    """Straight segment ``Lambda(s) = Lambda_I + (Lambda_F - Lambda_I) s``."""

    kind = "line"

    def __init__(self, start, end):
        self._start = as_point(start)
        self._end = as_point(end, self._start.size)
        self.delta = self._end - self._start

    @property
    def start(self):
        return self._start.copy()

    @property
    def end(self):
        return self._end.copy()

    def point(self, s):
        s, col = _column(s)
        out = self._start + self.delta * col
        # land exactly on the endpoints
        out = np.where(col == 1.0, self._end, out)
        return out

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self.delta, s.shape + self.delta.shape).copy()

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        return np.zeros(s.shape + self.delta.shape)

    def config(self):
        return {"shape": "line", "start": self._start.tolist(), "end": self._end.tolist()}


class ArcCurve(Curve):
    """Circular arc of the two-level model from ``(-x0, z0)`` to ``(x0, z0)`` about the origin."""

    kind = "arc"

    def __init__(self, x0: float, z0: float):
        if not (x0 > 0 and z0 > 0):
            raise ValueError("arc endpoints need x0 > 0 and z0 > 0")
        self.x0, self.z0 = float(x0), float(z0)
        self.radius = float(np.hypot(x0, z0))
        self.alpha0 = float(np.arctan(z0 / x0))
        # alpha(s) = alpha0 s + (pi - alpha0)(1 - s)
        self._alpha_start = np.pi - self.alpha0
        self._alpha_rate = 2.0 * self.alpha0 - np.pi

    def angle(self, s):
        return self._alpha_start + self._alpha_rate * np.asarray(s, dtype=float)

    def point(self, s):
        s = np.asarray(s, dtype=float)
        a = self.angle(s)
        out = self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)
        out = np.where(s[..., None] == 0.0, [-self.x0, self.z0], out)
        out = np.where(s[..., None] == 1.0, [self.x0, self.z0], out)
        return out

    def d1(self, s):
        a = self.angle(s)
        return self.radius * self._alpha_rate * np.stack([-np.sin(a), np.cos(a)], axis=-1)

    def d2(self, s):
        a = self.angle(s)
        return -self.radius * self._alpha_rate ** 2 * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def config(self):
        return {"shape": "arc", "x0": self.x0, "z0": self.z0}


class MeshCurve(Curve):
    """Curve tabulated on nodes ``s_i`` and interpolated by a C2 cubic spline."""

    kind = "mesh"

    def __init__(self, s_nodes, nodes):
        s_nodes = np.asarray(s_nodes, dtype=float)
        nodes = np.asarray(nodes, dtype=float)
        if s_nodes[0] != 0.0 or s_nodes[-1] != 1.0 or np.any(np.diff(s_nodes) <= 0):
            raise ValueError("mesh parameter must increase strictly from 0 to 1")
        if nodes.shape[0] != s_nodes.size:
            raise ValueError("one node per mesh parameter value required")
        self.s_nodes = s_nodes
        self.nodes = nodes
        self._spline = CubicSpline(s_nodes, nodes, axis=0)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)

    @property
    def start(self):
        return self.nodes[0].copy()

    @property
    def end(self):
        return self.nodes[-1].copy()

    def breakpoints(self):
        return self.s_nodes.copy()

    def point(self, s):
        s = np.asarray(s, dtype=float)
        out = self._spline(s)
        out = np.where(s[..., None] == 0.0, self.nodes[0], out)
        return np.where(s[..., None] == 1.0, self.nodes[-1], out)

    def d1(self, s):
        return self._d1(np.asarray(s, dtype=float))

    def d2(self, s):
        return self._d2(np.asarray(s, dtype=float))

    def config(self):
        return {"shape": "mesh", "start": self.nodes[0].tolist(), "end": self.nodes[-1].tolist(),
                "mesh_size": int(self.s_nodes.size)}
