"""Driving protocols ``Lambda(tau) = C(s(tau))`` with chain-rule derivatives.

Families: A (line, linear schedule), B(k) (line, polynomial schedule of
order 2k+1), C (line, constant manifold speed) and D (geodesic shape with
``s = tau``; the two-level arc is its own constant-speed geodesic).
"""

from __future__ import annotations

import numpy as np

from .curves import ArcCurve, Curve, LineCurve
from .errors import DimensionError
from .schedules import PolynomialSchedule, Schedule, polynomial_schedule

__all__ = ["DrivingProtocol", "assemble_protocol", "line_shape", "arc_shape",
           "polynomial_schedule", "protocol_label", "build_protocol"]

ENDPOINT_ZERO = 1e-12


def line_shape(start, end) -> LineCurve:
    return LineCurve(start, end)


def arc_shape(x0: float, z0: float) -> ArcCurve:
    return ArcCurve(x0, z0)


def protocol_label(curve: Curve, schedule: Schedule) -> str:
    """Derive the family label from the shape and schedule kinds."""
    kind = schedule.kind
    if curve.kind == "line":
        if kind == "linear":
            return "A"
        if isinstance(schedule, PolynomialSchedule):
            return f"B{schedule.k}"
        if kind == "const-speed":
            return "C"
    if curve.kind in ("arc", "geodesic", "mesh") and kind in ("linear", "const-speed"):
        return "D"
    return "custom"


class DrivingProtocol:
    """Composition of a curve and a schedule.

    Accessors are vectorized over ``tau``: ``point`` returns ``(..., D)``
    and so do ``velocity`` and ``acceleration`` (derivatives with respect to
    the scaled time ``tau = t/T``).
    """

    def __init__(self, curve: Curve, schedule: Schedule, label: str | None = None):
        self.curve = curve
        self.schedule = schedule
        self.label = label or protocol_label(curve, schedule)
        self.start = curve.start
        self.end = curve.end
        scale = max(1.0, float(np.max(np.abs(np.concatenate([self.start, self.end])))))
        v_ends = self.velocity(np.array([0.0, 1.0]))
        a_ends = self.acceleration(np.array([0.0, 1.0]))
        self.speed_zero = bool(np.all(np.abs(v_ends) <= ENDPOINT_ZERO * scale))
        self.acceleration_zero = bool(np.all(np.abs(a_ends) <= ENDPOINT_ZERO * scale))

    @property
    def dim(self) -> int:
        return self.start.size

    def point(self, tau):
        return self.curve.point(self.schedule.value(tau))

    def velocity(self, tau):
        tau = np.asarray(tau, dtype=float)
        s = self.schedule.value(tau)
        return self.curve.d1(s) * self.schedule.d1(tau)[..., None]

    def acceleration(self, tau):
        tau = np.asarray(tau, dtype=float)
        s = self.schedule.value(tau)
        sd = self.schedule.d1(tau)[..., None]
        sdd = self.schedule.d2(tau)[..., None]
        return self.curve.d2(s) * sd * sd + self.curve.d1(s) * sdd

    def breakpoints(self) -> np.ndarray:
        """Scaled times where ``Lambda(tau)`` may lose smoothness, sorted, including 0 and 1."""
        inner = self.curve.breakpoints()
        inner = inner[(inner > 0) & (inner < 1)]
        taus = [self.schedule.breakpoints()]
        if inner.size:
            taus.append(np.atleast_1d(self.schedule.inverse(inner)))
        out = np.unique(np.clip(np.concatenate(taus + [np.array([0.0, 1.0])]), 0.0, 1.0))
        return out

    def config(self) -> dict:
        return {"label": self.label, **self.curve.config(), **self.schedule.config()}

    def __repr__(self) -> str:
        return f"DrivingProtocol({self.label}, {self.curve.kind}, {self.schedule.kind})"


def assemble_protocol(curve: Curve, schedule: Schedule, label: str | None = None) -> DrivingProtocol:
    """Combine a shape and a schedule; the label is derived when omitted."""
    if not isinstance(curve, Curve) or not isinstance(schedule, Schedule):
        raise TypeError("assemble_protocol needs a Curve and a Schedule")
    for tau in (0.0, 1.0):
        s = float(schedule.value(tau))
        if s != tau:
            raise DimensionError(f"schedule maps tau={tau} to s={s}; it must fix the endpoints")
    return DrivingProtocol(curve, schedule, label)


def build_protocol(model, spec: dict, start=None, end=None) -> DrivingProtocol:
    """Build a protocol from a config entry.

    ``spec`` uses the keys ``shape`` (line, arc, geodesic), ``schedule``
    (linear, poly, const-speed), ``k`` for polynomial schedules and
    ``mesh_size`` for geodesics. A bare label string is also accepted:
    ``"A"``, ``"B3"``, ``"C"`` or ``"D"``.
    """
    from . import geometry

    if isinstance(spec, str):
        spec = label_spec(spec, model)
    shape = spec.get("shape", "line")
    start = spec.get("start", start)
    end = spec.get("end", end)
    if shape == "line":
        curve = line_shape(start, end)
    elif shape == "arc":
        x0, z0 = spec.get("x0"), spec.get("z0")
        if x0 is None:
            if start is None or end is None:
                raise ValueError("arc needs x0, z0 or symmetric endpoints")
            x0, z0 = float(end[0]), float(end[1])
            if not np.allclose(start, [-x0, z0]):
                raise ValueError("arc endpoints must be (-x0, z0) and (x0, z0)")
        curve = arc_shape(x0, z0)
    elif shape == "geodesic":
        curve = geometry.geodesic_bvp(model, start, end, int(spec.get("mesh_size", 201)))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    kind = spec.get("schedule", "linear")
    if kind == "linear":
        schedule = polynomial_schedule(0)
    elif kind == "poly":
        schedule = polynomial_schedule(int(spec["k"]))
    elif kind == "const-speed":
        schedule = geometry.constant_speed_schedule(model, curve)
    else:
        raise ValueError(f"unknown schedule {kind!r}")
    return assemble_protocol(curve, schedule, spec.get("label"))


def label_spec(label: str, model) -> dict:
    """Expand a family label into a protocol spec for the given model."""
    label = label.strip().upper()
    if label == "A":
        return {"shape": "line", "schedule": "linear"}
    if label.startswith("B"):
        k = int(label[1:].strip("()") or 1)
        return {"shape": "line", "schedule": "poly", "k": k}
    if label == "C":
        return {"shape": "line", "schedule": "const-speed"}
    if label == "D":
        shape = "arc" if getattr(model, "name", "") == "two-level" else "geodesic"
        return {"shape": shape, "schedule": "linear"}
    raise ValueError(f"unknown protocol label {label!r}")
