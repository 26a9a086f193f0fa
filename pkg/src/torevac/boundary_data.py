"""Boundary measurements on the outer wall and the complex Cauchy trace.

Measurements are samples ``(theta, u0, u1)`` of the poloidal flux and of its
outward normal derivative on the outer circle.  They are interpolated by
2*pi-periodic cubic splines, and the conjugate flux ``v`` is obtained by
integrating ``sigma * du/dn`` counterclockwise along the circle, which is the
boundary form of the generalized Cauchy-Riemann system.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator, interp1d

from .errors import MeasurementError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

OUTER = "OUTER"
INNER = "INNER"

DEFAULT_CENTER = (2.42, 0.0)
DEFAULT_RADIUS = 0.92


# ----------------------------------------------------------------------------
# measurements
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundarySamples:
    """Validated samples of ``u`` and ``du/dn`` on the outer circle.

    ``theta`` is measured counterclockwise from the positive r-axis around
    ``circle_center``; ``u1`` is the derivative along the normal pointing
    away from the circle center.
    """

    theta: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    circle_center: tuple[float, float] = DEFAULT_CENTER
    circle_radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        u0 = np.asarray(self.u0, dtype=float)
        u1 = np.asarray(self.u1, dtype=float)
        if theta.ndim != 1 or u0.shape != theta.shape or u1.shape != theta.shape:
            raise MeasurementError("theta, u0 and u1 must be 1-D arrays of equal length")
        if theta.size < 4:
            raise MeasurementError(f"need at least 4 samples, got {theta.size}")
        for name, arr in (("theta", theta), ("u0", u0), ("u1", u1)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise MeasurementError(f"non-finite {name} at sample {int(bad[0])}")
        if theta[0] < 0.0 or theta[-1] >= TWO_PI:
            raise MeasurementError("angles must lie in [0, 2*pi)")
        if np.any(np.diff(theta) <= 0.0):
            raise MeasurementError("angles must be strictly increasing")
        if not self.circle_radius > 0.0:
            raise MeasurementError("circle radius must be positive")
        for name, arr in (("theta", theta), ("u0", u0), ("u1", u1)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(
            self, "circle_center", (float(self.circle_center[0]), float(self.circle_center[1]))
        )
        object.__setattr__(self, "circle_radius", float(self.circle_radius))

    def __len__(self):
        return self.theta.size

    def points(self) -> np.ndarray:
        """Cartesian ``(r, z)`` coordinates of the sample locations."""
        c = self.circle_center
        return np.column_stack(
            [c[0] + self.circle_radius * np.cos(self.theta),
             c[1] + self.circle_radius * np.sin(self.theta)]
        )

    def splines(self) -> tuple["PeriodicSpline", "PeriodicSpline"]:
        return fit_periodic_spline(self.theta, self.u0), fit_periodic_spline(self.theta, self.u1)


def _parse_metadata(line: str, meta: dict) -> None:
    body = line.lstrip("#").strip()
    for token in body.split():
        if "=" not in token:
            continue
        key, value = token.split("=", 1)
        if key == "circle_center":
            parts = value.split(",")
            meta["center"] = (float(parts[0]), float(parts[1]))
        elif key == "circle_radius":
            meta["radius"] = float(value)


def load_measurements(path, center=None, radius=None) -> BoundarySamples:
    """Read a ``theta,u0,u1`` CSV file.

    Optional leading ``#`` lines may carry ``circle_center=r,z`` and
    ``circle_radius=rho``; explicit arguments override them.  Angles are
    wrapped into ``[0, 2*pi)``, sorted, and exact duplicate rows dropped.
    """
    path = Path(path)
    meta: dict = {}
    rows = []
    try:
        fh = path.open("r", newline="")
    except OSError as exc:
        raise OSError(f"cannot read measurement file {path}: {exc.strerror}") from exc
    with fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                _parse_metadata(stripped, meta)
                continue
            if not header_seen:
                cols = [c.strip() for c in stripped.split(",")]
                if cols != ["theta", "u0", "u1"]:
                    raise MeasurementError(
                        f"{path}:{lineno}: expected header 'theta,u0,u1', got {stripped!r}"
                    )
                header_seen = True
                continue
            fields = stripped.split(",")
            if len(fields) != 3:
                raise MeasurementError(f"{path}:{lineno}: expected 3 columns, got {len(fields)}")
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise MeasurementError(f"{path}:{lineno}: unparsable number in {stripped!r}") from None
            for col, v in zip(("theta", "u0", "u1"), vals):
                if not math.isfinite(v):
                    raise MeasurementError(f"{path}:{lineno}: non-finite value in column {col}")
            rows.append((lineno, vals))
    if not header_seen:
        raise MeasurementError(f"{path}: missing header line")
    if len(rows) < 4:
        raise MeasurementError(f"{path}: need at least 4 samples, got {len(rows)}")

    data = np.array([r[1] for r in rows])
    linenos = np.array([r[0] for r in rows])
    data[:, 0] = np.mod(data[:, 0], TWO_PI)
    order = np.lexsort((data[:, 2], data[:, 1], data[:, 0]))
    data, linenos = data[order], linenos[order]
    keep = np.ones(len(data), dtype=bool)
    same_theta = np.diff(data[:, 0]) == 0.0
    for k in np.flatnonzero(same_theta):
        if np.array_equal(data[k], data[k + 1]):
            keep[k + 1] = False
        else:
            raise MeasurementError(
                f"{path}:{linenos[k + 1]}: angle {data[k, 0]!r} repeated with different values"
            )
    data = data[keep]
    if len(data) < 4:
        raise MeasurementError(f"{path}: need at least 4 distinct samples, got {len(data)}")
    return BoundarySamples(
        data[:, 0], data[:, 1], data[:, 2],
        circle_center=center if center is not None else meta.get("center", DEFAULT_CENTER),
        circle_radius=radius if radius is not None else meta.get("radius", DEFAULT_RADIUS),
    )


def save_measurements(samples: BoundarySamples, path) -> None:
    """Write samples in the format read by :func:`load_measurements` (lossless)."""
    path = Path(path)
    c = samples.circle_center
    with path.open("w", newline="") as fh:
        fh.write(f"# circle_center={c[0]!r},{c[1]!r} circle_radius={samples.circle_radius!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["theta", "u0", "u1"])
        for t, a, b in zip(samples.theta, samples.u0, samples.u1):
            writer.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


@dataclass(frozen=True)
class AssumptionReport:
    """Indices violating ``u1 < 0`` and ``u0 < c`` respectively."""

    u1_violations: list[int]
    u0_violations: list[int]

    @property
    def ok(self) -> bool:
        return not self.u1_violations and not self.u0_violations


def check_physical_assumptions(samples: BoundarySamples, c: float) -> AssumptionReport:
    """Flag samples where the flux is not below ``c`` or ``du/dn`` is not negative."""
    u1_bad = np.flatnonzero(~(samples.u1 < 0.0))
    u0_bad = np.flatnonzero(~(samples.u0 < c))
    return AssumptionReport([int(i) for i in u1_bad], [int(i) for i in u0_bad])


# ----------------------------------------------------------------------------
# periodic spline
# ----------------------------------------------------------------------------


class PeriodicSpline:
    """C2, 2*pi-periodic cubic interpolant of angle samples."""

    period = TWO_PI

    def __init__(self, theta, values):
        theta = np.asarray(theta, dtype=float)
        values = np.asarray(values, dtype=float)
        if theta.ndim != 1 or theta.shape != values.shape:
            raise MeasurementError("theta and values must be 1-D arrays of equal length")
        if theta.size < 4:
            raise MeasurementError(f"need at least 4 points, got {theta.size}")
        theta = np.mod(theta, TWO_PI)
        order = np.argsort(theta, kind="stable")
        theta, values = theta[order], values[order]
        if np.any(np.diff(theta) <= 0.0):
            raise MeasurementError("duplicate angles in spline samples")
        self.knots = theta
        self._start = float(theta[0])
        x = np.append(theta, theta[0] + TWO_PI)
        y = np.append(values, values[0])
        self._cs = CubicSpline(x, y, bc_type="periodic")

    @property
    def coefficients(self) -> np.ndarray:
        """Per-interval power-basis coefficients, shape ``(4, n)``."""
        return self._cs.c

    def _wrap(self, theta):
        return self._start + np.mod(np.asarray(theta, dtype=float) - self._start, TWO_PI)

    def __call__(self, theta, nu: int = 0):
        return self._cs(self._wrap(theta), nu)

    def derivative(self, theta, nu: int = 1):
        return self._cs(self._wrap(theta), nu)


def fit_periodic_spline(theta, values) -> PeriodicSpline:
    return PeriodicSpline(theta, values)


# ----------------------------------------------------------------------------
# conductivity
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Conductivity:
    """Scalar conductivity ``sigma(r, z)``.

    ``kind`` is ``"constant"``, ``"inverse_r"`` (the vacuum poloidal-flux
    operator) or ``"tabulated"`` (bilinear on a regular ``(r, z)`` grid).
    """

    kind: str = "constant"
    value: float = 1.0
    grid: tuple | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_r", "tabulated"):
            raise ValueError(f"unknown conductivity kind {self.kind!r}")
        if self.kind == "constant" and not self.value > 0.0:
            raise ValueError("constant conductivity must be positive")
        if self.kind == "tabulated" and self.grid is None:
            raise ValueError("tabulated conductivity needs a grid")
        if self.bounds is not None and not (0.0 < self.bounds[0] <= self.bounds[1]):
            raise ValueError("bounds must satisfy 0 < C1 <= C2")

    @classmethod
    def constant(cls, value: float = 1.0, bounds=None) -> "Conductivity":
        return cls("constant", float(value), bounds=bounds)

    @classmethod
    def inverse_r(cls, bounds=None) -> "Conductivity":
        return cls("inverse_r", bounds=bounds)

    @classmethod
    def tabulated(cls, r, z, table, bounds=None) -> "Conductivity":
        r = np.asarray(r, float)
        z = np.asarray(z, float)
        table = np.asarray(table, float)
        return cls("tabulated", grid=(r, z, table), bounds=bounds)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @cached_property
    def _interp(self):
        r, z, table = self.grid
        return RegularGridInterpolator((r, z), table, method="linear")

    def __call__(self, r, z):
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(r, z).shape, self.value)
        if self.kind == "inverse_r":
            return 1.0 / np.broadcast_to(r, np.broadcast(r, z).shape)
        rr, zz = np.broadcast_arrays(r, z)
        return self._interp(np.column_stack([rr.ravel(), zz.ravel()])).reshape(rr.shape)

    def nu(self, r, z):
        """Beltrami coefficient ``(1 - sigma) / (1 + sigma)``."""
        s = self(r, z)
        return (1.0 - s) / (1.0 + s)

    def check_bounds(self, r, z) -> tuple[float, float]:
        """Sample ``sigma`` and verify ``0 < C1 <= sigma <= C2``; return the sampled range."""
        s = np.asarray(self(r, z))
        lo, hi = float(np.min(s)), float(np.max(s))
        if not lo > 0.0 or not np.all(np.isfinite(s)):
            raise ValueError(f"conductivity not positive and finite (min {lo})")
        if self.bounds is not None:
            c1, c2 = self.bounds
            if lo < c1 or hi > c2:
                raise ValueError(f"conductivity range [{lo}, {hi}] outside bounds [{c1}, {c2}]")
        return lo, hi


# ----------------------------------------------------------------------------
# complex traces
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceArc:
    """Samples of a complex boundary function on one arc of a circle.

    ``periodic`` arcs cover the full circle and are interpolated by periodic
    splines; other arcs cover ``[theta[0], theta[-1]]`` and use not-a-knot
    cubic splines.
    """

    tag: str
    theta: np.ndarray
    values: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if self.tag not in (OUTER, INNER):
            raise ValueError(f"unknown boundary tag {self.tag!r}")
        if theta.ndim != 1 or theta.shape != values.shape or theta.size < 2:
            raise ValueError("arc needs matching 1-D angle and value arrays")
        if np.any(np.diff(theta) <= 0.0):
            raise ValueError("arc angles must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("arc values must be finite")
        if self.periodic and theta[-1] - theta[0] >= TWO_PI:
            raise ValueError("periodic arc angles must span less than one period")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "values", values)

    @property
    def interval(self) -> tuple[float, float]:
        if self.periodic:
            return float(self.theta[0]), float(self.theta[0] + TWO_PI)
        return float(self.theta[0]), float(self.theta[-1])

    @cached_property
    def _splines(self):
        if self.periodic:
            return (PeriodicSpline(self.theta, self.values.real),
                    PeriodicSpline(self.theta, self.values.imag))
        if self.theta.size < 4:
            return (interp1d(self.theta, self.values.real, fill_value="extrapolate"),
                    interp1d(self.theta, self.values.imag, fill_value="extrapolate"))
        return CubicSpline(self.theta, self.values.real), CubicSpline(self.theta, self.values.imag)

    def __call__(self, theta) -> np.ndarray:
        re, im = self._splines
        return re(theta) + 1j * im(theta)

    def restrict(self, start: float, stop: float) -> "FunctionArc":
        """View of the interpolant on ``[start, stop]``."""
        return FunctionArc(self.tag, (start, stop), self.__call__)


@dataclass(frozen=True)
class FunctionArc:
    """Complex boundary function given in closed form on ``interval``."""

    tag: str
    interval: tuple[float, float]
    func: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.tag not in (OUTER, INNER):
            raise ValueError(f"unknown boundary tag {self.tag!r}")
        a, b = float(self.interval[0]), float(self.interval[1])
        if not b > a or b - a > TWO_PI + 1e-12:
            raise ValueError(f"bad arc interval {self.interval}")
        object.__setattr__(self, "interval", (a, b))

    @property
    def periodic(self) -> bool:
        a, b = self.interval
        return abs((b - a) - TWO_PI) <= 1e-12

    def __call__(self, theta) -> np.ndarray:
        return np.asarray(self.func(np.asarray(theta, dtype=float)), dtype=complex)

    def restrict(self, start: float, stop: float) -> "FunctionArc":
        return FunctionArc(self.tag, (start, stop), self.func)


@dataclass(frozen=True)
class ComplexTrace:
    """Boundary values of ``f = u + i v`` on tagged arcs."""

    arcs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "arcs", tuple(self.arcs))

    def on(self, tag: str) -> list:
        return [a for a in self.arcs if a.tag == tag]

    def restrict(self, tag: str, start: float, stop: float) -> "ComplexTrace":
        """Sub-trace on ``[start, stop]`` taken from the first arc that covers it."""
        for arc in self.on(tag):
            a, b = arc.interval
            if arc.periodic or (a - 1e-12 <= start and stop <= b + 1e-12):
                return ComplexTrace((arc.restrict(start, stop),))
        raise ValueError(f"no {tag} arc covers [{start}, {stop}]")

    def evaluate(self, tag: str, theta) -> np.ndarray:
        """Values at ``theta`` on ``tag``, taken from the arc containing each angle."""
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.nan, dtype=complex)
        for arc in self.on(tag):
            a, b = arc.interval
            if arc.periodic:
                mask = np.isnan(out)
            else:
                t = a + np.mod(theta - a, TWO_PI)
                mask = np.isnan(out) & (t <= b + 1e-12)
            if np.any(mask):
                tt = theta[mask] if arc.periodic else (a + np.mod(theta[mask] - a, TWO_PI))
                out[mask] = arc(tt)
        if np.any(np.isnan(out)):
            raise ValueError(f"trace not defined at some {tag} angles")
        return out


def build_cauchy_trace(
    u0_spline: PeriodicSpline,
    u1_spline: PeriodicSpline,
    sigma: Conductivity,
    center: Sequence[float] = DEFAULT_CENTER,
    radius: float = DEFAULT_RADIUS,
    n_points: int = 1024,
) -> tuple[ComplexTrace, float]:
    """Compose ``F_d = u0 + i v`` on the outer circle.

    ``v(theta)`` integrates ``sigma * u1`` in arc length from ``theta = 0``
    with composite Simpson on each of the ``n_points`` intervals.  The total
    flux ``Phi = oint sigma u1 ds`` makes ``v`` multivalued; the returned
    trace carries the single-valued part ``v - Phi * theta / (2 pi)`` and
    ``Phi`` is returned separately.
    """
    if n_points < 8:
        raise ValueError("n_points must be at least 8")
    theta = TWO_PI * np.arange(n_points + 1) / n_points
    mid = 0.5 * (theta[:-1] + theta[1:])

    def density(t):
        r = center[0] + radius * np.cos(t)
        z = center[1] + radius * np.sin(t)
        return sigma(r, z) * u1_spline(t) * radius

    f_nodes = density(theta)
    f_mid = density(mid)
    dtheta = TWO_PI / n_points
    increments = dtheta / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])
    v = np.concatenate([[0.0], np.cumsum(increments)])
    flux = float(v[-1])
    v_single = v - flux * theta / TWO_PI
    grid = theta[:-1]
    values = u0_spline(grid) + 1j * v_single[:-1]
    return ComplexTrace((TraceArc(OUTER, grid, values, periodic=True),)), flux
