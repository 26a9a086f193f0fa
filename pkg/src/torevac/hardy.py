"""Bounded extremal problem in the Hardy space of an annulus (harmonic case).

Functions holomorphic in the annulus ``rho_inner < |z - c| < rho_outer`` are
approximated by truncated Laurent series in ``zeta = (z - c) / rho_outer``
plus a fixed multiple ``b0`` of ``Log(zeta)`` carrying the circulation.  All
boundary inner products use the normalized measure ``d theta / (2 pi)`` on
each circle, so ``<zeta^n, zeta^m>`` over both full circles is
``delta_nm * (1 + (rho_inner / rho_outer)^(2n))``.

Complex coefficients are stored interleaved as real pairs
``(Re a_n, Im a_n)`` for the real-part constraint to be a linear map on real
unknowns.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .boundary_data import INNER, OUTER, TWO_PI, ComplexTrace, Conductivity, FunctionArc
from .errors import BepError, SaturationError

log = logging.getLogger(__name__)

MAX_DEGREE = 64
LAMBDA_BRACKET = (1e-12, 1e12)


@dataclass(frozen=True)
class AnnulusGeometry:
    center: tuple[float, float]
    rho_inner: float
    rho_outer: float

    def __post_init__(self):
        if not 0.0 < self.rho_inner < self.rho_outer:
            raise ValueError("need 0 < rho_inner < rho_outer")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def radius(self, tag: str) -> float:
        if tag == OUTER:
            return self.rho_outer
        if tag == INNER:
            return self.rho_inner
        raise ValueError(f"unknown boundary tag {tag!r}")

    @property
    def ratio(self) -> float:
        return self.rho_inner / self.rho_outer

    def point(self, tag: str, theta) -> np.ndarray:
        """Complex ``r + i z`` coordinates of boundary points."""
        c = complex(*self.center)
        return c + self.radius(tag) * np.exp(1j * np.asarray(theta, dtype=float))


def basis_trace(n: int, geometry: AnnulusGeometry, tag: str, theta, log_element: bool = False):
    """Trace of ``zeta^n`` (or of ``Log zeta`` when ``log_element``) at ``theta`` on ``tag``."""
    if abs(n) > MAX_DEGREE:
        raise ValueError(f"|n| must not exceed {MAX_DEGREE}")
    theta = np.asarray(theta, dtype=float)
    rho = geometry.radius(tag) / geometry.rho_outer
    if log_element:
        return math.log(rho) + 1j * theta
    return rho**n * np.exp(1j * n * theta)


def _basis_matrix(geometry: AnnulusGeometry, degree: int, tags, theta) -> np.ndarray:
    """Complex matrix ``B[q, k] = zeta_q^(k - degree)``."""
    rho = np.where(np.asarray(tags) == OUTER, 1.0, geometry.ratio)
    n = np.arange(-degree, degree + 1)
    return rho[:, None] ** n[None, :] * np.exp(1j * np.outer(theta, n))


def _real_form(B: np.ndarray) -> np.ndarray:
    """Columns acting on interleaved ``(Re a, Im a)`` unknowns."""
    out = np.empty((B.shape[0], 2 * B.shape[1]), dtype=complex)
    out[:, 0::2] = B
    out[:, 1::2] = 1j * B
    return out


def _log_real(geometry: AnnulusGeometry, tags) -> np.ndarray:
    return np.where(np.asarray(tags) == OUTER, 0.0, math.log(geometry.ratio))


@dataclass(frozen=True)
class LaurentModel:
    """``f(z) = b0 Log(zeta) + sum_{n=-N}^{N} a_n zeta^n``, ``zeta = (z - c) / rho_outer``."""

    geometry: AnnulusGeometry
    coeffs: np.ndarray
    log_coeff: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim != 1 or coeffs.size % 2 != 1:
            raise ValueError("coefficient array must have odd length 2N+1")
        if not np.all(np.isfinite(coeffs)) or not math.isfinite(self.log_coeff):
            raise ValueError("coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "log_coeff", float(self.log_coeff))

    @property
    def degree(self) -> int:
        return (self.coeffs.size - 1) // 2

    def coefficient(self, n: int) -> complex:
        return complex(self.coeffs[n + self.degree])

    def trace(self, tag: str, theta) -> np.ndarray:
        """Boundary values; the log term contributes ``b0 (log rho + i theta)``."""
        theta = np.asarray(theta, dtype=float)
        tags = np.full(theta.shape, tag)
        vals = _basis_matrix(self.geometry, self.degree, tags.ravel(), theta.ravel()) @ self.coeffs
        vals = vals.reshape(theta.shape)
        if self.log_coeff:
            rho = self.geometry.radius(tag) / self.geometry.rho_outer
            vals = vals + self.log_coeff * (math.log(rho) + 1j * theta)
        return vals

    def single_valued_trace(self, tag: str, theta) -> np.ndarray:
        """Trace with the ``i b0 theta`` part removed (what the BEP fits)."""
        theta = np.asarray(theta, dtype=float)
        return self.trace(tag, theta) - 1j * self.log_coeff * theta

    def as_trace(self, tags: Sequence[str] = (OUTER, INNER), single_valued: bool = True) -> ComplexTrace:
        fn = self.single_valued_trace if single_valued else self.trace
        return ComplexTrace(
            tuple(FunctionArc(t, (0.0, TWO_PI), (lambda th, t=t: fn(t, th))) for t in tags)
        )

    def with_coeffs(self, coeffs) -> "LaurentModel":
        return LaurentModel(self.geometry, coeffs, self.log_coeff)


def save_laurent(model: LaurentModel, path) -> None:
    """CSV rows ``n,re,im`` followed by ``log,b0,0``; geometry in a ``#`` line."""
    g = model.geometry
    with Path(path).open("w", newline="") as fh:
        fh.write(
            f"# center={g.center[0]!r},{g.center[1]!r} "
            f"rho_inner={g.rho_inner!r} rho_outer={g.rho_outer!r}\n"
        )
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "re", "im"])
        for k, a in enumerate(model.coeffs):
            w.writerow([k - model.degree, repr(float(a.real)), repr(float(a.imag))])
        w.writerow(["log", repr(model.log_coeff), "0"])


def load_laurent(path, geometry: AnnulusGeometry | None = None) -> LaurentModel:
    meta = {}
    terms = {}
    b0 = 0.0
    with Path(path).open("r", newline="") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                for tok in s.lstrip("#").split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            parts = s.split(",")
            if parts[0] == "n":
                continue
            if parts[0] == "log":
                b0 = float(parts[1])
            else:
                terms[int(parts[0])] = complex(float(parts[1]), float(parts[2]))
    if geometry is None:
        try:
            cx, cz = (float(x) for x in meta["center"].split(","))
            geometry = AnnulusGeometry((cx, cz), float(meta["rho_inner"]), float(meta["rho_outer"]))
        except KeyError:
            raise ValueError(f"{path}: no geometry line and no geometry given") from None
    degree = max(abs(n) for n in terms)
    coeffs = np.zeros(2 * degree + 1, dtype=complex)
    for n, a in terms.items():
        coeffs[n + degree] = a
    return LaurentModel(geometry, coeffs, b0)


# ----------------------------------------------------------------------------
# partitions and quadrature
# ----------------------------------------------------------------------------


def _merge(intervals):
    """Merge intervals on the circle; result lies in ``[a0, a0 + 2pi)``."""
    if not intervals:
        return []
    a0 = intervals[0][0]
    norm = []
    for a, b in intervals:
        length = b - a
        if length >= TWO_PI - 1e-12:
            return [(a0, a0 + TWO_PI)]
        start = a0 + math.fmod(a - a0, TWO_PI)
        if start < a0:
            start += TWO_PI
        end = start + length
        if end > a0 + TWO_PI:
            norm.append((start, a0 + TWO_PI))
            norm.append((a0, end - TWO_PI))
        else:
            norm.append((start, end))
    norm.sort()
    merged = [list(norm[0])]
    for a, b in norm[1:]:
        if a <= merged[-1][1] + 1e-14:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [tuple(m) for m in merged]


def _complement(intervals):
    if not intervals:
        return [(0.0, TWO_PI)]
    merged = _merge(intervals)
    if len(merged) == 1 and merged[0][1] - merged[0][0] >= TWO_PI - 1e-12:
        return []
    a0 = merged[0][0]
    out = []
    for (a, b), (c, _) in zip(merged, merged[1:] + [(a0 + TWO_PI, None)]):
        if c - b > 1e-14:
            out.append((b, c))
    return out


@dataclass(frozen=True)
class BoundaryPartition:
    """Disjoint arcs ``I`` (data) and ``J = boundary \\ (I + held)`` (constraint).

    ``held`` arcs belong to neither set; cross-validation uses them for
    the validation misfit so that ``J`` is the same while training and
    while re-solving on the full data arc.

    Each arc carries composite Gauss-Legendre nodes (``nodes_per_panel`` per
    panel, panels no wider than ``max_panel``) with weights in the
    ``d theta / (2 pi)`` measure.
    """

    arcs_I: tuple
    arcs_J: tuple
    max_panel: float = math.pi / 32
    nodes_per_panel: int = 8
    arcs_held: tuple = ()

    @classmethod
    def from_I(cls, arcs_I, max_panel: float = math.pi / 32, nodes_per_panel: int = 8, held=()):
        arcs_I = tuple((tag, (float(a), float(b))) for tag, (a, b) in arcs_I)
        held = tuple((tag, (float(a), float(b))) for tag, (a, b) in held)
        arcs_J = []
        for tag in (OUTER, INNER):
            mine = [iv for t, iv in arcs_I + held if t == tag]
            for iv in _complement(mine):
                arcs_J.append((tag, iv))
        return cls(arcs_I, tuple(arcs_J), max_panel, nodes_per_panel, held)

    def __post_init__(self):
        if not self.arcs_J:
            raise BepError("J must have positive measure")
        for tag in (OUTER, INNER):
            total = sum(b - a for t, (a, b) in self.arcs_I + self.arcs_J + self.arcs_held if t == tag)
            if abs(total - TWO_PI) > 1e-9:
                raise BepError(f"I and J do not cover the {tag} circle (measure {total})")

    def quadrature(self, which: str = "I"):
        """``(tags, theta, weights)`` for the arcs of ``I`` or ``J``."""
        arcs = self.arcs_I if which == "I" else self.arcs_J
        return arc_quadrature(arcs, self.max_panel, self.nodes_per_panel)


def arc_quadrature(arcs, max_panel: float = math.pi / 32, nodes_per_panel: int = 8):
    x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    tags, thetas, weights = [], [], []
    for tag, (a, b) in arcs:
        if b <= a:
            continue
        n_pan = max(1, math.ceil((b - a) / max_panel - 1e-12))
        edges = np.linspace(a, b, n_pan + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        ww = (half[:, None] * w[None, :]).ravel() / TWO_PI
        tags.append(np.full(t.size, tag, dtype=object))
        thetas.append(t)
        weights.append(ww)
    if not thetas:
        return np.array([], dtype=object), np.array([]), np.array([])
    return np.concatenate(tags), np.concatenate(thetas), np.concatenate(weights)


def _arcs_of(trace: ComplexTrace):
    return tuple((arc.tag, arc.interval) for arc in trace.arcs)


def _evaluate_trace(trace: ComplexTrace, tags, theta) -> np.ndarray:
    out = np.empty(theta.shape, dtype=complex)
    for tag in (OUTER, INNER):
        m = tags == tag
        if np.any(m):
            out[m] = trace.evaluate(tag, theta[m])
    return out


def _phi_values(phi, tags, theta) -> np.ndarray:
    if phi is None:
        return np.zeros(theta.shape)
    if callable(phi):
        out = np.empty(theta.shape)
        for tag in (OUTER, INNER):
            m = tags == tag
            if np.any(m):
                out[m] = np.real(phi(tag, theta[m]))
        return out
    return np.full(theta.shape, float(phi))


# ----------------------------------------------------------------------------
# Gram operators
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GramOperators:
    """Discrete normal-equation blocks of the projection equation.

    ``G_I`` is the complex Gram matrix on ``I``; ``G_I_real`` and
    ``G_J_real`` act on interleaved real unknowns, the latter for the
    real-part pairing on ``J``.
    """

    G_I: np.ndarray
    G_I_real: np.ndarray
    G_J_real: np.ndarray
    _BI: np.ndarray
    _BJ: np.ndarray
    _wI: np.ndarray
    _wJ: np.ndarray

    def rhs_I(self, values_I) -> np.ndarray:
        """Real right-hand side ``Re(B_r^H W F)`` for data sampled at the I nodes."""
        return np.real(self._BI.conj().T @ (self._wI * values_I))

    def rhs_J(self, phi_J) -> np.ndarray:
        return np.real(self._BJ).T @ (self._wJ * phi_J)


def gram_operators(partition: BoundaryPartition, degree: int, geometry: AnnulusGeometry) -> GramOperators:
    if degree < 0:
        raise ValueError("degree must be non-negative")
    tI, thI, wI = partition.quadrature("I")
    tJ, thJ, wJ = partition.quadrature("J")
    if wI.size == 0 or not np.any(wI > 0):
        raise BepError("degenerate quadrature on I")
    B_I = _basis_matrix(geometry, degree, tI, thI)
    B_J = _basis_matrix(geometry, degree, tJ, thJ)
    G_I = (B_I.conj().T * wI) @ B_I
    BrI = _real_form(B_I)
    BrJ = _real_form(B_J)
    G_I_real = np.real((BrI.conj().T * wI) @ BrI)
    RJ = np.real(BrJ)
    G_J_real = (RJ.T * wJ) @ RJ
    return GramOperators(G_I, G_I_real, G_J_real, BrI, BrJ, wI, wJ)


# ----------------------------------------------------------------------------
# projection
# ----------------------------------------------------------------------------


def _interleave(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def project_hardy(
    trace: ComplexTrace, degree: int, geometry: AnnulusGeometry, log_coeff: float = 0.0
) -> LaurentModel:
    """Least-squares Laurent model of ``trace`` given on both full circles.

    ``trace`` holds the single-valued part (see :meth:`LaurentModel.single_valued_trace`).
    """
    tags, theta, w = arc_quadrature(((OUTER, (0.0, TWO_PI)), (INNER, (0.0, TWO_PI))))
    for tag in (OUTER, INNER):
        covered = sum(b - a for t, (a, b) in _arcs_of(trace) if t == tag)
        if covered < TWO_PI - 1e-9:
            raise BepError(f"trace must cover the full {tag} circle")
    F = _evaluate_trace(trace, tags, theta) - log_coeff * _log_real(geometry, tags)
    B = _basis_matrix(geometry, degree, tags, theta)
    sw = np.sqrt(w)
    A = sw[:, None] * B
    scale = np.linalg.norm(A, axis=0)
    coef, _, rank, _ = np.linalg.lstsq(A / scale, sw * F, rcond=None)
    if rank < B.shape[1]:
        raise BepError(f"Gram system rank deficient ({rank} < {B.shape[1]})")
    return LaurentModel(geometry, coef / scale, log_coeff)


# ----------------------------------------------------------------------------
# bounded extremal problem
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BepSolution:
    model: LaurentModel
    lam: float
    error_I: float
    constraint_J: float
    M: float

    @property
    def saturated(self) -> bool:
        return self.lam > 0.0


class _BepSystem:
    """Least-squares form of the BEP, reduced so each ``lambda`` costs O(n^2).

    With ``A_I = Q R`` and ``C = A_J R^{-1} = U S V^T`` the stationarity
    condition ``(A_I^T A_I + lam A_J^T A_J) x = A_I^T y_I + lam A_J^T y_J``
    becomes diagonal in the columns of ``V``.
    """

    def __init__(self, trace, phi, degree, geometry, log_coeff, partition=None):
        self.degree = degree
        self.geometry = geometry
        self.log_coeff = float(log_coeff)
        if partition is None:
            partition = BoundaryPartition.from_I(_arcs_of(trace))
        self.partition = partition
        tI, thI, wI = partition.quadrature("I")
        tJ, thJ, wJ = partition.quadrature("J")
        F = _evaluate_trace(trace, tI, thI) - self.log_coeff * _log_real(geometry, tI)
        phiJ = _phi_values(phi, tJ, thJ) - self.log_coeff * _log_real(geometry, tJ)
        BrI = _real_form(_basis_matrix(geometry, degree, tI, thI))
        BrJ = _real_form(_basis_matrix(geometry, degree, tJ, thJ))
        sI, sJ = np.sqrt(wI), np.sqrt(wJ)
        self.A_I = np.vstack([sI[:, None] * BrI.real, sI[:, None] * BrI.imag])
        self.y_I = np.concatenate([sI * F.real, sI * F.imag])
        self.A_J = sJ[:, None] * BrJ.real
        self.y_J = sJ * phiJ
        self.phi_norm = float(np.linalg.norm(self.y_J))

        # column equilibration keeps R well scaled when inner-circle powers are large
        self.col_scale = np.linalg.norm(self.A_I, axis=0)
        Q, R = np.linalg.qr(self.A_I / self.col_scale)
        if np.min(np.abs(np.diag(R))) <= 1e-13 * np.max(np.abs(np.diag(R))):
            raise BepError("Gram matrix on I is singular")
        self.R = R
        self.q = Q.T @ self.y_I
        C = sla.solve_triangular(R, (self.A_J / self.col_scale).T, trans="T").T
        U, s, Vt = np.linalg.svd(C, full_matrices=False)
        if Vt.shape[0] < Vt.shape[1]:
            raise BepError("J quadrature too coarse for the basis size")
        self.s = s
        self.V = Vt.T
        self.Vq = Vt @ self.q
        self.sUy = s * (U.T @ self.y_J)

    def coefficients(self, lam: float) -> np.ndarray:
        y = self.V @ ((self.Vq + lam * self.sUy) / (1.0 + lam * self.s**2))
        return sla.solve_triangular(self.R, y) / self.col_scale

    def error(self, x) -> float:
        return float(np.linalg.norm(self.A_I @ x - self.y_I))

    def constraint(self, x) -> float:
        return float(np.linalg.norm(self.A_J @ x - self.y_J))

    def model(self, x) -> LaurentModel:
        return LaurentModel(self.geometry, _interleave(x), self.log_coeff)

    def solution(self, x, lam, M) -> BepSolution:
        return BepSolution(self.model(x), lam, self.error(x), self.constraint(x), M)

    def solve(self, M: float, tol: float = 1e-8, max_iter: int = 200) -> BepSolution:
        x0 = self.coefficients(0.0)
        c0 = self.constraint(x0)
        if c0 <= M:
            return self.solution(x0, -1.0, M)
        lo, hi = LAMBDA_BRACKET
        x_hi = self.coefficients(hi)
        if self.constraint(x_hi) > M * (1.0 + tol):
            raise SaturationError(
                f"bound M={M:g} below the smallest reachable constraint "
                f"{self.constraint(x_hi):g} (lambda <= {hi:g})"
            )
        x_lo = self.coefficients(lo)
        if self.constraint(x_lo) <= M:
            a, b, to_lam = 0.0, lo, (lambda s: s)
        else:
            a, b, to_lam = math.log(lo), math.log(hi), math.exp
        best = (hi, x_hi)
        for _ in range(max_iter):
            mid = 0.5 * (a + b)
            if mid == a or mid == b:
                break
            lam = to_lam(mid)
            x = self.coefficients(lam)
            c = self.constraint(x)
            if c > M:
                a = mid
            else:
                b = mid
                best = (lam, x)
            if abs(c - M) <= 1e-14 * M:
                best = (lam, x)
                break
        lam, x = best
        sol = self.solution(x, lam, M)
        if abs(sol.constraint_J - M) > tol * M:
            raise BepError(f"saturation not reached: |{sol.constraint_J:g} - {M:g}| > {tol:g} M")
        return sol


def solve_bep(
    F_d: ComplexTrace,
    phi,
    M: float,
    degree: int,
    geometry: AnnulusGeometry,
    log_coeff: float = 0.0,
    partition: BoundaryPartition | None = None,
) -> BepSolution:
    """Best Laurent approximation of ``F_d`` on ``I`` with ``||Re g - phi||_J <= M``.

    ``I`` is the union of the arcs of ``F_d``; ``J`` its complement on both
    circles.  ``phi`` is a scalar, ``None`` (zero) or a callable
    ``phi(tag, theta)`` giving the real target on ``J``.  Returns
    ``lam = -1`` if the unconstrained minimizer already meets the bound,
    otherwise the saturating Lagrange parameter.
    """
    if not M > 0.0:
        raise ValueError("M must be positive")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return _BepSystem(F_d, phi, degree, geometry, log_coeff, partition).solve(M)


def _misfit(model: LaurentModel, trace: ComplexTrace, arcs) -> float:
    tags, theta, w = arc_quadrature(arcs)
    diff = np.empty(theta.shape, dtype=complex)
    for tag in (OUTER, INNER):
        m = tags == tag
        if np.any(m):
            diff[m] = model.single_valued_trace(tag, theta[m]) - trace.evaluate(tag, theta[m])
    return float(np.sqrt(np.sum(w * np.abs(diff) ** 2)))


def l2_norm(model: LaurentModel, arcs, real_part: bool = False, single_valued: bool = True) -> float:
    """``L^2`` norm (``d theta / 2 pi`` measure) of the trace on ``arcs``."""
    tags, theta, w = arc_quadrature(arcs)
    vals = np.empty(theta.shape, dtype=complex)
    fn = model.single_valued_trace if single_valued else model.trace
    for tag in (OUTER, INNER):
        m = tags == tag
        if np.any(m):
            vals[m] = fn(tag, theta[m])
    if real_part:
        vals = vals.real
    return float(np.sqrt(np.sum(w * np.abs(vals) ** 2)))


def cross_validate(
    F_d: ComplexTrace,
    split,
    phi,
    degree: int,
    geometry: AnnulusGeometry,
    log_coeff: float = 0.0,
    n_scan: int = 33,
    rtol: float = 1e-4,
) -> tuple[float, BepSolution]:
    """Choose the bound ``M`` by validating on ``I2``, then solve on ``I1 + I2``.

    ``split`` is ``(I1, I2)``; each part is one angle interval ``(a, b)``
    of the outer circle or a sequence of them, and ``F_d`` must cover
    both.  Training fits ``I1`` with ``I2`` held out of ``J``, so ``J`` is
    the complement of ``I1 + I2`` throughout.  The validation misfit
    ``||g*(M) - F_d||_{L^2(I2)}`` is scanned on a log grid of ``M`` and
    refined by golden-section search on ``log M`` to relative tolerance
    ``rtol``.  Returns ``M2`` and the BEP solution on ``I1 + I2`` for it.
    """
    I1, I2 = (_intervals(part) for part in split)
    if not I1 or not I2 or any(not b > a for a, b in I1 + I2):
        raise ValueError("I1 and I2 must be nonempty intervals")
    if _overlap_any(I1 + I2):
        raise ValueError("I1 and I2 must be disjoint")

    def restricted(intervals):
        return ComplexTrace(tuple(arc for a, b in intervals for arc in F_d.restrict(OUTER, a, b).arcs))

    train = restricted(I1)
    val_arcs = tuple((OUTER, iv) for iv in I2)
    # I2 is held out of J so the bound keeps its meaning when re-solving on I1 + I2
    partition = BoundaryPartition.from_I(_arcs_of(train), held=val_arcs)
    system = _BepSystem(train, phi, degree, geometry, log_coeff, partition)
    M2 = _select_bound(system, F_d, val_arcs, n_scan, rtol)
    full = restricted(I1 + I2)
    final = _BepSystem(full, phi, degree, geometry, log_coeff, BoundaryPartition.from_I(_arcs_of(full)))
    return M2, final.solve(M2)


def _select_bound(system: "_BepSystem", F_d: ComplexTrace, val_arcs, n_scan: int, rtol: float) -> float:
    x_unc = system.coefficients(0.0)
    c_unc = system.constraint(x_unc)
    scale = max(system.phi_norm, c_unc, 1e-300)
    lo = 1e-6 * scale
    hi = min(1e6 * scale, c_unc)
    if not hi > lo:
        hi = lo * (1.0 + rtol)

    cache: dict[float, float] = {}

    def evaluate(logM: float) -> float:
        if logM not in cache:
            try:
                sol = system.solve(math.exp(logM))
            except SaturationError:
                cache[logM] = math.inf
            else:
                cache[logM] = _misfit(sol.model, F_d, val_arcs)
        return cache[logM]

    grid = np.linspace(math.log(lo), math.log(hi), n_scan)
    vals = np.array([evaluate(g) for g in grid])
    finite = np.isfinite(vals)
    if not np.any(finite):
        raise BepError("no feasible bound in the cross-validation bracket")
    vmin = np.min(vals[finite])
    vmax = np.max(vals[finite])
    if vmax - vmin <= 1e-12 * (1.0 + vmin):
        log.warning("flat cross-validation curve; returning smallest feasible bound")
        return math.exp(grid[int(np.flatnonzero(finite)[0])])

    k = int(np.argmin(np.where(finite, vals, np.inf)))
    if k == n_scan - 1:
        return math.exp(grid[k])
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_scan - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    while b - a > rtol:
        if evaluate(c) <= evaluate(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best = min([grid[k], c, d], key=lambda g: (evaluate(g), g))
    return math.exp(best)


def _intervals(part) -> list[tuple[float, float]]:
    """One ``(a, b)`` pair or a sequence of them, as a list of float pairs."""
    arr = np.asarray(part, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"bad interval specification {part!r}")
    return [(float(a), float(b)) for a, b in arr]


def _overlap_any(intervals) -> bool:
    merged = _merge(list(intervals))
    total = sum(b - a for a, b in merged)
    return total < sum(b - a for a, b in intervals) - 1e-12


# ----------------------------------------------------------------------------
# interior evaluation and diagnostics
# ----------------------------------------------------------------------------


def evaluate_interior(model: LaurentModel, point) -> tuple[np.ndarray, np.ndarray]:
    """``f`` and ``grad Re f`` at points ``(r, z)`` strictly inside the annulus.

    ``Im f`` uses the principal branch of ``Log`` when ``b0 != 0``.
    """
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    g = model.geometry
    w = (pts[:, 0] - g.center[0]) + 1j * (pts[:, 1] - g.center[1])
    rad = np.abs(w)
    if np.any(rad <= g.rho_inner) or np.any(rad >= g.rho_outer):
        raise ValueError("point outside the open annulus")
    zeta = w / g.rho_outer
    n = np.arange(-model.degree, model.degree + 1)
    powers = zeta[:, None] ** n[None, :]
    f = powers @ model.coeffs
    df = (powers / zeta[:, None]) @ (n * model.coeffs) / g.rho_outer
    if model.log_coeff:
        f = f + model.log_coeff * np.log(zeta)
        df = df + model.log_coeff / w
    grad = np.column_stack([df.real, -df.imag])
    if np.ndim(point) == 1:
        return f[0], grad[0]
    return f, grad


def inner_prediction(model: LaurentModel, theta) -> tuple[np.ndarray, np.ndarray]:
    """``u`` and ``du/drho`` on the inner circle (drho points away from the center)."""
    g = model.geometry
    theta = np.asarray(theta, dtype=float)
    u = model.trace(INNER, theta).real
    zeta = g.ratio * np.exp(1j * theta)
    n = np.arange(-model.degree, model.degree + 1)
    df = ((zeta[:, None] ** (n[None, :] - 1)) @ (n * model.coeffs)) / g.rho_outer
    if model.log_coeff:
        df = df + model.log_coeff / (g.rho_inner * np.exp(1j * theta))
    e_r = np.exp(1j * theta)
    du_drho = np.real(df * e_r)
    return u, du_drho


def omega_transform_residual(
    u: Callable, v: Callable, sigma: Conductivity, points, h: float | None = None
) -> float:
    """``max |dbar(omega) - alpha conj(omega)|`` with ``omega = sigma^(1/2) u + i sigma^(-1/2) v``.

    ``alpha = dbar log sigma^(1/2)`` and ``dbar = (d_r + i d_z) / 2``; all
    derivatives by central differences with step ``h`` (default ``1e-5``
    times the diameter of the point set, or ``1e-5`` for a single point).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if h is None:
        diam = float(np.max(np.ptp(pts, axis=0))) if len(pts) > 1 else 1.0
        h = 1e-5 * (diam if diam > 0 else 1.0)
    r, z = pts[:, 0], pts[:, 1]

    def omega(rr, zz):
        s = sigma(rr, zz)
        return np.sqrt(s) * u(rr, zz) + 1j * v(rr, zz) / np.sqrt(s)

    def half_log_sigma(rr, zz):
        return 0.5 * np.log(sigma(rr, zz))

    def dbar(fn):
        d_r = (fn(r + h, z) - fn(r - h, z)) / (2 * h)
        d_z = (fn(r, z + h) - fn(r, z - h)) / (2 * h)
        return 0.5 * (d_r + 1j * d_z)

    alpha = dbar(half_log_sigma)
    res = dbar(omega) - alpha * np.conj(omega(r, z))
    return float(np.max(np.abs(res)))


def real_part_norm_constant(geometry: AnnulusGeometry, degree: int, with_log: bool = True) -> float:
    """Smallest ``||Re f|| / ||f||`` over the full boundary with ``a_0`` and ``b0`` real.

    Discrete counterpart of the equivalence between the trace norm of ``f``
    and the boundary norm of its real part.
    """
    tags, theta, w = arc_quadrature(((OUTER, (0.0, TWO_PI)), (INNER, (0.0, TWO_PI))))
    Br = _real_form(_basis_matrix(geometry, degree, tags, theta))
    keep = np.ones(Br.shape[1], dtype=bool)
    keep[2 * degree + 1] = False  # Im a_0
    Br = Br[:, keep]
    if with_log:
        log_col = _log_real(geometry, tags) + 1j * theta
        Br = np.column_stack([Br, log_col])
    full = np.real((Br.conj().T * w) @ Br)
    re = (Br.real.T * w) @ Br.real
    ev = sla.eigh(re, full, eigvals_only=True)
    return float(math.sqrt(max(ev[0], 0.0)))


def write_bep_report(solutions, path) -> None:
    """CSV with columns ``N,lambda,error_I,constraint_J,M``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "lambda", "error_I", "constraint_J", "M"])
        for s in solutions:
            w.writerow([s.model.degree, repr(s.lam), repr(s.error_I), repr(s.constraint_J), repr(s.M)])


def read_bep_report(path) -> list[dict]:
    with Path(path).open("r", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"N": int(r["N"]), "lambda": float(r["lambda"]), "error_I": float(r["error_I"]),
         "constraint_J": float(r["constraint_J"]), "M": float(r["M"])}
        for r in rows
    ]
