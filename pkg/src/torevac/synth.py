"""Synthetic boundary measurements with known ground truth.

Three generators:

* :func:`manufactured_dataset` picks an inner curve, solves the
  Dirichlet-Dirichlet problem on a fine mesh and samples ``u0`` and the
  consistent ``du/dn`` on the outer circle.
* :func:`filament_dataset` uses the exact vacuum flux of a circular
  current filament, so ``u0``, ``u1`` and every level line are known in
  closed form.
* :func:`laurent_dataset` samples the real part of a Laurent model and
  its radial derivative, the harmonic test case of trace completion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ellipe, ellipk

from .boundary_data import (
    DEFAULT_CENTER,
    DEFAULT_RADIUS,
    TWO_PI,
    BoundarySamples,
    Conductivity,
    fit_periodic_spline,
)
from .fem import _sigma_at, boundary_flux, outer_quadrature, solve_state_dirichlet
from .hardy import AnnulusGeometry, LaurentModel
from .mesh import GAMMA_E, ClosedCurve, OuterCircle, generate_mesh


def quadratic_u0(center=DEFAULT_CENTER, a: float = -0.2, b: float = -0.5, offset: float = 0.0) -> Callable:
    """``u0 = offset + a x^2 + b y^2`` with ``(x, y)`` relative to ``center``."""

    def u0(r, z):
        return offset + a * (np.asarray(r) - center[0]) ** 2 + b * (np.asarray(z) - center[1]) ** 2

    return u0


def star_curve(center=DEFAULT_CENTER, radius: float = 0.45, a2: float = 0.15, b3: float = 0.08, n: int = 256):
    """``rho(theta) = radius (1 + a2 cos 2 theta + b3 sin 3 theta)``."""
    return ClosedCurve.polar(center, lambda t: radius * (1.0 + a2 * np.cos(2 * t) + b3 * np.sin(3 * t)), n)


def _add_noise(values: np.ndarray, level: float, rng) -> np.ndarray:
    if level == 0.0:
        return values
    scale = float(np.sqrt(np.mean(values**2)))
    return values + level * scale * rng.standard_normal(values.shape)


def sample_angles(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


@dataclass(frozen=True, eq=False)
class ManufacturedTruth:
    samples: BoundarySamples
    curve: ClosedCurve
    c: float


def manufactured_dataset(
    truth: ClosedCurve,
    sigma: Conductivity,
    h: float,
    n_samples: int = 256,
    u0_fn: Callable | None = None,
    c: float = 0.0,
    noise: float = 0.0,
    seed: int | None = None,
    center=DEFAULT_CENTER,
    radius: float = DEFAULT_RADIUS,
) -> ManufacturedTruth:
    """Measurements of the Dirichlet-Dirichlet solution between the outer circle and ``truth``.

    ``du/dn`` is the consistent flux density divided by ``sigma`` at the
    outer mesh nodes, resampled at ``n_samples`` uniform angles by a
    periodic spline.  ``noise`` adds seeded Gaussian perturbations with
    standard deviation ``noise`` times the RMS of each column.
    """
    u0_fn = u0_fn or quadratic_u0(center)
    cx, cz = center

    def u0_theta(th):
        return u0_fn(cx + radius * np.cos(th), cz + radius * np.sin(th))

    mesh = generate_mesh(OuterCircle(center, radius), truth, h)
    u = solve_state_dirichlet(mesh, sigma, u0_theta, c)
    flux = boundary_flux(mesh, sigma, u, GAMMA_E)
    ide = mesh.loop(GAMMA_E)
    dn = flux.density / _sigma_at(sigma, mesh.nodes[ide])
    th_nodes = outer_quadrature(mesh).node_theta[ide]
    spline = fit_periodic_spline(th_nodes, dn)
    theta = sample_angles(n_samples)
    rng = np.random.default_rng(seed)
    u0 = _add_noise(u0_theta(theta), noise, rng)
    u1 = _add_noise(spline(theta), noise, rng)
    return ManufacturedTruth(BoundarySamples(theta, u0, u1, center, radius), truth, c)


# ----------------------------------------------------------------------------
# current filament
# ----------------------------------------------------------------------------


def filament_flux(r, z, r0: float, z0: float) -> np.ndarray:
    """Flux function of a unit circular filament at ``(r0, z0)``.

    ``psi = sqrt(r r0) ((2 - k^2) K(k) - 2 E(k)) / k`` with
    ``k^2 = 4 r r0 / ((r + r0)^2 + (z - z0)^2)``; it satisfies
    ``div((1/r) grad psi) = 0`` away from the filament.
    """
    r = np.asarray(r, dtype=float)
    dz = np.asarray(z, dtype=float) - z0
    m = 4.0 * r * r0 / ((r + r0) ** 2 + dz**2)
    k = np.sqrt(m)
    return np.sqrt(r * r0) * ((2.0 - m) * ellipk(m) - 2.0 * ellipe(m)) / k


def filament_gradient(r, z, r0: float, z0: float) -> np.ndarray:
    """``(d psi/dr, d psi/dz)`` of :func:`filament_flux`, shape ``(..., 2)``."""
    r = np.asarray(r, dtype=float)
    dz = np.asarray(z, dtype=float) - z0
    s = (r + r0) ** 2 + dz**2
    d = (r0 - r) ** 2 + dz**2
    m = 4.0 * r * r0 / s
    K, E = ellipk(m), ellipe(m)
    sq = np.sqrt(s)
    B_r = dz / (r * sq) * (-K + (r0**2 + r**2 + dz**2) / d * E)
    B_z = 1.0 / sq * (K + (r0**2 - r**2 - dz**2) / d * E)
    return np.stack([r * B_z, -r * B_r], axis=-1)


@dataclass(frozen=True, eq=False)
class FilamentTruth:
    """``u = scale * psi + offset`` with the filament at ``position``."""

    samples: BoundarySamples
    limiter: ClosedCurve
    c: float
    contact_point: np.ndarray
    position: tuple[float, float]
    scale: float
    offset: float

    def u(self, r, z) -> np.ndarray:
        return self.scale * filament_flux(r, z, *self.position) + self.offset

    def grad(self, r, z) -> np.ndarray:
        return self.scale * filament_gradient(r, z, *self.position)


def _dense(curve: ClosedCurve, spacing: float) -> np.ndarray:
    pts = curve.points
    out = []
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        m = max(1, int(np.ceil(np.linalg.norm(q - p) / spacing)))
        out.append(p + (np.arange(m)[:, None] / m) * (q - p))
    return np.vstack(out)


def filament_dataset(
    position=(2.45, 0.05),
    limiter: ClosedCurve | None = None,
    c_true: float = 0.15,
    outer_max: float = 0.0,
    n_samples: int = 256,
    noise: float = 0.0,
    seed: int | None = None,
    center=DEFAULT_CENTER,
    radius: float = DEFAULT_RADIUS,
) -> FilamentTruth:
    """Exact measurements of a filament flux scaled so that ``max_limiter u = c_true``.

    The offset puts ``max u0 = outer_max`` on the outer circle.  The
    limiter defaults to a 128-gon of radius 0.75 about ``center``.
    """
    if limiter is None:
        limiter = ClosedCurve.circle(center, 0.75, 128)
    r0, z0 = position
    theta = sample_angles(n_samples)
    pts = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    # max over a fine sampling of the outer circle, not just the measurement angles
    fine = sample_angles(8192)
    psi_outer = filament_flux(center[0] + radius * np.cos(fine), center[1] + radius * np.sin(fine), r0, z0).max()
    lim_pts = _dense(limiter, 1e-4)
    psi_lim = filament_flux(lim_pts[:, 0], lim_pts[:, 1], r0, z0)
    k = int(np.argmax(psi_lim))
    if not psi_lim[k] > psi_outer:
        raise ValueError("limiter flux maximum does not exceed the outer-wall maximum")
    scale = (c_true - outer_max) / (psi_lim[k] - psi_outer)
    offset = outer_max - scale * psi_outer
    u0 = scale * filament_flux(pts[:, 0], pts[:, 1], r0, z0) + offset
    g = scale * filament_gradient(pts[:, 0], pts[:, 1], r0, z0)
    normals = np.column_stack([np.cos(theta), np.sin(theta)])
    u1 = np.sum(g * normals, axis=1)
    rng = np.random.default_rng(seed)
    u0 = _add_noise(u0, noise, rng)
    u1 = _add_noise(u1, noise, rng)
    samples = BoundarySamples(theta, u0, u1, center, radius)
    return FilamentTruth(samples, limiter, float(c_true), lim_pts[k], (float(r0), float(z0)), float(scale), float(offset))


# ----------------------------------------------------------------------------
# harmonic Laurent model
# ----------------------------------------------------------------------------


def random_laurent_model(geometry: AnnulusGeometry, degree: int = 5, decay: float = 0.6, b0: float = 0.0, seed: int | None = None):
    """Laurent model with ``a_n ~ (N(0,1) + i N(0,1)) decay^|n|``."""
    rng = np.random.default_rng(seed)
    n = np.arange(-degree, degree + 1)
    a = (rng.standard_normal(n.size) + 1j * rng.standard_normal(n.size)) * decay ** np.abs(n)
    return LaurentModel(geometry, a, float(b0))


def laurent_dataset(model: LaurentModel, n_samples: int = 256, noise: float = 0.0, seed: int | None = None) -> BoundarySamples:
    """``u0 = Re f`` and ``u1 = d(Re f)/d rho`` on the outer circle of ``model.geometry``."""
    g = model.geometry
    theta = sample_angles(n_samples)
    N = model.degree
    n = np.arange(-N, N + 1)
    e = np.exp(1j * np.outer(theta, n))
    u0 = np.real(e @ model.coeffs)
    # on rho = rho_outer: d/d rho of zeta^n is n zeta^n / rho_outer, of b0 log zeta is b0 / rho_outer
    u1 = (np.real(e @ (n * model.coeffs)) + model.log_coeff) / g.rho_outer
    rng = np.random.default_rng(seed)
    u0 = _add_noise(u0, noise, rng)
    u1 = _add_noise(u1, noise, rng)
    return BoundarySamples(theta, u0, u1, g.center, g.rho_outer)
