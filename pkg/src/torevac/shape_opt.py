"""Shape-gradient descent for the inner free boundary.

The unknown is the inner loop ``GAMMA_P`` of the mesh, on which the flux
takes a prescribed constant.  Two least-squares misfits on ``GAMMA_E`` are
supported:

``dirichlet``
    state with Neumann data ``u1`` on ``GAMMA_E``; ``J = int (u - u0)^2``.
``neumann``
    state with Dirichlet data ``u0`` on ``GAMMA_E``; ``J = int (du/dn - u1)^2``.

For a deformation field ``V`` the shape derivative is a boundary integral
over ``GAMMA_P`` of the product of the state and adjoint fluxes times
``V . n``, with ``n`` the outward normal of the mesh domain (pointing into
the hole).  The descent field solves an ``H^1`` problem with that integral
as load, so ``dJ(V) = -||V||^2_{H^1}`` holds for the discrete quantities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .boundary_data import BoundarySamples, Conductivity
from .errors import ConfigError, InvertedElementError, LevelSetError, MeshError, StagnationError
from .fem import (
    ScalarField,
    SparseSpdSystem,
    _gradients,
    assemble_weak_form,
    boundary_flux,
    boundary_vector_load,
    extension_system,
    flux_balance,
    h1_norm_sq,
    max_principle_violation,
    outer_quadrature,
    solve_adjoint,
    solve_adjoint_neumann,
    solve_extension,
    solve_state_dirichlet,
    solve_state_mixed,
    _sigma_at,
)
from .mesh import (
    GAMMA_E,
    GAMMA_P,
    ClosedCurve,
    Mesh,
    OuterCircle,
    boundary_geometry,
    deform,
    generate_mesh,
    needs_remesh,
    quality,
)

log = logging.getLogger(__name__)

DIRICHLET_MISFIT = "dirichlet"
NEUMANN_MISFIT = "neumann"


@dataclass(frozen=True)
class OptimizationConfig:
    """Settings of the descent loop.

    ``epsilon_stop`` is relative to the initial misfit: the loop stops when
    ``|J_{k+1} - J_k| < epsilon_stop * J_0``.  ``max_displacement`` caps the
    largest nodal move of a trial step, in units of ``h``.
    """

    criterion: str = DIRICHLET_MISFIT
    c: float = 0.0
    h: float = 0.03
    epsilon_stop: float = 1e-8
    max_iters: int = 200
    t0: float | None = None
    beta: float = 0.5
    armijo: float = 1e-4
    t_min: float = 1e-10
    max_displacement: float = 0.5
    smooth_every: int = 10
    remesh_min_angle: float = 10.0
    remesh_edge_ratio: float = 10.0
    neumann_convention: str = "proof"

    def __post_init__(self):
        if self.criterion not in (DIRICHLET_MISFIT, NEUMANN_MISFIT):
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        for name in ("h", "epsilon_stop", "t_min", "max_displacement", "remesh_min_angle", "remesh_edge_ratio"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.t0 is not None and not self.t0 > 0:
            raise ConfigError("t0 must be positive")
        if self.max_iters < 0 or self.smooth_every < 0:
            raise ConfigError("max_iters and smooth_every must be non-negative")
        if not 0.0 <= self.armijo < 1.0:
            raise ConfigError("armijo must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class State:
    mesh: Mesh
    u: ScalarField
    J: float
    stiffness: object


@dataclass(frozen=True, eq=False)
class GradientDensity:
    """Nodal shape-gradient density on ``GAMMA_P``.

    ``g`` is the product of state and adjoint normal derivatives weighted
    so that ``dJ(V) = int g (V . n) ds``; ``load[i]`` is that integral's
    derivative with respect to the displacement of node ``i``.
    """

    nodes: np.ndarray
    g: np.ndarray
    normals: np.ndarray
    load: np.ndarray

    @property
    def direction(self) -> np.ndarray:
        """Pointwise steepest-descent vector ``-g n`` at the loop nodes."""
        return -self.g[:, None] * self.normals

    def derivative(self, V) -> float:
        V = np.asarray(getattr(V, "values", V), dtype=float)
        return float(np.sum(self.load * V))


class ShapeProblem:
    """Misfit and gradient evaluation for fixed data, conductivity and configuration."""

    def __init__(
        self, u0: Callable, u1: Callable, sigma: Conductivity, config: OptimizationConfig, check_flux: bool = False
    ):
        self.u0 = u0
        self.u1 = u1
        self.sigma = sigma
        self.config = config
        self.n_solves = 0
        self.check_flux = check_flux
        self.flux_checks: list = []

    def state(self, mesh: Mesh) -> State:
        K = assemble_weak_form(mesh, self.sigma)
        cfg = self.config
        self.n_solves += 1
        if cfg.criterion == DIRICHLET_MISFIT:
            u = solve_state_mixed(mesh, self.sigma, self.u1, cfg.c, cfg.neumann_convention, stiffness=K)
            J = evaluate_J(u, self.u0)
        else:
            u = solve_state_dirichlet(mesh, self.sigma, self.u0, cfg.c, stiffness=K)
            J = evaluate_J_neumann(boundary_flux(mesh, self.sigma, u, GAMMA_E, K), self.u1, self.sigma)
        if self.check_flux:
            total, scale = flux_balance(mesh, self.sigma, u, K)
            self.flux_checks.append((total, scale, max_principle_violation(u)))
        return State(mesh, u, J, K)

    def J(self, mesh: Mesh) -> float:
        return self.state(mesh).J

    def adjoint(self, st: State) -> ScalarField:
        if self.config.criterion == DIRICHLET_MISFIT:
            return solve_adjoint(st.mesh, self.sigma, st.u, self.u0, stiffness=st.stiffness)
        return solve_adjoint_neumann(st.mesh, self.sigma, st.u, self.u1, stiffness=st.stiffness)

    def gradient(self, st: State) -> GradientDensity:
        p = self.adjoint(st)
        sign = 1.0 if self.config.criterion == DIRICHLET_MISFIT else -1.0
        return shape_gradient(st.mesh, self.sigma, st.u, p, sign=sign, stiffness=st.stiffness)


def evaluate_J(u: ScalarField, u0: Callable) -> float:
    """``int_{GAMMA_E} (u - u0)^2 ds`` by two-point Gauss per arc."""
    q = outer_quadrature(u.mesh)
    d = q.interpolate(u.values) - np.asarray(u0(q.theta), dtype=float)
    return q.integrate(d * d)


def evaluate_J_neumann(flux, u1: Callable, sigma: Conductivity | None = None) -> float:
    """``int_{GAMMA_E} (du/dn - u1)^2 ds`` from a consistent-flux record.

    ``du/dn`` is the flux density divided by ``sigma`` at the loop nodes
    (``sigma = None`` means the density already is ``du/dn``).
    """
    if flux.tag != GAMMA_E:
        raise ValueError("Neumann misfit needs the GAMMA_E flux")
    q = outer_quadrature(flux.mesh)
    dn = flux.density
    if sigma is not None:
        dn = dn / _sigma_at(sigma, flux.mesh.nodes[flux.nodes])
    # loop order of the flux record matches the quadrature edge order
    vals = np.column_stack([dn, np.roll(dn, -1)])
    at_gauss = np.einsum("egk,ek->eg", q.phi, vals)
    d = at_gauss - np.asarray(u1(q.theta), dtype=float)
    return q.integrate(d * d)


def shape_gradient(
    mesh: Mesh,
    sigma: Conductivity,
    u: ScalarField,
    p: ScalarField,
    sign: float = 1.0,
    stiffness=None,
) -> GradientDensity:
    """``g = sign * (sigma du/dn)(sigma dp/dn) / sigma`` at the ``GAMMA_P`` nodes.

    Both normal derivatives come from consistent fluxes.  ``sign = +1`` for
    the Dirichlet misfit, ``-1`` for the Neumann misfit.
    """
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    fu = boundary_flux(mesh, sigma, u, GAMMA_P, K)
    fp = boundary_flux(mesh, sigma, p, GAMMA_P, K)
    ids = mesh.loop(GAMMA_P)
    s = _sigma_at(sigma, mesh.nodes[ids])
    g = sign * fu.density * fp.density / s
    load = boundary_vector_load(mesh, GAMMA_P, g)
    bg = boundary_geometry(mesh, GAMMA_P)
    # nodal normal: average of adjacent edge normals
    nn = bg.normals + np.roll(bg.normals, 1, axis=0)
    nn /= np.linalg.norm(nn, axis=1)[:, None]
    return GradientDensity(ids, g, nn, load)


# ----------------------------------------------------------------------------
# history
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    J: float
    t: float
    min_angle: float
    grad_norm: float
    dJ: float
    h1_norm_sq: float
    epoch: int
    kind: str
    curve: np.ndarray


@dataclass(eq=False)
class OptimizationHistory:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    final_mesh: Mesh | None = None
    final_state: ScalarField | None = None
    flux_checks: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: IterationRecord) -> None:
        if not math.isfinite(rec.J):
            raise ValueError("non-finite misfit in history")
        self.records.append(rec)

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def descent_records(self) -> list:
        return [r for r in self.records if r.kind == "descent"]

    def epochs(self) -> list[np.ndarray]:
        """Misfit sequences between remeshes."""
        out: dict[int, list] = {}
        for r in self.records:
            out.setdefault(r.epoch, []).append(r.J)
        return [np.array(v) for v in out.values()]

    def is_monotone(self) -> bool:
        return all(np.all(np.diff(j) < 0) for j in self.epochs())


def save_history(history: OptimizationHistory, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("iter,J,t,min_angle,grad_norm\n")
        for r in history.records:
            fh.write(f"{r.iteration},{r.J!r},{r.t!r},{r.min_angle!r},{r.grad_norm!r}\n")


def load_history(path) -> list[dict]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    keys = ("iter", "J", "t", "min_angle", "grad_norm")
    return [dict(zip(keys, (int(r[0]), *map(float, r[1:])))) for r in rows]


def save_snapshots(history: OptimizationHistory, path) -> None:
    """Point-list CSV ``iter,r,z`` with one block of rows per record."""
    with Path(path).open("w") as fh:
        fh.write("iter,r,z\n")
        for rec in history.records:
            for x, y in rec.curve.tolist():
                fh.write(f"{rec.iteration},{x!r},{y!r}\n")


def save_curve(curve: ClosedCurve, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("r,z\n")
        fh.writelines(f"{x!r},{y!r}\n" for x, y in curve.points.tolist())


def load_curve(path) -> ClosedCurve:
    path = Path(path)
    try:
        pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise OSError(f"{path}: cannot read curve file") from exc
    except ValueError as exc:
        raise MeshError(f"{path}: malformed curve file ({exc})") from None
    return ClosedCurve.from_points(pts[:, :2])


# ----------------------------------------------------------------------------
# descent
# ----------------------------------------------------------------------------


def _step_cap(V: np.ndarray, config: OptimizationConfig) -> float:
    vmax = float(np.max(np.linalg.norm(V, axis=1)))
    if vmax == 0.0:
        return 0.0
    return config.max_displacement * config.h / vmax


def descent_step(
    problem: ShapeProblem,
    mesh: Mesh,
    V,
    J_current: float,
    config: OptimizationConfig | None = None,
    dJ: float | None = None,
    t0: float | None = None,
) -> tuple[Mesh, float, float, State]:
    """Backtracking line search along ``V``.

    Trial steps start at ``t0`` (default ``config.t0`` or the displacement
    cap) and shrink by ``beta`` until the mesh stays valid and
    ``J_new <= J_current + armijo * t * dJ`` with ``J_new < J_current``.
    """
    config = config or problem.config
    V = np.asarray(getattr(V, "values", V), dtype=float)
    cap = _step_cap(V, config)
    if cap == 0.0:
        raise StagnationError("zero descent field")
    if t0 is None:
        t0 = config.t0 if config.t0 is not None else cap
    t = float(t0)
    slope = 0.0 if dJ is None else min(float(dJ), 0.0)
    while t >= config.t_min:
        try:
            trial = deform(mesh, V, t)
        except InvertedElementError:
            t *= config.beta
            continue
        st = problem.state(trial)
        if st.J < J_current and st.J <= J_current + config.armijo * t * slope:
            return trial, t, st.J, st
        t *= config.beta
    raise StagnationError(f"no acceptable step above t_min={config.t_min:g}")


def smooth_boundary(problem: ShapeProblem, st: State, system=None) -> State | None:
    """Three-point moving average on ``GAMMA_P`` moved into the mesh by an ``H^1`` lift.

    Returns the new state, or ``None`` if the move inverts an element or
    increases the misfit.
    """
    mesh = st.mesh
    ids = mesh.loop(GAMMA_P)
    pts = mesh.nodes[ids]
    target = (np.roll(pts, 1, axis=0) + pts + np.roll(pts, -1, axis=0)) / 3.0
    disp = target - pts
    A = (system or extension_system(mesh)).matrix
    ide = mesh.loop(GAMMA_E)
    lift = SparseSpdSystem(
        A,
        np.zeros((mesh.n_nodes, 2)),
        np.concatenate([ide, ids]),
        np.vstack([np.zeros((len(ide), 2)), disp]),
    )
    D = lift.solve()
    try:
        new = deform(mesh, D, 1.0)
        ClosedCurve(new.nodes[ids])
    except (InvertedElementError, MeshError):
        return None
    trial = problem.state(new)
    if trial.J > st.J:
        return None
    return trial


def _record(history, it, st, t, grad_norm, dJ, h1, epoch, kind):
    history.append(
        IterationRecord(
            it, st.J, t, quality(st.mesh).min_angle, grad_norm, dJ, h1, epoch, kind,
            st.mesh.nodes[st.mesh.loop(GAMMA_P)].copy(),
        )
    )


def optimize(
    data: BoundarySamples,
    sigma: Conductivity,
    config: OptimizationConfig,
    initial: ClosedCurve,
    check_flux: bool = False,
) -> tuple[ClosedCurve, OptimizationHistory]:
    """Descent loop from ``initial``; returns the final ``GAMMA_P`` and the history.

    Stops when ``|J_{k+1} - J_k| < epsilon_stop * J_0``, after
    ``max_iters`` accepted steps, or when the line search stagnates (the
    history is kept and ``stop_reason`` says which).  With ``check_flux``
    each accepted state records ``(total flux, flux scale, max principle
    violation)`` in ``history.flux_checks`` for every state solve,
    line-search trials included.
    """
    u0, u1 = data.splines()
    outer = OuterCircle(data.circle_center, data.circle_radius)
    mesh = generate_mesh(outer, initial, config.h)
    problem = ShapeProblem(u0, u1, sigma, config, check_flux=check_flux)
    return run_descent(problem, mesh)


def run_descent(problem: ShapeProblem, mesh: Mesh) -> tuple[ClosedCurve, OptimizationHistory]:
    config = problem.config
    history = OptimizationHistory(flux_checks=problem.flux_checks)
    st = problem.state(mesh)
    J0 = st.J
    epoch = 0
    _record(history, 0, st, 0.0, 0.0, 0.0, 0.0, epoch, "initial")
    eps = config.epsilon_stop * J0
    t_prev = None
    it = 0
    system = extension_system(st.mesh)
    history.stop_reason = "max_iters"
    while it < config.max_iters:
        if J0 == 0.0:
            history.stop_reason = "zero misfit"
            break
        grad = problem.gradient(st)
        V = solve_extension(st.mesh, grad.load, system)
        h1 = h1_norm_sq(V, system)
        dJ = grad.derivative(V)
        cap = _step_cap(V.values, config)
        t0 = config.t0 if config.t0 is not None else cap
        if t_prev is not None:
            t0 = min(t_prev / config.beta, cap)
        try:
            new_mesh, t, J_new, new_st = descent_step(problem, st.mesh, V, st.J, config, dJ=dJ, t0=t0)
        except StagnationError:
            history.stop_reason = "stagnation"
            break
        it += 1
        dJ_step = st.J - J_new
        st = new_st
        t_prev = t
        _record(history, it, st, t, math.sqrt(h1), dJ, h1, epoch, "descent")
        if abs(dJ_step) < eps:
            history.stop_reason = "converged"
            break
        if config.smooth_every and it % config.smooth_every == 0:
            sm = smooth_boundary(problem, st, system)
            if sm is not None and sm.J < st.J:
                st = sm
                _record(history, it, st, 0.0, 0.0, 0.0, 0.0, epoch, "smooth")
        if needs_remesh(st.mesh, config.remesh_min_angle, config.remesh_edge_ratio):
            epoch += 1
            fresh = generate_mesh(st.mesh.outer, st.mesh.curve(GAMMA_P), config.h)
            st = problem.state(fresh)
            t_prev = None
            _record(history, it, st, 0.0, 0.0, 0.0, 0.0, epoch, "remesh")
            log.info("remeshed at iteration %d (J=%g)", it, st.J)
        system = extension_system(st.mesh)
    history.final_mesh = st.mesh
    history.final_state = st.u
    return st.mesh.curve(GAMMA_P), history


# ----------------------------------------------------------------------------
# level sets, constant recovery, field post-processing
# ----------------------------------------------------------------------------


def extract_level_set(u: ScalarField, value: float) -> ClosedCurve:
    """The single closed contour ``{u = value}`` of a P1 field, counterclockwise."""
    mesh = u.mesh
    vals = u.values
    if not vals.min() < value < vals.max():
        raise LevelSetError(f"level {value:g} outside the field range [{vals.min():g}, {vals.max():g}]")
    above = vals >= value
    tri = mesh.triangles
    n = mesh.n_nodes
    points: dict[int, np.ndarray] = {}
    adj: dict[int, list[int]] = {}
    for t in tri:
        cut = []
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            if above[a] != above[b]:
                key = min(a, b) * n + max(a, b)
                if key not in points:
                    s = (value - vals[a]) / (vals[b] - vals[a])
                    points[key] = mesh.nodes[a] + s * (mesh.nodes[b] - mesh.nodes[a])
                cut.append(key)
        if len(cut) == 2:
            adj.setdefault(cut[0], []).append(cut[1])
            adj.setdefault(cut[1], []).append(cut[0])
    if not adj:
        raise LevelSetError(f"no crossing of level {value:g}")
    if any(len(v) != 2 for v in adj.values()):
        raise LevelSetError(f"level {value:g} is not closed inside the mesh")
    unvisited = set(adj)
    loops = []
    while unvisited:
        start = unvisited.pop()
        loop = [start]
        prev, cur = start, adj[start][0]
        while cur != start:
            loop.append(cur)
            unvisited.discard(cur)
            a, b = adj[cur]
            prev, cur = cur, (b if a == prev else a)
        loops.append(loop)
    if len(loops) != 1:
        raise LevelSetError(f"level {value:g} has {len(loops)} closed components")
    pts = np.array([points[k] for k in loops[0]])
    # drop coincident neighbors (level through a node)
    keep = np.linalg.norm(pts - np.roll(pts, 1, axis=0), axis=1) > 1e-14
    return ClosedCurve.from_points(pts[keep])


def _densify(curve: ClosedCurve, h: float) -> np.ndarray:
    pts = curve.points
    out = []
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        m = max(1, math.ceil(np.linalg.norm(q - p) / h))
        out.append(p + (np.arange(m)[:, None] / m) * (q - p))
    return np.vstack(out)


@dataclass(frozen=True, eq=False)
class ConstantRecovery:
    c_est: float
    curve: ClosedCurve
    contact_point: np.ndarray
    outer_curve: ClosedCurve
    history: OptimizationHistory
    inside_limiter: bool
    contact_distance: float


def recover_constant_c(
    data: BoundarySamples,
    sigma: Conductivity,
    limiter: ClosedCurve,
    c1: float,
    config: OptimizationConfig,
    initial: ClosedCurve | None = None,
) -> ConstantRecovery:
    """Continuation in the level constant.

    Fits the free boundary for the overshoot level ``c1``, reads
    ``c_est = max u`` along the limiter (piecewise-linear sampling, first
    maximum wins) and extracts ``{u = c_est}`` from the converged field.
    """
    cfg = replace(config, c=c1)
    if initial is None:
        cen = np.asarray(data.circle_center)
        r_lim = float(np.min(np.linalg.norm(limiter.points - limiter.centroid, axis=1)))
        initial = ClosedCurve.circle(limiter.centroid if limiter.contains(limiter.centroid)[0] else cen, 0.5 * r_lim, 96)
    curve_c1, history = optimize(data, sigma, cfg, initial)
    mesh, u = history.final_mesh, history.final_state
    samples = _densify(limiter, cfg.h / 4)
    tri_id, bary = mesh.locate(samples)
    if np.any(tri_id < 0):
        raise LevelSetError("limiter leaves the computed vacuum region; c1 is too small")
    vals = np.sum(u.values[mesh.triangles[tri_id]] * bary, axis=1)
    k = int(np.argmax(vals))
    c_est = float(vals[k])
    if not c_est < c1:
        raise LevelSetError(f"limiter maximum {c_est:g} does not lie below c1={c1:g}")
    curve = extract_level_set(u, c_est)
    contact = samples[k]
    dist = float(curve.distance(contact[None, :])[0])
    inside = bool(np.all(limiter.contains(curve.points) | (limiter.distance(curve.points) <= cfg.h)))
    return ConstantRecovery(c_est, curve, contact, curve_c1, history, inside, dist)


def compute_B(u: ScalarField, mesh: Mesh | None = None) -> np.ndarray:
    """Per-triangle ``(B_r, B_z) = (-u_z / r, u_r / r)`` with ``r`` at the centroid."""
    mesh = mesh or u.mesh
    if np.any(mesh.nodes[:, 0] <= 0):
        raise ValueError("mesh has nodes with r <= 0")
    grads, _ = _gradients(mesh)
    gu = np.einsum("eik,ei->ek", grads, u.values[mesh.triangles])
    r = mesh.nodes[mesh.triangles][:, :, 0].mean(axis=1)
    return np.column_stack([-gu[:, 1] / r, gu[:, 0] / r])


def finite_difference_check(
    problem: ShapeProblem, mesh: Mesh, V, ts=(1e-3, 1e-4, 1e-5)
) -> tuple[float, np.ndarray]:
    """Analytic ``dJ(V)`` and the one-sided difference quotients at steps ``ts``."""
    V = np.asarray(getattr(V, "values", V), dtype=float)
    st = problem.state(mesh)
    grad = problem.gradient(st)
    dJ = grad.derivative(V)
    q = np.array([(problem.J(deform(mesh, V, t)) - st.J) / t for t in ts])
    return dJ, q
