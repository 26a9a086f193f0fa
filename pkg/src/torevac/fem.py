"""P1 finite elements for ``div(sigma grad u) = 0`` on a two-loop mesh.

Integrals over ``GAMMA_E`` use two-point Gauss rules on the true circular
arcs between consecutive boundary nodes (``ds = R d theta``), with P1 shape
functions taken linear in the arc parameter.  Data on ``GAMMA_E`` are
callables of the polar angle about the outer center.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary_data import TWO_PI, Conductivity
from .errors import SolverError
from .mesh import GAMMA_E, GAMMA_P, Mesh, boundary_geometry

log = logging.getLogger(__name__)

DIRECT_LIMIT = 200_000
RESIDUAL_TOL = 1e-10
NEUMANN_CONVENTIONS = ("proof", "conormal")

_GAUSS_S = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])


@dataclass(frozen=True, eq=False)
class ScalarField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError("scalar field needs one value per node")
        if not np.all(np.isfinite(v)):
            raise SolverError("scalar field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def on(self, tag: str) -> np.ndarray:
        return self.values[self.mesh.loop(tag)]


@dataclass(frozen=True, eq=False)
class VectorField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes, 2):
            raise ValueError("vector field needs one 2-vector per node")
        if not np.all(np.isfinite(v)):
            raise SolverError("vector field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "VectorField":
        return cls(mesh, np.zeros((mesh.n_nodes, 2)))


def save_field(field, path) -> None:
    """CSV rows ``node,value`` (scalar) or ``node,vx,vy`` (vector)."""
    vals = field.values
    with Path(path).open("w") as fh:
        if vals.ndim == 1:
            fh.write("node,value\n")
            fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(vals.tolist()))
        else:
            fh.write("node,vx,vy\n")
            fh.writelines(f"{i},{a!r},{b!r}\n" for i, (a, b) in enumerate(vals.tolist()))


def load_field(mesh: Mesh, path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(rows[:, 0])
    vals = rows[order, 1:]
    if vals.shape[1] == 1:
        return ScalarField(mesh, vals[:, 0])
    return VectorField(mesh, vals)


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------


def _gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """P1 basis gradients ``(m, 3, 2)`` and triangle areas."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / (2.0 * area)[:, None, None]
    return grads, area


def centroid_sigma(mesh: Mesh, sigma: Conductivity) -> np.ndarray:
    cen = mesh.nodes[mesh.triangles].mean(axis=1)
    s = np.asarray(sigma(cen[:, 0], cen[:, 1]), dtype=float) * np.ones(len(cen))
    if not np.all(s > 0) or not np.all(np.isfinite(s)):
        k = int(np.flatnonzero(~(s > 0) | ~np.isfinite(s))[0])
        raise ValueError(f"non-positive conductivity {s[k]:g} at triangle {k}")
    return s


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_weak_form(mesh: Mesh, sigma: Conductivity | None = None, coeff: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness ``K[i, j] = int sigma grad phi_i . grad phi_j`` (sigma at centroids)."""
    grads, area = _gradients(mesh)
    if coeff is None:
        coeff = centroid_sigma(mesh, sigma) if sigma is not None else np.ones(len(area))
    local = np.einsum("eik,ejk->eij", grads, grads) * (coeff * area)[:, None, None]
    return _scatter(mesh, local)


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    _, area = _gradients(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


# ----------------------------------------------------------------------------
# outer-circle quadrature
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OuterQuadrature:
    """Two-point Gauss rule per ``GAMMA_E`` arc.

    ``phi[e, g, k]`` is the value at Gauss point ``g`` of edge ``e`` of the
    shape function of the edge's ``k``-th node.
    """

    edges: np.ndarray
    theta: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    node_theta: np.ndarray
    arc_lengths: np.ndarray

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """Values of a P1 field at the Gauss points."""
        v = nodal[self.edges]
        return np.einsum("egk,ek->eg", self.phi, v)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))

    def load(self, values: np.ndarray, n_nodes: int) -> np.ndarray:
        """``int values * phi_i ds`` for every node ``i``."""
        out = np.zeros(n_nodes)
        contrib = np.einsum("eg,egk->ek", self.weights * values, self.phi)
        np.add.at(out, self.edges, contrib)
        return out


def outer_quadrature(mesh: Mesh) -> OuterQuadrature:
    cache = mesh.__dict__.get("_outer_quad")
    if cache is not None:
        return cache
    outer = mesh.outer
    if outer is None:
        raise SolverError("mesh has no outer circle description")
    cx, cz = outer.center
    R = outer.radius
    e = mesh.edges(GAMMA_E)
    pts = mesh.nodes
    node_theta = np.mod(np.arctan2(pts[:, 1] - cz, pts[:, 0] - cx), TWO_PI)
    t0 = node_theta[e[:, 0]]
    dt = np.mod(node_theta[e[:, 1]] - t0, TWO_PI)
    theta = t0[:, None] + dt[:, None] * _GAUSS_S[None, :]
    weights = R * dt[:, None] * _GAUSS_W[None, :]
    phi = np.stack([1.0 - _GAUSS_S, _GAUSS_S], axis=1)[None].repeat(len(e), axis=0)
    gp = np.stack([cx + R * np.cos(theta), cz + R * np.sin(theta)], axis=-1)
    q = OuterQuadrature(e, np.mod(theta, TWO_PI), gp, weights, phi, node_theta, R * dt)
    object.__setattr__(mesh, "_outer_quad", q)
    return q


def _sigma_at(sigma: Conductivity, pts: np.ndarray) -> np.ndarray:
    return np.asarray(sigma(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:-1])


def neumann_load(mesh: Mesh, sigma: Conductivity, u1: Callable, convention: str = "proof") -> np.ndarray:
    """``int_{GAMMA_E} w u1 phi_i`` with ``w = sigma`` (``proof``) or ``w = 1`` (``conormal``)."""
    if convention not in NEUMANN_CONVENTIONS:
        raise ValueError(f"unknown Neumann convention {convention!r}")
    q = outer_quadrature(mesh)
    vals = np.asarray(u1(q.theta), dtype=float)
    if convention == "proof":
        vals = vals * _sigma_at(sigma, q.points)
    return q.load(vals, mesh.n_nodes)


# ----------------------------------------------------------------------------
# linear systems
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class SparseSpdSystem:
    """``A x = b`` with ``x[constrained] = values`` eliminated symmetrically."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        n = self.matrix.shape[0]
        self.dimension = n
        self.constrained = np.asarray(self.constrained, dtype=np.int64)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        mask = np.ones(n, dtype=bool)
        mask[self.constrained] = False
        self.free = np.flatnonzero(mask)
        self._factor = None
        self._A_ff = None

    def asymmetry(self) -> float:
        A = self.matrix
        d = abs(A - A.T).max()
        return float(d / max(abs(A).max(), 1e-300))

    def reduced(self):
        if self._A_ff is None:
            A = self.matrix.tocsr()
            self._A_ff = A[self.free][:, self.free].tocsc()
            self._A_fc = A[self.free][:, self.constrained]
        return self._A_ff, self._A_fc

    def _solve_reduced(self, b: np.ndarray) -> np.ndarray:
        A_ff, _ = self.reduced()
        if A_ff.shape[0] <= DIRECT_LIMIT:
            if self._factor is None:
                try:
                    # SPD: symmetric ordering, no pivoting
                    self._factor = spla.splu(
                        A_ff,
                        permc_spec="MMD_AT_PLUS_A",
                        diag_pivot_thresh=0.0,
                        options={"SymmetricMode": True},
                    )
                except RuntimeError as exc:
                    raise SolverError(f"factorization failed: {exc}") from exc
            x = self._factor.solve(b)
        else:
            M = sp.diags(1.0 / A_ff.diagonal())
            cols = b if b.ndim == 2 else b[:, None]
            out = []
            for col in cols.T:
                xi, info = spla.cg(A_ff, col, rtol=RESIDUAL_TOL * 1e-2, atol=0.0, M=M, maxiter=20 * A_ff.shape[0])
                if info != 0:
                    raise SolverError(f"conjugate gradient did not converge (info={info})")
                out.append(xi)
            x = np.column_stack(out) if b.ndim == 2 else out[0]
        r = A_ff @ x - b
        scale = np.linalg.norm(b, axis=0) + np.linalg.norm((A_ff @ x), axis=0)
        res = np.linalg.norm(r, axis=0)
        if np.any(res > RESIDUAL_TOL * np.maximum(scale, 1e-300)) and np.any(scale > 0):
            raise SolverError(f"linear solve residual {np.max(res / np.maximum(scale, 1e-300)):.2e} above tolerance")
        return x

    def solve(self, rhs: np.ndarray | None = None, values: np.ndarray | None = None) -> np.ndarray:
        """Full solution vector; ``rhs``/``values`` may carry extra columns."""
        b = self.rhs if rhs is None else np.asarray(rhs, dtype=float)
        g = self.values if values is None else np.asarray(values, dtype=float)
        _, A_fc = self.reduced()
        bf = b[self.free] - A_fc @ g
        x = np.empty(b.shape)
        x[self.constrained] = g
        x[self.free] = self._solve_reduced(bf)
        return x


def _dirichlet_values(mesh: Mesh, tag: str, value) -> np.ndarray:
    ids = mesh.loop(tag)
    if callable(value):
        pts = mesh.nodes[ids]
        return np.asarray(value(pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(ids))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(len(ids), float(arr))
    if arr.shape != (len(ids),):
        raise ValueError(f"Dirichlet values on {tag} need {len(ids)} entries")
    return arr


def solve_state_mixed(
    mesh: Mesh,
    sigma: Conductivity,
    u1: Callable,
    c=0.0,
    convention: str = "proof",
    stiffness: sp.csr_matrix | None = None,
) -> ScalarField:
    """Neumann datum ``u1`` on ``GAMMA_E``, Dirichlet value ``c`` on ``GAMMA_P``.

    ``c`` is a constant, an array over the ``GAMMA_P`` loop, or a callable
    ``c(r, z)``.
    """
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    f = neumann_load(mesh, sigma, u1, convention)
    ids = mesh.loop(GAMMA_P)
    system = SparseSpdSystem(K, f, ids, _dirichlet_values(mesh, GAMMA_P, c))
    return ScalarField(mesh, system.solve())


def solve_state_dirichlet(
    mesh: Mesh, sigma: Conductivity, u0: Callable, c=0.0, stiffness: sp.csr_matrix | None = None
) -> ScalarField:
    """``u = u0(theta)`` on ``GAMMA_E`` and ``u = c`` on ``GAMMA_P``."""
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    qd = outer_quadrature(mesh)
    ide, idp = mesh.loop(GAMMA_E), mesh.loop(GAMMA_P)
    ue = np.asarray(u0(qd.node_theta[ide]), dtype=float) * np.ones(len(ide))
    ids = np.concatenate([ide, idp])
    vals = np.concatenate([ue, _dirichlet_values(mesh, GAMMA_P, c)])
    system = SparseSpdSystem(K, np.zeros(mesh.n_nodes), ids, vals)
    return ScalarField(mesh, system.solve())


def dirichlet_misfit_load(u: ScalarField, u0: Callable) -> np.ndarray:
    """Gradient of the discrete ``int_{GAMMA_E} (u - u0)^2`` with respect to nodal ``u``."""
    q = outer_quadrature(u.mesh)
    diff = q.interpolate(u.values) - np.asarray(u0(q.theta), dtype=float)
    return q.load(2.0 * diff, u.mesh.n_nodes)


def solve_adjoint(
    mesh: Mesh, sigma: Conductivity, u: ScalarField, u0: Callable, stiffness: sp.csr_matrix | None = None
) -> ScalarField:
    """``int sigma grad p . grad phi = int_{GAMMA_E} 2 (u - u0) phi``, ``p = 0`` on ``GAMMA_P``."""
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    f = dirichlet_misfit_load(u, u0)
    ids = mesh.loop(GAMMA_P)
    system = SparseSpdSystem(K, f, ids, np.zeros(len(ids)))
    return ScalarField(mesh, system.solve())


def solve_adjoint_neumann(
    mesh: Mesh,
    sigma: Conductivity,
    u: ScalarField,
    u1: Callable,
    stiffness: sp.csr_matrix | None = None,
) -> ScalarField:
    """Adjoint of ``int_{GAMMA_E} (du/dn - u1)^2`` for the Dirichlet-Dirichlet state.

    ``p = 2 (du/dn - u1) / sigma`` on ``GAMMA_E`` and ``p = 0`` on ``GAMMA_P``.
    """
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    flux = boundary_flux(mesh, sigma, u, GAMMA_E, stiffness=K)
    ide = mesh.loop(GAMMA_E)
    s_node = _sigma_at(sigma, mesh.nodes[ide])
    qd = outer_quadrature(mesh)
    dn = flux.density / s_node
    pe = 2.0 * (dn - np.asarray(u1(qd.node_theta[ide]), dtype=float)) / s_node
    idp = mesh.loop(GAMMA_P)
    system = SparseSpdSystem(
        K, np.zeros(mesh.n_nodes), np.concatenate([ide, idp]), np.concatenate([pe, np.zeros(len(idp))])
    )
    return ScalarField(mesh, system.solve())


# ----------------------------------------------------------------------------
# consistent boundary flux
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryFlux:
    """Consistent flux ``sigma du/dn`` (outward w.r.t. the mesh domain) on one loop.

    ``load[k]`` is the weak flux ``int sigma du/dn phi_k`` at loop node
    ``nodes[k]``; ``density`` is its ``L^2`` representative in the P1 trace
    space of the loop, so ``sum(load) == int density ds``.
    """

    mesh: Mesh
    tag: str
    nodes: np.ndarray
    load: np.ndarray
    density: np.ndarray
    lengths: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.load))

    @property
    def edge_values(self) -> np.ndarray:
        return 0.5 * (self.density + np.roll(self.density, -1))


def loop_mass_matrix(lengths: np.ndarray) -> sp.csr_matrix:
    """1-D P1 mass matrix of a closed loop with the given edge lengths."""
    n = len(lengths)
    i = np.arange(n)
    j = (i + 1) % n
    prev = np.roll(lengths, 1)
    diag = (lengths + prev) / 3.0
    off = lengths / 6.0
    M = sp.coo_matrix(
        (np.concatenate([diag, off, off]), (np.concatenate([i, i, j]), np.concatenate([i, j, i]))), shape=(n, n)
    )
    return M.tocsc()


def _loop_lengths(mesh: Mesh, tag: str) -> np.ndarray:
    if tag == GAMMA_E and mesh.outer is not None:
        return outer_quadrature(mesh).arc_lengths
    return boundary_geometry(mesh, tag).lengths


def boundary_flux(
    mesh: Mesh,
    sigma: Conductivity,
    field: ScalarField,
    tag: str,
    stiffness: sp.csr_matrix | None = None,
) -> BoundaryFlux:
    """Flux recovered from the discrete residual ``K u`` on the loop nodes.

    There are no volume sources, so ``(K u)_i`` is the weak boundary flux at
    every boundary node ``i``, whatever condition was imposed there.
    """
    ids = mesh.loop(tag)
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    r = (K @ field.values)[ids]
    lengths = _loop_lengths(mesh, tag)
    density = spla.spsolve(loop_mass_matrix(lengths), r)
    return BoundaryFlux(mesh, tag, ids, r, np.asarray(density), lengths)


def flux_balance(mesh: Mesh, sigma: Conductivity, field: ScalarField, stiffness=None) -> tuple[float, float]:
    """Total consistent flux over both loops and the flux scale ``sum |load|``."""
    K = assemble_weak_form(mesh, sigma) if stiffness is None else stiffness
    fe = boundary_flux(mesh, sigma, field, GAMMA_E, K)
    fp = boundary_flux(mesh, sigma, field, GAMMA_P, K)
    return fe.total + fp.total, float(np.sum(np.abs(fe.load)) + np.sum(np.abs(fp.load)))


def max_principle_violation(field: ScalarField) -> float:
    """Amount by which interior values leave the range of boundary values (0 if none)."""
    mesh = field.mesh
    b = np.concatenate([mesh.loop(t) for t in mesh.loops])
    lo, hi = field.values[b].min(), field.values[b].max()
    scale = max(abs(lo), abs(hi), 1e-300)
    v = field.values
    return float(max(lo - v.min(), v.max() - hi, 0.0) / scale)


# ----------------------------------------------------------------------------
# H1 extension of the shape gradient
# ----------------------------------------------------------------------------


def extension_system(mesh: Mesh) -> SparseSpdSystem:
    """``int grad V : grad phi + V . phi`` with ``V = 0`` on ``GAMMA_E``."""
    A = assemble_weak_form(mesh) + mass_matrix(mesh)
    ids = mesh.loop(GAMMA_E)
    return SparseSpdSystem(A.tocsr(), np.zeros(mesh.n_nodes), ids, np.zeros(len(ids)))


def boundary_vector_load(mesh: Mesh, tag: str, g: np.ndarray) -> np.ndarray:
    """``int_tag g n phi_i ds`` for a nodal scalar ``g`` on the loop (exact for P1 ``g``)."""
    bg = boundary_geometry(mesh, tag)
    ids = mesh.loop(tag)
    gi, gj = g, np.roll(g, -1)
    L = bg.lengths
    out = np.zeros((mesh.n_nodes, 2))
    wi = L * (2 * gi + gj) / 6.0
    wj = L * (gi + 2 * gj) / 6.0
    np.add.at(out, ids, wi[:, None] * bg.normals)
    np.add.at(out, np.roll(ids, -1), wj[:, None] * bg.normals)
    return out


def solve_extension(mesh: Mesh, load: np.ndarray, system: SparseSpdSystem | None = None) -> VectorField:
    """Solve ``A V = -load`` per component, where ``load[i] = int_{GAMMA_P} grad J phi_i``."""
    system = system or extension_system(mesh)
    load = np.asarray(load, dtype=float)
    if load.shape != (mesh.n_nodes, 2):
        raise ValueError("extension load must be an (n_nodes, 2) array")
    zero = np.zeros((len(system.constrained), 2))
    V = system.solve(-load, zero)
    return VectorField(mesh, V)


def h1_norm_sq(V: VectorField, system: SparseSpdSystem | None = None) -> float:
    system = system or extension_system(V.mesh)
    A = system.matrix
    return float(np.sum(V.values * (A @ V.values)))
