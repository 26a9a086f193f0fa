"""P1 triangulations of the region between an outer circle and an inner closed polyline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle as tr
from scipy.spatial import cKDTree

from .boundary_data import DEFAULT_CENTER, DEFAULT_RADIUS
from .errors import InvertedElementError, MeshError

GAMMA_E = "GAMMA_E"
GAMMA_P = "GAMMA_P"
INTERIOR = "INTERIOR"

MIN_ANGLE_DEG = 28.0


def _segments_intersect(p, q, a, b) -> np.ndarray:
    """Proper or touching intersection of segments ``p[i]q[i]`` with ``a[j]b[j]`` (broadcast)."""

    def orient(o, s, t):
        return (s[..., 0] - o[..., 0]) * (t[..., 1] - o[..., 1]) - (s[..., 1] - o[..., 1]) * (t[..., 0] - o[..., 0])

    d1 = orient(a, b, p)
    d2 = orient(a, b, q)
    d3 = orient(p, q, a)
    d4 = orient(p, q, b)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def _self_intersects(points: np.ndarray, chunk: int = 512) -> bool:
    n = len(points)
    a = points
    b = np.roll(points, -1, axis=0)
    idx = np.arange(n)
    for s in range(0, n, chunk):
        rows = idx[s : s + chunk]
        hit = _segments_intersect(a[rows, None, :], b[rows, None, :], a[None, :, :], b[None, :, :])
        gap = (idx[None, :] - rows[:, None]) % n
        # adjacent segments share a vertex; ignore them and the segment itself
        hit &= (gap > 1) & (gap < n - 1)
        if np.any(hit):
            return True
    return False


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class ClosedCurve:
    """Simple counterclockwise polygon, implicitly closed."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise MeshError("curve points must be an (n, 2) array")
        if len(pts) < 8:
            raise MeshError(f"closed curve needs at least 8 vertices, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise MeshError("curve points must be finite")
        if _signed_area(pts) <= 0:
            raise MeshError("curve must be counterclockwise with positive area")
        if _self_intersects(pts):
            raise MeshError("curve is self-intersecting")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points) -> "ClosedCurve":
        """Like the constructor but reverses clockwise input and drops a repeated endpoint."""
        pts = np.asarray(points, dtype=float)
        if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        if _signed_area(pts) < 0:
            pts = pts[::-1]
        return cls(pts)

    @classmethod
    def circle(cls, center, radius: float, n: int = 128) -> "ClosedCurve":
        th = 2 * np.pi * np.arange(n) / n
        return cls(np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)]))

    @classmethod
    def polar(cls, center, radius_fn, n: int = 256) -> "ClosedCurve":
        """Star-shaped curve ``rho = radius_fn(theta)`` about ``center``."""
        th = 2 * np.pi * np.arange(n) / n
        rho = np.asarray(radius_fn(th), dtype=float)
        return cls(np.column_stack([center[0] + rho * np.cos(th), center[1] + rho * np.sin(th)]))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def area(self) -> float:
        return _signed_area(self.points)

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.edge_lengths()))

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)

    @property
    def centroid(self) -> np.ndarray:
        p = self.points
        q = np.roll(p, -1, axis=0)
        cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        return np.array([np.sum((p[:, 0] + q[:, 0]) * cross), np.sum((p[:, 1] + q[:, 1]) * cross)]) / (
            6.0 * self.area
        )

    def translate(self, shift) -> "ClosedCurve":
        return ClosedCurve(self.points + np.asarray(shift, dtype=float))

    def contains(self, pts) -> np.ndarray:
        """Even-odd point-in-polygon test."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a = self.points
        b = np.roll(a, -1, axis=0)
        x, y = pts[:, 0:1], pts[:, 1:2]
        straddle = (a[None, :, 1] > y) != (b[None, :, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[None, :, 0] + (y - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (
                b[None, :, 1] - a[None, :, 1]
            )
        return np.count_nonzero(straddle & (x < xint), axis=1) % 2 == 1

    def distance(self, pts) -> np.ndarray:
        return point_segment_distance(pts, self.points, np.roll(self.points, -1, axis=0))

    def simplify(self, h: float) -> "ClosedCurve":
        """Boundary polyline for meshing at size ``h``.

        Drops vertices while every dropped vertex stays within ``h^2/8`` of
        the new chord and chords stay below ``h``; then splits chords longer
        than ``h``.
        """
        pts = self.points
        n = len(pts)
        tol = h * h / 8.0
        # start at the vertex of largest turning angle so a corner is kept
        d_prev = pts - np.roll(pts, 1, axis=0)
        d_next = np.roll(pts, -1, axis=0) - pts
        cross = d_prev[:, 0] * d_next[:, 1] - d_prev[:, 1] * d_next[:, 0]
        turn = np.abs(np.arctan2(cross, np.sum(d_prev * d_next, axis=1)))
        start = int(np.argmax(turn))
        order = np.roll(np.arange(n), -start)
        ring = pts[order]
        ring = np.vstack([ring, ring[:1]])
        keep = [0]
        i = 0
        while i < n:
            j = i + 1
            while j + 1 <= n:
                cand = j + 1
                chord = np.linalg.norm(ring[cand] - ring[i])
                if chord > h:
                    break
                mid = ring[i + 1 : cand]
                if len(mid) and np.max(point_segment_distance(mid, ring[i : i + 1], ring[cand : cand + 1])) > tol:
                    break
                j = cand
            keep.append(j)
            i = j
        kept = ring[keep[:-1]] if keep[-1] == n else ring[keep]
        out = []
        m = len(kept)
        for k in range(m):
            p, q = kept[k], kept[(k + 1) % m]
            pieces = max(1, math.ceil(np.linalg.norm(q - p) / h - 1e-9))
            s = np.arange(pieces)[:, None] / pieces
            out.append(p + s * (q - p))
        pts_new = np.vstack(out)
        if len(pts_new) < 8:
            pts_new = _resample_uniform(pts, 8)
        return ClosedCurve(pts_new)


def _resample_uniform(pts: np.ndarray, n: int) -> np.ndarray:
    closed = np.vstack([pts, pts[:1]])
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
    t = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.column_stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])])


def point_segment_distance(pts, a, b, chunk: int = 2048) -> np.ndarray:
    """Distance from each point to the nearest of the segments ``a[j] b[j]``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = b - a
    dd = np.maximum(np.sum(d * d, axis=1), 1e-300)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk, None, :]
        t = np.clip(np.sum((p - a[None]) * d[None], axis=2) / dd[None], 0.0, 1.0)
        proj = a[None] + t[..., None] * d[None]
        out[s : s + chunk] = np.min(np.linalg.norm(p - proj, axis=2), axis=1)
    return out


def hausdorff(c1: ClosedCurve, c2: ClosedCurve) -> float:
    """Symmetric Hausdorff distance between two polylines (vertex-to-segment)."""
    return float(max(np.max(c2.distance(c1.points)), np.max(c1.distance(c2.points))))


@dataclass(frozen=True)
class OuterCircle:
    center: tuple[float, float] = DEFAULT_CENTER
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not self.radius > 0:
            raise MeshError("outer radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with two tagged boundary loops.

    ``loops[tag]`` lists boundary node indices in counterclockwise order;
    consecutive entries (cyclically) are the boundary edges.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    loops: dict = field(default_factory=dict)
    outer: OuterCircle | None = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        tris = np.array(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("bad mesh array shapes")
        loops = {k: np.array(v, dtype=np.int64) for k, v in self.loops.items()}
        for arr in (nodes, tris, *loops.values()):
            arr.setflags(write=False)
        # connectivity-derived data, shared by meshes with the same topology
        object.__setattr__(self, "_topology", {})
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "loops", loops)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def loop(self, tag: str) -> np.ndarray:
        try:
            return self.loops[tag]
        except KeyError:
            raise MeshError(f"mesh has no boundary loop {tag!r}") from None

    def edges(self, tag: str) -> np.ndarray:
        ids = self.loop(tag)
        return np.column_stack([ids, np.roll(ids, -1)])

    @property
    def boundary_edges(self) -> list[tuple[int, int, str]]:
        return [(int(i), int(j), tag) for tag in self.loops for i, j in self.edges(tag)]

    @property
    def node_tags(self) -> np.ndarray:
        tags = np.full(self.n_nodes, INTERIOR, dtype=object)
        for tag, ids in self.loops.items():
            tags[ids] = tag
        return tags

    def signed_areas(self, nodes: np.ndarray | None = None) -> np.ndarray:
        p = self.nodes if nodes is None else nodes
        a, b, c = p[self.triangles[:, 0]], p[self.triangles[:, 1]], p[self.triangles[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def curve(self, tag: str = GAMMA_P) -> ClosedCurve:
        return ClosedCurve(self.nodes[self.loop(tag)])

    @property
    def unique_edges(self) -> np.ndarray:
        if "edges" not in self._topology:
            t = self.triangles
            e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            self._topology["edges"] = np.unique(np.sort(e, axis=1), axis=0)
        return self._topology["edges"]

    def edge_lengths(self) -> np.ndarray:
        e = self.unique_edges
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def with_nodes(self, nodes: np.ndarray) -> "Mesh":
        m = Mesh(nodes, self.triangles, self.loops, self.outer)
        object.__setattr__(m, "_topology", self._topology)
        return m

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates per point (-1 if outside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.nodes[self.triangles]
        cent = p.mean(axis=1)
        tree = cKDTree(cent)
        k = min(24, self.n_triangles)
        _, cand = tree.query(pts, k=k)
        cand = np.atleast_2d(cand)
        if cand.shape[0] != len(pts):
            cand = cand.T
        tri_id = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        for i, q in enumerate(pts):
            for ids in (cand[i], np.arange(self.n_triangles)):
                lam = _barycentric(p[ids], q)
                ok = np.min(lam, axis=1) >= -1e-12
                if np.any(ok):
                    j = int(np.flatnonzero(ok)[np.argmax(np.min(lam[ok], axis=1))])
                    tri_id[i] = ids[j]
                    bary[i] = lam[j]
                    break
        return tri_id, bary

    def interpolate(self, values, pts) -> np.ndarray:
        """Piecewise-linear interpolation of nodal ``values`` at ``pts``."""
        values = np.asarray(values, dtype=float)
        tri_id, bary = self.locate(pts)
        if np.any(tri_id < 0):
            raise MeshError("interpolation point outside the mesh")
        return np.sum(values[self.triangles[tri_id]] * bary, axis=1)


def _barycentric(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    v0, v1 = b - a, c - a
    v2 = q[None, :] - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def outer_polyline(outer: OuterCircle, h: float) -> np.ndarray:
    """Nodes on the outer circle with chord <= h and sagitta <= h^2/8."""
    R = outer.radius
    chord = min(h, h * math.sqrt(R))
    n = max(8, math.ceil(2 * math.pi * R / chord))
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([outer.center[0] + R * np.cos(th), outer.center[1] + R * np.sin(th)])


def generate_mesh(
    outer: OuterCircle | None,
    inner: ClosedCurve,
    h: float,
    simplify: bool = True,
    min_angle: float = MIN_ANGLE_DEG,
) -> Mesh:
    """Quality Delaunay mesh of the annular region, with boundary nodes kept as given.

    With ``simplify`` the inner polyline is first adapted to ``h`` via
    :meth:`ClosedCurve.simplify`; otherwise its vertices become the
    ``GAMMA_P`` nodes exactly (segments longer than ``h`` are still split).
    """
    if not h > 0:
        raise MeshError("h must be positive")
    outer = outer or OuterCircle()
    c = np.asarray(outer.center)
    gap = outer.radius - np.max(np.linalg.norm(inner.points - c, axis=1))
    if gap < 3 * h:
        raise MeshError(f"gap between inner curve and outer circle {gap:.3g} is below 3h = {3 * h:.3g}")
    curve = inner.simplify(h) if simplify else _split_long(inner, h)
    po = outer_polyline(outer, h)
    pi = curve.points
    no, ni = len(po), len(pi)
    verts = np.vstack([po, pi])
    seg_o = np.column_stack([np.arange(no), np.roll(np.arange(no), -1)])
    seg_i = np.column_stack([no + np.arange(ni), no + np.roll(np.arange(ni), -1)])
    hole = _interior_point(curve)
    area = math.sqrt(3.0) / 4.0 * h * h
    data = {"vertices": verts, "segments": np.vstack([seg_o, seg_i]), "holes": hole[None, :]}
    out = tr.triangulate(data, f"pq{min_angle:g}Ya{area:.17f}")
    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    if not np.allclose(nodes[: no + ni], verts, atol=0, rtol=0):
        raise MeshError("mesh generator moved boundary vertices")
    m = Mesh(nodes, tris, {GAMMA_E: np.arange(no), GAMMA_P: no + np.arange(ni)}, outer)
    areas = m.signed_areas()
    if np.any(areas < 0):
        t = tris.copy()
        neg = areas < 0
        t[neg] = t[neg][:, [0, 2, 1]]
        m = Mesh(nodes, t, m.loops, outer)
    return m


def _split_long(curve: ClosedCurve, h: float) -> ClosedCurve:
    pts = curve.points
    out = []
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        pieces = max(1, math.ceil(np.linalg.norm(q - p) / h - 1e-9))
        out.append(p + (np.arange(pieces)[:, None] / pieces) * (q - p))
    return ClosedCurve(np.vstack(out))


def _interior_point(curve: ClosedCurve) -> np.ndarray:
    """A point strictly inside the curve (centroid, else a nudged edge midpoint)."""
    cen = curve.centroid
    if curve.contains(cen[None, :])[0] and np.min(curve.distance(cen[None, :])) > 0:
        return cen
    p = curve.points
    q = np.roll(p, -1, axis=0)
    mids = 0.5 * (p + q)
    d = q - p
    inward = np.column_stack([-d[:, 1], d[:, 0]])
    lens = np.linalg.norm(d, axis=1)
    for eps in (0.25, 0.1, 0.01):
        cand = mids + eps * inward
        ok = curve.contains(cand)
        if np.any(ok):
            k = int(np.flatnonzero(ok)[0])
            if curve.distance(cand[k : k + 1])[0] > 0.05 * lens[k] * eps:
                return cand[k]
    raise MeshError("could not find a point inside the inner curve")


def deform(mesh: Mesh, V, t: float) -> Mesh:
    """Move nodes by ``t V``; ``V`` must vanish on ``GAMMA_E``."""
    V = np.asarray(getattr(V, "values", V), dtype=float)
    if V.shape != mesh.nodes.shape:
        raise ValueError("displacement field shape does not match mesh nodes")
    if GAMMA_E in mesh.loops and np.any(V[mesh.loops[GAMMA_E]] != 0.0):
        raise ValueError("displacement must vanish on GAMMA_E")
    if t == 0:
        return mesh
    nodes = mesh.nodes + t * V
    areas = mesh.signed_areas(nodes)
    bad = np.flatnonzero(areas <= 0)
    if bad.size:
        k = int(bad[np.argmin(areas[bad])])
        raise InvertedElementError(f"triangle {k} inverted at step t={t:g}", triangle=k)
    return mesh.with_nodes(nodes)


@dataclass(frozen=True)
class MeshQuality:
    min_angle: float
    min_area_ratio: float
    worst_triangle: int
    edge_ratio: float

    def __iter__(self):
        return iter((self.min_angle, self.min_area_ratio, self.worst_triangle))


def triangle_angles(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Interior angles in degrees, shape ``(m, 3)``."""
    p = nodes[triangles]
    out = np.empty((len(triangles), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        out[:, k] = np.degrees(np.arctan2(cross, np.sum(u * v, axis=1)))
    return out


def quality(mesh: Mesh) -> MeshQuality:
    """Minimum angle (degrees), min/max area ratio, worst triangle, max/min edge ratio."""
    ang = triangle_angles(mesh.nodes, mesh.triangles)
    per_tri = ang.min(axis=1)
    worst = int(np.argmin(per_tri))
    areas = np.abs(mesh.signed_areas())
    lens = mesh.edge_lengths()
    return MeshQuality(
        float(per_tri[worst]),
        float(areas.min() / areas.max()),
        worst,
        float(lens.max() / max(lens.min(), 1e-300)),
    )


def needs_remesh(mesh: Mesh, min_angle: float = 10.0, max_edge_ratio: float = 10.0) -> bool:
    q = quality(mesh)
    return q.min_angle < min_angle or q.edge_ratio > max_edge_ratio


@dataclass(frozen=True)
class BoundaryGeometry:
    midpoints: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    lengths: np.ndarray
    edges: np.ndarray


def boundary_geometry(mesh: Mesh, tag: str) -> BoundaryGeometry:
    """Per-edge midpoint, outward unit normal (w.r.t. the mesh domain), unit tangent and length.

    Tangents follow the loop order.  On ``GAMMA_P`` the outward normal
    points into the hole.
    """
    e = mesh.edges(tag)
    p, q = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    d = q - p
    lengths = np.linalg.norm(d, axis=1)
    tangents = d / lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    third = _opposite_vertex(mesh, e)
    mids = 0.5 * (p + q)
    flip = np.sum((mesh.nodes[third] - mids) * normals, axis=1) > 0
    normals[flip] *= -1.0
    return BoundaryGeometry(mids, normals, tangents, lengths, e)


def _opposite_vertex(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    key = ("opposite", edges.tobytes())
    if key not in mesh._topology:
        mesh._topology[key] = _find_opposite(mesh, edges)
    return mesh._topology[key]


def _find_opposite(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    t = mesh.triangles
    n = mesh.n_nodes
    keys = {}
    for k in range(3):
        a, b, c = t[:, k], t[:, (k + 1) % 3], t[:, (k + 2) % 3]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for key, v in zip((lo * n + hi).tolist(), c.tolist()):
            keys[key] = v
    lo, hi = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
    try:
        return np.array([keys[k] for k in (lo * n + hi).tolist()], dtype=np.int64)
    except KeyError:
        raise MeshError("boundary edge not found in the triangulation") from None


def save_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh file.

    ``nodes N`` then N lines ``x y``; ``triangles M`` then M lines ``i j k``;
    ``edges K`` then K lines ``i j TAG`` in loop order; optional
    ``outer cx cz R`` line.
    """
    lines = []
    if mesh.outer is not None:
        o = mesh.outer
        lines.append(f"outer {o.center[0]!r} {o.center[1]!r} {o.radius!r}")
    lines.append(f"nodes {mesh.n_nodes}")
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.nodes.tolist())
    lines.append(f"triangles {mesh.n_triangles}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    be = mesh.boundary_edges
    lines.append(f"edges {len(be)}")
    lines.extend(f"{i} {j} {tag}" for i, j, tag in be)
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    path = Path(path)
    try:
        rows = path.read_text().split("\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    it = iter(enumerate(rows, start=1))
    outer = None
    nodes = tris = None
    loops: dict[str, list[int]] = {}

    def block(count, parse):
        out = []
        for _ in range(count):
            ln, s = next(it)
            try:
                out.append(parse(s.split()))
            except (ValueError, IndexError):
                raise MeshError(f"{path}:{ln}: malformed line {s!r}") from None
        return out

    try:
        for ln, s in it:
            f = s.split()
            if not f:
                continue
            if f[0] == "outer":
                outer = OuterCircle((float(f[1]), float(f[2])), float(f[3]))
            elif f[0] == "nodes":
                nodes = block(int(f[1]), lambda t: (float(t[0]), float(t[1])))
            elif f[0] == "triangles":
                tris = block(int(f[1]), lambda t: (int(t[0]), int(t[1]), int(t[2])))
            elif f[0] == "edges":
                for i, _j, tag in block(int(f[1]), lambda t: (int(t[0]), int(t[1]), t[2])):
                    loops.setdefault(tag, []).append(i)
            else:
                raise MeshError(f"{path}:{ln}: unknown section {f[0]!r}")
    except StopIteration:
        raise MeshError(f"{path}: truncated file") from None
    if nodes is None or tris is None:
        raise MeshError(f"{path}: missing nodes or triangles section")
    return Mesh(np.array(nodes), np.array(tris), loops, outer)
