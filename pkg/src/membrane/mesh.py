"""
Triangular meshes of the disk and the square, and arc-length boundary regions.

The boundary of every mesh is a single counterclockwise loop of straight edges.
Positions along it are measured by the arc-length coordinate ``s`` in
``[0, P)`` with ``P`` the polygon perimeter. For the disk, ``s = 0`` is the
vertex at angle 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

# relative length below which an interval is considered empty
DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """Shape and resolution of the computational domain.

    ``size`` is the radius for ``kind="disk"`` and the side length for
    ``kind="square"`` (centred at the origin).
    """

    kind: str = "disk"
    size: float = 1.0
    n_boundary: int = 64
    refinements: int = 0

    @classmethod
    def disk(cls, radius: float = 1.0, n_boundary: int = 64, refinements: int = 0) -> "DomainSpec":
        return cls("disk", radius, n_boundary, refinements)

    @classmethod
    def square(cls, side: float = 1.0, n_boundary: int = 4, refinements: int = 0) -> "DomainSpec":
        return cls("square", side, n_boundary, refinements)

    def validate(self) -> None:
        if self.kind not in ("disk", "square"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if not (math.isfinite(self.size) and self.size > 0):
            raise ConfigurationError(f"domain size must be positive, got {self.size}")
        if self.n_boundary < 3:
            raise ConfigurationError(f"n_boundary must be >= 3, got {self.n_boundary}")
        if self.kind == "square" and self.n_boundary % 4:
            raise ConfigurationError("square meshes need n_boundary divisible by 4")
        if self.refinements < 0:
            raise ConfigurationError("refinements must be non-negative")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation with an ordered boundary loop.

    Boundary edge ``e`` runs from ``boundary_loop[e]`` to
    ``boundary_loop[(e + 1) % E]`` and starts at arc length ``s_start[e]``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray
    kind: str
    size: float

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_loop"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.boundary_loop)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """(E, 2) vertex pairs in loop order."""
        a = self.boundary_loop
        return _frozen(np.stack([a, np.roll(a, -1)], axis=1))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.boundary_edges
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return _frozen(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def s_start(self) -> np.ndarray:
        """Arc-length coordinate of the first vertex of each boundary edge."""
        s = np.concatenate([[0.0], np.cumsum(self.edge_lengths)[:-1]])
        return _frozen(s)

    @cached_property
    def perimeter(self) -> float:
        return float(np.sum(self.edge_lengths))

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges."""
        e = self.boundary_edges
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]
        return _frozen(n)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _frozen(_signed_areas(self.vertices, self.triangles))

    @cached_property
    def hat_gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three local hat functions."""
        x = self.vertices[self.triangles]
        area2 = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (x[:, j, 1] - x[:, k, 1]) / area2
            g[:, i, 1] = (x[:, k, 0] - x[:, j, 0]) / area2
        return _frozen(g)

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        """Vertex quadrature weights: one third of each adjacent triangle area."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.signed_areas / 3.0, 3))
        return _frozen(w)

    @cached_property
    def boundary_vertex_s(self) -> np.ndarray:
        """Arc-length coordinate of each loop vertex (same order as boundary_loop)."""
        return self.s_start

    def area(self) -> float:
        return float(np.sum(self.signed_areas))

    def trace(self, u: np.ndarray) -> np.ndarray:
        """Nodal values of ``u`` at the loop vertices, in loop order."""
        return np.asarray(u)[self.boundary_loop]

    def edge_means(self, u: np.ndarray) -> np.ndarray:
        """Mean value of the P1 field ``u`` on each boundary edge."""
        e = self.boundary_edges
        u = np.asarray(u)
        return 0.5 * (u[e[:, 0]] + u[e[:, 1]])

    def interpolate_trace(self, u: np.ndarray, s) -> np.ndarray:
        """Evaluate the piecewise-linear boundary trace of ``u`` at arc lengths ``s``."""
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        tr = self.trace(u)
        knots = np.append(self.s_start, self.perimeter)
        vals = np.append(tr, tr[0])
        return np.interp(s, knots, vals)

    def check(self) -> None:
        """Raise AssertionError if a structural invariant is violated."""
        assert np.all(self.signed_areas > 0), "non-positive triangle area"
        loop = self.boundary_loop
        assert len(np.unique(loop)) == len(loop), "boundary loop revisits a vertex"
        assert abs(np.sum(self.edge_lengths) - self.perimeter) <= 1e-12 * self.perimeter
        assert np.all(np.diff(self.s_start) > 0)
        # each boundary edge belongs to exactly one triangle, every other edge to two
        tri = self.triangles
        edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        keys, counts = np.unique(edges[:, 0] * self.n_vertices + edges[:, 1], return_counts=True)
        be = np.sort(self.boundary_edges, axis=1)
        bkeys = be[:, 0] * self.n_vertices + be[:, 1]
        once = set(keys[counts == 1].tolist())
        assert once == set(bkeys.tolist()), "boundary loop does not match edges used once"
        assert np.all(counts <= 2)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _signed_areas(x: np.ndarray, tri: np.ndarray) -> np.ndarray:
    p = x[tri]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def build_mesh(spec: DomainSpec) -> Mesh:
    """Build the mesh described by ``spec``, including uniform refinements."""
    spec.validate()
    if spec.kind == "disk":
        mesh = _disk_mesh(spec.size, spec.n_boundary)
    else:
        mesh = _square_mesh(spec.size, spec.n_boundary // 4)
    for _ in range(spec.refinements):
        mesh = refine_uniform(mesh)
    return mesh


def _ring_point(r: float, j: int, n: int) -> tuple[float, float]:
    # mirror pairs j, n - j get exactly opposite y so the mesh is symmetric about y = 0
    if 2 * j > n:
        x, y = _ring_point(r, n - j, n)
        return x, -y
    if j == 0:
        return r, 0.0
    if 2 * j == n:
        return -r, 0.0
    theta = 2.0 * math.pi * j / n
    return r * math.cos(theta), r * math.sin(theta)


def _zipper(inner: Sequence[int], inner_ang: Sequence[float],
            outer: Sequence[int], outer_ang: Sequence[float]) -> list[tuple[int, int, int]]:
    """Triangulate the strip between two angularly sorted point chains."""
    tris = []
    i = j = 0
    m, n = len(inner) - 1, len(outer) - 1
    while i < m or j < n:
        if i < m and (j == n or inner_ang[i + 1] < outer_ang[j + 1]):
            tris.append((inner[i], outer[j], inner[i + 1]))
            i += 1
        else:
            tris.append((inner[i], outer[j], outer[j + 1]))
            j += 1
    return tris


def _disk_mesh(radius: float, n: int) -> Mesh:
    """Concentric-ring triangulation with ``n`` equally spaced boundary vertices.

    For even ``n`` the upper half is triangulated and mirrored, which makes the
    mesh exactly symmetric under ``y -> -y``.
    """
    mirror = n % 2 == 0
    n_rings = max(1, round(n / (2.0 * math.pi)))
    counts = []
    for k in range(1, n_rings + 1):
        if k == n_rings:
            counts.append(n)
        elif mirror:
            counts.append(max(4, 2 * round(n * k / n_rings / 2)))
        else:
            counts.append(max(3, round(n * k / n_rings)))

    offsets = np.concatenate([[1], 1 + np.cumsum(counts)]).astype(int)
    verts = [(0.0, 0.0)]
    for k, nk in enumerate(counts, start=1):
        r = radius * k / n_rings
        verts.extend(_ring_point(r, j, nk) for j in range(nk))

    def vid(ring: int, j: int) -> int:
        # ring 0 is the centre
        if ring == 0:
            return 0
        return int(offsets[ring - 1] + j % counts[ring - 1])

    def chain(ring: int):
        nk = counts[ring - 1]
        last = nk // 2 if mirror else nk
        js = range(last + 1)
        return [vid(ring, j) for j in js], [2.0 * math.pi * j / nk for j in js], js

    tris = []
    ids, _, js = chain(1)
    for a, b in zip(ids[:-1], ids[1:]):
        tris.append((0, a, b))
    for ring in range(2, n_rings + 1):
        ii, ia, _ = chain(ring - 1)
        oi, oa, _ = chain(ring)
        tris.extend(_zipper(ii, ia, oi, oa))

    if mirror:
        ring_of = np.zeros(len(verts), dtype=int)
        index_in_ring = np.zeros(len(verts), dtype=int)
        for k, nk in enumerate(counts, start=1):
            ring_of[offsets[k - 1]:offsets[k - 1] + nk] = k
            index_in_ring[offsets[k - 1]:offsets[k - 1] + nk] = np.arange(nk)

        def reflect(v: int) -> int:
            k = ring_of[v]
            if k == 0:
                return 0
            nk = counts[k - 1]
            return vid(k, (nk - index_in_ring[v]) % nk)

        tris = tris + [(reflect(a), reflect(c), reflect(b)) for a, b, c in tris]

    x = np.array(verts, dtype=float)
    t = np.array(tris, dtype=np.int64)
    t = _orient(x, t)
    loop = np.arange(offsets[n_rings - 1], offsets[n_rings - 1] + n, dtype=np.int64)
    return Mesh(x, t, loop, "disk", float(radius))


def _orient(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    a = _signed_areas(x, t)
    flip = a < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def _square_mesh(side: float, m: int) -> Mesh:
    """Structured ``m x m`` grid on ``[-side/2, side/2]^2`` with one diagonal per cell."""
    g = np.linspace(-0.5 * side, 0.5 * side, m + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    x = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def vid(i, j):
        return j * (m + 1) + i

    tris = []
    for j in range(m):
        for i in range(m):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    loop = ([vid(i, 0) for i in range(m)] + [vid(m, j) for j in range(m)]
            + [vid(i, m) for i in range(m, 0, -1)] + [vid(0, j) for j in range(m, 0, -1)])
    return Mesh(x, np.array(tris, dtype=np.int64), np.array(loop, dtype=np.int64), "square", float(side))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints.

    Boundary midpoints of a disk mesh are projected back onto the circle.
    """
    nv = mesh.n_vertices
    tri = mesh.triangles
    local = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    keys = np.min(local, axis=1) * nv + np.max(local, axis=1)
    uniq, inv = np.unique(keys, return_inverse=True)
    a, b = uniq // nv, uniq % nv
    mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
    mid_id = nv + inv.reshape(3, -1).T  # columns: edge 01, 12, 20

    be = mesh.boundary_edges
    bkeys = np.min(be, axis=1) * nv + np.max(be, axis=1)
    bmid = np.searchsorted(uniq, bkeys)
    if mesh.kind == "disk":
        p = mid[bmid]
        mid[bmid] = p * (mesh.size / np.hypot(p[:, 0], p[:, 1]))[:, None]

    x = np.concatenate([mesh.vertices, mid])
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = mid_id[:, 0], mid_id[:, 1], mid_id[:, 2]
    new_tri = np.concatenate([
        np.stack([v0, m01, m20], axis=1),
        np.stack([m01, v1, m12], axis=1),
        np.stack([m20, m12, v2], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    loop = np.empty(2 * mesh.n_boundary_edges, dtype=np.int64)
    loop[0::2] = mesh.boundary_loop
    loop[1::2] = nv + bmid
    return Mesh(x, new_tri, loop, mesh.kind, mesh.size)


# --------------------------------------------------------------------------- regions


@dataclass(frozen=True)
class BoundaryRegion:
    """Union of disjoint half-open arcs ``[s_begin, s_end)`` of the boundary loop.

    Intervals are stored sorted inside ``[0, P]``; an arc through ``s = 0`` is
    kept split into ``[a, P)`` and ``[0, b)``. Use :func:`make_region` to build
    a normalized instance from arbitrary arcs.
    """

    intervals: tuple[tuple[float, float], ...]
    perimeter: float

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def is_full(self) -> bool:
        return len(self.intervals) == 1 and self.intervals[0] == (0.0, self.perimeter)

    def measure(self) -> float:
        return float(sum(e - b for b, e in self.intervals))

    def arcs(self) -> list[tuple[float, float]]:
        """Connected components as ``(begin, end)`` with ``end`` possibly beyond ``P``."""
        iv = list(self.intervals)
        if self.is_full or not iv:
            return iv
        if len(iv) > 1 and iv[0][0] == 0.0 and iv[-1][1] == self.perimeter:
            first, last = iv[0], iv[-1]
            iv = iv[1:-1] + [(last[0], self.perimeter + first[1])]
        return iv

    def endpoints(self) -> list[tuple[float, int]]:
        """``(s, sigma)`` pairs sorted by ``s``; ``sigma`` is +1 at arc ends, -1 at arc starts."""
        if self.is_full:
            return []
        pts = []
        for b, e in self.arcs():
            pts.append((b, -1))
            pts.append((e - self.perimeter if e >= self.perimeter else e, 1))
        return sorted(pts)

    def contains(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        out = np.zeros(s.shape, dtype=bool)
        for b, e in self.intervals:
            out |= (s >= b) & (s < e)
        return out


def make_region(arcs: Iterable[tuple[float, float]], perimeter: float) -> BoundaryRegion:
    """Normalize arcs ``(begin, end)`` with ``end >= begin`` into a BoundaryRegion."""
    P = float(perimeter)
    tol = DEGENERATE_REL * P
    pieces = []
    for b, e in arcs:
        b, e = float(b), float(e)
        length = e - b
        if length < -tol:
            raise DomainError(f"arc end {e} precedes its begin {b}")
        if length >= P - tol:
            return BoundaryRegion(((0.0, P),), P)
        if length < tol:
            continue
        b0 = b % P
        e0 = b0 + length
        if e0 <= P:
            pieces.append((b0, e0))
        else:
            pieces.append((b0, P))
            pieces.append((0.0, e0 - P))
    pieces.sort()
    merged: list[list[float]] = []
    for b, e in pieces:
        if merged and b <= merged[-1][1] + tol:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([b, e])
    out = []
    for b, e in merged:
        e = min(e, P)
        if e - b >= tol:
            out.append((b, e))
    if len(out) == 1 and out[0][0] <= tol and out[0][1] >= P - tol:
        return BoundaryRegion(((0.0, P),), P)
    if out and out[0][0] <= tol:
        out[0] = (0.0, out[0][1])
    if out and out[-1][1] >= P - tol:
        out[-1] = (out[-1][0], P)
    if len(out) == 2 and out[0] == (0.0, out[0][1]) and out[1][1] == P and out[1][0] <= out[0][1] + tol:
        return BoundaryRegion(((0.0, P),), P)
    return BoundaryRegion(tuple(out), P)


def normalize_region(region: BoundaryRegion) -> BoundaryRegion:
    return make_region(region.intervals, region.perimeter)


def region_measure(region: BoundaryRegion) -> float:
    """Total arc length covered by ``region``."""
    return region.measure()


def arc_region(center_s: float, A: float, perimeter: float) -> BoundaryRegion:
    """Single arc of length ``A`` centred at arc length ``center_s``."""
    if not (0.0 <= A <= perimeter):
        raise DomainError(f"arc length {A} outside [0, {perimeter}]")
    if A == perimeter:
        return BoundaryRegion(((0.0, float(perimeter)),), float(perimeter))
    return make_region([(center_s - 0.5 * A, center_s + 0.5 * A)], perimeter)
