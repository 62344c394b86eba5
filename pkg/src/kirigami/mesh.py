"""Conforming triangulations of rectangular domains with tagged boundary edges.

The crossed pattern splits every grid cell into four triangles around its
centroid.  Left/right sides carry Dirichlet tags and top/bottom sides carry
Neumann tags, which is the pull geometry used for all experiments.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DIRICHLET_LEFT = "dirichlet_left"
DIRICHLET_RIGHT = "dirichlet_right"
NEUMANN_TOP = "neumann_top"
NEUMANN_BOTTOM = "neumann_bottom"
STANDARD_TAGS = (DIRICHLET_LEFT, DIRICHLET_RIGHT, NEUMANN_TOP, NEUMANN_BOTTOM)

MESH_MAGIC = "ntri-mesh 1"


class MeshError(ValueError):
    """Invalid mesh data; ``line`` is the 1-based line of the mesh file when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def is_dirichlet_tag(tag: str) -> bool:
    return tag.startswith("dirichlet")


def is_neumann_tag(tag: str) -> bool:
    return tag.startswith("neumann")


@dataclass(frozen=True, eq=False)
class Triangulation2D:
    """Immutable P1 triangulation.

    vertices: (nv, 2) float array
    triangles: (nt, 3) int array, counterclockwise
    boundary_edges: (nb, 2) int array
    boundary_tags: tuple of nb tag strings
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    _geom: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        b = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        for a in (v, t, b):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_edges", b)
        object.__setattr__(self, "boundary_tags", tuple(str(s) for s in self.boundary_tags))
        if len(self.boundary_tags) != len(b):
            raise MeshError("one tag is required per boundary edge")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def signed_areas(self) -> np.ndarray:
        if "area" not in self._geom:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._geom["area"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._geom["area"]

    @property
    def gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Constant gradients of the three hat functions on each triangle, as (gx, gy), each (nt, 3)."""
        if "grad" not in self._geom:
            p = self.vertices[self.triangles]
            x, y = p[..., 0], p[..., 1]
            two_area = 2.0 * self.signed_areas
            gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / two_area[:, None]
            gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / two_area[:, None]
            self._geom["grad"] = (gx, gy)
        return self._geom["grad"]

    @property
    def h(self) -> float:
        """Largest triangle diameter (longest edge)."""
        if "h" not in self._geom:
            self._geom["h"] = float(self.edge_lengths.max()) if self.n_triangles else 0.0
        return self._geom["h"]

    @property
    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)

    def edges_with_tag(self, predicate) -> np.ndarray:
        mask = np.array([predicate(t) for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask] if mask.size else self.boundary_edges[:0]

    @property
    def dirichlet_vertices(self) -> np.ndarray:
        if "dir" not in self._geom:
            self._geom["dir"] = np.unique(self.edges_with_tag(is_dirichlet_tag))
        return self._geom["dir"]

    @property
    def neumann_edges(self) -> np.ndarray:
        return self.edges_with_tag(is_neumann_tag)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.dirichlet_vertices] = True
        return m

    def same_as(self, other: "Triangulation2D", rtol: float = 0.0) -> bool:
        return (
            self.vertices.shape == other.vertices.shape
            and np.allclose(self.vertices, other.vertices, rtol=rtol, atol=0.0)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and self.boundary_tags == other.boundary_tags
        )


def generate_crossed_mesh(nx: int, ny: int, L: float) -> Triangulation2D:
    """Crossed mesh of the square (0, L) x (0, L) with nx x ny cells."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got nx={nx}, ny={ny}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    nx, ny = int(nx), int(ny)
    dx, dy = L / nx, L / ny

    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    grid = np.column_stack([i.ravel() * dx, j.ravel() * dy])
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    centres = np.column_stack([(ci + 0.5) * dx, (cj + 0.5) * dy])
    # keep the outer columns exactly on x = L, y = L
    grid[grid[:, 0] == nx * dx, 0] = L
    grid[grid[:, 1] == ny * dy, 1] = L
    vertices = np.vstack([grid, centres])

    def g(ii, jj):
        return jj * (nx + 1) + ii

    v00, v10, v11, v01 = g(ci, cj), g(ci + 1, cj), g(ci + 1, cj + 1), g(ci, cj + 1)
    c = (nx + 1) * (ny + 1) + cj * nx + ci
    triangles = np.stack(
        [
            np.column_stack([v00, v10, c]),
            np.column_stack([v10, v11, c]),
            np.column_stack([v11, v01, c]),
            np.column_stack([v01, v00, c]),
        ],
        axis=1,
    ).reshape(-1, 3)

    ix, jy = np.arange(nx), np.arange(ny)
    bottom = np.column_stack([g(ix, 0), g(ix + 1, 0)])
    right = np.column_stack([g(nx, jy), g(nx, jy + 1)])
    top = np.column_stack([g(ix + 1, ny), g(ix, ny)])[::-1]
    left = np.column_stack([g(0, jy + 1), g(0, jy)])[::-1]
    edges = np.vstack([bottom, right, top, left])
    tags = (NEUMANN_BOTTOM,) * nx + (DIRICHLET_RIGHT,) * ny + (NEUMANN_TOP,) * nx + (DIRICHLET_LEFT,) * ny
    return Triangulation2D(vertices, triangles, edges, tags)


def _edge_table(triangles: np.ndarray):
    """Sorted undirected edges of every triangle, shape (3 nt, 2), with owning triangle ids."""
    e = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owner = np.repeat(np.arange(len(triangles)), 3)
    return np.sort(e, axis=1), owner


def hull_edges(mesh_or_triangles) -> set:
    """Undirected edges belonging to exactly one triangle."""
    tris = getattr(mesh_or_triangles, "triangles", mesh_or_triangles)
    e, _ = _edge_table(np.asarray(tris))
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return {tuple(x) for x in uniq[counts == 1]}


def check_mesh(mesh: Triangulation2D, lines: dict | None = None) -> None:
    """Raise MeshError unless the mesh is a valid tagged conforming triangulation.

    ``lines`` optionally maps ('tri', k) / ('edge', k) to file line numbers.
    """
    lines = lines or {}
    nv = mesh.n_vertices
    for k, tri in enumerate(mesh.triangles):
        if tri.min() < 0 or tri.max() >= nv:
            raise MeshError(f"index out of range in triangle {k}", lines.get(("tri", k)))
        if len(set(tri.tolist())) < 3:
            raise MeshError(f"repeated vertex in triangle {k}", lines.get(("tri", k)))
    for k, edge in enumerate(mesh.boundary_edges):
        if edge.min() < 0 or edge.max() >= nv:
            raise MeshError(f"index out of range in boundary edge {k}", lines.get(("edge", k)))
    for k, tag in enumerate(mesh.boundary_tags):
        if not (is_dirichlet_tag(tag) or is_neumann_tag(tag)):
            raise MeshError(f"unknown boundary tag {tag!r}", lines.get(("edge", k)))

    area = mesh.signed_areas
    bad = np.flatnonzero(area <= 0.0)
    if bad.size:
        k = int(bad[0])
        raise MeshError(f"triangle {k} is not counterclockwise (signed area {area[k]:.3e})", lines.get(("tri", k)))

    e, owner = _edge_table(mesh.triangles)
    uniq, inverse, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    over = np.flatnonzero(counts[inverse] > 2)
    if over.size:
        k = int(owner[over[-1]])
        raise MeshError(f"non-conforming connectivity: edge shared by more than two triangles (triangle {k})",
                        lines.get(("tri", k)))
    # a directed edge appearing twice means two neighbours with inconsistent orientation
    directed = mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    d_uniq, d_counts = np.unique(directed, axis=0, return_counts=True)
    if (d_counts > 1).any():
        dup = tuple(d_uniq[d_counts > 1][0])
        k = int(owner[np.flatnonzero((directed == dup).all(axis=1))[-1]])
        raise MeshError(f"non-conforming connectivity: overlapping triangles at edge {dup}", lines.get(("tri", k)))

    hull = {tuple(x) for x in uniq[counts == 1]}
    tagged = Counter(tuple(sorted(map(int, ed))) for ed in mesh.boundary_edges)
    for k, ed in enumerate(mesh.boundary_edges):
        key = tuple(sorted(map(int, ed)))
        if key not in hull:
            raise MeshError(f"boundary edge {key} is not on the boundary", lines.get(("edge", k)))
        if tagged[key] > 1:
            raise MeshError(f"boundary edge {key} tagged more than once", lines.get(("edge", k)))
    missing = sorted(hull - set(tagged))
    if missing:
        key = missing[0]
        k = int(owner[np.flatnonzero((e == key).all(axis=1))[0]])
        raise MeshError(f"untagged boundary edge {tuple(int(v) for v in key)}", lines.get(("tri", k)))
    if mesh.dirichlet_vertices.size == 0:
        raise MeshError("the Dirichlet boundary is empty")


def write_mesh(mesh: Triangulation2D) -> str:
    out = [MESH_MAGIC, f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    out += [f"{a} {b} {tag}" for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags)]
    return "\n".join(out) + "\n"


def read_mesh(text: str) -> Triangulation2D:
    rows = text.splitlines()

    def need(n, what):
        if len(rows) < n:
            raise MeshError(f"unexpected end of file while reading {what}", len(rows) + 1)

    need(1, "header")
    if rows[0].strip() != MESH_MAGIC:
        raise MeshError(f"malformed header, expected {MESH_MAGIC!r}", 1)
    need(2, "counts")
    try:
        nv, nt, nb = (int(s) for s in rows[1].split())
    except ValueError:
        raise MeshError("malformed header, expected '<nv> <nt> <nb>'", 2) from None
    if min(nv, nt, nb) < 0:
        raise MeshError("negative counts", 2)
    need(2 + nv + nt + nb, "mesh body")

    vertices = np.empty((nv, 2))
    triangles = np.empty((nt, 3), dtype=np.int64)
    edges = np.empty((nb, 2), dtype=np.int64)
    tags = []
    lines = {}
    ln = 2
    for k in range(nv):
        parts = rows[ln].split()
        ln += 1
        try:
            if len(parts) != 2:
                raise ValueError
            vertices[k] = [float(p) for p in parts]
        except ValueError:
            raise MeshError("malformed vertex line", ln) from None
    for k in range(nt):
        parts = rows[ln].split()
        ln += 1
        lines[("tri", k)] = ln
        try:
            if len(parts) != 3:
                raise ValueError
            triangles[k] = [int(p) for p in parts]
        except ValueError:
            raise MeshError("malformed triangle line", ln) from None
        if triangles[k].min() < 0 or triangles[k].max() >= nv:
            raise MeshError(f"index out of range (nv = {nv})", ln)
    for k in range(nb):
        parts = rows[ln].split()
        ln += 1
        lines[("edge", k)] = ln
        try:
            if len(parts) != 3:
                raise ValueError
            edges[k] = [int(parts[0]), int(parts[1])]
        except ValueError:
            raise MeshError("malformed boundary edge line", ln) from None
        if edges[k].min() < 0 or edges[k].max() >= nv:
            raise MeshError(f"index out of range (nv = {nv})", ln)
        tags.append(parts[2])
    mesh = Triangulation2D(vertices, triangles, edges, tuple(tags))
    check_mesh(mesh, lines)
    return mesh


class MeshStatistics(NamedTuple):
    h: float
    vertex_count: int
    triangle_count: int
    min_angle: float  # degrees


def mesh_statistics(mesh: Triangulation2D) -> MeshStatistics:
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return MeshStatistics(mesh.h, mesh.n_vertices, mesh.n_triangles, float(np.min(angles)))
