"""Structured triangulations of rectangles, boundary patches and quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SIDES = ("bottom", "right", "top", "left")

# 2-point Gauss on [0, 1]
_GAUSS_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])

# barycentric coordinates of the volume rules
_CENTROID = np.array([[1.0, 1.0, 1.0]]) / 3.0
_EDGE_MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryPatch:
    tag: str
    edges: np.ndarray  # indices into Mesh.boundary_edges
    measure: float


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_edges: np.ndarray  # (ne, 2), ordered as one CCW loop
    edge_sides: np.ndarray  # (ne,) side name per boundary edge
    width: float
    height: float
    patches: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def domain_measure(self) -> float:
        return float(self.areas.sum())

    @property
    def edge_lengths(self) -> np.ndarray:
        a, b = self.vertices[self.boundary_edges[:, 0]], self.vertices[self.boundary_edges[:, 1]]
        return np.hypot(*(b - a).T)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def patch_measures(self) -> dict:
        return {tag: p.measure for tag, p in self.patches.items()}

    def patch(self, tag: str) -> BoundaryPatch:
        try:
            return self.patches[tag]
        except KeyError:
            raise MeshError(f"unknown patch {tag!r}") from None

    def side_edges(self, side: str) -> np.ndarray:
        if side not in SIDES:
            raise MeshError(f"unknown side {side!r}; expected one of {SIDES}")
        return np.flatnonzero(self.edge_sides == side)


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_rectangle_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> Mesh:
    """Uniform triangulation of ``[0, width] x [0, height]``.

    Every cell is split along its lower-left to upper-right diagonal, giving
    ``(nx+1)(ny+1)`` vertices and ``2 nx ny`` triangles. Vertex ``(i, j)`` has
    index ``j (nx+1) + i``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (width > 0 and height > 0):
        raise MeshError(f"dimensions must be positive, got width={width}, height={height}")
    nx, ny = int(nx), int(ny)
    width, height = float(width), float(height)

    xs = width * np.arange(nx + 1) / nx
    ys = height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    i = np.arange(nx)
    j = np.arange(ny)
    bottom = np.column_stack([vid(i, 0), vid(i + 1, 0)])
    right = np.column_stack([vid(nx, j), vid(nx, j + 1)])
    top = np.column_stack([vid(i + 1, ny), vid(i, ny)])[::-1]
    left = np.column_stack([vid(0, j + 1), vid(0, j)])[::-1]
    edges = np.vstack([bottom, right, top, left]).astype(np.int64)
    sides = np.array(["bottom"] * nx + ["right"] * ny + ["top"] * nx + ["left"] * ny)

    return Mesh(vertices, triangles, edges, sides, width, height, {})


def tag_patches(mesh: Mesh, specs: Sequence) -> Mesh:
    """Attach boundary patches given as ``(tag, side, (lo, hi))`` triples.

    An edge belongs to a patch iff its midpoint coordinate along the side lies
    in the closed interval. Patches may overlap. Existing tags are replaced.
    """
    patches = dict(mesh.patches)
    mids = mesh.vertices[mesh.boundary_edges].mean(axis=1)
    lengths = mesh.edge_lengths
    for tag, side, interval in specs:
        lo, hi = float(interval[0]), float(interval[1])
        if lo > hi:
            raise MeshError(f"patch {tag!r}: empty interval [{lo}, {hi}]")
        on_side = mesh.side_edges(side)
        axis = 0 if side in ("bottom", "top") else 1
        extent = mesh.width if axis == 0 else mesh.height
        if lo < -1e-12 * extent or hi > extent * (1 + 1e-12):
            raise MeshError(f"patch {tag!r}: interval [{lo}, {hi}] leaves side {side!r}")
        coord = mids[on_side, axis]
        chosen = np.sort(on_side[(coord >= lo) & (coord <= hi)])
        if len(chosen) == 0:
            raise MeshError(f"patch {tag!r} contains no boundary edge")
        patches[str(tag)] = BoundaryPatch(str(tag), chosen, float(lengths[chosen].sum()))
    return replace(mesh, patches=patches)


@dataclass(frozen=True)
class VolumeRule:
    points: np.ndarray  # (nt, nq, 2)
    weights: np.ndarray  # (nt, nq)
    bary: np.ndarray  # (nq, 3), values of the P1 basis at the points

    def integrate(self, values: np.ndarray) -> float:
        """Integrate point values of shape (nt, nq) or (nt, nq, ...)."""
        w = self.weights.reshape(self.weights.shape + (1,) * (values.ndim - 2))
        return np.sum(w * values, axis=(0, 1))


@dataclass(frozen=True)
class BoundaryRule:
    edges: np.ndarray  # (nb,) boundary-edge indices covered
    points: np.ndarray  # (nb, 2, 2)
    weights: np.ndarray  # (nb, 2)
    shape: np.ndarray  # (2, 2): shape[q, k] = value of edge-vertex k basis at point q

    def integrate(self, values: np.ndarray) -> float:
        w = self.weights.reshape(self.weights.shape + (1,) * (values.ndim - 2))
        return np.sum(w * values, axis=(0, 1))


def volume_quadrature(mesh: Mesh, order: int = 2) -> VolumeRule:
    """Centroid rule (order 1) or edge-midpoint rule (order 2, exact for quadratics)."""
    if order == 1:
        bary = _CENTROID
    elif order == 2:
        bary = _EDGE_MIDPOINTS
    else:
        raise ValueError(f"unsupported volume quadrature order {order}")
    corners = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    points = np.einsum("qk,tkd->tqd", bary, corners)
    weights = np.repeat(mesh.areas[:, None] / len(bary), len(bary), axis=1)
    return VolumeRule(points, weights, bary)


def boundary_quadrature(mesh: Mesh, tag: str | None = None) -> BoundaryRule:
    """Two-point Gauss rule on every edge of a patch (``tag=None``: all of the boundary)."""
    if tag is None:
        edges = np.arange(len(mesh.boundary_edges))
    else:
        edges = mesh.patch(tag).edges
    ends = mesh.vertices[mesh.boundary_edges[edges]]  # (nb, 2, 2)
    shape = np.column_stack([1.0 - _GAUSS_T, _GAUSS_T])
    points = np.einsum("qk,bkd->bqd", shape, ends)
    lengths = mesh.edge_lengths[edges]
    weights = lengths[:, None] * _GAUSS_W[None, :]
    return BoundaryRule(edges, points, weights, shape)


def edge_triangle_counts(mesh: Mesh) -> dict:
    """Map each undirected edge to the number of triangles sharing it."""
    counts: dict = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: one ``v``/``t``/``e``/``p`` record per line."""
    lines = [f"# mesh {mesh.n_vertices} vertices {mesh.n_triangles} triangles "
             f"{len(mesh.boundary_edges)} boundary_edges"]
    for k, (x, y) in enumerate(mesh.vertices):
        lines.append(f"v {k} {float(x):.17g} {float(y):.17g}")
    for k, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"t {k} {a} {b} {c}")
    for k, ((a, b), side) in enumerate(zip(mesh.boundary_edges, mesh.edge_sides)):
        lines.append(f"e {k} {a} {b} {side}")
    for tag, patch in sorted(mesh.patches.items()):
        for e in patch.edges:
            lines.append(f"p {tag} {e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
