"""P1 vector-valued assembly of the Robin bilinear form and its loads.

Degrees of freedom are vertex-major, component-minor: dof ``2*v + c`` is
component ``c`` of the field at vertex ``v``. Nodal fields are handled as
arrays of shape ``(n_vertices, 2)``; parameters xi are element constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .coefficients import CouplingField, MatrixField, RotationField
from .mesh import Mesh, boundary_quadrature, volume_quadrature


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    mesh: Mesh

    @property
    def n_dofs(self) -> int:
        return 2 * self.mesh.n_vertices

    @property
    def element_dofs(self) -> np.ndarray:
        """(nt, 6) global dofs in local order (vertex k, component c) -> 2k + c."""
        tri = self.mesh.triangles
        return np.stack([2 * tri, 2 * tri + 1], axis=-1).reshape(len(tri), 6)

    def gradients(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the three P1 basis functions."""
        return p1_gradients(self.mesh)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    load: np.ndarray | None = None

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GeneralRobinData:
    """Volume source f, flux source F and boundary source g.

    ``g`` is either a point function or a mapping from side name to one.
    Missing entries are zero.
    """

    f: Callable | None = None
    F: Callable | None = None
    g: Callable | Mapping | None = None


def p1_gradients(mesh: Mesh) -> np.ndarray:
    corners = mesh.vertices[mesh.triangles]
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # inverse transpose of the affine map
    inv = np.empty((len(det), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e1[:, 1] / det
    inv[:, 1, 0] = -e2[:, 0] / det
    inv[:, 1, 1] = e1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.einsum("kr,tdr->tkd", ref, inv)


def _scatter(space: DiscreteSpace, local: np.ndarray) -> sp.csr_matrix:
    dofs = space.element_dofs
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = space.n_dofs
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def _boundary_matrix(space: DiscreteSpace, gamma: float) -> sp.csr_matrix:
    mesh = space.mesh
    rule = boundary_quadrature(mesh)
    # local 2x2 mass on each edge
    m = np.einsum("bq,qk,ql->bkl", rule.weights, rule.shape, rule.shape) * gamma
    ends = mesh.boundary_edges[rule.edges]
    rows, cols, vals = [], [], []
    for c in range(2):
        d = 2 * ends + c
        rows.append(np.repeat(d, 2, axis=1).ravel())
        cols.append(np.tile(d, (1, 2)).ravel())
        vals.append(m.ravel())
    n = space.n_dofs
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def local_operator(space: DiscreteSpace, diffusion: MatrixField, reaction: RotationField) -> np.ndarray:
    """(nt, 6, 6) element matrices, rows = test dof, cols = trial dof."""
    mesh = space.mesh
    rule = volume_quadrature(mesh, 2)
    nt, nq = rule.weights.shape
    pts = rule.points.reshape(-1, 2)
    Aq = diffusion(pts).reshape(nt, nq, 2, 2)
    Kq = reaction(pts).reshape(nt, nq, 2, 2)
    grads = space.gradients()
    # stiffness: int grad(phi_b)^T A grad(phi_a), identical for both components
    Aint = np.einsum("tq,tqij->tij", rule.weights, Aq)
    stiff = np.einsum("tbi,tij,taj->tab", grads, Aint, grads)
    # reaction: int phi_a phi_b K[c, d]
    react = np.einsum("tq,qa,qb,tqcd->tacbd", rule.weights, rule.bary, rule.bary, Kq)
    local = react.copy()
    local[:, :, 0, :, 0] += stiff
    local[:, :, 1, :, 1] += stiff
    return local.reshape(nt, 6, 6)


def assemble_operator(space: DiscreteSpace, diffusion: MatrixField, reaction: RotationField,
                      gamma: float) -> SparseSystem:
    """Matrix of ``int A:(Du^T Dphi) + (K u).phi + int_boundary gamma u.phi``."""
    mat = _scatter(space, local_operator(space, diffusion, reaction))
    if gamma != 0:
        mat = (mat + _boundary_matrix(space, gamma)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return SparseSystem(mat)


def _add_element_vector(space: DiscreteSpace, local: np.ndarray) -> np.ndarray:
    """Accumulate (nt, 3, 2) element contributions in fixed element order."""
    out = np.zeros((space.mesh.n_vertices, 2))
    np.add.at(out, space.mesh.triangles, local)
    return out.reshape(-1)


def _boundary_load(space: DiscreteSpace, g, edges=None) -> np.ndarray:
    mesh = space.mesh
    out = np.zeros((mesh.n_vertices, 2))
    if isinstance(g, Mapping):
        parts = [(mesh.side_edges(side), fn) for side, fn in g.items()]
    else:
        parts = [(np.arange(len(mesh.boundary_edges)), g)]
    rule = boundary_quadrature(mesh)
    for eidx, fn in parts:
        if edges is not None:
            eidx = np.intersect1d(eidx, edges)
        if len(eidx) == 0:
            continue
        pts = rule.points[eidx]
        vals = np.asarray(fn(pts.reshape(-1, 2)), dtype=float).reshape(len(eidx), 2, 2)
        local = np.einsum("bq,qk,bqc->bkc", rule.weights[eidx], rule.shape, vals)
        np.add.at(out, mesh.boundary_edges[eidx], local)
    return out.reshape(-1)


def assemble_load(space: DiscreteSpace, data: GeneralRobinData) -> np.ndarray:
    """Load ``int f.phi + F:Dphi + int_boundary g.phi`` for every test dof."""
    mesh = space.mesh
    rule = volume_quadrature(mesh, 2)
    nt, nq = rule.weights.shape
    pts = rule.points.reshape(-1, 2)
    load = np.zeros(space.n_dofs)
    if data.f is not None:
        fq = np.asarray(data.f(pts), dtype=float).reshape(nt, nq, 2)
        local = np.einsum("tq,qk,tqc->tkc", rule.weights, rule.bary, fq)
        load += _add_element_vector(space, local)
    if data.F is not None:
        Fq = np.asarray(data.F(pts), dtype=float).reshape(nt, nq, 2, 2)
        Fint = np.einsum("tq,tqcj->tcj", rule.weights, Fq)
        local = np.einsum("tcj,tkj->tkc", Fint, space.gradients())
        load += _add_element_vector(space, local)
    if data.g is not None:
        load += _boundary_load(space, data.g)
    return load


def field_at_points(mesh: Mesh, nodal: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Interpolate nodal fields (nv, ...) at barycentric points -> (nt, nq, ...)."""
    return np.einsum("qk,tk...->tq...", bary, nodal[mesh.triangles])


def _check_xi(space: DiscreteSpace, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (space.mesh.n_triangles,):
        raise ValueError(f"xi must have one value per element, got shape {xi.shape}")
    if np.any(xi < 0):
        raise ValueError("xi must be nonnegative")
    return xi


def assemble_coupling_load(space: DiscreteSpace, xi: np.ndarray, M: CouplingField,
                           u: np.ndarray) -> np.ndarray:
    """Load ``int xi (M u).psi`` with xi element-constant and u a nodal P1 field."""
    xi = _check_xi(space, xi)
    mesh = space.mesh
    rule = volume_quadrature(mesh, 2)
    nt, nq = rule.weights.shape
    Mq = M(rule.points.reshape(-1, 2)).reshape(nt, nq, 2, 2)
    uq = field_at_points(mesh, np.asarray(u).reshape(-1, 2), rule.bary)
    Mu = np.einsum("tqcd,tqd->tqc", Mq, uq)
    local = np.einsum("t,tq,qk,tqc->tkc", xi, rule.weights, rule.bary, Mu)
    return _add_element_vector(space, local)


def element_coupling_integrals(space: DiscreteSpace, M: CouplingField, u: np.ndarray,
                               psi: np.ndarray) -> np.ndarray:
    """Per-element ``int_e (M u).psi``, by the same rule as the coupling load."""
    mesh = space.mesh
    rule = volume_quadrature(mesh, 2)
    nt, nq = rule.weights.shape
    Mq = M(rule.points.reshape(-1, 2)).reshape(nt, nq, 2, 2)
    uq = field_at_points(mesh, np.asarray(u).reshape(-1, 2), rule.bary)
    pq = field_at_points(mesh, np.asarray(psi).reshape(-1, 2), rule.bary)
    return np.einsum("tq,tqcd,tqd,tqc->t", rule.weights, Mq, uq, pq)


def transpose_system(system: SparseSystem) -> SparseSystem:
    mat = system.matrix.T.tocsr()
    mat.sort_indices()
    return SparseSystem(mat, system.load)


@dataclass(frozen=True)
class TraceOperator:
    """Samples of a nodal field on one patch.

    ``matrix`` maps nodal values (nv,) to Gauss-point values (nq,);
    ``weights`` are the matching quadrature weights and ``vertices`` the patch
    vertex ids used for sup-norm sampling.
    """

    tag: str | None
    matrix: sp.csr_matrix
    weights: np.ndarray
    points: np.ndarray
    vertices: np.ndarray
    edges: np.ndarray

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def apply(self, nodal: np.ndarray) -> np.ndarray:
        nodal = np.asarray(nodal).reshape(-1, 2)
        return self.matrix @ nodal

    def vertex_values(self, nodal: np.ndarray) -> np.ndarray:
        return np.asarray(nodal).reshape(-1, 2)[self.vertices]

    def load(self, density: np.ndarray) -> np.ndarray:
        """Nodal load of ``w -> int density.w`` for density at the Gauss points."""
        return (self.matrix.T @ (self.weights[:, None] * density)).reshape(-1)


def trace_operator(mesh: Mesh, tag: str | None = None) -> TraceOperator:
    rule = boundary_quadrature(mesh, tag)
    ends = mesh.boundary_edges[rule.edges]  # (nb, 2)
    nb = len(rule.edges)
    rows = np.repeat(np.arange(2 * nb).reshape(nb, 2), 2, axis=1).reshape(nb, 2, 2)
    cols = np.broadcast_to(ends[:, None, :], (nb, 2, 2))
    vals = np.broadcast_to(rule.shape[None], (nb, 2, 2))
    mat = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nb, mesh.n_vertices))
    return TraceOperator(tag, mat, rule.weights.reshape(-1), rule.points.reshape(-1, 2),
                         np.unique(ends), rule.edges)


def interpolate(mesh: Mesh, fn: Callable) -> np.ndarray:
    """Nodal interpolant (nv, 2) of a vector point function."""
    return np.asarray(fn(mesh.vertices), dtype=float).reshape(mesh.n_vertices, 2)


# ---------------------------------------------------------------------------
# direct quadrature evaluation (independent of the assembled matrices)

def bilinear_form(space: DiscreteSpace, diffusion: MatrixField, reaction: RotationField,
                  gamma: float, trial: np.ndarray, test: np.ndarray) -> float:
    """Evaluate ``int A:(Dw^T Dpsi) + (K w).psi + int_boundary gamma w.psi`` directly."""
    mesh = space.mesh
    trial = np.asarray(trial).reshape(-1, 2)
    test = np.asarray(test).reshape(-1, 2)
    rule = volume_quadrature(mesh, 2)
    nt, nq = rule.weights.shape
    pts = rule.points.reshape(-1, 2)
    grads = space.gradients()
    Dw = np.einsum("tkc,tkj->tcj", trial[mesh.triangles], grads)  # (nt, 2, n)
    Dp = np.einsum("tkc,tkj->tcj", test[mesh.triangles], grads)
    Aq = diffusion(pts).reshape(nt, nq, 2, 2)
    # A:(Dw^T Dpsi) = sum_ij A_ij (Dw^T Dpsi)_ij = sum_ij A_ij sum_c Dw_ci Dpsi_cj
    stiff = np.einsum("tq,tqij,tci,tcj->", rule.weights, Aq, Dw, Dp)
    wq = field_at_points(mesh, trial, rule.bary)
    pq = field_at_points(mesh, test, rule.bary)
    Kq = reaction(pts).reshape(nt, nq, 2, 2)
    react = np.einsum("tq,tqcd,tqd,tqc->", rule.weights, Kq, wq, pq)
    brule = boundary_quadrature(mesh)
    ends = mesh.boundary_edges[brule.edges]
    wb = np.einsum("qk,bkc->bqc", brule.shape, trial[ends])
    pb = np.einsum("qk,bkc->bqc", brule.shape, test[ends])
    robin = gamma * np.einsum("bq,bqc,bqc->", brule.weights, wb, pb)
    return float(stiff + react + robin)


def coupling_form(space: DiscreteSpace, xi: np.ndarray, M: CouplingField, z: np.ndarray,
                  psi: np.ndarray) -> float:
    """``int xi (M z).psi`` by direct quadrature."""
    return float(np.dot(np.asarray(xi, dtype=float), element_coupling_integrals(space, M, z, psi)))


def l2_norm_sq(space: DiscreteSpace, nodal: np.ndarray) -> float:
    mesh = space.mesh
    rule = volume_quadrature(mesh, 2)
    vals = field_at_points(mesh, np.asarray(nodal).reshape(-1, 2), rule.bary)
    return float(np.einsum("tq,tqc,tqc->", rule.weights, vals, vals))


def h1_seminorm_sq(space: DiscreteSpace, nodal: np.ndarray) -> float:
    mesh = space.mesh
    D = np.einsum("tkc,tkj->tcj", np.asarray(nodal).reshape(-1, 2)[mesh.triangles], space.gradients())
    return float(np.einsum("t,tcj,tcj->", mesh.areas, D, D))


def boundary_l2_norm_sq(space: DiscreteSpace, nodal: np.ndarray) -> float:
    tr = trace_operator(space.mesh)
    vals = tr.apply(nodal)
    return float(np.sum(tr.weights[:, None] * vals * vals))


def write_matrix(mat: sp.spmatrix, path) -> None:
    """Coordinate text format: ``row col value`` per line."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {mat.shape[0]} {mat.shape[1]} {coo.nnz}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k]):.17g}\n")
