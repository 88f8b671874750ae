"""Discrete adjoints, the reduced gradient and the multiplier identities.

psi_i solves the transposed v-system with the boundary density of the
misfit as load; phi_i solves the transposed u-system with volume source
``xi M^T psi_i``. With these, the directional derivative of the reduced
cost ``j(xi) = I_p(u, v(xi), xi)`` in direction eta is ``int eta G``, where

    G = alpha * d(mu_p)/dx + sum_i (M u_i) . psi_i        (per element)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import assemble_coupling_load, bilinear_form, coupling_form, element_coupling_integrals
from .cost import CostConfig, mu_density, nu_density, patch_density
from .forward import ForwardModel, as_values
from .norms import w1q_norm


@dataclass
class AdjointState:
    psi_fields: np.ndarray  # (N, nv, 2)
    phi_fields: np.ndarray | None  # (N, nv, 2), None until solved
    Cp: float | None = None
    reports: list | None = None


@dataclass
class GradientField:
    values: np.ndarray  # per element
    regulariser_part: np.ndarray
    coupling_part: np.ndarray

    def pairing(self, mesh, eta) -> float:
        """``int eta G`` over the domain."""
        return float(np.sum(mesh.areas * np.asarray(eta) * self.values))


def psi_loads(model: ForwardModel, v_fields, p: float) -> list:
    return [model.traces[i].load(patch_density(model, v_fields, p, i)) for i in range(model.N)]


def solve_psi(model: ForwardModel, v_fields, p: float) -> tuple[np.ndarray, list]:
    reports = [model.v_solver.solve(b, tol=model.tol, transpose=True) for b in psi_loads(model, v_fields, p)]
    return np.stack([r.solution.reshape(-1, 2) for r in reports]), reports


def phi_loads(model: ForwardModel, psi_fields, xi) -> list:
    Mt = model.coeffs.M.transposed()
    xi = as_values(xi)
    return [assemble_coupling_load(model.space, xi, Mt, psi) for psi in psi_fields]


def solve_phi(model: ForwardModel, psi_fields, xi) -> tuple[np.ndarray, list]:
    reports = [model.u_solver.solve(b, tol=model.tol, transpose=True) for b in phi_loads(model, psi_fields, xi)]
    return np.stack([r.solution.reshape(-1, 2) for r in reports]), reports


def reduced_gradient(model: ForwardModel, xi, u_fields, psi_fields, config: CostConfig) -> GradientField:
    xi = as_values(xi)
    areas = model.mesh.areas
    coupling = np.zeros(model.mesh.n_triangles)
    for u, psi in zip(u_fields, psi_fields):
        coupling += element_coupling_integrals(model.space, model.coeffs.M, u, psi)
    coupling /= areas
    if config.alpha > 0:
        reg = config.alpha * mu_density(model.mesh, xi, config.p).element_values
    else:
        reg = np.zeros_like(coupling)
    return GradientField(reg + coupling, reg, coupling)


def compute_Cp(model: ForwardModel, adjoint: AdjointState) -> float:
    """``||phi||_{W^{1,m/(m-2)}} + ||psi||_{W^{1,1}}`` over the stacked N-tuples."""
    m = model.data.m
    q = m / (m - 2.0)
    out = w1q_norm(model.space, adjoint.psi_fields, 1.0)
    if adjoint.phi_fields is not None:
        out += w1q_norm(model.space, adjoint.phi_fields, q)
    return float(out)


def solve_adjoint(model: ForwardModel, state, config: CostConfig, with_phi: bool = True) -> AdjointState:
    psi, rep_psi = solve_psi(model, state.v_fields, config.p)
    phi, rep_phi = solve_phi(model, psi, state.xi) if with_phi else (None, [])
    adj = AdjointState(psi, phi, None, rep_psi + rep_phi)
    adj.Cp = compute_Cp(model, adj)
    return adj


# ---------------------------------------------------------------------------
# both sides of the multiplier identities, by direct quadrature

def psi_identity(model: ForwardModel, v_fields, psi_fields, w_fields, p: float) -> tuple[float, float]:
    """(boundary pairing of w with the misfit measure, sum_i B-form(w_i, psi_i))."""
    dens = nu_density(model, v_fields, p)
    bt = model.boundary_trace
    w_points = np.stack([bt.apply(w) for w in w_fields], axis=-1)  # (nq, 2, N)
    lhs = float(np.sum(bt.weights[:, None, None] * w_points * dens.values))
    c = model.coeffs
    rhs = sum(bilinear_form(model.space, c.B, c.L, c.gamma, w, psi) for w, psi in zip(w_fields, psi_fields))
    return lhs, float(rhs)


def phi_identity(model: ForwardModel, xi, psi_fields, phi_fields, z_fields) -> tuple[float, float]:
    """(sum_i A-form(z_i, phi_i), sum_i int xi (M z_i).psi_i)."""
    c = model.coeffs
    lhs = sum(bilinear_form(model.space, c.A, c.K, c.gamma, z, phi) for z, phi in zip(z_fields, phi_fields))
    rhs = sum(coupling_form(model.space, as_values(xi), c.M, z, psi) for z, psi in zip(z_fields, psi_fields))
    return float(lhs), float(rhs)


def relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale
