"""Discrete Lebesgue and Sobolev norms by quadrature."""

from __future__ import annotations

import numpy as np

from .assembly import DiscreteSpace, field_at_points
from .mesh import volume_quadrature


def lq_norm(magnitudes: np.ndarray, weights: np.ndarray, q: float) -> float:
    """``(sum w |f|^q)^(1/q)`` for pointwise magnitudes, scaled by the max to avoid overflow."""
    magnitudes = np.abs(np.asarray(magnitudes, dtype=float)).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    top = magnitudes.max() if magnitudes.size else 0.0
    if top == 0:
        return 0.0
    if np.isinf(q):
        return float(top)
    return float(top * np.sum(weights * (magnitudes / top) ** q) ** (1.0 / q))


def _stack(fields) -> np.ndarray:
    """(k, nv, 2) from one nodal field or a stack of them."""
    arr = np.asarray(fields, dtype=float)
    return arr.reshape(-1, arr.shape[-2], 2) if arr.ndim == 3 else arr.reshape(1, -1, 2)


def values_and_gradients(space: DiscreteSpace, fields):
    """Pointwise Euclidean magnitudes of the stacked values and gradients.

    Returns (|f| at volume points, weights) and (|Df| per element, areas).
    """
    mesh = space.mesh
    stack = _stack(fields)
    rule = volume_quadrature(mesh, 2)
    vals = np.stack([field_at_points(mesh, f, rule.bary) for f in stack])  # (k, nt, nq, 2)
    mag = np.sqrt(np.sum(vals ** 2, axis=(0, 3)))
    grads = space.gradients()
    D = np.stack([np.einsum("tkc,tkj->tcj", f[mesh.triangles], grads) for f in stack])
    dmag = np.sqrt(np.sum(D ** 2, axis=(0, 2, 3)))
    return (mag, rule.weights), (dmag, mesh.areas)


def lq_field_norm(space: DiscreteSpace, fields, q: float) -> float:
    (mag, w), _ = values_and_gradients(space, fields)
    return lq_norm(mag, w, q)


def w1q_norm(space: DiscreteSpace, fields, q: float) -> float:
    """``||f||_{L^q} + ||Df||_{L^q}`` with Euclidean / Frobenius pointwise norms."""
    (mag, w), (dmag, areas) = values_and_gradients(space, fields)
    return lq_norm(mag, w, q) + lq_norm(dmag, areas, q)



# degree-4 six-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_BARY4 = np.array([[_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
                   [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2]])
_W4 = np.array([_W1] * 3 + [_W2] * 3)


def l2_error(space: DiscreteSpace, nodal, fn) -> float:
    """``||u_h - u||_{L^2}`` for a nodal field and a vector point function (degree-4 rule)."""
    mesh = space.mesh
    uh = field_at_points(mesh, np.asarray(nodal, dtype=float).reshape(-1, 2), _BARY4)
    pts = np.einsum("qk,tkd->tqd", _BARY4, mesh.vertices[mesh.triangles])
    ex = np.asarray(fn(pts.reshape(-1, 2))).reshape(uh.shape)
    w = mesh.areas[:, None] * _W4[None, :]
    return float(np.sqrt(np.sum(w * np.sum((uh - ex) ** 2, axis=-1))))
