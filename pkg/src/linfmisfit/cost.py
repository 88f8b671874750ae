"""Regularised averaged Lp norms, the Lp / supremal costs and their derivative measures.

The regularised modulus is ``|x|_(p) = sqrt(|x|^2 + p^-2)``, so every
regularised norm is bounded below by ``1/p``. Powers ``|x|_(p)^p`` are never
formed directly: all averages are taken relative to the running maximum,
which keeps p = 128 and beyond finite for any field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import State, as_values
from .mesh import volume_quadrature


class RegimeError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    """Regularisation weight, upper bound and exponent.

    Exactly one regime is allowed: Tykhonov (``alpha > 0``, ``M = inf``) or
    box (``alpha = 0``, ``M < inf``).
    """

    alpha: float = 0.0
    M: float = np.inf
    p: float = 4.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise RegimeError(f"alpha must be nonnegative, got {self.alpha}")
        if not self.M > 0:
            raise RegimeError(f"M must be positive, got {self.M}")
        if not self.p >= 2:
            raise RegimeError(f"p must be at least 2, got {self.p}")
        if self.mode is None:
            raise RegimeError(f"need alpha > 0 with M = inf, or alpha = 0 with M < inf "
                              f"(got alpha={self.alpha}, M={self.M})")

    @property
    def mode(self) -> str | None:
        if self.alpha > 0 and np.isinf(self.M):
            return "tykhonov"
        if self.alpha == 0 and np.isfinite(self.M):
            return "box"
        return None

    def with_p(self, p: float) -> "CostConfig":
        return CostConfig(self.alpha, self.M, p)


def reg_abs(x, p: float, axis=None):
    """``sqrt(|x|^2 + p^-2)``; ``axis`` selects the vector components, if any."""
    x = np.asarray(x, dtype=float)
    sq = x * x if axis is None else np.sum(x * x, axis=axis)
    return np.sqrt(sq + p ** -2.0)


def _log_mean_power(g: np.ndarray, weights: np.ndarray, p: float) -> tuple[float, float]:
    """(log gmax, log of the weighted mean of (g/gmax)^p); weights sum to the carrier measure."""
    gmax = float(np.max(g))
    ratio = np.exp(p * (np.log(g) - np.log(gmax)))
    mean = float(np.sum(weights * ratio) / np.sum(weights))
    return np.log(gmax), np.log(mean)


def dot_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """Averaged regularised norm ``(avg |f|_(p)^p)^(1/p)``.

    ``values`` has shape (nq,) for scalars or (nq, 2) for vectors, at the
    quadrature points whose weights are ``weights``.
    """
    values = np.asarray(values, dtype=float)
    g = reg_abs(values, p, axis=-1 if values.ndim > 1 else None)
    lgmax, lmean = _log_mean_power(g, np.asarray(weights, dtype=float), p)
    return float(np.exp(lgmax + lmean / p))


def lp_dot_norm(field, carrier, p: float) -> float:
    """Regularised norm on a carrier: a ``TraceOperator`` or a mesh (element values)."""
    if hasattr(carrier, "weights") and hasattr(carrier, "matrix"):
        vals = np.asarray(field, dtype=float)
        if vals.shape[0] != len(carrier.weights):
            vals = carrier.apply(vals)
        return dot_norm(vals, carrier.weights, p)
    return dot_norm(np.asarray(field, dtype=float), carrier.areas, p)


@dataclass
class CostBreakdown:
    p: float
    misfits: list
    regulariser: float
    total: float

    def as_dict(self) -> dict:
        return {"p": self.p, "misfits": list(self.misfits), "regulariser": self.regulariser,
                "total": self.total}


def misfit_samples(model, v_fields: np.ndarray, predictions=None):
    """Per patch: misfit at Gauss points (nq, 2) and at patch vertices (nvp, 2)."""
    preds = model.data.predictions if predictions is None else predictions
    if preds is None:
        raise ValueError("problem data carry no predictions")
    out = []
    for tr, pred, v in zip(model.traces, preds, v_fields):
        out.append((tr.apply(v) - pred.qp, tr.vertex_values(v) - pred.vertex))
    return out


def eval_Ip(model, state: State, xi, config: CostConfig) -> CostBreakdown:
    p = config.p
    misfits = [dot_norm(dq, tr.weights, p)
               for (dq, _), tr in zip(misfit_samples(model, state.v_fields), model.traces)]
    reg = config.alpha * dot_norm(as_values(xi), model.mesh.areas, p) if config.alpha > 0 else 0.0
    return CostBreakdown(p, misfits, reg, float(sum(misfits) + reg))


def sup_misfits(model, v_fields) -> list:
    """Per-patch sup of the misfit over Gauss points and patch vertices."""
    return [max(float(np.max(np.linalg.norm(dq, axis=1))), float(np.max(np.linalg.norm(dv, axis=1))))
            for dq, dv in misfit_samples(model, v_fields)]


def eval_Iinf(model, state: State, xi, config: CostConfig) -> float:
    """Sum of per-patch sup misfits, plus ``alpha max xi``."""
    total = float(sum(sup_misfits(model, state.v_fields)))
    xi = as_values(xi)
    if config.alpha > 0:
        total += config.alpha * float(np.max(np.abs(xi)))
    return total


@dataclass
class MeasureDensity:
    """Density of an absolutely continuous measure at quadrature points.

    ``values`` has shape (nq,) (volume measure) or (nq, 2, N) (boundary,
    matrix-valued); ``total_variation`` is the quadrature integral of the
    pointwise Euclidean (Frobenius) norm.
    """

    carrier: str
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    element_values: np.ndarray | None = None
    total_variation: float = field(init=False)

    def __post_init__(self):
        v = self.values.reshape(len(self.weights), -1)
        self.total_variation = float(np.sum(self.weights * np.sqrt(np.sum(v * v, axis=1))))


def _density_factor(g: np.ndarray, weights: np.ndarray, p: float) -> np.ndarray:
    """``g^(p-2) / (|carrier| ||.||^(p-1))`` per point, evaluated in log-space."""
    lgmax, lmean = _log_mean_power(g, weights, p)
    lnorm = lgmax + lmean / p
    return np.exp((p - 2.0) * np.log(g) - (p - 1.0) * lnorm) / np.sum(weights)


def mu_density(mesh, xi, p: float) -> MeasureDensity:
    xi = as_values(xi)
    areas = mesh.areas
    dens = _density_factor(reg_abs(xi, p), areas, p) * xi
    # constant per element; expanded onto the 3-point rule so moments use quadrature
    rule = volume_quadrature(mesh, 2)
    nq = rule.weights.shape[1]
    return MeasureDensity("domain", rule.points.reshape(-1, 2), rule.weights.reshape(-1),
                          np.repeat(dens, nq), element_values=dens)


def nu_density(model, v_fields: np.ndarray, p: float, predictions=None) -> MeasureDensity:
    """Matrix-valued boundary density; column i lives on patch B_i."""
    bt = model.boundary_trace
    nq = len(bt.weights)
    values = np.zeros((nq, 2, model.N))
    for i, ((dq, _), tr) in enumerate(zip(misfit_samples(model, v_fields, predictions), model.traces)):
        dens = _density_factor(reg_abs(dq, p, axis=-1), tr.weights, p)[:, None] * dq
        # patch Gauss points are the global ones of its edges, in edge order
        rows = (2 * tr.edges[:, None] + np.arange(2)[None, :]).ravel()
        values[rows, :, i] = dens
    return MeasureDensity("boundary", bt.points, bt.weights, values)


def patch_density(model, v_fields, p: float, i: int, predictions=None) -> np.ndarray:
    """Column i of the boundary density at the Gauss points of patch B_i, shape (nq_i, 2)."""
    dq, _ = misfit_samples(model, v_fields, predictions)[i]
    return _density_factor(reg_abs(dq, p, axis=-1), model.traces[i].weights, p)[:, None] * dq


def measure_moment(density: MeasureDensity, test) -> np.ndarray | float:
    """``int test d(measure)``; ``test`` is a point function or point values.

    Scalar tests against the matrix-valued boundary measure give one moment
    per (component, experiment) pair.
    """
    vals = test(density.points) if callable(test) else test
    vals = np.asarray(vals, dtype=float)
    dens = density.values
    if vals.ndim == 1 and dens.ndim > 1:
        vals = vals.reshape((-1,) + (1,) * (dens.ndim - 1))
    integrand = vals * dens
    out = np.tensordot(density.weights, integrand, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out
