"""Coefficient fields of the coupled Robin systems and the optical-tomography model.

Every field is a pure function of an array of points with shape ``(n, 2)``.
The reaction terms K and L have rotation form ``[[k1, -k2], [k2, k1]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh, volume_quadrature

PointFn = Callable[[np.ndarray], np.ndarray]


def constant_scalar(value: float) -> PointFn:
    value = float(value)

    def f(points):
        return np.full(len(points), value)

    return f


def constant_matrix(value) -> PointFn:
    value = np.array(value, dtype=float)
    if value.ndim == 0:
        value = value * np.eye(2)

    def f(points):
        return np.broadcast_to(value, (len(points), 2, 2)).copy()

    return f


def piecewise(default, regions, kind: str = "scalar") -> PointFn:
    """Per-rectangle values: ``regions`` is a list of ``((x0, x1, y0, y1), value)``.

    Later regions override earlier ones; points outside every box get ``default``.
    """
    make = constant_scalar if kind == "scalar" else constant_matrix
    base = make(default)
    parts = [(tuple(map(float, box)), make(v)) for box, v in regions]

    def f(points):
        out = base(points)
        x, y = points[:, 0], points[:, 1]
        for (x0, x1, y0, y1), g in parts:
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            if inside.any():
                out[inside] = g(points[inside])
        return out

    return f


@dataclass(frozen=True)
class MatrixField:
    """Symmetric 2x2 diffusion tensor field."""

    fn: PointFn

    def __call__(self, points):
        return np.asarray(self.fn(points), dtype=float).reshape(len(points), 2, 2)

    @classmethod
    def constant(cls, value):
        return cls(constant_matrix(value))


@dataclass(frozen=True)
class RotationField:
    k1: PointFn
    k2: PointFn

    def parts(self, points):
        return (np.asarray(self.k1(points), dtype=float).reshape(len(points)),
                np.asarray(self.k2(points), dtype=float).reshape(len(points)))

    def __call__(self, points):
        a, b = self.parts(points)
        out = np.empty((len(points), 2, 2))
        out[:, 0, 0] = a
        out[:, 0, 1] = -b
        out[:, 1, 0] = b
        out[:, 1, 1] = a
        return out

    @classmethod
    def constant(cls, k1, k2=0.0):
        return cls(constant_scalar(k1), constant_scalar(k2))


@dataclass(frozen=True)
class CouplingField:
    fn: PointFn

    def __call__(self, points):
        return np.asarray(self.fn(points), dtype=float).reshape(len(points), 2, 2)

    def transposed(self) -> "CouplingField":
        fn = self.fn
        return CouplingField(lambda pts: np.swapaxes(np.asarray(fn(pts), dtype=float), -1, -2))

    @classmethod
    def constant(cls, value):
        return cls(constant_matrix(value))


@dataclass(frozen=True)
class CoefficientSet:
    A: MatrixField
    B: MatrixField
    K: RotationField
    L: RotationField
    M: CouplingField
    gamma: float = 0.5
    a0: float = 0.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.a0 > 0:
            raise ValueError(f"a0 must be positive, got {self.a0}")


@dataclass
class ValidationReport:
    passed: bool
    a0: float
    min_eig_A: float
    max_eig_A: float
    min_eig_B: float
    max_eig_B: float
    min_k1: float
    min_l1: float
    max_norm_K: float
    max_norm_L: float
    max_norm_M: float
    asymmetry: float
    violations: list = field(default_factory=list)  # (field, point index, value)

    def summary(self) -> str:
        status = "pass" if self.passed else f"FAIL ({len(self.violations)} violations)"
        return (f"coefficients {status}: sigma(A) in [{self.min_eig_A:.6g}, {self.max_eig_A:.6g}], "
                f"sigma(B) in [{self.min_eig_B:.6g}, {self.max_eig_B:.6g}], "
                f"min k1 {self.min_k1:.6g}, min l1 {self.min_l1:.6g}, a0 {self.a0:.6g}")


def sample_points(mesh: Mesh) -> np.ndarray:
    """All volume quadrature points used anywhere in assembly (order 1 and 2)."""
    p1 = volume_quadrature(mesh, 1).points.reshape(-1, 2)
    p2 = volume_quadrature(mesh, 2).points.reshape(-1, 2)
    return np.vstack([p1, p2])


def validate(coeffs: CoefficientSet, mesh: Mesh) -> ValidationReport:
    """Check the ellipticity and sign hypotheses at every quadrature point.

    Never raises; the report lists each violating point. The comparison is
    exact (tolerance 0).
    """
    pts = sample_points(mesh)
    a0 = coeffs.a0
    violations = []

    def spectrum(name, mat):
        sym = 0.5 * (mat + np.swapaxes(mat, 1, 2))
        asym = float(np.max(np.abs(mat - sym))) if len(mat) else 0.0
        eig = np.linalg.eigvalsh(sym)
        lo, hi = eig[:, 0], eig[:, -1]
        bad = np.flatnonzero((lo < a0) | (hi > 1.0 / a0) | ~np.isfinite(lo) | ~np.isfinite(hi))
        violations.extend((name, int(k), float(lo[k] if lo[k] < a0 else hi[k])) for k in bad)
        if asym > 0:
            violations.append((name + ".symmetry", -1, asym))
        return float(lo.min()), float(hi.max()), asym

    minA, maxA, asA = spectrum("A", coeffs.A(pts))
    minB, maxB, asB = spectrum("B", coeffs.B(pts))

    def diag(name, field):
        d, _ = field.parts(pts)
        bad = np.flatnonzero(~(d >= a0))
        violations.extend((name, int(k), float(d[k])) for k in bad)
        return float(d.min())

    mink1 = diag("k1", coeffs.K)
    minl1 = diag("l1", coeffs.L)

    def supnorm(name, mat):
        n = np.linalg.norm(mat, ord=2, axis=(1, 2))
        bad = np.flatnonzero(~np.isfinite(n))
        violations.extend((name, int(k), float(n[k])) for k in bad)
        return float(np.max(n))

    nK = supnorm("K", coeffs.K(pts))
    nL = supnorm("L", coeffs.L(pts))
    nM = supnorm("M", coeffs.M(pts))

    return ValidationReport(
        passed=not violations, a0=a0,
        min_eig_A=minA, max_eig_A=maxA, min_eig_B=minB, max_eig_B=maxB,
        min_k1=mink1, min_l1=minl1, max_norm_K=nK, max_norm_L=nL, max_norm_M=nM,
        asymmetry=max(asA, asB), violations=violations,
    )


@dataclass(frozen=True)
class FOTModel:
    """Frequency-domain fluorescence optical tomography parameters.

    Lengths in cm, times in s (any consistent unit system works). ``xi_ref``
    is the dye level at which the diffusion and absorption terms are frozen.
    """

    mu_ai: float = 0.02
    mu_s_prime: float = 1.0
    omega: float = 0.3
    c: float = 1.0
    phi_q: float = 1.0
    tau: float = 0.0
    xi_ref: float = 0.0

    def __post_init__(self):
        for name in ("mu_ai", "mu_s_prime", "omega", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"FOTModel.{name} must be positive")
        if not self.tau >= 0:
            raise ValueError("FOTModel.tau must be nonnegative")
        if not 0 < self.phi_q <= 1:
            raise ValueError("FOTModel.phi_q must lie in (0, 1]")
        if not self.xi_ref >= 0:
            raise ValueError("FOTModel.xi_ref must be nonnegative")


def build_fot(model: FOTModel, gamma: float = 0.5, a0: float | None = None) -> CoefficientSet:
    """Frozen-coefficient FOT set: isotropic diffusion, rotation-form absorption.

    If ``a0`` is omitted, the largest value compatible with the resulting
    fields is used.
    """
    total = model.mu_ai + model.mu_s_prime + model.xi_ref
    if total == 0:
        raise ZeroDivisionError("mu_ai + mu_s_prime + xi_ref must be nonzero")
    d = 1.0 / (3.0 * total)
    k1 = model.mu_ai + model.xi_ref
    k2 = model.omega / model.c
    wt = model.omega * model.tau
    scale = model.phi_q / (1.0 + wt * wt)
    Mmat = scale * np.array([[1.0, -wt], [wt, 1.0]])
    if a0 is None:
        a0 = min(d, 1.0 / d, k1)
    A = MatrixField.constant(d)
    K = RotationField.constant(k1, k2)
    return CoefficientSet(A=A, B=A, K=K, L=K, M=CouplingField.constant(Mmat), gamma=gamma, a0=a0)


def identity_set(k1: float = 1.0, k2: float = 0.0, gamma: float = 0.5, a0: float = 0.5,
                 M=None) -> CoefficientSet:
    """A = B = I, K = L = rotation(k1, k2), M = I unless given."""
    A = MatrixField.constant(1.0)
    K = RotationField.constant(k1, k2)
    Mf = CouplingField.constant(np.eye(2) if M is None else M)
    return CoefficientSet(A=A, B=A, K=K, L=K, M=Mf, gamma=gamma, a0=a0)
