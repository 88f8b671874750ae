"""Forward solves of the coupled state systems.

For each experiment i the u-system (diffusion A, reaction K, sources S_i on
the domain and s_i on the boundary) is independent of xi and solved once.
The v-system (diffusion B, reaction L, homogeneous Robin data) is driven by
the coupling source ``xi M u_i``. Both matrices are factorised once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import (DiscreteSpace, GeneralRobinData, TraceOperator, assemble_coupling_load,
                       assemble_load, assemble_operator, trace_operator)
from .coefficients import CoefficientSet, validate
from .linsolve import DEFAULT_TOL, LUSolver, SolverFailure
from .mesh import Mesh, boundary_quadrature, volume_quadrature
from .norms import lq_norm, lq_field_norm, w1q_norm


class CoefficientError(ValueError):
    pass


@dataclass
class ParameterField:
    """Element-constant absorption parameter with ``0 <= xi <= M``."""

    values: np.ndarray
    M: float = np.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0) or np.any(self.values > self.M):
            raise ValueError("parameter field violates 0 <= xi <= M")


def as_values(xi) -> np.ndarray:
    return xi.values if isinstance(xi, ParameterField) else np.asarray(xi, dtype=float)


@dataclass
class Prediction:
    """Predicted v_i on patch B_i, sampled at its Gauss points and its vertices."""

    qp: np.ndarray  # (nq, 2)
    vertex: np.ndarray  # (nvp, 2)

    @classmethod
    def from_function(cls, trace: TraceOperator, mesh: Mesh, fn: Callable) -> "Prediction":
        qp = np.asarray(fn(trace.points), dtype=float).reshape(-1, 2)
        vx = np.asarray(fn(mesh.vertices[trace.vertices]), dtype=float).reshape(-1, 2)
        return cls(qp, vx)

    @classmethod
    def from_nodal(cls, trace: TraceOperator, nodal: np.ndarray) -> "Prediction":
        return cls(trace.apply(nodal), trace.vertex_values(nodal).copy())

    def perturbed(self, rng: np.random.Generator, amplitude: float) -> "Prediction":
        """Independent uniform noise in ``[-amplitude, amplitude]`` on every sample and component."""
        if amplitude == 0:
            return Prediction(self.qp.copy(), self.vertex.copy())
        return Prediction(self.qp + rng.uniform(-amplitude, amplitude, self.qp.shape),
                          self.vertex + rng.uniform(-amplitude, amplitude, self.vertex.shape))

    def perturbed_smooth(self, rng: np.random.Generator, amplitude: float, s_qp, s_vertex,
                         length: float, modes: int = 4) -> "Prediction":
        """Add a random sine series in the patch coordinate ``s``, with sup norm at most ``amplitude``.

        Coefficients are uniform in [-1, 1] and phases uniform in [0, 2 pi), then
        the series is scaled by ``amplitude / sum |a_k|``. Gauss-point and vertex
        samples see the same field.
        """
        k = np.arange(1, modes + 1)
        a = rng.uniform(-1.0, 1.0, (2, modes))
        phase = rng.uniform(0.0, 2 * np.pi, (2, modes))
        scale = amplitude / np.maximum(np.sum(np.abs(a), axis=1), 1e-300)

        def noise(s):
            arg = np.pi * np.asarray(s)[:, None, None] * k / length + phase  # (n, 2, modes)
            return scale * np.sum(a * np.sin(arg), axis=-1)

        return Prediction(self.qp + noise(s_qp), self.vertex + noise(s_vertex))


@dataclass
class ProblemData:
    """Sources, patches and predictions of the N experiments.

    ``boundary_sources[i]`` is a point function or a mapping side -> point
    function; ``patches[i]`` is the tag of the patch B_i on the mesh.
    ``m`` is the integrability exponent of the u-data, used by the norms of
    the multiplier phi. Predictions may be set after construction.
    """

    sources: Sequence
    boundary_sources: Sequence
    patches: Sequence[str]
    predictions: list | None = None
    m: float = 4.0

    def __post_init__(self):
        n = len(self.sources)
        if n < 1:
            raise ValueError("at least one experiment is required")
        if len(self.boundary_sources) != n or len(self.patches) != n:
            raise ValueError("sources, boundary_sources and patches must have the same length")
        if self.predictions is not None and len(self.predictions) != n:
            raise ValueError("one prediction per experiment is required")
        if not self.m > 2:
            raise ValueError(f"m must exceed 2, got {self.m}")

    @property
    def N(self) -> int:
        return len(self.sources)


@dataclass
class State:
    u_fields: np.ndarray  # (N, nv, 2)
    v_fields: np.ndarray  # (N, nv, 2)
    xi: np.ndarray
    reports: list = field(default_factory=list)


class ForwardModel:
    """Factorised u/v systems for one mesh, coefficient set and data."""

    def __init__(self, mesh: Mesh, coeffs: CoefficientSet, data: ProblemData,
                 tol: float = DEFAULT_TOL, check: bool = True):
        self.mesh = mesh
        self.space = DiscreteSpace(mesh)
        self.coeffs = coeffs
        self.data = data
        self.tol = tol
        if check:
            report = validate(coeffs, mesh)
            if not report.passed:
                raise CoefficientError(report.summary())
        self.u_system = assemble_operator(self.space, coeffs.A, coeffs.K, coeffs.gamma)
        self.v_system = assemble_operator(self.space, coeffs.B, coeffs.L, coeffs.gamma)
        try:
            self.u_solver = LUSolver(self.u_system.matrix)
            self.v_solver = LUSolver(self.v_system.matrix)
        except SolverFailure as exc:
            exc.stage = "factorise"
            raise
        self.traces = [trace_operator(mesh, tag) for tag in data.patches]
        self.boundary_trace = trace_operator(mesh)
        self._u = None
        self._u_reports = None

    @property
    def N(self) -> int:
        return self.data.N

    def u_loads(self) -> list:
        return [assemble_load(self.space, GeneralRobinData(f=S, g=s))
                for S, s in zip(self.data.sources, self.data.boundary_sources)]

    def solve_u(self) -> np.ndarray:
        if self._u is None:
            reports = [self.u_solver.solve(b, tol=self.tol) for b in self.u_loads()]
            u = np.stack([r.solution.reshape(-1, 2) for r in reports])
            u.setflags(write=False)
            self._u, self._u_reports = u, reports
        return self._u

    def coupling_loads(self, xi, u_fields=None) -> list:
        u_fields = self.solve_u() if u_fields is None else u_fields
        xi = as_values(xi)
        return [assemble_coupling_load(self.space, xi, self.coeffs.M, u) for u in u_fields]

    def solve_v(self, xi, u_fields=None) -> tuple[np.ndarray, list]:
        reports = [self.v_solver.solve(b, tol=self.tol) for b in self.coupling_loads(xi, u_fields)]
        return np.stack([r.solution.reshape(-1, 2) for r in reports]), reports

    def state(self, xi) -> State:
        u = self.solve_u()
        v, reports = self.solve_v(xi, u)
        return State(u, v, as_values(xi).copy(), list(self._u_reports) + reports)

    def patch_coordinate(self, i: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Coordinate along the side of patch i at its Gauss points and vertices, and the side length."""
        tr = self.traces[i]
        sides = set(self.mesh.edge_sides[tr.edges])
        if len(sides) != 1:
            raise ValueError(f"patch {self.data.patches[i]!r} spans several sides")
        axis = 0 if sides.pop() in ("bottom", "top") else 1
        length = self.mesh.width if axis == 0 else self.mesh.height
        return tr.points[:, axis], self.mesh.vertices[tr.vertices, axis], length

    def inverse_crime_predictions(self, xi_true, rng=None, noise: float = 0.0,
                                  noise_model: str = "samples") -> list:
        """Predictions given by the traces of the forward solve at ``xi_true``.

        ``noise_model`` is "samples" (independent per sample) or "smooth"
        (see ``Prediction.perturbed_smooth``).
        """
        v, _ = self.solve_v(xi_true)
        preds = [Prediction.from_nodal(tr, vi) for tr, vi in zip(self.traces, v)]
        if noise:
            rng = np.random.default_rng(0) if rng is None else rng
            if noise_model == "samples":
                preds = [p.perturbed(rng, noise) for p in preds]
            elif noise_model == "smooth":
                preds = [p.perturbed_smooth(rng, noise, *self.patch_coordinate(i)) for i, p in enumerate(preds)]
            else:
                raise ValueError(f"unknown noise model {noise_model!r}")
        return preds


def xi_from_function(mesh: Mesh, fn: Callable) -> np.ndarray:
    """Element values of a scalar point function, sampled at centroids."""
    return np.asarray(fn(mesh.centroids), dtype=float).reshape(mesh.n_triangles)


def solve_u(data: ProblemData, coeffs: CoefficientSet, space: DiscreteSpace) -> np.ndarray:
    return ForwardModel(space.mesh, coeffs, data).solve_u()


def solve_v(data: ProblemData, coeffs: CoefficientSet, space: DiscreteSpace, xi,
            u_fields: np.ndarray) -> np.ndarray:
    return ForwardModel(space.mesh, coeffs, data).solve_v(xi, u_fields)[0]


@dataclass
class EstimateReport:
    v_ratios: list  # ||v_i||_{W1p} / (||xi||_{Lp} ||u_i||_{Lm}); None if xi == 0
    u_ratios: list  # ||u_i||_{W1,m/2} / (||s_i||_{L^{m/2}} + ||S_i||_{L^{nm/(2n+m)}})
    max_v: float
    max_abs_v: float
    passed: bool

    def as_dict(self) -> dict:
        return {"v_ratios": self.v_ratios, "u_ratios": self.u_ratios, "max_v_ratio": self.max_v,
                "max_abs_v": self.max_abs_v, "passed": self.passed}


def _source_norms(model: ForwardModel, i: int, q_volume: float, q_boundary: float) -> float:
    mesh = model.mesh
    rule = volume_quadrature(mesh, 2)
    S = np.asarray(model.data.sources[i](rule.points.reshape(-1, 2))).reshape(-1, 2)
    nS = lq_norm(np.linalg.norm(S, axis=1), rule.weights.ravel(), q_volume)
    brule = boundary_quadrature(mesh)
    g = model.data.boundary_sources[i]
    pts = brule.points.reshape(-1, 2)
    if isinstance(g, dict):
        vals = np.zeros((len(pts), 2))
        sides = np.repeat(mesh.edge_sides[brule.edges], 2)
        for side, fn in g.items():
            sel = sides == side
            vals[sel] = np.asarray(fn(pts[sel])).reshape(-1, 2)
    else:
        vals = np.asarray(g(pts)).reshape(-1, 2)
    ns = lq_norm(np.linalg.norm(vals, axis=1), brule.weights.ravel(), q_boundary)
    return nS + ns


def estimate_check(model: ForwardModel, state: State, p: float) -> EstimateReport:
    """Discrete stability ratios of the a priori estimates for u and v.

    With n = 2 the u-estimate uses the exponents ``m/2`` (boundary) and
    ``2m/(4+m)`` (volume).
    """
    m = model.data.m
    space = model.space
    n = 2
    xi_norm = lq_norm(state.xi, model.mesh.areas, p)
    v_ratios, u_ratios = [], []
    for i in range(model.N):
        u, v = state.u_fields[i], state.v_fields[i]
        data_norm = _source_norms(model, i, n * m / (2 * n + m), m / 2)
        u_ratios.append(w1q_norm(space, u, m / 2) / data_norm if data_norm > 0 else None)
        if xi_norm == 0:
            v_ratios.append(None)
        else:
            denom = xi_norm * lq_field_norm(space, u, m)
            v_ratios.append(w1q_norm(space, v, p) / denom if denom > 0 else None)
    max_abs_v = float(np.max(np.abs(state.v_fields)))
    finite = [r for r in v_ratios if r is not None]
    max_v = max(finite) if finite else 0.0
    passed = bool(all(np.isfinite(finite))) and (xi_norm > 0 or max_abs_v == 0.0)
    return EstimateReport(v_ratios, u_ratios, max_v, max_abs_v, passed)


def estimate_refinement_study(build: Callable[[int], tuple], sizes: Sequence[int], p: float,
                              growth: float = 1.2) -> dict:
    """Track the v-estimate ratio across meshes; ``build(n)`` returns ``(model, xi)``.

    Passes if the largest ratio is below ``growth`` times the smallest
    (bounded under refinement).
    """
    rows = []
    for n in sizes:
        model, xi = build(n)
        rep = estimate_check(model, model.state(xi), p)
        rows.append({"n": n, "max_v_ratio": rep.max_v, "u_ratios": rep.u_ratios})
    ratios = [r["max_v_ratio"] for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else np.inf
    return {"rows": rows, "spread": spread, "passed": bool(spread < growth)}
