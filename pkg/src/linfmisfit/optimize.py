"""Projected-gradient minimisation of the reduced cost and p-continuation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adjoint import (AdjointState, GradientField, compute_Cp, psi_identity, phi_identity,
                      reduced_gradient, relative_gap, solve_phi, solve_psi)
from .assembly import element_coupling_integrals
from .cost import CostBreakdown, CostConfig, dot_norm, eval_Iinf, eval_Ip, measure_moment, mu_density, nu_density
from .forward import ForwardModel, State, as_values
from .linsolve import SolverFailure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    step0: float = 1.0
    backtrack: float = 0.5
    c1: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-8
    max_backtracks: int = 30
    bb: bool = True  # Barzilai-Borwein trial steps after the first iteration
    step_max: float = 1e12

    def __post_init__(self):
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0 < self.c1 < 1:
            raise ValueError("Armijo constant must lie in (0, 1)")
        if not self.step0 > 0 or self.max_iter < 0 or not self.tol > 0:
            raise ValueError("step0 and tol must be positive, max_iter nonnegative")


class InfeasibleStart(ValueError):
    pass


def project(xi, M: float = np.inf) -> np.ndarray:
    return np.clip(np.asarray(xi, dtype=float), 0.0, M)


class ReducedProblem:
    """``j(xi) = I_p(u, v(xi), xi)`` with its adjoint gradient, for one exponent."""

    def __init__(self, model: ForwardModel, config: CostConfig):
        self.model = model
        self.config = config
        self.n_evals = 0

    @property
    def mesh(self):
        return self.model.mesh

    def with_p(self, p: float) -> "ReducedProblem":
        return ReducedProblem(self.model, self.config.with_p(p))

    def evaluate(self, xi) -> tuple[float, State, CostBreakdown]:
        self.n_evals += 1
        state = self.model.state(xi)
        bd = eval_Ip(self.model, state, xi, self.config)
        return bd.total, state, bd

    def value(self, xi) -> float:
        return self.evaluate(xi)[0]

    def gradient(self, state: State) -> tuple[GradientField, np.ndarray]:
        psi, _ = solve_psi(self.model, state.v_fields, self.config.p)
        return reduced_gradient(self.model, state.xi, state.u_fields, psi, self.config), psi

    def adjoint(self, state: State, psi=None) -> AdjointState:
        if psi is None:
            psi, _ = solve_psi(self.model, state.v_fields, self.config.p)
        phi, _ = solve_phi(self.model, psi, state.xi)
        adj = AdjointState(psi, phi)
        adj.Cp = compute_Cp(self.model, adj)
        return adj


@dataclass
class KKTReport:
    stationarity: float
    max_abs_G_inactive: float
    min_G_lower_active: float
    max_G_upper_active: float
    inactive_fraction: float
    lower_fraction: float
    upper_fraction: float
    G_sup: float
    active_tol: float
    mode: str
    violations: list = field(default_factory=list)  # (element id, kind, G value)
    passed: bool = False

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["violations"] = [list(v) for v in self.violations]
        return d


def kkt_check(xi, G, config: CostConfig, active_tol: float | None = None,
              inactive_rtol: float = 1e-6, sign_tol: float = 1e-8) -> KKTReport:
    """Complementarity report for the first-order conditions.

    On the inactive set ``|G| <= inactive_rtol (1 + ||G||_inf)``; on
    ``{xi <= active_tol}`` ``G >= -sign_tol``; on ``{xi >= M - active_tol}``
    ``G <= sign_tol``.
    """
    xi = as_values(xi)
    g = G.values if isinstance(G, GradientField) else np.asarray(G, dtype=float)
    M = config.M
    if active_tol is None:
        active_tol = 1e-8 * max(1.0, float(np.max(xi)) if xi.size else 1.0)
    lower = xi <= active_tol
    upper = (xi >= M - active_tol) & ~lower if np.isfinite(M) else np.zeros_like(lower)
    inactive = ~(lower | upper)
    gsup = float(np.max(np.abs(g))) if g.size else 0.0
    stat = float(np.max(np.abs(xi - project(xi - g, M)))) if g.size else 0.0

    thr = inactive_rtol * (1.0 + gsup)
    violations = [(int(e), "inactive", float(g[e])) for e in np.flatnonzero(inactive & (np.abs(g) > thr))]
    violations += [(int(e), "lower", float(g[e])) for e in np.flatnonzero(lower & (g < -sign_tol))]
    violations += [(int(e), "upper", float(g[e])) for e in np.flatnonzero(upper & (g > sign_tol))]

    n = max(len(xi), 1)
    return KKTReport(
        stationarity=stat,
        max_abs_G_inactive=float(np.max(np.abs(g[inactive]))) if inactive.any() else 0.0,
        min_G_lower_active=float(np.min(g[lower])) if lower.any() else 0.0,
        max_G_upper_active=float(np.max(g[upper])) if upper.any() else 0.0,
        inactive_fraction=float(inactive.sum() / n),
        lower_fraction=float(lower.sum() / n),
        upper_fraction=float(upper.sum() / n),
        G_sup=gsup, active_tol=float(active_tol), mode=config.mode,
        violations=violations, passed=not violations,
    )


@dataclass
class OptimResult:
    xi: np.ndarray
    state: State
    adjoint: AdjointState
    gradient: GradientField
    kkt: KKTReport
    breakdown: CostBreakdown
    status: str
    iterations: int
    log: list  # one dict per accepted iterate (iteration 0 = start)


def _log_row(it, p, step, bd: CostBreakdown, stat) -> dict:
    return {"iter": it, "p": p, "step": step, "total": bd.total, "misfits": list(bd.misfits),
            "regulariser": bd.regulariser, "stationarity": stat}


def minimise_p(xi0, problem: ReducedProblem, config: OptimConfig = OptimConfig()) -> OptimResult:
    """Projected gradient ``xi <- P(xi - t G)`` with Armijo backtracking on j.

    Stops when ``||xi - P(xi - G)||_inf <= tol`` (status "converged"), after
    ``max_iter`` iterations ("max_iter"), or when no step down to
    ``t * backtrack^max_backtracks`` decreases j ("stalled").
    """
    cc = problem.config
    xi = as_values(xi0).copy()
    if np.any(xi < 0) or np.any(xi > cc.M):
        raise InfeasibleStart("starting point violates 0 <= xi <= M")
    areas = problem.mesh.areas
    j, state, bd = problem.evaluate(xi)
    G, psi = problem.gradient(state)
    stat = float(np.max(np.abs(xi - project(xi - G.values, cc.M))))
    rows = [_log_row(0, cc.p, 0.0, bd, stat)]
    t_trial = config.step0
    status = "max_iter"
    it = 0
    while True:
        if stat <= config.tol:
            status = "converged"
            break
        if it >= config.max_iter:
            break
        accepted = False
        # a failed search from a Barzilai-Borwein trial is retried once from step0
        for t in dict.fromkeys([t_trial, config.step0]):
            for _ in range(config.max_backtracks + 1):
                xn = project(xi - t * G.values, cc.M)
                slope = float(np.sum(areas * G.values * (xn - xi)))
                if slope < 0:
                    jn, sn, bn = problem.evaluate(xn)
                    if jn <= j + config.c1 * slope and jn < j:
                        accepted = True
                        break
                t *= config.backtrack
            if accepted:
                break
        if not accepted:
            status = "stalled"
            break
        it += 1
        Gn, psin = problem.gradient(sn)
        if config.bb:
            s = xn - xi
            y = Gn.values - G.values
            sy = float(np.sum(areas * s * y))
            ss = float(np.sum(areas * s * s))
            t_trial = min(ss / sy, config.step_max) if sy > 0 else min(2 * t, config.step_max)
        else:
            t_trial = config.step0
        xi, j, state, bd, G, psi = xn, jn, sn, bn, Gn, psin
        stat = float(np.max(np.abs(xi - project(xi - G.values, cc.M))))
        rows.append(_log_row(it, cc.p, t, bd, stat))
    adj = problem.adjoint(state, psi)
    kkt = kkt_check(xi, G, cc)
    log.info("p=%g: %s after %d iterations, cost %.8g, stationarity %.3e", cc.p, status, it, j, stat)
    return OptimResult(xi, state, adj, G, kkt, bd, status, it, rows)


# ---------------------------------------------------------------------------
# continuation

def default_test_battery(mesh) -> list:
    """Fixed scalar test fields for moment tracking: 1, x, y and a bump."""
    w, h = mesh.width, mesh.height

    def one(pts):
        return np.ones(len(pts))

    def xs(pts):
        return pts[:, 0] / w

    def ys(pts):
        return pts[:, 1] / h

    def bump(pts):
        return np.sin(np.pi * pts[:, 0] / w) * np.sin(np.pi * pts[:, 1] / h)

    return [("one", one), ("x", xs), ("y", ys), ("bump", bump)]


@dataclass
class StageRecord:
    p: float
    status: str
    iterations: int
    Ip: float
    Iinf: float
    misfits: list
    regulariser: float
    tv_mu: float
    tv_nu: float
    Cp: float
    mu_moments: list
    nu_moments: list
    cross_exponent: list  # (q, I_q(x_p), I_p(x_p), holds)
    cross_exponent_corrected: list  # (q, I_q(x_p), I_p(x_p) + slack(q, p), holds)
    xi_moment: float  # int xi_p d(mu_p)
    xi_moment_lower: float  # ||xi_p||_p - 1/(p^2 ||xi_p||_p)
    xi_sup: float
    stationarity: float
    kkt_passed: bool
    xi: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ContinuationReport:
    schedule: list
    stages: list
    N: int
    alpha: float
    M: float
    warm_start: bool
    errors: list = field(default_factory=list)
    final_xi: list | None = None
    final_Iinf: float | None = None
    tv_bounds_hold: bool = True
    final: OptimResult | None = None  # not serialised
    final_problem: ReducedProblem | None = None  # not serialised

    def as_dict(self) -> dict:
        return {
            "schedule": self.schedule, "N": self.N, "alpha": self.alpha,
            "M": None if np.isinf(self.M) else self.M, "warm_start": self.warm_start,
            "errors": self.errors, "tv_bounds_hold": self.tv_bounds_hold,
            "final_xi": self.final_xi, "final_Iinf": self.final_Iinf,
            "stages": [s.as_dict() for s in self.stages],
        }

    def gap(self, k: int = -1) -> float:
        s = self.stages[k]
        return abs(s.Ip - s.Iinf) / s.Iinf


class BoundViolation(AssertionError):
    pass


def cross_exponent_slack(q: float, p: float, N: int, alpha: float) -> float:
    """Additive slack in ``I_q <= I_p + slack`` coming from the q-dependent regularisation."""
    per = np.sqrt(max(q ** -2.0 - p ** -2.0, 0.0))
    return (N + (1 if alpha > 0 else 0) * alpha) * per


def run_continuation(schedule: Sequence[float], problem: ReducedProblem, xi0=None,
                     config: OptimConfig = OptimConfig(), warm_start: bool = True,
                     battery: list | None = None, tv_slack: float = 1e-10) -> ContinuationReport:
    """Minimise along an increasing exponent schedule, recording limit diagnostics.

    TV bounds of both measures are hard assertions at every stage
    (``BoundViolation``). Per-stage solver failures are recorded and the
    run continues from the last good iterate.
    """
    schedule = [float(p) for p in schedule]
    if len(schedule) == 0 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be non-empty and strictly increasing")
    if schedule[0] < 2:
        raise ValueError("schedule exponents must be at least 2")
    model = problem.model
    mesh = model.mesh
    battery = default_test_battery(mesh) if battery is None else battery
    start = np.zeros(mesh.n_triangles) if xi0 is None else as_values(xi0).copy()
    cc = problem.config
    report = ContinuationReport(schedule, [], model.N, cc.alpha, cc.M, warm_start)
    xi = start
    done = []  # (p, xi_p, state_p)
    last = None
    last_problem = None
    for p in schedule:
        prob = problem.with_p(p)
        x0 = xi if warm_start else start
        try:
            res = minimise_p(x0, prob, config)
        except SolverFailure as exc:
            report.errors.append({"p": p, "stage": exc.stage, "message": str(exc)})
            continue
        xi = res.xi
        st = res.state
        mu = mu_density(mesh, xi, p)
        nu = nu_density(model, st.v_fields, p)
        if mu.total_variation > 1 + tv_slack or nu.total_variation > model.N + tv_slack:
            report.tv_bounds_hold = False
            raise BoundViolation(f"p={p}: TV(mu)={mu.total_variation!r}, TV(nu)={nu.total_variation!r}")
        Iinf = eval_Iinf(model, st, xi, cc)
        cross, corrected = [], []
        for q, _, _ in done:
            Iq = eval_Ip(model, st, xi, cc.with_p(q)).total
            cross.append([q, Iq, res.breakdown.total, bool(Iq <= res.breakdown.total + 1e-12)])
            bound = res.breakdown.total + cross_exponent_slack(q, p, model.N, cc.alpha)
            corrected.append([q, Iq, bound, bool(Iq <= bound + 1e-12)])
        xnorm = dot_norm(xi, mesh.areas, p)
        rec = StageRecord(
            p=p, status=res.status, iterations=res.iterations, Ip=res.breakdown.total, Iinf=Iinf,
            misfits=list(res.breakdown.misfits), regulariser=res.breakdown.regulariser,
            tv_mu=mu.total_variation, tv_nu=nu.total_variation, Cp=float(res.adjoint.Cp),
            mu_moments=[float(measure_moment(mu, f)) for _, f in battery],
            nu_moments=[np.asarray(measure_moment(nu, f)).tolist() for _, f in battery],
            cross_exponent=cross, cross_exponent_corrected=corrected,
            xi_moment=float(np.sum(mesh.areas * xi * mu.element_values)),
            xi_moment_lower=float(xnorm - 1.0 / (p * p * xnorm)),
            xi_sup=float(np.max(xi)), stationarity=res.kkt.stationarity,
            kkt_passed=res.kkt.passed, xi=xi.tolist(),
        )
        report.stages.append(rec)
        done.append((p, xi, st))
        last, last_problem = res, prob
    if last is not None:
        report.final_xi = last.xi.tolist()
        report.final_Iinf = report.stages[-1].Iinf
        report.final = last
        report.final_problem = last_problem
    return report


def moment_cauchy_gap(report: ContinuationReport) -> float:
    """Largest relative change of the mu-moments between the last two stages."""
    a = np.array(report.stages[-2].mu_moments)
    b = np.array(report.stages[-1].mu_moments)
    scale = max(float(np.max(np.abs(b))), float(np.max(np.abs(a))), 1e-300)
    return float(np.max(np.abs(b - a)) / scale)


@dataclass
class LimitRelations:
    skipped: bool
    reason: str = ""
    Cp: float = 0.0
    variational: list = field(default_factory=list)  # (name, lhs, rhs, residual, holds)
    psi_relation: list = field(default_factory=list)  # (lhs, rhs, relative residual)
    phi_relation: list = field(default_factory=list)
    passed: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def eta_battery(mesh, xi, M: float) -> list:
    """Nonnegative test parameters in [0, M], element-wise."""
    top = M if np.isfinite(M) else max(2.0 * float(np.max(xi)), 1.0)
    c = mesh.centroids
    xs, ys = c[:, 0] / mesh.width, c[:, 1] / mesh.height
    return [("zero", np.zeros(len(c))), ("half", np.full(len(c), 0.5 * top)), ("ramp_x", top * xs),
            ("ramp_y", top * ys), ("bump", top * np.sin(np.pi * xs) * np.sin(np.pi * ys))]


def nodal_battery(mesh, N: int) -> list:
    """Smooth nodal test N-tuples for the multiplier identities."""
    x = mesh.vertices[:, 0] / mesh.width
    y = mesh.vertices[:, 1] / mesh.height
    fields = []
    for k, (a, b) in enumerate([(x, y), (1 + x * y, x - y), (np.sin(np.pi * x), np.cos(np.pi * y))]):
        f = np.stack([np.column_stack([a * (1 + i), b * (1 - 0.5 * i)]) for i in range(N)])
        fields.append((f"poly{k}", f))
    return fields


def verify_limit_relations(report: ContinuationReport, slack: float = 1e-6, rtol: float = 1e-6,
                           C_zero: float = 1e-14) -> LimitRelations:
    """Rescaled multiplier relations at the last stage, with C_p standing in for its limit.

    The variational inequality is checked for each eta of ``eta_battery`` up
    to ``slack``; the two identities for each field of ``nodal_battery`` to
    relative ``rtol``.
    """
    res, prob = report.final, report.final_problem
    if res is None:
        return LimitRelations(True, "no completed stage")
    C = float(res.adjoint.Cp)
    if C <= C_zero:
        return LimitRelations(True, "C_p vanishes: zero-multiplier branch (xi_inf = 0 when alpha > 0)", C)
    model, cc = prob.model, prob.config
    mesh = model.mesh
    xi, st = res.xi, res.state
    mu = mu_density(mesh, xi, cc.p)
    psi = res.adjoint.psi_fields / C
    phi = res.adjoint.phi_fields / C
    coupling = np.zeros(mesh.n_triangles)
    for u, ps in zip(st.u_fields, psi):
        coupling += element_coupling_integrals(model.space, model.coeffs.M, u, ps)
    out = LimitRelations(False, Cp=C)
    for name, eta in eta_battery(mesh, xi, cc.M):
        lhs = cc.alpha / C * float(np.sum(mesh.areas * eta * mu.element_values)) + float(np.sum((eta - xi) * coupling))
        rhs = cc.alpha / C * float(np.max(xi))
        out.variational.append([name, lhs, rhs, lhs - rhs, bool(lhs - rhs >= -slack)])
    for name, w in nodal_battery(mesh, model.N):
        lhs, rhs = psi_identity(model, st.v_fields, psi, w, cc.p)
        out.psi_relation.append([name, lhs / C, rhs, relative_gap(lhs / C, rhs)])
        lhs, rhs = phi_identity(model, xi, psi, phi, w)
        out.phi_relation.append([name, lhs, rhs, relative_gap(lhs, rhs)])
    out.passed = (all(v[-1] for v in out.variational)
                  and all(r[-1] <= rtol for r in out.psi_relation + out.phi_relation))
    return out


def gradient_check(problem: ReducedProblem, xi, directions: Sequence[np.ndarray], h: float = 1e-5,
                   tol: float = 1e-5) -> list:
    """Compare ``int eta G`` with the central difference of j for each direction.

    A row is "exact" when G vanishes identically and the difference quotient
    is at rounding level, "pass" when the relative error is at most ``tol``.
    """
    xi = as_values(xi)
    mesh = problem.mesh
    j, state, _ = problem.evaluate(xi)
    G, _ = problem.gradient(state)
    zero = not np.any(G.values)
    rows = []
    for k, eta in enumerate(directions):
        fd = (problem.value(xi + h * eta) - problem.value(xi - h * eta)) / (2 * h)
        adj = G.pairing(mesh, eta)
        err = relative_gap(fd, adj)
        if zero and abs(fd) <= 100 * np.finfo(float).eps * max(1.0, abs(j)) / h:
            status = "exact"
        else:
            status = "pass" if err <= tol else "fail"
        rows.append({"p": problem.config.p, "mode": problem.config.mode, "direction": k, "fd": fd,
                     "adjoint": adj, "rel_err": err, "status": status})
    return rows
