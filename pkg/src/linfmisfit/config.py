"""JSON experiment configuration and construction of the problem objects.

Unknown keys are rejected; errors carry the dotted path of the offending
field. ``M: null`` means no upper bound.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, asdict
from typing import Any

import numpy as np

from . import expr
from .coefficients import (CoefficientSet, CouplingField, FOTModel, MatrixField, RotationField,
                           build_fot, constant_scalar, piecewise)
from .cost import CostConfig, RegimeError
from .forward import ForwardModel, Prediction, ProblemData, xi_from_function
from .mesh import SIDES, build_rectangle_mesh, tag_patches
from .optimize import OptimConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class MeshSpec:
    nx: int = 16
    ny: int = 16
    width: float = 1.0
    height: float = 1.0

    def check(self, path):
        for k in ("nx", "ny"):
            v = getattr(self, k)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{path}.{k}", f"must be a positive integer, got {v!r}")
        for k in ("width", "height"):
            if not _num(getattr(self, k)) or not getattr(self, k) > 0:
                raise ConfigError(f"{path}.{k}", "must be a positive number")


@dataclass
class CoefficientSpec:
    """``kind`` is "fot" (uses ``fot``) or "constant" / "piecewise" (uses A..M).

    A and B are a scalar, a 2x2 list, or ``{"default": v, "regions": [[box, v], ...]}``;
    K and L are ``[k1, k2]`` pairs of such scalars; M is a scalar or 2x2 list.
    """

    kind: str = "fot"
    fot: dict = field(default_factory=dict)
    A: Any = 1.0
    B: Any = 1.0
    K: Any = field(default_factory=lambda: [1.0, 0.0])
    L: Any = field(default_factory=lambda: [1.0, 0.0])
    M: Any = 1.0
    gamma: float = 0.5
    a0: float | None = None

    def check(self, path):
        if self.kind not in ("fot", "constant", "piecewise"):
            raise ConfigError(f"{path}.kind", f"must be fot, constant or piecewise, got {self.kind!r}")
        if self.kind == "fot":
            allowed = {f.name for f in fields(FOTModel)}
            for k in self.fot:
                if k not in allowed:
                    raise ConfigError(f"{path}.fot.{k}", "unknown FOT parameter")


@dataclass
class ExperimentSpec:
    """One experiment: volume source, boundary source and misfit patch.

    ``boundary_source`` is an expression pair or a mapping side -> pair.
    """

    source: list = field(default_factory=lambda: ["0", "0"])
    boundary_source: Any = field(default_factory=lambda: ["0", "0"])
    patch: dict = field(default_factory=lambda: {"side": "top", "interval": [0.0, 1.0]})

    def check(self, path):
        _check_pair(self.source, f"{path}.source")
        if isinstance(self.boundary_source, dict):
            for side, pair in self.boundary_source.items():
                if side not in SIDES:
                    raise ConfigError(f"{path}.boundary_source.{side}", "unknown side")
                _check_pair(pair, f"{path}.boundary_source.{side}")
        else:
            _check_pair(self.boundary_source, f"{path}.boundary_source")
        for k in self.patch:
            if k not in ("side", "interval"):
                raise ConfigError(f"{path}.patch.{k}", "unknown key")
        if self.patch.get("side") not in SIDES:
            raise ConfigError(f"{path}.patch.side", f"must be one of {list(SIDES)}")
        iv = self.patch.get("interval")
        if not (isinstance(iv, list) and len(iv) == 2 and all(_num(v) for v in iv)):
            raise ConfigError(f"{path}.patch.interval", "must be a pair of numbers")


@dataclass
class PredictionSpec:
    """``analytic``: one expression pair per experiment in ``values``.

    ``inverse_crime``: traces of the forward solve at ``xi_true`` plus seeded
    noise of amplitude ``noise`` ("samples": independent uniform per sample;
    "smooth": random sine series along the patch). With ``normalise`` the sources are
    rescaled so that the noise-free predictions have sup norm 1.
    """

    kind: str = "inverse_crime"
    values: list = field(default_factory=list)
    xi_true: str = "1"
    noise: float = 0.0
    noise_model: str = "samples"
    normalise: bool = False

    def check(self, path, n):
        if self.kind not in ("analytic", "inverse_crime"):
            raise ConfigError(f"{path}.kind", f"must be analytic or inverse_crime, got {self.kind!r}")
        if self.kind == "analytic":
            if len(self.values) != n:
                raise ConfigError(f"{path}.values", f"need one pair per experiment ({n})")
            for i, v in enumerate(self.values):
                _check_pair(v, f"{path}.values[{i}]")
        else:
            _check_expr(self.xi_true, f"{path}.xi_true")
        if self.noise_model not in ("samples", "smooth"):
            raise ConfigError(f"{path}.noise_model", "must be samples or smooth")
        if not _num(self.noise) or self.noise < 0:
            raise ConfigError(f"{path}.noise", "must be a nonnegative number")


@dataclass
class CostSpec:
    alpha: float = 0.0
    M: float | None = 2.0
    p: float = 4.0

    def config(self) -> CostConfig:
        return CostConfig(float(self.alpha), np.inf if self.M is None else float(self.M), float(self.p))


@dataclass
class OptimizerSpec:
    step0: float = 1.0
    backtrack: float = 0.5
    c1: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-8
    max_backtracks: int = 30
    bb: bool = True

    def config(self) -> OptimConfig:
        return OptimConfig(step0=self.step0, backtrack=self.backtrack, c1=self.c1, max_iter=self.max_iter,
                           tol=self.tol, max_backtracks=self.max_backtracks, bb=self.bb)


@dataclass
class GradcheckSpec:
    """FD check of the reduced gradient; ``xi0`` null draws uniform [0.5, 1.5] per element."""

    p_list: list = field(default_factory=lambda: [2.0, 6.0, 10.0])
    directions: int = 5
    h: float = 1e-5
    tol: float = 1e-5
    xi0: str | None = None
    regimes: list = field(default_factory=list)  # extra [alpha, M] pairs; M null = inf


@dataclass
class ForwardSpec:
    """``xi``: an expression, or "truth" for the inverse-crime ground truth.

    With ``exact_u`` and ``sizes`` a refinement study of the u-error is run.
    """

    xi: str = "0"
    exact_u: list | None = None
    sizes: list = field(default_factory=list)
    min_rate: float = 1.8


@dataclass
class ExperimentConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    experiments: list = field(default_factory=lambda: [ExperimentSpec()])
    predictions: PredictionSpec = field(default_factory=PredictionSpec)
    cost: CostSpec = field(default_factory=CostSpec)
    schedule: list = field(default_factory=lambda: [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0])
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    gradcheck: GradcheckSpec = field(default_factory=GradcheckSpec)
    forward: ForwardSpec = field(default_factory=ForwardSpec)
    xi0: str = "0"
    m: float = 4.0
    tol: float = 1e-10
    output_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def N(self) -> int:
        return len(self.experiments)


_NESTED = {"mesh": MeshSpec, "coefficients": CoefficientSpec, "predictions": PredictionSpec,
           "cost": CostSpec, "optimizer": OptimizerSpec, "gradcheck": GradcheckSpec, "forward": ForwardSpec}


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _check_expr(src, path):
    try:
        expr.parse(src)
    except expr.ExprError as exc:
        raise ConfigError(path, str(exc)) from None


def _check_pair(pair, path):
    if not isinstance(pair, list) or len(pair) != 2:
        raise ConfigError(path, "must be a pair of expressions")
    for k, e in enumerate(pair):
        _check_expr(e, f"{path}[{k}]")


def _make(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError(path, f"must be an object, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    for k in d:
        if k not in names:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown key")
    kw = {}
    for k, v in d.items():
        sub = f"{path}.{k}" if path else k
        if cls is ExperimentConfig and k in _NESTED:
            v = _make(_NESTED[k], v, sub)
        elif cls is ExperimentConfig and k == "experiments":
            if not isinstance(v, list) or not v:
                raise ConfigError(sub, "must be a non-empty list")
            v = [_make(ExperimentSpec, e, f"{sub}[{i}]") for i, e in enumerate(v)]
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def from_dict(d: dict) -> ExperimentConfig:
    cfg = _make(ExperimentConfig, d, "")
    check(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    return from_dict(d)


def check(cfg: ExperimentConfig) -> None:
    cfg.mesh.check("mesh")
    cfg.coefficients.check("coefficients")
    for i, e in enumerate(cfg.experiments):
        e.check(f"experiments[{i}]")
    cfg.predictions.check("predictions", cfg.N)
    c = cfg.cost
    for k in ("alpha", "p"):
        if not _num(getattr(c, k)):
            raise ConfigError(f"cost.{k}", "must be a number")
    if c.M is not None and not _num(c.M):
        raise ConfigError("cost.M", "must be a number or null")
    try:
        c.config()
    except RegimeError as exc:
        raise ConfigError("cost", str(exc)) from None
    s = cfg.schedule
    if not isinstance(s, list) or not s or not all(_num(p) for p in s):
        raise ConfigError("schedule", "must be a non-empty list of numbers")
    if any(b <= a for a, b in zip(s, s[1:])) or s[0] < 2:
        raise ConfigError("schedule", "must be strictly increasing with entries >= 2")
    try:
        cfg.optimizer.config()
    except ValueError as exc:
        raise ConfigError("optimizer", str(exc)) from None
    g = cfg.gradcheck
    if not g.p_list or any(not _num(p) or p < 2 for p in g.p_list):
        raise ConfigError("gradcheck.p_list", "need exponents >= 2")
    if g.xi0 is not None:
        _check_expr(g.xi0, "gradcheck.xi0")
    for i, r in enumerate(g.regimes):
        if not (isinstance(r, list) and len(r) == 2):
            raise ConfigError(f"gradcheck.regimes[{i}]", "must be an [alpha, M] pair")
        try:
            CostConfig(float(r[0]), np.inf if r[1] is None else float(r[1]))
        except (RegimeError, TypeError) as exc:
            raise ConfigError(f"gradcheck.regimes[{i}]", str(exc)) from None
    f = cfg.forward
    if f.xi != "truth":
        _check_expr(f.xi, "forward.xi")
    if f.exact_u is not None:
        _check_pair(f.exact_u, "forward.exact_u")
    if any(not isinstance(n, int) or n < 1 for n in f.sizes):
        raise ConfigError("forward.sizes", "must be positive integers")
    _check_expr(cfg.xi0, "xi0")
    if not _num(cfg.m) or not cfg.m > 2:
        raise ConfigError("m", "must exceed 2")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")


# ---------------------------------------------------------------------------
# construction

def _scalar_field(spec):
    if isinstance(spec, dict):
        return piecewise(spec.get("default", 0.0), [(tuple(b), v) for b, v in spec.get("regions", [])])
    return constant_scalar(spec)


def _matrix_field(spec):
    if isinstance(spec, dict):
        return piecewise(spec.get("default", 1.0), [(tuple(b), v) for b, v in spec.get("regions", [])],
                         kind="matrix")
    return MatrixField.constant(spec).fn


def build_coefficients(spec: CoefficientSpec) -> CoefficientSet:
    try:
        if spec.kind == "fot":
            co = build_fot(FOTModel(**spec.fot), gamma=spec.gamma, a0=spec.a0)
            return co
        K = RotationField(_scalar_field(spec.K[0]), _scalar_field(spec.K[1]))
        L = RotationField(_scalar_field(spec.L[0]), _scalar_field(spec.L[1]))
        a0 = 0.5 if spec.a0 is None else spec.a0
        return CoefficientSet(MatrixField(_matrix_field(spec.A)), MatrixField(_matrix_field(spec.B)), K, L,
                              CouplingField(_matrix_field(spec.M)), gamma=spec.gamma, a0=a0)
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError("coefficients", str(exc)) from None


def _boundary(spec):
    if isinstance(spec, dict):
        return {side: expr.parse_vector(pair) for side, pair in spec.items()}
    return expr.parse_vector(spec)


def _scaled(fn, s):
    if isinstance(fn, dict):
        return {k: _scaled(g, s) for k, g in fn.items()}
    return lambda pts: s * fn(pts)


def build_mesh(cfg: ExperimentConfig, n: int | None = None):
    nx = cfg.mesh.nx if n is None else n
    ny = cfg.mesh.ny if n is None else n
    mesh = build_rectangle_mesh(nx, ny, cfg.mesh.width, cfg.mesh.height)
    specs = [(f"B{i + 1}", e.patch["side"], tuple(e.patch["interval"])) for i, e in enumerate(cfg.experiments)]
    try:
        return tag_patches(mesh, specs)
    except ValueError as exc:
        raise ConfigError("experiments.patch", str(exc)) from None


def xi_field(mesh, src) -> np.ndarray:
    return xi_from_function(mesh, expr.parse(src))


def build_model(cfg: ExperimentConfig, n: int | None = None, rng: np.random.Generator | None = None):
    """(model, xi_true or None) with predictions attached; ``n`` overrides the mesh size."""
    mesh = build_mesh(cfg, n)
    coeffs = build_coefficients(cfg.coefficients)
    sources = [expr.parse_vector(e.source) for e in cfg.experiments]
    bsources = [_boundary(e.boundary_source) for e in cfg.experiments]
    tags = [f"B{i + 1}" for i in range(cfg.N)]
    data = ProblemData(sources, bsources, tags, None, m=float(cfg.m))
    model = ForwardModel(mesh, coeffs, data, tol=cfg.tol)
    pr = cfg.predictions
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if pr.kind == "analytic":
        data.predictions = [Prediction.from_function(tr, mesh, expr.parse_vector(v))
                            for tr, v in zip(model.traces, pr.values)]
        return model, None
    xi_true = xi_field(mesh, pr.xi_true)
    if pr.normalise:
        clean = model.inverse_crime_predictions(xi_true)
        top = max(max(np.max(np.linalg.norm(p.qp, axis=1)), np.max(np.linalg.norm(p.vertex, axis=1)))
                  for p in clean)
        if top > 0:
            data = ProblemData([_scaled(f, 1.0 / top) for f in sources], [_scaled(g, 1.0 / top) for g in bsources],
                               tags, None, m=float(cfg.m))
            model = ForwardModel(mesh, coeffs, data, tol=cfg.tol)
    data.predictions = model.inverse_crime_predictions(xi_true, rng, pr.noise, pr.noise_model)
    return model, xi_true
