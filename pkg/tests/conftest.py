import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linfmisfit import config as C
from linfmisfit.coefficients import FOTModel, build_fot
from linfmisfit.forward import ForwardModel, ProblemData, xi_from_function
from linfmisfit.mesh import build_rectangle_mesh, tag_patches

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def zero_vec(pts):
    return np.zeros((len(pts), 2))


def bump_bottom(pts):
    return np.column_stack([4 * pts[:, 0] * (1 - pts[:, 0]) * (pts[:, 1] < 1e-12), np.zeros(len(pts))])


def bump_left(pts):
    return np.column_stack([4 * pts[:, 1] * (1 - pts[:, 1]) * (pts[:, 0] < 1e-12), np.zeros(len(pts))])


def make_model(n=8, N=2, fot=None, xi_true=None, noise=0.0, seed=0, noise_model="samples"):
    """Two-experiment FOT problem with patches on top and right."""
    mesh = tag_patches(build_rectangle_mesh(n, n), [("B1", "top", (0, 1)), ("B2", "right", (0, 1))])
    coeffs = build_fot(fot or FOTModel(mu_ai=0.5, mu_s_prime=1.0, omega=0.3, tau=0.5))
    g = [bump_bottom, bump_left][:N]
    data = ProblemData([zero_vec] * N, g, ["B1", "B2"][:N])
    model = ForwardModel(mesh, coeffs, data)
    if xi_true is None:
        xi_true = xi_from_function(mesh, lambda c: 1.0 + 2.0 * ((abs(c[:, 0] - 0.5) < 0.2) & (abs(c[:, 1] - 0.5) < 0.2)))
    data.predictions = model.inverse_crime_predictions(xi_true, np.random.default_rng(seed), noise, noise_model)
    return model, xi_true


@pytest.fixture(scope="session")
def model8():
    return make_model(8, noise=0.02, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def load_config(name, **overrides):
    d = json.loads((CONFIGS / f"{name}.json").read_text())
    for k, v in overrides.items():
        d[k] = v
    return C.from_dict(d)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
