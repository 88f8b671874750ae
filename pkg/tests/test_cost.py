import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_model
from linfmisfit.cost import (CostConfig, RegimeError, dot_norm, eval_Iinf, eval_Ip, lp_dot_norm, measure_moment,
                             misfit_samples, mu_density, nu_density, reg_abs)
from linfmisfit.forward import Prediction, State
from linfmisfit.mesh import build_rectangle_mesh
from linfmisfit.optimize import cross_exponent_slack

MESH = build_rectangle_mesh(8, 8)


@pytest.fixture(scope="module")
def model():
    return make_model(8)


def with_predictions(model, fn):
    model.data.predictions = [Prediction.from_function(tr, model.mesh, fn) for tr in model.traces]
    return model


def e1(pts):
    return np.column_stack([np.ones(len(pts)), np.zeros(len(pts))])


def zero_state(model):
    z = np.zeros((model.N, model.mesh.n_vertices, 2))
    return State(model.solve_u(), z, np.zeros(model.mesh.n_triangles))


def test_reg_abs_examples():
    assert reg_abs(0.0, 2) == 0.5
    assert reg_abs(3.0, 1e6) == pytest.approx(3.0, abs=1e-9)
    assert reg_abs(0.3, 10) == pytest.approx(np.sqrt(0.10), abs=1e-15)
    assert reg_abs(0.3, 10) == pytest.approx(0.3162278, abs=1e-7)
    assert reg_abs(np.array([[3.0, 4.0]]), 1e9, axis=1)[0] == pytest.approx(5.0)


def test_lp_dot_norm_examples():
    ne = MESH.n_triangles
    for p in (2, 7.5, 128):
        assert lp_dot_norm(np.zeros(ne), MESH, p) == pytest.approx(1 / p, rel=1e-14)
        assert lp_dot_norm(np.full(ne, 0.7), MESH, p) == pytest.approx(np.sqrt(0.49 + p ** -2.0), rel=1e-14)
    half = (MESH.centroids[:, 0] < 0.5).astype(float)
    assert lp_dot_norm(half, MESH, 2) == pytest.approx(np.sqrt(0.75), rel=1e-14)
    assert lp_dot_norm(half, MESH, 2) == pytest.approx(0.8660254, abs=1e-7)


def test_no_overflow_at_large_p():
    vals = np.linspace(0, 50, MESH.n_triangles)
    for p in (64, 128, 1024):
        r = lp_dot_norm(vals, MESH, p)
        assert np.isfinite(r) and r <= np.sqrt(50 ** 2 + p ** -2.0) * (1 + 1e-14)
    dens = mu_density(MESH, vals, 128)
    assert np.all(np.isfinite(dens.values)) and dens.total_variation <= 1 + 1e-10


@given(theta_k=st.integers(16, 128), top=st.floats(0.1, 10), low=st.floats(0.0, 1.0),
       p=st.sampled_from([2.0, 4.0, 16.0, 128.0]))
def test_plateau_bounds(theta_k, top, low, p):
    ne = MESH.n_triangles  # 128 equal-area elements
    f = np.full(ne, low * top)
    f[:theta_k] = top
    theta = theta_k / ne
    r = lp_dot_norm(f, MESH, p)
    assert theta ** (1 / p) * top <= r <= np.sqrt(top ** 2 + p ** -2.0) * (1 + 1e-15)


def test_cost_config_regimes():
    assert CostConfig(alpha=1.0).mode == "tykhonov"
    assert CostConfig(alpha=0.0, M=3.0).mode == "box"
    for kw in ({"alpha": 1.0, "M": 3.0}, {"alpha": 0.0}, {"alpha": -1.0}, {"alpha": 0, "M": 1, "p": 1.5}):
        with pytest.raises(RegimeError):
            CostConfig(**kw)
    assert CostConfig(0.0, 2.0, 4.0).with_p(16).p == 16


@pytest.mark.parametrize("p", [2.0, 8.0, 128.0])
def test_eval_constant_misfit(model, p):
    m, _ = model
    with_predictions(m, e1)
    st_ = zero_state(m)
    cfg = CostConfig(0.0, 5.0, p)
    bd = eval_Ip(m, st_, st_.xi, cfg)
    assert bd.misfits == pytest.approx([np.sqrt(1 + p ** -2.0)] * 2, rel=1e-14)
    assert bd.total == pytest.approx(2 * np.sqrt(1 + p ** -2.0), rel=1e-14) and bd.regulariser == 0
    assert eval_Iinf(m, st_, st_.xi, cfg) == pytest.approx(2.0, rel=1e-15)


def test_eval_inverse_crime_floor(model):
    m, xi = model
    m.data.predictions = m.inverse_crime_predictions(xi)
    st_ = m.state(xi)
    for p in (2.0, 16.0):
        bd = eval_Ip(m, st_, xi, CostConfig(0.0, 5.0, p))
        assert bd.misfits == pytest.approx([1 / p, 1 / p], rel=1e-9)
    assert eval_Iinf(m, st_, xi, CostConfig(0.0, 5.0)) <= 1e-12


def test_eval_regulariser_constants(model):
    m, _ = model
    m.data.predictions = [Prediction(np.zeros_like(tr.points), np.zeros((len(tr.vertices), 2)))
                          for tr in m.traces]
    st_ = zero_state(m)
    xi = np.full(m.mesh.n_triangles, 2.0)
    p = 6.0
    bd = eval_Ip(m, st_, xi, CostConfig(1.0, np.inf, p))
    assert bd.total == pytest.approx(2 / p + np.sqrt(4 + p ** -2.0), rel=1e-14)
    assert bd.total == pytest.approx(sum(bd.misfits) + bd.regulariser, rel=1e-15)
    assert eval_Iinf(m, st_, xi, CostConfig(1.0, np.inf, p)) == pytest.approx(2.0)


def test_eval_Iinf_matches_scan(model):
    m, xi = model
    rng = np.random.default_rng(4)
    m.data.predictions = m.inverse_crime_predictions(xi, rng, 0.1)
    st_ = m.state(0.5 * xi)
    ref = 0.0
    for (dq, dv) in misfit_samples(m, st_.v_fields):
        scan = 0.0
        for row in np.concatenate([dq, dv]):
            scan = max(scan, float(np.hypot(row[0], row[1])))
        ref += scan
    assert eval_Iinf(m, st_, st_.xi, CostConfig(0.0, 5.0)) == pytest.approx(ref, rel=1e-15)


def test_mu_density_constant():
    c, p = 1.5, 8.0
    d = mu_density(MESH, np.full(MESH.n_triangles, c), p)
    assert d.element_values == pytest.approx(np.full(MESH.n_triangles, c / np.sqrt(c * c + p ** -2)), rel=1e-13)
    assert d.total_variation == pytest.approx(c / np.sqrt(c * c + p ** -2), rel=1e-13) and d.total_variation < 1


@pytest.mark.parametrize("p", [4.0, 16.0, 64.0, 128.0])
def test_tv_bounds_random(model, p):
    m, _ = model
    rng = np.random.default_rng(int(p))
    with_predictions(m, e1)
    for _ in range(50):
        xi = rng.uniform(0, 1, m.mesh.n_triangles) ** rng.uniform(0.2, 5)
        mu = mu_density(m.mesh, xi, p)
        assert np.all(mu.values >= 0)
        assert mu.total_variation <= 1 + 1e-10
        v = rng.standard_normal((m.N, m.mesh.n_vertices, 2)) * rng.uniform(0.01, 10)
        assert nu_density(m, v, p).total_variation <= m.N + 1e-10


@given(xi=arrays(np.float64, MESH.n_triangles, elements=st.floats(0, 100)), p=st.floats(2, 256))
def test_mu_nonnegative_and_bounded(xi, p):
    d = mu_density(MESH, xi, p)
    assert np.all(d.values >= 0)
    assert d.total_variation <= 1 + 1e-10


def test_measure_moments():
    c, p = 2.0, 4.0
    d = mu_density(MESH, np.full(MESH.n_triangles, c), p)
    assert measure_moment(d, lambda x: np.ones(len(x))) == pytest.approx(d.total_variation, rel=1e-14)
    # indicator restricted element-wise, so interface points are not split
    left = np.repeat(MESH.centroids[:, 0] < 0.5, 3).astype(float)
    assert measure_moment(d, left) == pytest.approx(0.5 * d.total_variation, rel=1e-13)
    assert measure_moment(d, lambda x: x[:, 0]) == pytest.approx(0.5 * d.total_variation, rel=1e-13)


def test_boundary_moment_shape(model):
    m, _ = model
    with_predictions(m, e1)
    d = nu_density(m, np.zeros((m.N, m.mesh.n_vertices, 2)), 4.0)
    mom = measure_moment(d, lambda x: np.ones(len(x)))
    # misfit -(1,0): first component carries the whole mass, on each patch
    assert mom.shape == (2, 2)
    assert mom[0] == pytest.approx([-1 / np.sqrt(1 + 1 / 16)] * 2, rel=1e-13)
    assert mom[1] == pytest.approx([0, 0], abs=1e-15)


def test_cross_exponent_fails_at_zero_misfit(model):
    """At zero misfit I_q = N/q > N/p for q < p: the comparison needs a correction."""
    m, xi = model
    m.data.predictions = m.inverse_crime_predictions(xi)
    st_ = m.state(xi)
    Iq = eval_Ip(m, st_, xi, CostConfig(0.0, 5.0, 2.0)).total
    Ip = eval_Ip(m, st_, xi, CostConfig(0.0, 5.0, 4.0)).total
    assert Iq > Ip


@given(seed=st.integers(0, 2 ** 31), alpha=st.sampled_from([0.0, 0.3]))
def test_cross_exponent_corrected_bound(seed, alpha):
    m, xi = make_model(4)
    rng = np.random.default_rng(seed)
    m.data.predictions = m.inverse_crime_predictions(xi, rng, 0.2)
    x = rng.uniform(0, 3, m.mesh.n_triangles)
    st_ = m.state(x)
    M = np.inf if alpha > 0 else 5.0
    for q, p in [(2, 4), (4, 8), (8, 16), (2, 16)]:
        Iq = eval_Ip(m, st_, x, CostConfig(alpha, M, q)).total
        Ip = eval_Ip(m, st_, x, CostConfig(alpha, M, p)).total
        assert Iq <= Ip + cross_exponent_slack(q, p, m.N, alpha) + 1e-12


def test_dot_norm_vectors():
    w = np.array([0.5, 0.5])
    assert dot_norm(np.array([[3.0, 4.0], [3.0, 4.0]]), w, 1e8) == pytest.approx(5.0)
