import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import bump_bottom, load_config, make_model, zero_vec
from linfmisfit.assembly import assemble_operator
from linfmisfit.cli import convergence_study
from linfmisfit.coefficients import identity_set
from linfmisfit.expr import parse_vector
from linfmisfit.forward import (ForwardModel, ParameterField, Prediction, ProblemData, estimate_check,
                                estimate_refinement_study)
from linfmisfit.mesh import build_rectangle_mesh, tag_patches


def const(c):
    return lambda p: np.broadcast_to(np.asarray(c, float), (len(p), 2)).copy()


def unit_model(n, S, s, coeffs=None, N=1):
    mesh = tag_patches(build_rectangle_mesh(n, n), [("B1", "top", (0, 1))])
    data = ProblemData([S] * N, [s] * N, ["B1"] * N)
    return ForwardModel(mesh, coeffs or identity_set(k1=1.0, k2=0.0, gamma=1.0), data)


def test_zero_parameter_gives_zero_v():
    model, _ = make_model(16, N=2)
    v, _ = model.solve_v(np.zeros(model.mesh.n_triangles))
    assert v.shape == (2, model.mesh.n_vertices, 2)
    assert np.max(np.abs(v)) <= 1e-12
    rep = estimate_check(model, model.state(np.zeros(model.mesh.n_triangles)), 4.0)
    assert rep.passed and rep.v_ratios == [None, None] and rep.max_abs_v == 0.0


def test_constant_manufactured_solution():
    model = unit_model(6, const([1, 0]), const([1, 0]))
    u = model.solve_u()[0]
    assert np.max(np.abs(u - [1.0, 0.0])) <= 1e-11


def test_zero_sources_give_zero_u():
    model = unit_model(4, zero_vec, zero_vec)
    assert not np.any(model.solve_u())


def test_quadratic_manufactured_rate():
    cfg = load_config("forward_manufactured")
    exact = parse_vector(cfg.forward.exact_u)
    res = convergence_study(cfg, exact, [8, 16, 32], min_rate=1.8)
    assert res["passed"] and not res["exact"]
    assert res["min_rate"] >= 1.8
    errs = [r["l2_error"] for r in res["rows"]]
    assert errs[0] > errs[1] > errs[2]


def test_u_is_linear_in_sources():
    a = unit_model(4, const([1, 0.5]), bump_bottom).solve_u()
    b = unit_model(4, const([2, 1.0]), lambda p: 2 * bump_bottom(p)).solve_u()
    assert np.allclose(b, 2 * a, atol=1e-12)


def test_v_linear_in_constant_parameter(model8):
    model, _ = model8
    ne = model.mesh.n_triangles
    v1, _ = model.solve_v(np.full(ne, 0.7))
    v2, _ = model.solve_v(np.full(ne, 1.4))
    assert np.max(np.abs(v2 - 2 * v1)) <= 1e-11 * max(1.0, np.max(np.abs(v1)))


@given(seed=st.integers(0, 2 ** 31))
def test_superposition(seed):
    model, _ = make_model(6)
    rng = np.random.default_rng(seed)
    x1, x2 = rng.uniform(0, 3, (2, model.mesh.n_triangles))
    v12, _ = model.solve_v(x1 + x2)
    v1, _ = model.solve_v(x1)
    v2, _ = model.solve_v(x2)
    assert np.max(np.abs(v12 - v1 - v2)) <= 1e-11 * max(1.0, np.max(np.abs(v12)))


def test_u_cache_untouched_by_v_solves(model8):
    model, xi = model8
    u0 = model.solve_u().copy()
    for s in (0.0, 1.0, 5.0):
        model.state(xi * s)
    assert model.solve_u() is model.solve_u()
    assert np.array_equal(model.solve_u(), u0)
    with pytest.raises(ValueError):
        model.solve_u()[0, 0, 0] = 1.0


def test_state_residuals(model8):
    model, xi = model8
    st_ = model.state(xi)
    assert len(st_.reports) == 2 * model.N
    assert all(r.relative_residual <= 1e-10 for r in st_.reports)


def test_single_inclusion_matches_dense_oracle():
    """2x2 mesh, M = I: coupling load from exact P1 mass, dense solve."""
    mesh = tag_patches(build_rectangle_mesh(2, 2), [("B1", "top", (0, 1))])
    coeffs = identity_set(k1=1.0, k2=0.3, gamma=0.5)
    model = ForwardModel(mesh, coeffs, ProblemData([const([1, -0.5])], [bump_bottom], ["B1"]))
    u = model.solve_u()[0]
    xi = np.zeros(mesh.n_triangles)
    xi[3] = 2.5
    load = np.zeros((mesh.n_vertices, 2))
    for e, tri in enumerate(mesh.triangles):
        for a in range(3):
            for b in range(3):
                load[tri[a]] += xi[e] * mesh.areas[e] / 12 * (2 if a == b else 1) * u[tri[b]]
    B = assemble_operator(model.space, coeffs.B, coeffs.L, coeffs.gamma).matrix.toarray()
    ref = np.linalg.solve(B, load.ravel()).reshape(-1, 2)
    v, _ = model.solve_v(xi)
    assert np.max(np.abs(v[0] - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_parameter_field_bounds():
    ParameterField(np.array([0.0, 1.0, 2.0]), M=2.0)
    with pytest.raises(ValueError):
        ParameterField(np.array([-1e-3, 1.0]))
    with pytest.raises(ValueError):
        ParameterField(np.array([0.5, 3.0]), M=2.0)


def test_problem_data_invariants():
    with pytest.raises(ValueError):
        ProblemData([], [], [])
    with pytest.raises(ValueError):
        ProblemData([zero_vec], [zero_vec, zero_vec], ["B1"])
    with pytest.raises(ValueError):
        ProblemData([zero_vec], [zero_vec], ["B1"], m=2.0)


def test_inverse_crime_predictions_are_traces(model8):
    model, xi = model8
    clean = model.inverse_crime_predictions(xi)
    v, _ = model.solve_v(xi)
    for tr, p, vi in zip(model.traces, clean, v):
        assert np.array_equal(p.qp, tr.apply(vi))
        assert np.array_equal(p.vertex, vi[tr.vertices])


@pytest.mark.parametrize("noise_model", ["samples", "smooth"])
def test_noise_amplitude_bound(model8, noise_model):
    model, xi = model8
    clean = model.inverse_crime_predictions(xi)
    noisy = model.inverse_crime_predictions(xi, np.random.default_rng(1), 0.05, noise_model)
    for c, p in zip(clean, noisy):
        d = np.concatenate([p.qp - c.qp, p.vertex - c.vertex])
        assert 0 < np.max(np.abs(d)) <= 0.05 + 1e-15
    with pytest.raises(ValueError):
        model.inverse_crime_predictions(xi, None, 0.05, "gaussian")


def test_smooth_noise_is_one_field():
    """Gauss-point and vertex samples at the same coordinate see the same perturbation."""
    base = Prediction(np.zeros((3, 2)), np.zeros((3, 2)))
    s = np.array([0.0, 0.4, 1.0])
    p = base.perturbed_smooth(np.random.default_rng(5), 0.1, s, s, 1.0)
    assert np.array_equal(p.qp, p.vertex)
    assert np.max(np.abs(p.qp)) <= 0.1


def test_estimate_check_bounded_under_refinement():
    def build(n):
        model, xi = make_model(n)
        return model, xi

    res = estimate_refinement_study(build, [8, 16, 32], p=4.0, growth=1.2)
    assert res["passed"], res
    assert all(all(r is not None and np.isfinite(r) for r in row["u_ratios"]) for row in res["rows"])
