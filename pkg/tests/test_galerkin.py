"""Meshes, operator assembly, admissibility, and discrete parameter norms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import waveinv as wi
from waveinv.errors import (
    ConstraintViolationError,
    InvalidMeshError,
    ResolutionError,
)
from waveinv.galerkin import (
    check_coercivity,
    matrix_time_derivative,
    time_difference,
)

from conftest import varied_point


# ---------------------------------------------------------------------------
# meshes


def test_interval_mesh_layout(wave_disc):
    d = wave_disc
    assert d.n_nodes == 13
    assert np.allclose(np.diff(d.nodes), 1.0 / 12.0)
    assert list(d.boundary_nodes) == [0, 12]
    assert list(d.free_nodes) == list(range(1, 12))
    assert d.n_free == 11
    assert d.element_sizes.sum() == pytest.approx(1.0)


def test_triangle_mesh_layout(elastic_disc):
    d = elastic_disc
    assert d.n_nodes == 16
    assert d.elements.shape == (18, 3)
    assert d.n_components == 2
    assert d.element_sizes.sum() == pytest.approx(1.0)
    assert np.all(d.element_sizes > 0)
    # free DOFs are the x/y components of the four interior nodes
    assert d.n_free == 8


def test_rectangular_extent():
    d = wi.build_grid("elastic2d", (2, 4), extent=(2.0, 1.0))
    assert d.element_sizes.sum() == pytest.approx(2.0)
    assert d.nodes[:, 0].max() == pytest.approx(2.0)
    assert d.nodes[:, 1].max() == pytest.approx(1.0)


def test_bad_meshes_rejected():
    with pytest.raises(InvalidMeshError):
        wi.build_grid("wave1d", 1)
    with pytest.raises(InvalidMeshError):
        wi.build_grid("wave1d", 10, extent=-1.0)
    with pytest.raises(InvalidMeshError):
        wi.build_grid("plate3d", 10)


def test_element_mean_accumulate_adjoint(wave_disc, elastic_disc):
    rng = np.random.default_rng(0)
    for d in (wave_disc, elastic_disc):
        v = rng.standard_normal(d.n_nodes)
        g = rng.standard_normal(d.elements.shape[0])
        lhs = float(np.sum(d.element_sizes * g * d.element_means(v)))
        rhs = float(v @ d.accumulate_to_nodes(g))
        assert lhs == pytest.approx(rhs, rel=1e-13)


def test_lumped_node_measure_partitions_volume(wave_disc, elastic_disc, maxwell_disc):
    for d in (wave_disc, elastic_disc, maxwell_disc):
        assert d.lumped_node_measure.sum() == pytest.approx(d.element_sizes.sum())
        assert np.all(d.lumped_node_measure > 0)


# ---------------------------------------------------------------------------
# operator assembly


def test_wave_mass_and_stiffness_entries():
    d = wi.build_grid("wave1d", 4)
    h = 0.25
    tg = np.linspace(0.0, 1.0, 3)
    point = wi.ParameterPoint.from_constants("wave1d", tg, d.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0)
    tl = wi.assemble_operators(d, point)
    C = tl.C[0].toarray()
    A = tl.A[0].toarray()
    assert np.allclose(np.diag(C), 2.0 * h / 3.0)
    assert np.allclose(np.diag(C, 1), h / 6.0)
    assert np.allclose(np.diag(A), 2.0 / h)
    assert np.allclose(np.diag(A, 1), -1.0 / h)
    # unit-coefficient operators coincide with the inner-product matrices
    assert np.allclose(C, d.M.toarray())
    assert np.allclose(A, d.K_V.toarray())


def test_assembly_linear_in_coefficients(wave_disc, time_grid):
    rng = np.random.default_rng(1)
    shape = (time_grid.size, wave_disc.n_nodes)
    f1, f2 = rng.uniform(0.5, 1.5, shape), rng.uniform(0.5, 1.5, shape)

    def stiffness_at(vals, n):
        point = wi.ParameterPoint.from_constants(
            "wave1d", time_grid, wave_disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0
        )
        point.fields["a"].values = vals
        return wi.assemble_operators(wave_disc, point).A[n].toarray()

    combo = stiffness_at(0.25 * f1 + 0.75 * f2, 7)
    parts = 0.25 * stiffness_at(f1, 7) + 0.75 * stiffness_at(f2, 7)
    assert np.allclose(combo, parts, atol=1e-14)


def test_elastic_operator_symmetric_positive(elastic_disc, elastic_point):
    tl = wi.assemble_operators(elastic_disc, elastic_point)
    A = tl.A[0].toarray()
    C = tl.C[0].toarray()
    assert np.allclose(A, A.T)
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(A).min() > 0
    assert np.linalg.eigvalsh(C).min() > 0
    assert tl.B is None or all(b.nnz == 0 for b in tl.B)
    assert tl.Q is None or all(q.nnz == 0 for q in tl.Q)


def test_maxwell_reciprocal_sampling(maxwell_disc, time_grid):
    # constant mu = 2 must give exactly half the unit stiffness matrix
    point = wi.ParameterPoint.from_constants(
        "maxwell1d", time_grid, maxwell_disc.n_nodes, eps=1.0, mu=2.0
    )
    tl = wi.assemble_operators(maxwell_disc, point)
    assert np.allclose(tl.A[0].toarray(), 0.5 * maxwell_disc.K_V.toarray())
    # and the element sample is the vertex mean of mu, taken before inverting
    nodal_mu = np.linspace(1.0, 2.0, maxwell_disc.n_nodes)
    point.fields["mu"].values = np.tile(nodal_mu, (time_grid.size, 1))
    tl = wi.assemble_operators(maxwell_disc, point)
    mu_e = maxwell_disc.element_means(nodal_mu)
    kit = maxwell_disc.kits["stiffness"]
    assert np.allclose(tl.A[0].toarray(), kit.assemble(1.0 / mu_e).toarray())


def test_assemble_operators_rejects_inadmissible(wave_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "wave1d", time_grid, wave_disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0
    )
    point.fields["a"].values[5, 3] = 0.01  # below the lower bound
    with pytest.raises(ConstraintViolationError):
        wi.assemble_operators(wave_disc, point)


def test_timeline_derivative_matches_stencil(wave_disc, time_grid):
    point = varied_point(wave_disc, time_grid)
    tl = wi.assemble_operators(wave_disc, point)
    dt = time_grid[1] - time_grid[0]
    dC = matrix_time_derivative(tl.C, dt)
    n = 17
    expected = (tl.C[n + 1].toarray() - tl.C[n - 1].toarray()) / (2 * dt)
    assert np.allclose(dC[n].toarray(), expected)


# ---------------------------------------------------------------------------
# coercivity


def test_coercivity_margin_tracks_coefficient(wave_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "wave1d", time_grid, wave_disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=2.0
    )
    point.fields["a"].values = np.tile(1.0 + time_grid[:, None], (1, wave_disc.n_nodes))
    tl = wi.assemble_operators(wave_disc, point)
    report = check_coercivity(tl, wave_disc)
    assert np.allclose(report.margins_A, 1.0 + time_grid, atol=1e-10)
    assert np.allclose(report.margins_C, 2.0, atol=1e-10)
    assert report.min_A == pytest.approx(1.0)
    assert report.passed


def test_coercivity_threshold_failure(wave_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "wave1d", time_grid, wave_disc.n_nodes, a=0.2, b=0.0, q=0.0, rho=1.0
    )
    tl = wi.assemble_operators(wave_disc, point)
    report = check_coercivity(tl, wave_disc, threshold_A=0.5)
    assert not report.passed


# ---------------------------------------------------------------------------
# admissibility and projection


def test_constraint_violation_reports_location(wave_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "wave1d", time_grid, wave_disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0
    )
    point.fields["rho"].values[3, 2] = 0.05
    with pytest.raises(ConstraintViolationError) as info:
        point.check_admissible()
    assert info.value.field == "rho"
    assert info.value.value == pytest.approx(0.05)
    assert info.value.index == (3, 2)


def test_elastic_compound_bound(elastic_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "elastic2d", time_grid, elastic_disc.n_nodes, lam=1.0, mu=1.0, rho=1.0
    )
    point.fields["lam"].values[:] = 4.0  # 2 mu + 3 lam = 14 > alpha0
    with pytest.raises(ConstraintViolationError):
        point.check_admissible()
    projected = wi.project_point(point)
    projected.check_admissible()


def test_project_point_clips_and_is_idempotent(wave_disc, time_grid):
    point = wi.ParameterPoint.from_constants(
        "wave1d", time_grid, wave_disc.n_nodes, a=1.0, b=0.0, q=0.0, rho=1.0
    )
    point.fields["a"].values[0, 0] = -3.0
    point.fields["q"].values[1, 1] = 1e9
    once = wi.project_point(point)
    once.check_admissible()
    twice = wi.project_point(once)
    for name in once.fields:
        assert np.array_equal(once.fields[name].values, twice.fields[name].values)
    # untouched entries survive projection
    assert once.fields["a"].values[5, 5] == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(
    lam=st.floats(-5.0, 20.0),
    mu=st.floats(-5.0, 20.0),
    rho=st.floats(-5.0, 20.0),
)
def test_project_point_always_lands_admissible(lam, mu, rho):
    disc = wi.build_grid("elastic2d", 2)
    tg = np.linspace(0.0, 1.0, 5)
    point = wi.ParameterPoint.from_constants(
        "elastic2d", tg, disc.n_nodes, lam=1.0, mu=1.0, rho=1.0
    )
    point.fields["lam"].values[:] = lam
    point.fields["mu"].values[:] = mu
    point.fields["rho"].values[:] = rho
    wi.project_point(point).check_admissible()


def test_point_copy_is_deep(wave_point):
    other = wave_point.copy()
    other.fields["a"].values[0, 0] = 9.0
    assert wave_point.fields["a"].values[0, 0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# discrete parameter norms


def test_time_difference_exact_on_quadratics(time_grid):
    vals = np.outer(time_grid**2, np.ones(3))
    dt = time_grid[1] - time_grid[0]
    deriv = time_difference(vals, dt)
    assert np.allclose(deriv, np.outer(2.0 * time_grid, np.ones(3)), atol=1e-12)
    with pytest.raises(ResolutionError):
        time_difference(vals[:2], dt)


def test_parameter_norm_constant_field(time_grid):
    field = wi.ParameterField.constant(3.0, time_grid, 4)
    for k in (0, 1, 2):
        assert wi.parameter_norm(field, k) == pytest.approx(3.0)


def test_parameter_norm_quadratic_oracle(time_grid):
    # t^2 on [0, 1]: values sup 1, first derivative sup 2, second 2 — all
    # captured exactly by the second-order stencils
    field = wi.ParameterField.constant(0.0, time_grid, 4)
    field.values = np.outer(time_grid**2, np.ones(4))
    assert wi.parameter_norm(field, 0) == pytest.approx(2.0)
    assert wi.parameter_norm(field, 1) == pytest.approx(2.0)


def test_parameter_norm_scaling_and_growth(time_grid):
    rng = np.random.default_rng(3)
    field = wi.ParameterField.constant(0.0, time_grid, 5)
    field.values = rng.standard_normal(field.values.shape)
    scaled = wi.ParameterField.constant(0.0, time_grid, 5)
    scaled.values = -2.5 * field.values
    assert wi.parameter_norm(scaled, 1) == pytest.approx(2.5 * wi.parameter_norm(field, 1))
    norms = [wi.parameter_norm(field, k) for k in (0, 1, 2)]
    assert norms[0] <= norms[1] <= norms[2]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 1))
def test_parameter_norm_monotone_in_smoothness_order(seed, k):
    tg = np.linspace(0.0, 1.0, 17)
    rng = np.random.default_rng(seed)
    field = wi.ParameterField.constant(0.0, tg, 3)
    field.values = rng.standard_normal(field.values.shape)
    assert wi.parameter_norm(field, k) <= wi.parameter_norm(field, k + 1) + 1e-12


# ---------------------------------------------------------------------------
# serialization helpers


def test_field_csv_round_trip(tmp_path, time_grid):
    rng = np.random.default_rng(4)
    values = rng.uniform(0.5, 1.5, (time_grid.size, 7))
    path = tmp_path / "field.csv"
    np.savetxt(path, values, delimiter=",")
    field = wi.load_field_csv(path, time_grid, 7)
    assert np.allclose(field.values, values)
    with pytest.raises(ValueError):
        wi.load_field_csv(path, time_grid, 9)


def test_discretization_json_summary(wave_disc, tmp_path):
    blob = wi.discretization_to_json(wave_disc)
    assert blob["problem"] == "wave1d"
    assert len(blob["free_dofs"]) == wave_disc.n_free
    wi.save_discretization(wave_disc, tmp_path / "disc.json")
    assert (tmp_path / "disc.json").stat().st_size > 0
