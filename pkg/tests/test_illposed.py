"""Bump families, rank-one sequences, and the instability experiments."""

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

import waveinv as wi
from waveinv.errors import (
    ResolutionError,
    SlackError,
    SpectralError,
    TooLargeError,
)
from waveinv.illposed import (
    bump_sequence,
    illposed_experiment,
    mother_bump,
    rank_one_sequence,
    svd_probe,
)

from conftest import modal_source, varied_point


# ---------------------------------------------------------------------------
# mother bump against an independent symbolic oracle


@pytest.fixture(scope="module")
def symbolic_derivatives():
    t = sympy.Symbol("t")
    psi = sympy.exp(-1 / (1 - t**2))
    return [
        sympy.lambdify(t, sympy.diff(psi, t, i), "numpy") for i in range(4)
    ]


def test_mother_bump_matches_symbolic_derivatives(symbolic_derivatives):
    bump = mother_bump(3)
    tt = np.linspace(-0.95, 0.95, 401)
    for i, exact in enumerate(symbolic_derivatives):
        ours = bump.derivative(tt, i) * bump.scale
        assert np.abs(ours - exact(tt)).max() <= 1e-9 * max(
            1.0, np.abs(exact(tt)).max()
        ), i


def test_mother_bump_normalization(symbolic_derivatives):
    bump = mother_bump(3)
    # a grid finer than the normalization grid may see a marginally larger sup
    tt = np.linspace(-1.0, 1.0, 40001)
    sups = [np.abs(bump.derivative(tt, i)).max() for i in range(4)]
    assert max(sups) == pytest.approx(1.0, abs=1e-4)
    # the highest derivative dominates, so the certified constant is 0.8
    assert sups[3] == pytest.approx(1.0, abs=1e-4)
    assert bump.gamma == pytest.approx(0.8, abs=1e-9)


def test_mother_bump_compact_support():
    bump = mother_bump(2)
    outside = np.array([-5.0, -1.0, 1.0, 3.0])
    for i in range(3):
        assert np.all(bump.derivative(outside, i) == 0.0)
    assert bump(np.array(0.0)) == bump.peak > 0


# ---------------------------------------------------------------------------
# bump sequences


def test_bump_sequence_scaling_and_support():
    tg = np.linspace(0.0, 1.0, 513)
    seq = bump_sequence(3, 0.5, 1.0, tg, [4, 8, 16])
    bump = seq.mother
    for j in (4, 8, 16):
        assert seq.profile(j, 0.5) == pytest.approx(float(j) ** (-3) * bump.peak)
        assert seq.profile(j, 0.5 + 1.01 / j) == 0.0
        assert seq.profile(j, 0.5 - 1.01 / j) == 0.0
        assert np.array_equal(seq.samples[j], None) is False


def test_bump_sequence_certified_norm_sandwich():
    tg = np.linspace(0.0, 1.0, 513)
    seq = bump_sequence(3, 0.5, 1.0, tg, [4, 8, 16, 32, 64])
    norms = seq.certified_norms()
    for j, norm in norms.items():
        assert seq.gamma <= norm <= 1.05, j


def test_bump_sequence_preconditions():
    tg = np.linspace(0.0, 1.0, 513)
    with pytest.raises(ValueError):
        bump_sequence(3, 1.5, 1.0, tg, [4])  # center outside the interval
    with pytest.raises(ValueError):
        bump_sequence(3, 0.5, 1.0, tg, [0])  # nonpositive index
    with pytest.raises(ValueError):
        bump_sequence(-1, 0.5, 1.0, tg, [4])  # negative smoothness order
    with pytest.raises(ResolutionError):
        bump_sequence(3, 0.5, 1.0, np.linspace(0.0, 1.0, 33), [64])


@settings(max_examples=20, deadline=None)
@given(
    j=st.sampled_from([4, 8, 16, 32]),
    offset=st.floats(-0.4, 0.4),
)
def test_bump_profile_translation_property(j, offset):
    tg = np.linspace(0.0, 1.0, 1025)
    seq = bump_sequence(2, 0.5, 1.0, tg, [j])
    t = 0.5 + offset / j
    expected = float(j) ** (-2) * seq.mother(np.array(offset))
    assert seq.profile(j, t) == pytest.approx(expected, rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------------------
# rank-one sequences


def test_rank_one_x_sequence_unit_norms(wave_disc):
    seq = rank_one_sequence(wave_disc, "X", [1, 2, 3, 5])
    for k in seq.k_values:
        assert seq.operator_norm(k) == pytest.approx(1.0, abs=1e-10)
    assert seq.upper_constant == 1.0 and seq.lower_constant == 1.0
    # projection property in the pivot inner product
    v = np.sin(2.5 * np.arange(wave_disc.n_free))
    image = seq.apply(2, v)
    phi = seq.vectors[2]
    assert np.allclose(image, phi * float(phi @ (wave_disc.M @ v)))


def test_rank_one_y_sequence_unit_norms(wave_disc):
    seq = rank_one_sequence(wave_disc, "Y", [1, 2, 4])
    for k in seq.k_values:
        assert seq.operator_norm(k) == pytest.approx(1.0, abs=1e-10)


def test_rank_one_eigenvalues_match_dirichlet_modes(wave_disc):
    seq = rank_one_sequence(wave_disc, "X", [1])
    # uniform linear elements with consistent mass admit closed-form
    # generalized eigenvalues (6/h^2)(1 - cos(k pi h))/(2 + cos(k pi h)),
    # which overshoot the continuum values (k pi)^2 by O((k pi h)^2)
    h = 1.0 / 12.0
    for k in (1, 2):
        c = np.cos(k * np.pi * h)
        exact_discrete = 6.0 / h**2 * (1.0 - c) / (2.0 + c)
        assert seq.eigenvalues[k - 1] == pytest.approx(exact_discrete, rel=1e-12)
        assert seq.eigenvalues[k - 1] == pytest.approx((k * np.pi) ** 2, rel=5e-2)
    assert np.all(np.diff(seq.eigenvalues) > 0)


def test_rank_one_rejects_bad_indices(wave_disc):
    with pytest.raises(SpectralError):
        rank_one_sequence(wave_disc, "X", [0])
    with pytest.raises(SpectralError):
        rank_one_sequence(wave_disc, "X", [wave_disc.n_free + 1])
    with pytest.raises(ValueError):
        rank_one_sequence(wave_disc, "Z", [1])


# ---------------------------------------------------------------------------
# instability experiment


def quick_instance(problem, n, n_steps):
    disc = wi.build_grid(problem, n)
    tg = np.linspace(0.0, 1.0, n_steps + 1)
    point = varied_point(disc, tg, amplitude=0.1)
    f = modal_source(disc, tg)
    return disc, tg, point, f


def test_illposed_experiment_structure():
    # 128 steps so the narrowest bump (j=16) still covers >= 8 grid nodes
    disc, tg, point, f = quick_instance("wave1d", 10, 128)
    result = illposed_experiment(
        disc, point, "q", 0.4, [4, 8, 16], f, fine_intervals=8192
    )
    assert result.problem == "wave1d" and result.target == "q"
    assert len(result.rows()) == 3
    assert result.param_lower_ok
    assert result.output_decreasing
    assert np.all(np.diff(result.output_distances) < 0)
    assert result.output_ratio == pytest.approx(
        result.output_distances[-1] / result.output_distances[0]
    )
    # parameter distances certify the lower bound delta * gamma / 2
    assert np.all(result.param_distances >= 0.4 * result.gamma / 2.0)


def test_illposed_param_distance_same_for_additive_and_reciprocal_targets():
    # the perturbation profile is the same analytic object for every recipe,
    # so its certified norm must agree across problems and targets
    disc_w, tg, point_w, f_w = quick_instance("wave1d", 8, 64)
    disc_m, _, point_m, f_m = quick_instance("maxwell1d", 8, 64)
    res_w = illposed_experiment(
        disc_w, point_w, "a", 0.3, [4, 8], f_w, fine_intervals=8192
    )
    res_m = illposed_experiment(
        disc_m, point_m, "mu", 0.3, [4, 8], f_m, fine_intervals=8192
    )
    assert np.allclose(res_w.param_distances, res_m.param_distances, rtol=1e-12)


def test_illposed_experiment_slack_error():
    # the shear modulus has an upper box bound, so a huge amplitude must be
    # rejected; the normalized bump peak is ~2e-3, hence the large delta
    disc, tg, point, f = quick_instance("elastic2d", 3, 32)
    with pytest.raises(SlackError) as info:
        illposed_experiment(disc, point, "mu", 1e6, [4], f, fine_intervals=4096)
    assert info.value.delta == pytest.approx(1e6)
    assert "delta" in str(info.value)


# ---------------------------------------------------------------------------
# svd probe


def test_svd_probe_report(wave_disc):
    tg = np.linspace(0.0, 1.0, 33)
    point = varied_point(wave_disc, tg, amplitude=0.1)
    f = modal_source(wave_disc, tg)
    report = svd_probe(
        wave_disc, point, "a", f, time_knots=4, space_knots=3
    )
    sv = report.singular_values
    assert sv.size == 12
    assert np.all(sv[:-1] > sv[1:])  # strictly decreasing
    assert np.all(sv > 0)
    assert 0 < report.numerical_rank <= 12
    assert report.n_parameters == 12
    assert np.allclose(report.ratios, sv / sv[0])


def test_svd_probe_guards(wave_disc):
    tg = np.linspace(0.0, 1.0, 33)
    point = varied_point(wave_disc, tg, amplitude=0.1)
    f = modal_source(wave_disc, tg)
    with pytest.raises(TooLargeError):
        svd_probe(wave_disc, point, "a", f, time_knots=25, space_knots=20)
    with pytest.raises(ValueError):
        svd_probe(wave_disc, point, "lam", f)
