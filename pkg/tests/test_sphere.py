import math

import numpy as np
import pytest
from scipy.integrate import simpson

from app.core.errors import DomainError, ProfileError
from app.models.schemas import Convention, ProfileFamily
from app.services.sphere_service import (
    RadialProfile,
    ball_volume,
    conformal_spectrum,
    critical_norm,
    geometric_constants,
    harmonic_multiplicity,
    radial_metric_assemble,
    ricci_eigenvalues,
    ricci_parameter,
    round_metric,
    round_spectrum,
    scalar_curvature,
    sphere_volume,
    yamabe_quotient,
)

W3 = 2 * math.pi**2


def _pairs(spectrum):
    return [(e.value, e.multiplicity) for e in spectrum.entries]


# ---------- closed forms ----------

def test_constants_n3():
    consts = geometric_constants(3)
    assert consts.w_n == pytest.approx(W3, rel=1e-15)
    assert consts.K2 == pytest.approx(4 / (3 * W3 ** (2 / 3)), rel=1e-14)
    assert consts.Cstar == pytest.approx(4 * math.pi / (4 * math.pi / 3) ** (2 / 3), rel=1e-14)
    assert consts.Y_sphere == pytest.approx(6 * W3 ** (2 / 3), rel=1e-14)
    assert consts.Vc_default == consts.w_n
    assert consts.C_iso_round == pytest.approx(4 * math.pi / math.pi ** (4 / 3), rel=1e-14)


@pytest.mark.parametrize("n", range(3, 9))
def test_constants_positive(n):
    consts = geometric_constants(n)
    assert min(consts.w_n, consts.K2, consts.Cstar, consts.Y_sphere, consts.C_iso_round) > 0


@pytest.mark.parametrize("n", [2, 9])
def test_constants_unsupported_dimension(n):
    with pytest.raises(DomainError):
        geometric_constants(n)


def test_volumes():
    assert sphere_volume(2) == pytest.approx(4 * math.pi)
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_harmonic_multiplicity_on_s2():
    assert [harmonic_multiplicity(ell, 3) for ell in range(5)] == [1, 3, 5, 7, 9]


def test_harmonic_multiplicity_on_s3_is_square():
    assert [harmonic_multiplicity(k, 4) for k in range(6)] == [(k + 1) ** 2 for k in range(6)]


@pytest.mark.parametrize(
    "n, count, expected",
    [
        (3, 3, [(0.0, 1), (3.0, 4), (8.0, 9)]),
        (2, 2, [(0.0, 1), (2.0, 3)]),
        (4, 2, [(0.0, 1), (4.0, 5)]),
    ],
)
def test_round_spectrum(n, count, expected):
    spec = round_spectrum(n, count)
    assert spec.convention == Convention.CLOSED
    assert _pairs(spec) == expected


def test_round_spectrum_rejects_bad_input():
    with pytest.raises(DomainError):
        round_spectrum(1, 3)
    with pytest.raises(DomainError):
        round_spectrum(3, 0)


# ---------- profiles / metrics ----------

@pytest.mark.parametrize("c", [0.0, 0.4, -0.7])
def test_constant_profile_is_homothety(c):
    metric = radial_metric_assemble(RadialProfile.constant(c, 3), mesh_size=500)
    np.testing.assert_allclose(metric.scalar, 6 * math.exp(-2 * c), rtol=1e-13)
    assert metric.volume == pytest.approx(W3 * math.exp(3 * c), rel=1e-12)
    assert metric.maxS == pytest.approx(6 * math.exp(-2 * c), rel=1e-13)


def test_round_s4():
    metric = round_metric(4, mesh_size=500)
    np.testing.assert_allclose(metric.scalar, 12.0, rtol=1e-13)
    assert metric.volume == pytest.approx(sphere_volume(4), rel=1e-12)
    assert metric.is_round


def test_cosine_max_scalar_matches_dense_sampling(cosine3):
    theta = np.linspace(0.0, math.pi, 100_001)
    dense = scalar_curvature(cosine3.profile, theta)
    assert cosine3.maxS == pytest.approx(float(dense.max()), abs=1e-8)
    assert cosine3.minS == pytest.approx(float(dense.min()), abs=1e-8)
    assert cosine3.minS < cosine3.maxS


def test_ricci_parameter_scales_with_homothety():
    assert ricci_parameter(round_metric(3, mesh_size=200)) == pytest.approx(1.0, rel=1e-13)
    shrunk = radial_metric_assemble(RadialProfile.constant(0.5, 3), mesh_size=200)
    assert ricci_parameter(shrunk) == pytest.approx(math.exp(-0.5), rel=1e-13)


def test_ricci_parameter_needs_positive_curvature():
    tall_bump = radial_metric_assemble(RadialProfile.bump(math.pi / 2, 0.4, 2.0, 3), mesh_size=2000)
    with pytest.raises(DomainError):
        ricci_parameter(tall_bump)


def test_bump_support_must_fit():
    with pytest.raises(ProfileError):
        RadialProfile.bump(0.3, 0.5, 0.1, 3)
    with pytest.raises(ProfileError):
        RadialProfile.bump(1.0, 0.0, 0.1, 3)
    polar = RadialProfile.bump(0.0, 1.0, 0.1, 3)
    assert polar.family == ProfileFamily.BUMP


def test_profiles_need_three_dimensions():
    with pytest.raises(ProfileError):
        RadialProfile.cosine(0.1, 2)


def test_tabulated_profile_round_trip(tmp_path):
    theta = np.linspace(0.0, math.pi, 201)
    path = tmp_path / "profile.csv"
    path.write_text("theta,f\n" + "\n".join(f"{t!r},{0.2 * math.cos(t)!r}" for t in theta) + "\n")
    profile = RadialProfile.from_csv(path, 3)
    f, f1, _ = profile.evaluate(np.array([0.0, 1.0, math.pi]))
    np.testing.assert_allclose(f, 0.2 * np.cos([0.0, 1.0, math.pi]), atol=1e-7)
    assert abs(f1[0]) < 1e-4


def test_tabulated_profile_rejects_pole_kink():
    theta = np.linspace(0.0, math.pi, 101)
    with pytest.raises(ProfileError):
        RadialProfile.tabulated(theta, 0.3 * theta, 3)


def test_tabulated_profile_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("theta,g\n0,0\n1,0\n2,0\n3.141592653589793,0\n")
    with pytest.raises(ProfileError):
        RadialProfile.from_csv(path, 3)


# ---------- spectra ----------

def test_round_s3_conformal_spectrum(round3):
    spec = conformal_spectrum(round3, 14)
    assert [e.multiplicity for e in spec.entries] == [1, 4, 9]
    np.testing.assert_allclose([e.value for e in spec.entries], [0.0, 3.0, 8.0], rtol=1e-6, atol=1e-12)


def test_round_s3_multiplicities_up_to_k5(round3):
    spec = conformal_spectrum(round3, 91)
    assert [e.multiplicity for e in spec.entries] == [(k + 1) ** 2 for k in range(6)]
    np.testing.assert_allclose(
        [e.value for e in spec.entries][1:], [k * (k + 2) for k in range(1, 6)], rtol=1e-6
    )


def test_constant_metric_scales_spectrum(round3):
    c = 0.3
    scaled = radial_metric_assemble(RadialProfile.constant(c, 3))
    base = conformal_spectrum(round3, 30).flatten()
    spec = conformal_spectrum(scaled, 30).flatten()
    np.testing.assert_allclose(spec[1:], math.exp(-2 * c) * base[1:], rtol=1e-8)
    # normalized eigenvalues lambda_k vol^{2/n} do not see the homothety
    np.testing.assert_allclose(
        spec[1:] * scaled.volume ** (2 / 3), base[1:] * round3.volume ** (2 / 3), rtol=1e-8
    )


def test_cosine_spectrum_mesh_convergence():
    metric = radial_metric_assemble(RadialProfile.cosine(0.2, 3))
    fine = conformal_spectrum(metric, 10, mesh_size=4000).flatten()
    coarse = conformal_spectrum(metric, 10, mesh_size=2000).flatten()
    np.testing.assert_allclose(coarse[1:10], fine[1:10], rtol=1e-5)


def test_conformal_spectrum_keeps_last_cluster(round3):
    spec = conformal_spectrum(round3, 6)
    assert spec.total_multiplicity == 14


# ---------- Sobolev / Yamabe ----------

def test_critical_norm_of_one(round3):
    u = np.ones_like(round3.mesh)
    assert critical_norm(u, round3) == pytest.approx(W3 ** (1 / 3), rel=1e-10)


def test_critical_norm_homogeneity(round3):
    u = np.cos(round3.mesh)
    assert critical_norm(-2.5 * u, round3) == pytest.approx(2.5**2 * critical_norm(u, round3), rel=1e-12)


def test_critical_norm_of_first_eigenfunction_matches_dense_oracle(round3):
    u = np.cos(round3.mesh)
    theta = np.linspace(0.0, math.pi, 100_001)
    dense = simpson(np.abs(np.cos(theta)) ** 6 * np.sin(theta) ** 2, x=theta) * sphere_volume(2)
    assert critical_norm(u, round3) == pytest.approx(dense ** (1 / 3), rel=1e-6)


def test_yamabe_of_one_is_sphere_constant(round3):
    u = np.ones_like(round3.mesh)
    assert yamabe_quotient(u, round3) == pytest.approx(geometric_constants(3).Y_sphere, rel=1e-12)


def test_yamabe_is_invariant_under_homothety(round3):
    scaled = radial_metric_assemble(RadialProfile.constant(0.6, 3))
    assert yamabe_quotient(np.ones_like(scaled.mesh), scaled) == pytest.approx(
        yamabe_quotient(np.ones_like(round3.mesh), round3), rel=1e-10
    )


def test_yamabe_is_scale_invariant(cosine3):
    u = 1.0 + 0.3 * np.cos(cosine3.mesh)
    assert yamabe_quotient(3.0 * u, cosine3) == pytest.approx(yamabe_quotient(u, cosine3), rel=1e-12)


def test_yamabe_of_zero_is_undefined(round3):
    with pytest.raises(DomainError):
        yamabe_quotient(np.zeros_like(round3.mesh), round3)


@pytest.mark.parametrize(
    "profile",
    [RadialProfile.cosine(0.3, 3), RadialProfile.cosine(-0.2, 4), RadialProfile.bump(1.2, 0.5, 0.2, 3)],
)
def test_ricci_trace_is_scalar_curvature(profile):
    theta = np.linspace(0.0, math.pi, 301)
    radial, tangential = ricci_eigenvalues(profile, theta)
    n = profile.dimension
    np.testing.assert_allclose(radial + (n - 1) * tangential, scalar_curvature(profile, theta), rtol=1e-10, atol=1e-10)
