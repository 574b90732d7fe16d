import math

import numpy as np
import pytest

from app.core.config import get_settings
from app.core.errors import DomainError, NumericalFailure
from app.services.basis_service import GridFunction, build_eigen_basis
from app.services.pipeline_service import (
    ADMISSIBILITY_TOL,
    PipelineService,
    admissibility_defect,
    assemble_bilinear_form,
    check_embedding,
    conformal_energy,
    density_measure,
    evaluate_field_F,
    field_evaluation,
    find_vanishing_point,
    gap_certificate,
    lipschitz_probe,
    product_rule_residual,
    trial_frame,
)
from app.services.sphere_service import geometric_constants

W3 = 2 * math.pi**2


def _random_point(rng, size):
    p = rng.normal(size=size)
    return p / np.linalg.norm(p)


# ---------- density measure / field ----------

def test_constant_density_is_uniform(round3_basis):
    mu = density_measure(np.array([1.0, 0.0, 0.0]), round3_basis)
    assert mu.total_mass == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(mu.weights, round3_basis.grid.volume_weights / W3, rtol=1e-7)


def test_density_mass_is_one_for_any_point(round3_wide_basis, rng):
    for _ in range(5):
        mu = density_measure(_random_point(rng, 9), round3_wide_basis)
        assert mu.total_mass == pytest.approx(1.0, abs=1e-8)
        assert np.all(mu.weights >= 0)


def test_density_rejects_off_sphere_point(round3_basis):
    with pytest.raises(DomainError):
        density_measure(np.array([1.0, 1.0, 0.0]), round3_basis)


def test_field_is_tangent(round3_wide_basis, rng):
    for _ in range(5):
        p = _random_point(rng, 9)
        assert abs(evaluate_field_F(p, round3_wide_basis) @ p) <= 1e-10


def test_field_is_tangent_on_conformal_metric(cosine3, rng):
    basis = build_eigen_basis(cosine3, 3)
    p = _random_point(rng, 3)
    assert abs(evaluate_field_F(p, basis) @ p) <= 1e-10


def test_field_at_constant_function(round3_wide_basis):
    p = np.zeros(9)
    p[0] = 1.0
    ev = field_evaluation(p, round3_wide_basis)
    assert ev.xi.norm <= 1e-10
    # h = (x_1 + ... + x_4) f_0 is orthogonal to the constant and to degree-2 harmonics
    even = [0, 5, 6, 7, 8]
    np.testing.assert_allclose(ev.value[even], 0.0, atol=1e-7)
    assert np.linalg.norm(ev.value) > 0.1


def test_lipschitz_probe_is_finite(round3_basis):
    bound = lipschitz_probe(round3_basis, pairs=4, seed=3)
    assert 0.0 < bound < 1e3


# ---------- embeddings ----------

def test_embedding_shape_and_orthonormality():
    assert check_embedding(None, 3) is None
    Q = np.eye(5)[:, :4]
    np.testing.assert_array_equal(check_embedding(Q, 3), Q)
    with pytest.raises(DomainError):
        check_embedding(np.eye(4)[:, :3], 3)
    with pytest.raises(DomainError):
        check_embedding(2.0 * Q, 3)


def test_embedded_density_lives_in_larger_sphere(round3_basis):
    Q = np.eye(5)[:, :4]
    mu = density_measure(np.array([0.0, 1.0, 0.0]), round3_basis, Q)
    assert mu.ambient_dim == 5
    np.testing.assert_allclose(mu.points[:, 4], 0.0)


# ---------- bilinear form ----------

def test_form_at_origin_is_scalar_on_round_sphere(round3_wide_basis):
    basis = round3_wide_basis
    q = np.zeros(9)
    q[0] = 1.0
    form = assemble_bilinear_form(q, np.zeros(4), basis)
    # lambda_{2k+1} int X_a X_b f_0^2 - int <grad X_a, grad X_b> f_0^2 = (lambda_{2k+1} - 3)/4 delta_ab
    np.testing.assert_allclose(form.matrix, (basis.next_eigenvalue - 3.0) / 4.0 * np.eye(4), atol=1e-7)
    assert form.asymmetry <= 1e-10
    assert form.offdiag_max <= 1e-9


def test_form_rotation_diagonalizes(round3_wide_basis, rng):
    basis = round3_wide_basis
    q = _random_point(rng, 9)
    ev = field_evaluation(q, basis)
    form = assemble_bilinear_form(q, ev.xi, basis)
    assert form.asymmetry <= 1e-10 * max(1.0, np.abs(form.matrix).max())
    R = form.rotated()
    off = R - np.diag(np.diag(R))
    assert np.abs(off).max() <= 1e-9 * np.abs(form.matrix).max()
    np.testing.assert_allclose(form.eigenvectors.T @ form.eigenvectors, np.eye(4), atol=1e-12)


def test_frame_of_scalar_form_sums_to_ones():
    vals, frame = trial_frame(2.5 * np.eye(4))
    np.testing.assert_allclose(vals, 2.5)
    np.testing.assert_allclose(frame.T @ frame, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(frame.sum(axis=1), np.ones(4), atol=1e-12)


def test_frame_of_simple_spectrum_points_towards_ones(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    G = Q @ np.diag([-2.0, -0.5, 1.0, 3.0]) @ Q.T
    vals, frame = trial_frame(G)
    np.testing.assert_allclose(vals, [-2.0, -0.5, 1.0, 3.0], atol=1e-12)
    R = frame.T @ G @ frame
    np.testing.assert_allclose(R, np.diag(vals), atol=1e-12)
    assert np.all(frame.T @ np.ones(4) >= 0)


def test_frame_inside_degenerate_cluster(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    G = Q @ np.diag([1.0, 4.0, 4.0, 4.0]) @ Q.T
    _, frame = trial_frame(G)
    np.testing.assert_allclose(frame.T @ frame, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(frame.T @ G @ frame, np.diag([1.0, 4.0, 4.0, 4.0]), atol=1e-11)
    # the cluster part of the column sum is the projection of 1, rescaled to length sqrt(3)
    P = Q[:, 1:] @ Q[:, 1:].T
    part = frame[:, 1:].sum(axis=1)
    target = P @ np.ones(4)
    np.testing.assert_allclose(part, math.sqrt(3) * target / np.linalg.norm(target), atol=1e-10)


def test_form_rejects_wrong_xi(round3_basis):
    with pytest.raises(DomainError):
        assemble_bilinear_form(np.array([1.0, 0.0, 0.0]), np.zeros(3), round3_basis)


# ---------- identities ----------

BASES = ["round3_wide_basis", "cosine3_wide_basis"]


@pytest.mark.parametrize("name", BASES)
def test_product_rule_with_unit_multiplier(name, request, rng):
    basis = request.getfixturevalue(name)
    one = GridFunction(np.ones(basis.grid.size), np.zeros((basis.grid.size, 4)))
    for _ in range(5):
        u = basis.combine(rng.normal(size=9))
        assert product_rule_residual(u, one, basis.grid) <= 1e-10


def test_product_rule_with_constant_function(round3_wide_basis, rng):
    basis = round3_wide_basis
    coeffs = np.zeros(9)
    coeffs[0] = 2.0
    u = basis.combine(coeffs)
    v = basis.combine(rng.normal(size=9))
    assert product_rule_residual(u, v, basis.grid) <= 1e-10


@pytest.mark.parametrize("name", BASES)
def test_product_rule_for_band_limited_pairs(name, request):
    basis = request.getfixturevalue(name)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        u = basis.combine(rng.normal(size=9))
        v = basis.combine(rng.normal(size=9))
        worst = max(worst, product_rule_residual(u, v, basis.grid))
    assert worst <= 1e-6


def test_basis_laplacian_matches_energy(cosine3_wide_basis):
    # int f_i Delta f_j = int <grad f_i, grad f_j> on the grid
    basis = cosine3_wide_basis
    w = basis.grid
    weak = basis.values @ (w.volume_weights[:, None] * basis.laplacians.T)
    energy = np.einsum("n,ind,jnd->ij", w.gradient_weights, basis.grads, basis.grads)
    np.testing.assert_allclose(weak, energy, atol=1e-10 * np.abs(energy).max())


def test_product_rule_needs_laplacian(round3_basis):
    grid = round3_basis.grid
    u = GridFunction(np.ones(grid.size), np.zeros((grid.size, 4)))
    with pytest.raises(DomainError):
        product_rule_residual(u, u, grid)


def test_conformal_energy_at_origin():
    expected = 3 * W3 ** (2 / 3)
    assert conformal_energy(np.zeros(4), 3) == pytest.approx(expected, rel=1e-12)


def test_conformal_energy_is_moebius_invariant():
    xi = np.array([0.5, 0.0, 0.0, 0.0])
    assert conformal_energy(xi, 3) == pytest.approx(3 * W3 ** (2 / 3), rel=1e-4)


def test_conformal_energy_converges_with_grid():
    xi = np.array([0.7, 0.0, 0.0, 0.0])
    exact = 3 * W3 ** (2 / 3)
    errors = [abs(conformal_energy(xi, 3, theta_points=m, fibre_degree=7) - exact) for m in (8, 16, 32)]
    assert errors[0] > errors[1] > errors[2]


def test_conformal_energy_radius_limit():
    with pytest.raises(DomainError):
        conformal_energy(np.array([0.95, 0.0, 0.0, 0.0]), 3)


# ---------- full chain ----------

@pytest.mark.slow
def test_vanishing_point_on_round_s3(round3_basis):
    trial = find_vanishing_point(round3_basis)
    assert trial.field_norm <= get_settings().zero_tol
    assert trial.tangency <= 1e-12
    assert float(trial.q @ trial.q) == pytest.approx(1.0, abs=1e-12)
    assert trial.offdiag_max <= 1e-9


@pytest.mark.slow
def test_round_s3_gap_certificate(round3):
    trial = gap_certificate(1, round3)
    assert trial.gap_lhs == pytest.approx(0.0, abs=1e-9)
    assert trial.certificate > 0
    consts = geometric_constants(3)
    assert trial.hebey_bound == pytest.approx(3 * W3 ** (2 / 3) * (3 * consts.K2 + 6 / (6 * W3 ** (2 / 3))), rel=1e-6)
    assert all(not r.violated for r in trial.reports)
    assert set(trial.links) >= {"gap<=certificate", "energy<=holder", "certificate<=hebey"}
    assert set(trial.stages) == {"eigen_basis", "zero_search", "certificate"}


@pytest.mark.slow
def test_cosine_gap_certificate(cosine3):
    trial = gap_certificate(1, cosine3)
    assert trial.gap_lhs <= trial.certificate + 1e-6 * (1 + abs(trial.certificate))
    assert trial.certificate <= trial.hebey_bound + 1e-6 * (1 + abs(trial.hebey_bound))
    report = trial.to_report()
    assert report.k == 1 and len(report.q) == 3 and len(report.xi) == 4


@pytest.mark.slow
def test_vc_override_drops_hebey_link(round3):
    trial = PipelineService().certify(1, round3, Vc=2 * W3)
    assert trial.hebey_bound is None
    assert "certificate<=hebey" not in trial.links


def test_certify_rejects_bad_arguments(round3):
    service = PipelineService()
    with pytest.raises(DomainError):
        service.certify(0, round3)
    with pytest.raises(DomainError):
        service.certify(6, round3)
    with pytest.raises(DomainError):
        service.certify(1, round3, Vc=-1.0)


def test_vanishing_point_needs_odd_basis(round3_wide_basis):
    basis = build_eigen_basis(round3_wide_basis.metric, 4)
    with pytest.raises(DomainError):
        find_vanishing_point(basis)


@pytest.mark.slow
def test_certificate_through_larger_sphere(round3):
    Q = np.eye(5)[:, :4]
    trial = PipelineService().certify(1, round3, embedding=Q)
    assert trial.hebey_bound is None
    assert trial.gap_lhs <= trial.certificate + 1e-6 * (1 + abs(trial.certificate))
    assert trial.xi.dim == 5


@pytest.mark.slow
@pytest.mark.parametrize("metric", ["round3", "cosine3"])
def test_rotated_trial_function_is_admissible(metric, request):
    trial = gap_certificate(1, request.getfixturevalue(metric))
    assert trial.admissibility_defect <= ADMISSIBILITY_TOL
    w = trial.eigvecs.sum(axis=1)
    assert float(w @ w) == pytest.approx(4.0, rel=1e-12)


@pytest.mark.slow
def test_inadmissible_trial_function_fails(round3, monkeypatch):
    monkeypatch.setattr("app.services.pipeline_service.admissibility_defect", lambda *args, **kwargs: 1e-3)
    with pytest.raises(NumericalFailure) as exc:
        PipelineService().certify(1, round3)
    assert exc.value.residual_norm == 1e-3
    assert exc.value.exit_code == 2


@pytest.mark.slow
def test_cosine_pipeline_at_k2(cosine3):
    trial = gap_certificate(2, cosine3)
    assert trial.tangency <= 1e-10
    assert trial.offdiag_max <= 1e-9
    assert trial.admissibility_defect <= ADMISSIBILITY_TOL
    assert trial.gap_lhs <= trial.certificate + 1e-6 * (1 + abs(trial.certificate))
    assert trial.certificate <= trial.hebey_bound + 1e-6 * (1 + abs(trial.hebey_bound))
    assert len(trial.q) == 5


def test_defect_of_constant_function_at_origin(round3_wide_basis):
    basis = round3_wide_basis
    q = np.zeros(9)
    q[0] = 1.0
    form = assemble_bilinear_form(q, np.zeros(4), basis)
    u = basis.combine(q)
    # sum_i x_i is orthogonal to constants but pairs with the first harmonics
    defect = admissibility_defect(form, np.zeros(4), basis, u)
    np.testing.assert_allclose(form.eigenvectors.sum(axis=1), np.ones(4), atol=1e-9)
    assert defect == pytest.approx(np.max(np.abs(field_evaluation(q, basis).value)), rel=1e-6)
