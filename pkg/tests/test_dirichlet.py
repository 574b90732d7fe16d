import math

import numpy as np
import pytest

from app.core.errors import DomainError
from app.models.schemas import BallSpec, BoxSpec, Convention, Spectrum
from app.services.dirichlet_service import (
    ball_ratio,
    ball_spectrum,
    degeneration_experiment,
    disjoint_union_spectrum,
    rectangle_spectrum,
    weyl_count,
)
from app.services.sphere_service import round_spectrum

J01 = 2.404825557695773
J11 = 3.831705970207512
J32 = 4.493409457909064
PI2 = math.pi**2


def _pairs(spectrum):
    return [(e.value, e.multiplicity) for e in spectrum.entries]


# ---------- rectangles ----------

def test_unit_square():
    spec = rectangle_spectrum(BoxSpec(sides=[1.0, 1.0]), 3)
    assert spec.convention == Convention.DIRICHLET
    values = [e.value for e in spec.entries]
    assert [e.multiplicity for e in spec.entries][:2] == [1, 2]
    np.testing.assert_allclose(values[:2], [2 * PI2, 5 * PI2], rtol=1e-14)


def test_unit_cube_and_long_rectangle():
    assert rectangle_spectrum(BoxSpec(sides=[1.0, 1.0, 1.0]), 1).eigenvalue(1) == pytest.approx(3 * PI2, rel=1e-14)
    assert rectangle_spectrum(BoxSpec(sides=[1.0, 2.0]), 1).eigenvalue(1) == pytest.approx(1.25 * PI2, rel=1e-14)


def test_rectangle_count_is_reached_with_multiplicity():
    spec = rectangle_spectrum(BoxSpec(sides=[1.0, 1.0]), 30)
    assert spec.total_multiplicity >= 30
    flat = spec.flatten()
    assert np.all(np.diff(flat) >= 0)


def test_rectangle_agrees_with_weyl_law():
    box = BoxSpec(sides=[1.0, 1.0])
    level = 200 * PI2
    spec = rectangle_spectrum(box, 200)
    assert spec.flatten()[-1] > level
    assert spec.counting_function(level) == pytest.approx(weyl_count(box, level), rel=0.2)


def test_box_sides_must_be_positive():
    with pytest.raises(ValueError):
        BoxSpec(sides=[1.0, 0.0])


def test_rectangle_count_must_be_positive():
    with pytest.raises(DomainError):
        rectangle_spectrum(BoxSpec(sides=[1.0, 1.0]), 0)


# ---------- balls ----------

def test_unit_disk():
    flat = ball_spectrum(BallSpec(dimension=2), 3).flatten()
    np.testing.assert_allclose(flat[:3], [J01**2, J11**2, J11**2], rtol=1e-12)


def test_unit_ball_in_three_dimensions():
    spec = ball_spectrum(BallSpec(dimension=3), 4)
    assert spec.eigenvalue(1) == pytest.approx(PI2, rel=1e-12)
    assert _pairs(spec)[1][1] == 3
    assert spec.eigenvalue(2) == pytest.approx(J32**2, rel=1e-12)


def test_ball_radius_scaling():
    unit = ball_spectrum(BallSpec(dimension=3), 20).flatten()
    big = ball_spectrum(BallSpec(dimension=3, radius=2.0), 20).flatten()
    np.testing.assert_allclose(big, unit / 4.0, rtol=1e-14)


def test_ball_dimension_limit():
    with pytest.raises(DomainError):
        ball_spectrum(BallSpec(dimension=9), 3)


def test_ball_ratio():
    assert ball_ratio(2) == pytest.approx((J11 / J01) ** 2, rel=1e-12)
    assert ball_ratio(3) == pytest.approx((J32 / math.pi) ** 2, rel=1e-12)


# ---------- unions ----------

def test_union_of_two_disks_doubles_multiplicities():
    disk = ball_spectrum(BallSpec(dimension=2), 3)
    union = disjoint_union_spectrum([disk, disk])
    assert union.flatten()[:6].tolist() == pytest.approx([J01**2] * 2 + [J11**2] * 4, rel=1e-12)
    assert union.total_multiplicity == 2 * disk.total_multiplicity


def test_union_merges_mixed_domains():
    square = rectangle_spectrum(BoxSpec(sides=[1.0, 1.0]), 3)
    disk = ball_spectrum(BallSpec(dimension=2), 3)
    flat = disjoint_union_spectrum([square, disk]).flatten()
    np.testing.assert_allclose(flat, np.sort(np.concatenate([square.flatten(), disk.flatten()])), rtol=1e-14)


def test_union_errors():
    disk = ball_spectrum(BallSpec(dimension=2), 3)
    with pytest.raises(DomainError):
        disjoint_union_spectrum([])
    with pytest.raises(DomainError):
        disjoint_union_spectrum([disk, round_spectrum(2, 2)])
    with pytest.raises(DomainError):
        disjoint_union_spectrum([disk, ball_spectrum(BallSpec(dimension=3), 3)])


@pytest.mark.parametrize("k", [2, 3, 4])
def test_union_of_identical_balls_ratio(k):
    ball = ball_spectrum(BallSpec(dimension=3), 4)
    union = disjoint_union_spectrum([ball] * k)
    assert union.eigenvalue(k + 1) / union.eigenvalue(k) == pytest.approx(ball_ratio(3), rel=1e-14)


# ---------- degeneration ----------

@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_degeneration_in_the_plane(k):
    sharp, thompson = degeneration_experiment(k, 2)
    assert sharp.lhs == pytest.approx((J11 / J01) ** 2, rel=1e-12)
    assert sharp.satisfied and sharp.near_equality
    assert thompson.satisfied and thompson.rhs == 3.0
    assert sharp.k == k and sharp.inputs["balls"] == k


def test_degeneration_in_three_dimensions():
    sharp, thompson = degeneration_experiment(2, 3)
    assert sharp.lhs == pytest.approx((J32 / math.pi) ** 2, rel=1e-12)
    assert sharp.lhs < 1 + 4 / 3
    assert thompson.satisfied


def test_degeneration_needs_two_balls():
    with pytest.raises(DomainError):
        degeneration_experiment(1, 2)


def test_degeneration_with_explicit_count():
    sharp, _ = degeneration_experiment(3, 2, count=20)
    assert sharp.lhs == pytest.approx(ball_ratio(2), rel=1e-14)


def test_dirichlet_spectrum_rejects_leading_zero():
    with pytest.raises(ValueError):
        Spectrum.from_values([0.0, 1.0], Convention.DIRICHLET, 2)
