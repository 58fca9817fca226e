import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from measures import (
    Atomic,
    Cells,
    Density2D,
    Diagonal,
    IncrementOfSurface,
    Interval,
    InvalidIntervalError,
    Lebesgue,
    Measure1D,
    Measure2D,
    SignedSum,
    SignedSum2D,
    Tensor,
    abs_power_density,
    diagonal_mass,
    fbm_covariance,
    integrate_measure,
    integrate_riemann,
    make_measure,
    make_measure2d,
    mass,
    mass2d,
    total_variation2d,
    total_variation_estimate,
)
from riemann import make_system

dyadic_points = st.integers(min_value=1, max_value=63).map(lambda k: k / 64)


def test_interval_rejects_bad_endpoints():
    with pytest.raises(InvalidIntervalError):
        Interval(1.0, 0.0)
    with pytest.raises(InvalidIntervalError):
        Interval(0.0, math.inf)


def test_interval_membership_follows_flags():
    half_open = Interval(0.0, 1.0, True, False)
    assert half_open.contains(0.0)
    assert not half_open.contains(1.0)
    assert Interval(0.5, 0.5).contains(0.5)
    assert Interval(0.5, 0.5, True, False).is_empty


def test_split_gives_half_open_left_piece(unit):
    left, right = unit.split(0.25)
    assert (left.lo, left.hi, left.closed_right) == (0.0, 0.25, False)
    assert (right.lo, right.hi, right.closed_left) == (0.25, 1.0, True)
    with pytest.raises(InvalidIntervalError):
        unit.split(2.0)


def test_cells_from_edges_are_half_open():
    cells = Cells.from_edges(np.array([0.0, 0.5, 1.0]))
    assert cells.closed_left.tolist() == [True, True]
    assert cells.closed_right.tolist() == [False, True]
    assert [c.as_list() for c in cells] == [[0.0, 0.5], [0.5, 1.0]]


def test_atoms_respect_endpoint_flags():
    mu = Atomic([(0.5, 2.0)])
    assert mu.mass(Interval(0.0, 0.5)) == 2.0
    assert mu.mass(Interval(0.0, 0.5, True, False)) == 0.0
    assert mu.mass(Interval(0.5, 0.5)) == 2.0


@given(dyadic_points)
def test_atomic_mass_is_additive_bit_exact(c):
    mu = Atomic([(0.125, 0.5), (0.5, 0.25), (0.75, 1.0), (1.0, -0.25)])
    whole = Interval(0.0, 1.0)
    left, right = whole.split(c)
    assert mu.mass(left) + mu.mass(right) == mu.mass(whole)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_lebesgue_mass_is_additive(c):
    left, right = Interval(0.0, 1.0).split(c)
    assert mass(Lebesgue(), left) + mass(Lebesgue(), right) == pytest.approx(1.0, abs=1e-15)


def test_abs_power_density_mass():
    mu = abs_power_density(0.0, 0.125)
    assert mu.mass(Interval(-1.0, 1.0)) == pytest.approx(16 / 7, abs=1e-12)
    with pytest.raises(ValueError):
        abs_power_density(0.0, 1.0)


def test_total_variation_of_sine_density(unit):
    mu = make_measure({"kind": "density", "f": "sin_2pi"})
    estimates = [total_variation_estimate(mu, unit, depth) for depth in range(0, 5)]
    assert estimates[0] == pytest.approx(0.0, abs=1e-9)
    for value in estimates[1:]:
        assert value == pytest.approx(2 / math.pi, abs=1e-8)
    assert all(b >= a - 1e-9 for a, b in zip(estimates[:-1], estimates[1:]))


def test_signed_sum_adds_components(unit):
    mu = SignedSum([Lebesgue(2.0), Atomic([(0.5, -1.0)])])
    assert mu.mass(unit) == pytest.approx(1.0)
    assert mu.atoms() == [(0.5, -1.0)]


def test_make_measure_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_measure({"kind": "cantor"})
    with pytest.raises(ValueError):
        make_measure({"kind": "density", "f": "nope"})


def test_integrate_riemann_matches_reference(unit):
    system = make_system(unit, "uniform", "midpoint")
    reference = integrate_measure(Lebesgue(), lambda u: u * u, unit)
    approx = integrate_riemann(Lebesgue(), lambda u: u * u, unit, system, 256)
    assert reference == pytest.approx(1 / 3, abs=1e-10)
    assert approx == pytest.approx(reference, abs=1e-5)


def test_fbm_increment_measure_of_unit_square(unit):
    measure = IncrementOfSurface(fbm_covariance(0.75))
    assert mass2d(measure, unit, unit) == pytest.approx(1.0, abs=1e-14)


def test_diagonal_measure_on_cells():
    cells = Cells.from_edges(np.linspace(0.0, 1.0, 5))
    matrix = Diagonal().cell_matrix(cells, cells)
    np.testing.assert_allclose(matrix, np.diag(np.full(4, 0.25)))
    assert diagonal_mass(Diagonal(), Interval(0.0, 0.5)) == 0.5


def test_tensor_diagonal_mass_counts_shared_atoms(unit):
    measure = Tensor(Atomic([(0.5, 2.0), (0.25, 1.0)]), Atomic([(0.5, 3.0)]))
    assert measure.diagonal_mass(unit) == 6.0
    assert Tensor(Lebesgue(), Lebesgue()).diagonal_mass(unit) == 0.0


def test_density2d_quadrature_agrees_with_dblquad(unit):
    measure = Density2D(lambda u, v: u * v)
    cells = Cells.from_intervals([unit])
    assert measure.cell_matrix(cells, cells)[0, 0] == pytest.approx(0.25, abs=1e-12)
    assert measure.mass(unit, unit) == pytest.approx(0.25, abs=1e-10)


def test_total_variation2d_of_signed_sum(unit):
    measure = SignedSum2D([Diagonal(), Tensor(Lebesgue(-1.0), Lebesgue())])
    # the two parts cancel on the coarse box
    coarse = total_variation2d(measure, unit, unit, 0)
    fine = total_variation2d(measure, unit, unit, 4)
    assert coarse == pytest.approx(0.0, abs=1e-14)
    assert fine > coarse


def test_make_measure2d_kinds(unit):
    assert make_measure2d({"kind": "zero"}).mass(unit, unit) == 0.0
    assert make_measure2d({"kind": "diagonal"}).mass(unit, unit) == 1.0
    fbm_increment = make_measure2d({"kind": "fbm_increment", "H": 0.75})
    assert fbm_increment.mass(unit, unit) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_measure2d({"kind": "nope"})


def test_measure_bases_are_abstract():
    with pytest.raises(TypeError):
        Measure1D()
    with pytest.raises(TypeError):
        Measure2D()
