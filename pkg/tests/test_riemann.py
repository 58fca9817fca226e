import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from json_store import load_csv_rows
from kernels import POINT_FUNCTIONS, make_kernel, second_order, tensor
from measures import Interval, Lebesgue
from riemann import (
    RANDOM_FLOOR,
    PartitionError,
    PartitionScheme,
    TagRule,
    build_level,
    common_refinement,
    default_ensemble,
    double_riemann_sum,
    export_level_csv,
    kernel_riemann_sum,
    levels_between,
    make_system,
    merge_systems,
)

ACCEPTANCE_LEVELS = levels_between(4, 2**14)
TAG_RULES = ["left", "right", "midpoint", "random", "near_right"]


def test_levels_between_doubles():
    assert levels_between(4, 32) == [4, 8, 16, 32]
    assert levels_between(4, 40) == [4, 8, 16, 32]
    with pytest.raises(PartitionError):
        levels_between(8, 4)


def test_unknown_scheme_and_tag_rule_rejected():
    with pytest.raises(PartitionError):
        PartitionScheme("chebyshev")
    with pytest.raises(PartitionError):
        TagRule("centre")


def test_bad_levels_rejected(unit):
    with pytest.raises(PartitionError):
        build_level(make_system(unit), 0)
    with pytest.raises(PartitionError):
        build_level(make_system(Interval(0.5, 0.5)), 4)
    with pytest.raises(PartitionError):
        build_level(make_system(Interval(0.0, 1e-6), "adversarial_geometric"), 2)


def test_uniform_left_level(unit):
    level = build_level(make_system(unit, "uniform", "left"), 8)
    assert len(level) == 8
    np.testing.assert_array_equal(level.tags, level.cells.lo)
    assert level.max_length == 0.125


def test_dyadic_rounds_up_to_power_of_two(unit):
    assert len(build_level(make_system(unit, "dyadic"), 5)) == 8
    assert len(build_level(make_system(unit, "dyadic"), 8)) == 8


@given(st.integers(min_value=1, max_value=500), st.integers(min_value=0, max_value=2**32))
def test_random_partition_covers_domain_with_floor(n, seed):
    domain = Interval(-1.0, 3.0)
    level = build_level(make_system(domain, "random", "random", seed), n)
    assert level.cells.lo[0] == domain.lo
    assert level.cells.hi[-1] == domain.hi
    np.testing.assert_array_equal(level.cells.hi[:-1], level.cells.lo[1:])
    assert np.all(level.cells.lengths >= RANDOM_FLOOR * domain.length / n * (1 - 1e-9))
    assert np.all((level.tags >= level.cells.lo) & (level.tags <= level.cells.hi))


def test_random_partition_is_reproducible(unit):
    first = build_level(make_system(unit, "random", "random", 7), 64)
    second = build_level(make_system(unit, "random", "random", 7), 64)
    other = build_level(make_system(unit, "random", "random", 8), 64)
    np.testing.assert_array_equal(first.cells.lo, second.cells.lo)
    np.testing.assert_array_equal(first.tags, second.tags)
    assert not np.array_equal(first.cells.lo, other.cells.lo)


def test_right_tags_stay_inside_half_open_cells(unit):
    level = build_level(make_system(unit, "uniform", "right"), 16)
    assert np.all(level.tags[:-1] < level.cells.hi[:-1])
    assert level.tags[-1] == 1.0


def test_near_right_tags(unit):
    level = build_level(make_system(unit, "uniform", "near_right", eps_power=2.0), 16)
    np.testing.assert_allclose(level.tags, level.cells.hi - 1 / 256)


@pytest.mark.parametrize("n", ACCEPTANCE_LEVELS)
def test_brownian_left_and_midpoint_sums_are_exact(brownian_kernel, unit, n):
    left = build_level(make_system(unit, "uniform", "left"), n)
    mid = build_level(make_system(unit, "uniform", "midpoint"), n)
    assert kernel_riemann_sum(brownian_kernel, left) == 0.0
    assert kernel_riemann_sum(brownian_kernel, mid) == 0.5


@pytest.mark.parametrize("n", ACCEPTANCE_LEVELS)
def test_orthogonal_left_zero_and_near_right_close_to_one(unit, n):
    kernel = make_kernel({"name": "orthogonal", "params": {"nu": {"kind": "lebesgue"}}})
    left = build_level(make_system(unit, "uniform", "left"), n)
    near_right = build_level(make_system(unit, "uniform", "near_right"), n)
    assert kernel_riemann_sum(kernel, left) == 0.0
    assert kernel_riemann_sum(kernel, near_right) >= 1 - 1 / n - 1e-12


@pytest.mark.parametrize("tags", TAG_RULES)
def test_singular_sums_grow_for_every_tag_rule(singular_kernel, tags):
    system = make_system(Interval(-1.0, 1.0), "uniform", tags, seed=5)
    for n in levels_between(2**4, 2**14):
        total = kernel_riemann_sum(singular_kernel, build_level(system, n))
        assert total >= (8 / 7) * n**0.125


def test_singular_uniform_left_closed_form(singular_kernel):
    system = make_system(Interval(-1.0, 1.0), "uniform", "left")
    for n in (16, 256, 4096):
        total = kernel_riemann_sum(singular_kernel, build_level(system, n))
        assert total == pytest.approx((8 / 7) * 2**0.875 * n**0.125, rel=1e-9)


@pytest.mark.parametrize("tags", ["left", "midpoint"])
def test_adversarial_sums_stay_bounded(singular_kernel, tags):
    system = make_system(Interval(-1.0, 1.0), "adversarial_geometric", tags)
    sums = [
        kernel_riemann_sum(singular_kernel, build_level(system, n))
        for n in levels_between(2**4, 2**14)
    ]
    assert max(sums) <= 16 / 7 + 0.1


def test_merge_rejects_overlap_gap_and_missing_point():
    def system(lo, hi, cl=True, cr=True):
        return make_system(Interval(lo, hi, cl, cr))

    with pytest.raises(PartitionError):
        merge_systems(system(0.0, 0.6), system(0.5, 1.0))
    with pytest.raises(PartitionError):
        merge_systems(system(0.0, 0.4), system(0.5, 1.0))
    with pytest.raises(PartitionError):
        merge_systems(system(0.0, 0.5, cr=False), system(0.5, 1.0, cl=False))


@given(st.integers(min_value=1, max_value=63), st.integers(min_value=1, max_value=200))
def test_merged_sum_is_additive_bit_exact(k, n):
    kernel = make_kernel({"name": "fbm", "params": {"H": 0.75}})
    left, right = Interval(0.0, 1.0).split(k / 64)
    system_a = make_system(left, "uniform", "midpoint")
    system_b = make_system(right, "random", "random", seed=3)
    merged = merge_systems(system_a, system_b)
    assert merged.system_id == "uniform/midpoint+random/random"
    whole = kernel_riemann_sum(kernel, build_level(merged, n))
    parts = kernel_riemann_sum(kernel, build_level(system_a, n)) + kernel_riemann_sum(
        kernel, build_level(system_b, n)
    )
    assert whole == parts


def test_merge_opens_closed_junction(unit):
    system_a = make_system(Interval(0.0, 0.5), "uniform", "right")
    system_b = make_system(Interval(0.5, 1.0), "uniform", "right")
    level = build_level(merge_systems(system_a, system_b), 4)
    assert len(level) == 8
    assert level.segments == (0, 4)
    assert not level.cells.closed_right[3]
    assert level.tags[3] < 0.5
    assert level.cells.closed_right[-1]


def test_double_sum_of_tensor_kernel(unit):
    k2 = second_order(tensor(POINT_FUNCTIONS["one"], Lebesgue()))
    level_a = build_level(make_system(unit, "uniform", "left"), 16)
    level_b = build_level(make_system(unit, "random", "midpoint", 2), 32)
    assert double_riemann_sum(k2, level_a, level_b) == pytest.approx(1.0, abs=1e-12)


def test_brownian_double_sum_vanishes_for_left_tags(brownian_kernel, unit):
    level = build_level(make_system(unit, "uniform", "left"), 64)
    assert double_riemann_sum(second_order(brownian_kernel), level, level) == 0.0


def test_common_refinement_merges_boundaries_and_tags(unit):
    left = build_level(make_system(unit, "uniform", "left"), 4)
    mid = build_level(make_system(unit, "uniform", "midpoint"), 4)
    np.testing.assert_array_equal(common_refinement([left, mid]), np.arange(9) / 8)


def test_export_level_csv(tmp_path, unit):
    level = build_level(make_system(unit, "uniform", "midpoint"), 4)
    path = tmp_path / "level.csv"
    export_level_csv(level, path)
    rows = load_csv_rows(path)
    assert list(rows[0]) == ["lo", "hi", "tag"]
    assert [float(r["tag"]) for r in rows] == [0.125, 0.375, 0.625, 0.875]


def test_default_ensemble_has_twelve_systems(unit):
    ensemble = default_ensemble(unit)
    assert len(ensemble) == 12
    assert len({s.system_id for s in ensemble}) == 12
