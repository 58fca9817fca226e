"""
Tensor products M1 x M2 of jointly Gaussian random measures: mean and
covariance by quadrature against the covariance measures, and Monte Carlo
iterated integrals in both orders.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

import mc_stats
from gaussian import factorize
from kernels import PSI_FUNCTIONS
from measures import (
    Cells,
    Diagonal,
    Interval,
    Measure2D,
    SignedSum2D,
    intersect_arrays,
    make_measure,
    make_measure2d,
)
from riemann import Level, build_level, make_system
from utils import make_rng

logger = logging.getLogger(__name__)

UNIT = Interval(0.0, 1.0)
ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class TensorProductModel:
    c_m1: Measure2D
    c_m2: Measure2D
    c_m12: Measure2D
    d1: Interval = UNIT
    d2: Interval = UNIT
    name: str = "custom"


@dataclass(frozen=True)
class Psi:
    """A test function psi(t, s); indicator psi(t, s) = 1{s in [0, t]} or 1{s in [0, t)}."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    indicator: Optional[str] = None

    def __call__(self, t, s):
        return self.fn(t, s)


def _indicator(closed: bool):
    def fn(t, s):
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        return ((s < t) | (closed & (s == t))).astype(float)

    return fn


def make_psi(name: str) -> Psi:
    if name == "indicator_closed":
        return Psi(name, _indicator(True), "closed")
    if name == "indicator_open":
        return Psi(name, _indicator(False), "open")
    if name not in PSI_FUNCTIONS:
        raise ValueError(f"Unknown psi function: {name}")
    return Psi(name, PSI_FUNCTIONS[name])


def make_tensor_model(spec: Dict[str, Any]) -> TensorProductModel:
    """Builds a model from a preset name or explicit Measure2D descriptors."""
    d1 = Interval(*spec.get("d1", (0.0, 1.0)))
    d2 = Interval(*spec.get("d2", (0.0, 1.0)))
    preset = spec.get("preset")
    if preset == "white_noise_pair":
        wn = Diagonal()
        return TensorProductModel(wn, wn, wn, d1, d2, preset)
    if preset == "independent_wn":
        return TensorProductModel(Diagonal(), Diagonal(), SignedSum2D([]), d1, d2, preset)
    if preset == "orthogonal_self":
        nu = Diagonal(make_measure(spec.get("nu") or {"kind": "lebesgue"}))
        return TensorProductModel(nu, nu, nu, d1, d2, preset)
    if preset is not None:
        raise ValueError(f"Unknown tensor model preset: {preset}")
    return TensorProductModel(
        make_measure2d(spec["m1"]),
        make_measure2d(spec["m2"]),
        make_measure2d(spec["m12"]),
        d1,
        d2,
    )


def _uniform_cells(domain: Interval, n: int) -> Cells:
    return Cells.from_edges(
        np.linspace(domain.lo, domain.hi, n + 1), domain.closed_left, domain.closed_right
    )


def _midpoints(cells: Cells) -> np.ndarray:
    return (cells.lo + cells.hi) / 2


def _indicator_weights(
    psi: Psi, measure: Measure2D, cells_t: Cells, cells_s: Cells
) -> np.ndarray:
    """
    Integral of the indicator over each cell pair. Pairs whose projections
    overlap straddle the diagonal: the diagonal part counts for the closed
    indicator only, the off-diagonal rest counts half.
    """
    masses = measure.cell_matrix(cells_t, cells_s)
    t = [x[:, None] for x in cells_t.arrays()]
    s = [x[None, :] for x in cells_s.arrays()]
    lo, hi, cl, cr, straddle = intersect_arrays(*t, *s)
    below = ~straddle & (s[1] <= t[0])
    weights = np.where(below, masses, 0.0)
    for j, k in zip(*np.nonzero(straddle)):
        overlap = Interval(float(lo[j, k]), float(hi[j, k]), bool(cl[j, k]), bool(cr[j, k]))
        diagonal = measure.diagonal_mass(overlap)
        on_diagonal = diagonal if psi.indicator == "closed" else 0.0
        weights[j, k] = on_diagonal + 0.5 * (masses[j, k] - diagonal)
    return weights


def _weights(psi: Psi, measure: Measure2D, cells_t: Cells, cells_s: Cells) -> np.ndarray:
    if psi.indicator:
        return _indicator_weights(psi, measure, cells_t, cells_s)
    values = psi(_midpoints(cells_t)[:, None], _midpoints(cells_s)[None, :])
    return values * measure.cell_matrix(cells_t, cells_s)


def tensor_mean(model: TensorProductModel, psi: Psi, n: int) -> float:
    """Level-n quadrature of psi against the cross-covariance measure C_M12."""
    cells_t = _uniform_cells(model.d1, n)
    cells_s = _uniform_cells(model.d2, n)
    return math.fsum(_weights(psi, model.c_m12, cells_t, cells_s).ravel())


def tensor_cov(model: TensorProductModel, psi1: Psi, psi2: Psi, n: int) -> float:
    """
    Covariance of the integrals of psi1 and psi2 against M1 x M2. The two
    product measures are composed from box masses on demand:
    C_M1(A1 x A2) C_M2(B1 x B2) and C_M12(A1 x B2) C_M12(A2 x B1).
    """
    cells_t = _uniform_cells(model.d1, n)
    cells_s = _uniform_cells(model.d2, n)
    mid_t = _midpoints(cells_t)[:, None]
    mid_s = _midpoints(cells_s)[None, :]
    p1 = np.broadcast_to(psi1(mid_t, mid_s), (n, n))
    p2 = np.broadcast_to(psi2(mid_t, mid_s), (n, n))
    c1 = model.c_m1.cell_matrix(cells_t, cells_t)
    c2 = model.c_m2.cell_matrix(cells_s, cells_s)
    x = model.c_m12.cell_matrix(cells_t, cells_s)
    first = math.fsum((p1 * (c1 @ p2 @ c2.T)).ravel())
    second = math.fsum((p1 * (x @ p2.T @ x)).ravel())
    return first + second


def _fine_cells(domain: Interval, *point_sets: np.ndarray) -> Cells:
    """
    Partition of the domain isolating every breakpoint as a closed singleton
    [p, p], with open cells (p, q) between consecutive breakpoints, so atoms
    sitting on a tag can be included or excluded on their own.
    """
    points = np.concatenate([np.asarray(p, float) for p in point_sets])
    points = points[(points >= domain.lo) & (points <= domain.hi)]
    edges = [float(e) for e in np.unique(np.concatenate([[domain.lo, domain.hi], points]))]
    intervals = []
    for k, p in enumerate(edges):
        first, last = k == 0, k == len(edges) - 1
        if not (first and not domain.closed_left) and not (last and not domain.closed_right):
            intervals.append(Interval(p, p))
        if not last:
            intervals.append(Interval(p, edges[k + 1], False, False))
    return Cells.from_intervals(intervals)


def sample_cells(
    model: TensorProductModel,
    cells1: Cells,
    cells2: Cells,
    count: int,
    seed: int,
    block_size: int = 4096,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Joint draws of (M1 cell masses, M2 cell masses) in seeded blocks."""
    c1 = model.c_m1.cell_matrix(cells1, cells1)
    c2 = model.c_m2.cell_matrix(cells2, cells2)
    x = model.c_m12.cell_matrix(cells1, cells2)
    stacked = np.vstack([np.hstack([c1, x]), np.hstack([x.T, c2])])
    factor, _ = factorize((stacked + stacked.T) / 2, f"{model.name} tensor pair")
    n1 = len(cells1)
    for block, start in enumerate(range(0, count, block_size)):
        size = min(block_size, count - start)
        draws = make_rng(seed, block).standard_normal((size, len(factor))) @ factor.T
        yield draws[:, :n1], draws[:, n1:]


def _inner_weights(psi: Psi, tags: np.ndarray, fine: Cells, outer_first: bool) -> np.ndarray:
    """
    Weight of each fine cell in the inner integral at each outer tag.
    outer_first: the tag is t and the inner variable is s; otherwise the tag
    is s and the inner variable is t. Tags are fine-cell breakpoints.
    """
    if psi.indicator:
        t = tags[:, None]
        on_tag = (fine.lo[None, :] == t) & (fine.hi[None, :] == t)
        if outer_first:
            # s < t, plus s = t for the closed indicator
            strict = (fine.hi[None, :] < t) | ((fine.hi[None, :] == t) & ~on_tag)
        else:
            # t > s, plus t = s for the closed indicator
            strict = (fine.lo[None, :] > t) | ((fine.lo[None, :] == t) & ~on_tag)
        weights = strict | (on_tag & (psi.indicator == "closed"))
        return weights.astype(float)
    mid = _midpoints(fine)[None, :]
    if outer_first:
        return np.broadcast_to(psi(tags[:, None], mid), (len(tags), len(fine)))
    return np.broadcast_to(psi(mid, tags[:, None]), (len(tags), len(fine)))


class TensorRow(BaseModel):
    psi: str
    kind: str
    n: int
    order_a: Optional[float] = None
    order_b: Optional[float] = None
    analytic: Optional[float] = None
    se: Optional[float] = None
    samples: Optional[int] = None
    tags_a: Optional[str] = None
    tags_b: Optional[str] = None
    diff_ci: Optional[List[float]] = None
    within_ci: Optional[bool] = None


def _starts(fine: Cells, level: Level) -> np.ndarray:
    return np.searchsorted(fine.lo, level.cells.lo)


def fubini_mc_check(
    model: TensorProductModel,
    psi: Psi,
    n: int,
    samples: int,
    seed: int,
    tags_a: str = "midpoint",
    tags_b: str = "midpoint",
    block_size: int = 4096,
) -> TensorRow:
    """
    Order A integrates psi(t_j, s) dM2(s) at the tags t_j of the D1 cells and
    then sums against M1; order B integrates psi(t, s_k) dM1(t) at the tags
    s_k of the D2 cells and sums against M2.
    """
    level_t = build_level(make_system(model.d1, "uniform", tags_a, seed), n)
    level_s = build_level(make_system(model.d2, "uniform", tags_b, seed), n)
    fine_t = _fine_cells(model.d1, level_t.cells.lo, level_t.tags, level_s.tags)
    fine_s = _fine_cells(model.d2, level_s.cells.lo, level_s.tags, level_t.tags)
    w_a = _inner_weights(psi, level_t.tags, fine_s, outer_first=True)
    w_b = _inner_weights(psi, level_s.tags, fine_t, outer_first=False)
    starts_t = _starts(fine_t, level_t)
    starts_s = _starts(fine_s, level_s)

    order_a, order_b = [], []
    for m1, m2 in sample_cells(model, fine_t, fine_s, samples, seed, block_size):
        coarse1 = np.add.reduceat(m1, starts_t, axis=1)
        coarse2 = np.add.reduceat(m2, starts_s, axis=1)
        order_a.append(np.sum((m2 @ w_a.T) * coarse1, axis=1))
        order_b.append(np.sum((m1 @ w_b.T) * coarse2, axis=1))
    order_a = np.concatenate(order_a) if order_a else np.zeros(0)
    order_b = np.concatenate(order_b) if order_b else np.zeros(0)

    mean_a = mc_stats.sample_mean(order_a)
    mean_b = mc_stats.sample_mean(order_b)
    se = mc_stats.standard_error(order_a - order_b)
    analytic = tensor_mean(model, psi, n)
    slack = abs(analytic - tensor_mean(model, psi, max(n // 2, 1))) + ROUNDING_SLACK
    lo, hi = mc_stats.mean_diff_ci(order_a, order_b, z=3.0, paired=True)
    row = TensorRow(
        psi=psi.name,
        kind="fubini",
        n=n,
        order_a=mean_a,
        order_b=mean_b,
        analytic=analytic,
        se=se,
        samples=samples,
        tags_a=tags_a,
        tags_b=tags_b,
        diff_ci=[lo, hi],
        within_ci=lo - slack <= 0.0 <= hi + slack,
    )
    logger.info(
        f"Fubini {psi.name} ({tags_a}/{tags_b}): order A {mean_a:.5f}, "
        f"order B {mean_b:.5f}, se {se:.3g}"
    )
    return row
