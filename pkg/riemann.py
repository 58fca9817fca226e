"""
Riemann systems: partition schemes, tag rules and the kernel sums over them.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from path import Path

from json_store import save_csv_rows
from kernels import KernelHandle, SecondOrderKernel
from measures import Cells, Interval
from utils import make_rng

logger = logging.getLogger(__name__)

SCHEMES = ("uniform", "dyadic", "random", "adversarial_geometric")
TAG_RULES = ("left", "right", "midpoint", "random", "near_right")

RANDOM_FLOOR = 0.1


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionScheme:
    kind: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise PartitionError(f"Unknown partition scheme: {self.kind}")


@dataclass(frozen=True)
class TagRule:
    kind: str = "left"
    seed: int = 0
    # near_right: eps_n = (max cell length) ** eps_power
    eps_power: float = 2.0

    def __post_init__(self):
        if self.kind not in TAG_RULES:
            raise PartitionError(f"Unknown tag rule: {self.kind}")


@dataclass(frozen=True)
class RiemannSystem:
    domain: Interval
    scheme: PartitionScheme = PartitionScheme()
    tags: TagRule = TagRule()
    parts: Tuple["RiemannSystem", ...] = ()

    @property
    def system_id(self) -> str:
        if self.parts:
            return "+".join(p.system_id for p in self.parts)
        return f"{self.scheme.kind}/{self.tags.kind}"

    def with_domain(self, domain: Interval) -> "RiemannSystem":
        if self.parts:
            raise PartitionError("A merged system cannot be moved to another domain")
        return replace(self, domain=domain)


@dataclass(frozen=True)
class Level:
    cells: Cells
    tags: np.ndarray
    n: int
    # start offsets of the merged pieces; sums reduce piece by piece
    segments: Tuple[int, ...] = (0,)

    def __iter__(self) -> Iterator:
        yield self.cells
        yield self.tags

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def max_length(self) -> float:
        return float(np.max(self.cells.lengths))


def make_system(
    domain: Interval,
    scheme: str = "uniform",
    tags: str = "left",
    seed: int = 0,
    eps_power: float = 2.0,
) -> RiemannSystem:
    return RiemannSystem(
        domain, PartitionScheme(scheme, seed), TagRule(tags, seed, eps_power)
    )


def _edges(domain: Interval, scheme: PartitionScheme, n: int) -> np.ndarray:
    lo, hi = domain.lo, domain.hi
    width = hi - lo
    if scheme.kind == "uniform":
        return np.linspace(lo, hi, n + 1)
    if scheme.kind == "dyadic":
        m = 1 << max(0, math.ceil(math.log2(n)))
        return np.linspace(lo, hi, m + 1)
    if scheme.kind == "random":
        rng = make_rng(scheme.seed, n, 0)
        cuts = np.sort(rng.random(n - 1))
        spacing = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
        lengths = (RANDOM_FLOOR / n + (1.0 - RANDOM_FLOOR) * spacing) * width
        edges = lo + np.concatenate([[0.0], np.cumsum(lengths)])
        edges[-1] = hi
        return edges
    # adversarial_geometric
    small = math.exp(-n)
    if (n - 1) * small >= width:
        raise PartitionError(
            f"adversarial_geometric level {n} does not fit in {domain.as_list()}"
        )
    edges = lo + small * np.arange(n, dtype=float)
    return np.append(edges, hi)


def _tags(cells: Cells, rule: TagRule, n: int) -> np.ndarray:
    a, b = cells.lo, cells.hi
    # largest float inside a half-open cell
    right = np.where(cells.closed_right | (a == b), b, np.nextafter(b, a))
    if rule.kind == "left":
        return a.copy()
    if rule.kind == "right":
        return right
    if rule.kind == "midpoint":
        return np.minimum(a + (b - a) / 2, right)
    if rule.kind == "random":
        u = make_rng(rule.seed, n, 1).random(len(cells))
        return np.clip(a + u * (b - a), a, right)
    # near_right
    eps = float(np.max(b - a)) ** rule.eps_power
    return np.clip(b - eps, a, right)


def build_level(system: RiemannSystem, n: int) -> Level:
    if n < 1:
        raise PartitionError(f"Level must be >= 1, got {n}")
    if system.parts:
        return _merged_level(system, n)
    domain = system.domain
    if domain.lo == domain.hi:
        raise PartitionError(f"Cannot partition a degenerate domain {domain.as_list()}")
    edges = _edges(domain, system.scheme, n)
    cells = Cells.from_edges(edges, domain.closed_left, domain.closed_right)
    tags = _tags(cells, system.tags, n)
    return Level(cells, tags, n)


def _merged_level(system: RiemannSystem, n: int) -> Level:
    levels = [build_level(p, n) for p in system.parts]
    cells, tags, segments = None, [], []
    offset = 0
    for k, level in enumerate(levels):
        piece, piece_tags = level.cells, level.tags
        if k + 1 < len(levels) and piece.closed_right[-1]:
            # point-touching junction: the next piece owns the shared point
            last = len(piece) - 1
            piece = piece.with_closed_right(last, False)
            if piece_tags[last] == piece.hi[last] and piece.lo[last] < piece.hi[last]:
                piece_tags = piece_tags.copy()
                piece_tags[last] = np.nextafter(piece.hi[last], piece.lo[last])
        cells = piece if cells is None else cells.concat(piece)
        tags.append(piece_tags)
        segments.append(offset)
        offset += len(piece)
    return Level(cells, np.concatenate(tags), n, tuple(segments))


def merge_systems(system_a: RiemannSystem, system_b: RiemannSystem) -> RiemannSystem:
    """Joins systems over adjacent domains A and D \\ A into a system over D."""
    a, b = system_a.domain, system_b.domain
    if a.hi > b.lo:
        raise PartitionError(f"Overlapping domains {a.as_list()} and {b.as_list()}")
    if a.hi < b.lo:
        raise PartitionError(f"Domains {a.as_list()} and {b.as_list()} leave a gap")
    if not (a.closed_right or b.closed_left):
        raise PartitionError(f"The point {a.hi} is in neither domain")
    domain = Interval(a.lo, b.hi, a.closed_left, b.closed_right)
    parts = (system_a.parts or (system_a,)) + (system_b.parts or (system_b,))
    logger.debug(f"Merged {system_a.system_id} and {system_b.system_id}")
    return RiemannSystem(domain, parts=parts)


def _segmented_fsum(values: np.ndarray, segments: Sequence[int]) -> float:
    bounds = list(segments) + [len(values)]
    partials = [math.fsum(values[s:e]) for s, e in zip(bounds[:-1], bounds[1:])]
    total = 0.0
    for p in partials:
        total += p
    return total


def kernel_riemann_sum(
    kernel: KernelHandle, cells: Union[Cells, Level], tags: Optional[np.ndarray] = None
) -> float:
    """Sum over cells of K(tag_j, I_j)."""
    segments: Sequence[int] = (0,)
    if isinstance(cells, Level):
        cells, tags, segments = cells.cells, cells.tags, cells.segments
    values = kernel.on_cells(tags, cells)
    return _segmented_fsum(np.asarray(values, dtype=float), segments)


def double_riemann_sum(k2: SecondOrderKernel, level_a: Level, level_b: Level) -> float:
    """Sum over j, k of K(b_k, A_j) * K(a_j, B_k)."""
    base = k2.base
    p = base.evaluate_grid(level_b.tags, level_a.cells).T
    q = base.evaluate_grid(level_a.tags, level_b.cells)
    return math.fsum((p * q).ravel())


def common_refinement(levels: Sequence[Level]) -> np.ndarray:
    """Sorted union of all cell boundaries and tags of the given levels."""
    points = []
    for level in levels:
        points.extend([level.cells.lo, level.cells.hi, level.tags])
    return np.unique(np.concatenate(points))


def export_level_csv(level: Level, path: Union[str, Path]) -> None:
    rows = zip(level.cells.lo.tolist(), level.cells.hi.tolist(), level.tags.tolist())
    save_csv_rows(path, ["lo", "hi", "tag"], rows)


def default_ensemble(
    domain: Interval,
    schemes: Sequence[str] = ("uniform", "dyadic", "random"),
    tags: Sequence[str] = ("left", "right", "midpoint", "random"),
    seed: int = 0,
    eps_power: float = 2.0,
) -> List[RiemannSystem]:
    return [make_system(domain, s, t, seed, eps_power) for s in schemes for t in tags]


def levels_between(n_min: int, n_max: int) -> List[int]:
    """Doubling levels n_min, 2 n_min, ... up to n_max."""
    if n_min < 1 or n_max < n_min:
        raise PartitionError(f"Bad level range [{n_min}, {n_max}]")
    levels = []
    n = n_min
    while n <= n_max:
        levels.append(n)
        n *= 2
    return levels
