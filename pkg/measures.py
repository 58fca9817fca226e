"""
Real Radon measures on bounded intervals and boxes.

Intervals carry endpoint flags so atoms are counted exactly. Every measure
evaluates on numpy arrays of interval endpoints with broadcasting, which is
what the kernel and Riemann sum engines feed it.
"""

import logging
from abc import ABC, abstractmethod
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-10


class InvalidIntervalError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_left: bool = True
    closed_right: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise InvalidIntervalError(f"Interval endpoints must be finite: {self}")
        if self.lo > self.hi:
            raise InvalidIntervalError(f"Interval has lo > hi: {self}")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def is_empty(self) -> bool:
        return self.lo == self.hi and not (self.closed_left and self.closed_right)

    def contains(self, x: float) -> bool:
        if self.lo < x < self.hi:
            return True
        if x == self.lo and self.closed_left and (x < self.hi or self.closed_right):
            return True
        return x == self.hi and self.closed_right and (x > self.lo or self.closed_left)

    def covers(self, other: "Interval") -> bool:
        if other.is_empty:
            return True
        left_ok = other.lo > self.lo or (
            other.lo == self.lo and (self.closed_left or not other.closed_left)
        )
        right_ok = other.hi < self.hi or (
            other.hi == self.hi and (self.closed_right or not other.closed_right)
        )
        return left_ok and right_ok

    def split(self, c: float) -> Tuple["Interval", "Interval"]:
        """Splits into [lo, c) and [c, hi], keeping the outer flags."""
        if not self.lo <= c <= self.hi:
            raise InvalidIntervalError(f"Split point {c} outside {self}")
        return (
            Interval(self.lo, c, self.closed_left, False),
            Interval(c, self.hi, True, self.closed_right),
        )

    def dyadic_cells(self, depth: int) -> "Cells":
        if depth < 0:
            raise ValueError(f"depth must be >= 0, got {depth}")
        edges = np.linspace(self.lo, self.hi, 2**depth + 1)
        return Cells.from_edges(edges, self.closed_left, self.closed_right)

    def as_list(self) -> List[float]:
        return [self.lo, self.hi]


@dataclass(frozen=True)
class Cells:
    """A batch of intervals stored as parallel arrays."""

    lo: np.ndarray
    hi: np.ndarray
    closed_left: np.ndarray
    closed_right: np.ndarray

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval]) -> "Cells":
        return cls(
            np.array([i.lo for i in intervals], dtype=float),
            np.array([i.hi for i in intervals], dtype=float),
            np.array([i.closed_left for i in intervals], dtype=bool),
            np.array([i.closed_right for i in intervals], dtype=bool),
        )

    @classmethod
    def from_edges(
        cls, edges: np.ndarray, closed_left: bool = True, closed_right: bool = True
    ) -> "Cells":
        """Half-open cells [e_k, e_k+1); the outer flags follow the domain."""
        edges = np.asarray(edges, dtype=float)
        n = len(edges) - 1
        cl = np.ones(n, dtype=bool)
        cr = np.zeros(n, dtype=bool)
        cl[0] = closed_left
        cr[-1] = closed_right
        return cls(edges[:-1].copy(), edges[1:].copy(), cl, cr)

    def __len__(self) -> int:
        return len(self.lo)

    def __getitem__(self, k: int) -> Interval:
        return Interval(
            float(self.lo[k]),
            float(self.hi[k]),
            bool(self.closed_left[k]),
            bool(self.closed_right[k]),
        )

    def __iter__(self) -> Iterator[Interval]:
        for k in range(len(self)):
            yield self[k]

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.lo, self.hi, self.closed_left, self.closed_right

    def concat(self, other: "Cells") -> "Cells":
        return Cells(
            np.concatenate([self.lo, other.lo]),
            np.concatenate([self.hi, other.hi]),
            np.concatenate([self.closed_left, other.closed_left]),
            np.concatenate([self.closed_right, other.closed_right]),
        )

    def with_closed_right(self, k: int, value: bool) -> "Cells":
        cr = self.closed_right.copy()
        cr[k] = value
        return Cells(self.lo, self.hi, self.closed_left, cr)


def intersect_arrays(lo1, hi1, cl1, cr1, lo2, hi2, cl2, cr2):
    """Broadcast intersection of two interval batches; returns (lo, hi, cl, cr, nonempty)."""
    lo = np.maximum(lo1, lo2)
    hi = np.minimum(hi1, hi2)
    cl = np.where(lo1 > lo2, cl1, np.where(lo2 > lo1, cl2, cl1 & cl2))
    cr = np.where(hi1 < hi2, cr1, np.where(hi2 < hi1, cr2, cr1 & cr2))
    nonempty = (lo < hi) | ((lo == hi) & cl & cr)
    hi = np.where(nonempty, hi, lo)
    return lo, hi, cl, cr, nonempty


def atom_inside(p: float, lo, hi, cl, cr) -> np.ndarray:
    inside = (lo < p) & (p < hi)
    at_lo = (p == lo) & cl & ((lo < hi) | cr)
    at_hi = (p == hi) & cr & ((lo < hi) | cl)
    return inside | at_lo | at_hi


class Measure1D(ABC):
    @abstractmethod
    def masses(self, lo, hi, cl, cr) -> np.ndarray:
        pass

    def mass(self, interval: Interval) -> float:
        lo, hi, cl, cr = Cells.from_intervals([interval]).arrays()
        return float(self.masses(lo, hi, cl, cr)[0])

    def cell_masses(self, cells: Cells) -> np.ndarray:
        return self.masses(*cells.arrays())

    def atoms(self) -> List[Tuple[float, float]]:
        return []

    @abstractmethod
    def integrate(self, f: Callable[[float], float], interval: Interval) -> float:
        pass


@dataclass(frozen=True)
class Lebesgue(Measure1D):
    scale: float = 1.0

    def masses(self, lo, hi, cl, cr):
        return self.scale * (np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float))

    def integrate(self, f, interval):
        if interval.lo == interval.hi:
            return 0.0
        value, _ = integrate.quad(f, interval.lo, interval.hi, epsabs=QUAD_EPSABS)
        return self.scale * value


@dataclass(frozen=True)
class Atomic(Measure1D):
    points: Tuple[Tuple[float, float], ...] = ()

    def __init__(self, points: Sequence[Tuple[float, float]] = ()):
        object.__setattr__(
            self, "points", tuple((float(p), float(w)) for p, w in points)
        )

    def masses(self, lo, hi, cl, cr):
        lo, hi, cl, cr = np.broadcast_arrays(lo, hi, cl, cr)
        total = np.zeros(lo.shape, dtype=float)
        for p, w in self.points:
            total = total + np.where(atom_inside(p, lo, hi, cl, cr), w, 0.0)
        return total

    def atoms(self):
        return list(self.points)

    def integrate(self, f, interval):
        return math.fsum(w * f(p) for p, w in self.points if interval.contains(p))


@dataclass(frozen=True)
class LebesgueDensity(Measure1D):
    """
    Measure with density f against Lebesgue. When a primitive F is registered
    masses are F(hi) - F(lo); otherwise adaptive quadrature per cell.
    """

    f: Callable[[float], float]
    primitive: Optional[Callable[[np.ndarray], np.ndarray]] = None
    singular_points: Tuple[float, ...] = ()

    def masses(self, lo, hi, cl, cr):
        lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
        if self.primitive is not None:
            return np.where(hi > lo, self.primitive(hi) - self.primitive(lo), 0.0)
        return np.vectorize(self._quad_mass, otypes=[float])(lo, hi)

    def _quad_mass(self, a: float, b: float) -> float:
        if a == b:
            return 0.0
        points = [p for p in self.singular_points if a < p < b] or None
        value, _ = integrate.quad(self.f, a, b, epsabs=QUAD_EPSABS, points=points)
        return value

    def integrate(self, f, interval):
        if interval.lo == interval.hi:
            return 0.0
        points = [p for p in self.singular_points if interval.lo < p < interval.hi]
        value, _ = integrate.quad(
            lambda u: f(u) * self.f(u),
            interval.lo,
            interval.hi,
            epsabs=QUAD_EPSABS,
            points=points or None,
        )
        return value


@dataclass(frozen=True)
class SignedSum(Measure1D):
    components: Tuple[Measure1D, ...] = ()

    def __init__(self, components: Sequence[Measure1D] = ()):
        object.__setattr__(self, "components", tuple(components))

    def masses(self, lo, hi, cl, cr):
        shape = np.broadcast_shapes(np.shape(lo), np.shape(hi))
        total = np.zeros(shape, dtype=float)
        for component in self.components:
            total = total + component.masses(lo, hi, cl, cr)
        return total

    def atoms(self):
        return [a for c in self.components for a in c.atoms()]

    def integrate(self, f, interval):
        return math.fsum(c.integrate(f, interval) for c in self.components)


def abs_power_density(center: float = 0.0, power: float = 0.125) -> LebesgueDensity:
    """Density u -> |u - center|^(-power), 0 <= power < 1, with its closed primitive."""
    if not 0 <= power < 1:
        raise ValueError(f"abs_power_density needs 0 <= power < 1, got {power}")
    q = 1.0 - power

    def density(u):
        return abs(u - center) ** (-power)

    def primitive(u):
        d = np.asarray(u, dtype=float) - center
        return np.sign(d) * np.abs(d) ** q / q

    return LebesgueDensity(density, primitive, singular_points=(center,))


DENSITIES: Dict[str, Callable[[float], float]] = {
    "one": lambda u: 1.0,
    "identity": lambda u: u,
    "sin_2pi": lambda u: math.sin(2 * math.pi * u),
    "sign_half": lambda u: math.copysign(1.0, u - 0.5) if u != 0.5 else 0.0,
}


def make_measure(spec: Dict[str, Any]) -> Measure1D:
    """Builds a Measure1D from a config descriptor such as {"kind": "lebesgue"}."""
    kind = spec.get("kind", "lebesgue")
    if kind == "lebesgue":
        return Lebesgue(float(spec.get("scale", 1.0)))
    if kind == "atomic":
        return Atomic(spec.get("atoms", []))
    if kind == "abs_power":
        return abs_power_density(
            float(spec.get("center", 0.0)), float(spec.get("power", 0.125))
        )
    if kind == "density":
        name = spec.get("f")
        if name not in DENSITIES:
            raise ValueError(f"Unknown density: {name}")
        return LebesgueDensity(DENSITIES[name])
    if kind == "sum":
        return SignedSum([make_measure(c) for c in spec.get("components", [])])
    raise ValueError(f"Unknown measure kind: {kind}")


def mass(mu: Measure1D, interval: Interval) -> float:
    return mu.mass(interval)


def total_variation_estimate(mu: Measure1D, interval: Interval, depth: int) -> float:
    """
    Sum of |mu(I_j)| over the dyadic partition of the interval at the given
    depth. A certified lower bound for |mu|(I), non-decreasing in depth.
    """
    cells = interval.dyadic_cells(depth)
    return math.fsum(np.abs(mu.cell_masses(cells)))


def integrate_measure(mu: Measure1D, f: Callable[[float], float], interval: Interval) -> float:
    """Reference value of the integral of f against mu over the interval."""
    return mu.integrate(f, interval)


def integrate_riemann(
    mu: Measure1D, f: Callable, interval: Interval, system, n: int
) -> float:
    from riemann import build_level

    if system.domain != interval:
        system = system.with_domain(interval)
    level = build_level(system, n)
    values = np.asarray(f(level.tags), dtype=float) * mu.cell_masses(level.cells)
    return math.fsum(np.broadcast_to(values, level.tags.shape))


class Measure2D(ABC):
    @abstractmethod
    def box_masses(self, a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr) -> np.ndarray:
        pass

    def mass(self, a: Interval, b: Interval) -> float:
        return float(
            self.box_masses(
                a.lo, a.hi, a.closed_left, a.closed_right,
                b.lo, b.hi, b.closed_left, b.closed_right,
            )
        )

    def cell_matrix(self, rows: Cells, cols: Cells) -> np.ndarray:
        """Matrix of box masses rows[j] x cols[k]."""
        r = [x[:, None] for x in rows.arrays()]
        c = [x[None, :] for x in cols.arrays()]
        out = self.box_masses(*r, *c)
        return np.broadcast_to(out, (len(rows), len(cols))).astype(float)

    def diagonal_mass(self, interval: Interval) -> float:
        """Part of the mass of I x I carried by the diagonal {(u, u)}."""
        return 0.0


@dataclass(frozen=True)
class Diagonal(Measure2D):
    nu: Measure1D = field(default_factory=Lebesgue)

    def box_masses(self, a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr):
        lo, hi, cl, cr, nonempty = intersect_arrays(
            a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr
        )
        return np.where(nonempty, self.nu.masses(lo, hi, cl, cr), 0.0)

    def diagonal_mass(self, interval):
        return self.nu.mass(interval)


@dataclass(frozen=True)
class Tensor(Measure2D):
    mu1: Measure1D
    mu2: Measure1D

    def box_masses(self, a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr):
        return self.mu1.masses(a_lo, a_hi, a_cl, a_cr) * self.mu2.masses(
            b_lo, b_hi, b_cl, b_cr
        )

    def diagonal_mass(self, interval):
        second = dict(self.mu2.atoms())
        return math.fsum(
            w * second[p]
            for p, w in self.mu1.atoms()
            if p in second and interval.contains(p)
        )


@dataclass(frozen=True)
class IncrementOfSurface(Measure2D):
    """Box mass C(b,d) - C(b,c) - C(a,d) + C(a,c) for a continuous surface C."""

    surface: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def box_masses(self, a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr):
        C = self.surface
        return C(a_hi, b_hi) - C(a_hi, b_lo) - C(a_lo, b_hi) + C(a_lo, b_lo)


@dataclass(frozen=True)
class Density2D(Measure2D):
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    order: int = 8

    def box_masses(self, a_lo, a_hi, a_cl, a_cr, b_lo, b_hi, b_cl, b_cr):
        nodes, weights = np.polynomial.legendre.leggauss(self.order)
        a_lo, a_hi, b_lo, b_hi = np.broadcast_arrays(a_lo, a_hi, b_lo, b_hi)
        a_mid, a_half = (a_hi + a_lo) / 2, (a_hi - a_lo) / 2
        b_mid, b_half = (b_hi + b_lo) / 2, (b_hi - b_lo) / 2
        total = np.zeros(a_lo.shape, dtype=float)
        for xi, wi in zip(nodes, weights):
            u = a_mid + a_half * xi
            for yk, wk in zip(nodes, weights):
                v = b_mid + b_half * yk
                total = total + wi * wk * self.g(u, v)
        return total * a_half * b_half

    def mass(self, a, b):
        if a.lo == a.hi or b.lo == b.hi:
            return 0.0
        value, _ = integrate.dblquad(
            lambda v, u: self.g(u, v), a.lo, a.hi, b.lo, b.hi, epsabs=QUAD_EPSABS
        )
        return value


@dataclass(frozen=True)
class SignedSum2D(Measure2D):
    components: Tuple[Measure2D, ...] = ()

    def __init__(self, components: Sequence[Measure2D] = ()):
        object.__setattr__(self, "components", tuple(components))

    def box_masses(self, *args):
        shape = np.broadcast_shapes(*(np.shape(a) for a in args))
        total = np.zeros(shape, dtype=float)
        for component in self.components:
            total = total + component.box_masses(*args)
        return total

    def diagonal_mass(self, interval):
        return math.fsum(c.diagonal_mass(interval) for c in self.components)


def fbm_covariance(hurst: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """C(t, s) = (|t|^2H + |s|^2H - |t - s|^2H) / 2."""
    two_h = 2.0 * hurst

    def covariance(t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)

    return covariance


def make_measure2d(spec: Dict[str, Any]) -> Measure2D:
    kind = spec.get("kind")
    if kind == "diagonal":
        return Diagonal(make_measure(spec.get("nu", {"kind": "lebesgue"})))
    if kind == "tensor":
        return Tensor(make_measure(spec["mu1"]), make_measure(spec["mu2"]))
    if kind == "fbm_increment":
        return IncrementOfSurface(fbm_covariance(float(spec.get("H", 0.75))))
    if kind == "zero":
        return SignedSum2D([])
    if kind == "sum":
        return SignedSum2D([make_measure2d(c) for c in spec.get("components", [])])
    raise ValueError(f"Unknown Measure2D kind: {kind}")


def mass2d(measure: Measure2D, a: Interval, b: Interval) -> float:
    return measure.mass(a, b)


def diagonal_mass(measure: Measure2D, interval: Interval) -> float:
    return measure.diagonal_mass(interval)


def total_variation2d(measure: Measure2D, a: Interval, b: Interval, depth: int) -> float:
    """Dyadic lower bound of |measure|(A x B)."""
    cells_a = a.dyadic_cells(depth)
    cells_b = b.dyadic_cells(depth)
    return math.fsum(np.abs(measure.cell_matrix(cells_a, cells_b)).ravel())
