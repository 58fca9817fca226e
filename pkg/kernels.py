"""
Continuous-function / measure kernels K(x, A).

A KernelHandle wraps a vectorised evaluator f(x, lo, hi, cl, cr) that
broadcasts over points and interval batches. Catalog kernels have closed
forms; K_{psi,mu} is built by panel quadrature over a base kernel.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from measures import (
    QUAD_EPSABS,
    Cells,
    Diagonal,
    IncrementOfSurface,
    Interval,
    Lebesgue,
    Measure1D,
    Measure2D,
    fbm_covariance,
    intersect_arrays,
    make_measure,
    total_variation2d,
)

logger = logging.getLogger(__name__)

SINGULAR_POWER = 0.125


class KernelParameterError(ValueError):
    pass


class KernelDomainError(ValueError):
    pass


class MissingCrossCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class CrossCovariance:
    """The (C_Z, C_M) pair that realises K(x, A) = Cov(Z(x), M(A))."""

    c_z: Callable[[np.ndarray, np.ndarray], np.ndarray]
    c_m: Measure2D


@dataclass(frozen=True)
class KernelHandle:
    name: str
    fn: Callable
    domain: Interval
    params: Dict[str, Any] = field(default_factory=dict)
    cross: Optional[CrossCovariance] = None
    order: Optional[float] = None

    def _check_domain(self, x, lo, hi):
        d = self.domain
        if np.any(np.asarray(x) < d.lo) or np.any(np.asarray(x) > d.hi):
            raise KernelDomainError(f"Point outside {self.name} domain {d.as_list()}")
        if np.any(np.asarray(lo) < d.lo) or np.any(np.asarray(hi) > d.hi):
            raise KernelDomainError(
                f"Interval outside {self.name} domain {d.as_list()}"
            )

    def evaluate(self, x, lo, hi, cl, cr) -> np.ndarray:
        self._check_domain(x, lo, hi)
        return self.fn(np.asarray(x, dtype=float), lo, hi, cl, cr)

    def __call__(self, x: float, interval: Interval) -> float:
        return float(
            self.evaluate(
                x,
                interval.lo,
                interval.hi,
                interval.closed_left,
                interval.closed_right,
            )
        )

    def on_cells(self, tags: np.ndarray, cells: Cells) -> np.ndarray:
        """K(tags[j], cells[j]) elementwise."""
        return self.evaluate(tags, *cells.arrays())

    def evaluate_grid(self, xs: np.ndarray, cells: Cells) -> np.ndarray:
        """Matrix K(xs[i], cells[k])."""
        xs = np.asarray(xs, dtype=float)
        lo, hi, cl, cr = (a[None, :] for a in cells.arrays())
        out = self.evaluate(xs[:, None], lo, hi, cl, cr)
        return np.broadcast_to(out, (len(xs), len(cells))).astype(float)


@dataclass(frozen=True)
class SecondOrderKernel:
    base: KernelHandle

    def __call__(self, x: float, y: float, a: Interval, b: Interval) -> float:
        return self.base(y, a) * self.base(x, b)


@dataclass(frozen=True)
class IncrementKernel:
    base: KernelHandle

    def __call__(self, x: float, y: float, a: Interval) -> float:
        return self.base(x, a) - self.base(y, a)


def second_order(kernel: KernelHandle) -> SecondOrderKernel:
    return SecondOrderKernel(kernel)


def increment_kernel(kernel: KernelHandle) -> IncrementKernel:
    return IncrementKernel(kernel)


def eval_second_order(
    k2: SecondOrderKernel, x: float, y: float, a: Interval, b: Interval
) -> float:
    return k2(x, y, a, b)


UNIT = Interval(0.0, 1.0)

POINT_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "one": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "zero": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    "identity": lambda x: np.asarray(x, dtype=float),
    "square": lambda x: np.asarray(x, dtype=float) ** 2,
}

PSI_FUNCTIONS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "one": lambda x, y: np.ones(np.broadcast_shapes(np.shape(x), np.shape(y))),
    "product": lambda x, y: np.asarray(x) * np.asarray(y),
    "sum": lambda x, y: np.asarray(x) + np.asarray(y),
    "exp_gap": lambda x, y: np.exp(-np.abs(np.asarray(x) - np.asarray(y))),
}


def tensor(
    f: Callable[[np.ndarray], np.ndarray],
    mu: Measure1D,
    domain: Interval = UNIT,
    name: str = "tensor",
    params: Optional[Dict[str, Any]] = None,
) -> KernelHandle:
    def fn(x, lo, hi, cl, cr):
        return f(x) * mu.masses(lo, hi, cl, cr)

    return KernelHandle(name, fn, domain, params or {})


def orthogonal(
    nu: Measure1D,
    domain: Interval = UNIT,
    name: str = "orthogonal",
    params: Optional[Dict[str, Any]] = None,
) -> KernelHandle:
    """K(t, A) = nu([0, t] n A), the kernel of an orthogonal random measure."""
    origin = domain.lo

    def fn(t, lo, hi, cl, cr):
        lo, hi, cl, cr, nonempty = intersect_arrays(
            origin, t, True, True, lo, hi, cl, cr
        )
        return np.where(nonempty, nu.masses(lo, hi, cl, cr), 0.0)

    def c_z(s, t):
        # Var of M([0, min(s,t)])
        m = np.minimum(s, t)
        return nu.masses(origin, m, True, True)

    cross = CrossCovariance(c_z, Diagonal(nu))
    return KernelHandle(name, fn, domain, params or {}, cross=cross)


def brownian_wn(domain: Interval = UNIT) -> KernelHandle:
    # C_Z(s, t) = min(s, t), C_M = Diagonal(Lebesgue)
    return orthogonal(Lebesgue(), domain, name="brownian_wn")


def fbm(hurst: float, domain: Interval = UNIT) -> KernelHandle:
    """
    K(t, [a,b]) = (b^2H - a^2H + |t-a|^2H - |t-b|^2H) / 2, i.e. C(t,b) - C(t,a)
    for the fBm covariance C. Set flags are ignored: the measure is atomless.
    """
    if not 0.5 < hurst < 1.0:
        raise KernelParameterError(f"fbm needs 1/2 < H < 1, got H={hurst}")
    if domain.lo < 0:
        raise KernelParameterError(f"fbm domain must lie in [0, inf): {domain}")
    two_h = 2.0 * hurst
    covariance = fbm_covariance(hurst)

    def fn(t, lo, hi, cl, cr):
        a = np.asarray(lo, dtype=float)
        b = np.asarray(hi, dtype=float)
        return 0.5 * (
            b**two_h - a**two_h + np.abs(t - a) ** two_h - np.abs(t - b) ** two_h
        )

    cross = CrossCovariance(covariance, IncrementOfSurface(covariance))
    return KernelHandle(
        "fbm", fn, domain, {"H": hurst}, cross=cross, order=two_h - 1.0
    )


def fbm_density_integral(hurst: float, t: float, a: float, b: float) -> float:
    """Quadrature of H * (u^(2H-1) + |t-u|^(2H-1) sgn(t-u)) over [a, b]."""

    def integrand(u):
        return hurst * (u ** (2 * hurst - 1) + abs(t - u) ** (2 * hurst - 1) * np.sign(t - u))

    points = [t] if a < t < b else None
    value, _ = integrate.quad(integrand, a, b, epsabs=1e-12, points=points)
    return value


def singular(domain: Interval = Interval(-1.0, 1.0)) -> KernelHandle:
    """K(x, A) = integral over A of |x - u|^(-1/8) du, in closed form."""
    q = 1.0 - SINGULAR_POWER

    def primitive(u, x):
        d = u - x
        return np.sign(d) * np.abs(d) ** q / q

    def fn(x, lo, hi, cl, cr):
        return primitive(np.asarray(hi, float), x) - primitive(np.asarray(lo, float), x)

    def c_z_scalar(x: float, y: float) -> float:
        points = sorted({p for p in (x, y) if domain.lo < p < domain.hi}) or None
        value, _ = integrate.quad(
            lambda u: abs(x - u) ** -SINGULAR_POWER * abs(y - u) ** -SINGULAR_POWER,
            domain.lo,
            domain.hi,
            points=points,
            epsabs=QUAD_EPSABS,
            limit=200,
        )
        return value

    c_z = np.vectorize(c_z_scalar, otypes=[float])
    cross = CrossCovariance(c_z, Diagonal())
    return KernelHandle("singular", fn, domain, {}, cross=cross)


def psi_mu(
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mu: Measure1D,
    base: KernelHandle,
    domain_p: Optional[Interval] = None,
    panels: int = 512,
    params: Optional[Dict[str, Any]] = None,
    domain_d: Optional[Interval] = None,
) -> KernelHandle:
    """
    K_{psi,mu}(y, A) = integral of psi(x, y) K_base(x, A) dmu(x) over D_d
    (the base domain unless given), by midpoint panels.
    """
    domain_d = domain_d or base.domain
    domain_p = domain_p or base.domain
    edges = np.linspace(domain_d.lo, domain_d.hi, panels + 1)
    panel_cells = Cells.from_edges(edges, domain_d.closed_left, domain_d.closed_right)
    nodes = (edges[:-1] + edges[1:]) / 2
    weights = mu.cell_masses(panel_cells)

    def fn(y, lo, hi, cl, cr):
        y, lo, hi, cl, cr = np.broadcast_arrays(y, lo, hi, cl, cr)
        values = base.fn(
            nodes, lo[..., None], hi[..., None], cl[..., None], cr[..., None]
        )
        return np.sum(psi(nodes, y[..., None]) * values * weights, axis=-1)

    return KernelHandle(
        "psi_mu", fn, domain_p, params or {"panels": panels}, order=None
    )


CATALOG: Dict[str, Dict[str, Any]] = {
    "tensor": {
        "summary": "f(x) * mu(A)",
        "params": {"f": "one|zero|identity|square", "measure": "measure descriptor"},
    },
    "brownian_wn": {
        "summary": "lambda(A n [0, x]) on [0, 1]",
        "params": {},
    },
    "fbm": {
        "summary": "(b^2H - a^2H + |t-a|^2H - |t-b|^2H) / 2 on [0, 1]",
        "params": {"H": "float in (0.5, 1)"},
    },
    "orthogonal": {
        "summary": "nu([0, t] n A) on [0, 1]",
        "params": {"nu": "measure descriptor"},
    },
    "singular": {
        "summary": "integral over A of |x-u|^(-1/8) du on [-1, 1]",
        "params": {},
    },
    "psi_mu": {
        "summary": "integral of psi(x,y) K_base(x, A) dmu(x)",
        "params": {
            "psi": "one|product|sum|exp_gap",
            "measure": "measure descriptor",
            "base": "kernel descriptor",
            "panels": "int (default 512)",
        },
    },
}


def _interval_param(value, default: Interval) -> Interval:
    if value is None:
        return default
    return Interval(float(value[0]), float(value[1]))


def make_kernel(spec: Dict[str, Any]) -> KernelHandle:
    """Builds a catalog kernel from {"name": ..., "params": {...}}."""
    name = spec.get("name")
    params = dict(spec.get("params") or {})
    if name not in CATALOG:
        raise KernelParameterError(f"Unknown kernel: {name}")
    domain = _interval_param(params.pop("domain", None), None)

    if name == "tensor":
        f_name = params.get("f", "one")
        if f_name not in POINT_FUNCTIONS:
            raise KernelParameterError(f"Unknown point function: {f_name}")
        mu = make_measure(params.get("measure", {"kind": "lebesgue"}))
        return tensor(POINT_FUNCTIONS[f_name], mu, domain or UNIT, params=params)
    if name == "brownian_wn":
        return brownian_wn(domain or UNIT)
    if name == "fbm":
        return fbm(float(params.get("H", 0.75)), domain or UNIT)
    if name == "orthogonal":
        nu = make_measure(params.get("nu", {"kind": "lebesgue"}))
        return orthogonal(nu, domain or UNIT, params=params)
    if name == "singular":
        return singular(domain or Interval(-1.0, 1.0))
    # psi_mu
    psi_name = params.get("psi", "one")
    if psi_name not in PSI_FUNCTIONS:
        raise KernelParameterError(f"Unknown psi function: {psi_name}")
    mu = make_measure(params.get("measure", {"kind": "lebesgue"}))
    base = make_kernel(params.get("base", {"name": "tensor"}))
    panels = int(params.get("panels", 512))
    return psi_mu(PSI_FUNCTIONS[psi_name], mu, base, domain, panels, params=params)


def total_variation_kernel(
    kernel: KernelHandle, x: float, interval: Interval, depth: int
) -> float:
    """Dyadic lower bound of |K|(x, B)."""
    cells = interval.dyadic_cells(depth)
    values = kernel.on_cells(np.full(len(cells), float(x)), cells)
    return math.fsum(np.abs(values))


def local_bound_probe(
    kernel: KernelHandle,
    domain: Interval,
    interval: Interval,
    grid_n: int = 65,
    depth: int = 8,
) -> float:
    """max over a grid of x in the domain of |K|(x, B)."""
    if grid_n < 2:
        raise ValueError(f"grid_n must be >= 2, got {grid_n}")
    cells = interval.dyadic_cells(depth)
    xs = np.linspace(domain.lo, domain.hi, grid_n)
    grid = np.abs(kernel.evaluate_grid(xs, cells))
    return max(math.fsum(row) for row in grid)


def local_bound(
    kernel: KernelHandle,
    domain: Interval,
    interval: Interval,
    grid_n: int = 65,
    depth: int = 8,
) -> float:
    """sup_x sqrt(C_Z(x,x)) * sqrt(|C_M|(B x B)), the bound the probe must respect."""
    cross = _require_cross(kernel)
    xs = np.linspace(domain.lo, domain.hi, grid_n)
    c_zz = np.max(np.asarray(cross.c_z(xs, xs), dtype=float))
    tv = total_variation2d(cross.c_m, interval, interval, depth)
    return math.sqrt(max(c_zz, 0.0)) * math.sqrt(tv)


def continuity_probe(kernel: KernelHandle, interval: Interval, grid_n: int = 257) -> float:
    """Largest jump of x -> K(x, A) between neighbouring grid points of the domain."""
    xs = np.linspace(kernel.domain.lo, kernel.domain.hi, grid_n)
    values = kernel.evaluate_grid(xs, Cells.from_intervals([interval]))[:, 0]
    return float(np.max(np.abs(np.diff(values))))


def _require_cross(kernel: KernelHandle) -> CrossCovariance:
    if kernel.cross is None:
        raise MissingCrossCovarianceError(
            f"Kernel {kernel.name} has no attached (C_Z, C_M) pair"
        )
    return kernel.cross


def cross_covariance_matrices(
    kernel: KernelHandle, points: Sequence[float], sets: Sequence[Interval]
) -> Tuple[np.ndarray, np.ndarray]:
    """Gram matrices C_Z(x_i, x_j) and C_M(E_k x E_l)."""
    cross = _require_cross(kernel)
    xs = np.asarray(points, dtype=float)
    c_z = np.asarray(cross.c_z(xs[:, None], xs[None, :]), dtype=float)
    cells = Cells.from_intervals(list(sets))
    c_m = cross.c_m.cell_matrix(cells, cells)
    return c_z, c_m


def cauchy_schwarz_check(
    kernel: KernelHandle,
    points: Sequence[float],
    sets: Sequence[Interval],
    alpha: Sequence[float],
    beta: Sequence[float],
) -> Tuple[float, float]:
    c_z, c_m = cross_covariance_matrices(kernel, points, sets)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gram = kernel.evaluate_grid(np.asarray(points, dtype=float), Cells.from_intervals(list(sets)))
    lhs = abs(float(alpha @ gram @ beta))
    # quadratic forms may dip below zero by rounding
    rhs = math.sqrt(max(float(alpha @ c_z @ alpha), 0.0)) * math.sqrt(
        max(float(beta @ c_m @ beta), 0.0)
    )
    return lhs, rhs


def iterated_integral_both_orders(
    kernel: KernelHandle,
    mu: Measure1D,
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    domain_d: Interval,
    domain_p: Interval,
    n: int,
) -> Tuple[float, float]:
    """
    First value: integrate psi(x, .) against K(x, dy) at midpoints, then dmu(x).
    Second value: left-tag self-integral sum of K_{psi,mu} with n panels.
    """
    x_cells = Cells.from_edges(
        np.linspace(domain_d.lo, domain_d.hi, n + 1),
        domain_d.closed_left,
        domain_d.closed_right,
    )
    y_edges = np.linspace(domain_p.lo, domain_p.hi, n + 1)
    y_cells = Cells.from_edges(y_edges, domain_p.closed_left, domain_p.closed_right)
    x_mid = (x_cells.lo + x_cells.hi) / 2
    y_mid = (y_cells.lo + y_cells.hi) / 2

    k_grid = kernel.evaluate_grid(x_mid, y_cells)
    inner = np.sum(psi(x_mid[:, None], y_mid[None, :]) * k_grid, axis=1)
    first = math.fsum(inner * mu.cell_masses(x_cells))

    derived = psi_mu(psi, mu, kernel, domain_p, panels=n, domain_d=domain_d)
    second = math.fsum(derived.on_cells(y_cells.lo, y_cells))
    return first, second
