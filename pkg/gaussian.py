"""
Jointly Gaussian grid models of a process Z and a random measure M.

A model lives on the common refinement of the levels it serves: Z at every
breakpoint, M on every fine cell. Coarse cell masses are sums of fine ones,
so one batch of samples feeds stochastic Riemann sums for several tag rules.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg

import mc_stats
from kernels import (
    POINT_FUNCTIONS,
    CrossCovariance,
    KernelHandle,
    brownian_wn,
    fbm,
    orthogonal,
    tensor,
)
from measures import (
    Cells,
    Diagonal,
    IncrementOfSurface,
    Interval,
    Lebesgue,
    Measure1D,
    SignedSum2D,
    Tensor,
    integrate_measure,
    make_measure,
)
from riemann import Level, RiemannSystem, build_level, common_refinement, make_system
from selfint import SelfIntegralReport, Verdict
from utils import _current_timestamp, make_rng

logger = logging.getLogger(__name__)

JITTER_SCHEDULE = (0.0, 1e-12, 1e-10, 1e-8)
MODEL_NAMES = (
    "brownian_wn",
    "fbm",
    "orthogonal",
    "independent",
    "abs_continuous",
    "finite_image",
)
ISSERLIS_SIGMAS = 5.0


class FactorizationError(ValueError):
    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


class TagNotOnGridError(ValueError):
    pass


class BatchMismatchError(ValueError):
    pass


class MomentCheckRefused(ValueError):
    pass


# Covariance choices c(x, y) for the absolutely continuous model M(A) = int_A U dmu
# with Z = U. Each entry: (c, K(x, [a, b]) = int_a^b c(x, y) dy,
# F(s, t) = int_0^s int_0^t c, diagonal c(x, x)).
def _min_kernel(x, a, b):
    p = np.clip(x, a, b)
    return (p * p - a * a) / 2 + x * (b - p)


def _min_surface(s, t):
    u = np.minimum(s, t)
    v = np.maximum(s, t)
    return u * u * v / 2 - u**3 / 6


ABS_CONTINUOUS = {
    "zero": (
        lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
        lambda x, a, b: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a))),
        lambda s, t: np.zeros(np.broadcast_shapes(np.shape(s), np.shape(t))),
        lambda x: 0.0 * x,
    ),
    "product": (
        lambda x, y: np.asarray(x) * np.asarray(y),
        lambda x, a, b: np.asarray(x) * (np.asarray(b) ** 2 - np.asarray(a) ** 2) / 2,
        lambda s, t: (np.asarray(s) ** 2) * (np.asarray(t) ** 2) / 4,
        lambda x: x * x,
    ),
    "min": (
        lambda x, y: np.minimum(x, y),
        _min_kernel,
        _min_surface,
        lambda x: x,
    ),
}


def abs_continuous_kernel(c_name: str, domain: Interval) -> KernelHandle:
    if c_name not in ABS_CONTINUOUS:
        raise ValueError(f"Unknown abs_continuous covariance: {c_name}")
    if domain.lo < 0:
        raise ValueError(f"abs_continuous model needs a domain in [0, inf): {domain}")
    c, k, surface, _ = ABS_CONTINUOUS[c_name]

    def fn(x, lo, hi, cl, cr):
        return k(x, np.asarray(lo, float), np.asarray(hi, float))

    cross = CrossCovariance(c, IncrementOfSurface(surface))
    return KernelHandle("abs_continuous", fn, domain, {"c": c_name}, cross=cross)


def _finite_image_parts(
    components: Sequence[Dict[str, Any]],
) -> List[Tuple[float, Callable[[np.ndarray], np.ndarray], Measure1D]]:
    if not components:
        raise ValueError("finite_image model needs at least one component")
    parts = []
    for component in components:
        f_name = component.get("f", "one")
        if f_name not in POINT_FUNCTIONS:
            raise ValueError(f"Unknown point function: {f_name}")
        sigma = float(component.get("sigma", 1.0))
        if sigma <= 0:
            raise ValueError(f"finite_image sigma must be positive, got {sigma}")
        nu = make_measure(component.get("nu") or {"kind": "lebesgue"})
        parts.append((sigma, POINT_FUNCTIONS[f_name], nu))
    return parts


def finite_image_kernel(components: Sequence[Dict[str, Any]], domain: Interval) -> KernelHandle:
    """
    Z = sum_a sigma_a xi_a f_a and M(A) = sum_a xi_a nu_a(A) for i.i.d. standard
    xi_a, so K(x, A) = sum_a sigma_a f_a(x) nu_a(A).
    """
    parts = _finite_image_parts(components)

    def fn(x, lo, hi, cl, cr):
        return sum(s * f(x) * nu.masses(lo, hi, cl, cr) for s, f, nu in parts)

    def c_z(x, y):
        return sum(s * s * f(x) * f(y) for s, f, _ in parts)

    cross = CrossCovariance(c_z, SignedSum2D([Tensor(nu, nu) for _, _, nu in parts]))
    params = {"components": [dict(c) for c in components]}
    return KernelHandle("finite_image", fn, domain, params, cross=cross)


def finite_image_loadings(
    components: Sequence[Dict[str, Any]], grid: np.ndarray, cells: Cells
) -> np.ndarray:
    """Rows Z(grid) then M(cells) as linear maps of the standard vector xi."""
    parts = _finite_image_parts(components)
    z = np.column_stack([s * np.broadcast_to(f(grid), grid.shape) for s, f, _ in parts])
    m = np.column_stack([nu.cell_masses(cells) for _, _, nu in parts])
    return np.vstack([z, m])


def model_kernel(spec: Dict[str, Any], domain: Interval) -> KernelHandle:
    name = spec.get("name")
    if name == "brownian_wn":
        return brownian_wn(domain)
    if name == "fbm":
        return fbm(float(spec.get("H", 0.75)), domain)
    if name == "orthogonal":
        return orthogonal(make_measure(spec.get("nu") or {"kind": "lebesgue"}), domain)
    if name == "independent":
        zero = tensor(POINT_FUNCTIONS["zero"], Lebesgue(), domain, name="independent")
        cross = CrossCovariance(lambda s, t: np.minimum(s, t) - domain.lo, Diagonal())
        return replace(zero, cross=cross)
    if name == "abs_continuous":
        return abs_continuous_kernel(spec.get("c", "min"), domain)
    if name == "finite_image":
        return finite_image_kernel(spec.get("components") or [], domain)
    raise ValueError(f"Unknown Gaussian model: {name}")


def _construction(spec: Dict[str, Any]) -> str:
    name = spec.get("name")
    if name in ("brownian_wn", "fbm"):
        return "increments"
    if name == "orthogonal":
        nu = make_measure(spec.get("nu") or {"kind": "lebesgue"})
        # Z(t) = M([0, t)) misses an atom sitting at t
        return "joint" if nu.atoms() else "increments"
    if name == "finite_image":
        return "loadings"
    return "joint"


def factorize(matrix: np.ndarray, label: str = "covariance") -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor, trying the jitter schedule on the diagonal."""
    eye = np.eye(len(matrix))
    for jitter in JITTER_SCHEDULE:
        try:
            factor = linalg.cholesky(matrix + jitter * eye, lower=True)
        except linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.warning(f"Cholesky of {label} needed jitter {jitter:g}")
        return factor, jitter
    raise FactorizationError(
        f"Cholesky of {label} ({len(matrix)}x{len(matrix)}) failed with jitter up to "
        f"{JITTER_SCHEDULE[-1]:g}",
        JITTER_SCHEDULE[-1],
    )


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2


@dataclass
class GaussianGridModel:
    spec: Dict[str, Any]
    domain: Interval
    kernel: KernelHandle
    grid: np.ndarray
    cells: Cells
    cov_zz: np.ndarray
    cov_zm: np.ndarray
    cov_mm: np.ndarray
    construction: str
    jitter: float = 0.0
    factor: Optional[np.ndarray] = None

    @property
    def n_points(self) -> int:
        return len(self.grid)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def joint_covariance(self) -> np.ndarray:
        top = np.hstack([self.cov_zz, self.cov_zm])
        bottom = np.hstack([self.cov_zm.T, self.cov_mm])
        return np.vstack([top, bottom])

    def level_mapping(self, level: Level) -> Tuple[np.ndarray, np.ndarray]:
        """Grid index of every tag and the first fine cell of every coarse cell."""
        tag_index = np.searchsorted(self.grid, level.tags)
        tag_index = np.minimum(tag_index, len(self.grid) - 1)
        if not np.array_equal(self.grid[tag_index], level.tags):
            missing = level.tags[self.grid[tag_index] != level.tags]
            raise TagNotOnGridError(f"Tags {missing[:5].tolist()} are not grid points")
        starts = np.searchsorted(self.cells.lo, level.cells.lo)
        starts = np.minimum(starts, self.n_cells - 1)
        if not np.array_equal(self.cells.lo[starts], level.cells.lo) or starts[0] != 0:
            raise TagNotOnGridError("Level cells are not unions of model cells")
        return tag_index, starts

    def aggregation(self, level: Level) -> np.ndarray:
        """0/1 matrix mapping fine cells to the level's cells."""
        _, starts = self.level_mapping(level)
        owner = np.searchsorted(starts, np.arange(self.n_cells), side="right") - 1
        agg = np.zeros((self.n_cells, len(level)))
        agg[np.arange(self.n_cells), owner] = 1.0
        return agg


def make_model(
    spec: Dict[str, Any],
    domain: Interval,
    levels: Sequence[Level],
    factorize_model: bool = True,
) -> GaussianGridModel:
    if spec.get("name") not in MODEL_NAMES:
        raise ValueError(f"Unknown Gaussian model: {spec.get('name')}")
    kernel = model_kernel(spec, domain)
    grid = common_refinement(levels)
    cells = Cells.from_edges(grid, domain.closed_left, domain.closed_right)
    construction = _construction(spec)

    cov_mm = _symmetrize(kernel.cross.c_m.cell_matrix(cells, cells))
    if construction == "increments":
        if domain.lo != 0:
            raise ValueError(f"Increment models start at 0, got {domain.as_list()}")
        # Z at breakpoint i is the running sum of the first i cell masses
        running = np.tril(np.ones((len(grid), len(cells))), k=-1)
        cov_zm = running @ cov_mm
        cov_zz = _symmetrize(cov_zm @ running.T)
    else:
        cov_zz = _symmetrize(
            np.asarray(kernel.cross.c_z(grid[:, None], grid[None, :]), dtype=float)
        )
        cov_zm = kernel.evaluate_grid(grid, cells)

    model = GaussianGridModel(
        spec=dict(spec),
        domain=domain,
        kernel=kernel,
        grid=grid,
        cells=cells,
        cov_zz=cov_zz,
        cov_zm=cov_zm,
        cov_mm=cov_mm,
        construction=construction,
    )
    if factorize_model and construction == "loadings":
        # joint covariance has rank m; draw exactly from the loadings
        model.factor = finite_image_loadings(spec["components"], grid, cells)
    elif factorize_model:
        target = cov_mm if construction == "increments" else _symmetrize(model.joint_covariance())
        model.factor, model.jitter = factorize(target, f"{spec['name']} model")
    logger.info(
        f"Model {spec['name']} ({construction}): {model.n_points} points, "
        f"{model.n_cells} cells, jitter {model.jitter:g}"
    )
    return model


@dataclass
class SampleBatch:
    z: np.ndarray
    m: np.ndarray
    seed: int
    count: int

    def columns(self, index: Sequence[int]) -> np.ndarray:
        """Joint coordinates: indices below n_points address Z, the rest M."""
        joint = np.hstack([self.z, self.m])
        return joint[:, list(index)]


def _draw(model: GaussianGridModel, rng: np.random.Generator, size: int, seed: int) -> SampleBatch:
    if model.factor is None:
        raise FactorizationError("Model was built without a factorization", model.jitter)
    normals = rng.standard_normal((size, model.factor.shape[1]))
    x = normals @ model.factor.T
    if model.construction == "increments":
        m = x
        z = np.hstack([np.zeros((size, 1)), np.cumsum(m, axis=1)])
    else:
        z, m = x[:, : model.n_points], x[:, model.n_points :]
    return SampleBatch(z, m, seed, size)


def iter_batches(
    model: GaussianGridModel, count: int, seed: int, block_size: int = 4096
) -> Iterator[SampleBatch]:
    """Blocks of i.i.d. joint draws; block k uses a stream derived from (seed, k)."""
    for block, start in enumerate(range(0, count, block_size)):
        size = min(block_size, count - start)
        yield _draw(model, make_rng(seed, block), size, seed)


def sample(
    model: GaussianGridModel, count: int, seed: int, block_size: int = 4096
) -> SampleBatch:
    blocks = list(iter_batches(model, count, seed, block_size))
    if not blocks:
        return SampleBatch(
            np.zeros((0, model.n_points)), np.zeros((0, model.n_cells)), seed, 0
        )
    return SampleBatch(
        np.vstack([b.z for b in blocks]),
        np.vstack([b.m for b in blocks]),
        seed,
        count,
    )


def mc_stochastic_sums(
    batch: SampleBatch, tag_index: np.ndarray, starts: np.ndarray
) -> np.ndarray:
    """Per-sample sum over coarse cells of Z(x_j) M(I_j)."""
    if batch.count == 0:
        return np.zeros(0)
    if np.max(tag_index) >= batch.z.shape[1] or np.max(starts) >= batch.m.shape[1]:
        raise TagNotOnGridError("Mapping does not fit the batch's grid")
    coarse = np.add.reduceat(batch.m, starts, axis=1)
    return np.sum(batch.z[:, tag_index] * coarse, axis=1)


def l2_gap(
    batch: Optional[SampleBatch], sums_a: np.ndarray, sums_b: np.ndarray
) -> Tuple[float, float]:
    """
    Empirical E[(S_A - S_B)^2] and its standard error. Both sums must hold one
    value per sample of the batch; pass batch=None for sums streamed from
    iter_batches.
    """
    sums_a = np.asarray(sums_a, dtype=float)
    sums_b = np.asarray(sums_b, dtype=float)
    if sums_a.ndim != 1 or sums_a.shape != sums_b.shape:
        raise BatchMismatchError(
            f"Sums of shapes {sums_a.shape} and {sums_b.shape} do not share one batch"
        )
    if batch is not None and len(sums_a) != batch.count:
        raise BatchMismatchError(
            f"Sums hold {len(sums_a)} values but the batch has {batch.count} samples"
        )
    if not (np.all(np.isfinite(sums_a)) and np.all(np.isfinite(sums_b))):
        raise BatchMismatchError("Sums contain non-finite values")
    squared = (sums_a - sums_b) ** 2
    return mc_stats.sample_mean(squared), mc_stats.standard_error(squared)


def discrete_targets(model: GaussianGridModel, level: Level) -> Tuple[float, float]:
    """Exact mean and variance of the level's stochastic Riemann sum under the model."""
    tag_index, _ = model.level_mapping(level)
    agg = model.aggregation(level)
    c_z = model.cov_zz[np.ix_(tag_index, tag_index)]
    c_m = agg.T @ model.cov_mm @ agg
    k = model.cov_zm[tag_index] @ agg
    mean = math.fsum(np.diag(k))
    var = math.fsum((c_z * c_m).ravel()) + math.fsum((k * k.T).ravel())
    return mean, var


def integral_cz_dcm(cross: CrossCovariance, domain: Interval, n: int = 256) -> float:
    """Midpoint Riemann quadrature of C_Z against the measure C_M over D x D."""
    cells = Cells.from_edges(
        np.linspace(domain.lo, domain.hi, n + 1), domain.closed_left, domain.closed_right
    )
    mid = (cells.lo + cells.hi) / 2
    c_z = np.asarray(cross.c_z(mid[:, None], mid[None, :]), dtype=float)
    return math.fsum((c_z * cross.c_m.cell_matrix(cells, cells)).ravel())


def abs_continuous_reference(
    model: Union[GaussianGridModel, Dict[str, Any]], domain: Interval
) -> float:
    """Integral of C_{Z,U}(x, x) against mu (Lebesgue) over the domain."""
    spec = model.spec if isinstance(model, GaussianGridModel) else model
    c_name = spec.get("c", "min")
    if c_name not in ABS_CONTINUOUS:
        raise ValueError(f"Unknown abs_continuous covariance: {c_name}")
    diagonal = ABS_CONTINUOUS[c_name][3]
    return integrate_measure(Lebesgue(), diagonal, domain)


class IsserlisResult(BaseModel):
    columns: List[List[int]]
    empirical: List[float]
    predicted: List[float]
    z: List[float]
    max_abs_z: float
    passed: bool


def _pick_tuples(model: GaussianGridModel, count: int, seed: int) -> List[List[int]]:
    variances = np.diag(model.joint_covariance())
    usable = np.flatnonzero(variances > 1e-12 * np.max(variances))
    rng = make_rng(seed, 4)
    return [sorted(rng.choice(usable, size=4, replace=True).tolist()) for _ in range(count)]


def _isserlis_predicted(model: GaussianGridModel, columns: Sequence[List[int]]) -> Tuple[np.ndarray, np.ndarray]:
    joint = model.joint_covariance()
    std = np.sqrt(np.diag(joint))
    predicted = []
    for i, j, k, l in columns:
        r = joint[np.ix_([i, j, k, l], [i, j, k, l])] / np.outer(std[[i, j, k, l]], std[[i, j, k, l]])
        predicted.append(r[0, 1] * r[2, 3] + r[0, 2] * r[1, 3] + r[0, 3] * r[1, 2])
    return np.array(predicted), std


def _as_batches(batches: Union[SampleBatch, Iterable[SampleBatch]]) -> Iterable[SampleBatch]:
    return [batches] if isinstance(batches, SampleBatch) else batches


def _stream(
    batches: Union[SampleBatch, Iterable[SampleBatch]],
    mappings: Sequence[Tuple[np.ndarray, np.ndarray]],
    columns: Sequence[List[int]],
    std: Optional[np.ndarray],
) -> Tuple[List[np.ndarray], np.ndarray]:
    sums = [[] for _ in mappings]
    products = []
    for batch in _as_batches(batches):
        for k, (tag_index, starts) in enumerate(mappings):
            sums[k].append(mc_stochastic_sums(batch, tag_index, starts))
        if columns:
            flat = [c for quad in columns for c in quad]
            x = batch.columns(flat) / std[flat]
            products.append(np.prod(x.reshape(batch.count, len(columns), 4), axis=2))
    stacked = [np.concatenate(s) if s else np.zeros(0) for s in sums]
    prods = np.vstack(products) if products else np.zeros((0, len(columns)))
    return stacked, prods


def _isserlis_result(columns, predicted, products) -> IsserlisResult:
    empirical, z = [], []
    for k in range(len(columns)):
        emp = mc_stats.sample_mean(products[:, k])
        se = mc_stats.standard_error(products[:, k])
        empirical.append(emp)
        z.append(mc_stats.z_score(emp, float(predicted[k]), se))
    max_abs_z = max((abs(v) for v in z), default=0.0)
    return IsserlisResult(
        columns=[list(map(int, c)) for c in columns],
        empirical=empirical,
        predicted=[float(p) for p in predicted],
        z=z,
        max_abs_z=max_abs_z,
        passed=max_abs_z <= ISSERLIS_SIGMAS,
    )


def isserlis_check(
    batches: Union[SampleBatch, Iterable[SampleBatch]],
    model: GaussianGridModel,
    tuples: int = 20,
    seed: int = 0,
) -> IsserlisResult:
    """Empirical E[X1 X2 X3 X4] against the pairing sum on random coordinate 4-tuples."""
    columns = _pick_tuples(model, tuples, seed)
    predicted, std = _isserlis_predicted(model, columns)
    _, products = _stream(batches, [], columns, std)
    return _isserlis_result(columns, predicted, products)


class TagStats(BaseModel):
    tag: str
    mean: float
    se_mean: float
    var: float
    se_var: float
    l2_gap: float
    l2_gap_se: float
    l2_reference: str
    discrete_mean: float
    discrete_var: float
    z_mean: float
    mean_ci: List[float]


class LevelDiagnostics(BaseModel):
    n: int
    jitter: float
    points: int
    cells: int
    stats: List[TagStats]


class MomentDiagnostics(BaseModel):
    n: int
    tag: str
    mean: float
    se_mean: float
    var: float
    se_var: float
    target_mean: float
    target_var: float
    integral_cz_dcm: float
    quasi_value: float
    slack_mean: float
    slack_var: float
    z_scores: Dict[str, float]
    mean_ok: bool
    var_ok: bool
    isserlis: IsserlisResult


class SimulationReport(BaseModel):
    model: Dict[str, Any]
    domain: List[float]
    samples: int
    seed: int
    block_size: int
    levels: List[LevelDiagnostics]
    moments: List[MomentDiagnostics] = []
    refused: Optional[str] = None
    timestamp: str = Field(default_factory=_current_timestamp)


def level_systems(
    domain: Interval, tags: Sequence[str], seed: int = 0
) -> List[RiemannSystem]:
    return [make_system(domain, "uniform", tag, seed) for tag in tags]


def run_level(
    spec: Dict[str, Any],
    domain: Interval,
    n: int,
    tags: Sequence[str],
    samples: int,
    seed: int,
    block_size: int = 4096,
    system_seed: int = 0,
) -> LevelDiagnostics:
    """Monte Carlo statistics of the uniform level-n sums for each tag rule."""
    systems = level_systems(domain, tags, system_seed)
    levels = [build_level(s, n) for s in systems]
    model = make_model(spec, domain, levels)
    mappings = [model.level_mapping(level) for level in levels]
    sums, _ = _stream(iter_batches(model, samples, seed, block_size), mappings, [], None)

    stats = []
    for k, (tag, level) in enumerate(zip(tags, levels)):
        ref = 0 if k > 0 else (1 if len(tags) > 1 else 0)
        gap, gap_se = l2_gap(None, sums[k], sums[ref])
        d_mean, d_var = discrete_targets(model, level)
        mean = mc_stats.sample_mean(sums[k])
        se = mc_stats.standard_error(sums[k])
        stats.append(
            TagStats(
                tag=tag,
                mean=mean,
                se_mean=se,
                var=mc_stats.sample_variance(sums[k]),
                se_var=mc_stats.variance_standard_error(sums[k]),
                l2_gap=gap,
                l2_gap_se=gap_se,
                l2_reference=tags[ref],
                discrete_mean=d_mean,
                discrete_var=d_var,
                z_mean=mc_stats.z_score(mean, d_mean, se),
                mean_ci=list(mc_stats.confidence_interval(sums[k], z=3.0)),
            )
        )
        logger.info(
            f"n={n} {tag}: mean {mean:.5f} (exact {d_mean:.5f}), gap vs {tags[ref]} {gap:.5g}"
        )
    return LevelDiagnostics(
        n=n, jitter=model.jitter, points=model.n_points, cells=model.n_cells, stats=stats
    )


def moment_checks(
    model: GaussianGridModel,
    batches: Union[SampleBatch, Iterable[SampleBatch]],
    system: RiemannSystem,
    n: int,
    selfint_report: SelfIntegralReport,
    quasi_report: SelfIntegralReport,
    isserlis_tuples: int = 20,
    seed: int = 0,
    quadrature_n: int = 256,
) -> MomentDiagnostics:
    """
    Compares the Monte Carlo mean and variance of the level-n sums with the
    self-integral and with int C_Z dC_M plus the quasi-self-integral. The
    discretization slack is the Richardson estimate |T_n - T_n/2| / (2^p - 1)
    from the exact finite-level moments T.
    """
    for report in (selfint_report, quasi_report):
        if report.verdict != Verdict.CONVERGED:
            raise MomentCheckRefused(
                f"{report.kernel} report is {report.verdict.value}; no limit to compare"
            )

    level = build_level(system, n)
    half = build_level(system, max(n // 2, 1))
    mapping = model.level_mapping(level)
    columns = _pick_tuples(model, isserlis_tuples, seed)
    predicted, std = _isserlis_predicted(model, columns)
    (sums,), products = _stream(batches, [mapping], columns, std)

    mean = mc_stats.sample_mean(sums)
    se_mean = mc_stats.standard_error(sums)
    var = mc_stats.sample_variance(sums)
    se_var = mc_stats.variance_standard_error(sums)

    cz_dcm = integral_cz_dcm(model.kernel.cross, model.domain, quadrature_n)
    target_mean = selfint_report.value
    target_var = cz_dcm + quasi_report.value

    t_mean, t_var = discrete_targets(model, level)
    half_model = make_model(model.spec, model.domain, [half], factorize_model=False)
    h_mean, h_var = discrete_targets(half_model, half)
    p = model.kernel.order or 1.0
    slack_mean = abs(t_mean - h_mean) / (2.0**p - 1.0)
    slack_var = abs(t_var - h_var) / (2.0**p - 1.0)

    diagnostics = MomentDiagnostics(
        n=n,
        tag=system.tags.kind,
        mean=mean,
        se_mean=se_mean,
        var=var,
        se_var=se_var,
        target_mean=target_mean,
        target_var=target_var,
        integral_cz_dcm=cz_dcm,
        quasi_value=quasi_report.value,
        slack_mean=slack_mean,
        slack_var=slack_var,
        z_scores={
            "mean": mc_stats.z_score(mean, target_mean, se_mean),
            "var": mc_stats.z_score(var, target_var, se_var),
        },
        mean_ok=mc_stats.within(mean, target_mean, se_mean, 3.0, slack_mean),
        var_ok=mc_stats.within(var, target_var, se_var, 3.0, slack_var),
        isserlis=_isserlis_result(columns, predicted, products),
    )
    logger.info(
        f"Moments n={n} {system.tags.kind}: mean {mean:.5f} vs {target_mean:.5f}, "
        f"var {var:.5f} vs {target_var:.5f}"
    )
    return diagnostics
