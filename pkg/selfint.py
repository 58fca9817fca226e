import asyncio
import logging
import math
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from kernels import KernelHandle, SecondOrderKernel, local_bound_probe
from measures import Interval
from riemann import (
    RiemannSystem,
    build_level,
    default_ensemble,
    double_riemann_sum,
    kernel_riemann_sum,
    levels_between,
)
from utils import _current_timestamp

logger = logging.getLogger(__name__)

Trace = List[Tuple[int, float]]

GROWTH_WINDOW = 5
ORDER_RANGE = (0.25, 4.0)
FLAT_DIFFERENCE = 1e-14


class NotSelfIntegrableError(ValueError):
    pass


class Verdict(str, Enum):
    CONVERGED = "Converged"
    TAG_DEPENDENT = "TagDependent"
    UNBOUNDED = "Unbounded"


class SelfIntegralReport(BaseModel):
    kernel: str
    params: Dict[str, Any] = {}
    domain: List[List[float]]
    verdict: Verdict
    value: Optional[float] = None
    values: Dict[str, float] = {}
    extrapolated: Dict[str, float] = {}
    growth: Optional[List[float]] = None
    growth_system: Optional[str] = None
    bound: Optional[float] = None
    traces: Dict[str, List[Tuple[int, float]]]
    tol: float
    n_max: int
    limitation: str = (
        "Verdict drawn from a finite ensemble of Riemann systems at finite levels"
    )
    timestamp: str = Field(default_factory=_current_timestamp)


def trace_system(kernel: KernelHandle, system: RiemannSystem, levels: Sequence[int]) -> Trace:
    trace = []
    for n in levels:
        level = build_level(system, n)
        trace.append((n, kernel_riemann_sum(kernel, level)))
    logger.debug(f"{kernel.name} {system.system_id}: final sum {trace[-1][1]}")
    return trace


def trace_pair(
    k2: SecondOrderKernel,
    system_a: RiemannSystem,
    system_b: RiemannSystem,
    levels: Sequence[int],
) -> Trace:
    trace = []
    for n in levels:
        value = double_riemann_sum(k2, build_level(system_a, n), build_level(system_b, n))
        trace.append((n, value))
    logger.debug(
        f"{k2.base.name} {system_a.system_id}|{system_b.system_id}: final sum {trace[-1][1]}"
    )
    return trace


def estimate_order(sums: Sequence[float]) -> Optional[float]:
    """Convergence order from the last three doubling levels, or None if not geometric."""
    if len(sums) < 3:
        return None
    d1 = sums[-2] - sums[-3]
    d2 = sums[-1] - sums[-2]
    if abs(d1) <= FLAT_DIFFERENCE or abs(d2) <= FLAT_DIFFERENCE:
        return None
    ratio = d1 / d2
    if ratio <= 1.0:
        return None
    return min(max(math.log2(ratio), ORDER_RANGE[0]), ORDER_RANGE[1])


def richardson(trace: Trace, order: Optional[float] = None) -> Trace:
    """
    Richardson extrapolation of a doubling trace S_n = S + c n^-p:
    R_n = (2^p S_n - S_{n/2}) / (2^p - 1). Without a usable order the raw
    trace is returned.
    """
    sums = [s for _, s in trace]
    p = order if order is not None else estimate_order(sums)
    if p is None or len(trace) < 2:
        return list(trace)
    factor = 2.0**p
    out = [trace[0]]
    for (n, s), (_, prev) in zip(trace[1:], trace[:-1]):
        out.append((n, (factor * s - prev) / (factor - 1.0)))
    return out


def _increasing_tail(values: Sequence[float], window: int = GROWTH_WINDOW) -> bool:
    tail = list(values)[-window:]
    return len(tail) == window and all(b > a for a, b in zip(tail[:-1], tail[1:]))


def assess_traces(
    traces: Dict[str, Trace],
    tol: float,
    order: Optional[float] = None,
    bound: Optional[float] = None,
) -> Dict[str, Any]:
    values = {sid: trace[-1][1] for sid, trace in traces.items()}
    extrapolated, stable = {}, {}
    for sid, trace in traces.items():
        ext = richardson(trace, order)
        extrapolated[sid] = ext[-1][1]
        raw_ok = len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) <= tol
        ext_ok = len(ext) >= 2 and abs(ext[-1][1] - ext[-2][1]) <= tol
        stable[sid] = raw_ok or ext_ok

    result = {
        "values": values,
        "extrapolated": extrapolated,
        "verdict": Verdict.TAG_DEPENDENT,
        "value": None,
        "growth": None,
        "growth_system": None,
    }

    if bound is not None:
        for sid, trace in traces.items():
            magnitudes = [abs(s) for _, s in trace]
            if max(magnitudes) > bound and _increasing_tail(magnitudes):
                logger.info(f"{sid} exceeds bound {bound:.6g} and keeps growing")
                result.update(
                    verdict=Verdict.UNBOUNDED, growth=magnitudes, growth_system=sid
                )
                return result

    finals = list(extrapolated.values())
    spread = max(finals) - min(finals)
    if all(stable.values()) and spread <= 2 * tol:
        result.update(verdict=Verdict.CONVERGED, value=math.fsum(finals) / len(finals))
    else:
        unstable = [sid for sid, ok in stable.items() if not ok]
        logger.warning(
            f"Inconclusive: spread {spread:.3g} (tol {tol}), unstable systems {unstable}"
        )
    return result


async def async_estimate_self_integral(
    kernel: KernelHandle,
    domain: Interval,
    ensemble: Optional[Sequence[RiemannSystem]] = None,
    n_max: int = 4096,
    tol: float = 1e-3,
    n_min: int = 4,
    unbounded_factor: float = 1.0,
    probe_grid: int = 65,
    probe_depth: int = 8,
) -> SelfIntegralReport:
    ensemble = list(ensemble) if ensemble is not None else default_ensemble(domain)
    if not ensemble:
        raise ValueError("Ensemble must not be empty")
    levels = levels_between(n_min, n_max)
    logger.info(
        f"Self-integral of {kernel.name} on {domain.as_list()}: "
        f"{len(ensemble)} systems, levels {levels[0]}..{levels[-1]}"
    )

    loop = asyncio.get_running_loop()
    tasks = [
        loop.run_in_executor(None, trace_system, kernel, system, levels)
        for system in ensemble
    ]
    results = await asyncio.gather(*tasks)
    traces = {system.system_id: trace for system, trace in zip(ensemble, results)}

    bound = unbounded_factor * local_bound_probe(
        kernel, domain, domain, probe_grid, probe_depth
    )
    assessed = assess_traces(traces, tol, kernel.order, bound)
    report = SelfIntegralReport(
        kernel=kernel.name,
        params=kernel.params,
        domain=[domain.as_list()],
        traces=traces,
        tol=tol,
        n_max=levels[-1],
        bound=bound,
        **assessed,
    )
    logger.info(f"{kernel.name}: {report.verdict.value} value={report.value}")
    return report


def estimate_self_integral(kernel: KernelHandle, domain: Interval, **kwargs) -> SelfIntegralReport:
    return asyncio.run(async_estimate_self_integral(kernel, domain, **kwargs))


async def async_estimate_quasi_self_integral(
    k2: SecondOrderKernel,
    domain_a: Interval,
    domain_b: Interval,
    ensemble_a: Optional[Sequence[RiemannSystem]] = None,
    ensemble_b: Optional[Sequence[RiemannSystem]] = None,
    n_max: int = 1024,
    tol: float = 0.03,
    n_min: int = 4,
) -> SelfIntegralReport:
    default_schemes, default_tags = ("uniform", "random"), ("left", "midpoint")
    ensemble_a = list(ensemble_a or default_ensemble(domain_a, default_schemes, default_tags))
    ensemble_b = list(ensemble_b or default_ensemble(domain_b, default_schemes, default_tags))
    levels = levels_between(n_min, n_max)
    pairs = [(sa, sb) for sa in ensemble_a for sb in ensemble_b]
    logger.info(
        f"Quasi-self-integral of {k2.base.name}: {len(pairs)} system pairs, "
        f"levels {levels[0]}..{levels[-1]}"
    )

    loop = asyncio.get_running_loop()
    tasks = [
        loop.run_in_executor(None, trace_pair, k2, sa, sb, levels) for sa, sb in pairs
    ]
    results = await asyncio.gather(*tasks)
    traces = {
        f"{sa.system_id}|{sb.system_id}": trace
        for (sa, sb), trace in zip(pairs, results)
    }

    assessed = assess_traces(traces, tol)
    report = SelfIntegralReport(
        kernel=k2.base.name,
        params=k2.base.params,
        domain=[domain_a.as_list(), domain_b.as_list()],
        traces=traces,
        tol=tol,
        n_max=levels[-1],
        **assessed,
    )
    logger.info(f"{k2.base.name} (second order): {report.verdict.value} value={report.value}")
    return report


def estimate_quasi_self_integral(
    k2: SecondOrderKernel, domain_a: Interval, domain_b: Interval, **kwargs
) -> SelfIntegralReport:
    return asyncio.run(async_estimate_quasi_self_integral(k2, domain_a, domain_b, **kwargs))


class Additivity(NamedTuple):
    left: float
    right: float
    whole: float


def additivity_check(
    kernel: KernelHandle,
    domain: Interval,
    split: float,
    schemes: Sequence[str] = ("uniform", "dyadic", "random"),
    tags: Sequence[str] = ("left", "right", "midpoint", "random"),
    seed: int = 0,
    **kwargs,
) -> Additivity:
    """Self-integrals over [lo, c), [c, hi] and the whole domain."""
    left_domain, right_domain = domain.split(split)
    reports = []
    for part in (domain, left_domain, right_domain):
        ensemble = default_ensemble(part, schemes, tags, seed)
        report = estimate_self_integral(kernel, part, ensemble=ensemble, **kwargs)
        if report.verdict != Verdict.CONVERGED:
            raise NotSelfIntegrableError(
                f"{kernel.name} is {report.verdict.value} on {part.as_list()}"
            )
        reports.append(report)
    whole, left, right = (r.value for r in reports)
    logger.info(f"{kernel.name} additivity: {left} + {right} vs {whole}")
    return Additivity(left, right, whole)
