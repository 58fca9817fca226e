import pytest

from conftest import FBM_QUASI, FBM_SELFINT
from kernels import POINT_FUNCTIONS, make_kernel, second_order, tensor
from measures import Interval, Lebesgue
from riemann import build_level, default_ensemble, kernel_riemann_sum, levels_between
from selfint import (
    NotSelfIntegrableError,
    SelfIntegralReport,
    Verdict,
    additivity_check,
    assess_traces,
    async_estimate_self_integral,
    estimate_order,
    estimate_quasi_self_integral,
    estimate_self_integral,
    richardson,
)

FBM_N_MAX = 2**14


def _trace(fn, levels=(4, 8, 16, 32, 64, 128)):
    return [(n, fn(n)) for n in levels]


def test_estimate_order_recovers_power():
    sums = [s for _, s in _trace(lambda n: 0.5 + n**-0.5)]
    assert estimate_order(sums) == pytest.approx(0.5, abs=1e-12)
    assert estimate_order([0.5, 0.5, 0.5]) is None
    assert estimate_order([1.0, 2.0]) is None


def test_richardson_removes_leading_error():
    trace = _trace(lambda n: 0.5 - 0.5 * n**-0.5)
    assert richardson(trace, 0.5)[-1][1] == pytest.approx(0.5, abs=1e-12)
    assert richardson(trace)[-1][1] == pytest.approx(0.5, abs=1e-12)


def test_assess_traces_converged():
    traces = {
        "a": _trace(lambda n: 0.5 - 1 / n),
        "b": _trace(lambda n: 0.5 + 1 / n),
    }
    result = assess_traces(traces, tol=1e-3)
    assert result["verdict"] == Verdict.CONVERGED
    assert result["value"] == pytest.approx(0.5, abs=1e-9)


def test_assess_traces_tag_dependent():
    traces = {"left": _trace(lambda n: 0.0), "mid": _trace(lambda n: 0.5)}
    result = assess_traces(traces, tol=1e-3, bound=1.0)
    assert result["verdict"] == Verdict.TAG_DEPENDENT
    assert result["value"] is None
    assert result["values"] == {"left": 0.0, "mid": 0.5}


def test_assess_traces_unbounded_needs_growth_past_bound():
    growing = _trace(lambda n: n**0.125)
    assert assess_traces({"s": growing}, tol=1e-3, bound=1.5)["verdict"] == Verdict.UNBOUNDED
    assert assess_traces({"s": growing}, tol=1e-3, bound=10.0)["verdict"] != Verdict.UNBOUNDED
    flat = _trace(lambda n: 2.0)
    assert assess_traces({"s": flat}, tol=1e-3, bound=1.5)["verdict"] == Verdict.CONVERGED


def test_fbm_self_integral_converges(fbm_kernel, unit):
    report = estimate_self_integral(fbm_kernel, unit, n_max=FBM_N_MAX, tol=1e-3)
    assert report.verdict == Verdict.CONVERGED
    assert report.value == pytest.approx(FBM_SELFINT, abs=1e-3)
    assert len(report.traces) == 12
    assert report.n_max == FBM_N_MAX


def test_fbm_every_system_within_tolerance_at_4096(fbm_kernel, unit):
    for system in default_ensemble(unit, seed=11):
        total = kernel_riemann_sum(fbm_kernel, build_level(system, 4096))
        assert abs(total - FBM_SELFINT) <= 0.02, system.system_id


def test_brownian_self_integral_is_tag_dependent(brownian_kernel, unit):
    report = estimate_self_integral(brownian_kernel, unit, n_max=FBM_N_MAX)
    assert report.verdict == Verdict.TAG_DEPENDENT
    assert report.values["uniform/left"] == 0.0
    assert report.values["uniform/midpoint"] == 0.5


def test_singular_self_integral_is_unbounded(singular_kernel):
    domain = Interval(-1.0, 1.0)
    ensemble = default_ensemble(domain, ["uniform"], ["left", "midpoint"])
    report = estimate_self_integral(
        singular_kernel, domain, ensemble=ensemble, n_min=16, n_max=FBM_N_MAX
    )
    assert report.verdict == Verdict.UNBOUNDED
    assert report.bound == pytest.approx(16 / 7, rel=1e-9)
    assert report.growth[-1] > report.growth[0]


def test_tensor_kernel_self_integral(unit):
    kernel = tensor(POINT_FUNCTIONS["identity"], Lebesgue())
    report = estimate_self_integral(kernel, unit, n_max=4096)
    assert report.verdict == Verdict.CONVERGED
    assert report.value == pytest.approx(0.5, abs=1e-3)


def test_psi_mu_self_integral(unit):
    kernel = make_kernel(
        {"name": "psi_mu", "params": {"psi": "product", "base": {"name": "tensor"}, "panels": 256}}
    )
    ensemble = default_ensemble(unit, ["uniform", "random"], ["left", "midpoint"], seed=2)
    report = estimate_self_integral(kernel, unit, ensemble=ensemble, n_max=1024)
    assert report.verdict == Verdict.CONVERGED
    assert report.value == pytest.approx(0.25, abs=1e-3)


@pytest.mark.asyncio
async def test_async_runner_keeps_ensemble_order(brownian_kernel, unit):
    ensemble = default_ensemble(unit, ["uniform", "dyadic"], ["midpoint", "left"])
    report = await async_estimate_self_integral(
        brownian_kernel, unit, ensemble=ensemble, n_max=64
    )
    assert list(report.traces) == [s.system_id for s in ensemble]
    assert [n for n, _ in report.traces["uniform/left"]] == levels_between(4, 64)


def test_empty_ensemble_rejected(fbm_kernel, unit):
    with pytest.raises(ValueError):
        estimate_self_integral(fbm_kernel, unit, ensemble=[], n_max=16)


def test_report_serialises_verdict_as_text(brownian_kernel, unit):
    report = estimate_self_integral(brownian_kernel, unit, n_max=16)
    dumped = report.model_dump(mode="json")
    assert dumped["verdict"] == "TagDependent"
    assert SelfIntegralReport.model_validate(dumped).verdict == Verdict.TAG_DEPENDENT


def test_brownian_quasi_self_integral_is_zero(brownian_kernel, unit):
    report = estimate_quasi_self_integral(second_order(brownian_kernel), unit, unit, n_max=256)
    assert report.verdict == Verdict.CONVERGED
    assert abs(report.value) < 0.03
    assert report.traces["uniform/left|uniform/left"][-1][1] == 0.0


@pytest.mark.slow
def test_fbm_quasi_self_integral(fbm_kernel, unit):
    report = estimate_quasi_self_integral(second_order(fbm_kernel), unit, unit, n_max=1024)
    for _, trace in report.traces.items():
        assert trace[-1][1] == pytest.approx(FBM_QUASI, abs=0.03)
    assert report.verdict == Verdict.CONVERGED


def test_fbm_additivity(fbm_kernel, unit):
    parts = additivity_check(
        fbm_kernel,
        unit,
        0.5,
        schemes=["uniform", "dyadic"],
        tags=["left", "midpoint"],
        n_max=FBM_N_MAX,
        tol=1e-3,
    )
    assert parts.left == pytest.approx(0.5**1.5 / 2, abs=1e-3)
    assert abs(parts.left + parts.right - parts.whole) <= 2e-3


def test_tensor_additivity(unit):
    kernel = tensor(POINT_FUNCTIONS["square"], Lebesgue())
    parts = additivity_check(kernel, unit, 0.25, n_max=4096, tol=1e-3)
    assert abs(parts.left + parts.right - parts.whole) <= 2e-3
    assert parts.whole == pytest.approx(1 / 3, abs=1e-3)


def test_additivity_refuses_tag_dependent_kernel(brownian_kernel, unit):
    with pytest.raises(NotSelfIntegrableError):
        additivity_check(brownian_kernel, unit, 0.5, n_max=64)
