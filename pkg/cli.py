"""
Command-line driver: runs self-integral, quasi-self-integral, Gaussian
simulation and tensor-product experiments from JSON configs and writes
JSON reports plus CSV traces for plotting.

    python cli.py selfint --config configs/fbm_selfint.json --out out
    python cli.py catalog
"""

import argparse
import logging
import os
import sys
from typing import Annotated, Any, Dict, List, Literal, NamedTuple, Optional

import pydash as py_
from dotenv import load_dotenv
from path import Path
from pydantic import BaseModel, ConfigDict, Field
from rich.console import Console
from rich.logging import RichHandler
from rich.pretty import pretty_repr
from rich.table import Table

import gaussian
import tensorprod
from gaussian import FactorizationError, MomentCheckRefused, SimulationReport
from json_store import RunStore, load_json_file, save_csv_rows, save_json_file
from kernels import CATALOG, make_kernel, second_order
from measures import Interval
from riemann import build_level, default_ensemble, make_system
from selfint import (
    SelfIntegralReport,
    Verdict,
    estimate_quasi_self_integral,
    estimate_self_integral,
)

load_dotenv()

logger = logging.getLogger(__name__)

OUT_DIR_ENV = "SELFINT_OUT_DIR"
DEFAULT_OUT_DIR = "out"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FACTORIZATION = 4
VERDICT_EXIT_CODES = {
    Verdict.CONVERGED: 0,
    Verdict.TAG_DEPENDENT: 2,
    Verdict.UNBOUNDED: 3,
}

COMMANDS = ("selfint", "quasi", "simulate", "tensor", "catalog")
QUASI_SCHEMES = ("uniform", "random")
QUASI_TAGS = ("left", "midpoint")

U64 = Annotated[int, Field(ge=0, lt=2**64)]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(StrictModel):
    name: str
    params: Dict[str, Any] = {}


class EnsembleConfig(StrictModel):
    schemes: List[str] = ["uniform", "dyadic", "random"]
    tags: List[str] = ["left", "right", "midpoint", "random"]
    seed: U64 = 0
    eps_power: float = 2.0


class QuasiConfig(StrictModel):
    domain: Optional[List[float]] = None
    ensemble: Optional[EnsembleConfig] = None
    n_min: int = 4
    n_max: Optional[int] = None
    tol: float = 0.03


class McConfig(StrictModel):
    samples: int = Field(gt=1)
    seed: U64
    block_size: int = Field(default=4096, gt=0)
    levels: List[int] = [32, 64, 128, 256, 512]
    tags: List[str] = ["left", "midpoint"]
    moments_n: Optional[int] = None
    isserlis_tuples: int = 20


class TensorConfig(StrictModel):
    model: Dict[str, Any] = {"preset": "white_noise_pair"}
    psis: List[str] = ["one"]
    n: int = 64
    fubini: bool = False
    cov: bool = False
    tags_a: str = "midpoint"
    tags_b: str = "midpoint"


class OutputsConfig(StrictModel):
    dir: Optional[str] = None
    formats: List[Literal["json", "csv"]] = ["json", "csv"]


class ExperimentConfig(StrictModel):
    kernel: Optional[KernelConfig] = None
    domain: Optional[List[float]] = None
    ensemble: Optional[EnsembleConfig] = None
    n_min: int = 4
    n_max: Optional[int] = None
    tol: float = 1e-3
    unbounded_factor: float = 1.0
    quasi: Optional[QuasiConfig] = None
    model: Optional[Dict[str, Any]] = None
    mc: Optional[McConfig] = None
    tensor: Optional[TensorConfig] = None
    outputs: OutputsConfig = OutputsConfig()


class CommandResult(NamedTuple):
    exit_code: int
    outcome: str
    outputs: List[str]


class UsageError(ValueError):
    pass


class CliArgumentParser(argparse.ArgumentParser):
    # usage errors share the generic error code; 2 is reserved for TagDependent
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(
        description="Self-integrals of function-measure kernels and Gaussian stochastic integrals"
    )
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run")
    parser.add_argument("--config", help="Experiment config (JSON)")
    parser.add_argument("--out", help=f"Output directory (default ${OUT_DIR_ENV} or ./out)")
    parser.add_argument("--seed", type=int, help="Overrides every seed in the config")
    parser.add_argument("--n-max", type=int, help="Overrides the finest level")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    return parser


def load_config(
    config_path: str, seed: Optional[int] = None, n_max: Optional[int] = None
) -> ExperimentConfig:
    raw = load_json_file(config_path)
    if not isinstance(raw, dict):
        raise ValueError(f"Config {config_path} must hold a JSON object")
    if seed is not None:
        # random systems read ensemble.seed even when the section is absent
        py_.set_(raw, "ensemble.seed", seed)
        for section in ("mc", "quasi.ensemble"):
            if py_.get(raw, section):
                py_.set_(raw, f"{section}.seed", seed)
    if n_max is not None:
        py_.set_(raw, "n_max", n_max)
        if "quasi" in raw:
            py_.set_(raw, "quasi.n_max", n_max)
    cfg = ExperimentConfig.model_validate(raw)
    logger.debug(pretty_repr(cfg.model_dump(exclude_defaults=True)))
    return cfg


def _ensemble(domain: Interval, ensemble: Optional[EnsembleConfig]):
    ensemble = ensemble or EnsembleConfig()
    return default_ensemble(
        domain, ensemble.schemes, ensemble.tags, ensemble.seed, ensemble.eps_power
    )


def _domain(values: Optional[List[float]], default: Interval) -> Interval:
    if values is None:
        return default
    if len(values) != 2:
        raise ValueError(f"A domain is [lo, hi], got {values}")
    return Interval(float(values[0]), float(values[1]))


def _file_key(system_id: str) -> str:
    return system_id.replace("/", "-").replace("|", "_")


def _write_report(
    report: SelfIntegralReport, cfg: ExperimentConfig, out_dir: Path, name: str
) -> List[str]:
    outputs = []
    if "json" in cfg.outputs.formats:
        path = out_dir / f"{name}.json"
        save_json_file(path, report)
        outputs.append(str(path))
    if "csv" in cfg.outputs.formats:
        for system_id, trace in report.traces.items():
            path = out_dir / f"{name}_trace_{_file_key(system_id)}.csv"
            save_csv_rows(path, ["n", "sum"], trace)
            outputs.append(str(path))
    return outputs


def _print_verdict(report: SelfIntegralReport) -> None:
    table = Table(title=f"{report.kernel}: {report.verdict.value}")
    table.add_column("system")
    table.add_column("final sum", justify="right")
    table.add_column("extrapolated", justify="right")
    for system_id, value in report.values.items():
        table.add_row(system_id, f"{value:.6g}", f"{report.extrapolated[system_id]:.6g}")
    Console().print(table)


def _require_kernel(cfg: ExperimentConfig) -> KernelConfig:
    if cfg.kernel is None:
        raise ValueError("Config has no kernel section")
    return cfg.kernel


def cmd_selfint(cfg: ExperimentConfig, stem: str, out_dir: Path, quiet: bool = False) -> CommandResult:
    kernel = make_kernel(_require_kernel(cfg).model_dump())
    domain = _domain(cfg.domain, kernel.domain)
    report = estimate_self_integral(
        kernel,
        domain,
        ensemble=_ensemble(domain, cfg.ensemble),
        n_min=cfg.n_min,
        n_max=cfg.n_max or 4096,
        tol=cfg.tol,
        unbounded_factor=cfg.unbounded_factor,
    )
    outputs = _write_report(report, cfg, out_dir, f"{stem}_selfint")
    if not quiet:
        _print_verdict(report)
    return CommandResult(VERDICT_EXIT_CODES[report.verdict], report.verdict.value, outputs)


def _quasi_ensemble(quasi: QuasiConfig, outer: Optional[EnsembleConfig]) -> EnsembleConfig:
    """The quasi ensemble, else an outer ensemble that names systems, else the smaller default."""
    if quasi.ensemble is not None:
        return quasi.ensemble
    if outer is not None and outer.model_fields_set - {"seed"}:
        return outer
    return EnsembleConfig(
        schemes=list(QUASI_SCHEMES), tags=list(QUASI_TAGS), seed=outer.seed if outer else 0
    )


def cmd_quasi(cfg: ExperimentConfig, stem: str, out_dir: Path, quiet: bool = False) -> CommandResult:
    kernel = make_kernel(_require_kernel(cfg).model_dump())
    quasi = cfg.quasi or QuasiConfig()
    domain_a = _domain(cfg.domain, kernel.domain)
    domain_b = _domain(quasi.domain, domain_a)
    ensemble = _quasi_ensemble(quasi, cfg.ensemble)
    report = estimate_quasi_self_integral(
        second_order(kernel),
        domain_a,
        domain_b,
        ensemble_a=_ensemble(domain_a, ensemble),
        ensemble_b=_ensemble(domain_b, ensemble),
        n_min=quasi.n_min,
        n_max=quasi.n_max or cfg.n_max or 1024,
        tol=quasi.tol,
    )
    outputs = _write_report(report, cfg, out_dir, f"{stem}_quasi")
    if not quiet:
        _print_verdict(report)
    return CommandResult(VERDICT_EXIT_CODES[report.verdict], report.verdict.value, outputs)


def _moments(
    cfg: ExperimentConfig, spec: Dict[str, Any], domain: Interval
) -> List[gaussian.MomentDiagnostics]:
    """Runs the self-integral estimates the moment checks compare against."""
    mc = cfg.mc
    kernel = gaussian.model_kernel(spec, domain)
    quasi = cfg.quasi or QuasiConfig()
    selfint_report = estimate_self_integral(
        kernel, domain, n_max=cfg.n_max or 16384, tol=cfg.tol
    )
    quasi_report = estimate_quasi_self_integral(
        second_order(kernel), domain, domain, n_max=quasi.n_max or 1024, tol=quasi.tol
    )
    moments = []
    for tag in mc.tags:
        system = make_system(domain, "uniform", tag, mc.seed)
        model = gaussian.make_model(spec, domain, [build_level(system, mc.moments_n)])
        batches = gaussian.iter_batches(model, mc.samples, mc.seed, mc.block_size)
        moments.append(
            gaussian.moment_checks(
                model,
                batches,
                system,
                mc.moments_n,
                selfint_report,
                quasi_report,
                isserlis_tuples=mc.isserlis_tuples,
                seed=mc.seed,
            )
        )
    return moments


def cmd_simulate(cfg: ExperimentConfig, stem: str, out_dir: Path, quiet: bool = False) -> CommandResult:
    if cfg.mc is None or cfg.model is None:
        raise ValueError("simulate needs both a model and an mc section")
    mc = cfg.mc
    spec = cfg.model
    domain = _domain(cfg.domain, Interval(0.0, 1.0))

    levels = [
        gaussian.run_level(
            spec, domain, n, mc.tags, mc.samples, mc.seed, mc.block_size, mc.seed
        )
        for n in mc.levels
    ]
    moments, refused = [], None
    if mc.moments_n:
        try:
            moments = _moments(cfg, spec, domain)
        except MomentCheckRefused as e:
            logger.warning(f"Moment checks refused: {e}")
            refused = str(e)

    report = SimulationReport(
        model=spec,
        domain=domain.as_list(),
        samples=mc.samples,
        seed=mc.seed,
        block_size=mc.block_size,
        levels=levels,
        moments=moments,
        refused=refused,
    )
    outputs = []
    name = f"{stem}_simulate"
    if "json" in cfg.outputs.formats:
        path = out_dir / f"{name}.json"
        save_json_file(path, report)
        outputs.append(str(path))
    if "csv" in cfg.outputs.formats:
        for k, tag in enumerate(mc.tags):
            rows = [
                (d.n, d.stats[k].mean, d.stats[k].se_mean, d.stats[k].var, d.stats[k].l2_gap)
                for d in levels
            ]
            path = out_dir / f"{name}_diagnostics_{tag}.csv"
            save_csv_rows(path, ["n", "mean", "se_mean", "var", "l2_gap"], rows)
            outputs.append(str(path))
    return CommandResult(EXIT_OK, "refused" if refused else "ok", outputs)


def tensor_rows(cfg: ExperimentConfig) -> List[tensorprod.TensorRow]:
    tensor = cfg.tensor or TensorConfig()
    model = tensorprod.make_tensor_model(tensor.model)
    psis = [tensorprod.make_psi(name) for name in tensor.psis]
    if tensor.fubini and cfg.mc is None:
        raise ValueError("tensor.fubini needs an mc section")

    rows, means = [], {}
    for psi in psis:
        means[psi.name] = tensorprod.tensor_mean(model, psi, tensor.n)
        rows.append(
            tensorprod.TensorRow(psi=psi.name, kind="mean", n=tensor.n, analytic=means[psi.name])
        )
        if tensor.cov:
            cov = tensorprod.tensor_cov(model, psi, psi, tensor.n)
            rows.append(tensorprod.TensorRow(psi=psi.name, kind="cov", n=tensor.n, analytic=cov))
        if tensor.fubini:
            rows.append(
                tensorprod.fubini_mc_check(
                    model,
                    psi,
                    tensor.n,
                    cfg.mc.samples,
                    cfg.mc.seed,
                    tensor.tags_a,
                    tensor.tags_b,
                    cfg.mc.block_size,
                )
            )
    if {"indicator_closed", "indicator_open"} <= means.keys():
        gap = means["indicator_closed"] - means["indicator_open"]
        rows.append(
            tensorprod.TensorRow(psi="indicator", kind="indicator_gap", n=tensor.n, analytic=gap)
        )
        logger.info(f"Indicator gap (closed - open): {gap}")
    return rows


def cmd_tensor(cfg: ExperimentConfig, stem: str, out_dir: Path, quiet: bool = False) -> CommandResult:
    rows = tensor_rows(cfg)
    path = out_dir / f"{stem}_tensor.json"
    save_json_file(path, rows)
    if not quiet:
        table = Table(title="Tensor product")
        for column in ("psi", "kind", "analytic", "order A", "order B", "se"):
            table.add_column(column)
        for row in rows:
            cells = (row.analytic, row.order_a, row.order_b, row.se)
            table.add_row(row.psi, row.kind, *("" if v is None else f"{v:.6g}" for v in cells))
        Console().print(table)
    return CommandResult(EXIT_OK, "ok", [str(path)])


def cmd_catalog(quiet: bool = False) -> CommandResult:
    table = Table(title="Kernel catalog")
    table.add_column("name")
    table.add_column("summary")
    table.add_column("params")
    for name, entry in CATALOG.items():
        params = ", ".join(f"{k}: {v}" for k, v in entry["params"].items())
        table.add_row(name, entry["summary"], params)
    Console().print(table)
    return CommandResult(EXIT_OK, f"{len(CATALOG)} kernels", [])


CONFIG_COMMANDS = {
    "selfint": cmd_selfint,
    "quasi": cmd_quasi,
    "simulate": cmd_simulate,
    "tensor": cmd_tensor,
}


def _out_dir(cli_out: Optional[str], cfg: Optional[ExperimentConfig]) -> Path:
    config_dir = cfg.outputs.dir if cfg else None
    return Path(cli_out or config_dir or os.getenv(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def run(
    args: argparse.Namespace, cfg: Optional[ExperimentConfig], out_dir: Path
) -> CommandResult:
    if args.command == "catalog":
        return cmd_catalog(args.quiet)
    out_dir.makedirs_p()
    stem = Path(args.config).stem
    return CONFIG_COMMANDS[args.command](cfg, stem, out_dir, args.quiet)


def main(argv: Optional[List[str]] = None) -> int:
    err_console = Console(stderr=True)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        err_console.print(f"error: {e}", markup=False, style="red")
        return EXIT_ERROR

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True)],
        force=True,
    )

    out_dir = _out_dir(args.out, None)
    try:
        cfg = None
        if args.command != "catalog":
            if not args.config:
                raise UsageError(f"{args.command} needs --config")
            cfg = load_config(args.config, args.seed, args.n_max)
            out_dir = _out_dir(args.out, cfg)
        result = run(args, cfg, out_dir)
    except FactorizationError as e:
        err_console.print(f"error: {e}", markup=False, style="red")
        result = CommandResult(EXIT_FACTORIZATION, "factorization failed", [])
    except (ValueError, FileNotFoundError) as e:
        err_console.print(f"error: {e}", markup=False, style="red")
        result = CommandResult(EXIT_ERROR, "error", [])
    except Exception as e:
        logger.error(f"Error in {args.command}: {str(e)}", exc_info=True)
        result = CommandResult(EXIT_ERROR, "error", [])

    try:
        RunStore(out_dir).record_run(
            args.command, args.config, result.outcome, result.exit_code, result.outputs
        )
    except OSError as e:
        logger.warning(f"Could not record run: {e}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
