# cli/main.py
"""LoRDBA command line: compress, train, inspect, validate and benchmark adapters.

JSON reports and CSV tables go to stdout; logs go to stderr.
"""
import functools
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from config import settings
from config.run_config import RunConfig
from models import KernelReport, NoiseKind, QATMode
from pipelines import MCCheck, get_pipeline
from utils import log
from utils.errors import CHECK_FAILED, INPUT_ERROR, VALIDATION_ERROR, LordbaError

app = typer.Typer(
    name=settings.APP_NAME,
    help="Low-rank double-binary adapters: PTQ, QAT, packed kernel and theory checks.",
    add_completion=False,
    no_args_is_help=True,
)

ConfigOption = typer.Option(None, "--config", "-c", help="key=value file; flags override it")
ReportOption = typer.Option(None, "--report", help="Also write the JSON report here")
SeedOption = typer.Option(None, "--seed", help="Global seed")
WorkersOption = typer.Option(None, "--workers", "-j", help="Worker threads (default LORDBA_THREADS)")


def handle_errors(fn):
    """Log a failure and exit with its code instead of a traceback."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except typer.Exit:
            raise
        except LordbaError as e:
            log.error(f"❌ {type(e).__name__}: {e}")
            raise typer.Exit(code=e.exit_code)
        except ValidationError as e:
            log.error(f"❌ Invalid parameters: {e}")
            raise typer.Exit(code=VALIDATION_ERROR)
        except OSError as e:
            log.error(f"❌ {e}")
            raise typer.Exit(code=INPUT_ERROR)

    return wrapper


def _pipeline(config: Optional[Path], **overrides):
    return get_pipeline(RunConfig.load(config, **overrides))


def _emit(report: BaseModel, path: Optional[Path]) -> None:
    text = report.model_dump_json(indent=2)
    if path is not None:
        path.write_text(text + "\n", encoding="utf-8")
        log.info(f"Report written to {path}")
    typer.echo(text)


@app.command()
@handle_errors
def compress(
    factors: Path = typer.Argument(..., help="LRF1 factor file"),
    output: Path = typer.Option(..., "--output", "-o", help="LBA1 adapter to write"),
    carrier_rank: Optional[int] = typer.Option(None, "--carrier-rank", "-R", help="Binary carrier rank (default r0)"),
    envelope_rank: Optional[int] = typer.Option(None, "--envelope-rank", "-l", help="Number of scale envelopes"),
    sweeps: Optional[int] = typer.Option(None, "--sweeps", help="ADMM sweep budget K"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    mu: Optional[float] = typer.Option(None, "--mu"),
    envelope_init: Optional[str] = typer.Option(None, "--envelope-init", help="spectrum | nested"),
    warm_start: Optional[str] = typer.Option(None, "--warm-start", help="svd | best (also try carrier recovery)"),
    seed: Optional[int] = SeedOption,
    workers: Optional[int] = WorkersOption,
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """PTQ: fit a LoRDBA adapter to the update A·Bᵀ of a factor file."""
    pipeline = _pipeline(
        config,
        carrier_rank=carrier_rank,
        envelope_rank=envelope_rank,
        sweeps=sweeps,
        tau=tau,
        mu=mu,
        envelope_init=envelope_init,
        warm_start=warm_start,
        seed=seed,
        workers=workers,
    )
    _emit(pipeline.compress(factors, output), report)


@app.command("train-toy")
@handle_errors
def train_toy(
    output: Path = typer.Option(..., "--output", "-o", help="LBA1 adapter to write"),
    mode: Optional[QATMode] = typer.Option(None, "--mode", help="full | freeze | scratch"),
    steps: Optional[int] = typer.Option(None, "--steps"),
    kappa: Optional[float] = typer.Option(None, "--kappa"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    init: Optional[Path] = typer.Option(None, "--init", help="LBA1 adapter to start from"),
    qat_init: Optional[str] = typer.Option(None, "--qat-init", help="adapter | svd (truncated SVD of the task delta)"),
    toy_n: Optional[int] = typer.Option(None, "--n"),
    toy_m: Optional[int] = typer.Option(None, "--m"),
    toy_rank: Optional[int] = typer.Option(None, "--rank"),
    toy_samples: Optional[int] = typer.Option(None, "--samples"),
    seed: Optional[int] = SeedOption,
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """QAT on a planted-adapter regression task."""
    pipeline = _pipeline(
        config,
        mode=mode,
        steps=steps,
        kappa=kappa,
        lr=lr,
        qat_init=qat_init,
        toy_n=toy_n,
        toy_m=toy_m,
        toy_rank=toy_rank,
        toy_samples=toy_samples,
        seed=seed,
    )
    _emit(pipeline.train_toy(output, init_path=init), report)


@app.command()
@handle_errors
def reconstruct(
    adapter: Path = typer.Argument(..., help="LBA1 adapter file"),
    output: Path = typer.Option(..., "--output", "-o", help=".npy dump of the dense update"),
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """Write the dense ΔW of an adapter."""
    _emit(_pipeline(config).reconstruct(adapter, output), report)


@app.command()
@handle_errors
def diagnose(
    factors: Path = typer.Argument(..., help="LRF1 factor file"),
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """Residual-to-magnitude statistics of a factor file."""
    _emit(_pipeline(config).diagnose(factors), report)


@app.command("mc-validate")
@handle_errors
def mc_validate(
    which: MCCheck = typer.Argument(..., help="theorem1 | signcons | signal | tail"),
    n: Optional[int] = typer.Option(None, "--n"),
    m: Optional[int] = typer.Option(None, "--m"),
    r: Optional[int] = typer.Option(None, "--r"),
    mu_a: Optional[float] = typer.Option(None, "--mu-a"),
    mu_b: Optional[float] = typer.Option(None, "--mu-b"),
    noise: Optional[NoiseKind] = typer.Option(None, "--noise"),
    noise_scale: Optional[float] = typer.Option(None, "--noise-scale"),
    trials: Optional[int] = typer.Option(None, "--trials"),
    grid_trials: Optional[int] = typer.Option(None, "--grid-trials"),
    delta: Optional[float] = typer.Option(None, "--delta"),
    progress: bool = typer.Option(False, "--progress", help="Show a progress bar"),
    seed: Optional[int] = SeedOption,
    workers: Optional[int] = WorkersOption,
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """Monte-Carlo checks of the reconstruction, sign and tail bounds; exits 5 when a check fails."""
    pipeline = _pipeline(
        config,
        mc_n=n,
        mc_m=m,
        mc_r=r,
        mu_a=mu_a,
        mu_b=mu_b,
        noise=noise,
        noise_scale=noise_scale,
        trials=trials,
        grid_trials=grid_trials,
        delta=delta,
        seed=seed,
        workers=workers,
    )
    result = pipeline.mc_validate(which, progress=progress)
    _emit(result, report)
    if not result.report.passed:
        raise typer.Exit(code=CHECK_FAILED)


def _kernel_table(reports: List[KernelReport]) -> Table:
    table = Table(title="Packed kernel vs dense")
    for column in ("T", "N", "R", "M", "l", "bytes", "fp16 bytes", "ratio", "packed ns", "dense ns", "max dev"):
        table.add_column(column, justify="right")
    for rep in reports:
        table.add_row(
            str(rep.t), str(rep.n), str(rep.r), str(rep.m), str(rep.ell),
            str(rep.bytes_adapter), str(rep.bytes_fp16_equiv), f"{rep.ratio:.3f}",
            str(rep.t_packed_ns), str(rep.t_dense_ns), f"{rep.max_abs_dev:.2e}",
        )
    return table


@app.command("bench-kernel")
@handle_errors
def bench_kernel(
    shape: Optional[List[str]] = typer.Option(None, "--shape", help="TxNxRxMxL, repeatable"),
    trials: Optional[int] = typer.Option(None, "--trials"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="CSV file (default stdout)"),
    seed: Optional[int] = SeedOption,
    workers: Optional[int] = WorkersOption,
    config: Optional[Path] = ConfigOption,
):
    """Time the packed adapter branch against the dense one."""
    pipeline = _pipeline(
        config,
        bench_shapes=",".join(shape) if shape else None,
        bench_trials=trials,
        seed=seed,
        workers=workers,
    )
    reports, table = pipeline.bench_kernel(output)
    Console(stderr=True).print(_kernel_table(reports))
    if output is None:
        typer.echo(table, nl=False)


@app.command("synth-factors")
@handle_errors
def synth_factors(
    output: Path = typer.Option(..., "--output", "-o", help="LRF1 factor file to write"),
    source: Optional[str] = typer.Option(None, "--source", help="noise | planted"),
    n: Optional[int] = typer.Option(None, "--n"),
    m: Optional[int] = typer.Option(None, "--m"),
    r: Optional[int] = typer.Option(None, "--r"),
    mu_a: Optional[float] = typer.Option(None, "--mu-a"),
    mu_b: Optional[float] = typer.Option(None, "--mu-b"),
    noise: Optional[NoiseKind] = typer.Option(None, "--noise"),
    noise_scale: Optional[float] = typer.Option(None, "--noise-scale"),
    seed: Optional[int] = SeedOption,
    config: Optional[Path] = ConfigOption,
    report: Optional[Path] = ReportOption,
):
    """Write synthetic LRF1 factors for compress and diagnose."""
    pipeline = _pipeline(
        config,
        synth_source=source,
        mc_n=n,
        mc_m=m,
        mc_r=r,
        mu_a=mu_a,
        mu_b=mu_b,
        noise=noise,
        noise_scale=noise_scale,
        seed=seed,
    )
    _emit(pipeline.synth_factors(output), report)


if __name__ == "__main__":
    app()
