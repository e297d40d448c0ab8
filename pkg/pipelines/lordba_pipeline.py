# pipelines/lordba_pipeline.py
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config import settings
from config.run_config import RunConfig
from linalg import frobenius_norm, operator_norm, relative_error
from models import (
    CompressReport,
    DiagnoseReport,
    KernelReport,
    QATMode,
    ReconstructReport,
    SynthReport,
    TrainReport,
    ValidationRunReport,
)
from tools import (
    adapter_loss,
    bench,
    bpw,
    check_entry_tail,
    check_reconstruction_bound,
    check_sign_consistency,
    check_signal_lowerbound,
    diagnose,
    factors_from_adapter,
    file_crc32,
    fit_objective,
    load_adapter,
    load_factors,
    make_planted_task,
    quantize_scales,
    random_adapter,
    reconstruct,
    reports_to_csv,
    run_admm,
    sample_factors,
    save_adapter,
    save_factors,
    save_matrix,
    storage_bits,
    summarize,
    target_from_factors,
    train,
    trainable_parameters,
)
from tools.kernel_tools import DEFAULT_SHAPES
from utils import log

PathLike = Union[str, Path]


class MCCheck(str, Enum):
    THEOREM1 = "theorem1"
    SIGNCONS = "signcons"
    SIGNAL = "signal"
    TAIL = "tail"


class LordbaPipeline:
    """One method per CLI command; each returns a report embedding the resolved config."""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig.load()
        log.debug(f"Pipeline config: {self.config.resolved()}")

    def _envelope(self, command: str, inputs: Optional[Dict[str, PathLike]] = None) -> dict:
        return {
            "command": command,
            "app_version": settings.APP_VERSION,
            "config": self.config.resolved(),
            "input_crc32": {name: file_crc32(path) for name, path in (inputs or {}).items()},
        }

    # ========== PTQ ==========

    def compress(self, factors_path: PathLike, output: PathLike) -> CompressReport:
        """Gauge-fix the factors, form ΔW*, run ADMM and write the LBA1 adapter."""
        log.info(f"🚀 Compressing {factors_path}")
        factors = load_factors(factors_path)
        target = target_from_factors(factors)
        admm_config = self.config.admm_config(default_rank=factors.r0)
        adapter, state = run_admm(target, admm_config, r0_ref=factors.r0)

        approx = reconstruct(adapter)
        final_objective = fit_objective(adapter.b1.to_dense(), adapter.b2.to_dense(), adapter.envelopes, target)
        bpw_bc, bpw_tot = bpw(adapter)
        size = save_adapter(output, adapter)
        log.info(f"✅ Wrote {output} ({size} bytes)")

        return CompressReport(
            **self._envelope("compress", {"factors": factors_path}),
            n=adapter.n,
            m=adapter.m,
            r0=factors.r0,
            carrier_rank=adapter.rank,
            envelope_rank=adapter.ell,
            relative_error=relative_error(approx, target),
            relative_error_fp16=relative_error(reconstruct(quantize_scales(adapter)), target),
            storage_bits=storage_bits(adapter),
            bpw_bc=bpw_bc,
            bpw_tot=bpw_tot,
            admm=summarize(state, admm_config, final_objective),
        )

    # ========== QAT ==========

    def train_toy(self, output: PathLike, init_path: Optional[PathLike] = None) -> TrainReport:
        """Planted regression task, optional PTQ initialisation, then QAT."""
        cfg = self.config
        qat_config = cfg.qat_config()
        task, _ = make_planted_task(
            cfg.toy_n, cfg.toy_m, cfg.toy_rank, cfg.toy_samples, noise=cfg.toy_noise, seed=cfg.seed
        )
        inputs: Dict[str, PathLike] = {}
        init = None
        if init_path is not None:
            init = load_adapter(init_path)
            inputs["init"] = init_path
        elif qat_config.mode != QATMode.SCRATCH and qat_config.init == "adapter":
            log.info("No --init adapter; starting from PTQ on the task's least-squares delta")
            init, _ = run_admm(task.delta_target(), cfg.admm_config(default_rank=cfg.toy_rank))

        log.info(f"🚀 Training toy adapter: mode={qat_config.mode.value} steps={qat_config.steps}")
        adapter, state = train(task, init, qat_config, rank=cfg.carrier_rank or cfg.toy_rank, ell=cfg.envelope_rank)
        size = save_adapter(output, adapter)
        log.info(f"✅ Wrote {output} ({size} bytes)")

        return TrainReport(
            **self._envelope("train-toy", inputs),
            mode=qat_config.mode.value,
            n=adapter.n,
            m=adapter.m,
            carrier_rank=adapter.rank,
            envelope_rank=adapter.ell,
            trainable_parameters=trainable_parameters(adapter, qat_config.mode),
            init_loss=state.loss_history[0],
            final_loss=state.loss_history[-1],
            fp16_export_loss=adapter_loss(quantize_scales(adapter), task),
            loss_history=list(state.loss_history),
        )

    # ========== Inspection ==========

    def reconstruct(self, adapter_path: PathLike, output: PathLike) -> ReconstructReport:
        adapter = load_adapter(adapter_path)
        delta = reconstruct(adapter)
        save_matrix(output, delta)
        log.info(f"✅ Wrote dense update {delta.shape} to {output}")
        return ReconstructReport(
            **self._envelope("reconstruct", {"adapter": adapter_path}),
            n=adapter.n,
            m=adapter.m,
            frobenius_norm=frobenius_norm(delta),
            operator_norm=operator_norm(delta),
        )

    def diagnose(self, factors_path: PathLike) -> DiagnoseReport:
        factors = load_factors(factors_path)
        return DiagnoseReport(
            **self._envelope("diagnose", {"factors": factors_path}),
            diagnostics=diagnose(factors),
        )

    # ========== Theory checks ==========

    def mc_validate(self, which: MCCheck, progress: bool = False) -> ValidationRunReport:
        cfg = self.config
        which = MCCheck(which)
        log.info(f"🚀 Monte-Carlo check {which.value}: trials={cfg.trials}")
        if which == MCCheck.THEOREM1:
            report = check_reconstruction_bound(
                cfg.noise_model(),
                cfg.trials,
                delta=cfg.delta,
                grid_trials=cfg.grid_trials,
                workers=cfg.workers,
                progress=progress,
            )
        elif which == MCCheck.SIGNCONS:
            report = check_sign_consistency(cfg.noise_model(), cfg.trials, workers=cfg.workers, progress=progress)
        elif which == MCCheck.SIGNAL:
            report = check_signal_lowerbound(
                cfg.mc_n, cfg.mc_m, cfg.mc_r, cfg.trials, seed=cfg.seed, workers=cfg.workers, progress=progress
            )
        else:
            report = check_entry_tail(cfg.noise_model(), cfg.trials)
        if not report.passed:
            log.warning(f"Check {which.value} did not pass: violation_rate={report.violation_rate:.4g}")
        return ValidationRunReport(**self._envelope("mc-validate"), report=report)

    # ========== Kernel ==========

    def bench_kernel(self, output: Optional[PathLike] = None) -> Tuple[List[KernelReport], str]:
        cfg = self.config
        shapes = cfg.shapes() or list(DEFAULT_SHAPES)
        reports = bench(shapes, trials=cfg.bench_trials, seed=cfg.seed, workers=cfg.workers)
        table = reports_to_csv(reports)
        if output is not None:
            Path(output).write_text(table, encoding="utf-8")
            log.info(f"✅ Wrote {len(reports)} rows to {output}")
        return reports, table

    # ========== Synthetic inputs ==========

    def synth_factors(self, output: PathLike) -> SynthReport:
        """LRF1 factors from the sign-plus-noise model or from a planted adapter."""
        cfg = self.config
        if cfg.synth_source == "planted":
            adapter = random_adapter(cfg.mc_n, cfg.mc_m, cfg.mc_r, seed=cfg.seed, dyadic=True)
            factors = factors_from_adapter(adapter)
        else:
            factors, _, _, _ = sample_factors(cfg.noise_model(), rng=np.random.default_rng(cfg.seed))
        size = save_factors(output, factors)
        log.info(f"✅ Wrote {cfg.synth_source} factors N={factors.n} M={factors.m} r0={factors.r0} ({size} bytes)")
        return SynthReport(
            **self._envelope("synth-factors"),
            n=factors.n,
            m=factors.m,
            r0=factors.r0,
            source=cfg.synth_source,
        )


# Singleton pattern, rebuilt when a different config is requested
_pipeline_instance: Optional[LordbaPipeline] = None


def get_pipeline(config: Optional[RunConfig] = None) -> LordbaPipeline:
    """Get or create the LordbaPipeline for ``config``."""
    global _pipeline_instance
    if _pipeline_instance is None or (config is not None and config != _pipeline_instance.config):
        log.debug("Creating new LordbaPipeline instance...")
        _pipeline_instance = LordbaPipeline(config)
    return _pipeline_instance
