from .adapter_tools import (
    bpw,
    canonical_reconstruction,
    dense_update,
    diagnose,
    factors_from_adapter,
    fit_objective,
    gauge_fix,
    pad_envelopes,
    reconstruct,
    storage_bits,
    target_from_factors,
    trainable_parameters,
    update_gradients,
)
from .admm_tools import (
    extend_envelopes,
    fit_scales,
    penalty_update,
    projection_dual_step,
    recovery_warm_start,
    refine_scales,
    run_admm,
    scale_sweep,
    sign_margin,
    summarize,
    svd_warm_start,
    u_step,
)
from .io_tools import (
    file_crc32,
    load_adapter,
    load_factors,
    load_matrix,
    quantize_scales,
    save_adapter,
    save_factors,
    save_matrix,
)
from .kernel_tools import (
    adapter_forward,
    arithmetic_breakdown,
    bandwidth_ratio,
    bench,
    pack_adapter,
    reports_to_csv,
    sign_matmul,
)
from .qat_tools import (
    adapter_loss,
    compare_qat_ptq,
    make_planted_task,
    qat_backward,
    qat_forward,
    random_adapter,
    train,
)
from .theory_tools import (
    check_entry_tail,
    check_reconstruction_bound,
    check_sign_consistency,
    check_signal_lowerbound,
    sample_factors,
    zeta_proxy,
)

__all__ = [
    "bpw",
    "canonical_reconstruction",
    "dense_update",
    "diagnose",
    "factors_from_adapter",
    "fit_objective",
    "gauge_fix",
    "pad_envelopes",
    "reconstruct",
    "storage_bits",
    "target_from_factors",
    "trainable_parameters",
    "update_gradients",
    "extend_envelopes",
    "fit_scales",
    "penalty_update",
    "projection_dual_step",
    "recovery_warm_start",
    "refine_scales",
    "run_admm",
    "scale_sweep",
    "sign_margin",
    "summarize",
    "svd_warm_start",
    "u_step",
    "file_crc32",
    "load_adapter",
    "load_factors",
    "load_matrix",
    "quantize_scales",
    "save_adapter",
    "save_factors",
    "save_matrix",
    "adapter_forward",
    "arithmetic_breakdown",
    "bandwidth_ratio",
    "bench",
    "pack_adapter",
    "reports_to_csv",
    "sign_matmul",
    "adapter_loss",
    "compare_qat_ptq",
    "make_planted_task",
    "qat_backward",
    "qat_forward",
    "random_adapter",
    "train",
    "check_entry_tail",
    "check_reconstruction_bound",
    "check_sign_consistency",
    "check_signal_lowerbound",
    "sample_factors",
    "zeta_proxy",
]
