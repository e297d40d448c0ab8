from typing import Any, ClassVar, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field


class ReportModel(BaseModel):
    """Base for JSON run reports; wall-time fields are the only non-deterministic content."""


class DiagnosticsReport(ReportModel):
    mu_a: float = Field(ge=0.0)
    mu_b: float = Field(ge=0.0)
    zeta_a: float = Field(ge=0.0)
    zeta_b: float = Field(ge=0.0)
    zeta: float = Field(ge=0.0)
    ratio: float = Field(ge=0.0)
    n: int
    m: int
    r0: int


class SignMarginReport(ReportModel):
    eta: float = Field(ge=0.0)
    positive: bool
    in_tail: bool


class MCReport(ReportModel):
    quantity: str
    trials: int = Field(ge=0)
    empirical: List[float] = Field(default_factory=list)
    bounds: List[float] = Field(default_factory=list)
    violation_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    slope: Optional[float] = None
    intercept: Optional[float] = None
    passed: bool = True
    vacuous: bool = False
    model: Dict[str, Any] = Field(default_factory=dict)
    extras: Dict[str, Any] = Field(default_factory=dict)


class KernelReport(ReportModel):
    t: int
    n: int
    r: int
    m: int
    ell: int
    r0: int
    bytes_adapter: int
    bytes_fp16_equiv: int
    ratio: float
    bandwidth_ratio: float
    t_packed_ns: int
    t_dense_ns: int
    max_abs_dev: float
    arithmetic: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "t", "n", "r", "m", "ell", "r0",
        "bytes_adapter", "bytes_fp16_equiv", "ratio",
        "t_packed_ns", "t_dense_ns", "max_abs_dev",
    )

    def csv_row(self) -> List[Any]:
        return [getattr(self, column) for column in self.CSV_COLUMNS]


class ADMMSummary(ReportModel):
    """Per-run ADMM trace distilled from the final state."""

    sweeps: int
    freeze_sweep: Optional[int] = None
    objective_history: List[float]
    warm_start_objective: float
    final_objective: float
    rho_history: List[float]
    primal_residual_history: List[float]
    dual_residual_history: List[float]
    dual_identity_history: List[float]
    margin_history: List[float]
    tail_monotone_fraction: Optional[float] = None
    sign_margin: SignMarginReport


class RunReport(ReportModel):
    """Envelope shared by all CLI command reports."""

    command: str
    app_version: str
    config: Dict[str, Any]
    input_crc32: Dict[str, str] = Field(default_factory=dict)


class CompressReport(RunReport):
    n: int
    m: int
    r0: int
    carrier_rank: int
    envelope_rank: int
    relative_error: float
    relative_error_fp16: float
    storage_bits: int
    bpw_bc: float
    bpw_tot: float
    admm: ADMMSummary


class TrainReport(RunReport):
    mode: str
    n: int
    m: int
    carrier_rank: int
    envelope_rank: int
    trainable_parameters: int
    init_loss: float
    final_loss: float
    fp16_export_loss: float
    loss_history: List[float]


class ComparisonReport(ReportModel):
    """QAT-Full versus PTQ-initialisation losses over seeds."""

    seeds: List[int]
    ptq_losses: List[float]
    qat_losses: List[float]
    ratios: List[float]
    median_ratio: float


class ReconstructReport(RunReport):
    n: int
    m: int
    frobenius_norm: float
    operator_norm: float


class DiagnoseReport(RunReport):
    diagnostics: DiagnosticsReport


class ValidationRunReport(RunReport):
    report: MCReport


class SynthReport(RunReport):
    n: int
    m: int
    r0: int
    source: str
