from .adapter import (
    WORD_BITS,
    popcount64,
    LoRAFactors,
    LoRDBAAdapter,
    PackedAdapter,
    ScaleEnvelope,
    SignMatrix,
    words_per_row,
)
from .configs import ADMMConfig, NoiseKind, QATConfig, QATMode, SignMode, SignNoiseModel
from .reports import (
    ADMMSummary,
    ComparisonReport,
    CompressReport,
    DiagnoseReport,
    DiagnosticsReport,
    KernelReport,
    MCReport,
    ReconstructReport,
    RunReport,
    SignMarginReport,
    SynthReport,
    TrainReport,
    ValidationRunReport,
)
from .state import ADMMState, QATState, ToyTask

__all__ = [
    "WORD_BITS",
    "popcount64",
    "LoRAFactors",
    "LoRDBAAdapter",
    "PackedAdapter",
    "ScaleEnvelope",
    "SignMatrix",
    "words_per_row",
    "ADMMConfig",
    "NoiseKind",
    "QATConfig",
    "QATMode",
    "SignMode",
    "SignNoiseModel",
    "ADMMSummary",
    "ComparisonReport",
    "CompressReport",
    "DiagnoseReport",
    "DiagnosticsReport",
    "KernelReport",
    "MCReport",
    "ReconstructReport",
    "RunReport",
    "SignMarginReport",
    "SynthReport",
    "TrainReport",
    "ValidationRunReport",
    "ADMMState",
    "QATState",
    "ToyTask",
]
