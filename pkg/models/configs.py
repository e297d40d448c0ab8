from enum import Enum
from typing import Callable, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import ConfigError, ShapeMismatchError


class QATMode(str, Enum):
    FULL = "full"
    FREEZE = "freeze"
    SCRATCH = "scratch"


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    CUSTOM = "custom"


class SignMode(str, Enum):
    RADEMACHER = "rademacher"
    FIXED = "fixed"


class ADMMConfig(BaseModel):
    """PTQ-LoRDBA settings; defaults follow the published hyperparameters."""

    model_config = ConfigDict(frozen=True)

    carrier_rank: int = Field(ge=1)
    envelope_rank: int = Field(default=1, ge=1)
    max_sweeps: int = Field(default=100, ge=1)
    tau: float = Field(default=2.0, gt=1.0)
    mu: float = Field(default=10.0, gt=1.0)
    freeze_detect: bool = True
    rho0_policy: Literal["scale_matched"] = "scale_matched"
    envelope_init: Literal["spectrum", "nested"] = "nested"
    warm_start: Literal["svd", "best"] = "best"
    keep_best: bool = True
    polish_sweeps: int = Field(default=5, ge=0)
    refine_scales: bool = True
    workers: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_envelopes(self):
        if self.envelope_init == "spectrum" and self.envelope_rank > self.carrier_rank:
            raise ConfigError("split-spectrum warm start needs envelope_rank <= carrier_rank")
        return self

    @property
    def rho_schedule_cutoff(self) -> float:
        return self.max_sweeps / 2

    def check_shape(self, n: int, m: int) -> None:
        # Required by the thin-SVD warm start, not by the adapter definition.
        if self.carrier_rank > min(n, m):
            raise ShapeMismatchError(
                f"carrier rank R={self.carrier_rank} exceeds min(N, M)={min(n, m)}"
            )


class QATConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: QATMode = QATMode.FULL
    kappa: float = Field(default=100.0, gt=0.0)
    kappa_schedule: Literal["constant", "linear"] = "constant"
    kappa_start: float = Field(default=1.0, gt=0.0)
    steps: int = Field(default=2000, ge=0)
    lr: float = Field(default=5e-5, ge=0.0)
    warmup_frac: float = Field(default=0.05, ge=0.0, le=1.0)
    schedule: Literal["cosine", "constant"] = "cosine"
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    init: Literal["adapter", "svd"] = Field(
        default="adapter", description="Full/Freeze latents: the initial adapter or the truncated SVD of the task delta"
    )
    latent_init_scale: Optional[float] = Field(
        default=None, gt=0.0, description="|H| at init from an adapter; defaults to 1/kappa"
    )
    seed: int = 0


class SignNoiseModel(BaseModel):
    """Factor entries μ·σ + ξ with ±1 signs σ and zero-mean residuals ξ."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    r: int = Field(ge=1)
    mu_a: float = Field(default=1.0, gt=0.0)
    mu_b: float = Field(default=1.0, gt=0.0)
    noise: NoiseKind = NoiseKind.GAUSSIAN
    noise_scale: float = Field(default=0.1, ge=0.0)
    sign_mode: SignMode = SignMode.RADEMACHER
    fixed_sign_a: Optional[object] = None
    fixed_sign_b: Optional[object] = None
    # custom noise: sampler(rng, shape) -> zero-mean array, plus its ψ₂ proxy
    custom_sampler: Optional[Callable] = None
    custom_zeta: Optional[float] = Field(default=None, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_fixed(self):
        if self.sign_mode == SignMode.FIXED:
            if self.fixed_sign_a is None or self.fixed_sign_b is None:
                raise ConfigError("fixed sign mode needs fixed_sign_a and fixed_sign_b")
        if self.noise == NoiseKind.CUSTOM and (self.custom_sampler is None or self.custom_zeta is None):
            raise ConfigError("custom noise needs custom_sampler and custom_zeta")
        return self

    def with_noise_scale(self, noise_scale: float) -> "SignNoiseModel":
        return self.model_copy(update={"noise_scale": noise_scale})
