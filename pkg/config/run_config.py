# config/run_config.py
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Type, Union

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from models import ADMMConfig, NoiseKind, QATConfig, QATMode, SignNoiseModel
from utils.errors import ConfigError

from .settings import settings

BenchShape = Tuple[int, int, int, int, int]


class RunConfig(BaseSettings):
    """Per-command parameters: a key=value file, overridden by explicit values (CLI flags)."""

    # Shared
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    workers: Optional[int] = Field(default=None, ge=1)

    # PTQ (compress)
    carrier_rank: Optional[int] = Field(default=None, ge=1)
    envelope_rank: int = Field(default=1, ge=1)
    sweeps: int = Field(default=100, ge=1)
    tau: float = 2.0
    mu: float = 10.0
    envelope_init: Literal["spectrum", "nested"] = "nested"
    warm_start: Literal["svd", "best"] = "best"
    keep_best: bool = True
    polish_sweeps: int = Field(default=5, ge=0)
    freeze_detect: bool = True

    # QAT (train-toy)
    mode: QATMode = QATMode.FULL
    steps: int = Field(default=2000, ge=0)
    kappa: float = 100.0
    kappa_schedule: Literal["constant", "linear"] = "constant"
    kappa_start: float = 1.0
    lr: float = 5e-5
    qat_init: Literal["adapter", "svd"] = "adapter"
    warmup_frac: float = 0.05
    schedule: Literal["cosine", "constant"] = "cosine"
    weight_decay: float = 0.0
    toy_n: int = Field(default=32, ge=1)
    toy_m: int = Field(default=32, ge=1)
    toy_rank: int = Field(default=4, ge=1)
    toy_samples: int = Field(default=256, ge=1)
    toy_noise: float = Field(default=0.0, ge=0.0)

    # Sign-plus-noise model (mc-validate, synth-factors)
    mc_n: int = Field(default=16, ge=1)
    mc_m: int = Field(default=16, ge=1)
    mc_r: int = Field(default=4, ge=1)
    mu_a: float = 1.0
    mu_b: float = 1.0
    noise: NoiseKind = NoiseKind.GAUSSIAN
    noise_scale: float = 0.1
    trials: int = Field(default=1000, ge=1)
    grid_trials: Optional[int] = Field(default=None, ge=1)
    delta: float = 0.05
    synth_source: Literal["noise", "planted"] = "noise"

    # Kernel benchmark: "TxNxRxMxL" items separated by commas
    bench_shapes: Optional[str] = None
    bench_trials: int = Field(default=5, ge=1)

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # explicit values win over the key=value file; the environment is not consulted
        return init_settings, dotenv_settings

    @field_validator("bench_shapes")
    @classmethod
    def _check_shapes(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            parse_shapes(value)
        return value

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "RunConfig":
        """Resolve from an optional key=value file plus non-None overrides."""
        explicit = {k: v for k, v in overrides.items() if v is not None}
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls(_env_file=path, **explicit)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def admm_config(self, default_rank: Optional[int] = None) -> ADMMConfig:
        return ADMMConfig(
            carrier_rank=self.carrier_rank or default_rank,
            envelope_rank=self.envelope_rank,
            max_sweeps=self.sweeps,
            tau=self.tau,
            mu=self.mu,
            freeze_detect=self.freeze_detect,
            envelope_init=self.envelope_init,
            warm_start=self.warm_start,
            keep_best=self.keep_best,
            polish_sweeps=self.polish_sweeps,
            workers=self.workers,
        )

    def qat_config(self) -> QATConfig:
        return QATConfig(
            mode=self.mode,
            kappa=self.kappa,
            kappa_schedule=self.kappa_schedule,
            kappa_start=self.kappa_start,
            init=self.qat_init,
            steps=self.steps,
            lr=self.lr,
            warmup_frac=self.warmup_frac,
            schedule=self.schedule,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def noise_model(self) -> SignNoiseModel:
        return SignNoiseModel(
            n=self.mc_n,
            m=self.mc_m,
            r=self.mc_r,
            mu_a=self.mu_a,
            mu_b=self.mu_b,
            noise=self.noise,
            noise_scale=self.noise_scale,
            seed=self.seed,
        )

    def shapes(self) -> Optional[List[BenchShape]]:
        return parse_shapes(self.bench_shapes) if self.bench_shapes else None


def parse_shapes(text: str) -> List[BenchShape]:
    """Parse "8x256x16x256x1,8x1024x16x1024x1" into [(T, N, R, M, l), ...]."""
    shapes = []
    for item in text.split(","):
        parts = item.strip().lower().split("x")
        if len(parts) != 5 or not all(p.isdigit() and int(p) > 0 for p in parts):
            raise ConfigError(f"bench shape {item!r} must look like TxNxRxMxL with positive integers")
        shapes.append(tuple(int(p) for p in parts))
    return shapes
