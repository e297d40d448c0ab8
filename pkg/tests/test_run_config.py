import pytest
from pydantic import ValidationError

from config.run_config import RunConfig, parse_shapes
from models import NoiseKind, QATMode
from utils.errors import ConfigError


def test_defaults():
    cfg = RunConfig.load()
    assert cfg.sweeps == 100
    assert (cfg.tau, cfg.mu) == (2.0, 10.0)
    assert cfg.mode == QATMode.FULL
    assert cfg.kappa == 100.0
    assert cfg.lr == 5e-5
    assert cfg.shapes() is None


def test_none_overrides_are_ignored():
    cfg = RunConfig.load(sweeps=None, tau=3.0)
    assert cfg.sweeps == 100
    assert cfg.tau == 3.0


def test_file_then_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sweeps=7\ncarrier_rank=3\nnoise=uniform\nunknown_key=1\n", encoding="utf-8")
    cfg = RunConfig.load(path)
    assert (cfg.sweeps, cfg.carrier_rank, cfg.noise) == (7, 3, NoiseKind.UNIFORM)
    assert RunConfig.load(path, sweeps=9).sweeps == 9


def test_environment_is_not_consulted(monkeypatch):
    monkeypatch.setenv("SWEEPS", "9")
    monkeypatch.setenv("sweeps", "9")
    assert RunConfig.load().sweeps == 100


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.load(tmp_path / "nope.cfg")


def test_invalid_values():
    with pytest.raises(ValidationError):
        RunConfig.load(sweeps=0)
    with pytest.raises(ValidationError):
        RunConfig.load(envelope_init="random")
    with pytest.raises(ConfigError):
        RunConfig.load(bench_shapes="8x256x16")


def test_parse_shapes():
    assert parse_shapes("8x256x16x256x1, 2X4X1X4X2") == [(8, 256, 16, 256, 1), (2, 4, 1, 4, 2)]
    with pytest.raises(ConfigError):
        parse_shapes("8x0x16x256x1")


def test_derived_configs():
    cfg = RunConfig.load(envelope_rank=2, sweeps=12, mode="freeze", noise_scale=0.2, seed=5)
    admm = cfg.admm_config(default_rank=6)
    assert (admm.carrier_rank, admm.envelope_rank, admm.max_sweeps) == (6, 2, 12)
    assert RunConfig.load(carrier_rank=3).admm_config(default_rank=6).carrier_rank == 3
    qat = cfg.qat_config()
    assert qat.mode == QATMode.FREEZE and qat.seed == 5
    model = cfg.noise_model()
    assert (model.n, model.noise_scale, model.seed) == (16, 0.2, 5)


def test_resolved_is_json_ready():
    resolved = RunConfig.load(mode=QATMode.SCRATCH).resolved()
    assert resolved["mode"] == "scratch"
    assert resolved["noise"] == "gaussian"
