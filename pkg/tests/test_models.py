import numpy as np
import pytest
from pydantic import ValidationError

from models import (
    ADMMConfig,
    LoRAFactors,
    LoRDBAAdapter,
    PackedAdapter,
    QATConfig,
    ScaleEnvelope,
    SignMatrix,
    SignNoiseModel,
    popcount64,
    words_per_row,
)
from utils.errors import ConfigError, ShapeMismatchError

from .conftest import make_adapter


@pytest.mark.parametrize("cols", [1, 63, 64, 65, 130])
def test_sign_matrix_pack_round_trip(rng, cols):
    dense = rng.choice([-1.0, 1.0], size=(3, cols))
    packed = SignMatrix.from_dense(dense)
    assert packed.words.shape == (3, words_per_row(cols))
    np.testing.assert_array_equal(packed.to_dense(), dense)
    assert SignMatrix.from_dense(packed.to_dense()).same_bits(packed)
    np.testing.assert_array_equal(packed.transpose().to_dense(), dense.T)


def test_sign_matrix_zero_is_plus_one():
    packed = SignMatrix.from_dense(np.array([[0.0, -0.5, 2.0]]))
    np.testing.assert_array_equal(packed.to_dense(), [[1.0, -1.0, 1.0]])


def test_sign_matrix_rejects_dirty_padding():
    words = np.array([[np.uint64(1) << np.uint64(10)]], dtype=np.uint64)
    with pytest.raises(ShapeMismatchError):
        SignMatrix(rows=1, cols=5, words=words)


def test_popcount64(rng):
    words = rng.integers(0, 2**63, size=50, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    expected = [bin(int(w)).count("1") for w in words]
    np.testing.assert_array_equal(popcount64(words), expected)
    assert int(popcount64(np.array([np.iinfo(np.uint64).max], dtype=np.uint64))[0]) == 64


def test_row_popcounts(rng):
    dense = rng.choice([-1.0, 1.0], size=(4, 70))
    np.testing.assert_array_equal(SignMatrix.from_dense(dense).row_popcounts(), (dense > 0).sum(axis=1))


def test_adapter_shape_checks(rng):
    adapter = make_adapter(rng, 6, 5, 3)
    assert (adapter.n, adapter.rank, adapter.m, adapter.ell) == (6, 3, 5, 1)
    bad = ScaleEnvelope.ones(6, 2, 5)
    with pytest.raises(ShapeMismatchError):
        adapter.with_envelopes([bad])
    with pytest.raises(ValidationError):
        adapter.with_envelopes([])


def test_adapter_arrays_are_read_only(small_adapter):
    with pytest.raises(ValueError):
        small_adapter.envelopes[0].alpha[0] = 2.0


def test_packed_adapter_round_trip(rng):
    adapter = make_adapter(rng, 70, 9, 5, ell=2)
    packed = PackedAdapter.from_adapter(adapter)
    assert (packed.n, packed.rank, packed.m, packed.ell) == (70, 5, 9, 2)
    back = packed.to_adapter()
    assert back.b1.same_bits(adapter.b1) and back.b2.same_bits(adapter.b2)
    np.testing.assert_array_equal(packed.popcounts1, (adapter.b1.to_dense() > 0).sum(axis=0))


def test_lora_factors_rank_check():
    with pytest.raises(ShapeMismatchError):
        LoRAFactors(a=np.ones((3, 2)), b=np.ones((4, 3)))


def test_config_validation():
    with pytest.raises(ValidationError):
        ADMMConfig(carrier_rank=2, tau=1.0)
    with pytest.raises(ConfigError):
        ADMMConfig(carrier_rank=2, envelope_rank=3, envelope_init="spectrum")
    assert ADMMConfig(carrier_rank=2, envelope_rank=3).envelope_rank == 3
    with pytest.raises(ValidationError):
        QATConfig(kappa=0.0)
    with pytest.raises(ValidationError):
        SignNoiseModel(n=4, m=4, r=2, mu_a=0.0)
    with pytest.raises(ConfigError):
        SignNoiseModel(n=4, m=4, r=2, noise="custom")
