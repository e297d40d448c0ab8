import numpy as np
import pytest

from models import LoRDBAAdapter, ScaleEnvelope


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_adapter(rng, n, m, r, ell=1, r0_ref=None):
    b1 = rng.choice([-1.0, 1.0], size=(n, r))
    b2 = rng.choice([-1.0, 1.0], size=(r, m))
    envelopes = [
        ScaleEnvelope(
            alpha=rng.uniform(0.5, 1.5, n),
            beta=rng.uniform(0.5, 1.5, r),
            gamma=rng.uniform(0.5, 1.5, m),
        )
        for _ in range(ell)
    ]
    return LoRDBAAdapter.from_dense(b1, b2, envelopes, r0_ref=r0_ref or r)


@pytest.fixture
def small_adapter(rng):
    return make_adapter(rng, 8, 8, 4)
