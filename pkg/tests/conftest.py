from __future__ import annotations

import numpy as np
import pytest

from lfa.core import LatentTensor


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_latent(rng, shape=(4, 16, 16), scale=1.0, offset=0.0) -> LatentTensor:
    data = (rng.standard_normal(shape) * scale + offset).astype(np.float32)
    return LatentTensor(data)
