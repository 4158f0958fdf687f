from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import random_latent

from lfa.alignment import AlignmentConfig, align_step, init_alignment
from lfa.estimator import LowFrequencyAligner


def test_get_params_round_trip():
    est = LowFrequencyAligner(window=5, alpha_mu=0.9)
    params = est.get_params()
    assert params["window"] == 5
    assert params["alpha_mu"] == 0.9
    rebuilt = LowFrequencyAligner(**params)
    assert rebuilt.get_params() == params


def test_set_params_chains():
    est = LowFrequencyAligner().set_params(scope="both", epsilon=1e-4)
    assert est.scope == "both"
    assert est.epsilon == 1e-4


def test_clone_produces_unfitted_copy(rng):
    est = LowFrequencyAligner().fit(random_latent(rng).data)
    fresh = clone(est)
    with pytest.raises(NotFittedError):
        fresh.transform(random_latent(rng).data)


def test_transform_before_fit_raises(rng):
    with pytest.raises(NotFittedError):
        LowFrequencyAligner().transform(random_latent(rng).data)


def test_matches_functional_path_bitwise(rng):
    z0 = random_latent(rng, (4, 24, 24))
    turns = [random_latent(rng, (4, 24, 24), scale=1.0 + 0.05 * k) for k in range(4)]

    est = LowFrequencyAligner().fit(z0.data)
    cfg = AlignmentConfig()
    state = init_alignment(z0, cfg)
    for z in turns:
        via_est = est.transform(z.data)
        via_fn, state = align_step(z, state, cfg)
        assert via_est.tobytes() == via_fn.data.tobytes()
    assert est.n_turns_ == 4
    assert est.state().turn == 4


def test_accepts_latent_tensor_inputs(rng):
    z0 = random_latent(rng)
    est = LowFrequencyAligner().fit(z0)
    out = est.transform(z0)
    assert out.dtype == np.float32
    assert out.shape == z0.shape
