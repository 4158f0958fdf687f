"""Scikit-learn compatible wrapper around the streaming alignment step."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .alignment import AlignmentConfig, AlignmentState, align_step, init_alignment
from .core import PoolingFilterSpec, as_latent


class LowFrequencyAligner(BaseEstimator, TransformerMixin):
    """Streaming per-turn latent aligner with an estimator interface.

    ``fit`` seeds the anchor statistics from the round-0 latent; each
    ``transform`` call consumes one editing turn's latent, returns the
    aligned float32 array, and advances the internal anchors — mirroring
    the turn-by-turn deployment. Use ``get_params``/``set_params`` for
    pipeline composition and ``clone`` for a fresh, unfitted copy.
    """

    def __init__(
        self,
        window: int = 9,
        alpha_mu: float = 0.95,
        alpha_sigma: float = 0.85,
        epsilon: float = 1e-5,
        anchor_mode: str = "ema",
        scope: str = "low_only",
        zero_sigma_substitute: bool = False,
    ):
        self.window = window
        self.alpha_mu = alpha_mu
        self.alpha_sigma = alpha_sigma
        self.epsilon = epsilon
        self.anchor_mode = anchor_mode
        self.scope = scope
        self.zero_sigma_substitute = zero_sigma_substitute

    def _config(self) -> AlignmentConfig:
        return AlignmentConfig(
            pool=PoolingFilterSpec(window=self.window),
            alpha_mu=self.alpha_mu,
            alpha_sigma=self.alpha_sigma,
            epsilon=self.epsilon,
            anchor_mode=self.anchor_mode,
            scope=self.scope,
        )

    def fit(self, X, y=None) -> "LowFrequencyAligner":
        """Initialize anchors from the initial (C, H, W) latent."""
        z0 = as_latent(X)
        self.config_ = self._config()
        self.state_ = init_alignment(
            z0, self.config_, zero_sigma_substitute=self.zero_sigma_substitute
        )
        self.n_channels_ = z0.channels
        self.n_turns_ = 0
        return self

    def transform(self, X) -> np.ndarray:
        """Align one turn's (C, H, W) latent and advance the anchors."""
        self._check_fitted()
        z_hat, self.state_ = align_step(as_latent(X), self.state_, self.config_)
        self.n_turns_ += 1
        return z_hat.data

    def state(self) -> AlignmentState:
        """Current anchor chain (immutable snapshot)."""
        self._check_fitted()
        return self.state_

    def _check_fitted(self) -> None:
        if not hasattr(self, "state_"):
            raise NotFittedError(
                "this LowFrequencyAligner is not fitted yet; call fit(z0) first"
            )
