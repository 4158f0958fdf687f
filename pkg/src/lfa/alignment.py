"""Low-frequency statistics alignment: EMA anchor state machine,
channel-wise moment matching, and the per-turn step that chains
decomposition, alignment, recombination, and anchor updates."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    LatentTensor,
    PoolingFilterSpec,
    channel_mean_std,
    decompose,
    ensure_finite,
)
from .errors import ConfigError, NumericDomainError

ANCHOR_MODES = ("ema", "fixed", "prev")
SCOPES = ("low_only", "high_only", "both")

ANCHOR_FORMAT_VERSION = "lfa-anchor-v1"


@dataclass(frozen=True)
class AlignmentConfig:
    """Knobs of the per-turn alignment step.

    Defaults follow the reference deployment: 9x9 pooling window,
    alpha_mu=0.95, alpha_sigma=0.85, epsilon=1e-5, EMA anchors, and
    low-band-only alignment.
    """

    pool: PoolingFilterSpec = PoolingFilterSpec()
    alpha_mu: float = 0.95
    alpha_sigma: float = 0.85
    epsilon: float = 1e-5
    anchor_mode: str = "ema"
    scope: str = "low_only"

    def __post_init__(self):
        if self.anchor_mode not in ANCHOR_MODES:
            raise ConfigError(f"anchor_mode must be one of {ANCHOR_MODES}, got {self.anchor_mode!r}")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.anchor_mode == "ema" and not (0.0 < self.alpha_mu < 1.0 and 0.0 < self.alpha_sigma < 1.0):
            raise ConfigError("EMA momentum coefficients must lie strictly in (0, 1)")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def aligns_low(self) -> bool:
        return self.scope in ("low_only", "both")

    @property
    def aligns_high(self) -> bool:
        return self.scope in ("high_only", "both")


@dataclass(frozen=True)
class AnchorState:
    """Per-channel running mean and log-std targets for one band."""

    m_mu: np.ndarray
    m_log_sigma: np.ndarray
    turn: int
    mode: str

    def __post_init__(self):
        if self.m_mu.shape != self.m_log_sigma.shape or self.m_mu.ndim != 1:
            raise ValueError("anchor vectors must be 1-d and equal length")

    @property
    def channels(self) -> int:
        return len(self.m_mu)


@dataclass(frozen=True)
class AlignmentState:
    """Anchor chain for a session: low band, high band, or both per scope."""

    low: AnchorState | None
    high: AnchorState | None

    @property
    def turn(self) -> int:
        anchor = self.low if self.low is not None else self.high
        if anchor is None:
            raise ValueError("alignment state holds no anchors")
        return anchor.turn


def _stats64(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    data = data.astype(np.float64, copy=False)
    means = data.mean(axis=(1, 2))
    stds = np.sqrt(np.square(data - means[:, None, None]).mean(axis=(1, 2)))
    return means, stds


def _checked_log_sigma(stds: np.ndarray, epsilon: float, substitute: bool, what: str) -> np.ndarray:
    zero = stds <= 0.0
    if zero.any():
        if not substitute:
            bad = [int(i) for i in np.flatnonzero(zero)]
            raise NumericDomainError(
                f"{what}: zero standard deviation in channels {bad} (log undefined); "
                "pass zero_sigma_substitute=True to fall back to epsilon",
                channels=bad,
            )
        stds = np.where(zero, epsilon, stds)
    return np.log(stds)


def _anchor_from_stats(
    means: np.ndarray,
    stds: np.ndarray,
    cfg: AlignmentConfig,
    zero_sigma_substitute: bool,
    what: str,
) -> AnchorState:
    log_sigma = _checked_log_sigma(stds, cfg.epsilon, zero_sigma_substitute, what)
    return AnchorState(means.copy(), log_sigma, 0, cfg.anchor_mode)


def anchor_init(
    l0: LatentTensor, cfg: AlignmentConfig, *, zero_sigma_substitute: bool = False
) -> AnchorState:
    """Seed an anchor from the round-0 band component: m_mu from the channel
    means, m_log_sigma from the log channel stds, turn 0.

    Channels whose std is exactly zero make the log undefined and raise
    unless the epsilon substitute is explicitly requested.
    """
    stats = channel_mean_std(l0)
    return _anchor_from_stats(stats.means, stats.stds, cfg, zero_sigma_substitute, "anchor_init")


def _updated_anchor(
    state: AnchorState, means: np.ndarray, stds: np.ndarray, cfg: AlignmentConfig
) -> AnchorState:
    if state.mode == "fixed":
        return replace(state, turn=state.turn + 1)
    log_sigma = _checked_log_sigma(stds, cfg.epsilon, False, f"anchor_update({state.mode})")
    if state.mode == "prev":
        return AnchorState(means.copy(), log_sigma, state.turn + 1, state.mode)
    m_mu = cfg.alpha_mu * state.m_mu + (1.0 - cfg.alpha_mu) * means
    m_log_sigma = cfg.alpha_sigma * state.m_log_sigma + (1.0 - cfg.alpha_sigma) * log_sigma
    return AnchorState(m_mu, m_log_sigma, state.turn + 1, state.mode)


def anchor_update(state: AnchorState, l_k: LatentTensor, cfg: AlignmentConfig) -> AnchorState:
    """Advance the anchor one turn using the pre-alignment band component.

    ema blends per the momentum coefficients, fixed only increments the
    turn, prev replaces the statistics wholesale.
    """
    if l_k.channels != state.channels:
        raise ConfigError(
            f"anchor tracks {state.channels} channels, got tensor with {l_k.channels}"
        )
    stats = channel_mean_std(l_k)
    return _updated_anchor(state, stats.means, stats.stds, cfg)


def _match_stats64(
    data: np.ndarray, state: AnchorState, epsilon: float
) -> np.ndarray:
    means, stds = _stats64(data)
    gain = np.exp(state.m_log_sigma) / (stds + epsilon)
    out = state.m_mu[:, None, None] + gain[:, None, None] * (
        data.astype(np.float64, copy=False) - means[:, None, None]
    )
    ensure_finite(out, "alignment output")
    return out


def align_low(l_k: LatentTensor, state: AnchorState, cfg: AlignmentConfig) -> LatentTensor:
    """Channel-wise moment matching of a band against anchor targets:
    out_c = m_mu[c] + exp(m_log_sigma[c]) / (sigma_c + epsilon) * (l_c - mu_c)."""
    if l_k.channels != state.channels:
        raise ConfigError(
            f"anchor tracks {state.channels} channels, got tensor with {l_k.channels}"
        )
    out = _match_stats64(l_k.data, state, cfg.epsilon)
    return LatentTensor(out.astype(np.float32), l_k.label)


def init_alignment(
    z0: LatentTensor, cfg: AlignmentConfig, *, zero_sigma_substitute: bool = False
) -> AlignmentState:
    """Build the turn-0 anchor chain from the initial latent's band components."""
    parts = decompose(z0, cfg.pool)
    low = high = None
    if cfg.aligns_low:
        low = anchor_init(parts.low, cfg, zero_sigma_substitute=zero_sigma_substitute)
    if cfg.aligns_high:
        means, stds = _stats64(parts.high)
        high = _anchor_from_stats(means, stds, cfg, zero_sigma_substitute, "anchor_init(high)")
    return AlignmentState(low=low, high=high)


def align_step(
    z_tilde: LatentTensor, state: AlignmentState, cfg: AlignmentConfig
) -> tuple[LatentTensor, AlignmentState]:
    """One alignment turn: decompose, align the configured band(s) against
    the previous-turn anchors, recombine, then advance the anchors with the
    pre-alignment statistics.

    Returns the float32 aligned latent and the new state; inputs are
    untouched.
    """
    parts = decompose(z_tilde, cfg.pool)
    low_band = parts.low.data.astype(np.float64)
    high_band = parts.high

    new_low = state.low
    new_high = state.high
    out_low = low_band
    out_high = high_band

    if cfg.aligns_low:
        if state.low is None:
            raise ConfigError(f"scope {cfg.scope!r} needs a low-band anchor")
        aligned = _match_stats64(parts.low.data, state.low, cfg.epsilon)
        # canonical f32 band first, so file-level and in-library flows agree
        out_low = aligned.astype(np.float32).astype(np.float64)
        pre_means, pre_stds = _stats64(parts.low.data)
        new_low = _updated_anchor(state.low, pre_means, pre_stds, cfg)
    if cfg.aligns_high:
        if state.high is None:
            raise ConfigError(f"scope {cfg.scope!r} needs a high-band anchor")
        aligned = _match_stats64(high_band, state.high, cfg.epsilon)
        out_high = aligned.astype(np.float32).astype(np.float64)
        pre_means, pre_stds = _stats64(high_band)
        new_high = _updated_anchor(state.high, pre_means, pre_stds, cfg)

    z_hat = (out_low + out_high).astype(np.float32)
    ensure_finite(z_hat, "aligned latent")
    return LatentTensor(z_hat, z_tilde.label), AlignmentState(low=new_low, high=new_high)


def serialize_anchor(state: AnchorState) -> str:
    """Line-oriented text record: version, mode, turn, then one line per
    channel with round-trippable decimal values."""
    lines = [ANCHOR_FORMAT_VERSION, f"mode {state.mode}", f"turn {state.turn}"]
    for c in range(state.channels):
        lines.append(f"{c} {float(state.m_mu[c])!r} {float(state.m_log_sigma[c])!r}")
    return "\n".join(lines) + "\n"


def deserialize_anchor(text: str, expected_channels: int | None = None) -> AnchorState:
    """Parse a serialized anchor; exact inverse of :func:`serialize_anchor`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise ConfigError("anchor record truncated: need version, mode, turn and channel lines")
    if lines[0].strip() != ANCHOR_FORMAT_VERSION:
        raise ConfigError(f"unknown anchor format {lines[0].strip()!r}")
    try:
        _, mode = lines[1].split()
        _, turn_text = lines[2].split()
        turn = int(turn_text)
    except ValueError as exc:
        raise ConfigError(f"malformed anchor header: {exc}") from exc
    if mode not in ANCHOR_MODES:
        raise ConfigError(f"unknown anchor mode {mode!r}")
    if turn < 0:
        raise ConfigError(f"anchor turn must be non-negative, got {turn}")
    m_mu = []
    m_log_sigma = []
    for offset, line in enumerate(lines[3:]):
        fields = line.split()
        if len(fields) != 3:
            raise ConfigError(f"malformed anchor channel line {line!r}")
        try:
            idx, mu, log_sigma = int(fields[0]), float(fields[1]), float(fields[2])
        except ValueError as exc:
            raise ConfigError(f"malformed anchor channel line {line!r}") from exc
        if idx != offset:
            raise ConfigError(f"anchor channel lines out of order at index {idx}")
        m_mu.append(mu)
        m_log_sigma.append(log_sigma)
    state = AnchorState(np.array(m_mu), np.array(m_log_sigma), turn, mode)
    if not (np.isfinite(state.m_mu).all() and np.isfinite(state.m_log_sigma).all()):
        raise ConfigError("anchor record contains non-finite statistics")
    if expected_channels is not None and state.channels != expected_channels:
        raise ConfigError(
            f"anchor has {state.channels} channels, session expects {expected_channels}"
        )
    return state
