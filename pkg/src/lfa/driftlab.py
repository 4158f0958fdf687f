"""Synthetic drift models and multi-turn harnesses.

The transition operators are constructed stand-ins for the two stages of a
latent editing pipeline: a DiT-like stage that accumulates low-frequency
bias (channel-level offsets plus smooth structure, compounding low-band
gain, small high-band perturbations) and a VAE-like stage that adds a
stable, spectrally flat reconstruction noise with a mild pull of low-band
statistics back toward its input. They exist so the suppression and
attribution behavior of the alignment step can be verified at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import uniform_filter

from .alignment import AlignmentConfig, AlignmentState, align_step, init_alignment
from .core import LatentTensor, PoolingFilterSpec, channel_mean_std, check_same_shape, decompose, ensure_finite, save_latent
from .errors import ConfigError
from .spectral import (
    DEFAULT_BINS,
    DEFAULT_FLOOR,
    DEFAULT_R_SPLIT,
    RadialSpectrum,
    SpectrumDiff,
    band_energy,
    radial_spectrum,
    relative_spectrum_diff,
)

_MODEL_WINDOW = 9
_BIAS_STREAM_TAG = 0xB1A5


@dataclass(frozen=True)
class SyntheticDitParams:
    """Per-turn DiT-like drift: a fixed seeded low-frequency bias field,
    compounding low-band gain, and fresh high-band noise each turn.

    ``bias_multiplier`` scales (and may negate) the fixed field; it exists
    so cycle experiments can build approximate inverses of an operator.
    """

    low_bias_scale: float = 0.05
    low_gain: float = 1.01
    high_noise_scale: float = 0.005
    bias_seed: int = 0
    bias_multiplier: float = 1.0

    def __post_init__(self):
        if self.low_bias_scale < 0:
            raise ConfigError("low_bias_scale must be >= 0")
        if self.high_noise_scale < 0:
            raise ConfigError("high_noise_scale must be >= 0")


@dataclass(frozen=True)
class SyntheticVaeParams:
    """Per-turn VAE-like round-trip: flat additive noise plus a partial pull
    of low-band statistics back toward the input's own values."""

    flat_noise_scale: float = 0.01
    low_regularize: float = 0.1

    def __post_init__(self):
        if self.flat_noise_scale < 0:
            raise ConfigError("flat_noise_scale must be >= 0")
        if not 0.0 <= self.low_regularize <= 1.0:
            raise ConfigError("low_regularize must lie in [0, 1]")


@dataclass(frozen=True)
class ComposedParams:
    dit: SyntheticDitParams = field(default_factory=SyntheticDitParams)
    vae: SyntheticVaeParams = field(default_factory=SyntheticVaeParams)


@dataclass(frozen=True)
class TransitionOperator:
    """Deterministic per-turn latent transition.

    The same input tensor, seed, and turn index always produce the same
    output; randomness is drawn from streams keyed on (seed, turn).
    """

    kind: str
    params: object
    seed: int = 0

    def __post_init__(self):
        kinds = ("synthetic_dit", "synthetic_vae", "composed", "external_adapter")
        if self.kind not in kinds:
            raise ConfigError(f"operator kind must be one of {kinds}, got {self.kind!r}")
        if self.seed < 0:
            raise ConfigError("operator seed must be non-negative")


def identity_operator() -> TransitionOperator:
    """A synthetic DiT with neutral parameters: the exact identity map."""
    return TransitionOperator(
        "synthetic_dit",
        SyntheticDitParams(low_bias_scale=0.0, low_gain=1.0, high_noise_scale=0.0),
    )


def inverse_of(op: TransitionOperator, residual: float = 0.0) -> TransitionOperator:
    """Approximate inverse of a synthetic DiT operator.

    Negates the bias field (scaled down by ``residual``) and inverts the
    low-band gain; high-band noise is not invertible and is kept as-is.
    """
    if op.kind != "synthetic_dit":
        raise ConfigError(f"only synthetic_dit operators can be inverted, got {op.kind!r}")
    p = op.params
    inverted = replace(
        p,
        low_gain=1.0 / p.low_gain,
        bias_multiplier=-(1.0 - residual) * p.bias_multiplier,
    )
    return TransitionOperator("synthetic_dit", inverted, op.seed)


@lru_cache(maxsize=32)
def _bias_field(bias_seed: int, shape: tuple[int, int, int], window: int) -> np.ndarray:
    """Fixed low-frequency bias pattern for a latent shape.

    The seeded noise field combines per-channel offsets with white spatial
    noise; low-passing passes the offsets untouched and smooths the rest,
    so the bias drifts channel tone as well as smooth structure. Two box
    passes (a triangle kernel) are used so the fixed field has negligible
    sidelobe energy at high radii even when it accumulates coherently over
    many turns.
    """
    g = np.random.default_rng((_BIAS_STREAM_TAG, bias_seed, *shape))
    offsets = g.standard_normal(shape[0])
    noise = g.standard_normal(shape) + offsets[:, None, None]
    pooled = uniform_filter(noise, size=(1, window, window), mode="nearest")
    pooled = uniform_filter(pooled, size=(1, window, window), mode="nearest")
    pooled.flags.writeable = False
    return pooled


def _turn_rng(seed: int, turn: int, lane: int) -> np.random.Generator:
    return np.random.default_rng((seed, turn, lane))


def _pool64(data: np.ndarray, window: int) -> np.ndarray:
    return uniform_filter(data, size=(1, window, window), mode="nearest")


def _apply_dit(z: LatentTensor, p: SyntheticDitParams, seed: int, turn: int) -> LatentTensor:
    data = z.data.astype(np.float64)
    low = _pool64(data, _MODEL_WINDOW)
    high = data - low
    out = p.low_gain * low + high
    if p.low_bias_scale > 0.0 and p.bias_multiplier != 0.0:
        bias = _bias_field(p.bias_seed, z.shape, _MODEL_WINDOW)
        out = out + (p.low_bias_scale * p.bias_multiplier) * bias
    if p.high_noise_scale > 0.0:
        white = _turn_rng(seed, turn, 1).standard_normal(z.shape)
        out = out + p.high_noise_scale * (white - _pool64(white, _MODEL_WINDOW))
    result = out.astype(np.float32)
    ensure_finite(result, "synthetic_dit output")
    return LatentTensor(result)


def _apply_vae(z: LatentTensor, p: SyntheticVaeParams, seed: int, turn: int) -> LatentTensor:
    data = z.data.astype(np.float64)
    out = data
    if p.flat_noise_scale > 0.0:
        out = out + p.flat_noise_scale * _turn_rng(seed, turn, 2).standard_normal(z.shape)
    if p.low_regularize > 0.0:
        ref_low = _pool64(data, _MODEL_WINDOW)
        ref_mu = ref_low.mean(axis=(1, 2))
        ref_sigma = ref_low.std(axis=(1, 2))
        low = _pool64(out, _MODEL_WINDOW)
        high = out - low
        mu = low.mean(axis=(1, 2))
        sigma = low.std(axis=(1, 2))
        lam = p.low_regularize
        target_mu = mu + lam * (ref_mu - mu)
        target_sigma = sigma + lam * (ref_sigma - sigma)
        gain = np.divide(target_sigma, sigma, out=np.ones_like(sigma), where=sigma > 0)
        low = target_mu[:, None, None] + gain[:, None, None] * (low - mu[:, None, None])
        out = low + high
    result = out.astype(np.float32)
    ensure_finite(result, "synthetic_vae output")
    return LatentTensor(result)


def apply_transition(op: TransitionOperator, z: LatentTensor, turn: int) -> LatentTensor:
    """Run one deterministic transition turn on a latent."""
    if op.kind == "synthetic_dit":
        return _apply_dit(z, op.params, op.seed, turn)
    if op.kind == "synthetic_vae":
        return _apply_vae(z, op.params, op.seed, turn)
    if op.kind == "composed":
        mid = _apply_dit(z, op.params.dit, op.seed, turn)
        return _apply_vae(mid, op.params.vae, op.seed, turn)
    if op.kind == "external_adapter":
        from .adapter import latent_round_trip

        return latent_round_trip(op.params, z)
    raise ConfigError(f"unknown operator kind {op.kind!r}")


@dataclass(frozen=True)
class BiasDecomposition:
    """One-turn no-op bias and, for composed operators, its two-stage split.

    All terms are exact float64 differences of float32 latents, so for a
    composed operator dit_term + vae_term reproduces total exactly.
    """

    total: np.ndarray
    dit_term: np.ndarray | None = None
    vae_term: np.ndarray | None = None


def no_op_bias(op: TransitionOperator, z: LatentTensor, turn: int = 1) -> BiasDecomposition:
    """Fixed-point violation of one transition turn: apply(z) - z."""
    z64 = z.data.astype(np.float64)
    if op.kind == "composed":
        mid = _apply_dit(z, op.params.dit, op.seed, turn)
        full = _apply_vae(mid, op.params.vae, op.seed, turn)
        mid64 = mid.data.astype(np.float64)
        full64 = full.data.astype(np.float64)
        return BiasDecomposition(full64 - z64, mid64 - z64, full64 - mid64)
    out = apply_transition(op, z, turn)
    return BiasDecomposition(out.data.astype(np.float64) - z64)


@dataclass(frozen=True)
class DriftRecord:
    """Drift of one turn's latent against the round-0 latent."""

    turn: int
    l1: float
    l2: float
    ssim: float
    low_band_energy: float
    high_band_energy: float
    mu_disp: float
    sigma_disp: float


@dataclass
class DriftReport:
    """Per-turn drift records plus the configuration that produced them."""

    records: list[DriftRecord]
    meta: dict[str, str]
    spectra: dict[int, RadialSpectrum]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            for key, value in self.meta.items():
                fp.write(f"# {key} = {value}\n")
            fp.write("turn,l1,l2,ssim,low_band_energy,high_band_energy,mu_disp,sigma_disp\n")
            for r in self.records:
                fp.write(
                    f"{r.turn},{r.l1!r},{r.l2!r},{r.ssim!r},{r.low_band_energy!r},"
                    f"{r.high_band_energy!r},{r.mu_disp!r},{r.sigma_disp!r}\n"
                )

    def final(self) -> DriftRecord:
        return self.records[-1]


@dataclass
class TrajectoryResult:
    report: DriftReport
    latents: list[LatentTensor] | None = None
    state: AlignmentState | None = None


def _global_ssim(a: np.ndarray, b: np.ndarray) -> float:
    # single-window SSIM per channel; dynamic range from the joint value span
    values = []
    for c in range(a.shape[0]):
        ac, bc = a[c], b[c]
        span = max(ac.max(), bc.max()) - min(ac.min(), bc.min())
        if span == 0.0:
            values.append(1.0)
            continue
        c1 = (0.01 * span) ** 2
        c2 = (0.03 * span) ** 2
        mu_a, mu_b = ac.mean(), bc.mean()
        var_a, var_b = ac.var(), bc.var()
        cov = ((ac - mu_a) * (bc - mu_b)).mean()
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        values.append(float(num / den))
    return float(np.mean(values))


def latent_metrics(a: LatentTensor, b: LatentTensor) -> dict[str, float]:
    """Per-element L1/L2 distance and channel-averaged global SSIM.

    SSIM here is computed on latent maps, not decoded images; reports label
    the domain accordingly.
    """
    check_same_shape(a, b)
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    diff = a64 - b64
    return {
        "l1": float(np.abs(diff).mean()),
        "l2": float(np.sqrt(np.square(diff).mean())),
        "ssim_global": _global_ssim(a64, b64),
    }


def drift_record(
    turn: int,
    z_k: LatentTensor,
    z0: LatentTensor,
    *,
    r_split: float = DEFAULT_R_SPLIT,
    pool: PoolingFilterSpec | None = None,
    ref_stats=None,
) -> DriftRecord:
    """Measure one turn's drift against the round-0 latent."""
    pool = pool or PoolingFilterSpec()
    metrics = latent_metrics(z_k, z0)
    diff = LatentTensor(
        (z_k.data.astype(np.float64) - z0.data.astype(np.float64)).astype(np.float32)
    )
    low_e, high_e = band_energy(diff, r_split)
    if ref_stats is None:
        ref_stats = channel_mean_std(decompose(z0, pool).low)
    stats_k = channel_mean_std(decompose(z_k, pool).low)
    return DriftRecord(
        turn=turn,
        l1=metrics["l1"],
        l2=metrics["l2"],
        ssim=metrics["ssim_global"],
        low_band_energy=low_e,
        high_band_energy=high_e,
        mu_disp=float(np.abs(stats_k.means - ref_stats.means).mean()),
        sigma_disp=float(np.abs(stats_k.stds - ref_stats.stds).mean()),
    )


def _operator_meta(op: TransitionOperator) -> dict[str, str]:
    return {"operator": op.kind, "operator_seed": str(op.seed), "operator_params": repr(op.params)}


def run_no_op_trajectory(
    op: TransitionOperator,
    z0: LatentTensor,
    turns: int,
    lfa: AlignmentConfig | None = None,
    *,
    r_split: float = DEFAULT_R_SPLIT,
    bins: int = DEFAULT_BINS,
    spectrum_turns: tuple[int, ...] = (),
    keep_latents: bool = False,
    out_dir=None,
    zero_sigma_substitute: bool = False,
) -> TrajectoryResult:
    """Iterate a no-op transition for ``turns`` rounds, optionally with the
    alignment step interposed after every transition (white-box shape), and
    record drift to round 0 each turn."""
    if turns < 1:
        raise ConfigError("turns must be >= 1")
    pool = lfa.pool if lfa is not None else PoolingFilterSpec()
    state = (
        init_alignment(z0, lfa, zero_sigma_substitute=zero_sigma_substitute)
        if lfa is not None
        else None
    )
    ref_stats = channel_mean_std(decompose(z0, pool).low)
    meta = _operator_meta(op)
    meta.update({"protocol": "no_op", "turns": str(turns), "r_split": repr(r_split)})
    meta["lfa"] = "off" if lfa is None else (
        f"scope={lfa.scope} mode={lfa.anchor_mode} window={lfa.pool.window} "
        f"alpha_mu={lfa.alpha_mu!r} alpha_sigma={lfa.alpha_sigma!r} epsilon={lfa.epsilon!r}"
    )
    records: list[DriftRecord] = []
    spectra: dict[int, RadialSpectrum] = {}
    latents = [z0] if keep_latents else None
    if out_dir is not None:
        save_latent(z0, f"{out_dir}/turn_0000.npy")
    z = z0
    for k in range(1, turns + 1):
        z = apply_transition(op, z, k)
        if state is not None:
            z, state = align_step(z, state, lfa)
        records.append(drift_record(k, z, z0, r_split=r_split, pool=pool, ref_stats=ref_stats))
        if k in spectrum_turns:
            diff = LatentTensor(
                (z.data.astype(np.float64) - z0.data.astype(np.float64)).astype(np.float32)
            )
            spectra[k] = radial_spectrum(diff, bins=bins, remove_dc=True)
        if latents is not None:
            latents.append(z)
        if out_dir is not None:
            save_latent(z, f"{out_dir}/turn_{k:04d}.npy")
    return TrajectoryResult(DriftReport(records, meta, spectra), latents, state)


def run_cycle_trajectory(
    op_forward: TransitionOperator,
    op_backward: TransitionOperator,
    z0: LatentTensor,
    pairs: int,
    lfa: AlignmentConfig | None = None,
    *,
    r_split: float = DEFAULT_R_SPLIT,
    zero_sigma_substitute: bool = False,
) -> TrajectoryResult:
    """Alternate forward/backward transitions for 2*pairs turns; drift to
    round 0 is recorded at the end of each pair."""
    if pairs < 1:
        raise ConfigError("pairs must be >= 1")
    pool = lfa.pool if lfa is not None else PoolingFilterSpec()
    state = (
        init_alignment(z0, lfa, zero_sigma_substitute=zero_sigma_substitute)
        if lfa is not None
        else None
    )
    ref_stats = channel_mean_std(decompose(z0, pool).low)
    meta = {"protocol": "cycle", "pairs": str(pairs)}
    meta.update({f"forward_{k}": v for k, v in _operator_meta(op_forward).items()})
    meta.update({f"backward_{k}": v for k, v in _operator_meta(op_backward).items()})
    meta["lfa"] = "off" if lfa is None else f"scope={lfa.scope} mode={lfa.anchor_mode}"
    records: list[DriftRecord] = []
    z = z0
    for pair in range(1, pairs + 1):
        for op, turn in ((op_forward, 2 * pair - 1), (op_backward, 2 * pair)):
            z = apply_transition(op, z, turn)
            if state is not None:
                z, state = align_step(z, state, lfa)
        records.append(
            drift_record(2 * pair, z, z0, r_split=r_split, pool=pool, ref_stats=ref_stats)
        )
    return TrajectoryResult(DriftReport(records, meta, {}), None, state)


def run_attribution(
    z0: LatentTensor,
    dit_op: TransitionOperator,
    vae_op: TransitionOperator,
    turns: int,
    *,
    bins: int = DEFAULT_BINS,
    floor: float = DEFAULT_FLOOR,
) -> SpectrumDiff:
    """Relative radial-spectrum difference of the two single-stage loops.

    Runs a DiT-only and a VAE-only trajectory from the same start, takes
    the radial spectrum of each cumulative round-K difference (DC removed),
    and returns the percent difference of the DiT spectrum against the VAE
    spectrum.
    """
    if turns < 1:
        raise ConfigError("turns must be >= 1")
    spectra = []
    for op in (dit_op, vae_op):
        z = z0
        for k in range(1, turns + 1):
            z = apply_transition(op, z, k)
        diff = LatentTensor(
            (z.data.astype(np.float64) - z0.data.astype(np.float64)).astype(np.float32)
        )
        spectra.append(radial_spectrum(diff, bins=bins, remove_dc=True))
    return relative_spectrum_diff(spectra[0], spectra[1], floor=floor)


def paired_bootstrap(
    deltas, n_resamples: int = 10_000, alpha: float = 0.05, seed: int = 0
) -> tuple[float, float, float]:
    """Percentile bootstrap of a mean paired difference.

    Resamples the paired deltas with replacement and returns
    (mean, ci_low, ci_high) at the requested level.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size == 0:
        raise ConfigError("paired bootstrap needs at least one delta")
    g = np.random.default_rng(seed)
    idx = g.integers(0, deltas.size, size=(n_resamples, deltas.size))
    means = deltas[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(deltas.mean()), float(lo), float(hi)
