"""Low-frequency latent alignment and spectral drift diagnostics for
serialized VAE latents: decompose, align against running statistics
anchors, measure radial-spectrum drift, and drive multi-turn sessions."""

from .alignment import (
    AlignmentConfig,
    AlignmentState,
    AnchorState,
    align_low,
    align_step,
    anchor_init,
    anchor_update,
    deserialize_anchor,
    init_alignment,
    serialize_anchor,
)
from .adapter import AdapterSpec
from .core import (
    ChannelStats,
    FrequencyDecomposition,
    LatentTensor,
    PoolingFilterSpec,
    as_latent,
    channel_mean_std,
    decompose,
    load_latent,
    low_pass,
    save_latent,
)
from .driftlab import (
    BiasDecomposition,
    ComposedParams,
    DriftRecord,
    DriftReport,
    SyntheticDitParams,
    SyntheticVaeParams,
    TransitionOperator,
    apply_transition,
    identity_operator,
    inverse_of,
    latent_metrics,
    no_op_bias,
    paired_bootstrap,
    run_attribution,
    run_cycle_trajectory,
    run_no_op_trajectory,
)
from .errors import (
    AdapterError,
    ConfigError,
    LatentFormatError,
    LfaError,
    NumericDomainError,
    SessionIntegrityError,
)
from .estimator import LowFrequencyAligner
from .session import Session, SessionConfig
from .spectral import (
    RadialSpectrum,
    SpectrumDiff,
    band_energy,
    parseval_check,
    power_spectrum_2d,
    radial_spectrum,
    relative_spectrum_diff,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AdapterSpec",
    "AlignmentConfig",
    "AlignmentState",
    "AnchorState",
    "BiasDecomposition",
    "ChannelStats",
    "ComposedParams",
    "ConfigError",
    "DriftRecord",
    "DriftReport",
    "FrequencyDecomposition",
    "LatentFormatError",
    "LatentTensor",
    "LfaError",
    "LowFrequencyAligner",
    "NumericDomainError",
    "PoolingFilterSpec",
    "RadialSpectrum",
    "Session",
    "SessionConfig",
    "SessionIntegrityError",
    "SpectrumDiff",
    "SyntheticDitParams",
    "SyntheticVaeParams",
    "TransitionOperator",
    "align_low",
    "align_step",
    "anchor_init",
    "anchor_update",
    "apply_transition",
    "as_latent",
    "band_energy",
    "channel_mean_std",
    "decompose",
    "deserialize_anchor",
    "identity_operator",
    "init_alignment",
    "inverse_of",
    "latent_metrics",
    "load_latent",
    "low_pass",
    "no_op_bias",
    "paired_bootstrap",
    "parseval_check",
    "power_spectrum_2d",
    "radial_spectrum",
    "relative_spectrum_diff",
    "run_attribution",
    "run_cycle_trajectory",
    "run_no_op_trajectory",
    "save_latent",
    "serialize_anchor",
]
