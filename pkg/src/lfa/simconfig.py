"""Config-file driven drift experiments (the ``simulate`` subcommand).

Config schema (flat ``key = value`` lines, ``#`` comments):

    experiment = no_op | cycle | attribution   (required)
    turns = 10                  no_op / attribution rounds
    pairs = 5                   cycle pairs (2*pairs turns)
    seeds = 20                  number of trajectories
    seed = 1234                 base seed; trajectory i derives from seed+i
    channels = 32
    height = 64
    width = 64
    operator = synthetic_dit | synthetic_vae | composed | identity
    dit.low_bias_scale = 0.05
    dit.low_gain = 1.01
    dit.high_noise_scale = 0.005
    dit.bias_seed = <int>       fixed bias field; per-trajectory when omitted
    vae.flat_noise_scale = 0.01
    vae.low_regularize = 0.1
    cycle.residual = 0.1        leftover fraction of the backward bias
    lfa = paired | on | off
    lfa.window = 9
    lfa.alpha_mu = 0.95
    lfa.alpha_sigma = 0.85
    lfa.epsilon = 1e-5
    lfa.anchor_mode = ema | fixed | prev
    lfa.scope = low_only | high_only | both
    bins = 50
    r_split = 0.2
    floor = 1e-12
    bootstrap_resamples = 2000
    spectrum_turns = 5,10       spectra exported for the first trajectory

Unknown keys are schema violations. All outputs are deterministic byte for
byte given the same config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentConfig
from .core import LatentTensor, PoolingFilterSpec
from .driftlab import (
    ComposedParams,
    DriftReport,
    SyntheticDitParams,
    SyntheticVaeParams,
    TransitionOperator,
    identity_operator,
    inverse_of,
    paired_bootstrap,
    run_attribution,
    run_cycle_trajectory,
    run_no_op_trajectory,
)
from .errors import ConfigError
from .kvconfig import format_kv, parse_float, parse_int
from .spectral import export_spectrum_csv

_EXPERIMENTS = ("no_op", "cycle", "attribution")
_OPERATORS = ("synthetic_dit", "synthetic_vae", "composed", "identity")
_LFA_MODES = ("paired", "on", "off")
_Z0_STREAM_TAG = 0x5EED


@dataclass(frozen=True)
class SimulateSpec:
    experiment: str
    turns: int = 10
    pairs: int = 5
    seeds: int = 20
    seed: int = 1234
    shape: tuple[int, int, int] = (32, 64, 64)
    operator: str = "synthetic_dit"
    dit_low_bias_scale: float = 0.05
    dit_low_gain: float = 1.01
    dit_high_noise_scale: float = 0.005
    dit_bias_seed: int | None = None
    vae_flat_noise_scale: float = 0.01
    vae_low_regularize: float = 0.1
    cycle_residual: float = 0.1
    lfa_mode: str = "paired"
    lfa_window: int = 9
    lfa_alpha_mu: float = 0.95
    lfa_alpha_sigma: float = 0.85
    lfa_epsilon: float = 1e-5
    lfa_anchor_mode: str = "ema"
    lfa_scope: str = "low_only"
    bins: int = 50
    r_split: float = 0.2
    floor: float = 1e-12
    bootstrap_resamples: int = 2000
    spectrum_turns: tuple[int, ...] = ()

    def alignment(self) -> AlignmentConfig:
        return AlignmentConfig(
            pool=PoolingFilterSpec(window=self.lfa_window),
            alpha_mu=self.lfa_alpha_mu,
            alpha_sigma=self.lfa_alpha_sigma,
            epsilon=self.lfa_epsilon,
            anchor_mode=self.lfa_anchor_mode,
            scope=self.lfa_scope,
        )

    def echo(self) -> dict[str, str]:
        c, h, w = self.shape
        pairs = {
            "experiment": self.experiment,
            "turns": str(self.turns),
            "pairs": str(self.pairs),
            "seeds": str(self.seeds),
            "seed": str(self.seed),
            "channels": str(c),
            "height": str(h),
            "width": str(w),
            "operator": self.operator,
            "dit.low_bias_scale": repr(self.dit_low_bias_scale),
            "dit.low_gain": repr(self.dit_low_gain),
            "dit.high_noise_scale": repr(self.dit_high_noise_scale),
            "dit.bias_seed": "per-trajectory" if self.dit_bias_seed is None else str(self.dit_bias_seed),
            "vae.flat_noise_scale": repr(self.vae_flat_noise_scale),
            "vae.low_regularize": repr(self.vae_low_regularize),
            "cycle.residual": repr(self.cycle_residual),
            "lfa": self.lfa_mode,
            "lfa.window": str(self.lfa_window),
            "lfa.alpha_mu": repr(self.lfa_alpha_mu),
            "lfa.alpha_sigma": repr(self.lfa_alpha_sigma),
            "lfa.epsilon": repr(self.lfa_epsilon),
            "lfa.anchor_mode": self.lfa_anchor_mode,
            "lfa.scope": self.lfa_scope,
            "bins": str(self.bins),
            "r_split": repr(self.r_split),
            "floor": repr(self.floor),
            "bootstrap_resamples": str(self.bootstrap_resamples),
            "spectrum_turns": ",".join(str(t) for t in self.spectrum_turns),
        }
        return pairs


def parse_simulate_config(pairs: dict[str, str], source: str = "<config>") -> SimulateSpec:
    known = {
        "experiment", "turns", "pairs", "seeds", "seed", "channels", "height", "width",
        "operator", "dit.low_bias_scale", "dit.low_gain", "dit.high_noise_scale",
        "dit.bias_seed", "vae.flat_noise_scale", "vae.low_regularize", "cycle.residual",
        "lfa", "lfa.window", "lfa.alpha_mu", "lfa.alpha_sigma", "lfa.epsilon",
        "lfa.anchor_mode", "lfa.scope", "bins", "r_split", "floor",
        "bootstrap_resamples", "spectrum_turns",
    }
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {unknown}")
    if "experiment" not in pairs:
        raise ConfigError(f"{source}: missing required key 'experiment'")
    experiment = pairs["experiment"]
    if experiment not in _EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {_EXPERIMENTS}, got {experiment!r}")
    operator = pairs.get("operator", "synthetic_dit")
    if operator not in _OPERATORS:
        raise ConfigError(f"operator must be one of {_OPERATORS}, got {operator!r}")
    lfa_mode = pairs.get("lfa", "paired")
    if lfa_mode not in _LFA_MODES:
        raise ConfigError(f"lfa must be one of {_LFA_MODES}, got {lfa_mode!r}")

    spectrum_turns: tuple[int, ...] = ()
    if pairs.get("spectrum_turns", "").strip():
        spectrum_turns = tuple(
            parse_int(tok.strip(), "spectrum_turns") for tok in pairs["spectrum_turns"].split(",")
        )

    spec = SimulateSpec(
        experiment=experiment,
        turns=parse_int(pairs.get("turns", "10"), "turns"),
        pairs=parse_int(pairs.get("pairs", "5"), "pairs"),
        seeds=parse_int(pairs.get("seeds", "20"), "seeds"),
        seed=parse_int(pairs.get("seed", "1234"), "seed"),
        shape=(
            parse_int(pairs.get("channels", "32"), "channels"),
            parse_int(pairs.get("height", "64"), "height"),
            parse_int(pairs.get("width", "64"), "width"),
        ),
        operator=operator,
        dit_low_bias_scale=parse_float(pairs.get("dit.low_bias_scale", "0.05"), "dit.low_bias_scale"),
        dit_low_gain=parse_float(pairs.get("dit.low_gain", "1.01"), "dit.low_gain"),
        dit_high_noise_scale=parse_float(
            pairs.get("dit.high_noise_scale", "0.005"), "dit.high_noise_scale"
        ),
        dit_bias_seed=(
            parse_int(pairs["dit.bias_seed"], "dit.bias_seed") if "dit.bias_seed" in pairs else None
        ),
        vae_flat_noise_scale=parse_float(
            pairs.get("vae.flat_noise_scale", "0.01"), "vae.flat_noise_scale"
        ),
        vae_low_regularize=parse_float(pairs.get("vae.low_regularize", "0.1"), "vae.low_regularize"),
        cycle_residual=parse_float(pairs.get("cycle.residual", "0.1"), "cycle.residual"),
        lfa_mode=lfa_mode,
        lfa_window=parse_int(pairs.get("lfa.window", "9"), "lfa.window"),
        lfa_alpha_mu=parse_float(pairs.get("lfa.alpha_mu", "0.95"), "lfa.alpha_mu"),
        lfa_alpha_sigma=parse_float(pairs.get("lfa.alpha_sigma", "0.85"), "lfa.alpha_sigma"),
        lfa_epsilon=parse_float(pairs.get("lfa.epsilon", "1e-5"), "lfa.epsilon"),
        lfa_anchor_mode=pairs.get("lfa.anchor_mode", "ema"),
        lfa_scope=pairs.get("lfa.scope", "low_only"),
        bins=parse_int(pairs.get("bins", "50"), "bins"),
        r_split=parse_float(pairs.get("r_split", "0.2"), "r_split"),
        floor=parse_float(pairs.get("floor", "1e-12"), "floor"),
        bootstrap_resamples=parse_int(pairs.get("bootstrap_resamples", "2000"), "bootstrap_resamples"),
        spectrum_turns=spectrum_turns,
    )
    for key, value in (("turns", spec.turns), ("pairs", spec.pairs), ("seeds", spec.seeds)):
        if value < 1:
            raise ConfigError(f"{key} must be >= 1, got {value}")
    if min(spec.shape) < 1:
        raise ConfigError(f"latent shape must be positive, got {spec.shape}")
    spec.alignment()  # validates the lfa.* block
    return spec


def _initial_latent(spec: SimulateSpec, index: int) -> LatentTensor:
    g = np.random.default_rng((spec.seed, index, _Z0_STREAM_TAG))
    return LatentTensor(g.standard_normal(spec.shape).astype(np.float32))


def _dit_params(spec: SimulateSpec, index: int) -> SyntheticDitParams:
    bias_seed = spec.dit_bias_seed if spec.dit_bias_seed is not None else spec.seed + index
    return SyntheticDitParams(
        low_bias_scale=spec.dit_low_bias_scale,
        low_gain=spec.dit_low_gain,
        high_noise_scale=spec.dit_high_noise_scale,
        bias_seed=bias_seed,
    )


def _vae_params(spec: SimulateSpec) -> SyntheticVaeParams:
    return SyntheticVaeParams(
        flat_noise_scale=spec.vae_flat_noise_scale,
        low_regularize=spec.vae_low_regularize,
    )


def _operator(spec: SimulateSpec, index: int) -> TransitionOperator:
    seed = spec.seed + index
    if spec.operator == "identity":
        return identity_operator()
    if spec.operator == "synthetic_dit":
        return TransitionOperator("synthetic_dit", _dit_params(spec, index), seed=seed)
    if spec.operator == "synthetic_vae":
        return TransitionOperator("synthetic_vae", _vae_params(spec), seed=seed)
    return TransitionOperator(
        "composed", ComposedParams(dit=_dit_params(spec, index), vae=_vae_params(spec)), seed=seed
    )


def _write_combined_report(path: Path, spec: SimulateSpec, reports: list[DriftReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for key, value in spec.echo().items():
            fp.write(f"# {key} = {value}\n")
        fp.write("seed_index,turn,l1,l2,ssim,low_band_energy,high_band_energy,mu_disp,sigma_disp\n")
        for index, report in enumerate(reports):
            for r in report.records:
                fp.write(
                    f"{index},{r.turn},{r.l1!r},{r.l2!r},{r.ssim!r},{r.low_band_energy!r},"
                    f"{r.high_band_energy!r},{r.mu_disp!r},{r.sigma_disp!r}\n"
                )


def _percent(value: float) -> str:
    return f"{100.0 * value:.2f}%"


def _run_trajectories(spec: SimulateSpec, out_dir: Path) -> str:
    arms: dict[str, list[DriftReport]] = {}
    wanted = ("with_lfa", "without_lfa") if spec.lfa_mode == "paired" else (
        ("with_lfa",) if spec.lfa_mode == "on" else ("without_lfa",)
    )
    for arm in wanted:
        lfa = spec.alignment() if arm == "with_lfa" else None
        reports = []
        for i in range(spec.seeds):
            z0 = _initial_latent(spec, i)
            spectrum_turns = spec.spectrum_turns if i == 0 else ()
            if spec.experiment == "no_op":
                result = run_no_op_trajectory(
                    _operator(spec, i),
                    z0,
                    spec.turns,
                    lfa,
                    r_split=spec.r_split,
                    bins=spec.bins,
                    spectrum_turns=spectrum_turns,
                )
            else:
                forward = _operator(spec, i)
                backward = (
                    inverse_of(forward, spec.cycle_residual)
                    if forward.kind == "synthetic_dit"
                    else forward
                )
                result = run_cycle_trajectory(
                    forward, backward, z0, spec.pairs, lfa, r_split=spec.r_split
                )
            reports.append(result.report)
            for turn, spectrum in result.report.spectra.items():
                export_spectrum_csv(spectrum, out_dir / f"spectrum_turn{turn:04d}_{arm}.csv")
        arms[arm] = reports
        _write_combined_report(out_dir / f"{spec.experiment}_{arm}.csv", spec, reports)

    rounds = spec.turns if spec.experiment == "no_op" else 2 * spec.pairs
    if spec.lfa_mode != "paired":
        arm = wanted[0]
        mean_l2 = float(np.mean([r.final().l2 for r in arms[arm]]))
        summary = (
            f"{spec.experiment} ({arm}) over {spec.seeds} seeds: "
            f"mean round-{rounds} L2 drift {mean_l2:.6f}"
        )
    else:
        deltas_l2 = []
        deltas_mu = []
        for with_r, without_r in zip(arms["with_lfa"], arms["without_lfa"]):
            off = without_r.final()
            on = with_r.final()
            deltas_l2.append((off.l2 - on.l2) / off.l2 if off.l2 > 0 else 0.0)
            deltas_mu.append((off.mu_disp - on.mu_disp) / off.mu_disp if off.mu_disp > 0 else 0.0)
        mean_l2, lo, hi = paired_bootstrap(
            deltas_l2, n_resamples=spec.bootstrap_resamples, seed=spec.seed
        )
        mean_mu = float(np.mean(deltas_mu))
        summary = (
            f"paired {spec.experiment} over {spec.seeds} seeds: round-{rounds} L2 drift "
            f"reduced {_percent(mean_l2)} (95% CI [{_percent(lo)}, {_percent(hi)}], "
            f"B={spec.bootstrap_resamples}); low-band mu displacement reduced {_percent(mean_mu)}"
        )
    return summary


def _run_attribution(spec: SimulateSpec, out_dir: Path) -> str:
    bins = spec.bins
    total = np.zeros(bins)
    defined_seeds = np.zeros(bins, dtype=int)
    mids = None
    for i in range(spec.seeds):
        z0 = _initial_latent(spec, i)
        seed = spec.seed + i
        dit_op = (
            identity_operator()
            if spec.operator == "identity"
            else TransitionOperator("synthetic_dit", _dit_params(spec, i), seed=seed)
        )
        vae_op = (
            identity_operator()
            if spec.operator == "identity"
            else TransitionOperator("synthetic_vae", _vae_params(spec), seed=seed)
        )
        diff = run_attribution(z0, dit_op, vae_op, spec.turns, bins=bins, floor=spec.floor)
        mids = diff.mids
        total += np.where(diff.defined, diff.delta_percent, 0.0)
        defined_seeds += diff.defined.astype(int)

    path = out_dir / "attribution_delta.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for key, value in spec.echo().items():
            fp.write(f"# {key} = {value}\n")
        fp.write("r_mid,delta_percent,defined_seeds\n")
        for b in range(bins):
            if defined_seeds[b] > 0:
                mean = total[b] / defined_seeds[b]
                fp.write(f"{float(mids[b])!r},{mean!r},{int(defined_seeds[b])}\n")
            else:
                fp.write(f"{float(mids[b])!r},,0\n")

    ok = defined_seeds > 0
    if not ok.any():
        return f"attribution over {spec.seeds} seeds: no defined bins (identical loops)"
    mean_delta = np.where(ok, total / np.maximum(defined_seeds, 1), np.nan)
    low = ok & (mids < spec.r_split)
    high = ok & (mids > 0.5)
    low_mean = float(np.nanmean(mean_delta[low])) if low.any() else float("nan")
    high_mean = float(np.nanmean(mean_delta[high])) if high.any() else float("nan")
    return (
        f"attribution over {spec.seeds} seeds: mean delta-P {low_mean:+.1f}% for r<{spec.r_split}, "
        f"{high_mean:+.1f}% for r>0.5"
    )


def run_simulate(spec: SimulateSpec, out_dir) -> str:
    """Run the configured experiment, write reports into ``out_dir``, and
    return the one-line summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.txt").write_text(format_kv(spec.echo()), encoding="utf-8")
    if spec.experiment == "attribution":
        summary = _run_attribution(spec, out_dir)
    else:
        summary = _run_trajectories(spec, out_dir)
    (out_dir / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    return summary
