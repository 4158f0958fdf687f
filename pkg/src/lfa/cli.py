"""Command-line surface.

Exit codes: 0 success, 2 bad format or config, 3 numeric-domain error,
4 I/O or lock failure, 5 session integrity refusal, 6 adapter failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .adapter import AdapterError
from .alignment import (
    AlignmentConfig,
    anchor_init,
    align_low,
    deserialize_anchor,
    serialize_anchor,
)
from .core import (
    LatentTensor,
    PoolingFilterSpec,
    channel_mean_std,
    decompose,
    load_latent,
    save_latent,
)
from .driftlab import latent_metrics
from .errors import (
    ConfigError,
    LatentFormatError,
    LfaError,
    NumericDomainError,
    SessionIntegrityError,
)
from .kvconfig import load_kv
from .session import Session, SessionConfig, SessionLockError
from .simconfig import parse_simulate_config, run_simulate
from .spectral import (
    DEFAULT_BINS,
    DEFAULT_FLOOR,
    DEFAULT_R_SPLIT,
    band_energy,
    export_spectrum_csv,
    export_spectrum_diff_csv,
    radial_spectrum,
    relative_spectrum_diff,
)

_CATEGORIES = (
    (AdapterError, "adapter"),
    (SessionIntegrityError, "session"),
    (SessionLockError, "lock"),
    (NumericDomainError, "numeric"),
    (LatentFormatError, "format"),
    (ConfigError, "config"),
)


def _alignment_config(args) -> AlignmentConfig:
    return AlignmentConfig(
        pool=PoolingFilterSpec(window=args.window),
        alpha_mu=args.alpha_mu,
        alpha_sigma=args.alpha_sigma,
        epsilon=args.epsilon,
        anchor_mode=args.anchor_mode,
        scope=args.scope,
    )


def _add_alignment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=int, default=9, help="pooling window (odd, default 9)")
    parser.add_argument("--alpha-mu", type=float, default=0.95, dest="alpha_mu",
                        help="mean momentum (default 0.95)")
    parser.add_argument("--alpha-sigma", type=float, default=0.85, dest="alpha_sigma",
                        help="log-std momentum (default 0.85)")
    parser.add_argument("--epsilon", type=float, default=1e-5,
                        help="denominator stabilizer (default 1e-5)")
    parser.add_argument("--anchor-mode", choices=("ema", "fixed", "prev"), default="ema",
                        dest="anchor_mode")
    parser.add_argument("--scope", choices=("low_only", "high_only", "both"), default="low_only")
    parser.add_argument("--allow-zero-sigma", action="store_true", dest="allow_zero_sigma",
                        help="substitute epsilon for zero-variance channels at init")


def _write_stats_csv(stats, stream) -> None:
    stream.write("channel,mean,std\n")
    for c in range(len(stats.means)):
        stream.write(f"{c},{float(stats.means[c])!r},{float(stats.stds[c])!r}\n")


def cmd_stats(args) -> int:
    stats = channel_mean_std(load_latent(args.input))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fp:
            _write_stats_csv(stats, fp)
    else:
        _write_stats_csv(stats, sys.stdout)
    return 0


def cmd_decompose(args) -> int:
    parts = decompose(load_latent(args.input), PoolingFilterSpec(window=args.window))
    save_latent(parts.low, args.low)
    save_latent(parts.high_latent(), args.high)
    return 0


def cmd_spectrum(args) -> int:
    spectrum = radial_spectrum(
        load_latent(args.input), bins=args.bins, remove_dc=args.remove_dc
    )
    export_spectrum_csv(spectrum, args.csv)
    return 0


def cmd_align(args) -> int:
    band = load_latent(args.input)
    cfg = AlignmentConfig(epsilon=args.epsilon)
    if args.anchor:
        anchor = deserialize_anchor(
            open(args.anchor, "r", encoding="utf-8").read(), expected_channels=band.channels
        )
    else:
        reference = load_latent(args.anchor_from)
        anchor = anchor_init(reference, cfg, zero_sigma_substitute=args.allow_zero_sigma)
    aligned = align_low(band, anchor, cfg)
    save_latent(aligned, args.out)
    if args.save_anchor:
        with open(args.save_anchor, "w", encoding="utf-8") as fp:
            fp.write(serialize_anchor(anchor))
    return 0


def cmd_diff(args) -> int:
    a = load_latent(args.a)
    b = load_latent(args.b)
    metrics = latent_metrics(a, b)
    diff32 = LatentTensor(
        (a.data.astype(np.float64) - b.data.astype(np.float64)).astype(np.float32)
    )
    low_e, high_e = band_energy(diff32, args.r_split)
    print(
        f"l1 {metrics['l1']!r}\nl2 {metrics['l2']!r}\nssim_global {metrics['ssim_global']!r}\n"
        f"low_band_energy {low_e!r}\nhigh_band_energy {high_e!r}"
    )
    if args.csv:
        spec_a = radial_spectrum(a, bins=args.bins, remove_dc=True)
        spec_b = radial_spectrum(b, bins=args.bins, remove_dc=True)
        export_spectrum_diff_csv(relative_spectrum_diff(spec_a, spec_b, args.floor), args.csv)
    return 0


def cmd_session_init(args) -> int:
    config = SessionConfig(
        session_id=args.id,
        shape=(1, 1, 1),  # replaced by the actual latent shape at create time
        window=args.window,
        alpha_mu=args.alpha_mu,
        alpha_sigma=args.alpha_sigma,
        epsilon=args.epsilon,
        anchor_mode=args.anchor_mode,
        scope=args.scope,
        zero_sigma_substitute=args.allow_zero_sigma,
        encode_cmd=args.encode_cmd,
        decode_cmd=args.decode_cmd,
        adapter_timeout=args.adapter_timeout,
        adapter_workdir=args.adapter_workdir,
    )
    session = Session.create(
        args.dir, latent_path=args.latent, image_path=args.image, config=config
    )
    print(f"session {session.config.session_id} initialized at turn 0")
    return 0


def cmd_session_step(args) -> int:
    session = Session.open(args.dir)
    session.step(latent_path=args.latent, image_path=args.image, out_image=args.out_image)
    print(f"session {session.config.session_id} advanced to turn {session.turn}")
    return 0


def cmd_session_status(args) -> int:
    session = Session.open(args.dir)
    for key, value in session.status().items():
        print(f"{key} {value}")
    return 0


def cmd_session_export(args) -> int:
    session = Session.open(args.dir)
    spectrum_turns = tuple(int(t) for t in args.spectrum_turns.split(",")) if args.spectrum_turns else ()
    report = session.export_report(
        r_split=args.r_split, bins=args.bins, spectrum_turns=spectrum_turns
    )
    report.to_csv(args.csv)
    for turn, spectrum in report.spectra.items():
        export_spectrum_csv(spectrum, f"{args.csv}.turn{turn:04d}.csv")
    return 0


def cmd_simulate(args) -> int:
    spec = parse_simulate_config(load_kv(args.config), source=str(args.config))
    summary = run_simulate(spec, args.out)
    print(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfa",
        description="Low-frequency latent alignment and spectral drift diagnostics "
        "on NPY v1.0 (C,H,W) float32 latent files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-channel mean/std of a latent file")
    p.add_argument("input")
    p.add_argument("--csv", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("decompose", help="split a latent into low/high band files")
    p.add_argument("input")
    p.add_argument("--low", required=True)
    p.add_argument("--high", required=True)
    p.add_argument("--window", type=int, default=9)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("spectrum", help="radial power spectrum CSV of a latent file")
    p.add_argument("input")
    p.add_argument("--csv", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--remove-dc", action="store_true", dest="remove_dc")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("align", help="moment-match a band file against anchor targets")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--anchor", help="anchor record file")
    group.add_argument("--anchor-from", dest="anchor_from",
                       help="initialize the anchor from this reference band file")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--save-anchor", dest="save_anchor", help="write the anchor used here")
    p.add_argument("--allow-zero-sigma", action="store_true", dest="allow_zero_sigma")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("diff", help="drift metrics between two latent files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--csv", help="also write the relative radial-spectrum diff CSV")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    p.add_argument("--r-split", type=float, default=DEFAULT_R_SPLIT, dest="r_split")
    p.set_defaults(func=cmd_diff)

    session = sub.add_parser("session", help="persistent turn-by-turn alignment sessions")
    ssub = session.add_subparsers(dest="session_command", required=True)

    p = ssub.add_parser("init", help="start a session from a latent or an image")
    p.add_argument("--dir", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--latent")
    group.add_argument("--image")
    p.add_argument("--id", default="session")
    _add_alignment_flags(p)
    p.add_argument("--encode-cmd", dest="encode_cmd",
                   help="adapter: image->latent command with {input}/{output}")
    p.add_argument("--decode-cmd", dest="decode_cmd",
                   help="adapter: latent->image command with {input}/{output}")
    p.add_argument("--adapter-timeout", type=float, default=120.0, dest="adapter_timeout")
    p.add_argument("--adapter-workdir", dest="adapter_workdir")
    p.set_defaults(func=cmd_session_init)

    p = ssub.add_parser("step", help="advance one turn from a latent or an image")
    p.add_argument("--dir", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--latent")
    group.add_argument("--image")
    p.add_argument("--out-image", dest="out_image")
    p.set_defaults(func=cmd_session_step)

    p = ssub.add_parser("status", help="print turn and anchor digest")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_session_status)

    p = ssub.add_parser("export", help="write the session drift report CSV")
    p.add_argument("--dir", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--r-split", type=float, default=DEFAULT_R_SPLIT, dest="r_split")
    p.add_argument("--spectrum-turns", dest="spectrum_turns",
                   help="comma-separated turns to export spectra for")
    p.set_defaults(func=cmd_session_export)

    p = sub.add_parser("simulate", help="run drift experiments from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LfaError as exc:
        category = "error"
        for klass, name in _CATEGORIES:
            if isinstance(exc, klass):
                category = name
                break
        print(f"error[{category}]: {exc}", file=sys.stderr)
        digest = getattr(exc, "stderr_digest", "")
        if digest:
            print(f"adapter stderr: {digest}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
