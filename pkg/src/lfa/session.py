"""Turn-by-turn alignment sessions persisted on disk.

A session directory holds a config file, one latent per turn, the anchor
record(s) per turn, optional decoded images, and an append-only manifest
of artifact checksums. The manifest is the source of truth: a step writes
its artifacts first and appends manifest lines last, so an interrupted
step never corrupts the resumable state.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

from .adapter import AdapterSpec, decode_latent, encode_image, scratch_dir
from .errors import AdapterError
from .alignment import (
    AlignmentConfig,
    AlignmentState,
    align_step,
    deserialize_anchor,
    init_alignment,
    serialize_anchor,
)
from .core import LatentTensor, PoolingFilterSpec, load_latent, save_latent
from .errors import ConfigError, LfaError, SessionIntegrityError
from .kvconfig import format_kv, load_kv, parse_bool, parse_float, parse_int

CONFIG_NAME = "config.txt"
MANIFEST_NAME = "manifest.txt"
LOCK_NAME = "lock"
MANIFEST_VERSION = "lfa-session-manifest-v1"


class SessionLockError(LfaError):
    """Another live process owns this session directory (exit 4)."""

    exit_code = 4


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    turn: int
    kind: str
    name: str
    sha256: str

    def line(self) -> str:
        return f"{self.turn} {self.kind} {self.name} {self.sha256}\n"


class SessionLock:
    """Exclusive ownership of a session directory via an O_EXCL lock file.

    A lock left behind by a dead process is detected by pid probe and
    stolen; a live owner refuses the acquisition.
    """

    def __init__(self, directory: Path):
        self.path = directory / LOCK_NAME
        self._fd: int | None = None

    def __enter__(self) -> "SessionLock":
        for _ in range(2):
            try:
                self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(self._fd, str(os.getpid()).encode())
                return self
            except FileExistsError:
                if not self._steal_if_stale():
                    raise SessionLockError(
                        f"session {self.path.parent} is locked by a live process"
                    ) from None
        raise SessionLockError(f"could not acquire lock at {self.path}")

    def _steal_if_stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip() or "0")
        except (OSError, ValueError):
            pid = 0
        if pid > 0:
            try:
                os.kill(pid, 0)
                return False  # owner is alive
            except ProcessLookupError:
                pass
            except PermissionError:
                return False
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return True

    def __exit__(self, *exc) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


@dataclass(frozen=True)
class SessionConfig:
    """Persisted session parameters: alignment knobs, latent shape, and the
    optional adapter commands for the black-box loop."""

    session_id: str
    shape: tuple[int, int, int]
    window: int = 9
    alpha_mu: float = 0.95
    alpha_sigma: float = 0.85
    epsilon: float = 1e-5
    anchor_mode: str = "ema"
    scope: str = "low_only"
    zero_sigma_substitute: bool = False
    encode_cmd: str | None = None
    decode_cmd: str | None = None
    adapter_timeout: float = 120.0
    adapter_workdir: str | None = None

    def alignment(self) -> AlignmentConfig:
        return AlignmentConfig(
            pool=PoolingFilterSpec(window=self.window),
            alpha_mu=self.alpha_mu,
            alpha_sigma=self.alpha_sigma,
            epsilon=self.epsilon,
            anchor_mode=self.anchor_mode,
            scope=self.scope,
        )

    def adapter(self) -> AdapterSpec:
        if not (self.encode_cmd and self.decode_cmd):
            raise AdapterError(
                "session has no adapter configured; pass --encode-cmd/--decode-cmd at init"
            )
        return AdapterSpec(
            encode_cmd=self.encode_cmd,
            decode_cmd=self.decode_cmd,
            timeout=self.adapter_timeout,
            workdir=self.adapter_workdir,
        )

    def to_kv(self) -> dict[str, str]:
        pairs = {
            "id": self.session_id,
            "channels": str(self.shape[0]),
            "height": str(self.shape[1]),
            "width": str(self.shape[2]),
            "window": str(self.window),
            "alpha_mu": repr(self.alpha_mu),
            "alpha_sigma": repr(self.alpha_sigma),
            "epsilon": repr(self.epsilon),
            "anchor_mode": self.anchor_mode,
            "scope": self.scope,
            "zero_sigma_substitute": "true" if self.zero_sigma_substitute else "false",
        }
        if self.encode_cmd:
            pairs["encode_cmd"] = self.encode_cmd
            pairs["decode_cmd"] = self.decode_cmd or ""
            pairs["adapter_timeout"] = repr(self.adapter_timeout)
            if self.adapter_workdir:
                pairs["adapter_workdir"] = self.adapter_workdir
        return pairs

    @classmethod
    def from_kv(cls, pairs: dict[str, str]) -> "SessionConfig":
        required = ("id", "channels", "height", "width")
        for key in required:
            if key not in pairs:
                raise ConfigError(f"session config missing key {key!r}")
        return cls(
            session_id=pairs["id"],
            shape=(
                parse_int(pairs["channels"], "channels"),
                parse_int(pairs["height"], "height"),
                parse_int(pairs["width"], "width"),
            ),
            window=parse_int(pairs.get("window", "9"), "window"),
            alpha_mu=parse_float(pairs.get("alpha_mu", "0.95"), "alpha_mu"),
            alpha_sigma=parse_float(pairs.get("alpha_sigma", "0.85"), "alpha_sigma"),
            epsilon=parse_float(pairs.get("epsilon", "1e-5"), "epsilon"),
            anchor_mode=pairs.get("anchor_mode", "ema"),
            scope=pairs.get("scope", "low_only"),
            zero_sigma_substitute=parse_bool(
                pairs.get("zero_sigma_substitute", "false"), "zero_sigma_substitute"
            ),
            encode_cmd=pairs.get("encode_cmd") or None,
            decode_cmd=pairs.get("decode_cmd") or None,
            adapter_timeout=parse_float(pairs.get("adapter_timeout", "120.0"), "adapter_timeout"),
            adapter_workdir=pairs.get("adapter_workdir") or None,
        )


def _latent_name(turn: int) -> str:
    return f"latent_{turn:04d}.npy"


def _anchor_name(turn: int, band: str) -> str:
    prefix = "anchor" if band == "low" else "anchor_high"
    return f"{prefix}_{turn:04d}.txt"


def _image_name(turn: int) -> str:
    return f"image_{turn:04d}.png"


class Session:
    """One persisted alignment session. Use :meth:`create` then :meth:`step`."""

    def __init__(
        self,
        directory: Path,
        config: SessionConfig,
        entries: list[ManifestEntry],
        state: AlignmentState,
        turn: int,
    ):
        self.directory = directory
        self.config = config
        self.entries = entries
        self.state = state
        self.turn = turn

    # -- construction -------------------------------------------------

    @classmethod
    def create(
        cls,
        directory,
        *,
        latent_path=None,
        image_path=None,
        config: SessionConfig | None = None,
        **config_kwargs,
    ) -> "Session":
        """Start a session from an initial latent file or, with an adapter
        configured, from an image routed through the encode command."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if (directory / MANIFEST_NAME).exists():
            raise SessionIntegrityError(f"{directory} already contains a session")
        if (latent_path is None) == (image_path is None):
            raise ConfigError("session init needs exactly one of a latent or an image input")

        with SessionLock(directory):
            if config is None:
                shape_placeholder = (1, 1, 1)
                config = SessionConfig(shape=shape_placeholder, **config_kwargs)
            if image_path is not None:
                adapter = config.adapter()
                z0 = encode_image(adapter, image_path, directory / _latent_name(0))
            else:
                z0 = load_latent(latent_path)
                save_latent(z0, directory / _latent_name(0))
            config = replace(config, shape=z0.shape)

            state = init_alignment(
                z0, config.alignment(), zero_sigma_substitute=config.zero_sigma_substitute
            )
            (directory / CONFIG_NAME).write_text(format_kv(config.to_kv()), encoding="utf-8")
            entries = [
                ManifestEntry(0, "config", CONFIG_NAME, _sha256(directory / CONFIG_NAME)),
                ManifestEntry(
                    0, "latent", _latent_name(0), _sha256(directory / _latent_name(0))
                ),
            ]
            entries += cls._write_anchors(directory, state, 0)
            with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fp:
                fp.write(MANIFEST_VERSION + "\n")
                for entry in entries:
                    fp.write(entry.line())
                fp.flush()
                os.fsync(fp.fileno())
            return cls(directory, config, entries, state, 0)

    @staticmethod
    def _write_anchors(directory: Path, state: AlignmentState, turn: int) -> list[ManifestEntry]:
        entries = []
        for band, anchor in (("low", state.low), ("high", state.high)):
            if anchor is None:
                continue
            name = _anchor_name(turn, band)
            (directory / name).write_text(serialize_anchor(anchor), encoding="utf-8")
            kind = "anchor" if band == "low" else "anchor_high"
            entries.append(ManifestEntry(turn, kind, name, _sha256(directory / name)))
        return entries

    @classmethod
    def open(cls, directory) -> "Session":
        """Resume a session, verifying every manifest checksum first."""
        directory = Path(directory)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.exists():
            raise SessionIntegrityError(f"{directory} holds no session manifest")
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != MANIFEST_VERSION:
            raise SessionIntegrityError(f"unknown manifest format in {manifest_path}")
        entries = []
        for raw in lines[1:]:
            if not raw.strip():
                continue
            fields = raw.split()
            if len(fields) != 4:
                raise SessionIntegrityError(f"malformed manifest line {raw!r}")
            entries.append(ManifestEntry(int(fields[0]), fields[1], fields[2], fields[3]))
        for entry in entries:
            path = directory / entry.name
            if not path.is_file():
                raise SessionIntegrityError(f"manifest artifact missing: {entry.name}")
            actual = _sha256(path)
            if actual != entry.sha256:
                raise SessionIntegrityError(
                    f"checksum mismatch for {entry.name}: manifest {entry.sha256}, file {actual}"
                )
        config = SessionConfig.from_kv(load_kv(directory / CONFIG_NAME))
        turn = max(e.turn for e in entries)
        state = cls._load_state(directory, config, turn)
        if state.turn != turn:
            raise SessionIntegrityError(
                f"anchor turn {state.turn} does not match session turn {turn}"
            )
        return cls(directory, config, entries, state, turn)

    @staticmethod
    def _load_state(directory: Path, config: SessionConfig, turn: int) -> AlignmentState:
        cfg = config.alignment()
        low = high = None
        if cfg.aligns_low:
            text = (directory / _anchor_name(turn, "low")).read_text(encoding="utf-8")
            low = deserialize_anchor(text, expected_channels=config.shape[0])
        if cfg.aligns_high:
            text = (directory / _anchor_name(turn, "high")).read_text(encoding="utf-8")
            high = deserialize_anchor(text, expected_channels=config.shape[0])
        return AlignmentState(low=low, high=high)

    # -- stepping ------------------------------------------------------

    def latent_path(self, turn: int) -> Path:
        return self.directory / _latent_name(turn)

    def step(self, *, latent_path=None, image_path=None, out_image=None) -> LatentTensor:
        """Advance one turn.

        White-box shape: ``latent_path`` carries the editor's output latent.
        Black-box shape: ``image_path`` is encoded through the adapter, and
        the aligned latent is decoded back to an image artifact. Artifacts
        are committed to the manifest only after every write succeeded.
        """
        if (latent_path is None) == (image_path is None):
            raise ConfigError("session step needs exactly one of a latent or an image input")
        with SessionLock(self.directory):
            turn = self.turn + 1
            black_box = image_path is not None
            if black_box:
                adapter = self.config.adapter()
                work = Path(tempfile.mkdtemp(prefix="lfa-session-", dir=scratch_dir()))
                try:
                    z_tilde = encode_image(adapter, image_path, work / "encoded.npy")
                finally:
                    shutil.rmtree(work, ignore_errors=True)
                if z_tilde.shape != self.config.shape:
                    raise ConfigError(
                        f"adapter produced latent shape {z_tilde.shape}, "
                        f"session expects {self.config.shape}"
                    )
            else:
                z_tilde = load_latent(latent_path, expected_shape=self.config.shape)

            z_hat, new_state = align_step(z_tilde, self.state, self.config.alignment())

            save_latent(z_hat, self.latent_path(turn))
            new_entries = [
                ManifestEntry(turn, "latent", _latent_name(turn), _sha256(self.latent_path(turn)))
            ]
            new_entries += self._write_anchors(self.directory, new_state, turn)
            if black_box:
                image_out = self.directory / _image_name(turn)
                decode_latent(self.config.adapter(), self.latent_path(turn), image_out)
                new_entries.append(
                    ManifestEntry(turn, "image", _image_name(turn), _sha256(image_out))
                )
                if out_image is not None:
                    Path(out_image).write_bytes(image_out.read_bytes())
            elif out_image is not None:
                decode_latent(self.config.adapter(), self.latent_path(turn), out_image)

            with open(self.directory / MANIFEST_NAME, "a", encoding="utf-8") as fp:
                for entry in new_entries:
                    fp.write(entry.line())
                fp.flush()
                os.fsync(fp.fileno())
            self.entries += new_entries
            self.state = new_state
            self.turn = turn
            return z_hat

    # -- reporting -----------------------------------------------------

    def anchor_digest(self) -> str:
        parts = []
        for anchor in (self.state.low, self.state.high):
            if anchor is not None:
                parts.append(serialize_anchor(anchor))
        return hashlib.sha256("".join(parts).encode("utf-8")).hexdigest()

    def status(self) -> dict[str, str]:
        c, h, w = self.config.shape
        return {
            "id": self.config.session_id,
            "turn": str(self.turn),
            "shape": f"{c}x{h}x{w}",
            "scope": self.config.scope,
            "anchor_mode": self.config.anchor_mode,
            "anchor_sha256": self.anchor_digest(),
        }

    def export_report(self, *, r_split: float = 0.2, bins: int = 50, spectrum_turns=()):
        """Drift report of the persisted trajectory against its turn-0 latent."""
        from .driftlab import DriftReport, drift_record
        from .core import channel_mean_std, decompose
        from .spectral import radial_spectrum
        import numpy as np

        pool = PoolingFilterSpec(window=self.config.window)
        z0 = load_latent(self.latent_path(0))
        ref_stats = channel_mean_std(decompose(z0, pool).low)
        meta = {"session": self.config.session_id, "turns": str(self.turn)}
        meta.update({k: v for k, v in self.config.to_kv().items() if k != "id"})
        records = []
        spectra = {}
        for turn in range(1, self.turn + 1):
            z_k = load_latent(self.latent_path(turn))
            records.append(
                drift_record(turn, z_k, z0, r_split=r_split, pool=pool, ref_stats=ref_stats)
            )
            if turn in tuple(spectrum_turns):
                diff = LatentTensor(
                    (z_k.data.astype(np.float64) - z0.data.astype(np.float64)).astype(np.float32)
                )
                spectra[turn] = radial_spectrum(diff, bins=bins, remove_dc=True)
        return DriftReport(records, meta, spectra)
