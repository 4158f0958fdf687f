"""External adapter protocol: hand an artifact to a user-supplied encoder
or decoder command via temp files and collect exactly one output file.

Command templates carry an ``{input}`` and an ``{output}`` placeholder,
each exactly once. A nonzero exit, a timeout, or a missing output file is
an adapter failure and surfaces with a digest of the command's stderr.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .core import LatentTensor, load_latent, save_latent
from .errors import AdapterError, ConfigError

_STDERR_DIGEST_CHARS = 500

TMPDIR_ENV = "LFA_TMPDIR"
TIMEOUT_ENV = "LFA_ADAPTER_TIMEOUT"


def _check_template(template: str, name: str) -> None:
    for placeholder in ("{input}", "{output}"):
        count = template.count(placeholder)
        if count != 1:
            raise ConfigError(
                f"{name} must contain {placeholder} exactly once, found {count}: {template!r}"
            )


@dataclass(frozen=True)
class AdapterSpec:
    """Encode/decode command pair bridging images and latent files."""

    encode_cmd: str
    decode_cmd: str
    timeout: float = 120.0
    workdir: str | None = None

    def __post_init__(self):
        _check_template(self.encode_cmd, "encode_cmd")
        _check_template(self.decode_cmd, "decode_cmd")
        if self.timeout <= 0:
            raise ConfigError("adapter timeout must be positive")


def scratch_dir() -> Path:
    return Path(os.environ.get(TMPDIR_ENV) or tempfile.gettempdir())


def effective_timeout(spec: AdapterSpec) -> float:
    env = os.environ.get(TIMEOUT_ENV)
    if env is None:
        return spec.timeout
    try:
        value = float(env)
    except ValueError as exc:
        raise ConfigError(f"{TIMEOUT_ENV} must be a number, got {env!r}") from exc
    if value <= 0:
        raise ConfigError(f"{TIMEOUT_ENV} must be positive, got {value}")
    return value


def _digest(stderr: bytes) -> str:
    text = stderr.decode("utf-8", errors="replace").strip()
    return text[-_STDERR_DIGEST_CHARS:]


def run_adapter_command(
    template: str, input_path: Path, output_path: Path, spec: AdapterSpec
) -> None:
    """Substitute placeholders, execute, and require the output file."""
    argv = [
        token.replace("{input}", str(input_path)).replace("{output}", str(output_path))
        for token in shlex.split(template)
    ]
    try:
        proc = subprocess.run(
            argv,
            capture_output=True,
            timeout=effective_timeout(spec),
            cwd=spec.workdir,
        )
    except subprocess.TimeoutExpired as exc:
        raise AdapterError(
            f"adapter command timed out after {effective_timeout(spec)}s: {argv[0]}",
            stderr_digest=_digest(exc.stderr or b""),
        ) from exc
    except OSError as exc:
        raise AdapterError(f"adapter command failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise AdapterError(
            f"adapter command exited {proc.returncode}: {argv[0]}",
            stderr_digest=_digest(proc.stderr),
        )
    if not output_path.is_file():
        raise AdapterError(
            f"adapter produced no output file at {output_path}",
            stderr_digest=_digest(proc.stderr),
        )


def encode_image(spec: AdapterSpec, image_path, latent_path) -> LatentTensor:
    """image file -> latent file via the encode command; loads the result."""
    run_adapter_command(spec.encode_cmd, Path(image_path), Path(latent_path), spec)
    try:
        return load_latent(latent_path)
    except Exception as exc:
        raise AdapterError(f"adapter encode output is not a valid latent: {exc}") from exc


def decode_latent(spec: AdapterSpec, latent_path, image_path) -> Path:
    """latent file -> image file via the decode command."""
    run_adapter_command(spec.decode_cmd, Path(latent_path), Path(image_path), spec)
    return Path(image_path)


def latent_round_trip(spec: AdapterSpec, z: LatentTensor) -> LatentTensor:
    """Model a full external round trip: decode the latent to an image,
    then encode the image back to a latent."""
    work = Path(tempfile.mkdtemp(prefix="lfa-adapter-", dir=scratch_dir()))
    try:
        latent_in = work / "in.npy"
        image = work / "mid.png"
        latent_out = work / "out.npy"
        save_latent(z, latent_in)
        decode_latent(spec, latent_in, image)
        return encode_image(spec, image, latent_out)
    finally:
        shutil.rmtree(work, ignore_errors=True)
