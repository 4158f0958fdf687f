"""Exception hierarchy shared by the library and the CLI.

Each category maps to a fixed CLI exit code so scripted callers can
dispatch on failures without parsing messages.
"""

from __future__ import annotations


class LfaError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class LatentFormatError(LfaError):
    """Input file is not a conforming latent container (exit 2)."""

    exit_code = 2


class ConfigError(LfaError):
    """Invalid configuration value or config-file schema violation (exit 2)."""

    exit_code = 2


class NumericDomainError(LfaError):
    """Operation hit an undefined numeric domain, e.g. log of zero std (exit 3)."""

    exit_code = 3

    def __init__(self, message: str, channels: list[int] | None = None):
        super().__init__(message)
        self.channels = channels or []


class SessionIntegrityError(LfaError):
    """Session resume refused: manifest checksum or state mismatch (exit 5)."""

    exit_code = 5


class AdapterError(LfaError):
    """External adapter command failed, timed out, or broke protocol (exit 6)."""

    exit_code = 6

    def __init__(self, message: str, stderr_digest: str = ""):
        super().__init__(message)
        self.stderr_digest = stderr_digest
