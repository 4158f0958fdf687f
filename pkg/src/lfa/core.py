"""Latent tensor container, strict NPY I/O, channel statistics, and the
box low-pass filter that defines the low/high frequency split."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import LatentFormatError

NPY_VERSION = (1, 0)
LATENT_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class LatentTensor:
    """A C x H x W float32 latent with an optional provenance label.

    ``data`` is row-major (channel, height, width). All library operations
    treat instances as immutable values.
    """

    data: np.ndarray
    label: str | None = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise LatentFormatError(
                f"latent data must be 3-dimensional (C,H,W), got ndim={self.data.ndim}"
            )
        if self.data.dtype != np.float32:
            raise LatentFormatError(
                f"latent data must be float32, got {self.data.dtype}"
            )
        if min(self.data.shape) < 1:
            raise LatentFormatError(f"latent dimensions must be >= 1, got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_label(self, label: str | None) -> "LatentTensor":
        return LatentTensor(self.data, label)

    @classmethod
    def zeros(cls, shape: tuple[int, int, int], label: str | None = None) -> "LatentTensor":
        return cls(np.zeros(shape, dtype=np.float32), label)


def as_latent(x, label: str | None = None) -> LatentTensor:
    """Coerce an array-like into a LatentTensor.

    float32 arrays are wrapped without copying; float64 is downcast. Integer
    and half-precision inputs are rejected rather than silently converted.
    """
    if isinstance(x, LatentTensor):
        return x if label is None else x.with_label(label)
    arr = np.asarray(x)
    if arr.dtype == np.float32:
        return LatentTensor(np.ascontiguousarray(arr), label)
    if arr.dtype == np.float64:
        return LatentTensor(np.ascontiguousarray(arr, dtype=np.float32), label)
    raise LatentFormatError(f"unsupported latent dtype {arr.dtype}; expected float32")


def check_same_shape(a: LatentTensor, b: LatentTensor) -> None:
    if a.shape != b.shape:
        raise LatentFormatError(f"shape mismatch: {a.shape} vs {b.shape}")


def ensure_finite(arr: np.ndarray, context: str) -> None:
    if not np.isfinite(arr).all():
        raise LatentFormatError(f"{context}: non-finite values present")


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel spatial mean and population standard deviation."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise ValueError("means and stds must be 1-d vectors of equal length")


@dataclass(frozen=True)
class PoolingFilterSpec:
    """Box-average low-pass filter: odd window, stride 1, replicate padding.

    The odd window plus (window-1)/2 padding keeps the output the same
    spatial size as the input.
    """

    window: int = 9
    stride: int = field(default=1, init=False)
    padding_mode: str = field(default="replicate", init=False)

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"pooling window must be odd and >= 1, got {self.window}")

    @property
    def padding(self) -> int:
        return (self.window - 1) // 2


@dataclass(frozen=True)
class FrequencyDecomposition:
    """Low/high split of a latent under a pooling filter.

    ``low`` is the float32 pooled latent. ``high`` is kept as the exact
    float64 residual source - low so that ``low + high`` reproduces the
    source bit-for-bit; cast through :meth:`high_latent` only when a
    float32 latent is required (e.g. file export), which rounds by at most
    half an ulp.
    """

    low: LatentTensor
    high: np.ndarray
    spec: PoolingFilterSpec

    def __post_init__(self):
        if self.high.shape != self.low.shape:
            raise ValueError("low and high components must share a shape")
        if self.high.dtype != np.float64:
            raise ValueError("high residual must be float64")

    def recombine(self) -> LatentTensor:
        total = self.low.data.astype(np.float64) + self.high
        return LatentTensor(total.astype(np.float32), self.low.label)

    def high_latent(self) -> LatentTensor:
        return LatentTensor(self.high.astype(np.float32), self.low.label)


def load_latent(path, expected_shape: tuple[int, int, int] | None = None) -> LatentTensor:
    """Read a latent from a strict NPY v1.0 container.

    Only little-endian float32, C-contiguous, 3-d arrays are accepted;
    anything else (other dtypes, versions, orders, trailing bytes,
    non-finite values) is rejected.
    """
    with open(path, "rb") as fp:
        try:
            version = np.lib.format.read_magic(fp)
        except ValueError as exc:
            raise LatentFormatError(f"{path}: not an NPY file ({exc})") from exc
        if version != NPY_VERSION:
            raise LatentFormatError(
                f"{path}: unsupported NPY version {version}, require {NPY_VERSION}"
            )
        try:
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fp)
        except ValueError as exc:
            raise LatentFormatError(f"{path}: malformed NPY header ({exc})") from exc
        if dtype != LATENT_DTYPE:
            raise LatentFormatError(f"{path}: dtype {dtype} is not little-endian float32")
        if fortran_order:
            raise LatentFormatError(f"{path}: Fortran-ordered arrays are not accepted")
        if len(shape) != 3:
            raise LatentFormatError(f"{path}: expected a 3-d (C,H,W) array, got shape {shape}")
        if min(shape) < 1:
            raise LatentFormatError(f"{path}: degenerate shape {shape}")
        nbytes = int(np.prod(shape)) * LATENT_DTYPE.itemsize
        payload = fp.read(nbytes + 1)
        if len(payload) < nbytes:
            raise LatentFormatError(f"{path}: truncated payload")
        if len(payload) > nbytes:
            raise LatentFormatError(f"{path}: trailing bytes after array payload")
    if expected_shape is not None and tuple(shape) != tuple(expected_shape):
        raise LatentFormatError(
            f"{path}: shape {tuple(shape)} does not match expected {tuple(expected_shape)}"
        )
    data = np.frombuffer(payload, dtype=LATENT_DTYPE).reshape(shape).copy()
    ensure_finite(data, str(path))
    return LatentTensor(data)


def save_latent(t: LatentTensor, path) -> None:
    """Write a latent as NPY v1.0 so that load_latent round-trips bit-for-bit."""
    arr = np.ascontiguousarray(t.data, dtype=LATENT_DTYPE)
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, version=NPY_VERSION)
    with open(path, "wb") as fp:
        fp.write(buf.getvalue())


def channel_mean_std(u: LatentTensor) -> ChannelStats:
    """Spatial mean and population (1/HW) standard deviation per channel."""
    data = u.data.astype(np.float64)
    means = data.mean(axis=(1, 2))
    centered = data - means[:, None, None]
    stds = np.sqrt(np.square(centered).mean(axis=(1, 2)))
    return ChannelStats(means, stds)


def low_pass(z: LatentTensor, spec: PoolingFilterSpec | None = None) -> LatentTensor:
    """Windowed box mean per channel with replicate padding.

    Accumulates in float64 and casts the result back to float32; output
    shape equals input shape.
    """
    spec = spec or PoolingFilterSpec()
    pooled = uniform_filter(
        z.data.astype(np.float64), size=(1, spec.window, spec.window), mode="nearest"
    )
    return LatentTensor(pooled.astype(np.float32), z.label)


def decompose(z: LatentTensor, spec: PoolingFilterSpec | None = None) -> FrequencyDecomposition:
    """Split a latent into its pooled low band and the exact high residual."""
    spec = spec or PoolingFilterSpec()
    low = low_pass(z, spec)
    high = z.data.astype(np.float64) - low.data.astype(np.float64)
    return FrequencyDecomposition(low=low, high=high, spec=spec)
