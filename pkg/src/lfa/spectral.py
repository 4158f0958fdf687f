"""Per-channel 2D Fourier power analysis: radial spectra, relative
spectrum differences, band energies, and the Parseval consistency check
linking channel std to non-DC spectral energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LatentTensor, channel_mean_std
from .errors import ConfigError

DEFAULT_BINS = 50
DEFAULT_FLOOR = 1e-12
DEFAULT_R_SPLIT = 0.2

_TINY = 1e-30


@dataclass(frozen=True)
class RadialSpectrum:
    """Mean spectral power per normalized-radius bin.

    ``bin_edges`` spans [0, 1]; ``power[b]`` is the mean power of the
    frequency cells whose radius falls in bin b and ``counts[b]`` how many
    cells landed there (0-count bins carry 0 power).
    """

    bin_edges: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if len(self.bin_edges) != len(self.power) + 1 or len(self.power) != len(self.counts):
            raise ValueError("inconsistent bin vector lengths")

    @property
    def bins(self) -> int:
        return len(self.power)

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


@dataclass(frozen=True)
class SpectrumDiff:
    """Relative bin-by-bin power difference in percent.

    Bins whose denominator power fell below the configured floor are
    undefined: ``defined`` is False there and ``delta_percent`` holds NaN.
    """

    bin_edges: np.ndarray
    delta_percent: np.ndarray
    defined: np.ndarray

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def power_spectrum_2d(z: LatentTensor, remove_dc: bool = False) -> np.ndarray:
    """Squared-magnitude 2D DFT per channel under unitary normalization.

    With the 1/sqrt(HW) scaling the total power of each channel equals the
    sum of its squared (optionally mean-subtracted) values.
    """
    data = z.data.astype(np.float64)
    if remove_dc:
        data = data - data.mean(axis=(1, 2), keepdims=True)
    coeffs = np.fft.fft2(data, axes=(1, 2)) / np.sqrt(data.shape[1] * data.shape[2])
    return np.abs(coeffs) ** 2


def normalized_radius_grid(height: int, width: int) -> np.ndarray:
    """Map each FFT cell to a radius in [0, 1].

    Signed frequency indices are normalized per axis by H/2 and W/2 and the
    Euclidean radius divided by sqrt(2), so the grid corner (Nyquist on both
    axes) lands exactly at 1.
    """
    u = np.fft.fftfreq(height) * height
    v = np.fft.fftfreq(width) * width
    ru = u / (height / 2.0)
    rv = v / (width / 2.0)
    return np.sqrt(ru[:, None] ** 2 + rv[None, :] ** 2) / np.sqrt(2.0)


def _bin_indices(radius: np.ndarray, bins: int) -> np.ndarray:
    # r == 1 belongs to the last bin, not a phantom overflow bin
    idx = np.floor(radius * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def radial_spectrum(
    z: LatentTensor, bins: int = DEFAULT_BINS, remove_dc: bool = False
) -> RadialSpectrum:
    """Channel-averaged power binned by normalized frequency radius."""
    if bins < 2:
        raise ConfigError(f"radial spectrum needs at least 2 bins, got {bins}")
    grid = power_spectrum_2d(z, remove_dc=remove_dc).mean(axis=0)
    radius = normalized_radius_grid(z.height, z.width)
    idx = _bin_indices(radius, bins).ravel()
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=grid.ravel(), minlength=bins)
    power = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    return RadialSpectrum(np.linspace(0.0, 1.0, bins + 1), power, counts)


def relative_spectrum_diff(
    a: RadialSpectrum, b: RadialSpectrum, floor: float = DEFAULT_FLOOR
) -> SpectrumDiff:
    """Percent difference 100*(a-b)/b per bin, undefined where b < floor."""
    if a.bins != b.bins or not np.array_equal(a.bin_edges, b.bin_edges):
        raise ConfigError("spectrum diff requires identical binning")
    defined = b.power >= floor
    delta = np.full(a.bins, np.nan)
    np.divide(a.power - b.power, b.power, out=delta, where=defined)
    delta[defined] *= 100.0
    return SpectrumDiff(a.bin_edges.copy(), delta, defined)


def band_energy(z: LatentTensor, r_split: float = DEFAULT_R_SPLIT) -> tuple[float, float]:
    """DC-removed spectral energy below vs at/above the split radius,
    averaged over channels."""
    if not 0.0 < r_split < 1.0:
        raise ConfigError(f"r_split must lie strictly inside (0, 1), got {r_split}")
    grid = power_spectrum_2d(z, remove_dc=True).mean(axis=0)
    radius = normalized_radius_grid(z.height, z.width)
    low = float(grid[radius < r_split].sum())
    high = float(grid[radius >= r_split].sum())
    return low, high


def parseval_check(z: LatentTensor) -> np.ndarray:
    """Relative discrepancy per channel between HW*sigma^2 and the summed
    non-DC spectral power."""
    stats = channel_mean_std(z)
    lhs = z.height * z.width * stats.stds**2
    rhs = power_spectrum_2d(z, remove_dc=True).sum(axis=(1, 2))
    return np.abs(lhs - rhs) / np.maximum(lhs, _TINY)


def export_spectrum_csv(spectrum: RadialSpectrum, path) -> None:
    """One row per bin: r_mid, power, count; ordered by bin index."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("r_mid,power,count\n")
        for mid, power, count in zip(spectrum.mids, spectrum.power, spectrum.counts):
            fp.write(f"{float(mid)!r},{float(power)!r},{int(count)}\n")


def export_spectrum_diff_csv(diff: SpectrumDiff, path) -> None:
    """One row per bin: r_mid, delta_percent; undefined bins left empty."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("r_mid,delta_percent\n")
        for mid, value, ok in zip(diff.mids, diff.delta_percent, diff.defined):
            fp.write(f"{float(mid)!r},{float(value)!r}\n" if ok else f"{float(mid)!r},\n")
