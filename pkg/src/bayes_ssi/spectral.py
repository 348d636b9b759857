"""Welch spectral estimates used for overlay data next to the posterior
frequency histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .simulate import TimeSeries

__all__ = ["WelchSpec", "welch_psd"]


@dataclass(frozen=True)
class WelchSpec:
    """Hann-windowed averaged periodogram per channel plus the channel sum.

    Density scaling: the integral of each channel's one-sided PSD over
    frequency approximates the channel variance.
    """

    frequencies: np.ndarray   # Hz, 0 .. fs/2
    psd: np.ndarray           # channels x n_freq
    psd_sum: np.ndarray       # n_freq
    segment_length: int
    overlap: float
    window: str = "hann"


def welch_psd(ts: TimeSeries, segment_length: int = 1024,
              overlap: float = 0.5) -> WelchSpec:
    """Averaged periodogram of every channel of the record."""
    if segment_length < 2:
        raise ValueError("segment_length must be >= 2")
    if segment_length > ts.n_samples:
        raise ValueError(
            f"segment_length {segment_length} exceeds record length {ts.n_samples}"
        )
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    noverlap = int(overlap * segment_length)
    freqs, psd = signal.welch(ts.data, fs=ts.fs, window="hann",
                              nperseg=segment_length, noverlap=noverlap,
                              detrend="constant", scaling="density", axis=1)
    psd = np.clip(psd, 0.0, None)
    return WelchSpec(frequencies=freqs, psd=psd, psd_sum=psd.sum(axis=0),
                     segment_length=segment_length, overlap=overlap)
