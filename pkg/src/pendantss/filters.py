"""Zero-phase DFT-domain low-pass filter and its high-pass complement.

The trend is modelled as the low-pass part of the peakless observation, so
the data term only sees the high-pass residual ``H = Id - L``. Both operators
are real symmetric matrices (the frequency response is real and even), hence
self-adjoint, and the response of ``H`` lies in [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

__all__ = [
    "FilterSpec",
    "CutoffChoice",
    "frequency_response",
    "apply_lowpass",
    "apply_highpass",
    "spectral_peaks",
    "select_cutoff",
]


@dataclass(frozen=True)
class FilterSpec:
    """Low-pass design: pass bins below `cutoff_bin`, raised-cosine roll-off
    over `transition_bins`, stop beyond. ``cutoff_bin = 0`` disables the
    low-pass entirely (``L = 0``, ``H = Id``)."""

    cutoff_bin: int
    transition_bins: int = 2

    def __post_init__(self):
        if self.cutoff_bin < 0:
            raise ValueError("cutoff_bin must be non-negative")
        if self.transition_bins < 0:
            raise ValueError("transition_bins must be non-negative")

    def check_length(self, n: int) -> None:
        if self.cutoff_bin + self.transition_bins > n // 2:
            raise ValueError(
                f"cutoff_bin + transition_bins = {self.cutoff_bin + self.transition_bins} "
                f"exceeds N/2 = {n // 2}")

    def to_dict(self) -> dict:
        return {"cutoff_bin": self.cutoff_bin, "transition_bins": self.transition_bins}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        return cls(int(d["cutoff_bin"]), int(d.get("transition_bins", 2)))


def frequency_response(n: int, f: FilterSpec) -> np.ndarray:
    """Low-pass gain on the ``n // 2 + 1`` non-negative DFT bins."""
    f.check_length(n)
    bins = np.arange(n // 2 + 1)
    resp = np.zeros(bins.size)
    if f.cutoff_bin == 0:
        return resp
    resp[bins < f.cutoff_bin] = 1.0
    band = (bins >= f.cutoff_bin) & (bins <= f.cutoff_bin + f.transition_bins)
    t = (bins[band] - f.cutoff_bin + 1) / (f.transition_bins + 1)
    resp[band] = 0.5 * (1.0 + np.cos(np.pi * t))
    # exact zero at the last band bin, not 1e-17
    resp[bins >= f.cutoff_bin + f.transition_bins] = 0.0
    return resp


def apply_lowpass(y, f: FilterSpec) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("signal must be 1-D")
    resp = frequency_response(y.size, f)
    return np.fft.irfft(np.fft.rfft(y) * resp, n=y.size)


def apply_highpass(y, f: FilterSpec) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y - apply_lowpass(y, f)


def spectral_peaks(y, n_peaks: int = 10) -> List[int]:
    """First `n_peaks` local maxima (ascending bin order) of ``|DFT(y)|``,
    excluding the DC bin. Maxima at round-off level are ignored."""
    mag = np.abs(np.fft.rfft(np.asarray(y, dtype=float)))
    floor = 1e-10 * mag.max() if mag.size else 0.0
    peaks = []
    for j in range(1, mag.size - 1):
        if mag[j] > floor and mag[j] > mag[j - 1] and mag[j] >= mag[j + 1]:
            peaks.append(j)
            if len(peaks) == n_peaks:
                break
    return peaks


@dataclass
class CutoffChoice:
    filter: FilterSpec
    scores: List[tuple] = field(default_factory=list)
    fallback: bool = False


def select_cutoff(y, scorer: Callable[[FilterSpec], float],
                  candidates: Optional[Sequence[FilterSpec]] = None,
                  n_peaks: int = 10, transition_bins: int = 2) -> CutoffChoice:
    """Pick the low-pass cutoff maximizing `scorer`.

    Without explicit `candidates`, the cutoffs are placed at the first
    `n_peaks` local maxima of the modulus of the spectrum of `y`. Ties go to
    the smaller cutoff. When the spectrum shows no peak, the cutoff falls back
    to ``N // 20`` and ``fallback`` is set.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    fallback = False
    if candidates is None:
        cand = []
        for j in spectral_peaks(y, n_peaks):
            if j + transition_bins <= n // 2:
                cand.append(FilterSpec(j, transition_bins))
        if not cand:
            warnings.warn("no spectral peak found; using default cutoff N // 20", RuntimeWarning)
            fb = max(1, n // 20)
            return CutoffChoice(FilterSpec(fb, min(transition_bins, n // 2 - fb)), [], True)
    else:
        cand = list(candidates)
        if not cand:
            raise ValueError("candidates must be non-empty")
    scores = [(c, float(scorer(c))) for c in cand]
    best = min(scores, key=lambda cs: (-cs[1] if np.isfinite(cs[1]) else np.inf, cs[0].cutoff_bin))
    return CutoffChoice(best[0], scores, fallback)
