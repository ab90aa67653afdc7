"""Reconstruction quality metrics in dB."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signal_model import GroundTruth

__all__ = ["SNR_CAP", "MetricsReport", "snr", "tsnr", "evaluate"]

SNR_CAP = 300.0


def snr(reference, estimate) -> float:
    """``20 log10(||ref|| / ||ref - est||)``, capped at 300 dB for exact matches."""
    ref = np.asarray(reference, dtype=float)
    est = np.asarray(estimate, dtype=float)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    nref = np.linalg.norm(ref)
    if nref == 0:
        raise ValueError("reference signal is identically zero")
    nerr = np.linalg.norm(ref - est)
    if nerr == 0:
        return SNR_CAP
    return min(SNR_CAP, 20.0 * math.log10(nref / nerr))


def tsnr(truth, estimate) -> float:
    """SNR restricted to the support of the true spike train.

    `truth` is a :class:`GroundTruth` or the true spike vector itself.
    """
    spikes = truth.spikes if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    support = np.flatnonzero(spikes)
    if support.size == 0:
        raise ValueError("true support is empty")
    return snr(spikes[support], np.asarray(estimate, dtype=float)[support])


@dataclass(frozen=True)
class MetricsReport:
    snr_s: float
    tsnr_s: float
    snr_t: float
    snr_pi: float

    @property
    def weighted(self) -> float:
        return 2 * self.snr_s + self.snr_pi + self.snr_t

    def to_dict(self) -> dict:
        return {"snr_s": self.snr_s, "tsnr_s": self.tsnr_s, "snr_t": self.snr_t,
                "snr_pi": self.snr_pi, "weighted": self.weighted}


def evaluate(truth: GroundTruth, s_hat, pi_hat, t_hat) -> MetricsReport:
    """Score already post-processed (centered) estimates against `truth`."""
    return MetricsReport(
        snr_s=snr(truth.spikes, s_hat),
        tsnr_s=tsnr(truth, s_hat),
        snr_t=snr(truth.trend, t_hat),
        snr_pi=snr(truth.kernel, pi_hat),
    )
