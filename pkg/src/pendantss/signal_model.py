"""Observation model and synthetic peak-signal datasets.

An observation is the sum of a sparse spike train convolved with a short
peak-shaped kernel, a slowly varying trend and white Gaussian noise::

    y = pi * s + t + n

Convolutions use "same" mode with zero padding, aligned on the central tap
so that a centered unit impulse kernel acts as the identity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "DatasetSpec",
    "GroundTruth",
    "GenerationError",
    "convolve_same",
    "convolve_adjoint_signal",
    "convolve_adjoint_kernel",
    "gaussian_kernel",
    "make_trend",
    "generate_dataset",
    "preset_spec",
]


class GenerationError(RuntimeError):
    """Raised when a dataset cannot be drawn under the requested constraints."""


def _as_signal(x, name="signal") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def _check_shapes(n: int, kernel_len: int) -> None:
    if kernel_len % 2 != 1:
        raise ValueError(f"kernel length must be odd, got {kernel_len}")
    if kernel_len > n:
        raise ValueError(f"kernel length {kernel_len} exceeds signal length {n}")


def _conv(s: np.ndarray, k: np.ndarray) -> np.ndarray:
    c = (k.size - 1) // 2
    return np.convolve(s, k)[c:c + s.size]


def _conv_adj_signal(r: np.ndarray, k: np.ndarray) -> np.ndarray:
    c = (k.size - 1) // 2
    return np.convolve(r, k[::-1])[c:c + r.size]


def _conv_adj_kernel(r: np.ndarray, s: np.ndarray, kernel_len: int) -> np.ndarray:
    c = (kernel_len - 1) // 2
    padded = np.zeros(s.size + 2 * c)
    padded[c:c + s.size] = s
    return np.correlate(padded, r, mode="valid")[::-1].copy()


def convolve_same(s, k) -> np.ndarray:
    """Center-aligned zero-padded convolution of `s` by the odd-length kernel `k`.

    ``out[n] = sum_l k[l] * s[n + (L-1)/2 - l]`` with out-of-range samples of
    `s` taken as zero. The output has the length of `s`.
    """
    s = _as_signal(s)
    k = _as_signal(k, "kernel")
    _check_shapes(s.size, k.size)
    return _conv(s, k)


def convolve_adjoint_signal(r, k) -> np.ndarray:
    """Adjoint of ``s -> convolve_same(s, k)`` applied to `r`."""
    r = _as_signal(r, "residual")
    k = _as_signal(k, "kernel")
    _check_shapes(r.size, k.size)
    return _conv_adj_signal(r, k)


def convolve_adjoint_kernel(r, s, kernel_len: int) -> np.ndarray:
    """Adjoint of ``k -> convolve_same(s, k)`` applied to `r`.

    Returns a vector of length `kernel_len`.
    """
    r = _as_signal(r, "residual")
    s = _as_signal(s)
    if r.size != s.size:
        raise ValueError("residual and signal lengths differ")
    _check_shapes(s.size, kernel_len)
    return _conv_adj_kernel(r, s, kernel_len)


def gaussian_kernel(kernel_len: int, sigma: float, support: str = "unit") -> np.ndarray:
    """Normalized Gaussian kernel sampled on `kernel_len` points.

    With ``support="unit"`` the abscissa is ``linspace(-1, 1, kernel_len)`` so
    `sigma` is expressed relative to the half-width of the kernel. With
    ``support="samples"`` the abscissa is the tap offset from the center.
    """
    if kernel_len < 1 or kernel_len % 2 != 1:
        raise ValueError("kernel_len must be a positive odd integer")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if support == "unit":
        u = np.linspace(-1.0, 1.0, kernel_len) if kernel_len > 1 else np.zeros(1)
    elif support == "samples":
        u = np.arange(kernel_len) - (kernel_len - 1) / 2
    else:
        raise ValueError(f"unknown support {support!r}")
    k = np.exp(-u ** 2 / (2 * sigma ** 2))
    k = 0.5 * (k + k[::-1])
    return k / k.sum()


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of a synthetic spike/trend/noise dataset."""

    n_samples: int = 200
    kernel_len: int = 21
    kernel_sigma: float = 0.15
    n_spikes: int = 10
    noise_frac: float = 0.005
    seed: int = 0
    amplitude_range: Tuple[float, float] = (1.0, 10.0)
    min_separation: int = 5
    trend_frac: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "amplitude_range", tuple(float(a) for a in self.amplitude_range))
        self.validate()

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        _check_shapes(self.n_samples, self.kernel_len)
        if self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")
        if self.n_spikes < 1:
            raise ValueError("n_spikes must be positive")
        if not 0.0 <= self.noise_frac <= 1.0:
            raise ValueError("noise_frac must lie in [0, 1]")
        low, high = self.amplitude_range
        if not 0 < low <= high:
            raise ValueError("amplitude_range must satisfy 0 < low <= high")
        if self.min_separation < 1:
            raise ValueError("min_separation must be at least 1")
        if self.n_spikes * self.min_separation >= self.n_samples:
            raise ValueError("n_spikes * min_separation must be smaller than n_samples")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["amplitude_range"] = list(self.amplitude_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    """Clean components of a synthetic observation."""

    spikes: np.ndarray
    kernel: np.ndarray
    trend: np.ndarray
    noise: np.ndarray
    noise_sigma: float
    support: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.support:
            object.__setattr__(self, "support", tuple(int(i) for i in np.flatnonzero(self.spikes)))

    @property
    def peak_signal(self) -> np.ndarray:
        return convolve_same(self.spikes, self.kernel)

    @property
    def x_max(self) -> float:
        return float(np.max(np.abs(self.peak_signal)))

    def observation(self) -> np.ndarray:
        return self.peak_signal + self.trend + self.noise


def make_trend(n_samples: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Smooth baseline: two slow sinusoids over a positive offset and a mild ramp.

    The sinusoids sit on DFT bins 1 and 2 (periods N and N/2). The result is
    scaled so its peak equals `amplitude`.
    """
    n = np.arange(n_samples) / n_samples
    phases = rng.uniform(0.0, 2 * np.pi, size=2)
    weights = rng.uniform(0.5, 1.0, size=2)
    slope = rng.uniform(-0.15, 0.15)
    t = (1.5
         + weights[0] * np.sin(2 * np.pi * n + phases[0])
         + 0.5 * weights[1] * np.sin(4 * np.pi * n + phases[1])
         + slope * (n - 0.5))
    return amplitude * t / np.max(np.abs(t))


def _draw_positions(rng, n_samples, n_spikes, min_sep, margin, max_retries=1000):
    lo, hi = margin, n_samples - margin
    if hi - lo < 1:
        lo, hi = 0, n_samples
    for _ in range(max_retries):
        available = np.ones(n_samples, dtype=bool)
        available[:lo] = False
        available[hi:] = False
        chosen = []
        for _ in range(n_spikes):
            idx = np.flatnonzero(available)
            if idx.size == 0:
                break
            pos = int(rng.choice(idx))
            chosen.append(pos)
            available[max(0, pos - min_sep + 1):pos + min_sep] = False
        if len(chosen) == n_spikes:
            return np.sort(np.array(chosen))
    raise GenerationError(
        f"could not place {n_spikes} spikes with separation {min_sep} in {n_samples} samples")


def generate_dataset(spec: DatasetSpec, noise_seed: Optional[int] = 0) -> Tuple[GroundTruth, np.ndarray]:
    """Draw a ground truth and its noisy observation.

    Spikes, amplitudes and trend depend only on ``spec.seed``; the noise draw
    depends on ``(spec.seed, noise_seed)`` so that repeated noise realizations
    share the same clean signal.

    Returns
    -------
    truth : GroundTruth
    observation : numpy.ndarray, shape (n_samples,)
    """
    spec.validate()
    structure_rng = np.random.default_rng([spec.seed, 0])
    noise_rng = np.random.default_rng([spec.seed, 1, 0 if noise_seed is None else int(noise_seed)])

    kernel = gaussian_kernel(spec.kernel_len, spec.kernel_sigma)
    margin = (spec.kernel_len - 1) // 2
    positions = _draw_positions(structure_rng, spec.n_samples, spec.n_spikes,
                                spec.min_separation, margin)
    low, high = spec.amplitude_range
    spikes = np.zeros(spec.n_samples)
    spikes[positions] = structure_rng.uniform(low, high, size=spec.n_spikes)

    x_max = float(np.max(np.abs(convolve_same(spikes, kernel))))
    trend = make_trend(spec.n_samples, structure_rng, spec.trend_frac * x_max)
    sigma = spec.noise_frac * x_max
    noise = sigma * noise_rng.standard_normal(spec.n_samples)

    truth = GroundTruth(spikes=spikes, kernel=kernel, trend=trend, noise=noise,
                        noise_sigma=spec.noise_frac)
    return truth, truth.observation()


_PRESETS = {
    "A": dict(n_spikes=10, min_separation=5),
    "B": dict(n_spikes=20, min_separation=2),
}


def preset_spec(name: str, noise_frac: float = 0.005, seed: int = 0) -> DatasetSpec:
    """Dataset-A (sparse, well separated) or dataset-B (denser) analog."""
    try:
        extra = _PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown dataset preset {name!r}") from None
    return DatasetSpec(noise_frac=noise_frac, seed=seed, **extra)
