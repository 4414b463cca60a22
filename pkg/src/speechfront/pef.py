"""Phase-error based multi-channel filtering (PEF).

For every microphone pair the wrapped phase difference of the two STFTs is
turned into a soft mask ``eta = 1 / (1 + gamma ** theta**2)``. Each channel's
mask is the modified geometric mean ``(prod_j eta_ij) ** (1/m)`` of the masks
of all pairs it belongs to. The masked spectra are summed.

Note on ``gamma``: for ``gamma > 1`` the mask decreases with the phase error
(large errors are attenuated); for ``gamma < 1`` it increases. The default
0.01 is kept as configured and the formula is applied as written.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import expit

from .audio import AudioBuffer
from .errors import ConfigError, DataError
from .spectral import Spectrogram, istft, stft


@dataclass(frozen=True)
class PefConfig:
    gamma: float = 0.01
    # None means m = M (standard geometric mean over the channel count)
    m: float | None = None
    frame_size: int = 1024
    hop_ms: float = 10.0
    # highest masked bin; None masks up to Nyquist
    omega_max: int | None = None
    normalize_output: bool = True
    estimate_tdoa: bool = False
    max_lag: int = 64

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.m is not None and self.m <= 0:
            raise ConfigError("m must be positive")

    def hop(self, sample_rate: int) -> int:
        return max(1, int(round(self.hop_ms * 1e-3 * sample_rate)))


class TdoaError(DataError):
    pass


def wrap(phase):
    """Principal value in (-pi, pi]."""
    out = np.angle(np.exp(1j * np.asarray(phase)))
    return np.where(out == -np.pi, np.pi, out)


def _pick_lag(cc: np.ndarray, lags: np.ndarray) -> int:
    peak = cc.max()
    candidates = lags[cc >= peak - 1e-12 * abs(peak)]
    return int(candidates[np.argmin(np.abs(candidates))])


def estimate_tdoa(a, b, max_lag: int) -> int:
    """Delay of ``b`` relative to ``a`` in samples (``b[n] ~ a[n - beta]``).

    GCC-PHAT over the full-length cross-spectrum, searched within
    ``[-max_lag, max_lag]``; ties go to the smaller ``|lag|``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("signals must have equal length")
    if not 0 <= max_lag < len(a) / 2:
        raise ValueError(f"max_lag must be in [0, {len(a) / 2}), got {max_lag}")
    if not np.any(a) or not np.any(b):
        raise TdoaError("delay is undefined for a silent signal")
    n = 2 * len(a)
    cross = np.fft.rfft(b, n) * np.conj(np.fft.rfft(a, n))
    mag = np.abs(cross)
    cross = np.where(mag > 1e-12 * mag.max(), cross / np.maximum(mag, 1e-300), 0.0)
    cc = np.fft.irfft(cross, n)
    lags = np.arange(-max_lag, max_lag + 1)
    return _pick_lag(cc[lags % n], lags)


def tdoa_from_spectra(x_i: Spectrogram, x_j: Spectrogram, max_lag: int) -> int:
    """Delay of channel j relative to channel i from frame-averaged GCC-PHAT."""
    cross = x_j.values * np.conj(x_i.values)
    mag = np.abs(cross)
    cross = np.where(mag > 0, cross / np.maximum(mag, 1e-300), 0.0).sum(axis=1)
    if not np.any(cross):
        raise TdoaError("delay is undefined for silent spectra")
    n = x_i.frame_size
    cc = np.fft.irfft(cross, n)
    max_lag = min(max_lag, n // 2 - 1)
    lags = np.arange(-max_lag, max_lag + 1)
    return _pick_lag(cc[lags % n], lags)


@dataclass
class PhaseErrorField:
    pairs: list[tuple[int, int]]
    theta: dict[tuple[int, int], np.ndarray]
    delays: dict[tuple[int, int], int]

    def __getitem__(self, pair):
        i, j = pair
        if i < j:
            return self.theta[(i, j)]
        return -self.theta[(j, i)]


def phase_errors(specs, aligned: bool = True, delays=None, max_lag: int = 64) -> PhaseErrorField:
    """Wrapped phase differences for every channel pair ``i < j``.

    With ``aligned=False`` the linear phase ``omega * beta_ij`` of the pair's
    delay is removed first; delays come from ``delays[(i, j)]`` or are
    estimated from the spectra.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("phase errors need at least two channels")
    shape = specs[0].values.shape
    if any(s.values.shape != shape for s in specs):
        raise DataError("all spectrograms must share dimensions")
    n = specs[0].frame_size
    omega = 2.0 * np.pi * np.arange(shape[0]) / n
    pairs = list(combinations(range(len(specs)), 2))
    theta, used = {}, {}
    for i, j in pairs:
        diff = np.angle(specs[i].values) - np.angle(specs[j].values)
        beta = 0
        if not aligned:
            if delays is not None and (i, j) in delays:
                beta = int(delays[(i, j)])
            else:
                beta = tdoa_from_spectra(specs[i], specs[j], max_lag)
            diff = diff - omega[:, None] * beta
        theta[(i, j)] = wrap(diff)
        used[(i, j)] = beta
    return PhaseErrorField(pairs, theta, used)


def pair_mask(theta, gamma: float) -> np.ndarray:
    """``1 / (1 + gamma ** theta**2)``, evaluated as a logistic in log space."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return expit(-np.square(theta) * np.log(gamma))


def fuse_masks(masks, m: float) -> np.ndarray:
    """Modified geometric mean ``(prod masks) ** (1/m)``; a zero mask stays zero."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one pair mask")
    if m <= 0:
        raise ValueError("m must be positive")
    return np.prod(np.stack(masks), axis=0) ** (1.0 / m)


def channel_masks(field: PhaseErrorField, n_channels: int, gamma: float, m: float) -> list[np.ndarray]:
    eta = {p: pair_mask(field.theta[p], gamma) for p in field.pairs}
    return [fuse_masks([eta[(min(i, j), max(i, j))] for j in range(n_channels) if j != i], m)
            for i in range(n_channels)]


def pef_spectrum(specs, cfg: PefConfig = PefConfig(), delays=None) -> np.ndarray:
    """Masked sum of the channel spectra."""
    specs = list(specs)
    M = len(specs)
    if M < 2:
        raise ValueError("PEF needs at least two channels")
    m = M if cfg.m is None else cfg.m
    field = phase_errors(specs, aligned=not cfg.estimate_tdoa, delays=delays, max_lag=cfg.max_lag)
    masks = channel_masks(field, M, cfg.gamma, m)
    top = specs[0].bins - 1 if cfg.omega_max is None else min(cfg.omega_max, specs[0].bins - 1)
    out = np.zeros_like(specs[0].values)
    for spec, mask in zip(specs, masks):
        gain = np.ones(mask.shape)
        gain[:top + 1] = mask[:top + 1]
        out += gain * spec.values
    if cfg.normalize_output:
        out /= M
    return out


def pef_dereverb(audio: AudioBuffer, cfg: PefConfig = PefConfig()) -> AudioBuffer:
    if audio.channels < 2:
        raise DataError("PEF needs a multi-channel recording")
    hop = cfg.hop(audio.sample_rate)
    specs = [stft(audio.channel(c), cfg.frame_size, hop, sample_rate=audio.sample_rate,
                  center=True) for c in range(audio.channels)]
    out = pef_spectrum(specs, cfg)
    return AudioBuffer.mono(istft(specs[0].with_values(out)), audio.sample_rate)
