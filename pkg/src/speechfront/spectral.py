"""STFT analysis/synthesis and log-Mel feature extraction.

The DFT is normalized with 1/sqrt(N) (``norm="ortho"``), so for each frame the
one-sided energy returned by :func:`frame_energy` equals the energy of the
windowed time-domain frame.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
WINDOWS = ("hann", "rectangular")


def get_window(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        # periodic Hann; symmetric Hann is not COLA at hop = n/2
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if kind == "rectangular":
        return np.ones(n)
    raise ConfigError(f"unknown window {kind!r}; expected one of {WINDOWS}")


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT of one channel, shape ``(bins, frames)``.

    ``center`` records that the analysed signal was zero-padded by
    ``frame_size // 2`` on the left, and ``length`` is the original signal
    length, so :func:`istft` can return a signal aligned with the input.
    """

    values: np.ndarray
    frame_size: int
    hop: int
    window: str = "hann"
    sample_rate: int | None = None
    center: bool = False
    length: int | None = None

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        if values.shape != self.values.shape:
            raise ValueError(f"shape {values.shape} does not match {self.values.shape}")
        return Spectrogram(values, self.frame_size, self.hop, self.window,
                           self.sample_rate, self.center, self.length)


def _check_frame_params(frame_size: int, hop: int):
    if frame_size <= 0 or frame_size & (frame_size - 1):
        raise ConfigError(f"frame_size must be a power of two, got {frame_size}")
    if not 0 < hop <= frame_size:
        raise ConfigError(f"hop must be in (0, frame_size], got {hop}")


def stft(x, frame_size: int = 1024, hop: int = 160, window: str = "hann",
         sample_rate: int | None = None, center: bool = False) -> Spectrogram:
    """Windowed short-time DFT of a single-channel signal.

    Without ``center`` there is no padding and the frame count is
    ``(len(x) - frame_size) // hop + 1``. With ``center`` the signal is padded
    by ``frame_size // 2`` on the left and enough zeros on the right that every
    input sample lies inside fully overlapped frames.
    """
    _check_frame_params(frame_size, hop)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a single-channel signal")
    length = len(x)
    if center:
        half = frame_size // 2
        n_frames = -(-(length + 2 * half - frame_size) // hop) + 1
        total = (n_frames - 1) * hop + frame_size
        x = np.concatenate([np.zeros(half), x, np.zeros(total - half - length)])
    if len(x) < frame_size:
        raise DataError(f"signal of {len(x)} samples is shorter than one frame ({frame_size})")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_size)[::hop]
    spec = np.fft.rfft(frames * get_window(window, frame_size), norm="ortho").T
    return Spectrogram(spec, frame_size, hop, window, sample_rate, center, length)


def frame_energy(spec: Spectrogram) -> np.ndarray:
    """Per-frame energy of the one-sided spectrum (DC and Nyquist counted once)."""
    power = np.abs(spec.values) ** 2
    return 2.0 * power.sum(axis=0) - power[0] - power[-1]


def _window_power_sum(window: np.ndarray, hop: int) -> np.ndarray:
    """Steady-state overlap-add of the squared window over one hop period."""
    n = len(window)
    period = np.zeros(hop)
    for start in range(0, n, hop):
        seg = window[start:start + hop] ** 2
        period[:len(seg)] += seg
    return period


def check_cola(window: str, frame_size: int, hop: int):
    w = get_window(window, frame_size)
    wsum = _window_power_sum(w, hop)
    if wsum.min() <= 1e-8 * wsum.max():
        raise ConfigError(
            f"{window} window with frame {frame_size} and hop {hop} cannot be inverted: "
            "the overlap-added window power vanishes")


def istft(spec: Spectrogram, window: str | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Frames are multiplied by the synthesis window and normalized by the
    overlap-added squared window, which is exact wherever that sum is nonzero.
    """
    window = window or spec.window
    n, hop = spec.frame_size, spec.hop
    _check_frame_params(n, hop)
    check_cola(window, n, hop)
    w = get_window(window, n)
    frames = np.fft.irfft(spec.values.T, n=n, norm="ortho") * w
    total = (spec.frames - 1) * hop + n
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(spec.frames):
        out[t * hop:t * hop + n] += frames[t]
        wsum[t * hop:t * hop + n] += w ** 2
    nonzero = wsum > 1e-10 * wsum.max()
    out[nonzero] /= wsum[nonzero]
    out[~nonzero] = 0.0
    if spec.center:
        half = n // 2
        out = out[half:half + spec.length]
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular Mel filterbank ``matrix`` (B x F) and its back-transform.

    ``inverse`` is the Moore-Penrose pseudo-inverse (F x B).
    """

    matrix: np.ndarray
    inverse: np.ndarray = field(repr=False)
    sample_rate: int | None = None

    @property
    def n_bands(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_matrix(cls, matrix, sample_rate=None) -> "MelFilterbank":
        matrix = np.array(matrix, dtype=np.float64)
        if np.any(matrix < 0):
            raise ConfigError("filterbank weights must be nonnegative")
        if np.any(matrix.max(axis=1) <= 0):
            raise ConfigError("every filterbank row needs at least one positive weight")
        inverse = np.linalg.pinv(matrix)
        matrix.setflags(write=False)
        inverse.setflags(write=False)
        return cls(matrix, inverse, sample_rate)


@lru_cache(maxsize=32)
def mel_filterbank(n_bands: int = 40, frame_size: int = 1024, sample_rate: int = 16000,
                   fmin: float = 0.0, fmax: float | None = None) -> MelFilterbank:
    """Triangular filters with peak 1 and centres equally spaced on the Mel scale.

    The first and last centres sit on ``fmin`` and ``fmax`` so the outermost
    filters are half-triangles. That keeps the whole band inside the span of
    the filters, which the pseudo-inverse needs to rebuild the spectrum edges.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    if n_bands < 2:
        raise ConfigError("need at least two Mel bands")
    n_bins = frame_size // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / frame_size
    centres_mel = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands)
    step = centres_mel[1] - centres_mel[0]
    lower = mel_to_hz(centres_mel - step)[:, None]
    centre = mel_to_hz(centres_mel)[:, None]
    upper = mel_to_hz(centres_mel + step)[:, None]
    rising = (bin_hz - lower) / (centre - lower)
    falling = (upper - bin_hz) / (upper - centre)
    matrix = np.maximum(0.0, np.minimum(rising, falling))
    matrix[:, (bin_hz < fmin) | (bin_hz > fmax)] = 0.0
    return MelFilterbank.from_matrix(matrix, sample_rate)


@dataclass
class MelFeatures:
    log_energies: np.ndarray
    deltas: np.ndarray

    @property
    def bands(self) -> int:
        return self.log_energies.shape[0]

    @property
    def frames(self) -> int:
        return self.log_energies.shape[1]

    def stacked(self) -> np.ndarray:
        """Static and delta features as one ``(2B, T)`` matrix."""
        return np.vstack([self.log_energies, self.deltas])


def mel_energies(magnitudes: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    if magnitudes.shape[0] != fb.n_bins:
        raise ValueError(f"expected {fb.n_bins} bins, got {magnitudes.shape[0]}")
    return fb.matrix @ magnitudes


def mel_forward(magnitudes: np.ndarray, fb: MelFilterbank, floor: float = LOG_FLOOR) -> MelFeatures:
    """Log Mel-band energies ``log(max(M |X|, floor))`` plus their deltas."""
    if np.any(np.asarray(magnitudes) < 0):
        raise ValueError("magnitudes must be nonnegative")
    log_e = np.log(np.maximum(mel_energies(magnitudes, fb), floor))
    return MelFeatures(log_e, deltas(log_e))


def mel_backward(mel: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Map linear Mel-band energies back to nonnegative magnitude bins."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape[0] != fb.n_bands:
        raise ValueError(f"expected {fb.n_bands} bands, got {mel.shape[0]}")
    return np.maximum(fb.inverse @ mel, 0.0)


def deltas(features: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas along the time axis (last axis), edges replicated."""
    x = np.asarray(features, dtype=np.float64)
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(window, window)], mode="edge")
    t = x.shape[-1]
    num = np.zeros_like(x)
    for w in range(1, window + 1):
        num += w * (padded[..., window + w:window + w + t] - padded[..., window - w:window - w + t])
    return num / (2.0 * sum(w * w for w in range(1, window + 1)))


@dataclass
class Standardizer:
    """Per-dimension mean/std over frames; features are ``(dims, frames)``."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features) -> "Standardizer":
        if isinstance(features, np.ndarray):
            features = [features]
        data = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=1)
        std = data.std(axis=1)
        return cls(data.mean(axis=1), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, dims: int) -> "Standardizer":
        return cls(np.zeros(dims), np.ones(dims))

    def _std(self):
        return np.where(self.std > 0, self.std, 1.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[:, None]) / self._std()[:, None]

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self._std()[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def standardize(features: np.ndarray, stats: Standardizer) -> np.ndarray:
    return stats.apply(features)


def unstandardize(features: np.ndarray, stats: Standardizer) -> np.ndarray:
    return stats.invert(features)


_MATRIX_HEADER = struct.Struct("<QQ")


def write_features(path, matrix: np.ndarray, metadata: dict | None = None):
    """Write a float64 matrix with a ``rows, cols`` header and a JSON sidecar."""
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("feature dumps hold 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(*matrix.shape))
        fh.write(matrix.tobytes())
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(metadata or {}, indent=2, sort_keys=True))


def read_features(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    rows, cols = _MATRIX_HEADER.unpack_from(raw)
    payload = raw[_MATRIX_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise FormatError(f"{path}: expected {rows}x{cols} float64 payload, got {len(payload)} bytes")
    matrix = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    sidecar = Path(str(path) + ".json")
    metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return matrix, metadata
