"""Multi-channel waveform container and RIFF/WAVE I/O."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, UnsupportedFormatError

DEFAULT_SAMPLE_RATE = 16000

_PCM16_SCALE = 32768.0


class ClippingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable multi-channel audio.

    ``samples`` has shape ``(channels, length)``. Samples written to disk are
    expected to lie in [-1, 1]; intermediate results may exceed that range and
    are clamped only by :func:`write_wav`.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError("samples must have shape (channels, length)")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        if not 0 <= index < self.channels:
            raise ValueError(f"channel {index} out of range for {self.channels} channels")
        return self.samples[index]

    @classmethod
    def mono(cls, samples, sample_rate: int) -> "AudioBuffer":
        return cls(np.asarray(samples)[np.newaxis, :], sample_rate)


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or IEEE float32 WAVE file.

    Integer samples are scaled by 1/32768 so that -32768 maps to -1.0.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: malformed WAVE file ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample encoding {data.dtype}; expected int16 or float32"
        )
    samples = samples.T if samples.ndim == 2 else samples[np.newaxis, :]
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path, encoding: str = "pcm16") -> bool:
    """Write ``buffer`` as interleaved PCM16 or float32.

    Out-of-range samples are clamped to [-1, 1] and a :class:`ClippingWarning`
    is issued. Returns True when clipping happened.
    """
    samples = np.asarray(buffer.samples)
    if not np.all(np.isfinite(samples)):
        raise ValueError("cannot write non-finite samples")
    clipped = bool(np.any(np.abs(samples) > 1.0))
    if clipped:
        warnings.warn(f"clipping {path}: peak {np.abs(samples).max():.3f}", ClippingWarning,
                      stacklevel=2)
        samples = np.clip(samples, -1.0, 1.0)

    if encoding == "pcm16":
        data = np.clip(np.round(samples * _PCM16_SCALE), -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    wavfile.write(path, buffer.sample_rate, np.ascontiguousarray(data.T))
    return clipped


def shift_channel(buffer: AudioBuffer, channel: int, delay: int) -> AudioBuffer:
    """Delay one channel by an integer number of samples.

    Positive ``delay`` moves content later in time; vacated samples are zero.
    """
    n = len(buffer)
    if not 0 <= channel < buffer.channels:
        raise ValueError(f"channel {channel} out of range for {buffer.channels} channels")
    if abs(delay) >= n:
        raise ValueError(f"|delay| must be < length ({n}), got {delay}")
    out = np.array(buffer.samples)
    out[channel] = shift(buffer.samples[channel], delay)
    return AudioBuffer(out, buffer.sample_rate)


def shift(x: np.ndarray, delay: int) -> np.ndarray:
    out = np.zeros_like(x)
    if delay > 0:
        out[delay:] = x[:-delay]
    elif delay < 0:
        out[:delay] = x[-delay:]
    else:
        out[:] = x
    return out
