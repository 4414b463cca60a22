"""Single-channel enhancement by network-predicted spectral subtraction.

Two networks predict log-Mel features of speech and of noise from the noisy
log-Mel features (static + deltas). The predictions are mapped back to the
linear-frequency magnitude domain and turned into a per-bin gain

    gain = 1 - M+ exp(N) / max(M+ (exp(S) + exp(N)), eps)

clamped to [0, 1], where ``M+`` is the pseudo-inverse of the Mel filterbank.
The gain is applied to the noisy magnitudes and the signal is resynthesized
with the noisy phase.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .audio import AudioBuffer
from .errors import ConfigError, DataError, FormatError, StateError
from .neural import SequenceNetwork
from .neural.training import TrainConfig, TrainResult, train
from .spectral import (
    LOG_FLOOR,
    MelFilterbank,
    Spectrogram,
    Standardizer,
    istft,
    mel_backward,
    mel_filterbank,
    mel_forward,
    stft,
)

log = logging.getLogger(__name__)

GAIN_EPS = 1e-10

# 3 BLSTM layers of 128 units per direction, each followed by a 64-unit
# feed-forward layer, then a linear output of n_mels
DEFAULT_HIDDEN = [("blstm", 128), ("ff", 64)] * 3


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    frame_size: int = 1024
    hop: int = 160
    n_mels: int = 40
    window: str = "hann"
    floor: float = LOG_FLOOR

    @property
    def filterbank(self) -> MelFilterbank:
        return mel_filterbank(self.n_mels, self.frame_size, self.sample_rate)

    def analyse(self, x) -> Spectrogram:
        return stft(x, self.frame_size, self.hop, self.window, self.sample_rate, center=True)

    def log_mel(self, magnitudes) -> np.ndarray:
        return mel_forward(magnitudes, self.filterbank, self.floor).log_energies

    def network_input(self, magnitudes) -> np.ndarray:
        """Static and delta log-Mel features, shape ``(2B, T)``."""
        return mel_forward(magnitudes, self.filterbank, self.floor).stacked()


@dataclass
class FilterGain:
    gains: np.ndarray

    def apply(self, magnitudes):
        return self.gains * magnitudes


def build_filter(X_mag, S_mel_log, N_mel_log, fb: MelFilterbank, eps: float = GAIN_EPS) -> FilterGain:
    """Spectral-subtraction gain from predicted speech and noise log-Mel features."""
    S_mel_log = np.asarray(S_mel_log, dtype=np.float64)
    N_mel_log = np.asarray(N_mel_log, dtype=np.float64)
    if S_mel_log.shape != N_mel_log.shape:
        raise ValueError("speech and noise features must have the same shape")
    noise = mel_backward(np.exp(N_mel_log), fb)
    total = mel_backward(np.exp(S_mel_log) + np.exp(N_mel_log), fb)
    gains = np.clip(1.0 - noise / np.maximum(total, eps), 0.0, 1.0)
    if np.shape(X_mag) != gains.shape:
        raise ValueError(f"magnitudes {np.shape(X_mag)} do not match filter {gains.shape}")
    return FilterGain(gains)


@dataclass
class EnhancementModel:
    speech_net: SequenceNetwork
    noise_net: SequenceNetwork
    features: FeatureConfig = field(default_factory=FeatureConfig)
    input_stats: Standardizer | None = None
    speech_stats: Standardizer | None = None
    noise_stats: Standardizer | None = None

    def __post_init__(self):
        b = self.features.n_mels
        for name, net in (("speech", self.speech_net), ("noise", self.noise_net)):
            if net.input_dim != 2 * b or net.output_dim != b:
                raise ConfigError(f"{name} network must map {2 * b} -> {b}, "
                                  f"got {net.input_dim} -> {net.output_dim}")
        self.input_stats = self.input_stats or Standardizer.identity(2 * b)
        self.speech_stats = self.speech_stats or Standardizer.identity(b)
        self.noise_stats = self.noise_stats or Standardizer.identity(b)

    def predict(self, magnitudes) -> tuple[np.ndarray, np.ndarray]:
        """Predicted speech and noise log-Mel features ``(B, T)``."""
        z = self.input_stats.apply(self.features.network_input(magnitudes)).T
        speech = self.speech_stats.invert(self.speech_net(z).T)
        noise = self.noise_stats.invert(self.noise_net(z).T)
        return speech, noise

    def save(self, path, metadata: dict | None = None):
        header = {
            "format": "speechfront-sse",
            "features": asdict(self.features),
            "speech_net": self.speech_net.config(),
            "noise_net": self.noise_net.config(),
            "input_stats": self.input_stats.to_dict(),
            "speech_stats": self.speech_stats.to_dict(),
            "noise_stats": self.noise_stats.to_dict(),
            "metadata": metadata or {},
        }
        checkpoint.save(path, header, {"speech": self.speech_net.theta,
                                       "noise": self.noise_net.theta})

    @classmethod
    def load(cls, path) -> "EnhancementModel":
        header, arrays = checkpoint.load(path)
        if header.get("format") != "speechfront-sse":
            raise FormatError(f"{path}: not an enhancement model")
        return cls(
            SequenceNetwork.from_config(header["speech_net"], arrays["speech"]),
            SequenceNetwork.from_config(header["noise_net"], arrays["noise"]),
            FeatureConfig(**header["features"]),
            Standardizer.from_dict(header["input_stats"]),
            Standardizer.from_dict(header["speech_stats"]),
            Standardizer.from_dict(header["noise_stats"]),
        )


def enhance_signal(model: EnhancementModel | None, x: np.ndarray) -> np.ndarray:
    if model is None:
        raise StateError("no enhancement model loaded")
    x = np.asarray(x, dtype=np.float64)
    if not np.any(x):
        return np.zeros_like(x)
    spec = model.features.analyse(x)
    X = spec.magnitude
    speech, noise = model.predict(X)
    gain = build_filter(X, speech, noise, model.features.filterbank)
    # gain is real and nonnegative, so the noisy phase is kept exactly
    return istft(spec.with_values(gain.gains * spec.values))


def enhance(model: EnhancementModel | None, noisy: AudioBuffer, channel: int | None = None) -> AudioBuffer:
    """Enhance one channel, or every channel independently when ``channel`` is None."""
    if model is None:
        raise StateError("no enhancement model loaded")
    if noisy.sample_rate != model.features.sample_rate:
        raise DataError(f"model expects {model.features.sample_rate} Hz audio, "
                        f"got {noisy.sample_rate} Hz")
    channels = range(noisy.channels) if channel is None else [channel]
    out = [enhance_signal(model, noisy.channel(c)) for c in channels]
    return AudioBuffer(np.vstack(out), noisy.sample_rate)


@dataclass
class SseTrainingReport:
    speech: TrainResult
    noise: TrainResult


def corpus_features(pairs, features: FeatureConfig):
    """Network inputs and speech/noise targets for ``(clean, noise)`` waveform pairs.

    The noisy mixture is ``clean + noise``; noise targets are the log-Mel
    features of the noise waveform on its own.
    """
    items = []
    for k, (clean, noise) in enumerate(pairs):
        clean = np.asarray(clean, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        if clean.shape != noise.shape or clean.ndim != 1:
            raise DataError(f"pair {k}: clean {clean.shape} and noise {noise.shape} are misaligned")
        mix = features.analyse(clean + noise).magnitude
        items.append((features.network_input(mix),
                      features.log_mel(features.analyse(clean).magnitude),
                      features.log_mel(features.analyse(noise).magnitude)))
    return items


def train_sse(train_pairs, valid_pairs=(), hidden=None, cfg: TrainConfig | None = None,
              features: FeatureConfig | None = None, seed: int = 0):
    """Train the speech and the noise network on paired waveforms.

    Inputs and each target stream are standardized with statistics fitted on
    the training set. Returns ``(model, report)``.
    """
    features = features or FeatureConfig()
    cfg = cfg or TrainConfig()
    hidden = DEFAULT_HIDDEN if hidden is None else hidden
    train_items = corpus_features(train_pairs, features)
    if not train_items:
        raise DataError("training corpus is empty")
    valid_items = corpus_features(valid_pairs, features)

    in_stats = Standardizer.fit([i[0] for i in train_items])
    sp_stats = Standardizer.fit([i[1] for i in train_items])
    no_stats = Standardizer.fit([i[2] for i in train_items])

    def dataset(items, which, stats):
        return [(in_stats.apply(i[0]).T, stats.apply(i[which]).T) for i in items]

    b = features.n_mels
    topology = list(hidden) + [("linear", b)]
    results = {}
    for name, which, stats, offset in (("speech", 1, sp_stats, 0), ("noise", 2, no_stats, 1)):
        net = SequenceNetwork.random(2 * b, topology, seed=seed + offset)
        log.info("training %s network (%d parameters)", name, net.n_params)
        results[name] = train(net, dataset(train_items, which, stats),
                              dataset(valid_items, which, stats), cfg)
    model = EnhancementModel(results["speech"].net, results["noise"].net, features,
                             in_stats, sp_stats, no_stats)
    return model, SseTrainingReport(results["speech"], results["noise"])
