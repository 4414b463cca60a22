"""Synthetic scenes, objective metrics and the end-to-end pipeline."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioBuffer, read_wav, write_wav
from .cs import CsConfig, cs_dereverb, long_term_correlation
from .errors import ConfigError, DataError
from .pef import PefConfig, pef_dereverb

log = logging.getLogger(__name__)

SDR_CAP_DB = 99.0
ALIGN_MAX_LAG = 1024
STAGES = ("sse", "pef", "cs", "rescore")


def sine_class(rng: np.random.Generator, n: int, sample_rate: int = 16000,
               amplitude: float = 0.3) -> np.ndarray:
    """Harmonic tone (three partials, f0 in 150-400 Hz) under a raised-cosine envelope."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(150, 400)
    x = np.zeros(n)
    for h in range(1, 4):
        x += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.5 * (1 - np.cos(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi)))
    return amplitude * x * envelope


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance 1/f noise by spectral shaping of white noise."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / np.std(x)


def exponential_rir(rng: np.random.Generator, t60: float, sample_rate: int = 16000,
                    direct_delay: int = 0, length: float | None = None,
                    tail_gain: float = 0.3) -> np.ndarray:
    """Unit direct path followed by Gaussian noise decaying 60 dB in ``t60`` seconds."""
    if t60 <= 0:
        raise ConfigError("t60 must be positive")
    n = int(round((length if length is not None else 1.5 * t60) * sample_rate))
    t = np.arange(n) / sample_rate
    h = np.zeros(direct_delay + n)
    h[direct_delay:] = tail_gain * rng.normal(size=n) * np.exp(-3.0 * math.log(10) * t / t60)
    h[direct_delay] = 1.0
    return h


def fit_t60(h: np.ndarray, sample_rate: int, direct_delay: int = 0, skip: int = 1) -> float:
    """Decay time from a linear fit to the log energy envelope of the tail."""
    tail = h[direct_delay + skip:]
    block = max(1, sample_rate // 200)
    n_blocks = len(tail) // block
    energy = (tail[:n_blocks * block] ** 2).reshape(n_blocks, block).mean(axis=1)
    t = (np.arange(n_blocks) + 0.5) * block / sample_rate
    keep = energy > 0
    slope = np.polyfit(t[keep], 10 * np.log10(energy[keep]), 1)[0]
    return -60.0 / slope


@dataclass
class SceneSpec:
    # "sine", "white" or a wav path
    source: str = "sine"
    # "white", "pink" or a wav path
    noise: str = "white"
    # None (or +inf) means no noise
    snr_db: float | None = 0.0
    # None for a dry scene, else T60 in seconds
    t60: float | None = None
    direct_delay: list[int] = field(default_factory=list)
    channels: int = 1
    seed: int = 0
    duration: float = 1.0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be at least 1")
        if self.direct_delay and len(self.direct_delay) != self.channels:
            raise ConfigError("direct_delay needs one entry per channel")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown scene options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SceneOracle:
    clean: np.ndarray
    # per-channel components, shape (M, N)
    reverberant: np.ndarray
    noise: np.ndarray
    rirs: list[np.ndarray]


def _load_signal(spec: str, rng, n, sample_rate, kind) -> np.ndarray:
    if spec == "sine" and kind == "source":
        return sine_class(rng, n, sample_rate)
    if spec == "white":
        return rng.normal(size=n) * (0.1 if kind == "source" else 1.0)
    if spec == "pink" and kind == "noise":
        return pink_noise(rng, n)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"unknown {kind} {spec!r}")
    audio = read_wav(path)
    if audio.sample_rate != sample_rate:
        raise DataError(f"{path}: expected {sample_rate} Hz, got {audio.sample_rate} Hz")
    x = audio.channel(0)
    return np.resize(x, n) if kind == "noise" else x


def synthesize_scene(spec: SceneSpec) -> tuple[AudioBuffer, SceneOracle]:
    """Reverberant multichannel mixture with every component kept for evaluation.

    The noise is scaled so that the summed reverberant-source energy over
    all channels divided by the summed noise energy equals ``snr_db``.
    """
    rng = np.random.default_rng(spec.seed)
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    clean = _load_signal(spec.source, rng, n, fs, "source")
    n = len(clean)
    if not np.any(clean):
        raise DataError("source signal has zero energy")
    delays = spec.direct_delay or [0] * spec.channels
    rirs, rev = [], []
    for m in range(spec.channels):
        if spec.t60 is None:
            h = np.zeros(delays[m] + 1)
            h[delays[m]] = 1.0
        else:
            h = exponential_rir(rng, spec.t60, fs, delays[m])
        rirs.append(h)
        rev.append(signal.fftconvolve(clean, h)[:n])
    rev = np.vstack(rev)
    if spec.snr_db is None or spec.snr_db == math.inf:
        noise = np.zeros_like(rev)
    else:
        noise = np.vstack([_load_signal(spec.noise, rng, n, fs, "noise") for _ in range(spec.channels)])
        p_noise = np.sum(noise ** 2)
        if p_noise == 0:
            raise DataError("noise signal has zero energy")
        noise *= math.sqrt(np.sum(rev ** 2) / p_noise / 10 ** (spec.snr_db / 10))
    return AudioBuffer(rev + noise, fs), SceneOracle(clean, rev, noise, rirs)


def snr_db(reference, estimate) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    err = np.sum((np.asarray(estimate) - reference) ** 2)
    if err == 0:
        return SDR_CAP_DB
    return float(min(SDR_CAP_DB, 10 * math.log10(np.sum(reference ** 2) / err)))


def sdr_db(reference, estimate) -> float:
    """Scale-invariant SDR: the estimate is projected onto the reference."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    ref_energy = np.sum(reference ** 2)
    if ref_energy == 0:
        raise DataError("reference has zero energy")
    target = (estimate @ reference / ref_energy) * reference
    distortion = np.sum((estimate - target) ** 2)
    target_energy = np.sum(target ** 2)
    if distortion <= 1e-20 * max(target_energy, 1e-300):
        return SDR_CAP_DB if target_energy > 0 else -SDR_CAP_DB
    if target_energy == 0:
        return -SDR_CAP_DB
    return float(np.clip(10 * math.log10(target_energy / distortion), -SDR_CAP_DB, SDR_CAP_DB))


def align(estimate, reference, max_lag: int = ALIGN_MAX_LAG, lag: int | None = None):
    """Shift ``estimate`` by the cross-correlation peak within ``max_lag``; returns (aligned, lag).

    A known ``lag`` skips the search (periodic sources have several near-equal
    correlation peaks, so the search can lock onto a pitch period).
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if abs(len(estimate) - len(reference)) > max_lag:
        raise DataError(f"lengths {len(estimate)} and {len(reference)} differ by more than {max_lag}")
    n = len(reference)
    est = np.zeros(n)
    est[:min(n, len(estimate))] = estimate[:n]
    if lag is None:
        if not np.any(est) or not np.any(reference):
            return est, 0
        cc = signal.correlate(est, reference, mode="full", method="fft")
        lags = np.arange(-n + 1, n)
        window = np.abs(lags) <= max_lag
        lag = int(lags[window][np.argmax(cc[window])])
    elif abs(lag) >= n:
        raise DataError(f"lag {lag} exceeds the signal length")
    out = np.zeros(n)
    if lag >= 0:
        out[:n - lag] = est[lag:]
    else:
        out[-lag:] = est[:n + lag]
    return out, lag


@dataclass
class MetricsReport:
    stage: str
    snr_db: float | None
    sdr_db: float | None
    long_term_corr_energy: float
    lag: int = 0

    def row(self):
        return asdict(self)


def measure(enhanced, clean=None, stage: str = "output", sample_rate: int = 16000,
            cs_cfg: CsConfig = CsConfig(), lag: int | None = None) -> MetricsReport:
    """Metrics of the first channel of ``enhanced`` against the clean source.

    ``lag`` is the known delay of ``enhanced`` relative to ``clean``; when it
    is None the delay is searched within +-1024 samples. Without a clean
    reference only the long-term correlation energy is reported.
    """
    if isinstance(enhanced, AudioBuffer):
        sample_rate = enhanced.sample_rate
        enhanced = enhanced.channel(0)
    enhanced = np.asarray(enhanced, dtype=np.float64)
    _, dc, tau_max = cs_cfg.samples(sample_rate)
    ltc = long_term_correlation(enhanced, dc, min(tau_max, len(enhanced) - 1))
    if clean is None:
        return MetricsReport(stage, None, None, ltc)
    aligned, lag = align(enhanced, clean, lag=lag)
    return MetricsReport(stage, snr_db(clean, aligned), sdr_db(clean, aligned), ltc, lag)


def write_metrics(reports, csv_path=None, json_path=None):
    rows = [r.row() for r in reports]
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["stage"])
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")


@dataclass
class PipelineConfig:
    """Declarative pipeline description (see README for the JSON schema)."""

    output_dir: str
    stages: list[str] = field(default_factory=list)
    input: str | None = None
    clean: str | None = None
    scene: dict | None = None
    sse: dict = field(default_factory=dict)
    pef: dict = field(default_factory=dict)
    cs: dict = field(default_factory=dict)
    rescore: dict = field(default_factory=dict)
    # relative paths resolve against this directory (the config file's)
    base: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        unknown = set(d) - {f.name for f in fields(cls)} | ({"base"} & set(d))
        if unknown:
            raise ConfigError(f"unknown pipeline options: {sorted(unknown)}")
        if "output_dir" not in d:
            raise ConfigError("pipeline config needs an output_dir")
        cfg = cls(**d, base=Path(base) if base is not None else Path("."))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def validate(self):
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {list(STAGES)}")
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("each stage may appear only once")
        audio_stages = [s for s in self.stages if s != "rescore"]
        if (self.input is None) == (self.scene is None) and (audio_stages or not self.stages):
            raise ConfigError("give exactly one of 'input' and 'scene'")
        if self.scene is not None:
            SceneSpec.from_dict(self.scene)
        for name, allowed in (("sse", {"model", "channel"}),
                              ("rescore", {"nbest", "arpa", "lstm", "lambda", "lm_scale", "word_penalty"})):
            unknown = set(getattr(self, name)) - allowed
            if unknown:
                raise ConfigError(f"unknown {name} options: {sorted(unknown)}")
        if self.input is not None and not self.path(self.input).exists():
            raise ConfigError(f"input {self.input} does not exist")
        if "sse" in self.stages:
            model = self.sse.get("model")
            if not model or not self.path(model).exists():
                raise ConfigError("sse stage needs an existing 'model' checkpoint")
        if "pef" in self.stages:
            _config(PefConfig, self.pef, "pef")
        if "cs" in self.stages:
            _config(CsConfig, self.cs, "cs")
        if "rescore" in self.stages:
            r = self.rescore
            if not r.get("nbest") or not self.path(r["nbest"]).exists():
                raise ConfigError("rescore stage needs an existing 'nbest' file")
            if not r.get("arpa") and not r.get("lstm"):
                raise ConfigError("rescore stage needs 'arpa' and/or 'lstm'")
            for key in ("arpa", "lstm"):
                if r.get(key) and not self.path(r[key]).exists():
                    raise ConfigError(f"rescore {key} file {r[key]} does not exist")


def _config(cls, options: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown {name} options: {sorted(unknown)}")
    try:
        return cls(**options)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass
class PipelineResult:
    reports: list[MetricsReport]
    outputs: dict[str, Path]


def run_pipeline(config) -> PipelineResult:
    """Run the configured stages: SSE first, then PEF and/or CS on its output.

    ``config`` is a :class:`PipelineConfig`, a dict or a JSON file path.
    Every audio stage writes ``<stage>.wav`` and contributes a metrics row;
    the table goes to ``metrics.csv`` and ``metrics.json``.
    """
    if isinstance(config, dict):
        config = PipelineConfig.from_dict(config)
    elif not isinstance(config, PipelineConfig):
        config = PipelineConfig.load(config)
    out_dir = config.path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, Path] = {}
    reports: list[MetricsReport] = []
    audio_stages = [s for s in ("sse", "pef", "cs") if s in config.stages]

    if audio_stages or not config.stages:
        if config.scene is not None:
            scene = SceneSpec.from_dict(config.scene)
            mixture, oracle = synthesize_scene(scene)
            clean = oracle.clean
            # every stage keeps the timing of channel 0
            lag = scene.direct_delay[0] if scene.direct_delay else 0
        else:
            mixture = read_wav(config.path(config.input))
            clean = read_wav(config.path(config.clean)).channel(0) if config.clean else None
            lag = None
        outputs["input"] = out_dir / "input.wav"
        write_wav(mixture, outputs["input"], encoding="float32")
        reports.append(measure(mixture, clean, "input", lag=lag))

        base = mixture
        if "sse" in config.stages:
            from .sse import EnhancementModel, enhance
            model = EnhancementModel.load(config.path(config.sse["model"]))
            base = enhance(model, mixture, config.sse.get("channel"))
            outputs["sse"] = out_dir / "sse.wav"
            write_wav(base, outputs["sse"], encoding="float32")
            reports.append(measure(base, clean, "sse", lag=lag))
        if "pef" in config.stages:
            out = pef_dereverb(base, _config(PefConfig, config.pef, "pef"))
            outputs["pef"] = out_dir / "pef.wav"
            write_wav(out, outputs["pef"], encoding="float32")
            reports.append(measure(out, clean, "pef", lag=lag))
        if "cs" in config.stages:
            out, _, trace = cs_dereverb(base, _config(CsConfig, config.cs, "cs"))
            outputs["cs"] = out_dir / "cs.wav"
            write_wav(out, outputs["cs"], encoding="float32")
            (out_dir / "cs_trace.csv").write_text(trace.to_csv(), encoding="utf-8")
            reports.append(measure(out, clean, "cs", lag=lag))

    if "rescore" in config.stages:
        outputs["rescore"] = _run_rescore(config, out_dir)

    outputs["metrics_csv"] = out_dir / "metrics.csv"
    outputs["metrics_json"] = out_dir / "metrics.json"
    write_metrics(reports, outputs["metrics_csv"], outputs["metrics_json"])
    return PipelineResult(reports, outputs)


def _run_rescore(config: PipelineConfig, out_dir: Path) -> Path:
    from .lm import InterpolatedLm, LstmLm, format_nbest, read_arpa, read_nbest, rescore_all

    r = config.rescore
    lstm = LstmLm.load(config.path(r["lstm"])) if r.get("lstm") else None
    ngram = read_arpa(config.path(r["arpa"])) if r.get("arpa") else None
    lam = float(r.get("lambda", 0.5 if lstm is not None and ngram is not None
                      else (1.0 if lstm is not None else 0.0)))
    try:
        lm = InterpolatedLm(lstm, ngram, lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ranked = rescore_all(read_nbest(config.path(r["nbest"])), lm,
                         float(r.get("lm_scale", 1.0)), float(r.get("word_penalty", 0.0)))
    path = out_dir / "rescored.nbest"
    path.write_text(format_nbest(ranked), encoding="utf-8")
    with open(out_dir / "onebest.txt", "w", encoding="utf-8") as fh:
        for utt, hyps in ranked.items():
            fh.write(" ".join([utt, *hyps[0].words]) + "\n")
    return path

