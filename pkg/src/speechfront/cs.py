"""Correlation shaping (CS) dereverberation on linear-prediction residuals.

A multi-input single-output equalizer bank ``g`` (M channels x L taps) is
adapted by normalized gradient descent to suppress the weighted long-lag
autocorrelation energy

    E = sum_{tau_dc < tau <= tau_max} W(tau) * R_yy(tau)**2

of its output, i.e. to push ``R_yy`` toward a delta outside the don't-care
region. Adaptation runs on LP residuals of the whole segment; the final
equalizer is applied to the original signals.

Correlations are computed on the full-length convolution output (N + L - 1
samples), for which the simplified gradient

    grad_m(l) = sum_tau W(tau) R_yy(tau) (R_yx_m(l - tau) + R_yx_m(l + tau))

is exactly half the derivative of ``E``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .audio import AudioBuffer
from .errors import AdaptationError, ConfigError, DataError

log = logging.getLogger(__name__)


def autocorr(x, tau_max: int) -> np.ndarray:
    """Unnormalized autocorrelation ``R(tau) = sum_n x[n] x[n - tau]`` for lags 0..tau_max."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= tau_max < max(len(x), 1):
        raise ValueError(f"tau_max must be in [0, {len(x)}), got {tau_max}")
    full = signal.correlate(x, x, mode="full")
    return full[len(x) - 1:len(x) + tau_max]


def cross_corr(y, x, lags) -> np.ndarray:
    """``R_yx(k) = sum_n y[n] x[n - k]`` for the requested integer lags."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    full = signal.correlate(y, x, mode="full")
    idx = np.asarray(lags) + len(x) - 1
    out = np.zeros(len(idx))
    ok = (idx >= 0) & (idx < len(full))
    out[ok] = full[idx[ok]]
    return out


@dataclass
class LpModel:
    coefficients: np.ndarray
    gain: float
    reflection: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def inverse_filter(self, x) -> np.ndarray:
        return signal.lfilter(np.concatenate([[1.0], -self.coefficients]), [1.0], x)

    def synthesize(self, residual) -> np.ndarray:
        return signal.lfilter([1.0], np.concatenate([[1.0], -self.coefficients]), residual)


def levinson_durbin(r, order: int):
    """Solve the normal equations for predictor ``x[n] ~ sum_k a[k] x[n-k]``.

    Returns ``(a, prediction_error, reflection_coefficients)``.
    """
    r = np.asarray(r, dtype=np.float64)
    if r[0] <= 0:
        raise DataError("zero-energy signal has no linear predictor")
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k[i] = acc / err
        prev = a[:i].copy()
        a[i] = k[i]
        a[:i] = prev - k[i] * prev[::-1]
        err *= 1.0 - k[i] * k[i]
        if err <= 0:
            # perfectly predictable signal; stop before dividing by zero
            a[i + 1:] = 0.0
            err = 0.0
            break
    return a, err, k


def lp_residual(x, order: int = 16) -> tuple[np.ndarray, LpModel]:
    """Prediction error ``e[n] = x[n] - sum_k a[k] x[n-k]`` from autocorrelation LPC."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) <= order:
        raise DataError(f"signal of {len(x)} samples is too short for order {order}")
    if not np.any(x):
        raise DataError("cannot compute an LP residual of a zero-energy signal")
    if order == 0:
        return x.copy(), LpModel(np.zeros(0), math.sqrt(np.mean(x * x)))
    a, err, k = levinson_durbin(autocorr(x, order), order)
    model = LpModel(a, math.sqrt(max(err, 0.0) / len(x)), k)
    return model.inverse_filter(x), model


@dataclass
class CsConfig:
    eq_ms: float = 62.5
    dontcare_ms: float = 18.7
    taumax_ms: float = 62.5
    mu: float = 5e-3
    max_iters: int = 500
    tol: float = 1e-8
    lp_order: int | None = None
    # index of the channel whose centre tap starts at 1, or "max-energy"
    reference: int | str = 0
    weight_at_taumax: float = 0.1
    min_mu: float = 1e-12

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if not 0 < self.weight_at_taumax <= 1:
            raise ConfigError("weight_at_taumax must be in (0, 1]")
        if self.dontcare_ms >= self.taumax_ms:
            raise ConfigError("the don't-care region must end before tau_max")

    def samples(self, sample_rate: int) -> tuple[int, int, int]:
        """Equalizer length, don't-care end and tau_max in samples (rounded up)."""
        conv = lambda ms: int(math.ceil(ms * sample_rate / 1000 - 1e-9))
        return conv(self.eq_ms), conv(self.dontcare_ms), conv(self.taumax_ms)

    def order(self, sample_rate: int) -> int:
        return self.lp_order if self.lp_order is not None else int(round(sample_rate / 1000))


def exponential_weights(dont_care: int, tau_max: int, final: float = 0.1) -> np.ndarray:
    """``W(tau)`` over lags 0..tau_max: zero up to ``dont_care``, then decaying to ``final``."""
    if not 0 <= dont_care < tau_max:
        raise ConfigError("need 0 <= dont_care < tau_max")
    w = np.zeros(tau_max + 1)
    tau = np.arange(dont_care + 1, tau_max + 1)
    alpha = -math.log(final) / (tau_max - dont_care)
    w[tau] = np.exp(-alpha * (tau - dont_care))
    return w


@dataclass
class EqualizerBank:
    """Per-channel FIR equalizers, taps indexed relative to ``delay``.

    The output is ``y[n] = sum_m sum_l g[m, l] x_m[n - l + delay]`` so the
    identity equalizer (a one at ``l = delay``) passes the signal unchanged.
    """

    g: np.ndarray
    weights: np.ndarray
    dont_care: int
    tau_max: int
    mu: float = 5e-3
    delay: int | None = None

    def __post_init__(self):
        self.g = np.array(self.g, dtype=np.float64, ndmin=2)
        if self.delay is None:
            self.delay = self.taps // 2

    @property
    def channels(self) -> int:
        return self.g.shape[0]

    @property
    def taps(self) -> int:
        return self.g.shape[1]

    @classmethod
    def identity(cls, channels, taps, weights, dont_care, tau_max, mu=5e-3, reference=0):
        g = np.zeros((channels, taps))
        g[reference, taps // 2] = 1.0
        return cls(g, weights, dont_care, tau_max, mu)


def full_output(g, x) -> np.ndarray:
    """``sum_m conv(g_m, x_m)`` over its full support (length N + L - 1)."""
    g = np.atleast_2d(g)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if g.shape[0] != x.shape[0]:
        raise ValueError(f"{g.shape[0]} equalizers for {x.shape[0]} channels")
    return sum(signal.oaconvolve(x[m], g[m]) if len(x[m]) > 4 * g.shape[1]
               else np.convolve(x[m], g[m]) for m in range(g.shape[0]))


def miso_filter(bank: EqualizerBank, x) -> np.ndarray:
    """Filter M channels and sum them; the result has the input length."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = full_output(bank.g, x)
    return y[bank.delay:bank.delay + x.shape[1]]


@dataclass
class CorrelationState:
    R_yy: np.ndarray
    # R_yx[m, k + tau_max] holds lag k for k in [-tau_max, L - 1 + tau_max]
    R_yx: np.ndarray
    N: int


def correlation_state(g, x, tau_max: int) -> CorrelationState:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    L = np.atleast_2d(g).shape[1]
    y = full_output(g, x)
    lags = np.arange(-tau_max, L + tau_max)
    ryx = np.vstack([cross_corr(y, x[m], lags) for m in range(x.shape[0])])
    ryy = np.zeros(tau_max + 1)
    n_lags = min(tau_max, len(y) - 1)
    ryy[:n_lags + 1] = autocorr(y, n_lags)
    return CorrelationState(ryy, ryx, len(y))


def objective(R_yy, weights) -> float:
    return float(np.sum(weights * R_yy[:len(weights)] ** 2))


def cs_gradient(state: CorrelationState, weights, dont_care: int, tau_max: int) -> np.ndarray:
    """Gradient per channel and tap; lags up to ``dont_care`` contribute nothing."""
    v = np.asarray(weights, dtype=np.float64)[:tau_max + 1] * state.R_yy[:tau_max + 1]
    v = v.copy()
    v[:dont_care + 1] = 0.0
    L = state.R_yx.shape[1] - 2 * tau_max
    grad = np.empty((state.R_yx.shape[0], L))
    for m, r in enumerate(state.R_yx):
        lagged = np.convolve(r, v)[tau_max:tau_max + L]
        leading = np.correlate(r, v, mode="valid")[tau_max:tau_max + L]
        grad[m] = lagged + leading
    return grad


def normalized_gradient(grad) -> np.ndarray:
    norm = math.sqrt(float(np.sum(grad * grad)))
    return grad / norm if norm > 0 else np.zeros_like(grad)


@dataclass
class AdaptationTrace:
    # one entry per iteration: (iteration, objective, mu, accepted)
    steps: list[tuple[int, float, float, bool]] = field(default_factory=list)
    initial_objective: float = 0.0

    @property
    def accepted_objectives(self) -> list[float]:
        return [self.initial_objective] + [s[1] for s in self.steps if s[3]]

    def to_csv(self) -> str:
        lines = ["iteration,objective,mu,accepted"]
        lines.append(f"0,{self.initial_objective!r},,1")
        lines += [f"{i},{e!r},{mu!r},{int(a)}" for i, e, mu, a in self.steps]
        return "\n".join(lines) + "\n"


def _renormalize(g, x, target_r0):
    r0 = float(np.sum(full_output(g, x) ** 2))
    if r0 <= 0 or not math.isfinite(r0):
        raise AdaptationError("equalizer output vanished or diverged")
    return g * math.sqrt(target_r0 / r0)


def cs_adapt(residuals, cfg: CsConfig, sample_rate: int = 16000) -> tuple[EqualizerBank, AdaptationTrace]:
    """Adapt equalizers on whole-segment residual correlations.

    Each iteration takes a normalized gradient step of size ``mu``, rescales
    ``g`` so that ``R_yy(0)`` keeps its initial value (this rules out the
    trivial ``g -> 0`` solution), and accepts the step only if the objective
    does not increase; otherwise ``mu`` is halved.
    """
    x = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    L, dc, tau_max = cfg.samples(sample_rate)
    if x.shape[1] <= tau_max:
        raise DataError(f"segment of {x.shape[1]} samples is shorter than tau_max ({tau_max})")
    weights = exponential_weights(dc, tau_max, cfg.weight_at_taumax)
    ref = cfg.reference
    if ref == "max-energy":
        ref = int(np.argmax(np.sum(x * x, axis=1)))
    elif not 0 <= int(ref) < x.shape[0]:
        raise ConfigError(f"reference channel {ref} out of range")
    bank = EqualizerBank.identity(x.shape[0], L, weights, dc, tau_max, cfg.mu, int(ref))
    if not np.all(np.isfinite(x)):
        raise AdaptationError("objective is not finite: input contains inf or nan")
    target_r0 = float(np.sum(full_output(bank.g, x) ** 2))
    if target_r0 <= 0:
        raise DataError("reference channel is silent")

    with np.errstate(invalid="ignore", over="ignore"):
        state = correlation_state(bank.g, x, tau_max)
        current = objective(state.R_yy, weights)
    if not math.isfinite(current):
        raise AdaptationError("objective is not finite at initialization")
    trace = AdaptationTrace(initial_objective=current)
    mu = cfg.mu
    for it in range(1, cfg.max_iters + 1):
        if mu <= cfg.min_mu:
            break
        direction = normalized_gradient(cs_gradient(state, weights, dc, tau_max))
        if not np.any(direction):
            break
        with np.errstate(invalid="ignore", over="ignore"):
            g_new = _renormalize(bank.g - mu * direction, x, target_r0)
            new_state = correlation_state(g_new, x, tau_max)
            value = objective(new_state.R_yy, weights)
        if not math.isfinite(value):
            raise AdaptationError(f"objective became non-finite at iteration {it}")
        if value <= current:
            rel = (current - value) / current if current > 0 else 0.0
            bank.g, state, current = g_new, new_state, value
            trace.steps.append((it, value, mu, True))
            if rel < cfg.tol:
                break
        else:
            trace.steps.append((it, value, mu, False))
            mu *= 0.5
    bank.mu = mu
    log.debug("CS adaptation: %.4g -> %.4g over %d iterations",
              trace.initial_objective, current, len(trace.steps))
    return bank, trace


def cs_dereverb(audio: AudioBuffer, cfg: CsConfig = CsConfig()):
    """Adapt on per-channel LP residuals, then equalize the original channels.

    Returns ``(output, bank, trace)``.
    """
    order = cfg.order(audio.sample_rate)
    residuals = np.vstack([lp_residual(audio.channel(m), order)[0] for m in range(audio.channels)])
    bank, trace = cs_adapt(residuals, cfg, audio.sample_rate)
    y = miso_filter(bank, audio.samples)
    return AudioBuffer.mono(y, audio.sample_rate), bank, trace


def long_term_correlation(y, dont_care: int, tau_max: int) -> float:
    """``sum_{dont_care < tau <= tau_max} R(tau)**2 / R(0)**2`` (unweighted)."""
    r = autocorr(y, tau_max)
    if r[0] <= 0:
        return 0.0
    return float(np.sum(r[dont_care + 1:] ** 2) / r[0] ** 2)
