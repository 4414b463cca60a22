import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechfront.errors import ConfigError, DataError, FormatError
from speechfront.spectral import (
    LOG_FLOOR,
    MelFilterbank,
    Standardizer,
    deltas,
    frame_energy,
    get_window,
    istft,
    mel_backward,
    mel_energies,
    mel_filterbank,
    mel_forward,
    read_features,
    standardize,
    stft,
    unstandardize,
    write_features,
)


def smooth_spectra(rng, count, bins=513, order=6):
    """Positive spectra whose log is a low-order cosine series."""
    f = np.linspace(0, 1, bins)
    basis = np.cos(np.pi * np.outer(np.arange(order), f))
    return np.exp(rng.normal(0, 0.5, (count, order)) @ basis).T


class TestStft:
    def test_frame_count(self, rng):
        spec = stft(rng.normal(size=5000), 1024, 160)
        assert spec.frames == (5000 - 1024) // 160 + 1
        assert spec.bins == 513

    def test_bin_centred_sine_hann_lobe(self):
        # periodic Hann turns a bin-centred sine into exactly three nonzero bins
        # with relative weights 0.5, 1, 0.5; everything else is numerically zero
        n, k = 1024, 64
        x = np.sin(2 * np.pi * k * np.arange(8000) / n)
        mag = stft(x, n, 160).magnitude
        assert np.all(mag.argmax(axis=0) == k)
        np.testing.assert_allclose(mag[k - 1] / mag[k], 0.5, rtol=1e-9)
        np.testing.assert_allclose(mag[k + 1] / mag[k], 0.5, rtol=1e-9)
        outside = np.delete(mag, [k - 1, k, k + 1], axis=0)
        assert np.all(20 * np.log10(mag[k] / outside.max(axis=0)) >= 30.0)

    def test_zero_input(self):
        assert np.all(stft(np.zeros(2048), 1024, 160).magnitude == 0)

    def test_ten_ms_hop(self):
        spec = stft(np.zeros(16000), 1024, 160, sample_rate=16000)
        assert spec.hop / spec.sample_rate == pytest.approx(0.010)

    def test_too_short(self):
        with pytest.raises(DataError):
            stft(np.zeros(100), 1024, 160)

    @pytest.mark.parametrize("frame,hop", [(1000, 100), (1024, 0), (1024, 2048)])
    def test_bad_params(self, frame, hop):
        with pytest.raises(ConfigError):
            stft(np.zeros(4096), frame, hop)

    def test_parseval(self, rng):
        x = rng.normal(size=4000)
        spec = stft(x, 512, 128)
        w = get_window("hann", 512)
        frames = np.lib.stride_tricks.sliding_window_view(x, 512)[::128]
        np.testing.assert_allclose(frame_energy(spec), np.sum((frames * w) ** 2, axis=1),
                                   rtol=1e-9)


class TestIstft:
    @pytest.mark.parametrize("frame,hop", [(1024, 160), (512, 256), (256, 64)])
    def test_white_noise_roundtrip(self, rng, frame, hop):
        x = rng.normal(size=8000)
        y = istft(stft(x, frame, hop))
        interior = slice(frame, len(y) - frame)
        err = np.sqrt(np.mean((y[interior] - x[interior]) ** 2) / np.mean(x[interior] ** 2))
        assert err <= 1e-6

    def test_centered_roundtrip_full_length(self, rng):
        x = rng.normal(size=5001)
        y = istft(stft(x, 1024, 160, center=True))
        assert len(y) == len(x)
        np.testing.assert_allclose(y, x, atol=1e-9)

    def test_zero(self):
        assert np.all(istft(stft(np.zeros(3000), 512, 128)) == 0)

    def test_modified_magnitude_finite(self, rng):
        spec = stft(rng.normal(size=4000), 512, 128)
        mod = spec.with_values(rng.uniform(0, 3, spec.values.shape) * np.exp(1j * spec.phase))
        assert np.all(np.isfinite(istft(mod)))

    def test_non_cola(self):
        spec = stft(np.zeros(4096), 1024, 1024)
        with pytest.raises(ConfigError):
            istft(spec)


class TestMelFilterbank:
    def test_shape_and_rows(self):
        fb = mel_filterbank(40, 1024, 16000)
        assert fb.matrix.shape == (40, 513)
        assert fb.inverse.shape == (513, 40)
        assert np.all(fb.matrix.max(axis=1) > 0)
        assert np.all(fb.matrix >= 0)

    def test_cached(self):
        assert mel_filterbank(40, 1024, 16000) is mel_filterbank(40, 1024, 16000)

    def test_centres_equally_spaced_on_mel(self):
        from speechfront.spectral import hz_to_mel
        fb = mel_filterbank(40, 1024, 16000)
        peaks = np.argmax(fb.matrix, axis=1) * 16000 / 1024
        spacing = np.diff(hz_to_mel(peaks))
        # peaks are quantised to bins, so allow one bin of slack in Hz
        assert peaks[0] == 0 and peaks[-1] == 8000
        assert spacing.std() < 15

    def test_rejects_empty_row(self):
        with pytest.raises(ConfigError):
            MelFilterbank.from_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestMelForward:
    def test_dimensions(self, rng):
        out = mel_forward(rng.uniform(size=(513, 7)), mel_filterbank())
        assert out.log_energies.shape == (40, 7)
        assert out.stacked().shape == (80, 7)

    def test_zero_is_floor(self):
        out = mel_forward(np.zeros((513, 3)), mel_filterbank())
        np.testing.assert_array_equal(out.log_energies, np.log(LOG_FLOOR))

    def test_log_homogeneity(self, rng):
        fb = mel_filterbank()
        x = rng.uniform(0.1, 1.0, (513, 4))
        a = mel_forward(x, fb).log_energies
        b = mel_forward(3.5 * x, fb).log_energies
        np.testing.assert_allclose(b - a, np.log(3.5), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 512), st.floats(0.0, 10.0), st.integers(0, 2**32 - 1))
    def test_monotone(self, bin_index, bump, seed):
        fb = mel_filterbank()
        x = np.random.default_rng(seed).uniform(size=(513, 1))
        y = x.copy()
        y[bin_index] += bump
        assert np.all(mel_energies(y, fb) >= mel_energies(x, fb))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            mel_forward(-np.ones((513, 1)), mel_filterbank())


class TestMelBackward:
    def test_smooth_roundtrip_bound(self):
        # observed at seed 0 over 500 spectra: mean 0.011, max 0.054
        fb = mel_filterbank()
        x = smooth_spectra(np.random.default_rng(0), 500)
        r = mel_backward(fb.matrix @ x, fb)
        err = np.linalg.norm(r - x, axis=0) / np.linalg.norm(x, axis=0)
        assert err.max() <= 0.15
        assert err.max() <= 0.06

    def test_zero(self):
        assert np.all(mel_backward(np.zeros((40, 3)), mel_filterbank()) == 0)

    def test_identity_filterbank(self, rng):
        fb = MelFilterbank.from_matrix(np.eye(9))
        x = rng.uniform(size=(9, 4))
        np.testing.assert_allclose(mel_backward(fb.matrix @ x, fb), x, atol=1e-14)

    def test_nonnegative(self, rng):
        out = mel_backward(rng.uniform(0, 1, (40, 20)) ** 4, mel_filterbank())
        assert np.all(out >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mel_backward(np.zeros((39, 2)), mel_filterbank())


class TestDeltas:
    def test_constant(self):
        assert np.all(deltas(np.full((3, 10), 4.2)) == 0)

    def test_ramp_interior(self):
        t = np.arange(20.0)
        d = deltas(0.7 * t[None, :])
        np.testing.assert_allclose(d[0, 2:-2], 0.7, atol=1e-12)

    def test_single_frame(self):
        assert np.all(deltas(np.ones((5, 1))) == 0)


class TestStandardize:
    def test_fit_gives_zero_mean_unit_var(self, rng):
        x = rng.normal(3.0, 2.0, (6, 400))
        stats = Standardizer.fit(x)
        z = standardize(x, stats)
        np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(z.var(axis=1), 1.0, atol=1e-6)

    def test_identity_stats(self, rng):
        x = rng.normal(size=(4, 10))
        np.testing.assert_array_equal(standardize(x, Standardizer.identity(4)), x)

    def test_inverse(self, rng):
        x = rng.normal(size=(4, 10))
        stats = Standardizer(rng.normal(size=4), rng.uniform(0.5, 2, 4))
        np.testing.assert_allclose(unstandardize(standardize(x, stats), stats), x, atol=1e-12)

    def test_zero_std_passes_through(self):
        x = np.vstack([np.full(5, 2.0), np.arange(5.0)])
        z = standardize(x, Standardizer.fit(x))
        np.testing.assert_array_equal(z[0], 0.0)


class TestFeatureDump:
    def test_roundtrip(self, tmp_path, rng):
        m = rng.normal(size=(40, 13))
        meta = {"frame_size": 1024, "hop": 160, "sample_rate": 16000, "B": 40}
        write_features(tmp_path / "f.bin", m, meta)
        raw = (tmp_path / "f.bin").read_bytes()
        assert int.from_bytes(raw[:8], "little") == 40
        back, meta2 = read_features(tmp_path / "f.bin")
        np.testing.assert_array_equal(back, m)
        assert meta2 == meta

    def test_truncated(self, tmp_path):
        (tmp_path / "t.bin").write_bytes(b"\x02\x00\x00\x00\x00\x00\x00\x00" * 2 + b"\x00" * 8)
        with pytest.raises(FormatError):
            read_features(tmp_path / "t.bin")
