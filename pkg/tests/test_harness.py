import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechfront.audio import AudioBuffer, read_wav, write_wav
from speechfront.cs import CsConfig
from speechfront.errors import ConfigError, DataError
from speechfront.harness import (
    PipelineConfig,
    SceneSpec,
    align,
    exponential_rir,
    fit_t60,
    measure,
    run_pipeline,
    sdr_db,
    snr_db,
    synthesize_scene,
    write_metrics,
)
from speechfront.lm import LstmLm, Vocabulary
from speechfront.sse import EnhancementModel
from test_sse import constant_net


class TestScene:
    def test_noiseless_dry_is_identity(self):
        mix, oracle = synthesize_scene(SceneSpec(snr_db=None, channels=2, seed=1))
        np.testing.assert_array_equal(mix.samples[0], oracle.clean)
        np.testing.assert_array_equal(mix.samples[1], oracle.clean)
        assert not np.any(oracle.noise)

    @pytest.mark.parametrize("target", [-5.0, 0.0, 10.0])
    def test_snr_scaling(self, target):
        mix, oracle = synthesize_scene(SceneSpec(snr_db=target, t60=0.2, channels=2, seed=3))
        measured = 10 * np.log10(np.sum(oracle.reverberant**2) / np.sum(oracle.noise**2))
        assert abs(measured - target) <= 0.01
        np.testing.assert_allclose(mix.samples, oracle.reverberant + oracle.noise)

    @pytest.mark.parametrize("seed", range(3))
    def test_rir_t60(self, seed):
        h = exponential_rir(np.random.default_rng(seed), 0.3, 16000, direct_delay=5)
        assert h[5] == 1.0 and not np.any(h[:5])
        assert abs(fit_t60(h, 16000, direct_delay=5) - 0.3) <= 0.015

    def test_direct_delay(self):
        mix, oracle = synthesize_scene(SceneSpec(snr_db=None, channels=2, direct_delay=[0, 7]))
        np.testing.assert_allclose(mix.samples[1, 7:], oracle.clean[:-7], atol=1e-12)

    def test_deterministic(self):
        spec = SceneSpec(noise="pink", t60=0.25, channels=3, seed=9)
        a, _ = synthesize_scene(spec)
        b, _ = synthesize_scene(spec)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_bad_specs(self):
        with pytest.raises(ConfigError):
            SceneSpec.from_dict({"colour": "blue"})
        with pytest.raises(ConfigError):
            SceneSpec(channels=2, direct_delay=[0])
        with pytest.raises(ConfigError):
            synthesize_scene(SceneSpec(source="no/such/file.wav"))

    def test_wav_source(self, tmp_path, rng):
        x = rng.normal(size=4000) * 0.1
        write_wav(AudioBuffer.mono(x, 16000), tmp_path / "s.wav", "float32")
        mix, oracle = synthesize_scene(SceneSpec(source=str(tmp_path / "s.wav"), snr_db=None))
        np.testing.assert_allclose(oracle.clean, x, atol=1e-7)
        assert len(mix) == 4000


class TestMetrics:
    def test_identity_caps(self, rng):
        x = rng.normal(size=1000)
        assert snr_db(x, x) == 99.0
        assert sdr_db(x, x) == 99.0
        assert sdr_db(x, 3 * x) == 99.0

    def test_noise_only_sdr(self, rng):
        x = rng.normal(size=4000)
        assert sdr_db(x, rng.normal(size=4000)) <= 0

    def test_doubling_error(self, rng):
        x, e = rng.normal(size=2000), rng.normal(size=2000)
        np.testing.assert_allclose(snr_db(x, x + e) - snr_db(x, x + 2 * e), 20 * np.log10(2), atol=1e-9)

    def test_zero_reference(self):
        with pytest.raises(DataError):
            sdr_db(np.zeros(10), np.ones(10))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100), st.integers(0, 2**31))
    def test_sdr_scale_invariant(self, scale, seed):
        r = np.random.default_rng(seed)
        x, e = r.normal(size=256), r.normal(size=256)
        np.testing.assert_allclose(sdr_db(x, scale * (x + 0.3 * e)), sdr_db(x, x + 0.3 * e), atol=1e-9)

    def test_white_noise_long_term_correlation(self):
        _, dc, tau_max = CsConfig().samples(16000)
        n = 16000
        expected = sum((n - t) / n**2 for t in range(dc + 1, tau_max + 1))
        vals = [measure(np.random.default_rng(s).normal(size=n)).long_term_corr_energy for s in range(20)]
        # analytic expectation 0.0420
        assert abs(np.mean(vals) - expected) <= 0.15 * expected
        assert max(vals) < 0.06

    def test_report_without_reference(self, rng):
        rep = measure(rng.normal(size=4000), stage="x")
        assert rep.snr_db is None and rep.sdr_db is None

    def test_write_metrics(self, tmp_path, rng):
        x = rng.normal(size=4000)
        reps = [measure(x, x, "a"), measure(x + rng.normal(size=4000), x, "b")]
        write_metrics(reps, tmp_path / "m.csv", tmp_path / "m.json")
        rows = json.loads((tmp_path / "m.json").read_text())
        assert [r["stage"] for r in rows] == ["a", "b"]
        assert (tmp_path / "m.csv").read_text().splitlines()[0].startswith("stage,")


class TestAlign:
    @pytest.mark.parametrize("lag", [-300, -1, 0, 17, 1000])
    def test_recovers_lag(self, rng, lag):
        ref = rng.normal(size=5000)
        est = np.roll(ref, lag)
        out, found = align(est, ref)
        assert found == lag
        sl = slice(max(0, -lag), 5000 - max(0, lag))
        np.testing.assert_array_equal(out[sl], ref[sl])

    def test_known_lag(self, rng):
        ref = rng.normal(size=3000)
        out, found = align(np.roll(ref, 40), ref, lag=40)
        assert found == 40
        np.testing.assert_array_equal(out[:2960], ref[:2960])

    def test_length_mismatch(self, rng):
        with pytest.raises(DataError):
            align(rng.normal(size=100), rng.normal(size=2000), max_lag=50)


def pass_through_checkpoint(path):
    EnhancementModel(constant_net(0.0), constant_net(-1e3)).save(path)
    return str(path)


SMALL_CS = {"eq_ms": 2.0, "dontcare_ms": 1.0, "taumax_ms": 4.0, "max_iters": 20, "lp_order": 8}


class TestPipeline:
    def test_no_stages_measures_input(self, tmp_path):
        res = run_pipeline({"output_dir": str(tmp_path), "scene": {"snr_db": None}})
        [rep] = res.reports
        assert rep.stage == "input" and rep.snr_db == 99.0
        assert (tmp_path / "metrics.csv").exists() and (tmp_path / "input.wav").exists()

    def test_pef_identical_channels(self, tmp_path):
        scene = {"snr_db": None, "channels": 3, "seed": 2, "duration": 0.5}
        res = run_pipeline({"output_dir": str(tmp_path), "scene": scene, "stages": ["pef"]})
        out = read_wav(res.outputs["pef"]).channel(0)
        clean = synthesize_scene(SceneSpec.from_dict(scene))[1].clean
        # zero phase error everywhere: each mask is 0.5 ** ((M - 1) / m) with m = M
        interior = slice(2048, len(clean) - 2048)
        np.testing.assert_allclose(out[interior], 0.5 ** (2 / 3) * clean[interior], atol=1e-7)
        assert [r.stage for r in res.reports] == ["input", "pef"]

    def test_sse_and_cs(self, tmp_path):
        pass_through_checkpoint(tmp_path / "model")
        cfg = {"output_dir": "out", "scene": {"t60": 0.1, "snr_db": 20, "duration": 0.3},
               "stages": ["sse", "cs"], "sse": {"model": "model"}, "cs": SMALL_CS}
        (tmp_path / "p.json").write_text(json.dumps(cfg))
        res = run_pipeline(str(tmp_path / "p.json"))
        assert [r.stage for r in res.reports] == ["input", "sse", "cs"]
        rows = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert len(rows) == 3
        assert (tmp_path / "out" / "cs_trace.csv").read_text().startswith("iteration,")
        # pass-through enhancement leaves the input intact
        assert abs(res.reports[1].snr_db - res.reports[0].snr_db) < 0.01

    def test_config_errors_before_processing(self, tmp_path):
        out = tmp_path / "never"
        bad = [
            {"output_dir": str(out), "scene": {}, "stages": ["wiener"]},
            {"output_dir": str(out), "scene": {}, "stages": ["sse"]},
            {"output_dir": str(out), "scene": {}, "stages": ["cs"], "cs": {"bogus": 1}},
            {"output_dir": str(out), "stages": ["pef"]},
            {"output_dir": str(out), "scene": {}, "stages": ["rescore"], "rescore": {}},
            {"scene": {}},
            {"output_dir": str(out), "scene": {"snr": 3}},
            {"output_dir": str(out), "scene": {}, "sse": {"modle": "x"}},
        ]
        for cfg in bad:
            with pytest.raises(ConfigError):
                run_pipeline(cfg)
        assert not out.exists()

    def test_load_errors(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "bad.json")
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "missing.json")

    def test_rescore_stage(self, tmp_path):
        (tmp_path / "n.nbest").write_text("u1 1 -10 0 a b\nu1 2 -9 0 b a\n")
        LstmLm.zeros(Vocabulary(["a", "b"])).save(tmp_path / "lm")
        cfg = {"output_dir": str(tmp_path / "o"), "stages": ["rescore"],
               "rescore": {"nbest": str(tmp_path / "n.nbest"), "lstm": str(tmp_path / "lm")}}
        res = run_pipeline(cfg)
        assert res.reports == []
        assert (tmp_path / "o" / "onebest.txt").read_text().split()[0] == "u1"

    def test_deterministic(self, tmp_path):
        scene = {"t60": 0.1, "snr_db": 10, "channels": 2, "direct_delay": [0, 3], "duration": 0.3}
        for name in ("a", "b"):
            run_pipeline({"output_dir": str(tmp_path / name), "scene": scene,
                          "stages": ["pef", "cs"], "cs": SMALL_CS})
        for f in ("input.wav", "pef.wav", "cs.wav", "metrics.csv", "cs_trace.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
