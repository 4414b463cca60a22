"""Command-line entry point: ``speechfront <command> ...``.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioBuffer, read_wav, write_wav
from .errors import ConfigError, DataError, SpeechFrontError

log = logging.getLogger("speechfront")


def _read_audio(path) -> AudioBuffer:
    audio = read_wav(path)
    if audio.sample_rate != DEFAULT_SAMPLE_RATE:
        log.warning("%s is sampled at %d Hz; defaults assume %d Hz", path, audio.sample_rate,
                    DEFAULT_SAMPLE_RATE)
    return audio


def _write_audio(audio, path, args):
    write_wav(audio, path, encoding=args.encoding)


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def cmd_enhance(args):
    from .sse import EnhancementModel, enhance

    model = EnhancementModel.load(args.model)
    _write_audio(enhance(model, _read_audio(args.inp), args.channel), args.out, args)


def _paired_files(clean_dir, noise_dir):
    clean = {p.name: p for p in sorted(Path(clean_dir).glob("*.wav"))}
    noise = {p.name: p for p in sorted(Path(noise_dir).glob("*.wav"))}
    common = sorted(set(clean) & set(noise))
    if not common:
        raise DataError(f"no matching wav names in {clean_dir} and {noise_dir}")
    missing = sorted(set(clean) ^ set(noise))
    if missing:
        log.warning("ignoring %d unpaired files, e.g. %s", len(missing), missing[0])
    return [(clean[n], noise[n]) for n in common]


def cmd_train_sse(args):
    from .neural.training import TrainConfig
    from .sse import FeatureConfig, train_sse

    cfg = _load_json(args.config)
    unknown = set(cfg) - {"train", "hidden", "features", "valid_fraction", "seed"}
    if unknown:
        raise ConfigError(f"unknown train-sse options: {sorted(unknown)}")
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    try:
        features = FeatureConfig(**cfg.get("features", {}))
    except TypeError as exc:
        raise ConfigError(f"features: {exc}") from exc
    hidden = [tuple(h) for h in cfg["hidden"]] if "hidden" in cfg else None
    seed = int(cfg.get("seed", args.seed))

    pairs = []
    for c, n in _paired_files(args.clean_dir, args.noise_dir):
        clean, noise = read_wav(c), read_wav(n)
        if clean.sample_rate != features.sample_rate or noise.sample_rate != features.sample_rate:
            raise DataError(f"{c.name}: expected {features.sample_rate} Hz audio")
        pairs.append((clean.channel(0), noise.channel(0)))
    n_valid = int(round(float(cfg.get("valid_fraction", 0.1)) * len(pairs)))
    order = np.random.default_rng(seed).permutation(len(pairs))
    valid = [pairs[i] for i in sorted(order[:n_valid])]
    train = [pairs[i] for i in sorted(order[n_valid:])]
    model, report = train_sse(train, valid, hidden, train_cfg, features, seed)
    model.save(args.out_model, {"train_pairs": len(train), "valid_pairs": len(valid),
                                "speech_best_epoch": report.speech.best_epoch,
                                "noise_best_epoch": report.noise.best_epoch})
    print(f"speech net: best epoch {report.speech.best_epoch}, "
          f"valid cost {min(report.speech.valid_costs):.6g}")
    print(f"noise net: best epoch {report.noise.best_epoch}, "
          f"valid cost {min(report.noise.valid_costs):.6g}")


def cmd_dereverb_pef(args):
    from .pef import PefConfig, pef_dereverb

    m = None if args.m == "auto" else float(args.m)
    cfg = PefConfig(gamma=args.gamma, m=m, frame_size=args.frame, hop_ms=args.hop_ms,
                    omega_max=args.omega_max, normalize_output=not args.no_normalize,
                    estimate_tdoa=args.estimate_tdoa, max_lag=args.max_lag)
    _write_audio(pef_dereverb(_read_audio(args.inp), cfg), args.out, args)


def cmd_dereverb_cs(args):
    from .cs import CsConfig, cs_dereverb

    cfg = CsConfig(eq_ms=args.eq_ms, dontcare_ms=args.dontcare_ms, taumax_ms=args.taumax_ms,
                   mu=args.mu, max_iters=args.iters, tol=args.tol, lp_order=args.lp_order,
                   reference="max-energy" if args.reference == "max-energy" else int(args.reference))
    out, _, trace = cs_dereverb(_read_audio(args.inp), cfg)
    _write_audio(out, args.out, args)
    if args.dump_trace:
        Path(args.dump_trace).write_text(trace.to_csv(), encoding="utf-8")
    objs = trace.accepted_objectives
    print(f"objective {objs[0]:.6g} -> {objs[-1]:.6g} after {len(trace.steps)} iterations")


def cmd_train_lm(args):
    from .lm import Vocabulary, lm_train_config, read_corpus, train_lm

    corpus = read_corpus(args.corpus)
    valid = read_corpus(args.valid) if args.valid else None
    vocab = Vocabulary.build(corpus, max_size=args.vocab_size)
    cfg = lm_train_config(learning_rate=args.lr, max_epochs=args.epochs,
                          batch_sequences=args.batch, rng_seed=args.seed)
    model, report = train_lm(corpus, vocab, cfg, valid, hidden=args.hidden, seed=args.seed)
    model.save(args.out, {"valid_perplexity": report.valid_perplexity})
    for epoch, ppl in enumerate(report.valid_perplexity):
        print(f"epoch {epoch}: valid perplexity {ppl:.4f}")


def cmd_select_data(args):
    from .lm import read_corpus, select_data, write_corpus

    train = read_corpus(args.train)
    sel = select_data(train, read_corpus(args.dev), args.top_k, order=args.order, k=args.k)
    write_corpus(args.out, sel.subset(train))
    if args.scores:
        with open(args.scores, "w", encoding="utf-8") as fh:
            for i in sel.ranking:
                fh.write(f"{i}\t{sel.perplexities[i]!r}\n")
    print(f"selected {len(sel.indices)} of {len(train)} sentences")


def cmd_rescore(args):
    from .lm import (InterpolatedLm, LstmLm, format_nbest, optimize_lambda, read_arpa,
                     read_corpus, read_nbest, rescore_all)

    if not args.arpa and not args.lstm:
        raise ConfigError("rescore needs --arpa and/or --lstm")
    lstm = LstmLm.load(args.lstm) if args.lstm else None
    ngram = read_arpa(args.arpa) if args.arpa else None
    lam = args.lam
    if args.tune_on:
        if lstm is None or ngram is None:
            raise ConfigError("--tune-on needs both --arpa and --lstm")
        dev = read_corpus(args.tune_on)
        p_lstm = np.concatenate([np.exp(lstm.word_log_probs(s)) for s in dev])
        p_ng = np.concatenate([10.0 ** np.array(ngram.word_log10_probs(s)) for s in dev])
        lam, table = optimize_lambda(p_lstm, p_ng)
        print(f"lambda {lam} (dev perplexity {table[lam]:.4f})")
    if lam is None:
        lam = 0.5 if lstm is not None and ngram is not None else (1.0 if lstm is not None else 0.0)
    try:
        lm = InterpolatedLm(lstm, ngram, lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ranked = rescore_all(read_nbest(args.nbest), lm, args.lm_scale, args.word_penalty)
    Path(args.out).write_text(format_nbest(ranked), encoding="utf-8")
    if args.onebest:
        with open(args.onebest, "w", encoding="utf-8") as fh:
            for utt, hyps in ranked.items():
                fh.write(" ".join([utt, *hyps[0].words]) + "\n")


def cmd_synth(args):
    from .harness import SceneSpec, synthesize_scene

    spec = _load_json(args.scene)
    for key in ("source", "noise", "snr_db", "t60", "channels", "seed", "duration"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    if args.delays is not None:
        spec["direct_delay"] = [int(d) for d in args.delays.split(",")]
    scene = SceneSpec.from_dict(spec)
    mixture, oracle = synthesize_scene(scene)
    write_wav(mixture, args.out, encoding="float32")
    if args.oracle_dir:
        d = Path(args.oracle_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_wav(AudioBuffer.mono(oracle.clean, scene.sample_rate), d / "clean.wav", "float32")
        write_wav(AudioBuffer(oracle.reverberant, scene.sample_rate), d / "reverberant.wav", "float32")
        write_wav(AudioBuffer(oracle.noise, scene.sample_rate), d / "noise.wav", "float32")


def cmd_eval(args):
    from .harness import measure, write_metrics

    audio = _read_audio(args.inp)
    clean = read_wav(args.clean).channel(0) if args.clean else None
    report = measure(audio, clean, args.stage, lag=args.lag)
    write_metrics([report], args.csv, args.json)
    print(json.dumps(report.row()))


def cmd_pipeline(args):
    from .harness import PipelineConfig, run_pipeline

    result = run_pipeline(PipelineConfig.load(args.config))
    for r in result.reports:
        print(json.dumps(r.row()))


def _optional_float(text):
    return None if text in ("none", "None", "inf") else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="speechfront", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def audio_io(sp):
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--encoding", choices=["pcm16", "float32"], default="pcm16")

    sp = sub.add_parser("enhance", help="single-channel enhancement with a trained model")
    audio_io(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--channel", type=int, default=None)
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("train-sse", help="train the speech and noise networks")
    sp.add_argument("--clean-dir", required=True)
    sp.add_argument("--noise-dir", required=True)
    sp.add_argument("--out-model", required=True)
    sp.add_argument("--config", help="JSON with train/hidden/features/valid_fraction/seed")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_sse)

    sp = sub.add_parser("dereverb-pef", help="phase-error based multichannel filtering")
    audio_io(sp)
    sp.add_argument("--gamma", type=float, default=0.01)
    sp.add_argument("--m", default="auto")
    sp.add_argument("--frame", type=int, default=1024)
    sp.add_argument("--hop-ms", type=float, default=10.0)
    sp.add_argument("--omega-max", type=int, default=None)
    sp.add_argument("--no-normalize", action="store_true")
    sp.add_argument("--estimate-tdoa", action="store_true")
    sp.add_argument("--max-lag", type=int, default=64)
    sp.set_defaults(func=cmd_dereverb_pef)

    sp = sub.add_parser("dereverb-cs", help="correlation shaping on LP residuals")
    audio_io(sp)
    sp.add_argument("--eq-ms", type=float, default=62.5)
    sp.add_argument("--dontcare-ms", type=float, default=18.7)
    sp.add_argument("--taumax-ms", type=float, default=62.5)
    sp.add_argument("--mu", type=float, default=5e-3)
    sp.add_argument("--iters", type=int, default=500)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--lp-order", type=int, default=None)
    sp.add_argument("--reference", default="0", help="channel index or 'max-energy'")
    sp.add_argument("--dump-trace")
    sp.set_defaults(func=cmd_dereverb_cs)

    sp = sub.add_parser("train-lm", help="train an LSTM language model")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--valid")
    sp.add_argument("--out", required=True)
    sp.add_argument("--hidden", type=int, default=300)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--batch", type=int, default=10)
    sp.add_argument("--vocab-size", type=int, default=5000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_lm)

    sp = sub.add_parser("select-data", help="perplexity-based data selection")
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--top-k", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--order", type=int, default=5)
    sp.add_argument("--k", type=float, default=0.1)
    sp.add_argument("--scores", help="write 'index<TAB>perplexity' in rank order")
    sp.set_defaults(func=cmd_select_data)

    sp = sub.add_parser("rescore", help="N-best rescoring with interpolated LMs")
    sp.add_argument("--nbest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--arpa")
    sp.add_argument("--lstm")
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--tune-on", help="dev corpus for the lambda grid search")
    sp.add_argument("--lm-scale", type=float, default=1.0)
    sp.add_argument("--word-penalty", type=float, default=0.0)
    sp.add_argument("--onebest")
    sp.set_defaults(func=cmd_rescore)

    sp = sub.add_parser("synth", help="synthesize a reverberant noisy scene")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scene", help="JSON scene description; flags override it")
    sp.add_argument("--source")
    sp.add_argument("--noise")
    sp.add_argument("--snr-db", dest="snr_db", type=_optional_float)
    sp.add_argument("--t60", type=float)
    sp.add_argument("--channels", type=int)
    sp.add_argument("--delays", help="comma-separated direct-path delays per channel")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--duration", type=float)
    sp.add_argument("--oracle-dir", help="also write clean/reverberant/noise components")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="objective metrics against a clean reference")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--clean")
    sp.add_argument("--stage", default="output")
    sp.add_argument("--lag", type=int, default=None, help="known delay; searched when omitted")
    sp.add_argument("--csv")
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pipeline", help="run stages from a JSON config")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except SpeechFrontError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
