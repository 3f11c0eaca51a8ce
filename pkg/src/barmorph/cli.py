"""Operator command line: every pipeline stage behind one entry point.

Subcommands: tokenize, attrs, synth-corpus, ingest, train, transfer,
evaluate, serve.  Every command honors --seed; errors exit nonzero with a
one-line diagnostic on stderr; usage errors exit 2 (argparse).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .attributes import attributes_from_text, attributes_to_text, score_attributes
from .corpus import generate_synthetic, ingest, load_corpus, save_corpus
from .decode import SamplingConfig, apply_overrides, style_transfer
from .evaluate import EvalConfig, evaluation_report, run_setting1, run_setting2
from .midi_io import parse_midi, quantize, write_midi
from .optim import LrConfig
from .remi import TokenSeq, bar_slices, build_vocab, detokenize, tokenize, tokens_from_text, tokens_to_text
from .study import StudyConfig, train_conditioned_lm
from .transformer import ModelConfig
from .vae import StyleVae, TrainConfig, load_style_vae, save_style_vae, train_vae


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")


def cmd_tokenize(args) -> int:
    vocab = build_vocab(args.sub_beats)
    if args.reverse:
        tokens = tokens_from_text(Path(args.input).read_text(), vocab)
        q, skipped = detokenize(TokenSeq(tokens, bar_slices(tokens, vocab)), vocab)
        Path(args.output).write_bytes(write_midi(q))
        if skipped:
            print(f"skipped {skipped} malformed fragments", file=sys.stderr)
    else:
        q = quantize(parse_midi(Path(args.input).read_bytes()), args.sub_beats)
        seq = tokenize(q, vocab)
        Path(args.output).write_text(tokens_to_text(seq.tokens, vocab))
    return 0


def cmd_attrs(args) -> int:
    vocab = build_vocab(args.sub_beats)
    q = quantize(parse_midi(Path(args.input).read_bytes()), args.sub_beats)
    if args.ckpt:
        _, bins, _, _ = load_style_vae(args.ckpt)
    else:
        from .attributes import reference_bins

        bins = reference_bins()
    text = attributes_to_text(score_attributes(q, bins))
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    return 0


def cmd_synth_corpus(args) -> int:
    vocab = build_vocab(args.sub_beats)
    corpus = generate_synthetic(args.pieces, args.bars, args.seed, vocab)
    save_corpus(corpus, args.output, vocab)
    print(f"wrote {len(corpus.pieces)} pieces to {args.output}")
    return 0


def cmd_ingest(args) -> int:
    vocab = build_vocab(args.sub_beats)
    corpus = ingest(args.input, args.seed, vocab)
    save_corpus(corpus, args.output, vocab)
    print(f"ingested {len(corpus.pieces)} pieces, skipped {len(corpus.skipped)}")
    for line in corpus.skipped:
        print(f"  skipped {line}", file=sys.stderr)
    return 0


def _model_config(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        n_layers_enc=args.layers, n_layers_dec=args.layers, n_heads=args.heads,
        d=args.d, d_e=args.d, d_ff=args.d_ff, d_z=args.d_z, d_a=args.d_a,
        d_c=args.d_z + 2 * args.d_a, max_t=args.t_max, max_k=args.max_k,
        mode=args.mode,
    )


def cmd_train(args) -> int:
    vocab = build_vocab(args.sub_beats)
    corpus = load_corpus(args.corpus, vocab)
    samples = corpus.samples("train")
    if not samples:
        print("corpus has no training pieces", file=sys.stderr)
        return 1
    tc = TrainConfig(
        beta_max=args.beta_max, cycle_steps=args.cycle_steps,
        kl_free_steps=args.kl_free_steps, free_bits=args.free_bits,
        k_crop=args.k_crop, t_max=args.t_max, batch_size=args.batch_size,
        transpose_range=args.transpose, steps=args.steps, seed=args.seed,
        lr=LrConfig(peak=args.lr_peak, floor=args.lr_floor,
                    warmup_steps=args.lr_warmup, decay_steps=args.lr_decay),
    )
    if args.config:
        tc = TrainConfig.from_text(Path(args.config).read_text())
    model = StyleVae(_model_config(args, len(vocab)), np.random.default_rng(args.seed))
    pitch_range = (vocab.id_of("Pitch_22"), vocab.id_of("Pitch_107"))
    adam = train_vae(
        model, samples, tc, vocab.pad_id, vocab.bos_id, vocab.eos_id, pitch_range,
        log_path=args.log, progress=not args.quiet,
    )
    save_style_vae(args.output, model, corpus.bins, step=tc.steps, adam=adam,
                   train_k_crop=tc.k_crop)
    print(f"saved checkpoint to {args.output}")
    return 0


def cmd_transfer(args) -> int:
    model, bins, _, _ = load_style_vae(args.ckpt)
    vocab = build_vocab(args.sub_beats)
    if len(vocab) != model.cfg.vocab_size:
        print(f"checkpoint vocab size {model.cfg.vocab_size} != {len(vocab)}",
              file=sys.stderr)
        return 1
    q = quantize(parse_midi(Path(args.input).read_bytes()), args.sub_beats)
    seq = tokenize(q, vocab)
    attrs = score_attributes(q, bins)
    if args.attrs_file:
        rows = attributes_from_text(Path(args.attrs_file).read_text())
        if len(rows) != seq.n_bars:
            print(f"attrs file has {len(rows)} rows for {seq.n_bars} bars",
                  file=sys.stderr)
            return 1
        a_rhym = [r.a_rhym for r in rows]
        a_poly = [r.a_poly for r in rows]
    else:
        a_rhym = apply_overrides([a.a_rhym for a in attrs], args.rhym)
        a_poly = apply_overrides([a.a_poly for a in attrs], args.poly)
    sampling = SamplingConfig(p=args.top_p, tau=args.temperature, seed=args.seed,
                              max_tokens_per_bar=args.bar_cap)
    res = style_transfer(model, vocab, seq, a_rhym, a_poly, sampling,
                         window_bars=args.window)
    gen_q, _ = detokenize(res.seq, vocab)
    Path(args.output).write_bytes(write_midi(gen_q))
    if args.tokens_out:
        Path(args.tokens_out).write_text(tokens_to_text(res.seq.tokens, vocab))
    if res.truncated_bars:
        print(f"truncated bars: {res.truncated_bars}", file=sys.stderr)
    print(f"wrote {gen_q.n_bars}-bar transfer to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    model, bins, _, _ = load_style_vae(args.ckpt)
    vocab = build_vocab(args.sub_beats)
    corpus = load_corpus(args.corpus, vocab)
    pieces = corpus.of_split("test") or corpus.of_split("valid")
    if not pieces:
        print("corpus has no held-out pieces", file=sys.stderr)
        return 1
    cfg = EvalConfig(
        n_excerpts=args.excerpts, n_attr_sets=args.attr_sets,
        n_repeats=args.repeats, window_bars=args.window, seed=args.seed,
        sampling=SamplingConfig(p=args.top_p, tau=args.temperature,
                                max_tokens_per_bar=args.bar_cap),
    )
    fluency_lm = None
    if args.fluency_steps > 0:
        study = StudyConfig(decoder_steps=args.fluency_steps, seed=args.seed,
                            k_crop=args.window, t_max=model.cfg.max_t)
        lm_cfg = ModelConfig(
            vocab_size=len(vocab), n_layers_dec=model.cfg.n_layers_dec,
            n_heads=model.cfg.n_heads, d=model.cfg.d, d_e=model.cfg.d_e,
            d_ff=model.cfg.d_ff, max_t=model.cfg.max_t, mode="unconditional",
        )
        fluency_lm = train_conditioned_lm(
            lm_cfg, corpus.samples("train"), None, vocab, study,
            progress=not args.quiet,
        )
    s1 = s2 = None
    if args.setting in (1, 0):
        s1 = run_setting1(model, vocab, pieces, cfg, fluency_lm=fluency_lm)
    if args.setting in (2, 0):
        s2 = run_setting2(model, vocab, pieces, cfg)
    report = evaluation_report(s1, s2, header=f"checkpoint={args.ckpt}")
    if args.output:
        Path(args.output).write_text(report)
    print(report, end="")
    return 0


def cmd_serve(args) -> int:
    from .service import serve_forever

    serve_forever(args.store, args.ckpt, args.host, args.port, args.workers)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barmorph",
                                     description="bar-level music style transfer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="MIDI <-> token text")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--reverse", action="store_true", help="tokens -> MIDI")
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    _add_seed(p)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("attrs", help="per-bar attribute table of a MIDI file")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--ckpt", help="use this checkpoint's attribute bins")
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    _add_seed(p)
    p.set_defaults(fn=cmd_attrs)

    p = sub.add_parser("synth-corpus", help="generate a synthetic corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--pieces", type=int, default=200)
    p.add_argument("--bars", type=int, default=16)
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    _add_seed(p)
    p.set_defaults(fn=cmd_synth_corpus)

    p = sub.add_parser("ingest", help="build a corpus from a MIDI folder")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    _add_seed(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train the style-transfer model")
    p.add_argument("--corpus", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint directory")
    p.add_argument("--config", help="key=value training-config file (overrides flags)")
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--d-z", type=int, default=16)
    p.add_argument("--d-a", type=int, default=16)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mode", default="in_attention",
                   choices=("in_attention", "pre_attention", "post_attention", "memory"))
    p.add_argument("--k-crop", type=int, default=4)
    p.add_argument("--max-k", type=int, default=128)
    p.add_argument("--t-max", type=int, default=160)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--transpose", type=int, default=6)
    p.add_argument("--beta-max", type=float, default=1.0)
    p.add_argument("--cycle-steps", type=int, default=5000)
    p.add_argument("--kl-free-steps", type=int, default=10_000)
    p.add_argument("--free-bits", type=float, default=0.25)
    p.add_argument("--lr-peak", type=float, default=1e-4)
    p.add_argument("--lr-floor", type=float, default=5e-6)
    p.add_argument("--lr-warmup", type=int, default=200)
    p.add_argument("--lr-decay", type=int, default=200_000)
    p.add_argument("--log", help="append-only training log path")
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    p.add_argument("--quiet", action="store_true")
    _add_seed(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transfer", help="style-transfer a MIDI file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rhym", help='override like "+2", "-1", "=5"')
    p.add_argument("--poly", help='override like "+2", "-1", "=5"')
    p.add_argument("--attrs-file", help="per-bar absolute classes (attribute CSV)")
    p.add_argument("--window", type=int, default=4, help="sliding-window bars")
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--temperature", type=float, default=1.2)
    p.add_argument("--bar-cap", type=int, default=128)
    p.add_argument("--tokens-out", help="also write the generated token text")
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    _add_seed(p)
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("evaluate", help="style-transfer evaluation report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--setting", type=int, default=0, choices=(0, 1, 2),
                   help="1, 2, or 0 for both")
    p.add_argument("--excerpts", type=int, default=10)
    p.add_argument("--attr-sets", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--temperature", type=float, default=1.2)
    p.add_argument("--bar-cap", type=int, default=64)
    p.add_argument("--fluency-steps", type=int, default=0,
                   help="train a fluency LM for this many steps (0 = skip PPL)")
    p.add_argument("-o", "--output", help="write the report here as well")
    p.add_argument("--sub-beats", type=int, default=16, choices=(16, 32))
    p.add_argument("--quiet", action="store_true")
    _add_seed(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--store", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--workers", type=int, default=1)
    _add_seed(p)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
