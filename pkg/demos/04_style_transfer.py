"""Walkthrough: train a small model briefly and steer a piece's attributes.

A quick-fit demo (a few hundred steps, ~2 minutes): the checkpoint will
follow coarse attribute moves but is far from converged.  The acceptance
suite (tests/test_acceptance.py) runs the full 20k-step recipe.
"""

import numpy as np

from barmorph.attributes import score_attributes
from barmorph.corpus import generate_synthetic
from barmorph.decode import SamplingConfig, apply_overrides, style_transfer
from barmorph.midi_io import write_midi
from barmorph.optim import LrConfig
from barmorph.remi import build_vocab, detokenize
from barmorph.transformer import ModelConfig
from barmorph.vae import StyleVae, TrainConfig, train_vae

vocab = build_vocab(16)
corpus = generate_synthetic(n_pieces=120, bars_per_piece=8, seed=5, vocab=vocab)

cfg = ModelConfig(vocab_size=len(vocab), n_layers_enc=2, n_layers_dec=2, n_heads=4,
                  d=48, d_e=48, d_ff=128, d_z=8, d_a=8, d_c=24, max_t=256, max_k=64)
model = StyleVae(cfg, np.random.default_rng(0))
tc = TrainConfig(beta_max=1.0, cycle_steps=150, kl_free_steps=300, free_bits=0.25,
                 k_crop=4, t_max=160, batch_size=4, steps=800, seed=0,
                 lr=LrConfig(peak=3e-4, warmup_steps=50, decay_steps=10_000))
print("training a small model for 800 steps (about two minutes)...")
train_vae(model, corpus.samples("train"), tc, vocab.pad_id, vocab.bos_id,
          vocab.eos_id, (vocab.id_of("Pitch_22"), vocab.id_of("Pitch_107")),
          progress=True, log_every=200)

piece = corpus.of_split("test")[0]
source_rhym = [a.a_rhym for a in piece.attrs]
source_poly = [a.a_poly for a in piece.attrs]
print("\nsource rhythm classes:   ", source_rhym)
print("requested (+2 everywhere):", apply_overrides(source_rhym, "+2"))

res = style_transfer(
    model, vocab, piece.seq,
    apply_overrides(source_rhym, "+2"), source_poly,
    SamplingConfig(p=0.9, tau=1.2, seed=3, max_tokens_per_bar=48),
    window_bars=4,
)
gen_q, _ = detokenize(res.seq, vocab)
achieved = score_attributes(gen_q, corpus.bins)
print("achieved rhythm classes:  ", [a.a_rhym for a in achieved])

out = "demo_transfer.mid"
with open(out, "wb") as fh:
    fh.write(write_midi(gen_q))
print(f"\nwrote {out} ({gen_q.n_bars} bars, {len(gen_q.notes)} notes)")
