"""Walkthrough: every evaluation metric on concrete musical material.

Similarities on hand-built bars, a self-similarity-matrix distance between a
piece and a shuffled copy, the distribution-KL quality measure, Spearman
correlations, and perplexity under a uniform language model.
"""

import numpy as np

from barmorph.corpus import generate_synthetic
from barmorph.metrics import (
    chroma_vector, dist_ssm, grooving_vector, kl_quality, perplexity,
    piece_chroma, sim_chr, sim_grv, sim_ins, spearman,
)
from barmorph.midi_io import Bar, Note, QuantizedScore
from barmorph.remi import build_vocab, detokenize

c_major = Bar(0, (Note(0, 0, 60, 12, 4), Note(0, 4, 64, 12, 4), Note(0, 8, 67, 12, 4)), (), 16)
c_major_oct = Bar(0, (Note(0, 0, 72, 12, 4), Note(0, 4, 76, 12, 4), Note(0, 8, 79, 12, 4)), (), 16)
d_minor = Bar(0, (Note(0, 0, 62, 12, 4), Note(0, 4, 65, 12, 4), Note(0, 8, 69, 12, 4)), (), 16)

print("chroma similarity: octave-shifted copy", sim_chr(chroma_vector(c_major), chroma_vector(c_major_oct)))
print("chroma similarity: C major vs D minor ", round(sim_chr(chroma_vector(c_major), chroma_vector(d_minor)), 2))
print("grooving similarity: same rhythm      ", sim_grv(grooving_vector(c_major), grooving_vector(d_minor)))
print("instrumentation: one of 17 differs    ", round(sim_ins(np.zeros(17), np.eye(17)[0]), 2))

vocab = build_vocab(16)
corpus = generate_synthetic(20, 16, seed=13, vocab=vocab)
q, _ = detokenize(corpus.pieces[0].seq, vocab)
shuffled = QuantizedScore(
    16,
    sorted(Note((n.bar * 7 + 3) % q.n_bars, n.sub_beat, n.pitch, n.velocity_class,
                n.duration_units) for n in q.notes),
    q.tempo_changes, q.n_bars,
)
print("\nSSM distance: piece vs itself         ", dist_ssm(q, q))
print("SSM distance: piece vs bar-shuffled   ", round(dist_ssm(q, shuffled), 2))

real = [piece_chroma(detokenize(p.seq, vocab)[0]) for p in corpus.pieces[:10]]
gen = [piece_chroma(detokenize(p.seq, vocab)[0]) for p in corpus.pieces[10:]]
print("\nKL quality (chroma): real vs real     ", round(kl_quality(real, real, "chr"), 4))
print("KL quality (chroma): real vs others   ", round(kl_quality(real, gen, "chr"), 4))

rng = np.random.default_rng(0)
classes = rng.integers(0, 8, size=200)
noisy = classes + rng.normal(0, 1.5, size=200)
print("\nSpearman: classes vs noisy responses  ", round(spearman(classes, noisy), 3))
print("Spearman: classes vs negated          ", round(spearman(classes, -noisy), 3))

print("\nperplexity of a uniform 330-token LM  ", round(perplexity(np.full(100, -np.log(330.0))), 6))
