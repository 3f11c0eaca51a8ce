"""Walkthrough: rhythmic intensity and polyphony, raw scores to classes.

Generates a synthetic corpus, shows the per-bar raw attribute scores of one
piece, fits octile bins on the whole corpus, and prints the resulting 8-class
labels next to the published reference cut-offs.
"""

import numpy as np

from barmorph.attributes import REFERENCE_POLY_CUTOFFS, REFERENCE_RHYM_CUTOFFS
from barmorph.corpus import generate_synthetic
from barmorph.remi import build_vocab, detokenize

vocab = build_vocab(16)
corpus = generate_synthetic(n_pieces=100, bars_per_piece=16, seed=7, vocab=vocab)

print("fitted cut-offs (this corpus)  vs  reference pop-piano cut-offs")
print("  rhythm:   ", np.round(corpus.bins.rhym_cutoffs, 3).tolist())
print("  reference:", list(REFERENCE_RHYM_CUTOFFS))
print("  polyphony:", np.round(corpus.bins.poly_cutoffs, 3).tolist())
print("  reference:", list(REFERENCE_POLY_CUTOFFS))

piece = corpus.pieces[0]
q, _ = detokenize(piece.seq, vocab)
print(f"\npiece {piece.piece_id} ({q.n_bars} bars):")
print(f"{'bar':>4} {'s_rhym':>8} {'a_rhym':>7} {'s_poly':>8} {'a_poly':>7}")
for i, a in enumerate(piece.attrs):
    print(f"{i:>4} {a.s_rhym:8.3f} {a.a_rhym:>7} {a.s_poly:8.3f} {a.a_poly:>7}")

counts_r = np.bincount([a.a_rhym for p in corpus.pieces for a in p.attrs], minlength=8)
counts_p = np.bincount([a.a_poly for p in corpus.pieces for a in p.attrs], minlength=8)
print("\nclass occupancy over the corpus (should be roughly even):")
print("  rhythm:   ", (counts_r / counts_r.sum()).round(3).tolist())
print("  polyphony:", (counts_p / counts_p.sum()).round(3).tolist())
