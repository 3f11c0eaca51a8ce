"""Evaluation metrics: fidelity similarities, SSM distance, distribution KL,
rank correlation for attribute control, and LM perplexity for fluency.

Cosine-based similarities are scaled to [0, 100].  Zero-vector convention:
two silent inputs count as identical (100), one silent input as maximally
different (0).  All similarity features are bar-level; the self-similarity
matrix works on half-beat symbolic chroma (an approximation of the audio
pipeline that inspired it — comparable only within this toolkit).
"""

from __future__ import annotations

import numpy as np

from .midi_io import Bar, QuantizedScore


class LengthMismatch(ValueError):
    pass


class EmptySet(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class ZeroProbability(ValueError):
    pass


# ---------------------------------------------------------------------------
# Bar features

def chroma_vector(bar: Bar) -> np.ndarray:
    """Onset counts per pitch class (12,)."""
    out = np.zeros(12, dtype=np.int64)
    for n in bar.notes:
        out[n.pitch % 12] += 1
    return out


def grooving_vector(bar: Bar) -> np.ndarray:
    """Onset counts per sub-beat (B,)."""
    out = np.zeros(bar.sub_beats, dtype=np.int64)
    for n in bar.notes:
        out[n.sub_beat] += 1
    return out


def piece_chroma(q: QuantizedScore) -> list[np.ndarray]:
    return [chroma_vector(b) for b in q.bars()]


def piece_grooving(q: QuantizedScore) -> list[np.ndarray]:
    return [grooving_vector(b) for b in q.bars()]


# ---------------------------------------------------------------------------
# Similarities

def _cosine01(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(max(np.dot(a, b) / (na * nb), 0.0), 1.0))


def sim_chr(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """100 x cosine similarity of chroma vectors."""
    return 100.0 * _cosine01(np.asarray(r_a, float), np.asarray(r_b, float))


def sim_grv(g_a: np.ndarray, g_b: np.ndarray) -> float:
    """100 x cosine similarity of grooving vectors."""
    if len(g_a) != len(g_b):
        raise LengthMismatch(f"grooving lengths {len(g_a)} vs {len(g_b)}")
    return 100.0 * _cosine01(np.asarray(g_a, float), np.asarray(g_b, float))


def sim_ins(b_a: np.ndarray, b_b: np.ndarray) -> float:
    """100 x (1 - normalized Hamming distance) of track-presence bitmaps."""
    b_a, b_b = np.asarray(b_a), np.asarray(b_b)
    if b_a.shape != b_b.shape:
        raise LengthMismatch(f"presence shapes {b_a.shape} vs {b_b.shape}")
    return 100.0 * (1.0 - np.mean(b_a != b_b))


# ---------------------------------------------------------------------------
# Self-similarity matrices

def halfbeat_chroma(q: QuantizedScore) -> np.ndarray:
    """(8 * n_bars, 12) chroma of notes sounding within each half-beat."""
    B = q.sub_beats_per_bar
    per_halfbeat = B // 8
    n = 8 * q.n_bars
    out = np.zeros((n, 12), dtype=np.float64)
    for note in q.notes:
        start = note.bar * B + note.sub_beat
        span = q.note_span_sub_beats(note)
        hb_first = start // per_halfbeat
        hb_last = (start + span - 1) // per_halfbeat
        for hb in range(hb_first, min(hb_last + 1, n)):
            out[hb, note.pitch % 12] += 1.0
    return out


def ssm(q: QuantizedScore) -> np.ndarray:
    """Half-beat self-similarity matrix in [0, 1]."""
    feats = halfbeat_chroma(q)
    norms = np.linalg.norm(feats, axis=1)
    silent = norms == 0.0
    safe = np.where(silent, 1.0, norms)
    unit = feats / safe[:, None]
    s = unit @ unit.T
    # zero-vector convention: silent-silent pairs are identical
    s[silent] = 0.0
    s[:, silent] = 0.0
    s[np.ix_(silent, silent)] = 1.0
    return np.clip(s, 0.0, 1.0)


def dist_ssm(q_a: QuantizedScore, q_b: QuantizedScore) -> float:
    """100 x mean absolute entrywise difference of the two SSMs."""
    if q_a.n_bars != q_b.n_bars:
        raise LengthMismatch(f"bar counts {q_a.n_bars} vs {q_b.n_bars}")
    return 100.0 * float(np.abs(ssm(q_a) - ssm(q_b)).mean())


# ---------------------------------------------------------------------------
# Distribution-level quality (KL of within-piece similarity histograms)

_FEATURES = {
    "chr": (sim_chr, 50),
    "grv": (sim_grv, 50),
    "ins": (sim_ins, 18),
}


def _pairwise_sims(pieces: list[list[np.ndarray]], sim) -> np.ndarray:
    values = []
    for bars in pieces:
        for i in range(len(bars)):
            for j in range(i + 1, len(bars)):
                values.append(sim(bars[i], bars[j]))
    return np.asarray(values)


def _histogram(values: np.ndarray, n_bins: int, smooth: float = 1e-6) -> np.ndarray:
    edges = np.linspace(0.0, 100.0, n_bins + 1)
    hist, _ = np.histogram(np.clip(values, 0.0, 100.0), bins=edges)
    p = hist.astype(np.float64) + smooth
    return p / p.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats for probability mass functions (zeros allowed in p)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_quality(real_pieces: list[list[np.ndarray]], gen_pieces: list[list[np.ndarray]],
               feature: str) -> float:
    """KL(real || gen) between within-piece bar-pair similarity histograms.

    Each piece is a list of per-bar feature vectors for the chosen feature
    ('chr', 'grv', or 'ins').
    """
    if feature not in _FEATURES:
        raise ValueError(f"unknown feature {feature!r}")
    if not real_pieces or not gen_pieces:
        raise EmptySet("need at least one piece per set")
    sim, n_bins = _FEATURES[feature]
    p = _histogram(_pairwise_sims(real_pieces, sim), n_bins)
    q = _histogram(_pairwise_sims(gen_pieces, sim), n_bins)
    return kl_divergence(p, q)


# ---------------------------------------------------------------------------
# Attribute control

def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # 1-based average rank
        i = j + 1
    return ranks


def spearman(a_list, s_list) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    a = np.asarray(a_list, dtype=np.float64)
    s = np.asarray(s_list, dtype=np.float64)
    if a.shape != s.shape or a.ndim != 1 or len(a) == 0:
        raise LengthMismatch(f"shapes {a.shape} vs {s.shape}")
    if np.all(a == a[0]) or np.all(s == s[0]):
        raise DegenerateInput("constant input list")
    ra, rs = _average_ranks(a), _average_ranks(s)
    ra -= ra.mean()
    rs -= rs.mean()
    return float((ra * rs).sum() / np.sqrt((ra**2).sum() * (rs**2).sum()))


# ---------------------------------------------------------------------------
# Fluency

def perplexity(log_probs: np.ndarray) -> float:
    """exp of the mean negative log-probability (length-normalized)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if len(log_probs) == 0:
        raise EmptySet("no tokens to score")
    if np.any(~np.isfinite(log_probs)):
        raise ZeroProbability("the LM assigns zero probability to a gold token")
    return float(np.exp(-log_probs.mean()))


def lm_log_probs(decoder, vocab, tokens: list[int]) -> np.ndarray:
    """Per-token log p(x_t | x_<t) under a causal LM for the content tokens."""
    input_ids = np.asarray([[vocab.bos_id] + list(tokens[:-1])])
    logits = decoder.forward(input_ids).data[0]
    x = logits - logits.max(axis=-1, keepdims=True)
    logp = x - np.log(np.exp(x).sum(axis=-1, keepdims=True))
    return logp[np.arange(len(tokens)), np.asarray(tokens)]
