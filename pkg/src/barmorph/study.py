"""Segment-conditioned decoding study: train a bar-embedding extractor, use
its frozen embeddings as per-bar conditions for decoders under different
conditioning modes, and score re-creations of held-out pieces against the
originals.

This is the desk-scale version of the conditioning-mechanism comparison: an
unconditional LM is the baseline, and any conditional mode can be swapped in
(in-attention is the interesting one).  Transposition augmentation is off
here because the extractor's embeddings are tied to the exact bar content.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import backward, tensor
from .decode import SamplingConfig, _generate_bars
from .metrics import sim_chr, sim_grv
from .midi_io import QuantizedScore
from .optim import AdamState, LrConfig, adam_step, lr_schedule
from .remi import TokenSeq, Vocab
from .transformer import (
    BarEmbeddingExtractor,
    ConditionedDecoder,
    ModelConfig,
)
from .vae import Sample


@dataclass
class StudyConfig:
    extractor_steps: int = 2000
    decoder_steps: int = 3000
    batch_size: int = 4
    k_crop: int = 4
    t_max: int = 160
    seed: int = 0
    lr: LrConfig = field(default_factory=lambda: LrConfig(
        peak=3e-4, warmup_steps=100, decay_steps=20_000))


def _pad_rows(rows: list[list[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows])
    out = np.full((len(rows), int(lengths.max())), pad, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, lengths


def train_extractor(cfg: ModelConfig, bars: list[list[int]], vocab: Vocab,
                    study: StudyConfig, progress: bool = False) -> BarEmbeddingExtractor:
    """Causal next-token LM over single bars."""
    ext = BarEmbeddingExtractor(cfg, np.random.default_rng(study.seed))
    adam = AdamState()
    rng = np.random.default_rng(study.seed + 1)
    params = ext.ps.all()
    t0 = time.time()
    for step in range(study.extractor_steps):
        idx = rng.choice(len(bars), size=study.batch_size)
        chosen = [bars[i] for i in idx]
        inputs, lengths = _pad_rows(chosen, vocab.pad_id)
        targets = np.full_like(inputs, vocab.pad_id)
        mask = np.zeros(inputs.shape)
        for i, bar in enumerate(chosen):
            targets[i, : len(bar) - 1] = bar[1:]
            targets[i, len(bar) - 1] = vocab.eos_id
            mask[i, : len(bar)] = 1.0
        for p in params:
            p.zero_grad()
        logits = ext.lm.forward(inputs)
        nll = ad.sum_(ad.mul(ad.cross_entropy(logits, targets), tensor(mask)))
        loss = nll / float(mask.sum())
        backward(loss)
        adam_step(params, adam, lr_schedule(step, study.lr))
        if progress and step % 500 == 0:
            print(f"[extractor {time.time()-t0:6.1f}s] step {step} nll/token "
                  f"{float(loss.data):.4f}", flush=True)
    return ext


def extract_conditions(ext: BarEmbeddingExtractor,
                       samples: list[Sample]) -> list[np.ndarray]:
    """Frozen (K, d_c) condition matrix per piece."""
    return [
        ext.extract_many([s.tokens[a:b] for a, b in s.bar_spans]) for s in samples
    ]


def _crop(sample: Sample, conds: np.ndarray, k_crop: int,
          rng: np.random.Generator) -> tuple[Sample, np.ndarray]:
    k = len(sample.bar_spans)
    if k <= k_crop:
        return sample, conds
    start = int(rng.integers(0, k - k_crop + 1))
    spans = sample.bar_spans[start : start + k_crop]
    offset = spans[0][0]
    tokens = sample.tokens[offset : spans[-1][1]]
    spans = [(a - offset, b - offset) for a, b in spans]
    return (
        Sample(tokens, spans, sample.a_rhym[start : start + k_crop],
               sample.a_poly[start : start + k_crop]),
        conds[start : start + k_crop],
    )


def _lm_batch(crops: list[tuple[Sample, np.ndarray]], vocab: Vocab):
    """Inputs/targets/bar ids plus a stacked flat condition matrix."""
    b = len(crops)
    t = max(len(s.tokens) for s, _ in crops) + 1
    input_ids = np.full((b, t), vocab.pad_id, dtype=np.int64)
    target_ids = np.full((b, t), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((b, t))
    bar_ids = np.zeros((b, t), dtype=np.int64)
    cond_rows = []
    row = 0
    for i, (s, conds) in enumerate(crops):
        n = len(s.tokens)
        k = len(s.bar_spans)
        input_ids[i, 0] = vocab.bos_id
        input_ids[i, 1 : n + 1] = s.tokens
        target_ids[i, :n] = s.tokens
        target_ids[i, n] = vocab.eos_id
        mask[i, : n + 1] = 1.0
        local = ConditionedDecoder.bar_ids_from_spans(s.bar_spans, n)
        bar_ids[i, 0] = row
        bar_ids[i, 1 : n + 1] = row + local
        bar_ids[i, n + 1 :] = row + k - 1
        cond_rows.append(conds)
        row += k
    return input_ids, target_ids, mask, bar_ids, np.concatenate(cond_rows, axis=0)


def train_conditioned_lm(cfg: ModelConfig, samples: list[Sample],
                         conditions: list[np.ndarray] | None, vocab: Vocab,
                         study: StudyConfig, progress: bool = False) -> ConditionedDecoder:
    """Teacher-forced NLL training of a decoder; ``conditions=None`` trains
    the unconditional baseline."""
    dec = ConditionedDecoder(cfg, np.random.default_rng(study.seed))
    adam = AdamState()
    rng = np.random.default_rng(study.seed + 2)
    params = dec.ps.all()
    d_c = cfg.d_c
    t0 = time.time()
    for step in range(study.decoder_steps):
        idx = rng.choice(len(samples), size=study.batch_size)
        crops = [
            _crop(samples[i],
                  conditions[i] if conditions is not None else np.zeros((len(samples[i].bar_spans), d_c)),
                  study.k_crop, rng)
            for i in idx
        ]
        input_ids, target_ids, mask, bar_ids, conds = _lm_batch(crops, vocab)
        for p in params:
            p.zero_grad()
        if conditions is None:
            logits = dec.forward(input_ids)
        else:
            logits = dec.forward(input_ids, tensor(conds), bar_ids)
        nll = ad.sum_(ad.mul(ad.cross_entropy(logits, target_ids), tensor(mask)))
        loss = nll / float(mask.sum())
        backward(loss)
        adam_step(params, adam, lr_schedule(step, study.lr))
        if progress and step % 500 == 0:
            print(f"[decoder {time.time()-t0:6.1f}s] step {step} nll/token "
                  f"{float(loss.data):.4f}", flush=True)
    return dec


def eval_lm_nll(dec: ConditionedDecoder, samples: list[Sample],
                conditions: list[np.ndarray] | None, vocab: Vocab,
                k_crop: int) -> float:
    """Per-token NLL over deterministic contiguous windows of each piece."""
    total, count = 0.0, 0.0
    for i, s in enumerate(samples):
        k = len(s.bar_spans)
        conds = conditions[i] if conditions is not None else np.zeros((k, 1))
        for start in range(0, k, k_crop):
            spans = s.bar_spans[start : start + k_crop]
            offset = spans[0][0]
            tokens = s.tokens[offset : spans[-1][1]]
            spans_local = [(a - offset, b - offset) for a, b in spans]
            crop = Sample(tokens, spans_local, [0] * len(spans), [0] * len(spans))
            input_ids, target_ids, mask, bar_ids, conds_flat = _lm_batch(
                [(crop, conds[start : start + len(spans)])], vocab
            )
            if conditions is None:
                logits = dec.forward(input_ids)
            else:
                logits = dec.forward(input_ids, tensor(conds_flat), bar_ids)
            nll = ad.cross_entropy(logits, target_ids).data
            total += float((nll * mask).sum())
            count += mask.sum()
    return total / count


def recreate(dec: ConditionedDecoder, vocab: Vocab, conditions: np.ndarray,
             sampling: SamplingConfig, k_window: int = 4) -> TokenSeq:
    """Re-generate a piece bar by bar from frozen bar embeddings, windowed to
    match the training crop length."""
    k_total = len(conditions)
    rng = np.random.default_rng(sampling.seed)
    bars: list[list[int]] = []
    done = 0
    while done < k_total:
        start = min(max(done - k_window // 2, 0), max(k_total - k_window, 0))
        window_conds = conditions[start : start + k_window]
        new_bars, _ = _generate_bars(
            dec, vocab, window_conds, bars[start:done],
            min(start + k_window, k_total) - done, sampling, rng,
        )
        bars.extend(new_bars)
        done = min(start + k_window, k_total)
    tokens, spans = [], []
    for bar in bars:
        spans.append((len(tokens), len(tokens) + len(bar)))
        tokens.extend(bar)
    return TokenSeq(tokens, spans)


def recreation_similarities(original: QuantizedScore, generated: QuantizedScore
                            ) -> tuple[float, float]:
    """Mean bar-level chroma and grooving similarity, padded score-vs-score."""
    from .metrics import piece_chroma, piece_grooving

    chr_o, chr_g = piece_chroma(original), piece_chroma(generated)
    grv_o, grv_g = piece_grooving(original), piece_grooving(generated)
    k = min(len(chr_o), len(chr_g))
    chr_vals = [sim_chr(chr_o[i], chr_g[i]) for i in range(k)]
    grv_vals = [sim_grv(grv_o[i], grv_g[i]) for i in range(k)]
    return float(np.mean(chr_vals)), float(np.mean(grv_vals))


def random_pair_baseline(scores: list[QuantizedScore], n_pairs: int,
                         seed: int) -> tuple[float, float]:
    """Bar-level sims between bars of randomly paired different pieces."""
    rng = np.random.default_rng(seed)
    chr_vals, grv_vals = [], []
    for _ in range(n_pairs):
        i, j = rng.choice(len(scores), size=2, replace=False)
        c, g = recreation_similarities(scores[i], scores[j])
        chr_vals.append(c)
        grv_vals.append(g)
    return float(np.mean(chr_vals)), float(np.mean(grv_vals))
