"""Style-transfer evaluation protocols and the structured text report.

Setting #1: draw excerpts from the test split, assign each several random
per-bar attribute sets, generate, and measure fidelity (bar-level chroma and
grooving similarity to the source), attribute control (Spearman correlation
between requested classes and measured raw scores, plus the cross-attribute
leakage correlations), and fluency (perplexity under a separately trained
unconditional LM).

Setting #2: one attribute set per excerpt, several repeats under different
sampling seeds; diversity is the mean pairwise similarity among the repeats
(lower = more diverse).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attributes import score_attribute_raw
from .corpus import CorpusPiece
from .decode import SamplingConfig, style_transfer
from .metrics import (
    DegenerateInput,
    lm_log_probs,
    perplexity,
    piece_chroma,
    piece_grooving,
    sim_chr,
    sim_grv,
    spearman,
)


def _safe_spearman(a, s) -> float:
    """NaN instead of raising for degenerate model output, so reports on
    broken or untrained checkpoints still render."""
    try:
        return spearman(a, s)
    except DegenerateInput:
        return float("nan")
from .remi import Vocab, detokenize
from .vae import StyleVae


@dataclass
class EvalConfig:
    n_excerpts: int = 10
    n_attr_sets: int = 3
    n_repeats: int = 5
    window_bars: int = 4
    seed: int = 0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)


@dataclass
class Setting1Result:
    fidelity_chr: list[float]
    fidelity_grv: list[float]
    rho_rhym: float
    rho_poly: float
    rho_poly_given_rhym: float
    rho_rhym_given_poly: float
    ppl: list[float]


@dataclass
class Setting2Result:
    diversity_chr: list[float]
    diversity_grv: list[float]
    n_pairs: int


def _mean_bar_sims(src_bars_chr, src_bars_grv, gen_q) -> tuple[float, float]:
    gen_chr, gen_grv = piece_chroma(gen_q), piece_grooving(gen_q)
    k = min(len(src_bars_chr), len(gen_chr))
    c = float(np.mean([sim_chr(src_bars_chr[i], gen_chr[i]) for i in range(k)]))
    g = float(np.mean([sim_grv(src_bars_grv[i], gen_grv[i]) for i in range(k)]))
    return c, g


def run_setting1(model: StyleVae, vocab: Vocab, pieces: list[CorpusPiece],
                 cfg: EvalConfig, fluency_lm=None) -> Setting1Result:
    rng = np.random.default_rng(cfg.seed)
    excerpts = pieces[: cfg.n_excerpts]
    fid_chr, fid_grv, ppls = [], [], []
    req_rhym, req_poly, meas_rhym, meas_poly = [], [], [], []
    for piece in excerpts:
        src_q, _ = detokenize(piece.seq, vocab)
        src_chr, src_grv = piece_chroma(src_q), piece_grooving(src_q)
        k = piece.seq.n_bars
        for s in range(cfg.n_attr_sets):
            a_rhym = rng.integers(0, 8, size=k).tolist()
            a_poly = rng.integers(0, 8, size=k).tolist()
            sampling = SamplingConfig(
                p=cfg.sampling.p, tau=cfg.sampling.tau,
                seed=int(rng.integers(0, 2**31)),
                max_tokens_per_bar=cfg.sampling.max_tokens_per_bar,
            )
            res = style_transfer(model, vocab, piece.seq, a_rhym, a_poly,
                                 sampling, window_bars=cfg.window_bars)
            gen_q, _ = detokenize(res.seq, vocab)
            c, g = _mean_bar_sims(src_chr, src_grv, gen_q)
            fid_chr.append(c)
            fid_grv.append(g)
            s_rhym, s_poly = score_attribute_raw(gen_q)
            kk = min(len(s_rhym), k)
            req_rhym += a_rhym[:kk]
            req_poly += a_poly[:kk]
            meas_rhym += s_rhym[:kk]
            meas_poly += s_poly[:kk]
            if fluency_lm is not None:
                ppls.append(perplexity(lm_log_probs(fluency_lm, vocab, res.seq.tokens)))
    return Setting1Result(
        fidelity_chr=fid_chr,
        fidelity_grv=fid_grv,
        rho_rhym=_safe_spearman(req_rhym, meas_rhym),
        rho_poly=_safe_spearman(req_poly, meas_poly),
        rho_poly_given_rhym=_safe_spearman(req_rhym, meas_poly),
        rho_rhym_given_poly=_safe_spearman(req_poly, meas_rhym),
        ppl=ppls,
    )


def run_setting2(model: StyleVae, vocab: Vocab, pieces: list[CorpusPiece],
                 cfg: EvalConfig) -> Setting2Result:
    rng = np.random.default_rng(cfg.seed + 1)
    excerpts = pieces[: cfg.n_excerpts]
    div_chr, div_grv = [], []
    n_pairs = 0
    for piece in excerpts:
        k = piece.seq.n_bars
        a_rhym = rng.integers(0, 8, size=k).tolist()
        a_poly = rng.integers(0, 8, size=k).tolist()
        versions = []
        for r in range(cfg.n_repeats):
            sampling = SamplingConfig(
                p=cfg.sampling.p, tau=cfg.sampling.tau,
                seed=int(rng.integers(0, 2**31)),
                max_tokens_per_bar=cfg.sampling.max_tokens_per_bar,
            )
            res = style_transfer(model, vocab, piece.seq, a_rhym, a_poly,
                                 sampling, window_bars=cfg.window_bars)
            gen_q, _ = detokenize(res.seq, vocab)
            versions.append((piece_chroma(gen_q), piece_grooving(gen_q)))
        for i in range(len(versions)):
            for j in range(i + 1, len(versions)):
                chr_i, grv_i = versions[i]
                chr_j, grv_j = versions[j]
                kk = min(len(chr_i), len(chr_j))
                div_chr.append(float(np.mean([sim_chr(chr_i[b], chr_j[b]) for b in range(kk)])))
                div_grv.append(float(np.mean([sim_grv(grv_i[b], grv_j[b]) for b in range(kk)])))
                n_pairs += 1
    return Setting2Result(div_chr, div_grv, n_pairs)


def _stat_line(name: str, values: list[float]) -> str:
    if not values:
        return f"{name:24s} n=0"
    arr = np.asarray(values)
    return f"{name:24s} mean={arr.mean():8.3f} std={arr.std():7.3f} n={len(arr)}"


def evaluation_report(s1: Setting1Result | None, s2: Setting2Result | None,
                      header: str = "") -> str:
    lines = ["# evaluation report"]
    if header:
        lines.append(f"# {header}")
    if s1 is not None:
        lines.append("[setting 1: fidelity / control / fluency]")
        lines.append(_stat_line("fidelity.sim_chr", s1.fidelity_chr))
        lines.append(_stat_line("fidelity.sim_grv", s1.fidelity_grv))
        lines.append(f"{'control.rho_rhym':24s} {s1.rho_rhym:8.3f}")
        lines.append(f"{'control.rho_poly':24s} {s1.rho_poly:8.3f}")
        lines.append(f"{'control.rho_poly|rhym':24s} {s1.rho_poly_given_rhym:8.3f}")
        lines.append(f"{'control.rho_rhym|poly':24s} {s1.rho_rhym_given_poly:8.3f}")
        lines.append(_stat_line("fluency.ppl", s1.ppl))
    if s2 is not None:
        lines.append(f"[setting 2: diversity over {s2.n_pairs} pairs]")
        lines.append(_stat_line("diversity.sim_chr", s2.diversity_chr))
        lines.append(_stat_line("diversity.sim_grv", s2.diversity_grv))
    return "\n".join(lines) + "\n"
