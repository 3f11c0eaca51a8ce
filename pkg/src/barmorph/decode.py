"""Generation: nucleus sampling, bar-wise style transfer, sliding windows.

Inference runs on a KV-cached incremental decoder that shares the training
decoder's parameters but skips gradient bookkeeping.  Bars are framed
explicitly: the Bar token opening each bar is injected by the driver, the
condition in force switches when that token is fed, and a per-bar token cap
truncates runaway bars (flagged on the result, never silently).

At inference the latent condition is the posterior mean (no sampling noise);
diversity comes from nucleus sampling alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .remi import TokenSeq, Vocab
from .transformer import ConditionedDecoder
from .vae import StyleVae, posterior


@dataclass(frozen=True)
class SamplingConfig:
    p: float = 0.9
    tau: float = 1.2
    seed: int = 0
    max_tokens_per_bar: int = 128

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"nucleus mass p must be in (0, 1], got {self.p}")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def nucleus_set(probs: np.ndarray, p: float) -> np.ndarray:
    """Indices of the smallest descending-probability prefix with mass >= p.

    Ties are broken by token id (stable sort), so the set is deterministic.
    """
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p * (1.0 - 1e-12))) + 1
    return order[:cut]


def nucleus_sample(logits: np.ndarray, cfg: SamplingConfig,
                   rng: np.random.Generator) -> int:
    """Temperature softmax, nucleus truncation, renormalized draw."""
    x = logits / cfg.tau
    x = x - x.max()
    probs = np.exp(x)
    probs /= probs.sum()
    support = nucleus_set(probs, cfg.p)
    kept = probs[support]
    return int(rng.choice(support, p=kept / kept.sum()))


# ---------------------------------------------------------------------------
# KV-cached incremental decoding

def _ln(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _prelu(x, alpha):
    return np.where(x > 0, x, alpha * x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class DecodeSession:
    """One incremental pass over a conditioned decoder with per-layer caches."""

    def __init__(self, decoder: ConditionedDecoder, conditions: np.ndarray | None):
        cfg = decoder.cfg
        self.cfg = cfg
        self.dec = decoder
        self.mode = cfg.mode if conditions is not None else "unconditional"
        self.pos = 0
        d, m = cfg.d, cfg.n_heads
        self.dh = d // m
        self.k_cache = [np.empty((m, 0, self.dh)) for _ in range(cfg.n_layers_dec)]
        self.v_cache = [np.empty((m, 0, self.dh)) for _ in range(cfg.n_layers_dec)]

        self.cond = conditions
        self.e_in = self.e_pre = self.e_post = None
        if self.mode == "in_attention":
            self.e_in = conditions @ decoder.w_in.data
        elif self.mode == "pre_attention":
            self.e_pre = conditions @ decoder.w_pre.data
        elif self.mode == "post_attention":
            h = _prelu(conditions @ decoder.bnet_w1.data + decoder.bnet_b1.data,
                       decoder.bnet_alpha.data)
            self.e_post = h @ decoder.bnet_w2.data + decoder.bnet_b2.data
        elif self.mode == "memory":
            k_max = conditions.shape[0]
            mem = (conditions @ decoder.w_mem.data).reshape(
                k_max, cfg.n_layers_dec, d
            )
            for l in range(cfg.n_layers_dec):
                mem_l = mem[:, l, :]
                self.k_cache[l] = self._heads(mem_l @ decoder.blocks[l].wk.data)
                self.v_cache[l] = self._heads(mem_l @ decoder.blocks[l].wv.data)

    def _heads(self, x: np.ndarray) -> np.ndarray:
        # (n, d) -> (heads, n, dh)
        return x.reshape(-1, self.cfg.n_heads, self.dh).transpose(1, 0, 2)

    def feed(self, token_id: int, bar: int) -> np.ndarray:
        """Consume one token under bar's condition; logits for the next one."""
        cfg, dec = self.cfg, self.dec
        if self.pos >= cfg.max_t:
            raise ValueError(f"position {self.pos} exceeds max_t {cfg.max_t}")
        x = dec.tok_emb.data[token_id] + dec.pos_emb.data[self.pos]
        if dec.in_proj is not None:
            x = x @ dec.in_proj.data
        self.pos += 1

        if self.mode == "pre_attention":
            h = np.concatenate([x, self.e_pre[bar]])
        else:
            h = x

        scale = 1.0 / np.sqrt(cfg.d / cfg.n_heads)
        for l, block in enumerate(dec.blocks):
            h_in = h + self.e_in[bar] if self.mode == "in_attention" else h
            q = (h_in @ block.wq.data).reshape(cfg.n_heads, self.dh)
            k_new = (h_in @ block.wk.data).reshape(cfg.n_heads, 1, self.dh)
            v_new = (h_in @ block.wv.data).reshape(cfg.n_heads, 1, self.dh)
            self.k_cache[l] = np.concatenate([self.k_cache[l], k_new], axis=1)
            self.v_cache[l] = np.concatenate([self.v_cache[l], v_new], axis=1)
            scores = (self.k_cache[l] @ q[:, :, None])[:, :, 0] * scale
            scores -= scores.max(axis=-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=-1, keepdims=True)
            ctx = (att[:, None, :] @ self.v_cache[l])[:, 0, :].reshape(cfg.d)
            ctx = ctx @ block.wo.data
            s = _ln(h_in + ctx, block.ln1_g.data, block.ln1_b.data, cfg.ln_eps)
            ff = np.maximum(s @ block.w1.data + block.b1.data, 0.0) @ block.w2.data + block.b2.data
            h = _ln(s + ff, block.ln2_g.data, block.ln2_b.data, cfg.ln_eps)

        if self.mode == "post_attention":
            g_in = np.concatenate([h, self.cond[bar]])
            g = _prelu(g_in @ dec.gnet_w1.data + dec.gnet_b1.data, dec.gnet_alpha.data)
            alpha = _sigmoid(g @ dec.gnet_w2.data + dec.gnet_b2.data)
            h = (1.0 - alpha) * h + alpha * self.e_post[bar]

        return h @ dec.out_w.data + dec.out_b.data


# ---------------------------------------------------------------------------
# Attribute overrides

def parse_override(text: str) -> tuple[str, int]:
    """'+2' / '-1' -> relative delta, '=5' or '5' -> absolute class."""
    text = text.strip()
    if text.startswith("+") or text.startswith("-"):
        return ("rel", int(text))
    if text.startswith("="):
        return ("abs", int(text[1:]))
    return ("abs", int(text))


def apply_overrides(classes: list[int], overrides) -> list[int]:
    """Overrides may be None (keep), a single spec applied to every bar, or a
    per-bar list; classes clamp to 0..7."""
    if overrides is None:
        return list(classes)
    if isinstance(overrides, (str, tuple)):
        overrides = [overrides] * len(classes)
    if len(overrides) != len(classes):
        raise ValueError(f"{len(overrides)} overrides for {len(classes)} bars")
    out = []
    for cls, ov in zip(classes, overrides):
        if ov is None:
            out.append(cls)
            continue
        kind, value = parse_override(ov) if isinstance(ov, str) else ov
        new = cls + value if kind == "rel" else value
        out.append(min(max(new, 0), 7))
    return out


# ---------------------------------------------------------------------------
# Style transfer

@dataclass
class TransferResult:
    seq: TokenSeq
    a_rhym: list[int]
    a_poly: list[int]
    truncated_bars: list[int] = field(default_factory=list)


class NonTerminatingBar(RuntimeError):
    """Raised only if a bar cannot even hold its forced Bar token."""


def encode_bar_means(model: StyleVae, seq: TokenSeq) -> np.ndarray:
    """(K, d_z) posterior means of each source bar (inference: z_k = mu_k)."""
    bars = [seq.bar_tokens(k) for k in range(seq.n_bars)]
    lengths = np.array([len(b) for b in bars])
    padded = np.zeros((len(bars), int(lengths.max())), dtype=np.int64)
    for i, b in enumerate(bars):
        padded[i, : len(b)] = b
    states = model.encoder.forward(padded, lengths)
    mu, _ = posterior(states, model.w_mu, model.w_sigma)
    return mu.data


def conditions_for(model: StyleVae, z: np.ndarray, a_rhym: list[int],
                   a_poly: list[int]) -> np.ndarray:
    return np.concatenate(
        [z, model.rhym_emb.data[np.asarray(a_rhym)],
         model.poly_emb.data[np.asarray(a_poly)]],
        axis=-1,
    )


def _generate_bars(decoder: ConditionedDecoder, vocab: Vocab,
                   conditions: np.ndarray, context: list[list[int]],
                   n_generate: int, cfg: SamplingConfig,
                   rng: np.random.Generator) -> tuple[list[list[int]], list[int]]:
    """Teacher-feed ``context`` bars, then sample ``n_generate`` more."""
    session = DecodeSession(decoder, conditions)
    logits = session.feed(vocab.bos_id, 0)
    for k, bar_tokens in enumerate(context):
        for tok in bar_tokens:
            logits = session.feed(tok, k)
    bars_out: list[list[int]] = []
    truncated: list[int] = []
    stop_ids = (vocab.bar_id, vocab.eos_id)
    max_pos = decoder.cfg.max_t
    for k in range(len(context), len(context) + n_generate):
        if session.pos + 1 >= max_pos:
            # window ran out of positions: emit a minimal bar, flagged
            bars_out.append([vocab.bar_id])
            truncated.append(k)
            continue
        bar = [vocab.bar_id]
        logits = session.feed(vocab.bar_id, k)
        done = False
        while len(bar) < cfg.max_tokens_per_bar:
            if session.pos >= max_pos:  # out of position budget: truncate
                break
            tok = nucleus_sample(logits, cfg, rng)
            if tok in stop_ids or tok == vocab.pad_id:
                done = True
                break
            bar.append(tok)
            logits = session.feed(tok, k)
        if not done:
            truncated.append(k)
        bars_out.append(bar)
    return bars_out, truncated


def style_transfer(model: StyleVae, vocab: Vocab, seq: TokenSeq,
                   a_rhym: list[int], a_poly: list[int],
                   cfg: SamplingConfig = SamplingConfig(),
                   window_bars: int | None = None) -> TransferResult:
    """Regenerate ``seq`` under (possibly overridden) attribute classes.

    Long inputs decode through overlapping windows of ``window_bars`` bars
    with stride window_bars/2; overlap bars are frozen context.
    """
    k_total = seq.n_bars
    if len(a_rhym) != k_total or len(a_poly) != k_total:
        raise ValueError("override length must match the bar count")
    if cfg.max_tokens_per_bar < 2:
        raise NonTerminatingBar("per-bar cap too small to hold a Bar token")
    mu = encode_bar_means(model, seq)
    conds = conditions_for(model, mu, a_rhym, a_poly)
    rng = np.random.default_rng(cfg.seed)

    k_w = window_bars or model.cfg.max_k
    bars: list[list[int]] = []
    truncated: list[int] = []
    if k_total <= k_w:
        bars, truncated = _generate_bars(
            model.decoder, vocab, conds, [], k_total, cfg, rng
        )
    else:
        stride = max(k_w // 2, 1)
        done = 0
        while done < k_total:
            start = min(max(done - (k_w - stride), 0), k_total - k_w)
            window_conds = conds[start : start + k_w]
            context = bars[start:done]
            n_gen = start + k_w - done
            new_bars, trunc = _generate_bars(
                model.decoder, vocab, window_conds, context, n_gen, cfg, rng
            )
            bars.extend(new_bars)
            truncated.extend(start + k for k in trunc)
            done = start + k_w

    tokens: list[int] = []
    spans: list[tuple[int, int]] = []
    for bar in bars:
        spans.append((len(tokens), len(tokens) + len(bar)))
        tokens.extend(bar)
    return TransferResult(TokenSeq(tokens, spans), list(a_rhym), list(a_poly), truncated)
