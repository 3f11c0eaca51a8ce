"""Transformer building blocks with segment-level conditioning.

Four ways to inject per-bar condition vectors c_1..c_K into a causal decoder:

* ``pre_attention``   — project c_k and concatenate with the token embedding
  at every position of bar k (needs d = 2*d_e);
* ``in_attention``    — project c_k to the hidden width and add it to the
  input of every attention layer (all layers but the last one's output);
* ``post_attention``  — leave attention untouched; blend a conditioning-net
  output into the final hidden state through a learned sigmoid gate;
* ``memory``          — per-layer projections of the conditions prepended as
  extra attendable key/value slots.

Plus ``unconditional``, which ignores the conditions entirely.  A bidirectional
bar encoder and an average-pooling bar-embedding extractor (a causal LM read at
a middle layer) complete the set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter

MODES = ("unconditional", "memory", "pre_attention", "in_attention", "post_attention")


class BadPartition(ValueError):
    pass


class ModeDimensionError(ValueError):
    pass


class EmptyBar(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    d: int = 64       # attention hidden size
    d_e: int = 64     # token embedding size
    d_ff: int = 256
    d_c: int = 64     # condition vector size
    d_z: int = 16     # latent size (VAE)
    d_a: int = 32     # attribute embedding size (each attribute)
    max_t: int = 1280
    max_k: int = 32
    mode: str = "in_attention"
    ln_eps: float = 1e-5
    init_std: float = 0.01

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ModeDimensionError(f"d={self.d} not divisible by {self.n_heads} heads")
        if self.mode not in MODES:
            raise ModeDimensionError(f"unknown mode {self.mode!r}")
        if self.mode == "pre_attention" and self.d != 2 * self.d_e:
            raise ModeDimensionError(
                f"pre_attention requires d = 2*d_e, got d={self.d}, d_e={self.d_e}"
            )


class ParamSet:
    """Named-parameter registry with gaussian init."""

    def __init__(self, rng: np.random.Generator, std: float):
        self.rng = rng
        self.std = std
        self.params: dict[str, Tensor] = {}

    def normal(self, name: str, shape) -> Tensor:
        return self._register(parameter(self.rng.normal(0.0, self.std, shape), name))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(parameter(np.zeros(shape), name))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(parameter(np.ones(shape), name))

    def const(self, name: str, value) -> Tensor:
        return self._register(parameter(np.asarray(value, dtype=np.float64), name))

    def _register(self, p: Tensor) -> Tensor:
        if p.name in self.params:
            raise ValueError(f"duplicate parameter {p.name}")
        self.params[p.name] = p
        return p

    def all(self) -> list[Tensor]:
        return list(self.params.values())

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = arrays[name].astype(np.float64)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, m, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, m * dh))


class AttentionBlock:
    """Multi-head attention + FFN, both with residuals and layer norm."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: ModelConfig):
        d, d_ff = cfg.d, cfg.d_ff
        self.cfg = cfg
        self.wq = ps.normal(f"{prefix}.wq", (d, d))
        self.wk = ps.normal(f"{prefix}.wk", (d, d))
        self.wv = ps.normal(f"{prefix}.wv", (d, d))
        self.wo = ps.normal(f"{prefix}.wo", (d, d))
        self.ln1_g = ps.ones(f"{prefix}.ln1_g", (d,))
        self.ln1_b = ps.zeros(f"{prefix}.ln1_b", (d,))
        self.w1 = ps.normal(f"{prefix}.ffn_w1", (d, d_ff))
        self.b1 = ps.zeros(f"{prefix}.ffn_b1", (d_ff,))
        self.w2 = ps.normal(f"{prefix}.ffn_w2", (d_ff, d))
        self.b2 = ps.zeros(f"{prefix}.ffn_b2", (d,))
        self.ln2_g = ps.ones(f"{prefix}.ln2_g", (d,))
        self.ln2_b = ps.zeros(f"{prefix}.ln2_b", (d,))

    def __call__(self, h: Tensor, mask: np.ndarray | None,
                 memory: Tensor | None = None,
                 collect: dict | None = None) -> Tensor:
        cfg = self.cfg
        kv_src = ad.concat([memory, h], axis=1) if memory is not None else h
        q = _split_heads(ad.linear(h, self.wq), cfg.n_heads)
        k = _split_heads(ad.linear(kv_src, self.wk), cfg.n_heads)
        v = _split_heads(ad.linear(kv_src, self.wv), cfg.n_heads)
        scale = 1.0 / np.sqrt(cfg.d / cfg.n_heads)
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale
        att = ad.softmax(scores, mask=mask)
        if collect is not None:
            collect.setdefault("attn_shapes", []).append(att.shape)
        ctx = ad.linear(_merge_heads(ad.matmul(att, v)), self.wo)
        s = ad.layer_norm(h + ctx, self.ln1_g, self.ln1_b, eps=cfg.ln_eps)
        ff = ad.linear(ad.relu(ad.linear(s, self.w1, self.b1)), self.w2, self.b2)
        return ad.layer_norm(s + ff, self.ln2_g, self.ln2_b, eps=cfg.ln_eps)


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))[None, None]


def _gather_rows(flat: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather on a 2-D tensor (shared with embedding lookup)."""
    return ad.embedding(flat, ids)


class ConditionedDecoder:
    """Causal transformer LM over token sequences with bar-level conditions."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 ps: ParamSet | None = None, prefix: str = "dec"):
        self.cfg = cfg
        self.ps = ps or ParamSet(rng, cfg.init_std)
        ps = self.ps
        self.tok_emb = ps.normal(f"{prefix}.tok_emb", (cfg.vocab_size, cfg.d_e))
        self.pos_emb = ps.normal(f"{prefix}.pos_emb", (cfg.max_t, cfg.d_e))
        # token embeddings narrower than the hidden width get projected up,
        # except under pre_attention where the condition fills the other half
        self.in_proj = None
        if cfg.d_e != cfg.d and cfg.mode != "pre_attention":
            self.in_proj = ps.normal(f"{prefix}.in_proj", (cfg.d_e, cfg.d))
        self.blocks = [
            AttentionBlock(ps, f"{prefix}.block{l}", cfg)
            for l in range(cfg.n_layers_dec)
        ]
        self.out_w = ps.normal(f"{prefix}.out_w", (cfg.d, cfg.vocab_size))
        self.out_b = ps.zeros(f"{prefix}.out_b", (cfg.vocab_size,))

        mode = cfg.mode
        if mode == "pre_attention":
            self.w_pre = ps.normal(f"{prefix}.w_pre", (cfg.d_c, cfg.d_e))
        elif mode == "in_attention":
            self.w_in = ps.normal(f"{prefix}.w_in", (cfg.d_c, cfg.d))
        elif mode == "memory":
            self.w_mem = ps.normal(f"{prefix}.w_mem", (cfg.d_c, cfg.n_layers_dec * cfg.d))
        elif mode == "post_attention":
            d = cfg.d
            self.bnet_w1 = ps.normal(f"{prefix}.bnet_w1", (cfg.d_c, d))
            self.bnet_b1 = ps.zeros(f"{prefix}.bnet_b1", (d,))
            self.bnet_w2 = ps.normal(f"{prefix}.bnet_w2", (d, d))
            self.bnet_b2 = ps.zeros(f"{prefix}.bnet_b2", (d,))
            self.bnet_alpha = ps.const(f"{prefix}.bnet_alpha", 0.25)
            self.gnet_w1 = ps.normal(f"{prefix}.gnet_w1", (d + cfg.d_c, d))
            self.gnet_b1 = ps.zeros(f"{prefix}.gnet_b1", (d,))
            self.gnet_w2 = ps.normal(f"{prefix}.gnet_w2", (d, 1))
            self.gnet_b2 = ps.zeros(f"{prefix}.gnet_b2", (1,))
            self.gnet_alpha = ps.const(f"{prefix}.gnet_alpha", 0.25)

    # -- condition plumbing --------------------------------------------------

    @staticmethod
    def bar_ids_from_spans(bar_spans: list[tuple[int, int]], t: int) -> np.ndarray:
        """Per-position bar index for a span partition of [0, t)."""
        ids = np.full(t, -1, dtype=np.int64)
        prev_end = 0
        for k, (start, end) in enumerate(bar_spans):
            if start != prev_end or end < start:
                raise BadPartition(f"spans do not partition the sequence: {bar_spans}")
            ids[start:end] = k
            prev_end = end
        if prev_end > t:
            raise BadPartition("spans exceed sequence length")
        ids[prev_end:] = max(len(bar_spans) - 1, 0)  # trailing EOS/pad -> last bar
        return ids

    @staticmethod
    def _flat_conditions(conditions: Tensor, bar_ids: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Normalize (B, K, d_c) + per-sample bar ids, or (N, d_c) + global row
        ids, to a flat matrix plus global row indices."""
        if conditions.data.ndim == 3:
            b, k_max, d_c = conditions.shape
            flat = ad.reshape(conditions, (b * k_max, d_c))
            return flat, (np.arange(b) * k_max)[:, None] + bar_ids
        return conditions, bar_ids

    def _per_position(self, conditions: Tensor, bar_ids: np.ndarray, proj: Tensor) -> Tensor:
        """Conditions -> (B, T, proj-width) rows, via bar lookup."""
        flat, rows = self._flat_conditions(conditions, bar_ids)
        return _gather_rows(ad.matmul(flat, proj), rows)

    # -- forward -------------------------------------------------------------

    def forward(self, input_ids: np.ndarray, conditions: Tensor | None = None,
                bar_ids: np.ndarray | None = None,
                collect: dict | None = None,
                return_hiddens: bool = False):
        """Logits (B, T, V) for teacher-forced inputs.

        ``bar_ids`` maps each input position to its bar (required in any
        conditional mode); ``conditions`` is (B, K, d_c).
        """
        cfg = self.cfg
        mode = cfg.mode if conditions is not None else "unconditional"
        if conditions is None and cfg.mode == "pre_attention":
            raise ModeDimensionError("a pre_attention decoder cannot run unconditionally")
        if conditions is None and cfg.mode != "unconditional" and bar_ids is not None:
            raise BadPartition("bar_ids given but no conditions")
        input_ids = np.atleast_2d(np.asarray(input_ids))
        b, t = input_ids.shape
        if t > cfg.max_t:
            raise ValueError(f"sequence length {t} exceeds max_t {cfg.max_t}")
        if mode != "unconditional":
            if bar_ids is None:
                raise BadPartition("conditions require bar_ids")
            bar_ids = np.atleast_2d(bar_ids)
            if bar_ids.shape != (b, t):
                raise BadPartition(f"bar_ids shape {bar_ids.shape} != {(b, t)}")
            n_rows = conditions.shape[1] if conditions.data.ndim == 3 else conditions.shape[0]
            if bar_ids.max() >= n_rows:
                raise BadPartition("bar index beyond condition count")
            if mode == "memory" and conditions.data.ndim != 3:
                raise BadPartition("memory mode requires (B, K, d_c) conditions")

        x = ad.embedding(self.tok_emb, input_ids) + ad.embedding(
            self.pos_emb, np.broadcast_to(np.arange(t), (b, t))
        )
        if self.in_proj is not None:
            x = ad.linear(x, self.in_proj)

        mask = causal_mask(t)
        memory_per_layer = [None] * cfg.n_layers_dec
        cond_add = None

        if mode == "pre_attention":
            e = self._per_position(conditions, bar_ids, self.w_pre)
            h = ad.concat([x, e], axis=-1)
        elif mode == "in_attention":
            cond_add = self._per_position(conditions, bar_ids, self.w_in)
            h = x
        elif mode == "memory":
            bk, k_max, d_c = conditions.shape
            mem = ad.matmul(ad.reshape(conditions, (bk * k_max, d_c)), self.w_mem)
            mem = ad.reshape(mem, (bk, k_max, cfg.n_layers_dec, cfg.d))
            memory_per_layer = [
                ad.reshape(sl, (bk, k_max, cfg.d))
                for sl in ad.split(mem, [1] * cfg.n_layers_dec, axis=2)
            ]
            # every token may attend to every (real) memory slot
            n_bars = bar_ids.max(axis=1) + 1
            mem_allowed = np.arange(k_max)[None, :] < n_bars[:, None]
            mem_mask = np.broadcast_to(mem_allowed[:, None, None, :], (b, 1, t, k_max))
            mask = np.concatenate([mem_mask, np.broadcast_to(mask, (b, 1, t, t))], axis=-1)
            h = x
        else:  # unconditional or post_attention
            h = x

        hiddens = [h]
        for l, block in enumerate(self.blocks):
            h_in = h + cond_add if cond_add is not None else h
            h = block(h_in, mask, memory=memory_per_layer[l], collect=collect)
            hiddens.append(h)

        if mode == "post_attention":
            flat, rows = self._flat_conditions(conditions, bar_ids)
            e = ad.prelu(ad.linear(flat, self.bnet_w1, self.bnet_b1), self.bnet_alpha)
            e = ad.linear(e, self.bnet_w2, self.bnet_b2)
            e_pos = _gather_rows(e, rows)
            c_pos = _gather_rows(flat, rows)
            g_in = ad.concat([h, c_pos], axis=-1)
            g = ad.prelu(ad.linear(g_in, self.gnet_w1, self.gnet_b1), self.gnet_alpha)
            alpha = ad.sigmoid(ad.linear(g, self.gnet_w2, self.gnet_b2))
            h = (1.0 - alpha) * h + alpha * e_pos

        logits = ad.linear(h, self.out_w, self.out_b)
        if return_hiddens:
            return logits, hiddens
        return logits


class BarEncoder:
    """Bidirectional transformer over single bars; the state above the Bar
    token (position 0) is the bar representation."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 ps: ParamSet | None = None, prefix: str = "enc"):
        if cfg.mode == "pre_attention":
            cfg = replace(cfg, mode="in_attention")  # encoder never concatenates
        self.cfg = cfg
        self.ps = ps or ParamSet(rng, cfg.init_std)
        ps = self.ps
        self.tok_emb = ps.normal(f"{prefix}.tok_emb", (cfg.vocab_size, cfg.d))
        self.pos_emb = ps.normal(f"{prefix}.pos_emb", (cfg.max_t, cfg.d))
        self.blocks = [
            AttentionBlock(ps, f"{prefix}.block{l}", cfg)
            for l in range(cfg.n_layers_enc)
        ]

    def forward(self, bar_ids_padded: np.ndarray, lengths: np.ndarray) -> Tensor:
        """(N, S) padded bar token ids + true lengths -> (N, d) bar states."""
        bar_ids_padded = np.atleast_2d(bar_ids_padded)
        n, s = bar_ids_padded.shape
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise EmptyBar("cannot encode an empty bar")
        x = ad.embedding(self.tok_emb, bar_ids_padded) + ad.embedding(
            self.pos_emb, np.broadcast_to(np.arange(s), (n, s))
        )
        key_ok = np.arange(s)[None, :] < lengths[:, None]
        mask = np.broadcast_to(key_ok[:, None, None, :], (n, 1, s, s))
        h = x
        for block in self.blocks:
            h = block(h, mask)
        first = ad.split(h, [1, s - 1], axis=1)[0] if s > 1 else h
        return ad.reshape(first, (n, self.cfg.d))

    def encode_bar(self, bar_tokens: list[int]) -> Tensor:
        if not bar_tokens:
            raise EmptyBar("cannot encode an empty bar")
        return ad.reshape(
            self.forward(np.asarray([bar_tokens]), np.asarray([len(bar_tokens)])),
            (self.cfg.d,),
        )


class BarEmbeddingExtractor:
    """Causal LM whose middle-layer states, average-pooled over a bar, serve
    as fixed condition vectors."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "ext"):
        cfg = replace(cfg, mode="unconditional")
        self.cfg = cfg
        self.lm = ConditionedDecoder(cfg, rng, prefix=prefix)
        self.pool_layer = cfg.n_layers_dec // 2

    @property
    def ps(self) -> ParamSet:
        return self.lm.ps

    def lm_logits(self, input_ids: np.ndarray) -> Tensor:
        return self.lm.forward(input_ids)

    def extract(self, bar_tokens: list[int], layer: int | None = None) -> np.ndarray:
        """d_c-dim embedding of one bar (no gradient tracking); ``layer``
        defaults to the middle one."""
        if not bar_tokens:
            raise EmptyBar("cannot embed an empty bar")
        _, hiddens = self.lm.forward(np.asarray([bar_tokens]), return_hiddens=True)
        return hiddens[self.pool_layer if layer is None else layer].data[0].mean(axis=0)

    def extract_many(self, bars: list[list[int]], layer: int | None = None) -> np.ndarray:
        """(K, d_c) embeddings for a list of bars, batched by padding."""
        if any(len(b) == 0 for b in bars):
            raise EmptyBar("cannot embed an empty bar")
        lengths = np.array([len(b) for b in bars])
        s = int(lengths.max())
        padded = np.zeros((len(bars), s), dtype=np.int64)
        for i, b in enumerate(bars):
            padded[i, : len(b)] = b
        _, hiddens = self.lm.forward(padded, return_hiddens=True)
        states = hiddens[self.pool_layer if layer is None else layer].data
        out = np.array([states[i, : lengths[i]].mean(axis=0) for i in range(len(bars))])
        return out
