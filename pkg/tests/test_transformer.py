import numpy as np
import pytest

from barmorph import autodiff as ad
from barmorph.autodiff import backward, parameter, tensor
from barmorph.transformer import (
    AttentionBlock,
    BadPartition,
    BarEmbeddingExtractor,
    BarEncoder,
    ConditionedDecoder,
    EmptyBar,
    MODES,
    ModeDimensionError,
    ModelConfig,
    ParamSet,
    causal_mask,
)

VOCAB = 40


def cfg_for(mode, **kw):
    base = dict(
        vocab_size=VOCAB, n_layers_enc=2, n_layers_dec=2, n_heads=2,
        d=16, d_e=16, d_ff=32, d_c=8, max_t=64, max_k=8, mode=mode,
    )
    if mode == "pre_attention":
        base["d_e"] = 8
    base.update(kw)
    return ModelConfig(**base)


def toy_batch(rng, b=2, t=12, k=3, d_c=8):
    ids = rng.integers(0, VOCAB, size=(b, t))
    bounds = np.linspace(0, t, k + 1).astype(int)
    bar_ids = np.zeros((b, t), dtype=np.int64)
    for i in range(k):
        bar_ids[:, bounds[i]:bounds[i + 1]] = i
    conds = tensor(rng.standard_normal((b, k, d_c)))
    return ids, bar_ids, conds


class TestAttentionBlock:
    def test_single_token_attention_weight_is_one(self, rng):
        cfg = cfg_for("unconditional")
        block = AttentionBlock(ParamSet(rng, 0.02), "b", cfg)
        h = tensor(rng.standard_normal((1, 1, cfg.d)))
        collect = {}
        block(h, causal_mask(1), collect=collect)
        assert collect["attn_shapes"] == [(1, cfg.n_heads, 1, 1)]

    def test_causal_mask_zeroes_future(self, rng):
        cfg = cfg_for("unconditional")
        block = AttentionBlock(ParamSet(rng, 0.02), "b", cfg)
        h = tensor(rng.standard_normal((1, 3, cfg.d)))
        scores = ad.matmul(
            h, ad.transpose(h, (0, 2, 1))
        )
        att = ad.softmax(scores, mask=causal_mask(3)[0])
        assert np.all(att.data[0, 0, 1:] == 0.0)
        assert np.all(att.data[0, 1, 2:] == 0.0)

    def test_permutation_equivariance_without_positions(self, rng):
        # raw block (no positional encoding) commutes with token permutation
        cfg = cfg_for("unconditional")
        block = AttentionBlock(ParamSet(rng, 0.02), "b", cfg)
        h = rng.standard_normal((1, 5, cfg.d))
        perm = rng.permutation(5)
        out = block(tensor(h), None).data
        out_perm = block(tensor(h[:, perm]), None).data
        np.testing.assert_allclose(out[:, perm], out_perm, atol=1e-12)


class TestDecoderModes:
    def test_config_rejects_bad_pre_attention_dims(self):
        with pytest.raises(ModeDimensionError):
            cfg_for("pre_attention", d_e=16)

    def test_config_rejects_odd_heads(self):
        with pytest.raises(ModeDimensionError):
            cfg_for("unconditional", d=15)

    @pytest.mark.parametrize("mode", [m for m in MODES if m != "unconditional"])
    def test_logit_shapes_all_modes(self, rng, mode):
        cfg = cfg_for(mode)
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng)
        logits = dec.forward(ids, conds, bar_ids)
        assert logits.shape == (2, 12, VOCAB)

    def test_in_attention_zero_projection_equals_unconditional(self, rng):
        cfg = cfg_for("in_attention")
        dec = ConditionedDecoder(cfg, rng)
        dec.w_in.data[:] = 0.0
        ids, bar_ids, conds = toy_batch(rng)
        with_cond = dec.forward(ids, conds, bar_ids)
        without = dec.forward(ids)
        assert np.array_equal(with_cond.data, without.data)

    def test_post_attention_closed_gate_keeps_hidden(self, rng):
        cfg = cfg_for("post_attention")
        dec = ConditionedDecoder(cfg, rng)
        # force the gate to 0: g_w2 = 0 and a hugely negative bias
        dec.gnet_w2.data[:] = 0.0
        dec.gnet_b2.data[:] = -1e9
        ids, bar_ids, conds = toy_batch(rng)
        gated = dec.forward(ids, conds, bar_ids)
        plain = dec.forward(ids)
        np.testing.assert_allclose(gated.data, plain.data, atol=1e-300)

    def test_memory_mode_attends_over_t_plus_k(self, rng):
        cfg = cfg_for("memory")
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng, b=2, t=12, k=3)
        collect = {}
        dec.forward(ids, conds, bar_ids, collect=collect)
        assert collect["attn_shapes"] == [(2, cfg.n_heads, 12, 12 + 3)] * cfg.n_layers_dec

    @pytest.mark.parametrize("mode", list(MODES))
    def test_causality_token_perturbation(self, rng, mode):
        cfg = cfg_for(mode)
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng, b=1)
        if mode == "unconditional":
            conds = None
            args = (ids, None, None)
        else:
            args = (ids, conds, bar_ids)
        base = dec.forward(*args).data
        t_perturb = 5
        ids2 = ids.copy()
        ids2[0, t_perturb] = (ids2[0, t_perturb] + 1) % VOCAB
        args2 = (ids2,) + args[1:]
        out = dec.forward(*args2).data
        assert np.array_equal(out[0, :t_perturb], base[0, :t_perturb])
        assert not np.allclose(out[0, t_perturb + 1:], base[0, t_perturb + 1:])

    @pytest.mark.parametrize("mode", ["pre_attention", "in_attention", "post_attention"])
    def test_condition_locality(self, rng, mode):
        cfg = cfg_for(mode)
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng, b=1, t=12, k=3)
        base = dec.forward(ids, conds, bar_ids).data
        k_perturb = 1
        c2 = conds.data.copy()
        c2[0, k_perturb] += 1.0
        out = dec.forward(ids, tensor(c2), bar_ids).data
        start = int(np.argmax(bar_ids[0] == k_perturb))
        assert np.array_equal(out[0, :start], base[0, :start])
        assert not np.allclose(out[0, start:], base[0, start:])

    def test_memory_mode_conditions_are_global(self, rng):
        cfg = cfg_for("memory")
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng, b=1, t=12, k=3)
        base = dec.forward(ids, conds, bar_ids).data
        c2 = conds.data.copy()
        c2[0, 2] += 1.0  # last bar's condition
        out = dec.forward(ids, tensor(c2), bar_ids).data
        assert not np.allclose(out[0, 0], base[0, 0])  # even the first position moves

    @pytest.mark.parametrize("mode", [m for m in MODES if m != "unconditional"])
    def test_gradient_reaches_conditions(self, rng, mode):
        cfg = cfg_for(mode)
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, _ = toy_batch(rng, b=1)
        conds = parameter(rng.standard_normal((1, 3, cfg.d_c)), "conds")
        logits = dec.forward(ids, conds, bar_ids)
        loss = ad.sum_(ad.cross_entropy(logits, ids))
        backward(loss)
        for k in range(3):
            assert np.linalg.norm(conds.grad[0, k]) > 0

    def test_bad_partition_rejected(self, rng):
        cfg = cfg_for("in_attention")
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng)
        with pytest.raises(BadPartition):
            dec.forward(ids, conds, bar_ids[:, :5])
        with pytest.raises(BadPartition):
            dec.forward(ids, conds, None)
        with pytest.raises(BadPartition):
            ConditionedDecoder.bar_ids_from_spans([(0, 3), (4, 6)], 6)

    def test_bar_ids_from_spans(self):
        ids = ConditionedDecoder.bar_ids_from_spans([(0, 3), (3, 5)], 7)
        np.testing.assert_array_equal(ids, [0, 0, 0, 1, 1, 1, 1])

    def test_d_e_projection_path(self, rng):
        cfg = cfg_for("in_attention", d_e=8)
        dec = ConditionedDecoder(cfg, rng)
        ids, bar_ids, conds = toy_batch(rng)
        assert dec.forward(ids, conds, bar_ids).shape == (2, 12, VOCAB)


class TestBarEncoder:
    def test_identical_bars_identical_states(self, rng):
        cfg = cfg_for("in_attention")
        enc = BarEncoder(cfg, rng)
        bar = [3, 5, 7, 9]
        s1 = enc.encode_bar(bar).data
        s2 = enc.encode_bar(bar).data
        assert np.array_equal(s1, s2)

    def test_output_dimension_for_any_length(self, rng):
        cfg = cfg_for("in_attention")
        enc = BarEncoder(cfg, rng)
        for n in (1, 2, 9):
            assert enc.encode_bar(list(range(3, 3 + n))).shape == (cfg.d,)

    def test_empty_bar_raises(self, rng):
        enc = BarEncoder(cfg_for("in_attention"), rng)
        with pytest.raises(EmptyBar):
            enc.encode_bar([])

    def test_state_sensitive_to_any_token(self, rng):
        cfg = cfg_for("in_attention")
        enc = BarEncoder(cfg, rng)
        changed = 0
        for _ in range(100):
            bar = list(rng.integers(0, VOCAB, size=6))
            i = int(rng.integers(0, 6))
            bar2 = list(bar)
            bar2[i] = int((bar2[i] + 1) % VOCAB)
            if not np.allclose(enc.encode_bar(bar).data, enc.encode_bar(bar2).data):
                changed += 1
        assert changed == 100

    def test_batched_matches_single(self, rng):
        cfg = cfg_for("in_attention")
        enc = BarEncoder(cfg, rng)
        bars = [[3, 4, 5], [6, 7], [8, 9, 10, 11]]
        lengths = np.array([3, 2, 4])
        padded = np.zeros((3, 4), dtype=np.int64)
        for i, b in enumerate(bars):
            padded[i, : len(b)] = b
        batch = enc.forward(padded, lengths).data
        for i, b in enumerate(bars):
            np.testing.assert_allclose(batch[i], enc.encode_bar(b).data, atol=1e-12)


class TestExtractor:
    def test_length_one_bar_embedding_is_that_state(self, rng):
        cfg = cfg_for("unconditional")
        ext = BarEmbeddingExtractor(cfg, rng)
        _, hiddens = ext.lm.forward(np.array([[7]]), return_hiddens=True)
        np.testing.assert_allclose(
            ext.extract([7]), hiddens[ext.pool_layer].data[0, 0], atol=1e-15
        )

    def test_pooId_is_mean_of_states(self, rng):
        cfg = cfg_for("unconditional")
        ext = BarEmbeddingExtractor(cfg, rng)
        bar = [3, 5, 8, 13]
        _, hiddens = ext.lm.forward(np.array([bar]), return_hiddens=True)
        np.testing.assert_allclose(
            ext.extract(bar), hiddens[ext.pool_layer].data[0].mean(axis=0), atol=1e-12
        )

    def test_distinct_bars_distinct_embeddings(self, rng):
        ext = BarEmbeddingExtractor(cfg_for("unconditional"), rng)
        e1 = ext.extract([3, 5, 7])
        e2 = ext.extract([3, 5, 8])
        assert not np.allclose(e1, e2)

    def test_extract_many_matches_single(self, rng):
        ext = BarEmbeddingExtractor(cfg_for("unconditional"), rng)
        bars = [[3, 4, 5], [6, 7], [8, 9, 10, 11]]
        many = ext.extract_many(bars)
        for i, b in enumerate(bars):
            np.testing.assert_allclose(many[i], ext.extract(b), atol=1e-12)

    def test_empty_bar_raises(self, rng):
        ext = BarEmbeddingExtractor(cfg_for("unconditional"), rng)
        with pytest.raises(EmptyBar):
            ext.extract([])
