"""Latent bar conditions, the VAE objective, and the training loop.

Every bar is encoded independently to a posterior N(mu_k, diag(sigma_k^2));
the sampled z_k is concatenated with two learned attribute embeddings (one
per 8-class ordinal attribute) to form the condition c_k fed to the decoder
through in-attention (or any other conditioning mode).

The loss is the sequence NLL plus beta times the free-bits KL term: per bar,
each latent dimension contributes max(lambda, KL_i); the bar sums are averaged
over bars.  beta itself is zero for a warm-up phase and then follows a cyclic
ramp-and-hold schedule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attributes import AttributeBins
from .autodiff import Tensor, backward, tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, LrConfig, adam_step, lr_schedule
from .transformer import (
    BarEncoder,
    ConditionedDecoder,
    ModelConfig,
    ParamSet,
)


class OOMGuard(ValueError):
    """Sequence would exceed the configured maximum length."""


@dataclass
class TrainConfig:
    beta_max: float = 1.0
    cycle_steps: int = 5000
    kl_free_steps: int = 10_000
    free_bits: float = 0.25
    k_crop: int = 16
    t_max: int = 1280
    batch_size: int = 4
    transpose_range: int = 6
    steps: int = 20_000
    seed: int = 0
    lr: LrConfig = field(default_factory=LrConfig)

    def __post_init__(self):
        if not (0.0 < self.beta_max <= 1.0):
            raise ValueError(f"beta_max must be in (0, 1], got {self.beta_max}")
        if self.free_bits < 0:
            raise ValueError("free_bits must be >= 0")

    def to_text(self) -> str:
        d = asdict(self)
        lr = d.pop("lr")
        lines = [f"{k}={v}" for k, v in d.items()]
        lines += [f"lr.{k}={v}" for k, v in lr.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        kv: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            kv[k] = v
        lr_kv = {k[3:]: v for k, v in kv.items() if k.startswith("lr.")}
        main = {k: v for k, v in kv.items() if not k.startswith("lr.")}
        ints = {"cycle_steps", "kl_free_steps", "k_crop", "t_max",
                "batch_size", "transpose_range", "steps", "seed"}
        floats = {"beta_max", "free_bits"}
        args = {}
        for k, v in main.items():
            args[k] = int(v) if k in ints else float(v) if k in floats else v
        lr = LrConfig(
            peak=float(lr_kv.get("peak", LrConfig.peak)),
            floor=float(lr_kv.get("floor", LrConfig.floor)),
            warmup_steps=int(lr_kv.get("warmup_steps", LrConfig.warmup_steps)),
            decay_steps=int(lr_kv.get("decay_steps", LrConfig.decay_steps)),
        )
        return cls(lr=lr, **args)


def posterior(bar_states: Tensor, w_mu: Tensor, w_sigma: Tensor) -> tuple[Tensor, Tensor]:
    """(N, d) bar states -> (mu, sigma), sigma strictly positive by softplus."""
    mu = ad.matmul(bar_states, w_mu)
    sigma = ad.softplus(ad.matmul(bar_states, w_sigma))
    return mu, sigma


def kl_per_dim(mu: Tensor, sigma: Tensor) -> Tensor:
    """Per-dimension KL(N(mu, sigma^2) || N(0, 1)) = 0.5(mu^2 + sigma^2 - 1 - ln sigma^2)."""
    return (ad.mul(mu, mu) + ad.mul(sigma, sigma) - 1.0 - 2.0 * ad.log(sigma)) * 0.5


def free_bits_kl(kl_vec: Tensor, lam: float) -> Tensor:
    """Sum over latent dims of max(lambda, kl_i); sub-lambda dims pass no gradient."""
    return ad.sum_(ad.clamp_min(kl_vec, lam), axis=-1)


def beta_schedule(step: int, cfg: TrainConfig) -> float:
    """0 during warm-up, then per cycle: linear 0 -> beta_max over the first
    half, hold beta_max for the second half."""
    if step < cfg.kl_free_steps:
        return 0.0
    pos = (step - cfg.kl_free_steps) % cfg.cycle_steps
    half = cfg.cycle_steps / 2.0
    if pos >= half:
        return cfg.beta_max
    return cfg.beta_max * pos / half


# ---------------------------------------------------------------------------
# Batching

@dataclass
class Sample:
    """One training item: content tokens, their bar spans, per-bar attributes."""

    tokens: list[int]
    bar_spans: list[tuple[int, int]]
    a_rhym: list[int]
    a_poly: list[int]


@dataclass
class Batch:
    input_ids: np.ndarray      # (B, T) BOS + tokens, PAD right-padded
    target_ids: np.ndarray     # (B, T) tokens + EOS, PAD right-padded
    target_mask: np.ndarray    # (B, T) 1.0 at real targets
    bar_ids: np.ndarray        # (B, T) global bar row per position
    bars_padded: np.ndarray    # (N, S) encoder inputs (all bars, stacked)
    bar_lengths: np.ndarray    # (N,)
    bar_weight: np.ndarray     # (N,) = 1 / (K_of_sample * batch_size)
    a_rhym: np.ndarray         # (N,)
    a_poly: np.ndarray         # (N,)
    n_bars: int


def collate(samples: list[Sample], pad_id: int, bos_id: int, eos_id: int,
            t_max: int) -> Batch:
    b = len(samples)
    t = max(len(s.tokens) for s in samples) + 1  # +1 for the BOS/EOS shift
    if t > t_max:
        raise OOMGuard(f"batch length {t} exceeds t_max {t_max}")
    input_ids = np.full((b, t), pad_id, dtype=np.int64)
    target_ids = np.full((b, t), pad_id, dtype=np.int64)
    target_mask = np.zeros((b, t))
    bar_ids = np.zeros((b, t), dtype=np.int64)

    bars: list[list[int]] = []
    bar_weight: list[float] = []
    a_rhym: list[int] = []
    a_poly: list[int] = []
    row = 0
    for i, s in enumerate(samples):
        n = len(s.tokens)
        k = len(s.bar_spans)
        input_ids[i, 0] = bos_id
        input_ids[i, 1 : n + 1] = s.tokens
        target_ids[i, :n] = s.tokens
        target_ids[i, n] = eos_id
        target_mask[i, : n + 1] = 1.0
        # conditions keyed on the INPUT token's bar: BOS belongs to bar 0, so
        # every content prediction of bar k is conditioned on c_k
        local = ConditionedDecoder.bar_ids_from_spans(s.bar_spans, n)
        bar_ids[i, 0] = row
        bar_ids[i, 1 : n + 1] = row + local
        bar_ids[i, n + 1 :] = row + k - 1  # pads condition on the last bar
        for start, end in s.bar_spans:
            bars.append(s.tokens[start:end])
        bar_weight += [1.0 / (k * b)] * k
        a_rhym += list(s.a_rhym)
        a_poly += list(s.a_poly)
        row += k

    lengths = np.array([len(bt) for bt in bars])
    s_max = int(lengths.max())
    bars_padded = np.full((len(bars), s_max), pad_id, dtype=np.int64)
    for i, bt in enumerate(bars):
        bars_padded[i, : len(bt)] = bt
    return Batch(
        input_ids, target_ids, target_mask, bar_ids, bars_padded, lengths,
        np.array(bar_weight), np.array(a_rhym), np.array(a_poly), row,
    )


def crop_and_transpose(sample: Sample, cfg: TrainConfig, rng: np.random.Generator,
                       pitch_id_range: tuple[int, int]) -> Sample:
    """Random contiguous k_crop-bar window plus a random in-range key shift."""
    k = len(sample.bar_spans)
    if k > cfg.k_crop:
        start_bar = int(rng.integers(0, k - cfg.k_crop + 1))
        spans = sample.bar_spans[start_bar : start_bar + cfg.k_crop]
        offset = spans[0][0]
        tokens = sample.tokens[offset : spans[-1][1]]
        spans = [(s - offset, e - offset) for s, e in spans]
        sample = Sample(
            tokens, spans,
            sample.a_rhym[start_bar : start_bar + cfg.k_crop],
            sample.a_poly[start_bar : start_bar + cfg.k_crop],
        )
    # truncate over-long crops at a bar boundary
    if len(sample.tokens) + 1 > cfg.t_max:
        spans = [se for se in sample.bar_spans if se[1] + 1 <= cfg.t_max]
        if spans:
            end = spans[-1][1]
            sample = Sample(
                sample.tokens[:end], spans,
                sample.a_rhym[: len(spans)], sample.a_poly[: len(spans)],
            )
        else:
            end = cfg.t_max - 1
            sample = Sample(sample.tokens[:end], [(0, end)],
                            sample.a_rhym[:1], sample.a_poly[:1])

    lo_id, hi_id = pitch_id_range
    pitches = [tk for tk in sample.tokens if lo_id <= tk <= hi_id]
    if pitches and cfg.transpose_range > 0:
        lo_shift = max(-cfg.transpose_range, lo_id - min(pitches))
        hi_shift = min(cfg.transpose_range, hi_id - max(pitches))
        shift = int(rng.integers(lo_shift, hi_shift + 1)) if lo_shift <= hi_shift else 0
        if shift:
            tokens = [
                tk + shift if lo_id <= tk <= hi_id else tk for tk in sample.tokens
            ]
            sample = Sample(tokens, sample.bar_spans, sample.a_rhym, sample.a_poly)
    return sample


# ---------------------------------------------------------------------------
# The model

class StyleVae:
    """Bar encoder + gaussian posterior + attribute embeddings + conditioned
    decoder, trained end to end."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if cfg.d_c != cfg.d_z + 2 * cfg.d_a:
            raise ValueError(
                f"d_c must equal d_z + 2*d_a ({cfg.d_z} + 2*{cfg.d_a}), got {cfg.d_c}"
            )
        self.cfg = cfg
        self.ps = ParamSet(rng, cfg.init_std)
        self.encoder = BarEncoder(cfg, rng, ps=self.ps, prefix="enc")
        self.decoder = ConditionedDecoder(cfg, rng, ps=self.ps, prefix="dec")
        self.w_mu = self.ps.normal("lat.w_mu", (cfg.d, cfg.d_z))
        self.w_sigma = self.ps.normal("lat.w_sigma", (cfg.d, cfg.d_z))
        self.rhym_emb = self.ps.normal("attr.rhym_emb", (8, cfg.d_a))
        self.poly_emb = self.ps.normal("attr.poly_emb", (8, cfg.d_a))

    def parameters(self) -> list[Tensor]:
        return self.ps.all()

    def conditions_from(self, z: Tensor, a_rhym: np.ndarray, a_poly: np.ndarray) -> Tensor:
        """(N, d_z) latents + per-bar attribute classes -> (N, d_c) conditions."""
        return ad.concat(
            [z, ad.embedding(self.rhym_emb, a_rhym), ad.embedding(self.poly_emb, a_poly)],
            axis=-1,
        )

    def forward_loss(self, batch: Batch, beta: float, lam: float,
                     rng: np.random.Generator) -> tuple[Tensor, dict]:
        states = self.encoder.forward(batch.bars_padded, batch.bar_lengths)
        mu, sigma = posterior(states, self.w_mu, self.w_sigma)
        eps = rng.standard_normal(mu.shape)
        z = ad.reparameterize(mu, sigma, eps)
        conds = self.conditions_from(z, batch.a_rhym, batch.a_poly)

        logits = self.decoder.forward(batch.input_ids, conds, batch.bar_ids)
        nll_pos = ad.cross_entropy(logits, batch.target_ids)
        nll = ad.sum_(ad.mul(nll_pos, tensor(batch.target_mask))) / len(batch.input_ids)

        kl_mat = kl_per_dim(mu, sigma)
        kl_bar = free_bits_kl(kl_mat, lam)            # (N,) clamped sums
        kl_term = ad.sum_(ad.mul(kl_bar, tensor(batch.bar_weight)))
        loss = nll + beta * kl_term

        n_tokens = batch.target_mask.sum()
        stats = {
            "nll_sum": float(nll.data) * len(batch.input_ids),
            "nll_per_token": float((nll_pos.data * batch.target_mask).sum() / n_tokens),
            "kl_raw_per_dim": float(kl_mat.data.mean()),
            "kl_clamped_per_bar": float(kl_bar.data.mean()),
            "beta": beta,
        }
        return loss, stats

    def eval_nll(self, samples: list[Sample], pad_id: int, bos_id: int, eos_id: int,
                 t_max: int, use_mean: bool = True, batch_size: int = 8) -> float:
        """Teacher-forced per-token NLL with z = mu (no sampling noise)."""
        total, count = 0.0, 0.0
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i : i + batch_size], pad_id, bos_id, eos_id, t_max)
            states = self.encoder.forward(batch.bars_padded, batch.bar_lengths)
            mu, sigma = posterior(states, self.w_mu, self.w_sigma)
            z = mu if use_mean else ad.reparameterize(
                mu, sigma, np.random.default_rng(0).standard_normal(mu.shape))
            conds = self.conditions_from(z, batch.a_rhym, batch.a_poly)
            logits = self.decoder.forward(batch.input_ids, conds, batch.bar_ids)
            nll_pos = ad.cross_entropy(logits, batch.target_ids)
            total += float((nll_pos.data * batch.target_mask).sum())
            count += batch.target_mask.sum()
        return total / count


# ---------------------------------------------------------------------------
# Persistence

def save_style_vae(path: str | Path, model: StyleVae, bins: AttributeBins,
                   step: int = 0, adam: AdamState | None = None,
                   train_k_crop: int | None = None) -> None:
    config = {f.name: getattr(model.cfg, f.name) for f in fields(ModelConfig)}
    config["rhym_cutoffs"] = ",".join(f"{c:.8g}" for c in bins.rhym_cutoffs)
    config["poly_cutoffs"] = ",".join(f"{c:.8g}" for c in bins.poly_cutoffs)
    if train_k_crop is not None:
        config["train_k_crop"] = train_k_crop
    params = {name: p.data for name, p in model.ps.params.items()}
    save_checkpoint(path, config, params, step=step, adam=adam)


def load_style_vae(path: str | Path) -> tuple[StyleVae, AttributeBins, int, AdamState]:
    """The returned model carries ``train_k_crop`` (the crop length it was
    trained on), the natural sliding-window size for inference."""
    config, params, step, adam = load_checkpoint(path)
    bins = AttributeBins(
        tuple(float(x) for x in config.pop("rhym_cutoffs").split(",")),
        tuple(float(x) for x in config.pop("poly_cutoffs").split(",")),
    )
    train_k_crop = int(config.pop("train_k_crop", 0)) or None
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in config:
            continue
        raw = config[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    model = StyleVae(ModelConfig(**kwargs), np.random.default_rng(0))
    model.ps.load(params)
    model.train_k_crop = train_k_crop or model.cfg.max_k
    return model, bins, step, adam


# ---------------------------------------------------------------------------
# Training loop

def train_step(model: StyleVae, batch: Batch, step: int, adam: AdamState,
               cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """One teacher-forced update; returns the logged stats."""
    beta = beta_schedule(step, cfg)
    lr = lr_schedule(step, cfg.lr)
    for p in model.parameters():
        p.zero_grad()
    loss, stats = model.forward_loss(batch, beta, cfg.free_bits, rng)
    backward(loss)
    adam_step(model.parameters(), adam, lr)
    stats["lr"] = lr
    stats["loss"] = float(loss.data)
    return stats


def train_vae(model: StyleVae, samples: list[Sample], cfg: TrainConfig,
              pad_id: int, bos_id: int, eos_id: int,
              pitch_id_range: tuple[int, int],
              log_path: str | Path | None = None,
              log_every: int = 100,
              progress: bool = False) -> AdamState:
    """Train for cfg.steps steps over random crops of the corpus."""
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState()
    log_lines: list[str] = []
    t0 = time.time()
    for step in range(cfg.steps):
        idx = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)),
                         replace=len(samples) < cfg.batch_size)
        crops = [crop_and_transpose(samples[i], cfg, rng, pitch_id_range) for i in idx]
        batch = collate(crops, pad_id, bos_id, eos_id, cfg.t_max)
        stats = train_step(model, batch, step, adam, cfg, rng)
        if step % log_every == 0 or step == cfg.steps - 1:
            line = (
                f"{step}\t{stats['lr']:.3e}\t{stats['beta']:.3f}\t"
                f"{stats['nll_per_token']:.4f}\t{stats['kl_raw_per_dim']:.4f}\t"
                f"{stats['kl_clamped_per_bar']:.4f}"
            )
            log_lines.append(line)
            if progress:
                print(f"[{time.time() - t0:7.1f}s] step {line}", flush=True)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(line + "\n")
    return adam
