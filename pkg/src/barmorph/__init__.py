"""barmorph: bar-level controllable style transfer for symbolic music.

A numpy-based toolkit covering the whole pipeline: MIDI parsing and grid
quantization, event tokenization, bar attributes (rhythmic intensity and
polyphony), a small reverse-mode autodiff core, transformer encoder/decoder
with segment-level conditioning, a VAE trained with free bits and cyclical
KL annealing, nucleus-sampled generation with sliding windows, and the
evaluation metric suite.
"""

from .attributes import (
    AttributeBins,
    BarAttributes,
    classify,
    fit_bins,
    polyphony,
    reference_bins,
    rhythmic_intensity,
    score_attributes,
)
from .corpus import Corpus, generate_synthetic, ingest, load_corpus, save_corpus
from .decode import SamplingConfig, TransferResult, apply_overrides, nucleus_sample, style_transfer
from .metrics import dist_ssm, kl_quality, perplexity, sim_chr, sim_grv, sim_ins, spearman
from .midi_io import Note, QuantizedScore, RawScore, parse_midi, quantize, write_midi
from .remi import TokenSeq, Vocab, bar_slices, build_vocab, detokenize, tokenize
from .transformer import BarEncoder, ConditionedDecoder, ModelConfig
from .vae import StyleVae, TrainConfig, load_style_vae, save_style_vae, train_vae

__version__ = "0.1.0"

__all__ = [
    "AttributeBins", "BarAttributes", "BarEncoder", "ConditionedDecoder",
    "Corpus", "ModelConfig", "Note", "QuantizedScore", "RawScore",
    "SamplingConfig", "StyleVae", "TokenSeq", "TrainConfig", "TransferResult",
    "Vocab", "apply_overrides", "bar_slices", "build_vocab", "classify",
    "detokenize", "dist_ssm", "fit_bins", "generate_synthetic", "ingest",
    "kl_quality", "load_corpus", "load_style_vae", "nucleus_sample",
    "parse_midi", "perplexity", "polyphony", "quantize", "reference_bins",
    "rhythmic_intensity", "save_corpus", "save_style_vae", "score_attributes",
    "sim_chr", "sim_grv", "sim_ins", "spearman", "style_transfer", "tokenize",
    "train_vae", "write_midi",
]
