"""Desk-scale corpora: a synthetic pop-piano-like generator and a MIDI-folder
ingestion path, with deterministic train/valid/test splits.

The generator drives each piece with two independent per-bar envelopes, one
for rhythmic intensity and one for polyphony, realized as chord-tone voicings
over a random progression in a random key.  Onset count tracks the rhythm
envelope; voicing thickness and note duration track the polyphony envelope.
That construction guarantees the ground-truth attribute classes span all 8
bins and, crucially, that the two attributes vary independently, so a model
trained on the corpus has a clean control signal to learn.

On disk a corpus is a manifest plus one token file and one attribute file per
piece (the remi/attributes text formats).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attributes import (
    AttributeBins,
    BarAttributes,
    attributes_from_text,
    attributes_to_text,
    fit_bins,
    score_attribute_raw,
)
from .midi_io import (
    N_TEMPO_BINS,
    N_VELOCITY_BINS,
    Note,
    QuantizedScore,
    parse_midi,
    quantize,
)
from .remi import TokenSeq, Vocab, bar_slices, tokenize, tokens_from_text, tokens_to_text
from .vae import Sample


class EmptyCorpus(ValueError):
    pass


@dataclass
class CorpusPiece:
    piece_id: str
    split: str                      # train | valid | test
    source: str                     # synthetic | path of the ingested file
    seq: TokenSeq
    attrs: list[BarAttributes]

    def sample(self) -> Sample:
        return Sample(
            list(self.seq.tokens), list(self.seq.bar_spans),
            [a.a_rhym for a in self.attrs], [a.a_poly for a in self.attrs],
        )


@dataclass
class Corpus:
    pieces: list[CorpusPiece]
    bins: AttributeBins
    sub_beats_per_bar: int
    seed: int
    skipped: list[str]

    def of_split(self, split: str) -> list[CorpusPiece]:
        return [p for p in self.pieces if p.split == split]

    def samples(self, split: str) -> list[Sample]:
        return [p.sample() for p in self.of_split(split)]


def assign_splits(n: int, seed: int, fractions=(0.9, 0.05, 0.05)) -> list[str]:
    """Deterministic shuffle-based split; every split non-empty when n >= 3."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = max(int(round(n * fractions[1])), 1 if n >= 3 else 0)
    n_test = max(int(round(n * fractions[2])), 1 if n >= 3 else 0)
    labels = ["train"] * n
    for i in order[:n_valid]:
        labels[i] = "valid"
    for i in order[n_valid : n_valid + n_test]:
        labels[i] = "test"
    return labels


# ---------------------------------------------------------------------------
# Synthetic generation

_PROGRESSIONS = (
    (0, 5, 7, 0), (0, 7, 9, 5), (9, 5, 0, 7), (0, 4, 5, 7),
    (0, 9, 2, 7), (5, 0, 7, 0),
)
_MAJOR_TRIAD = (0, 4, 7)
_MINOR_TRIAD = (0, 3, 7)


def _envelope(rng: np.random.Generator, n_bars: int) -> np.ndarray:
    """Piecewise-constant 0..7 targets: section-like levels, uniform across
    the corpus so every class carries mass."""
    out = np.empty(n_bars, dtype=int)
    bar = 0
    while bar < n_bars:
        length = int(rng.integers(2, 6))
        level = int(rng.integers(0, 8))
        for i in range(bar, min(bar + length, n_bars)):
            out[i] = np.clip(level + rng.integers(-1, 2) * (rng.random() < 0.3), 0, 7)
        bar += length
    return out


def _chord_pitches(key: int, degree: int, minor: bool) -> list[int]:
    triad = _MINOR_TRIAD if minor else _MAJOR_TRIAD
    root = 48 + (key + degree) % 12
    return [root + i for i in triad]


def synthesize_score(rng: np.random.Generator, n_bars: int,
                     sub_beats: int = 16) -> QuantizedScore:
    """One piece: chord-tone voicings obeying two independent envelopes."""
    B = sub_beats
    key = int(rng.integers(0, 12))
    minor = bool(rng.integers(0, 2))
    progression = _PROGRESSIONS[int(rng.integers(0, len(_PROGRESSIONS)))]
    rhym_env = _envelope(rng, n_bars)
    poly_env = _envelope(rng, n_bars)
    base_velocity = int(rng.integers(6, 18))

    notes: list[Note] = []
    sixteenths_per_sub = 16 // B
    for bar in range(n_bars):
        chord = _chord_pitches(key, progression[bar % len(progression)], minor)
        occ_levels = 1 + round(1.3 * rhym_env[bar])
        n_occ = int(np.clip(occ_levels + rng.integers(-1, 2), 1, int(B * 0.7)))
        positions = [0] + sorted(
            rng.choice(np.arange(1, B), size=n_occ - 1, replace=False).tolist()
        )
        # per-bar sounding budget in note-sub-beats drives polyphony; long
        # overlapping sustains are preferred over thick voicings to keep the
        # token count per bar small
        target_poly = 0.3 + 0.6 * poly_env[bar] + rng.uniform(-0.15, 0.15)
        budget_per_onset = max(target_poly, 0.2) * B / n_occ
        max_span = 16 * B // 16  # sixteen sixteenths, in sub-beats
        for idx, pos in enumerate(positions):
            voices = int(np.clip(np.ceil(budget_per_onset / max_span), 1, 4))
            span = int(np.clip(round(budget_per_onset / voices), 1, max_span))
            span = min(span, n_bars * B - (bar * B + pos))  # pieces end cleanly
            dur_units = max(span * sixteenths_per_sub, 1) if B == 16 else max(span // 2, 1)
            octave_shift = int(rng.integers(-1, 2)) * 12
            for v in range(voices):
                pitch = chord[(idx + v) % 3] + 12 * (v // 3) + octave_shift
                pitch = int(np.clip(pitch, 22, 107))
                vel = int(np.clip(base_velocity + rng.integers(-2, 3), 0, N_VELOCITY_BINS - 1))
                notes.append(Note(bar, int(pos), pitch, vel, dur_units))

    # drop exact duplicates from voicing collisions, keep everything else
    notes = sorted(set(notes))
    tempo_changes = [(0, 0, int(rng.integers(10, N_TEMPO_BINS - 10)))]
    if n_bars > 4 and rng.random() < 0.3:
        change_bar = int(rng.integers(2, n_bars))
        cls = int(rng.integers(10, N_TEMPO_BINS - 10))
        if cls != tempo_changes[0][2]:
            tempo_changes.append((change_bar, 0, cls))
    n_total = n_bars
    for n in notes:
        span = n.duration_units * B // 16
        n_total = max(n_total, (n.bar * B + n.sub_beat + span - 1) // B + 1)
    return QuantizedScore(B, notes, tempo_changes, n_total)


def generate_synthetic(n_pieces: int, bars_per_piece: int, seed: int,
                       vocab: Vocab, fractions=(0.9, 0.05, 0.05)) -> Corpus:
    """Deterministic synthetic corpus with bins fitted on its own raw scores."""
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    rng = np.random.default_rng(seed)
    scores = [synthesize_score(rng, bars_per_piece, vocab.sub_beats_per_bar)
              for _ in range(n_pieces)]
    return _build_corpus(scores, ["synthetic"] * n_pieces, seed, vocab, fractions)


def _build_corpus(scores: list[QuantizedScore], sources: list[str], seed: int,
                  vocab: Vocab, fractions, skipped: list[str] | None = None) -> Corpus:
    raw_rhym, raw_poly = [], []
    per_piece_raw = []
    for q in scores:
        r, p = score_attribute_raw(q)
        per_piece_raw.append((r, p))
        raw_rhym += r
        raw_poly += p
    bins = AttributeBins(fit_bins(raw_rhym), fit_bins(raw_poly))

    splits = assign_splits(len(scores), seed, fractions)
    pieces = []
    for i, (q, (r, p)) in enumerate(zip(scores, per_piece_raw)):
        seq = tokenize(q, vocab)
        attrs = [bins.classify_bar(ri, pi) for ri, pi in zip(r, p)]
        pieces.append(CorpusPiece(f"piece{i:04d}", splits[i], sources[i], seq, attrs))
    return Corpus(pieces, bins, vocab.sub_beats_per_bar, seed, skipped or [])


def ingest(directory: str | Path, seed: int, vocab: Vocab,
           fractions=(0.9, 0.05, 0.05)) -> Corpus:
    """Parse every .mid/.midi file in a folder; unparseable files are skipped
    and reported on the corpus."""
    directory = Path(directory)
    scores, sources, skipped = [], [], []
    for path in sorted(directory.glob("*.mid")) + sorted(directory.glob("*.midi")):
        try:
            q = quantize(parse_midi(path.read_bytes()), vocab.sub_beats_per_bar)
            if q.n_bars == 0:
                raise ValueError("empty score")
            scores.append(q)
            sources.append(str(path))
        except Exception as exc:  # noqa: BLE001 - skip-and-report contract
            skipped.append(f"{path.name}: {exc}")
    if not scores:
        raise EmptyCorpus(f"no parseable MIDI files in {directory}")
    return _build_corpus(scores, sources, seed, vocab, fractions, skipped)


# ---------------------------------------------------------------------------
# On-disk layout: manifest + per-piece token/attribute files

def save_corpus(corpus: Corpus, directory: str | Path, vocab: Vocab) -> None:
    directory = Path(directory)
    (directory / "pieces").mkdir(parents=True, exist_ok=True)
    lines = [
        f"sub_beats_per_bar={corpus.sub_beats_per_bar}",
        f"seed={corpus.seed}",
        "rhym_cutoffs=" + ",".join(f"{c:.8g}" for c in corpus.bins.rhym_cutoffs),
        "poly_cutoffs=" + ",".join(f"{c:.8g}" for c in corpus.bins.poly_cutoffs),
    ]
    for skip in corpus.skipped:
        lines.append(f"skipped={skip}")
    for p in corpus.pieces:
        lines.append(f"piece={p.piece_id},{p.split},{p.source}")
        (directory / "pieces" / f"{p.piece_id}.tokens").write_text(
            tokens_to_text(p.seq.tokens, vocab)
        )
        (directory / "pieces" / f"{p.piece_id}.attrs").write_text(
            attributes_to_text(p.attrs)
        )
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_corpus(directory: str | Path, vocab: Vocab) -> Corpus:
    directory = Path(directory)
    manifest = (directory / "manifest.txt").read_text()
    sub_beats, seed = 16, 0
    rhym_cutoffs = poly_cutoffs = None
    rows: list[tuple[str, str, str]] = []
    skipped: list[str] = []
    for line in manifest.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key == "sub_beats_per_bar":
            sub_beats = int(value)
        elif key == "seed":
            seed = int(value)
        elif key == "rhym_cutoffs":
            rhym_cutoffs = tuple(float(x) for x in value.split(","))
        elif key == "poly_cutoffs":
            poly_cutoffs = tuple(float(x) for x in value.split(","))
        elif key == "skipped":
            skipped.append(value)
        elif key == "piece":
            piece_id, split, source = value.split(",", 2)
            rows.append((piece_id, split, source))
    if rhym_cutoffs is None or poly_cutoffs is None:
        raise ValueError("manifest missing attribute cut-offs")
    if vocab.sub_beats_per_bar != sub_beats:
        raise ValueError(f"corpus is B={sub_beats}, vocab is B={vocab.sub_beats_per_bar}")

    pieces = []
    for piece_id, split, source in rows:
        tokens = tokens_from_text(
            (directory / "pieces" / f"{piece_id}.tokens").read_text(), vocab
        )
        attrs = attributes_from_text(
            (directory / "pieces" / f"{piece_id}.attrs").read_text()
        )
        seq = TokenSeq(tokens, bar_slices(tokens, vocab))
        pieces.append(CorpusPiece(piece_id, split, source, seq, attrs))
    return Corpus(pieces, AttributeBins(rhym_cutoffs, poly_cutoffs), sub_beats, seed, skipped)
