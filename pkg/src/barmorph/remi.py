"""Event-token vocabulary and conversion between quantized scores and token
sequences partitioned by bar.

The vocabulary follows the single-piano flavour of the REMI family: Bar(1),
Sub-beat(B), Tempo(54), Pitch(86), Velocity(24), Duration(16), Chord(133),
which totals 330 content tokens when B=16, plus PAD/BOS/EOS specials (PAD is
always id 0).  Tokens serialize to a text format of one token name per line;
``#``-prefixed lines are comments.
"""

from __future__ import annotations

from dataclasses import dataclass

from .midi_io import (
    DURATION_MAX_UNITS,
    N_TEMPO_BINS,
    N_VELOCITY_BINS,
    PITCH_MAX,
    PITCH_MIN,
    Note,
    QuantizedScore,
    tempo_class,
    tempo_value,
)

PAD, BOS, EOS = "PAD", "BOS", "EOS"

CHORD_ROOTS = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
CHORD_QUALITIES = (
    "maj", "min", "dim", "aug", "dom7", "maj7", "min7", "dim7", "hdim7",
    "sus2", "sus4",
)


class VocabMiss(KeyError):
    """A musical value falls outside the configured token ranges."""


class NoBars(ValueError):
    """Token stream contains no Bar token."""


@dataclass(frozen=True)
class Vocab:
    """Bijective token-name/id mapping.  Build with :func:`build_vocab`."""

    sub_beats_per_bar: int
    names: tuple[str, ...]
    ids: dict[str, int]

    def __len__(self) -> int:
        return len(self.names)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return self.ids[BOS]

    @property
    def eos_id(self) -> int:
        return self.ids[EOS]

    @property
    def bar_id(self) -> int:
        return self.ids["Bar"]

    @property
    def n_content(self) -> int:
        return len(self.names) - 3

    def id_of(self, name: str) -> int:
        try:
            return self.ids[name]
        except KeyError:
            raise VocabMiss(name) from None

    def name_of(self, token_id: int) -> str:
        return self.names[token_id]

    def family(self, token_id: int) -> str:
        """Event family of a token: 'Bar', 'SubBeat', 'Tempo', ... or 'Special'."""
        name = self.names[token_id]
        if name in (PAD, BOS, EOS):
            return "Special"
        return name.split("_", 1)[0] if "_" in name else name

    def value(self, token_id: int) -> int:
        """Numeric payload of a SubBeat/Tempo/Pitch/Velocity/Duration token."""
        return int(self.names[token_id].rsplit("_", 1)[1])


def build_vocab(sub_beats_per_bar: int = 16) -> Vocab:
    names: list[str] = [PAD, BOS, EOS, "Bar"]
    names += [f"SubBeat_{b}" for b in range(sub_beats_per_bar)]
    names += [f"Tempo_{tempo_value(c)}" for c in range(N_TEMPO_BINS)]
    names += [f"Pitch_{p}" for p in range(PITCH_MIN, PITCH_MAX + 1)]
    names += [f"Velocity_{v}" for v in range(N_VELOCITY_BINS)]
    names += [f"Duration_{d}" for d in range(1, DURATION_MAX_UNITS + 1)]
    names += [f"Chord_{root}_{quality}" for root in CHORD_ROOTS for quality in CHORD_QUALITIES]
    names += ["Chord_N_N"]
    return Vocab(sub_beats_per_bar, tuple(names), {n: i for i, n in enumerate(names)})


@dataclass
class TokenSeq:
    """Token ids plus the half-open bar spans I_1..I_K covering them."""

    tokens: list[int]
    bar_spans: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_bars(self) -> int:
        return len(self.bar_spans)

    def bar_tokens(self, k: int) -> list[int]:
        start, end = self.bar_spans[k]
        return self.tokens[start:end]


def bar_slices(tokens: list[int], vocab: Vocab) -> list[tuple[int, int]]:
    """Reconstruct bar spans from Bar-token positions alone."""
    bar_positions = [i for i, t in enumerate(tokens) if t == vocab.bar_id]
    if not bar_positions:
        raise NoBars("no Bar token in sequence")
    spans = []
    for i, start in enumerate(bar_positions):
        end = bar_positions[i + 1] if i + 1 < len(bar_positions) else len(tokens)
        spans.append((start, end))
    return spans


def tokenize(q: QuantizedScore, vocab: Vocab,
             chords: dict[tuple[int, int], str] | None = None) -> TokenSeq:
    """Emit the event stream for a quantized score.

    Per bar: Bar, then for each occupied sub-beat in ascending order a
    SubBeat token, a Tempo token when the tempo class changes there, an
    optional Chord token, and the notes at that position (ascending pitch)
    as Pitch/Velocity/Duration triplets.  Chord emission is off unless a
    ``{(bar, sub_beat): "Root_quality"}`` mapping is supplied.
    """
    if vocab.sub_beats_per_bar != q.sub_beats_per_bar:
        raise VocabMiss(
            f"vocab is for B={vocab.sub_beats_per_bar}, score has B={q.sub_beats_per_bar}"
        )
    tempo_at = {(bar, sub): cls for bar, sub, cls in q.tempo_changes}
    notes_at: dict[tuple[int, int], list[Note]] = {}
    for n in sorted(q.notes):
        notes_at.setdefault((n.bar, n.sub_beat), []).append(n)

    positions = set(notes_at) | set(tempo_at)
    if chords:
        positions |= set(chords)

    tokens: list[int] = []
    spans: list[tuple[int, int]] = []
    for bar in range(q.n_bars):
        start = len(tokens)
        tokens.append(vocab.bar_id)
        subs = sorted(s for b, s in positions if b == bar)
        for sub in subs:
            tokens.append(vocab.id_of(f"SubBeat_{sub}"))
            if (bar, sub) in tempo_at:
                tokens.append(vocab.id_of(f"Tempo_{tempo_value(tempo_at[bar, sub])}"))
            if chords and (bar, sub) in chords:
                tokens.append(vocab.id_of(f"Chord_{chords[bar, sub]}"))
            for n in notes_at.get((bar, sub), ()):
                tokens.append(vocab.id_of(f"Pitch_{n.pitch}"))
                tokens.append(vocab.id_of(f"Velocity_{n.velocity_class}"))
                tokens.append(vocab.id_of(f"Duration_{n.duration_units}"))
        spans.append((start, len(tokens)))
    return TokenSeq(tokens, spans)


def detokenize(seq: TokenSeq | list[int], vocab: Vocab) -> tuple[QuantizedScore, int]:
    """Rebuild a QuantizedScore; returns (score, skipped_fragments).

    Malformed fragments (a Pitch with no Velocity/Duration following, tokens
    before the first Bar, values with no positional context) are skipped and
    counted rather than raising.  Chord tokens carry no notes and are ignored.
    """
    tokens = seq.tokens if isinstance(seq, TokenSeq) else seq
    if vocab.bar_id not in tokens:
        raise NoBars("no Bar token in sequence")

    notes: list[Note] = []
    tempo_changes: list[tuple[int, int, int]] = []
    skipped = 0
    bar = -1
    sub = None
    last_tempo = None
    i = 0
    while i < len(tokens):
        fam = vocab.family(tokens[i])
        if fam == "Bar":
            bar += 1
            sub = None
            i += 1
        elif bar < 0 or fam == "Special":
            skipped += 1
            i += 1
        elif fam == "SubBeat":
            sub = vocab.value(tokens[i])
            i += 1
        elif fam == "Tempo":
            if sub is None:
                skipped += 1
            else:
                cls = tempo_class(float(vocab.value(tokens[i])))
                if cls != last_tempo:
                    tempo_changes.append((bar, sub, cls))
                    last_tempo = cls
            i += 1
        elif fam == "Chord":
            i += 1
        elif fam == "Pitch":
            if (
                sub is not None
                and i + 2 < len(tokens)
                and vocab.family(tokens[i + 1]) == "Velocity"
                and vocab.family(tokens[i + 2]) == "Duration"
            ):
                notes.append(
                    Note(
                        bar=bar,
                        sub_beat=sub,
                        pitch=vocab.value(tokens[i]),
                        velocity_class=vocab.value(tokens[i + 1]),
                        duration_units=vocab.value(tokens[i + 2]),
                    )
                )
                i += 3
            else:
                skipped += 1
                i += 1
        else:  # dangling Velocity/Duration
            skipped += 1
            i += 1

    notes.sort()
    return QuantizedScore(vocab.sub_beats_per_bar, notes, tempo_changes, bar + 1), skipped


# ---------------------------------------------------------------------------
# Token text format

def tokens_to_text(tokens: list[int], vocab: Vocab) -> str:
    """One token name per line."""
    return "\n".join(vocab.name_of(t) for t in tokens) + "\n"


def tokens_from_text(text: str, vocab: Vocab) -> list[int]:
    """Inverse of :func:`tokens_to_text`; '#' lines and blanks are ignored."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(vocab.id_of(line))
    return out
