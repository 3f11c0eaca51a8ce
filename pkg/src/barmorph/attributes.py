"""Bar-level musical attributes: rhythmic intensity and polyphony.

Raw scores per bar:

* rhythmic intensity = fraction of the bar's sub-beats carrying at least one
  note onset, in [0, 1];
* polyphony = average number of notes hit or held per sub-beat (a note with
  duration d occupies its onset sub-beat plus the d-1 following ones, spilling
  into later bars where it counts as a hold there).

Raw scores are mapped to 8 ordinal classes by empirical-octile cut-offs fitted
on a corpus.  Attribute tables serialize to a small CSV format, which doubles
as the override input for style transfer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .midi_io import Bar, QuantizedScore

N_CLASSES = 8

# Cut-offs published for the reference pop-piano corpus; useful as defaults
# when no corpus statistics are available.
REFERENCE_RHYM_CUTOFFS = (0.20, 0.25, 0.32, 0.38, 0.44, 0.50, 0.63)
REFERENCE_POLY_CUTOFFS = (2.63, 3.06, 3.50, 4.00, 4.63, 5.44, 6.44)


class DegenerateDistribution(ValueError):
    """Too few distinct raw scores to fit 8 bins."""


@dataclass(frozen=True)
class BarAttributes:
    s_rhym: float
    s_poly: float
    a_rhym: int
    a_poly: int


@dataclass(frozen=True)
class AttributeBins:
    """Seven ascending cut-offs per attribute."""

    rhym_cutoffs: tuple[float, ...]
    poly_cutoffs: tuple[float, ...]

    def __post_init__(self):
        for cuts in (self.rhym_cutoffs, self.poly_cutoffs):
            if len(cuts) != N_CLASSES - 1 or any(
                a >= b for a, b in zip(cuts, cuts[1:])
            ):
                raise ValueError(f"cut-offs must be 7 strictly ascending values: {cuts}")

    def classify_bar(self, s_rhym: float, s_poly: float) -> BarAttributes:
        return BarAttributes(
            s_rhym, s_poly,
            classify(s_rhym, self.rhym_cutoffs),
            classify(s_poly, self.poly_cutoffs),
        )


def reference_bins() -> AttributeBins:
    return AttributeBins(REFERENCE_RHYM_CUTOFFS, REFERENCE_POLY_CUTOFFS)


def _onset_counts(bar: Bar) -> np.ndarray:
    counts = np.zeros(bar.sub_beats, dtype=np.int64)
    for n in bar.notes:
        counts[n.sub_beat] += 1
    return counts


def rhythmic_intensity(bar: Bar, sub_beats: int | None = None) -> float:
    """Fraction of sub-beats with at least one onset."""
    B = sub_beats or bar.sub_beats
    return float(np.count_nonzero(_onset_counts(bar))) / B


def polyphony(bar: Bar, sub_beats: int | None = None) -> float:
    """Mean number of notes sounding (hit or held) per sub-beat."""
    B = sub_beats or bar.sub_beats
    sounding = _onset_counts(bar)
    for n in bar.notes:
        span = n.duration_units * B // 16
        hold_end = min(n.sub_beat + span, B)
        sounding[n.sub_beat + 1 : hold_end] += 1
    for carried in bar.carried:
        sounding[: min(carried, B)] += 1
    return float(sounding.sum()) / B


def score_attribute_raw(q: QuantizedScore) -> tuple[list[float], list[float]]:
    """Per-bar (s_rhym, s_poly) lists for a whole score."""
    bars = q.bars()
    return (
        [rhythmic_intensity(b) for b in bars],
        [polyphony(b) for b in bars],
    )


def score_attributes(q: QuantizedScore, bins: AttributeBins) -> list[BarAttributes]:
    rhym, poly = score_attribute_raw(q)
    return [bins.classify_bar(r, p) for r, p in zip(rhym, poly)]


def fit_bins(scores: list[float] | np.ndarray) -> tuple[float, ...]:
    """Octile cut-offs (1/8 .. 7/8 empirical quantiles, nearest-rank method).

    Heavily discrete data can make neighbouring octiles coincide; a colliding
    cut-off advances to the next distinct data value so the cut-offs stay
    strictly ascending while remaining empirical values.
    """
    values = np.sort(np.asarray(scores, dtype=np.float64))
    distinct = np.unique(values)
    if len(distinct) < N_CLASSES:
        raise DegenerateDistribution(
            f"need at least {N_CLASSES} distinct scores, got {len(distinct)}"
        )
    n = len(values)
    cuts: list[float] = []
    for j in range(1, N_CLASSES):
        rank = -(-n * j // N_CLASSES)  # ceil(n*j/8), 1-based nearest rank
        cut = float(values[rank - 1])
        if cuts and cut <= cuts[-1]:
            higher = distinct[np.searchsorted(distinct, cuts[-1], side="right"):]
            if len(higher) < N_CLASSES - 1 - len(cuts) + 1:
                raise DegenerateDistribution(f"quantiles collide beyond repair: {cuts}")
            cut = float(higher[0])
        cuts.append(cut)
    return tuple(cuts)


def classify(score: float, cutoffs: tuple[float, ...]) -> int:
    """Ordinal class 0..7: the number of cut-offs <= score."""
    return int(np.searchsorted(np.asarray(cutoffs), score, side="right"))


# ---------------------------------------------------------------------------
# Attribute file format: "bar_index,s_rhym,s_poly,a_rhym,a_poly" per line.

def attributes_to_text(rows: list[BarAttributes]) -> str:
    lines = ["bar_index,s_rhym,s_poly,a_rhym,a_poly"]
    for i, a in enumerate(rows):
        lines.append(f"{i},{a.s_rhym:.6f},{a.s_poly:.6f},{a.a_rhym},{a.a_poly}")
    return "\n".join(lines) + "\n"


def attributes_from_text(text: str) -> list[BarAttributes]:
    rows: list[BarAttributes] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("bar_index"):
            continue
        idx, s_rhym, s_poly, a_rhym, a_poly = line.split(",")
        if int(idx) != len(rows):
            raise ValueError(f"non-contiguous bar index {idx} at row {len(rows)}")
        rows.append(BarAttributes(float(s_rhym), float(s_poly), int(a_rhym), int(a_poly)))
    return rows
