import numpy as np
import pytest

from barmorph.midi_io import (
    DURATION_MAX_UNITS,
    N_TEMPO_BINS,
    N_VELOCITY_BINS,
    PITCH_MAX,
    PITCH_MIN,
    Note,
    QuantizedScore,
)


def random_quantized_score(rng: np.random.Generator, n_bars: int | None = None,
                           sub_beats: int = 16) -> QuantizedScore:
    """Uniformly random but structurally valid score, for round-trip tests."""
    if n_bars is None:
        n_bars = int(rng.integers(1, 9))
    notes = []
    for bar in range(n_bars):
        for _ in range(int(rng.integers(0, 9))):
            notes.append(
                Note(
                    bar=bar,
                    sub_beat=int(rng.integers(0, sub_beats)),
                    pitch=int(rng.integers(PITCH_MIN, PITCH_MAX + 1)),
                    velocity_class=int(rng.integers(0, N_VELOCITY_BINS)),
                    duration_units=int(rng.integers(1, DURATION_MAX_UNITS + 1)),
                )
            )
    notes.sort()
    tempo_changes = [(0, 0, int(rng.integers(0, N_TEMPO_BINS)))]
    for bar in range(1, n_bars):
        if rng.random() < 0.2:
            cls = int(rng.integers(0, N_TEMPO_BINS))
            if cls != tempo_changes[-1][2]:
                tempo_changes.append((bar, int(rng.integers(0, sub_beats)), cls))
    # canonical bar count also covers holds spilling past the last barline
    for n in notes:
        span = n.duration_units * sub_beats // 16
        n_bars = max(n_bars, (n.bar * sub_beats + n.sub_beat + span - 1) // sub_beats + 1)
    return QuantizedScore(sub_beats, notes, tempo_changes, n_bars)


@pytest.fixture
def rng():
    return np.random.default_rng(0xBA12)
