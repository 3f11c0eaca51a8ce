import struct

import pytest

from barmorph import midi_io as mio
from barmorph.midi_io import (
    MalformedFile,
    Note,
    NoteEvent,
    QuantizedScore,
    RawScore,
    UnsupportedFormat,
    UnsupportedMeter,
    parse_midi,
    quantize,
    tempo_class,
    tempo_value,
    velocity_class,
    write_midi,
)
from conftest import random_quantized_score


def smf_bytes(track_events: bytes, fmt: int = 0, tpq: int = 480, n_tracks: int = 1) -> bytes:
    header = b"MThd" + struct.pack(">IHHH", 6, fmt, n_tracks, tpq)
    body = track_events + b"\x00\xff\x2f\x00"
    return header + b"MTrk" + struct.pack(">I", len(body)) + body


class TestParse:
    def test_single_note(self):
        # C4 on at tick 0, off at tick 480; checked against a manual dump of
        # the same bytes (delta 0, 90 3C 64; delta 480 = 0x83 0x60, 80 3C 40).
        events = bytes([0x00, 0x90, 0x3C, 0x64]) + b"\x83\x60" + bytes([0x80, 0x3C, 0x40])
        raw = parse_midi(smf_bytes(events))
        assert raw.ticks_per_quarter == 480
        assert raw.note_count() == 1
        note = raw.tracks[0][0]
        assert (note.pitch, note.onset_ticks, note.duration_ticks) == (60, 0, 480)
        assert note.velocity == 0x64

    def test_empty_track(self):
        raw = parse_midi(smf_bytes(b""))
        assert raw.note_count() == 0

    def test_velocity_zero_note_on_is_release(self):
        events = (
            bytes([0x00, 0x90, 0x3C, 0x64])
            + b"\x83\x60" + bytes([0x90, 0x3C, 0x00])  # vel-0 on = off
        )
        raw = parse_midi(smf_bytes(events))
        assert raw.note_count() == 1
        assert raw.tracks[0][0].duration_ticks == 480

    def test_running_status(self):
        events = (
            bytes([0x00, 0x90, 0x3C, 0x64])
            + bytes([0x00, 0x40, 0x64])          # running status: E4 on
            + b"\x83\x60" + bytes([0x3C, 0x00])  # running status: C4 off
            + bytes([0x00, 0x40, 0x00])          # running status: E4 off
        )
        raw = parse_midi(smf_bytes(events))
        assert raw.note_count() == 2
        assert sorted(n.pitch for n in raw.tracks[0]) == [60, 64]

    def test_unmatched_note_on_closed_at_track_end(self):
        events = bytes([0x00, 0x90, 0x3C, 0x64]) + b"\x83\x60" + bytes([0x90, 0x40, 0x50])
        raw = parse_midi(smf_bytes(events))
        assert raw.note_count() == 2
        dangling = [n for n in raw.tracks[0] if n.pitch == 0x40][0]
        assert dangling.duration_ticks >= 1

    def test_tempo_and_timesig_meta(self):
        events = (
            bytes([0x00, 0xFF, 0x58, 0x04, 3, 2, 24, 8])  # 3/4
            + bytes([0x00, 0xFF, 0x51, 0x03]) + (500000).to_bytes(3, "big")
        )
        raw = parse_midi(smf_bytes(events))
        assert raw.time_signature == (3, 4)
        assert raw.tempo_changes == [(0, pytest.approx(120.0))]

    def test_format2_rejected(self):
        with pytest.raises(UnsupportedFormat):
            parse_midi(smf_bytes(b"", fmt=2))

    def test_malformed_header(self):
        with pytest.raises(MalformedFile):
            parse_midi(b"MThx" + b"\x00" * 20)
        with pytest.raises(MalformedFile):
            parse_midi(smf_bytes(b"")[:10])

    def test_missing_track_chunk(self):
        with pytest.raises(MalformedFile):
            parse_midi(b"MThd" + struct.pack(">IHHH", 6, 1, 2, 480))


class TestQuantize:
    def raw(self, notes, tempo=(), sig=(4, 4), tpq=480):
        return RawScore([list(notes)], list(tempo), sig, tpq)

    def test_onset_snaps_to_nearest_sub_beat(self):
        raw = self.raw([NoteEvent(470, 480, 60, 64)])
        q = quantize(raw, 16)
        assert q.notes[0].bar == 0
        assert q.notes[0].sub_beat == 4

    def test_onset_tie_rounds_down(self):
        # 60 ticks at tpq 480 is exactly half a sub-beat.
        raw = self.raw([NoteEvent(60, 480, 60, 64)])
        assert quantize(raw, 16).notes[0].sub_beat == 0

    def test_duration_minimum_one_unit(self):
        raw = self.raw([NoteEvent(0, 10, 60, 64)])
        assert quantize(raw, 16).notes[0].duration_units == 1

    def test_duration_capped_at_16(self):
        raw = self.raw([NoteEvent(0, 480 * 16, 60, 64)])
        assert quantize(raw, 16).notes[0].duration_units == 16

    def test_velocity_clamping(self):
        raw = self.raw([NoteEvent(0, 480, 60, 127), NoteEvent(0, 480, 61, 1)])
        classes = {n.pitch: n.velocity_class for n in quantize(raw, 16).notes}
        assert classes[60] == 23
        assert classes[61] == 0

    def test_pitch_octave_folding(self):
        raw = self.raw([NoteEvent(0, 480, 10, 64), NoteEvent(0, 480, 120, 64)])
        pitches = sorted(n.pitch for n in quantize(raw, 16).notes)
        assert pitches[0] == 10 + 12
        assert pitches[1] == 120 - 24
        assert all(mio.PITCH_MIN <= p <= mio.PITCH_MAX for p in pitches)

    def test_non_44_rejected(self):
        with pytest.raises(UnsupportedMeter):
            quantize(self.raw([NoteEvent(0, 480, 60, 64)], sig=(3, 4)), 16)

    def test_note_conservation(self, rng):
        notes = [
            NoteEvent(int(rng.integers(0, 4000)), int(rng.integers(1, 2000)),
                      int(rng.integers(0, 128)), int(rng.integers(1, 128)))
            for _ in range(100)
        ]
        q = quantize(self.raw(notes), 16)
        assert len(q.notes) == 100

    def test_default_tempo_inserted(self):
        q = quantize(self.raw([NoteEvent(0, 480, 60, 64)]), 16)
        assert q.tempo_changes[0] == (0, 0, tempo_class(120))

    def test_b32_grid(self):
        # a 32nd note offset lands on sub-beat 1 at B=32, sub-beat 0 (tie down) at B=16
        raw = self.raw([NoteEvent(60, 480, 60, 64)])
        assert quantize(raw, 32).notes[0].sub_beat == 1
        assert quantize(raw, 16).notes[0].sub_beat == 0

    def test_idempotence_on_grid_aligned_input(self, rng):
        q = random_quantized_score(rng)
        raw = parse_midi(write_midi(q))
        q2 = quantize(raw, 16)
        raw2 = parse_midi(write_midi(q2))
        assert quantize(raw2, 16) == q2 == q


class TestTempoBins:
    def test_54_classes_cover_32_to_224(self):
        assert len(mio.TEMPO_BIN_VALUES) == 54
        assert mio.TEMPO_BIN_VALUES[0] == 32
        assert mio.TEMPO_BIN_VALUES[-1] == 224

    def test_class_value_round_trip(self):
        for c in range(54):
            assert tempo_class(float(tempo_value(c))) == c

    def test_out_of_range_clamps(self):
        assert tempo_class(10.0) == 0
        assert tempo_class(500.0) == 53


class TestWrite:
    def test_empty_score(self):
        q = QuantizedScore(16, [], [], 0)
        data = write_midi(q)
        raw = parse_midi(data)
        assert raw.note_count() == 0
        assert quantize(raw, 16) == q

    def test_single_note_reparses(self):
        q = QuantizedScore(16, [Note(0, 3, 72, 10, 2)], [(0, 0, 29)], 1)
        raw = parse_midi(write_midi(q))
        assert raw.note_count() == 1
        assert raw.tracks[0][0].pitch == 72

    def test_round_trip_fixed_point(self, rng):
        for _ in range(50):
            q = random_quantized_score(rng)
            assert quantize(parse_midi(write_midi(q)), 16) == q

    def test_round_trip_b32(self, rng):
        for _ in range(20):
            q = random_quantized_score(rng, sub_beats=32)
            assert quantize(parse_midi(write_midi(q)), 32) == q


class TestBars:
    def test_holds_carry_across_barline(self):
        # whole-bar note starting mid-bar spills 8 sub-beats into bar 1
        q = QuantizedScore(16, [Note(0, 8, 60, 12, 16)], [(0, 0, 29)], 2)
        bars = q.bars()
        assert bars[0].notes == (q.notes[0],)
        assert bars[1].carried == (8,)

    def test_carried_capped_at_bar_length(self):
        q = QuantizedScore(32, [Note(0, 31, 60, 12, 16)], [(0, 0, 29)], 2)
        # 16 units at B=32 span 32 sub-beats: 1 in bar 0, 31 carried
        assert q.bars()[1].carried == (31,)

    def test_velocity_class_bounds(self):
        assert velocity_class(40) == 0
        assert velocity_class(86) == 23
        assert velocity_class(39) == 0
        assert velocity_class(127) == 23
