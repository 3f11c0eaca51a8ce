"""Standard MIDI File parsing/writing and quantization to a sixteenth-note grid.

Reads SMF formats 0 and 1 (big-endian chunks, variable-length delta times),
matches note-on/note-off pairs into notes, and snaps everything onto a grid of
``B`` sub-beats per 4/4 bar (B=16 for single-track piano mode, B=32 for the
multi-track mode).  Pitches are folded by octaves into 22..107, velocities
binned into 24 classes of width 2 over 40..86, and tempi binned into 54
classes between 32 and 224 bpm (3-bpm steps up to 158, 6-bpm steps above).

Only 4/4 material is supported; anything else raises ``UnsupportedMeter``.
Sustain pedal and other controller events are ignored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

PITCH_MIN = 22
PITCH_MAX = 107
N_PITCHES = PITCH_MAX - PITCH_MIN + 1  # 86

VELOCITY_BASE = 40
VELOCITY_BIN_WIDTH = 2
N_VELOCITY_BINS = 24

DURATION_MAX_UNITS = 16  # sixteenth-note multiples

# 54 tempo classes: 3-bpm steps over 32..158, then 6-bpm steps over 164..224.
TEMPO_BIN_VALUES = tuple(range(32, 159, 3)) + tuple(range(164, 225, 6))
N_TEMPO_BINS = len(TEMPO_BIN_VALUES)
assert N_TEMPO_BINS == 54

DEFAULT_BPM = 120.0
WRITE_TICKS_PER_QUARTER = 480


class MalformedFile(ValueError):
    """The byte stream is not a structurally valid SMF."""


class UnsupportedFormat(ValueError):
    """SMF variant we do not handle (type 2, SMPTE time division)."""


class UnsupportedMeter(ValueError):
    """Time signature other than 4/4."""


def velocity_class(velocity: int) -> int:
    """MIDI velocity 1..127 -> class 0..23 (width-2 bins from 40, clamped)."""
    return min(max((velocity - VELOCITY_BASE) // VELOCITY_BIN_WIDTH, 0), N_VELOCITY_BINS - 1)


def velocity_value(cls: int) -> int:
    """Representative MIDI velocity for a class (lower bin edge)."""
    return VELOCITY_BASE + VELOCITY_BIN_WIDTH * cls


def tempo_class(bpm: float) -> int:
    """Nearest tempo bin; ties and out-of-range values resolve to the lower bin."""
    best = 0
    best_dist = abs(bpm - TEMPO_BIN_VALUES[0])
    for i, v in enumerate(TEMPO_BIN_VALUES[1:], start=1):
        d = abs(bpm - v)
        if d < best_dist:
            best, best_dist = i, d
    return best


def tempo_value(cls: int) -> int:
    return TEMPO_BIN_VALUES[cls]


@dataclass(frozen=True)
class NoteEvent:
    """A raw (unquantized) note in MIDI ticks."""

    onset_ticks: int
    duration_ticks: int
    pitch: int
    velocity: int

    def __post_init__(self):
        if self.onset_ticks < 0:
            raise ValueError(f"negative onset: {self.onset_ticks}")
        if self.duration_ticks <= 0:
            raise ValueError(f"non-positive duration: {self.duration_ticks}")


@dataclass
class RawScore:
    """Parsed MIDI content before quantization."""

    tracks: list[list[NoteEvent]]
    tempo_changes: list[tuple[int, float]]  # (tick, bpm)
    time_signature: tuple[int, int]
    ticks_per_quarter: int
    end_tick: int = 0  # end-of-track position; trailing silence counts as bars

    def note_count(self) -> int:
        return sum(len(t) for t in self.tracks)


@dataclass(frozen=True, order=True)
class Note:
    """A grid-aligned note."""

    bar: int
    sub_beat: int
    pitch: int
    velocity_class: int
    duration_units: int


@dataclass(frozen=True)
class Bar:
    """One bar's view: its own onsets plus holds carried in from earlier bars.

    ``carried`` lists, per note still sounding at the barline, how many
    sub-beats of this bar it continues to occupy.
    """

    index: int
    notes: tuple[Note, ...]
    carried: tuple[int, ...]
    sub_beats: int


@dataclass
class QuantizedScore:
    """Notes and tempo changes on the sub-beat grid, partitioned into bars."""

    sub_beats_per_bar: int
    notes: list[Note]
    tempo_changes: list[tuple[int, int, int]]  # (bar, sub_beat, tempo_class)
    n_bars: int

    def __post_init__(self):
        for n in self.notes:
            if not (0 <= n.sub_beat < self.sub_beats_per_bar):
                raise ValueError(f"sub_beat {n.sub_beat} outside bar grid")
            if not (PITCH_MIN <= n.pitch <= PITCH_MAX):
                raise ValueError(f"pitch {n.pitch} outside {PITCH_MIN}..{PITCH_MAX}")
            if not (1 <= n.duration_units <= DURATION_MAX_UNITS):
                raise ValueError(f"duration_units {n.duration_units} out of range")
            if n.bar >= self.n_bars:
                raise ValueError("note beyond declared bar count")

    def note_span_sub_beats(self, note: Note) -> int:
        """Sub-beats a note occupies (duration is in sixteenths regardless of B)."""
        return note.duration_units * self.sub_beats_per_bar // 16

    def bars(self) -> list[Bar]:
        """Partition into per-bar views, propagating holds across barlines."""
        B = self.sub_beats_per_bar
        per_bar: list[list[Note]] = [[] for _ in range(self.n_bars)]
        carried: list[list[int]] = [[] for _ in range(self.n_bars)]
        for n in self.notes:
            per_bar[n.bar].append(n)
            remaining = self.note_span_sub_beats(n) - (B - n.sub_beat)
            k = n.bar + 1
            while remaining >= 1 and k < self.n_bars:
                carried[k].append(min(remaining, B))
                remaining -= B
                k += 1
        return [
            Bar(i, tuple(per_bar[i]), tuple(carried[i]), B)
            for i in range(self.n_bars)
        ]


def _round_ties_down(numer: int, denom: int) -> int:
    """Nearest integer to numer/denom, exact halves rounding toward zero."""
    q, r = divmod(numer, denom)
    return q + (1 if 2 * r > denom else 0)


def _fold_pitch(pitch: int) -> int:
    while pitch < PITCH_MIN:
        pitch += 12
    while pitch > PITCH_MAX:
        pitch -= 12
    return pitch


def quantize(raw: RawScore, sub_beats_per_bar: int = 16) -> QuantizedScore:
    """Snap a RawScore onto the metric grid.

    Onsets round to the nearest sub-beat (ties toward the earlier one),
    durations to the nearest positive multiple of a sixteenth, clamped to
    1..16 units.  Raises ``UnsupportedMeter`` for non-4/4 scores.
    """
    B = sub_beats_per_bar
    if B not in (16, 32):
        raise ValueError(f"sub_beats_per_bar must be 16 or 32, got {B}")
    if raw.time_signature != (4, 4):
        raise UnsupportedMeter(f"only 4/4 is supported, got {raw.time_signature}")
    tpq = raw.ticks_per_quarter
    ticks_per_bar_numer = 4 * tpq  # 4 quarters per bar

    notes = []
    for track in raw.tracks:
        for ev in track:
            pos = _round_ties_down(ev.onset_ticks * B, ticks_per_bar_numer)
            units = _round_ties_down(ev.duration_ticks * 4, tpq)
            units = min(max(units, 1), DURATION_MAX_UNITS)
            notes.append(
                Note(
                    bar=pos // B,
                    sub_beat=pos % B,
                    pitch=_fold_pitch(ev.pitch),
                    velocity_class=velocity_class(ev.velocity),
                    duration_units=units,
                )
            )
    notes.sort()

    # Tempo changes: snap, keep the last change per grid position, drop repeats.
    tempo_changes: list[tuple[int, int, int]] = []
    if notes or raw.tempo_changes:
        by_pos: dict[int, int] = {}
        for tick, bpm in sorted(raw.tempo_changes, key=lambda tc: tc[0]):
            pos = _round_ties_down(tick * B, ticks_per_bar_numer)
            by_pos[pos] = tempo_class(bpm)
        if 0 not in by_pos:
            by_pos[0] = tempo_class(DEFAULT_BPM)
        last = None
        for pos in sorted(by_pos):
            cls = by_pos[pos]
            if cls != last:
                tempo_changes.append((pos // B, pos % B, cls))
                last = cls

    # Bars cover everything that sounds: onsets, holds from spilling notes,
    # tempo changes, and declared trailing silence up to end-of-track.
    n_bars = 0
    for n in notes:
        span = n.duration_units * B // 16
        last_pos = n.bar * B + n.sub_beat + span - 1
        n_bars = max(n_bars, last_pos // B + 1)
    if tempo_changes:
        n_bars = max(n_bars, max(t[0] for t in tempo_changes) + 1)
    if raw.end_tick > 0:
        n_bars = max(n_bars, -(-raw.end_tick // ticks_per_bar_numer))
    return QuantizedScore(B, notes, tempo_changes, n_bars)


# ---------------------------------------------------------------------------
# SMF reading

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def read(self, n: int) -> bytes:
        if self.remaining() < n:
            raise MalformedFile("unexpected end of data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_u8(self) -> int:
        return self.read(1)[0]

    def read_u16(self) -> int:
        return struct.unpack(">H", self.read(2))[0]

    def read_u32(self) -> int:
        return struct.unpack(">I", self.read(4))[0]

    def read_vlq(self) -> int:
        value = 0
        for _ in range(4):
            b = self.read_u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MalformedFile("variable-length quantity longer than 4 bytes")


def _parse_track(chunk: bytes, tempo_out: list[tuple[int, float]],
                 timesig_out: list[tuple[int, int]]) -> tuple[list[NoteEvent], int]:
    """Decode one MTrk chunk into finished notes; collect tempo/meter metas."""
    r = _Reader(chunk)
    tick = 0
    running_status = None
    # (channel, pitch) -> FIFO of (onset_tick, velocity) for open notes
    open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    notes: list[NoteEvent] = []

    def close_note(channel: int, pitch: int, end_tick: int):
        queue = open_notes.get((channel, pitch))
        if queue:
            onset, vel = queue.pop(0)
            notes.append(NoteEvent(onset, max(end_tick - onset, 1), pitch, vel))

    while r.remaining() > 0:
        tick += r.read_vlq()
        status = r.read_u8()
        if status < 0x80:  # running status: first data byte already read
            if running_status is None:
                raise MalformedFile("data byte with no running status")
            first_data = status
            status = running_status
        else:
            first_data = None

        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):  # two data bytes
            running_status = status
            d1 = first_data if first_data is not None else r.read_u8()
            d2 = r.read_u8()
            if kind == 0x90 and d2 > 0:
                open_notes.setdefault((channel, d1), []).append((tick, d2))
            elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                close_note(channel, d1, tick)
        elif kind in (0xC0, 0xD0):  # one data byte
            running_status = status
            if first_data is None:
                r.read_u8()
        elif status in (0xF0, 0xF7):  # sysex: length-prefixed payload
            running_status = None
            r.read(r.read_vlq())
        elif status == 0xFF:  # meta
            running_status = None
            meta_type = r.read_u8()
            payload = r.read(r.read_vlq())
            if meta_type == 0x51 and len(payload) == 3:
                usec_per_quarter = int.from_bytes(payload, "big")
                if usec_per_quarter > 0:
                    tempo_out.append((tick, 60_000_000.0 / usec_per_quarter))
            elif meta_type == 0x58 and len(payload) >= 2:
                timesig_out.append((payload[0], 1 << payload[1]))
            elif meta_type == 0x2F:
                break
        else:
            raise MalformedFile(f"unexpected status byte 0x{status:02x}")

    # Close anything still sounding at the end of the track.
    for (channel, pitch), queue in open_notes.items():
        for onset, vel in queue:
            notes.append(NoteEvent(onset, max(tick - onset, 1), pitch, vel))
    return notes, tick


def parse_midi(data: bytes) -> RawScore:
    """Parse an SMF byte stream (formats 0 and 1) into a RawScore."""
    r = _Reader(data)
    if r.read(4) != b"MThd":
        raise MalformedFile("missing MThd header")
    header_len = r.read_u32()
    if header_len < 6:
        raise MalformedFile(f"header length {header_len} < 6")
    fmt = r.read_u16()
    n_tracks = r.read_u16()
    division = r.read_u16()
    r.read(header_len - 6)
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF type {fmt} not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division not supported")
    if division == 0:
        raise MalformedFile("zero ticks per quarter")

    tracks: list[list[NoteEvent]] = []
    tempo_changes: list[tuple[int, float]] = []
    timesigs: list[tuple[int, int]] = []
    end_tick = 0
    while len(tracks) < n_tracks:
        if r.remaining() < 8:
            raise MalformedFile(f"expected {n_tracks} tracks, found {len(tracks)}")
        chunk_type = r.read(4)
        chunk_len = r.read_u32()
        chunk = r.read(chunk_len)
        if chunk_type == b"MTrk":
            notes, track_end = _parse_track(chunk, tempo_changes, timesigs)
            tracks.append(notes)
            end_tick = max(end_tick, track_end)
        # Unknown chunk types are skipped per the SMF spec.

    tempo_changes.sort(key=lambda tc: tc[0])
    time_signature = timesigs[0] if timesigs else (4, 4)
    return RawScore(tracks, tempo_changes, time_signature, division, end_tick)


# ---------------------------------------------------------------------------
# SMF writing

def _encode_vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_midi(q: QuantizedScore) -> bytes:
    """Emit a format-0 SMF that survives parse + quantize unchanged.

    Overlapping notes on the same pitch are routed to distinct MIDI channels
    (note-on/off events carry no identity, so a single channel could not
    represent them unambiguously).
    """
    tpq = WRITE_TICKS_PER_QUARTER
    ticks_per_sub = 4 * tpq // q.sub_beats_per_bar
    ticks_per_unit = tpq // 4  # sixteenth note

    # (tick, priority, payload): meter first, then tempo, note-offs, note-ons.
    events: list[tuple[int, int, bytes]] = []
    if q.n_bars > 0:
        events.append((0, 0, bytes([0xFF, 0x58, 0x04, 4, 2, 24, 8])))
    for bar, sub, cls in q.tempo_changes:
        usec = round(60_000_000 / tempo_value(cls))
        tick = (bar * q.sub_beats_per_bar + sub) * ticks_per_sub
        events.append((tick, 1, bytes([0xFF, 0x51, 0x03]) + usec.to_bytes(3, "big")))

    busy_until: dict[tuple[int, int], int] = {}  # (channel, pitch) -> end tick
    for n in sorted(q.notes):
        on_tick = (n.bar * q.sub_beats_per_bar + n.sub_beat) * ticks_per_sub
        off_tick = on_tick + n.duration_units * ticks_per_unit
        channel = 15
        for c in range(16):
            if busy_until.get((c, n.pitch), 0) <= on_tick:
                channel = c
                break
        busy_until[(channel, n.pitch)] = off_tick
        vel = velocity_value(n.velocity_class)
        events.append((on_tick, 3, bytes([0x90 | channel, n.pitch, vel])))
        events.append((off_tick, 2, bytes([0x80 | channel, n.pitch, 0x40])))
    events.sort(key=lambda e: (e[0], e[1]))

    body = bytearray()
    last_tick = 0
    for tick, _, payload in events:
        body += _encode_vlq(tick - last_tick)
        body += payload
        last_tick = tick
    # End-of-track at the bar-aligned end so trailing empty bars survive.
    track_end = q.n_bars * q.sub_beats_per_bar * ticks_per_sub
    body += _encode_vlq(max(track_end - last_tick, 0)) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, tpq)
    track = b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
    return header + track
