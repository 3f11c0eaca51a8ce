// Pure layout math for the piano-roll canvas: note cells to pixel rects,
// pitch-class colors, and bar-digit positions. Kept DOM-free so it is
// directly unit-testable.

import type { NoteCell, Pianoroll } from "./api.js";

export interface GridGeometry {
  cellWidth: number;   // pixels per sub-beat column
  cellHeight: number;  // pixels per semitone row
  pitchMin: number;
  pitchMax: number;
  labelBand: number;   // vertical pixels reserved for attribute digits
}

export const DEFAULT_GEOMETRY: GridGeometry = {
  cellWidth: 7,
  cellHeight: 5,
  pitchMin: 22,
  pitchMax: 107,
  labelBand: 34,
};

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

// one distinguishable hue per chromatic pitch class (C, C#, ..., B)
export const PITCH_CLASS_COLORS = [
  "#e6194b", "#f58231", "#ffe119", "#bfef45", "#3cb44b", "#42d4f4",
  "#4363d8", "#911eb4", "#f032e6", "#a9a9a9", "#9a6324", "#469990",
];

export function noteColor(pitch: number): string {
  return PITCH_CLASS_COLORS[((pitch % 12) + 12) % 12];
}

export function columnOf(note: NoteCell, subBeatsPerBar: number): number {
  return note.bar * subBeatsPerBar + note.sub_beat;
}

export function noteRect(note: NoteCell, subBeatsPerBar: number,
                         geo: GridGeometry = DEFAULT_GEOMETRY): Rect {
  const col = columnOf(note, subBeatsPerBar);
  const spanSubBeats = Math.max((note.duration_units * subBeatsPerBar) / 16, 1);
  return {
    x: col * geo.cellWidth,
    y: geo.labelBand + (geo.pitchMax - note.pitch) * geo.cellHeight,
    w: spanSubBeats * geo.cellWidth,
    h: geo.cellHeight,
  };
}

export function canvasSize(roll: Pianoroll, geo: GridGeometry = DEFAULT_GEOMETRY): {
  width: number;
  height: number;
} {
  return {
    width: roll.n_bars * roll.sub_beats_per_bar * geo.cellWidth,
    height: geo.labelBand + (geo.pitchMax - geo.pitchMin + 1) * geo.cellHeight,
  };
}

export function barLineXs(roll: Pianoroll, geo: GridGeometry = DEFAULT_GEOMETRY): number[] {
  const xs: number[] = [];
  for (let b = 0; b <= roll.n_bars; b++) {
    xs.push(b * roll.sub_beats_per_bar * geo.cellWidth);
  }
  return xs;
}

export interface BarDigit {
  bar: number;
  x: number;        // left edge of the bar
  rhym: number;
  poly: number;
  highlight: boolean; // achieved differs from requested
}

/** Attribute digits drawn above each bar; a digit highlights when the
 * achieved class differs from the requested one (results only). */
export function barDigits(roll: Pianoroll, geo: GridGeometry = DEFAULT_GEOMETRY): BarDigit[] {
  return roll.attributes.map((a) => {
    const requestedR = roll.requested_rhym?.[a.bar];
    const requestedP = roll.requested_poly?.[a.bar];
    const highlight =
      (requestedR !== undefined && requestedR !== a.a_rhym) ||
      (requestedP !== undefined && requestedP !== a.a_poly);
    return {
      bar: a.bar,
      x: a.bar * roll.sub_beats_per_bar * geo.cellWidth,
      rhym: a.a_rhym,
      poly: a.a_poly,
      highlight,
    };
  });
}
