import { describe, expect, it } from "vitest";
import type { Pianoroll } from "../src/api.js";
import {
  AbPlayer,
  barDurationSec,
  pitchToFreq,
  schedule,
  ToneSink,
  velocityToGain,
} from "../src/playback.js";

class FakeSink implements ToneSink {
  now = 0;
  played: { freq: number; start: number }[] = [];
  stops = 0;
  get currentTime() {
    return this.now;
  }
  playTone(freqHz: number, _gain: number, startSec: number) {
    this.played.push({ freq: freqHz, start: startSec });
  }
  stopAll() {
    this.stops++;
  }
}

const roll = (bars: number, notes: Pianoroll["notes"]): Pianoroll => ({
  id: "r",
  n_bars: bars,
  sub_beats_per_bar: 16,
  notes,
  attributes: [],
});

const note = (bar: number, sub = 0, pitch = 60) => ({
  bar, sub_beat: sub, pitch, velocity_class: 12, duration_units: 2,
});

describe("tone mapping", () => {
  it("A4 is 440 Hz and octaves double", () => {
    expect(pitchToFreq(69)).toBeCloseTo(440);
    expect(pitchToFreq(81)).toBeCloseTo(880);
  });
  it("gain grows with velocity class within (0, 1)", () => {
    expect(velocityToGain(0)).toBeCloseTo(0.2);
    expect(velocityToGain(23)).toBeCloseTo(0.8);
  });
});

describe("schedule", () => {
  it("silent piece emits no tones", () => {
    expect(schedule(roll(2, []), 0)).toEqual([]);
  });

  it("time zero is the requested start bar", () => {
    const r = roll(3, [note(0), note(1), note(2)]);
    const tones = schedule(r, 1);
    expect(tones).toHaveLength(2);
    expect(tones[0].startSec).toBe(0);
    expect(tones[1].startSec).toBeCloseTo(barDurationSec(r));
  });

  it("notes before the start bar are skipped", () => {
    const tones = schedule(roll(2, [note(0, 4), note(1, 0)]), 1);
    expect(tones).toHaveLength(1);
  });
});

describe("AbPlayer", () => {
  it("switching A to B mid-playback keeps the bar position", () => {
    const sink = new FakeSink();
    const a = roll(8, [note(0), note(5)]);
    const b = roll(8, [note(5, 0, 72)]);
    const player = new AbPlayer(sink, a, b);
    player.play(0);
    sink.now = 5 * barDurationSec(a); // five bars later
    expect(player.currentBar()).toBe(5);
    player.switchTo("b");
    expect(player.activeSide).toBe("b");
    // B was rescheduled starting at bar 5: its note plays immediately
    const last = sink.played[sink.played.length - 1];
    expect(last.freq).toBeCloseTo(pitchToFreq(72));
    expect(last.start).toBeCloseTo(sink.now);
  });

  it("stop resets the cursor", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink, roll(4, [note(0)]), null);
    player.play(2);
    player.stop();
    expect(player.isPlaying).toBe(false);
    expect(player.currentBar()).toBe(0);
    expect(sink.stops).toBeGreaterThan(0);
  });

  it("cannot switch to B before a result exists", () => {
    const sink = new FakeSink();
    const player = new AbPlayer(sink, roll(4, [note(0)]), null);
    player.switchTo("b");
    expect(player.activeSide).toBe("a");
  });
});
