// Additive-tone preview playback with A/B switching at the same bar
// position. The audio backend is injected behind a small interface so the
// scheduling logic tests without a real AudioContext (and the app degrades
// to visual-only mode when WebAudio is unavailable).

import type { Pianoroll } from "./api.js";

export interface ToneSink {
  readonly currentTime: number;
  playTone(freqHz: number, gain: number, startSec: number, durationSec: number): void;
  stopAll(): void;
}

export function pitchToFreq(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}

export function velocityToGain(velocityClass: number): number {
  // classes 0..23 span a gentle 0.2..0.8 range
  return 0.2 + (velocityClass / 23) * 0.6;
}

export interface ScheduledTone {
  freq: number;
  gain: number;
  startSec: number;
  durationSec: number;
}

/** Notes from `fromBar` onward as schedulable tones; time zero = fromBar. */
export function schedule(roll: Pianoroll, fromBar: number, bpm = 110): ScheduledTone[] {
  const secPerSubBeat = 60 / bpm / (roll.sub_beats_per_bar / 4);
  const startCol = fromBar * roll.sub_beats_per_bar;
  const out: ScheduledTone[] = [];
  for (const n of roll.notes) {
    const col = n.bar * roll.sub_beats_per_bar + n.sub_beat;
    if (col < startCol) continue;
    const spanSubBeats = Math.max((n.duration_units * roll.sub_beats_per_bar) / 16, 1);
    out.push({
      freq: pitchToFreq(n.pitch),
      gain: velocityToGain(n.velocity_class),
      startSec: (col - startCol) * secPerSubBeat,
      durationSec: spanSubBeats * secPerSubBeat,
    });
  }
  return out.sort((a, b) => a.startSec - b.startSec);
}

export function barDurationSec(roll: Pianoroll, bpm = 110): number {
  return (60 / bpm / (roll.sub_beats_per_bar / 4)) * roll.sub_beats_per_bar;
}

export class AbPlayer {
  private active: "a" | "b" = "a";
  private playing = false;
  private startedAt = 0;   // sink time when playback began
  private startBar = 0;

  constructor(
    private sink: ToneSink,
    private rollA: Pianoroll,
    private rollB: Pianoroll | null,
    private bpm = 110,
  ) {}

  get isPlaying(): boolean {
    return this.playing;
  }

  get activeSide(): "a" | "b" {
    return this.active;
  }

  /** Bar the cursor is in right now (fractional bars floor to the index). */
  currentBar(): number {
    if (!this.playing) return this.startBar;
    const elapsed = this.sink.currentTime - this.startedAt;
    const roll = this.active === "a" ? this.rollA : this.rollB!;
    return Math.min(
      this.startBar + Math.floor(elapsed / barDurationSec(roll, this.bpm)),
      roll.n_bars - 1,
    );
  }

  play(fromBar = 0): void {
    const roll = this.active === "a" ? this.rollA : this.rollB;
    if (!roll) return;
    this.sink.stopAll();
    this.startBar = Math.max(0, Math.min(fromBar, roll.n_bars - 1));
    this.startedAt = this.sink.currentTime;
    for (const t of schedule(roll, this.startBar, this.bpm)) {
      this.sink.playTone(t.freq, t.gain, this.startedAt + t.startSec, t.durationSec);
    }
    this.playing = true;
  }

  /** Swap sides mid-playback, continuing from the current bar. */
  switchTo(side: "a" | "b"): void {
    if (side === this.active) return;
    if (side === "b" && !this.rollB) return;
    const bar = this.currentBar();
    this.active = side;
    if (this.playing) {
      this.play(bar);
    } else {
      this.startBar = bar;
    }
  }

  setRollB(roll: Pianoroll | null): void {
    this.rollB = roll;
    if (roll === null && this.active === "b") {
      this.active = "a";
    }
  }

  stop(): void {
    this.sink.stopAll();
    this.playing = false;
    this.startBar = 0; // cursor resets
  }
}

/** WebAudio-backed sink; returns null where AudioContext is unavailable so
 * callers can fall back to visual-only mode. */
export function makeWebAudioSink(): ToneSink | null {
  const Ctor = (globalThis as { AudioContext?: new () => AudioContext }).AudioContext;
  if (!Ctor) return null;
  const ctx = new Ctor();
  let live: { osc: OscillatorNode; gain: GainNode }[] = [];
  return {
    get currentTime() {
      return ctx.currentTime;
    },
    playTone(freqHz, gain, startSec, durationSec) {
      const osc = ctx.createOscillator();
      const g = ctx.createGain();
      osc.type = "triangle";
      osc.frequency.value = freqHz;
      g.gain.setValueAtTime(0, startSec);
      g.gain.linearRampToValueAtTime(gain * 0.25, startSec + 0.01);
      g.gain.setValueAtTime(gain * 0.25, startSec + durationSec - 0.03);
      g.gain.linearRampToValueAtTime(0, startSec + durationSec);
      osc.connect(g).connect(ctx.destination);
      osc.start(startSec);
      osc.stop(startSec + durationSec);
      live.push({ osc, gain: g });
      osc.onended = () => {
        live = live.filter((t) => t.osc !== osc);
      };
    },
    stopAll() {
      for (const t of live) {
        try {
          t.osc.stop();
        } catch {
          /* already stopped */
        }
        t.gain.disconnect();
      }
      live = [];
    },
  };
}
