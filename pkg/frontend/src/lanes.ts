// Per-bar attribute lanes: stepper values 0..7 for rhythmic intensity and
// polyphony, plus dirty tracking against the last generation request.

export const N_CLASSES = 8;

export function clampClass(value: number): number {
  return Math.min(Math.max(Math.round(value), 0), N_CLASSES - 1);
}

export class AttributeLane {
  values: number[];
  private lastGenerated: number[] | null = null;

  constructor(initial: number[]) {
    this.values = initial.map(clampClass);
  }

  get length(): number {
    return this.values.length;
  }

  set(bar: number, value: number): void {
    if (bar < 0 || bar >= this.values.length) {
      throw new RangeError(`bar ${bar} outside lane of ${this.values.length}`);
    }
    this.values[bar] = clampClass(value);
  }

  step(bar: number, delta: number): void {
    this.set(bar, this.values[bar] + delta);
  }

  stepAll(delta: number): void {
    this.values = this.values.map((v) => clampClass(v + delta));
  }

  reset(values: number[]): void {
    this.values = values.map(clampClass);
  }

  markGenerated(): void {
    this.lastGenerated = [...this.values];
  }

  /** Bars edited since the last generation (all bars if never generated). */
  dirtyBars(): number[] {
    if (this.lastGenerated === null) {
      return this.values.map((_, i) => i);
    }
    const last = this.lastGenerated;
    return this.values.map((v, i) => (v !== last[i] ? i : -1)).filter((i) => i >= 0);
  }

  get isDirty(): boolean {
    return this.dirtyBars().length > 0;
  }
}
