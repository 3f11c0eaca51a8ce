// Typed client for the style-transfer service. All UI data comes from here;
// the client never recomputes attribute classes itself.

export interface NoteCell {
  bar: number;
  sub_beat: number;
  pitch: number;
  velocity_class: number;
  duration_units: number;
}

export interface BarAttribute {
  bar: number;
  a_rhym: number;
  a_poly: number;
}

export interface Pianoroll {
  id: string;
  n_bars: number;
  sub_beats_per_bar: number;
  notes: NoteCell[];
  attributes: BarAttribute[];
  kind?: string;
  piece_id?: string;
  requested_rhym?: number[];
  requested_poly?: number[];
}

export interface JobState {
  job_id: string;
  piece_id: string;
  status: "queued" | "running" | "done" | "failed";
  result_id: string | null;
  requested_rhym: number[];
  requested_poly: number[];
  achieved_rhym?: number[];
  achieved_poly?: number[];
  error?: string;
}

export interface ServiceStatus {
  checkpoint_loaded: boolean;
  jobs: number;
  sub_beats_per_bar: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.text();
  if (!resp.ok) {
    let message = body;
    try {
      message = JSON.parse(body).error ?? body;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, message);
  }
  return JSON.parse(body) as T;
}

export class Client {
  constructor(public baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  status(): Promise<ServiceStatus> {
    return this.fetchFn(`${this.baseUrl}/status`).then((r) => asJson<ServiceStatus>(r));
  }

  async uploadPiece(midi: ArrayBuffer | Uint8Array): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/pieces`, {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: midi as BodyInit,
    });
    const { id } = await asJson<{ id: string }>(resp);
    return id;
  }

  pianoroll(recordId: string): Promise<Pianoroll> {
    return this.fetchFn(`${this.baseUrl}/pieces/${recordId}/pianoroll`).then((r) =>
      asJson<Pianoroll>(r),
    );
  }

  async requestTransfer(
    pieceId: string,
    rhym: number[],
    poly: number[],
    seed: number,
  ): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/transfers`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      // absolute classes: the service treats bare integers as "=n"
      body: JSON.stringify({
        piece_id: pieceId,
        rhym: rhym.map((v) => `=${v}`),
        poly: poly.map((v) => `=${v}`),
        seed,
      }),
    });
    const { job_id } = await asJson<{ job_id: string }>(resp);
    return job_id;
  }

  job(jobId: string): Promise<JobState> {
    return this.fetchFn(`${this.baseUrl}/transfers/${jobId}`).then((r) =>
      asJson<JobState>(r),
    );
  }

  async pollJob(
    jobId: string,
    intervalMs = 500,
    timeoutMs = 600_000,
    sleep: (ms: number) => Promise<void> = (ms) => new Promise((res) => setTimeout(res, ms)),
  ): Promise<JobState> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const state = await this.job(jobId);
      if (state.status === "done" || state.status === "failed") return state;
      if (Date.now() > deadline) throw new ApiError(408, `job ${jobId} timed out`);
      await sleep(intervalMs);
    }
  }

  midiUrl(recordId: string): string {
    return `${this.baseUrl}/pieces/${recordId}/midi`;
  }
}
