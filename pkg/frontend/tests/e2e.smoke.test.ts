// End-to-end smoke against a live service with a trained checkpoint.
//
// Gated on BARMORPH_SERVICE_URL and BARMORPH_TEST_MIDI because it needs a
// running backend; see the repository README for the full recipe. The check:
// upload a piece, raise every rhythm lane by 2, generate, and require the
// result's achieved rhythm classes to be >= the original's in at least 60%
// of bars.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { Client } from "../src/api.js";
import { AttributeLane } from "../src/lanes.js";

const serviceUrl = process.env.BARMORPH_SERVICE_URL;
const midiPath = process.env.BARMORPH_TEST_MIDI;
const enabled = Boolean(serviceUrl && midiPath);

describe.runIf(enabled)("end-to-end smoke", () => {
  it("raising all rhythm lanes by 2 raises achieved classes in >= 60% of bars", async () => {
    const client = new Client(serviceUrl!);
    const status = await client.status();
    expect(status.checkpoint_loaded).toBe(true);

    const midi = readFileSync(midiPath!);
    const pieceId = await client.uploadPiece(midi);
    const original = await client.pianoroll(pieceId);
    expect(original.n_bars).toBeGreaterThan(0);

    const rhym = new AttributeLane(original.attributes.map((a) => a.a_rhym));
    const poly = new AttributeLane(original.attributes.map((a) => a.a_poly));
    rhym.stepAll(2);

    const jobId = await client.requestTransfer(pieceId, rhym.values, poly.values, 1234);
    const job = await client.pollJob(jobId, 500, 600_000);
    expect(job.status).toBe("done");
    expect(job.achieved_rhym).toBeDefined();

    const originalClasses = original.attributes.map((a) => a.a_rhym);
    const achieved = job.achieved_rhym!;
    const k = Math.min(originalClasses.length, achieved.length);
    let raisedOrEqual = 0;
    for (let i = 0; i < k; i++) {
      if (achieved[i] >= originalClasses[i]) raisedOrEqual++;
    }
    const fraction = raisedOrEqual / k;
    console.log(
      `achieved >= original in ${raisedOrEqual}/${k} bars (${(fraction * 100).toFixed(0)}%)`,
    );
    expect(fraction).toBeGreaterThanOrEqual(0.6);

    // the rendered result view carries both requested and achieved classes
    const resultRoll = await client.pianoroll(job.result_id!);
    expect(resultRoll.requested_rhym).toEqual(job.requested_rhym);
  }, 900_000);
});

describe.runIf(!enabled)("end-to-end smoke (skipped)", () => {
  it.skip("set BARMORPH_SERVICE_URL and BARMORPH_TEST_MIDI to run", () => {});
});
