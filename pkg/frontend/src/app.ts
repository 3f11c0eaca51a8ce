// UI wiring: upload, piano-roll canvases, attribute-lane steppers, generate
// with job polling, and A/B preview playback. The original piece record is
// never mutated; every generation is a fresh result record.

import { ApiError, Client, Pianoroll } from "./api.js";
import { barDigits, barLineXs, canvasSize, DEFAULT_GEOMETRY, noteColor, noteRect } from "./grid.js";
import { AttributeLane } from "./lanes.js";
import { AbPlayer, makeWebAudioSink } from "./playback.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function drawRoll(canvas: HTMLCanvasElement, roll: Pianoroll): void {
  const geo = DEFAULT_GEOMETRY;
  const { width, height } = canvasSize(roll, geo);
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "#14141c";
  ctx.fillRect(0, 0, width, height);

  ctx.strokeStyle = "#2c2c3a";
  for (const x of barLineXs(roll, geo)) {
    ctx.beginPath();
    ctx.moveTo(x + 0.5, geo.labelBand);
    ctx.lineTo(x + 0.5, height);
    ctx.stroke();
  }
  for (const n of roll.notes) {
    const r = noteRect(n, roll.sub_beats_per_bar, geo);
    ctx.fillStyle = noteColor(n.pitch);
    ctx.fillRect(r.x, r.y, Math.max(r.w - 1, 1), Math.max(r.h - 1, 1));
  }
  ctx.font = "12px monospace";
  ctx.textBaseline = "top";
  for (const d of barDigits(roll, geo)) {
    ctx.fillStyle = d.highlight ? "#ff5c5c" : "#d0d0e0";
    ctx.fillText(String(d.rhym), d.x + 3, 2);
    ctx.fillStyle = d.highlight ? "#ff9c5c" : "#8cb0d0";
    ctx.fillText(String(d.poly), d.x + 3, 16);
  }
}

function banner(text: string, kind: "info" | "error" = "info"): void {
  const el = $("banner");
  el.textContent = text;
  el.className = kind;
  el.style.display = text ? "block" : "none";
}

interface LaneRenderer {
  root: HTMLElement;
  lane: AttributeLane;
  render(): void;
}

function makeLaneRow(root: HTMLElement, lane: AttributeLane, onChange: () => void): LaneRenderer {
  const render = () => {
    root.textContent = "";
    lane.values.forEach((v, bar) => {
      const cell = document.createElement("div");
      cell.className = "lane-cell" + (lane.dirtyBars().includes(bar) ? " dirty" : "");
      const up = document.createElement("button");
      up.textContent = "+";
      up.onclick = () => {
        lane.step(bar, 1);
        onChange();
      };
      const digit = document.createElement("span");
      digit.textContent = String(v);
      const down = document.createElement("button");
      down.textContent = "-";
      down.onclick = () => {
        lane.step(bar, -1);
        onChange();
      };
      cell.append(up, digit, down);
      root.append(cell);
    });
  };
  return { root, lane, render };
}

async function main(): Promise<void> {
  const client = new Client(
    (window as { BARMORPH_API?: string }).BARMORPH_API ?? "http://127.0.0.1:8765",
  );
  let pieceId: string | null = null;
  let original: Pianoroll | null = null;
  let result: Pianoroll | null = null;
  let rhymLane = new AttributeLane([]);
  let polyLane = new AttributeLane([]);
  let laneRows: LaneRenderer[] = [];
  let checkpointLoaded = false;

  const sink = makeWebAudioSink();
  if (!sink) banner("audio unavailable: visual-only mode");
  let player: AbPlayer | null = null;

  const generateBtn = $<HTMLButtonElement>("generate");

  try {
    const status = await client.status();
    checkpointLoaded = status.checkpoint_loaded;
  } catch (err) {
    banner(`service unreachable: ${err}`, "error");
  }
  const refreshGenerate = () => {
    generateBtn.disabled = !pieceId || !checkpointLoaded;
    generateBtn.title = checkpointLoaded
      ? ""
      : "the server has no checkpoint loaded (POST /admin/checkpoint first)";
    $("no-ckpt-note").style.display = checkpointLoaded ? "none" : "inline";
  };
  refreshGenerate();

  const renderLanes = () => laneRows.forEach((r) => r.render());

  $<HTMLInputElement>("midi-file").onchange = async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      pieceId = await client.uploadPiece(await file.arrayBuffer());
      original = await client.pianoroll(pieceId);
      result = null;
      drawRoll($<HTMLCanvasElement>("roll-a"), original);
      $<HTMLCanvasElement>("roll-b").height = 0;
      rhymLane = new AttributeLane(original.attributes.map((a) => a.a_rhym));
      polyLane = new AttributeLane(original.attributes.map((a) => a.a_poly));
      laneRows = [
        makeLaneRow($("lane-rhym"), rhymLane, renderLanes),
        makeLaneRow($("lane-poly"), polyLane, renderLanes),
      ];
      renderLanes();
      player = sink ? new AbPlayer(sink, original, null) : null;
      banner(`loaded ${file.name}: ${original.n_bars} bars`);
    } catch (err) {
      banner(`upload failed: ${err}`, "error");
    }
    refreshGenerate();
  };

  $<HTMLButtonElement>("rhym-all-up").onclick = () => {
    rhymLane.stepAll(1);
    renderLanes();
  };
  $<HTMLButtonElement>("rhym-all-down").onclick = () => {
    rhymLane.stepAll(-1);
    renderLanes();
  };

  generateBtn.onclick = async () => {
    if (!pieceId) return;
    generateBtn.disabled = true;
    banner("generating...");
    try {
      const seed = Math.floor(Math.random() * 1e9);
      const jobId = await client.requestTransfer(pieceId, rhymLane.values, polyLane.values, seed);
      const job = await client.pollJob(jobId);
      if (job.status === "failed" || !job.result_id) {
        banner(`generation failed: ${job.error ?? "unknown"}`, "error");
      } else {
        result = await client.pianoroll(job.result_id);
        drawRoll($<HTMLCanvasElement>("roll-b"), result);
        rhymLane.markGenerated();
        polyLane.markGenerated();
        renderLanes();
        player?.setRollB(result);
        banner(`done: result ${job.result_id}`);
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        checkpointLoaded = false;
        banner("no checkpoint on the server; load one and retry", "error");
      } else {
        banner(`transfer failed: ${err}`, "error");
      }
    }
    refreshGenerate();
  };

  $<HTMLButtonElement>("play").onclick = () => player?.play(player.currentBar());
  $<HTMLButtonElement>("stop").onclick = () => player?.stop();
  $<HTMLButtonElement>("side-a").onclick = () => player?.switchTo("a");
  $<HTMLButtonElement>("side-b").onclick = () => player?.switchTo("b");
}

main().catch((err) => banner(`startup failed: ${err}`, "error"));
