"""HTTP + JSON service for tokenization, bar attributes, and style transfer.

Routes:

* ``POST /pieces``               MIDI bytes (octet-stream) -> 201 {"id"}
* ``GET  /pieces/{id}``          record with the per-bar attribute table
* ``GET  /pieces/{id}/pianoroll`` grid projection for UI rendering
* ``GET  /pieces/{id}/midi``     SMF bytes
* ``POST /transfers``            {"piece_id", "rhym", "poly", "seed"} -> job id
* ``GET  /transfers/{id}``       job status; includes result id when done
* ``GET  /transfers/{id}/midi``  SMF bytes of the finished generation
* ``POST /admin/checkpoint``     {"path"} -> hot-swap the inference model

Results are stored as piece-like records, so every piece route also serves
transfer outputs.  Persistence is a flat on-disk store (one directory per
record); the job queue is FIFO with a configurable worker count.  In-flight
jobs keep the model snapshot they started with when a new checkpoint loads.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .attributes import (
    AttributeBins,
    attributes_from_text,
    attributes_to_text,
    reference_bins,
    score_attributes,
)
from .decode import SamplingConfig, apply_overrides, style_transfer
from .midi_io import MalformedFile, UnsupportedFormat, UnsupportedMeter, parse_midi, quantize, write_midi
from .remi import TokenSeq, bar_slices, build_vocab, detokenize, tokenize, tokens_from_text, tokens_to_text
from .vae import StyleVae, load_style_vae


@dataclass
class TransferJob:
    job_id: str
    piece_id: str
    a_rhym: list[int]
    a_poly: list[int]
    seed: int
    status: str = "queued"            # queued -> running -> done | failed
    result_id: str | None = None
    error: str | None = None
    achieved_rhym: list[int] = field(default_factory=list)
    achieved_poly: list[int] = field(default_factory=list)


class Store:
    """One directory per record: midi bytes, token text, attribute CSV, meta."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record_dir(self, record_id: str) -> Path:
        return self.root / record_id

    def exists(self, record_id: str) -> bool:
        return (self.root / record_id / "meta.json").exists()

    def put(self, record_id: str, midi: bytes, tokens_text: str, attrs_text: str,
            meta: dict) -> None:
        with self._lock:
            d = self.root / record_id
            d.mkdir(parents=True, exist_ok=True)
            (d / "record.mid").write_bytes(midi)
            (d / "tokens.txt").write_text(tokens_text)
            (d / "attrs.csv").write_text(attrs_text)
            (d / "meta.json").write_text(json.dumps(meta, indent=1))

    def meta(self, record_id: str) -> dict:
        return json.loads((self.root / record_id / "meta.json").read_text())

    def midi(self, record_id: str) -> bytes:
        return (self.root / record_id / "record.mid").read_bytes()

    def tokens_text(self, record_id: str) -> str:
        return (self.root / record_id / "tokens.txt").read_text()

    def attrs_text(self, record_id: str) -> str:
        return (self.root / record_id / "attrs.csv").read_text()


class App:
    """Service state: store, vocabulary, bins, model snapshot, job queue."""

    def __init__(self, store_dir: str | Path, checkpoint: str | Path | None = None,
                 workers: int = 1, sub_beats: int = 16):
        self.vocab = build_vocab(sub_beats)
        self.store = Store(store_dir)
        self.bins: AttributeBins = reference_bins()
        self.model: StyleVae | None = None
        self._model_lock = threading.Lock()
        self.jobs: dict[str, TransferJob] = {}
        self._jobs_lock = threading.Lock()
        self._queue: queue.Queue[str] = queue.Queue()
        self._workers = [
            threading.Thread(target=self._worker, daemon=True) for _ in range(workers)
        ]
        for w in self._workers:
            w.start()
        if checkpoint is not None:
            self.load_checkpoint(checkpoint)

    def load_checkpoint(self, path: str | Path) -> None:
        model, bins, _, _ = load_style_vae(path)
        with self._model_lock:
            self.model = model
            self.bins = bins

    def snapshot(self) -> tuple[StyleVae | None, AttributeBins]:
        with self._model_lock:
            return self.model, self.bins

    # -- operations ----------------------------------------------------------

    def upload_piece(self, midi_bytes: bytes) -> str:
        q = quantize(parse_midi(midi_bytes), self.vocab.sub_beats_per_bar)
        if q.n_bars == 0:
            raise MalformedFile("no musical content")
        seq = tokenize(q, self.vocab)
        _, bins = self.snapshot()
        attrs = score_attributes(q, bins)
        record_id = uuid.uuid4().hex[:12]
        self.store.put(
            record_id, write_midi(q), tokens_to_text(seq.tokens, self.vocab),
            attributes_to_text(attrs),
            {"id": record_id, "kind": "piece", "n_bars": q.n_bars,
             "created": time.time()},
        )
        return record_id

    def request_transfer(self, piece_id: str, rhym_overrides, poly_overrides,
                         seed: int) -> str:
        model, bins = self.snapshot()
        if model is None:
            raise NoCheckpoint("no checkpoint loaded")
        if not self.store.exists(piece_id):
            raise KeyError(piece_id)
        attrs = attributes_from_text(self.store.attrs_text(piece_id))
        current_rhym = [a.a_rhym for a in attrs]
        current_poly = [a.a_poly for a in attrs]
        try:
            a_rhym = apply_overrides(current_rhym, rhym_overrides)
            a_poly = apply_overrides(current_poly, poly_overrides)
        except (ValueError, KeyError) as exc:
            raise BadOverrides(str(exc)) from exc
        job = TransferJob(uuid.uuid4().hex[:12], piece_id, a_rhym, a_poly, seed)
        with self._jobs_lock:
            self.jobs[job.job_id] = job
        self._queue.put(job.job_id)
        return job.job_id

    def _worker(self) -> None:
        while True:
            job_id = self._queue.get()
            with self._jobs_lock:
                job = self.jobs[job_id]
                job.status = "running"
            try:
                self._run_job(job)
                job.status = "done"
            except Exception as exc:  # noqa: BLE001 - job failure is a state
                job.error = f"{type(exc).__name__}: {exc}"
                job.status = "failed"
            finally:
                self._queue.task_done()

    def _run_job(self, job: TransferJob) -> None:
        model, bins = self.snapshot()  # jobs finish on the snapshot they start with
        tokens = tokens_from_text(self.store.tokens_text(job.piece_id), self.vocab)
        seq = TokenSeq(tokens, bar_slices(tokens, self.vocab))
        sampling = SamplingConfig(seed=job.seed)
        window = getattr(model, "train_k_crop", model.cfg.max_k)
        res = style_transfer(model, self.vocab, seq, job.a_rhym, job.a_poly,
                             sampling, window_bars=window)
        gen_q, _ = detokenize(res.seq, self.vocab)
        achieved = score_attributes(gen_q, bins)
        result_id = uuid.uuid4().hex[:12]
        self.store.put(
            result_id, write_midi(gen_q),
            tokens_to_text(res.seq.tokens, self.vocab),
            attributes_to_text(achieved),
            {"id": result_id, "kind": "result", "piece_id": job.piece_id,
             "n_bars": gen_q.n_bars, "created": time.time(),
             "requested_rhym": job.a_rhym, "requested_poly": job.a_poly,
             "truncated_bars": res.truncated_bars},
        )
        job.result_id = result_id
        job.achieved_rhym = [a.a_rhym for a in achieved]
        job.achieved_poly = [a.a_poly for a in achieved]

    def piece_payload(self, record_id: str) -> dict:
        meta = self.store.meta(record_id)
        attrs = attributes_from_text(self.store.attrs_text(record_id))
        meta["attributes"] = [
            {"bar": i, "s_rhym": a.s_rhym, "s_poly": a.s_poly,
             "a_rhym": a.a_rhym, "a_poly": a.a_poly}
            for i, a in enumerate(attrs)
        ]
        return meta

    def pianoroll_payload(self, record_id: str) -> dict:
        meta = self.store.meta(record_id)
        q = quantize(parse_midi(self.store.midi(record_id)),
                     self.vocab.sub_beats_per_bar)
        attrs = attributes_from_text(self.store.attrs_text(record_id))
        payload = {
            "id": record_id,
            "n_bars": q.n_bars,
            "sub_beats_per_bar": q.sub_beats_per_bar,
            "notes": [
                {"bar": n.bar, "sub_beat": n.sub_beat, "pitch": n.pitch,
                 "velocity_class": n.velocity_class,
                 "duration_units": n.duration_units}
                for n in q.notes
            ],
            "attributes": [
                {"bar": i, "a_rhym": a.a_rhym, "a_poly": a.a_poly}
                for i, a in enumerate(attrs)
            ],
        }
        for key in ("requested_rhym", "requested_poly", "kind", "piece_id"):
            if key in meta:
                payload[key] = meta[key]
        return payload

    def job_payload(self, job_id: str) -> dict:
        with self._jobs_lock:
            job = self.jobs[job_id]
        out = {"job_id": job.job_id, "piece_id": job.piece_id,
               "status": job.status, "result_id": job.result_id,
               "requested_rhym": job.a_rhym, "requested_poly": job.a_poly}
        if job.status == "done":
            out["achieved_rhym"] = job.achieved_rhym
            out["achieved_poly"] = job.achieved_poly
        if job.error:
            out["error"] = job.error
        return out


class NoCheckpoint(RuntimeError):
    pass


class BadOverrides(ValueError):
    pass


class _Handler(BaseHTTPRequestHandler):
    app: App = None  # set by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, payload: dict | bytes,
              content_type: str = "application/json") -> None:
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str) -> None:
        self._send(code, {"error": message})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length)

    def do_OPTIONS(self):  # CORS preflight for the browser UI
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_POST(self):
        app = self.app
        try:
            if self.path == "/pieces":
                piece_id = app.upload_piece(self._body())
                self._send(201, {"id": piece_id})
            elif self.path == "/transfers":
                req = json.loads(self._body() or b"{}")
                job_id = app.request_transfer(
                    req.get("piece_id", ""), req.get("rhym"), req.get("poly"),
                    int(req.get("seed", 0)),
                )
                self._send(201, {"job_id": job_id})
            elif self.path == "/admin/checkpoint":
                req = json.loads(self._body() or b"{}")
                app.load_checkpoint(req["path"])
                self._send(200, {"status": "loaded", "path": req["path"]})
            else:
                self._error(404, "unknown route")
        except (MalformedFile, UnsupportedFormat) as exc:
            self._error(400, str(exc))
        except UnsupportedMeter as exc:
            self._error(422, str(exc))
        except BadOverrides as exc:
            self._error(422, str(exc))
        except NoCheckpoint as exc:
            self._error(409, str(exc))
        except KeyError as exc:
            self._error(404, f"not found: {exc}")
        except (json.JSONDecodeError, ValueError) as exc:
            self._error(400, str(exc))
        except Exception as exc:  # noqa: BLE001
            self._error(500, f"{type(exc).__name__}: {exc}")

    def do_GET(self):
        app = self.app
        parts = [p for p in self.path.split("/") if p]
        try:
            if parts == ["status"]:
                model, _ = app.snapshot()
                with app._jobs_lock:
                    n_jobs = len(app.jobs)
                return self._send(200, {
                    "checkpoint_loaded": model is not None,
                    "jobs": n_jobs,
                    "sub_beats_per_bar": app.vocab.sub_beats_per_bar,
                })
            if len(parts) >= 2 and parts[0] == "pieces":
                record_id = parts[1]
                if not app.store.exists(record_id):
                    return self._error(404, f"no record {record_id}")
                if len(parts) == 2:
                    return self._send(200, app.piece_payload(record_id))
                if parts[2] == "pianoroll":
                    return self._send(200, app.pianoroll_payload(record_id))
                if parts[2] == "midi":
                    return self._send(200, app.store.midi(record_id), "audio/midi")
            elif len(parts) >= 2 and parts[0] == "transfers":
                job_id = parts[1]
                with app._jobs_lock:
                    known = job_id in app.jobs
                if not known:
                    return self._error(404, f"no job {job_id}")
                if len(parts) == 2:
                    return self._send(200, app.job_payload(job_id))
                if parts[2] == "midi":
                    payload = app.job_payload(job_id)
                    if payload["status"] != "done":
                        return self._error(409, f"job is {payload['status']}")
                    return self._send(200, app.store.midi(payload["result_id"]),
                                      "audio/midi")
            self._error(404, "unknown route")
        except Exception as exc:  # noqa: BLE001
            self._error(500, f"{type(exc).__name__}: {exc}")


def make_server(app: App, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"app": app})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(store_dir: str, checkpoint: str | None, host: str, port: int,
                  workers: int) -> None:
    app = App(store_dir, checkpoint=checkpoint, workers=workers)
    server = make_server(app, host, port)
    print(f"serving on http://{host}:{server.server_address[1]} "
          f"(store={store_dir}, checkpoint={'yes' if app.model else 'none'})")
    server.serve_forever()
