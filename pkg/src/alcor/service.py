"""HTTP facade over an interactive correction run.

Annotators lease one query at a time, answer it, and the loop advances a
round once every query in the batch is answered. All state mutation goes
through one lock, so concurrent annotators see linearizable answers: the
first valid answer to a query wins, later ones get 409.
"""

from __future__ import annotations

import io
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .core import Superpixel
from .loop import CorrectionQuery, CorrectionRun, QueryAnswer

DEFAULT_LEASE_SECONDS = 120.0


def render_image_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def render_overlay_png(segment: Superpixel, rep_x: int, rep_y: int,
                       shape: tuple[int, int]) -> bytes:
    """RGBA mask of the segment with the representative pixel marked."""
    h, w = shape
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[segment.ys, segment.xs] = (80, 220, 100, 110)
    for dy, dx in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
        y, x = rep_y + dy, rep_x + dx
        if 0 <= y < h and 0 <= x < w:
            rgba[y, x] = (255, 40, 40, 255)
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def segment_bbox(segment: Superpixel) -> list[int]:
    """Tight inclusive pixel box [x0, y0, x1, y1]."""
    return [int(segment.xs.min()), int(segment.ys.min()),
            int(segment.xs.max()), int(segment.ys.max())]


@dataclass
class _Lease:
    annotator: str
    expires: float


@dataclass
class InteractiveSession:
    """Serializes annotator traffic onto one CorrectionRun."""

    run: CorrectionRun
    session_id: str
    lease_seconds: float = DEFAULT_LEASE_SECONDS
    status: str = "active"
    queries: dict[str, CorrectionQuery] = field(default_factory=dict)
    answers: dict[str, QueryAnswer] = field(default_factory=dict)
    leases: dict[str, _Lease] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @classmethod
    def start(cls, run: CorrectionRun, session_id: str,
              lease_seconds: float = DEFAULT_LEASE_SECONDS) -> "InteractiveSession":
        session = cls(run=run, session_id=session_id, lease_seconds=lease_seconds)
        run.warm_start()
        session._issue_round()
        return session

    def _issue_round(self) -> None:
        queries = self.run.begin_round()
        if not queries:
            self.status = "finished"
            self.run.finish()
            self.queries, self.answers, self.leases = {}, {}, {}
            return
        self.queries = {q.query_id: q for q in queries}
        self.answers = {}
        self.leases = {}

    # -- api operations, all under the lock ---------------------------------

    def snapshot(self) -> dict:
        with self.lock:
            pending = len(self.queries) - len(self.answers)
            return {
                "session_id": self.session_id,
                "class_names": self.run.dataset.manifest.class_names,
                "round": self.run.round_index,
                "rounds_total": self.run.config.rounds,
                "batch_size": self.run.config.batch_size,
                "queries_pending": pending,
                "queries_answered": len(self.answers),
                "ledger": self.run.ledger.as_dict(),
                "epsilon": self.run.config.epsilon,
                "acquisition": self.run.config.kind.value,
                "status": self.status,
                "corrected_histogram": self.run.round_metrics()["corrected_histogram"],
            }

    def next_query(self, annotator: str) -> dict | None:
        with self.lock:
            if self.status != "active":
                return None
            now = time.monotonic()
            for qid in sorted(self.queries):
                if qid in self.answers:
                    continue
                lease = self.leases.get(qid)
                if lease is not None and lease.expires > now and lease.annotator != annotator:
                    continue
                self.leases[qid] = _Lease(annotator, now + self.lease_seconds)
                return self._query_view(self.queries[qid])
            return None

    def _query_view(self, query: CorrectionQuery) -> dict:
        entry = self.run._entry_by_qid[query.query_id]
        names = self.run.dataset.manifest.class_names
        return {
            "query_id": query.query_id,
            "image_id": query.pixel.image_id,
            "x": query.pixel.x,
            "y": query.pixel.y,
            "bbox": segment_bbox(entry.segment),
            "pseudo_label": query.pseudo_label,
            "pseudo_label_name": names[query.pseudo_label],
            "class_names": names,
            "image_url": f"/api/images/{query.pixel.image_id}.png",
            "overlay_url": f"/api/overlays/{query.query_id}.png",
        }

    def answer(self, query_id: str, verdict: str, label: int | None,
               annotator: str) -> tuple[int, dict]:
        with self.lock:
            if self.status != "active" or query_id not in self.queries:
                return 404, {"error": f"unknown query {query_id}"}
            if query_id in self.answers:
                return 409, {"error": "already answered"}
            query = self.queries[query_id]
            if verdict == "confirmed":
                if label is not None and label != query.pseudo_label:
                    return 422, {"error": "confirmed answers carry no label"}
                ans = QueryAnswer(query_id, "confirmed", annotator_id=annotator)
            elif verdict == "corrected":
                names = self.run.dataset.manifest.class_names
                if label is None or not 0 <= label < len(names) \
                        or label == self.run.dataset.ignore_id:
                    return 422, {"error": f"invalid label {label}"}
                if label == query.pseudo_label:
                    return 422, {"error": "corrected label equals the shown label"}
                ans = QueryAnswer(query_id, "corrected", corrected_label=label,
                                  annotator_id=annotator)
            else:
                return 422, {"error": f"unknown verdict {verdict!r}"}
            self.answers[query_id] = ans
            self.run.record_answer_pending(ans)
            return 200, {"status": "recorded", "query_id": query_id}

    def advance(self) -> tuple[int, dict]:
        with self.lock:
            if self.status != "active":
                return 409, {"error": "session finished"}
            outstanding = len(self.queries) - len(self.answers)
            if outstanding:
                return 409, {"error": f"{outstanding} queries outstanding"}
            self.run.apply_round(dict(self.answers), ledger_recorded=True)
            if self.run.finished:
                self.status = "finished"
                self.run.finish()
                self.queries, self.answers, self.leases = {}, {}, {}
            else:
                self._issue_round()
            return 200, {"round": self.run.round_index, "status": self.status}

    def overlay(self, query_id: str) -> bytes | None:
        with self.lock:
            entry = self.run._entry_by_qid.get(query_id)
            if entry is None:
                return None
            shape = self.run.working[entry.image_id].shape
            return render_overlay_png(entry.segment, entry.pixel.x, entry.pixel.y, shape)


class AnswerBody(BaseModel):
    verdict: str
    label: int | None = None


def create_app(session: InteractiveSession | None, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="alcor annotation service")
    holder = {"session": session}

    def active() -> InteractiveSession | None:
        return holder["session"]

    @app.get("/api/session")
    def get_session():
        sess = active()
        if sess is None:
            return JSONResponse({"error": "no active session"}, status_code=503)
        return sess.snapshot()

    @app.get("/api/queries/next")
    def get_next(annotator: str = "anonymous"):
        sess = active()
        if sess is None:
            return JSONResponse({"error": "no active session"}, status_code=503)
        view = sess.next_query(annotator)
        if view is None:
            return Response(status_code=204)
        return view

    @app.post("/api/queries/{query_id}/answer")
    def post_answer(query_id: str, body: AnswerBody, annotator: str = "anonymous"):
        sess = active()
        if sess is None:
            return JSONResponse({"error": "no active session"}, status_code=503)
        code, payload = sess.answer(query_id, body.verdict, body.label, annotator)
        return JSONResponse(payload, status_code=code)

    @app.post("/api/rounds/advance")
    def post_advance():
        sess = active()
        if sess is None:
            return JSONResponse({"error": "no active session"}, status_code=503)
        code, payload = sess.advance()
        return JSONResponse(payload, status_code=code)

    @app.get("/api/images/{image_id}.png")
    def get_image(image_id: str):
        sess = active()
        if sess is None or image_id not in sess.run.dataset.images:
            return JSONResponse({"error": "unknown image"}, status_code=404)
        png = render_image_png(sess.run.dataset.images[image_id])
        return Response(png, media_type="image/png")

    @app.get("/api/overlays/{query_id}.png")
    def get_overlay(query_id: str):
        sess = active()
        png = sess.overlay(query_id) if sess else None
        if png is None:
            return JSONResponse({"error": "unknown query"}, status_code=404)
        return Response(png, media_type="image/png")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
