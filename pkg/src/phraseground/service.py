"""Annotation backend: task queue, span records, peer verification, export.

State lives in an append-only log (one canonical JSON record per line) that
is replayed on boot, so a restart loses nothing. Each (sample, annotator)
pair has at most one live annotation; a sample becomes `verified` once two
annotators approved and their span sets agree exactly, `disputed` otherwise.
Disputed and re-annotated samples drop back to `pending` and re-enter the
task queue. Samples whose records carry the unsure flag are withheld from
the regular export and served on a separate review endpoint instead.
"""

from __future__ import annotations

import os
import threading
import time

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import data as D

STATUS_PENDING = "pending"
STATUS_VERIFIED = "verified"
STATUS_DISPUTED = "disputed"


class SpanIn(BaseModel):
    start: int
    end: int
    object_id: int
    is_target: bool = False


class AnnotationIn(BaseModel):
    sample_id: str
    annotator_id: str
    spans: list[SpanIn] = Field(default_factory=list)
    unsure: bool = False
    timestamp: float | None = None


class VerifyIn(BaseModel):
    sample_id: str
    annotator_id: str
    approve: bool


class AnnotationStore:
    """Replayable append-log store of annotations and verification events."""

    def __init__(self, path: str):
        self.path = path
        self.lock = threading.Lock()
        # (sample_id, annotator_id) -> record dict
        self.records: dict[tuple[str, str], dict] = {}
        # sample_id -> {"approvals": set, "status": str}
        self.verification: dict[str, dict] = {}
        if os.path.exists(path):
            self._replay()

    def _replay(self) -> None:
        for event in D.read_jsonl(self.path):
            if event["kind"] == "annotation":
                self._apply_annotation(event["record"])
            elif event["kind"] == "verify":
                self._apply_verify(event["sample_id"], event["annotator_id"],
                                   event["approve"])

    def _append(self, event: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(D.canonical_json(event) + "\n")

    def _state(self, sample_id: str) -> dict:
        return self.verification.setdefault(
            sample_id, {"approvals": set(), "status": STATUS_PENDING}
        )

    def _apply_annotation(self, record: dict) -> None:
        key = (record["sample_id"], record["annotator_id"])
        self.records[key] = record
        # Any new annotation re-opens verification.
        self.verification[record["sample_id"]] = {
            "approvals": set(), "status": STATUS_PENDING,
        }

    def _apply_verify(self, sample_id: str, annotator_id: str, approve: bool) -> None:
        state = self._state(sample_id)
        if not approve:
            state["status"] = STATUS_DISPUTED
            state["approvals"].clear()
            return
        state["approvals"].add(annotator_id)
        if len(state["approvals"]) >= 2:
            state["status"] = (
                STATUS_VERIFIED if self.records_agree(sample_id) else STATUS_DISPUTED
            )

    def add_annotation(self, record: dict) -> None:
        with self.lock:
            self._append({"kind": "annotation", "record": record})
            self._apply_annotation(record)

    def add_verify(self, sample_id: str, annotator_id: str, approve: bool) -> dict:
        with self.lock:
            self._append({
                "kind": "verify", "sample_id": sample_id,
                "annotator_id": annotator_id, "approve": approve,
            })
            self._apply_verify(sample_id, annotator_id, approve)
            return self.status(sample_id)

    def sample_records(self, sample_id: str) -> list[dict]:
        return [r for (sid, _), r in self.records.items() if sid == sample_id]

    def records_agree(self, sample_id: str) -> bool:
        """Exact span-set agreement across at least two live records."""
        recs = self.sample_records(sample_id)
        if len(recs) < 2 or any(r["unsure"] for r in recs):
            return False
        span_sets = [
            frozenset((s["start"], s["end"], s["object_id"], s["is_target"])
                      for s in r["spans"])
            for r in recs
        ]
        return all(ss == span_sets[0] for ss in span_sets)

    def status(self, sample_id: str) -> dict:
        state = self._state(sample_id)
        return {
            "sample_id": sample_id,
            "status": state["status"],
            "approvals": sorted(state["approvals"]),
        }


def create_app(data_dir: str, store_path: str) -> FastAPI:
    scenes, train, val = D.load_corpus(data_dir)
    samples = {s.sample_id: s for s in train + val}
    sample_order = [s.sample_id for s in train + val]
    store = AnnotationStore(store_path)

    app = FastAPI(title="phraseground annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    app.state.store = store

    def get_sample(sample_id: str) -> D.GroundingSample:
        if sample_id not in samples:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id}")
        return samples[sample_id]

    def validate_spans(body: AnnotationIn) -> None:
        sample = get_sample(body.sample_id)
        scene = scenes[sample.scene_id]
        L = len(sample.tokens)
        if body.unsure and not body.spans:
            return  # explicit escape hatch: unsure may carry zero spans
        if not body.spans:
            raise HTTPException(status_code=422, detail="spans")
        covered = [False] * L
        targets = 0
        for i, span in enumerate(body.spans):
            path = f"spans[{i}]"
            if not (0 <= span.start < span.end <= L):
                raise HTTPException(status_code=422, detail=f"{path}.end")
            if not (0 <= span.object_id < len(scene.objects)):
                raise HTTPException(status_code=422, detail=f"{path}.object_id")
            for j in range(span.start, span.end):
                if covered[j]:
                    raise HTTPException(status_code=422, detail=f"{path}.start")
                covered[j] = True
            targets += span.is_target
        if targets != 1:
            raise HTTPException(status_code=422, detail="spans.is_target")

    @app.get("/api/scenes")
    def list_scenes():
        return {"scene_ids": sorted(scenes)}

    @app.get("/api/scenes/{scene_id}")
    def get_scene(scene_id: str):
        if scene_id not in scenes:
            raise HTTPException(status_code=404, detail=f"unknown scene {scene_id}")
        return D.scene_to_dict(scenes[scene_id])

    @app.get("/api/tasks")
    def next_task(annotator: str):
        for sample_id in sample_order:
            state = store.status(sample_id)
            if state["status"] == STATUS_VERIFIED:
                continue
            has_record = (sample_id, annotator) in store.records
            if not has_record or state["status"] == STATUS_DISPUTED:
                sample = samples[sample_id]
                return {
                    "sample_id": sample_id,
                    "scene_id": sample.scene_id,
                    "tokens": sample.tokens,
                    "status": state["status"],
                    "redo": has_record,
                }
        return {"sample_id": None, "done": True}

    @app.post("/api/annotations")
    def post_annotation(body: AnnotationIn):
        sample = get_sample(body.sample_id)
        if store.status(body.sample_id)["status"] == STATUS_VERIFIED:
            raise HTTPException(status_code=409, detail="sample already verified")
        validate_spans(body)
        record = {
            "sample_id": body.sample_id,
            "annotator_id": body.annotator_id,
            "spans": [s.model_dump() for s in body.spans],
            "unsure": body.unsure,
            "timestamp": body.timestamp if body.timestamp is not None else time.time(),
        }
        store.add_annotation(record)
        return {"record": record, "status": store.status(body.sample_id)}

    @app.get("/api/annotations/{sample_id}")
    def get_annotations(sample_id: str):
        get_sample(sample_id)
        return {
            "records": sorted(store.sample_records(sample_id),
                              key=lambda r: r["annotator_id"]),
            "status": store.status(sample_id),
        }

    @app.post("/api/verify")
    def post_verify(body: VerifyIn):
        get_sample(body.sample_id)
        if (body.sample_id, body.annotator_id) not in store.records and body.approve:
            # Approval counts only from annotators who labeled the sample.
            raise HTTPException(status_code=422, detail="annotator_id")
        return store.add_verify(body.sample_id, body.annotator_id, body.approve)

    def merged_sample(sample_id: str) -> dict:
        sample = samples[sample_id]
        recs = store.sample_records(sample_id)
        spans = sorted(recs[0]["spans"], key=lambda s: s["start"])
        target_ids = [s["object_id"] for s in spans if s["is_target"]]
        return {
            "sample_id": sample_id,
            "scene_id": sample.scene_id,
            "tokens": sample.tokens,
            "target_id": target_ids[0],
            "phrases": spans,
            "tags": dict(sample.tags),
        }

    @app.get("/api/export", response_class=PlainTextResponse)
    def export_verified():
        lines = []
        for sample_id in sample_order:
            if store.status(sample_id)["status"] == STATUS_VERIFIED:
                lines.append(D.canonical_json(merged_sample(sample_id)))
        return "\n".join(lines) + ("\n" if lines else "")

    @app.get("/api/review", response_class=PlainTextResponse)
    def export_review():
        """Unsure records, set aside for manual double-checking."""
        lines = []
        for (sample_id, _), record in sorted(store.records.items()):
            if record["unsure"]:
                lines.append(D.canonical_json(record))
        return "\n".join(lines) + ("\n" if lines else "")

    return app
