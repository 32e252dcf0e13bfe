"""HTTP/JSON session service exposing the prompting loop to clients.

Sessions live in memory behind per-session locks; finished sessions are
persisted as JSONL trajectory logs (the replay fodder for the
human-replay strategy). Simulated sessions label every query from the
ground-truth mask server-side, so driving one over HTTP reproduces the
in-process loop byte for byte.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .acquisition import StrategyKind, score_map_payload, score_map_png
from .backbone import PromptableBackbone, ToyBackbone
from .core import BinaryMask, ContractViolation, Image
from .head import LaplacePosterior
from .session import (
    SessionState,
    StopConfig,
    StopReason,
    apply_label,
    check_stop,
    init_session,
    mark_stopped,
    mask_digest,
    record_to_dict,
    select_query,
    trajectory_of,
)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        if status not in (400, 404, 409, 500):
            raise ValueError(f"unsupported status {status}")
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


@dataclass
class DatasetItem:
    dataset: str
    item_id: str
    image: Image
    gt: BinaryMask | None


@dataclass
class SessionHandle:
    id: str
    created_at: float
    mode: str
    strategy: StrategyKind
    stop_config: StopConfig
    state: SessionState
    lock: threading.Lock = field(default_factory=threading.Lock)


class EngineStore:
    """Datasets, posteriors, and live sessions shared by all endpoints."""

    def __init__(
        self,
        backbone: PromptableBackbone | None = None,
        datasets: dict[str, dict[str, DatasetItem]] | None = None,
        posteriors: dict[str, LaplacePosterior] | None = None,
        session_dir: str | Path | None = None,
        default_samples_k: int = 30,
    ):
        self.backbone = backbone if backbone is not None else ToyBackbone()
        self.datasets = datasets or {}
        self.posteriors = posteriors or {}
        self.session_dir = Path(session_dir) if session_dir else None
        self.default_samples_k = default_samples_k
        self.sessions: dict[str, SessionHandle] = {}

    def find_item(self, item_ref: str) -> DatasetItem:
        if "/" in item_ref:
            ds, item = item_ref.split("/", 1)
            try:
                return self.datasets[ds][item]
            except KeyError:
                raise ApiError(404, "unknown_dataset_item", f"no item {item_ref!r}")
        for ds in self.datasets.values():
            if item_ref in ds:
                return ds[item_ref]
        raise ApiError(404, "unknown_dataset_item", f"no item {item_ref!r}")

    def get_session(self, session_id: str) -> SessionHandle:
        handle = self.sessions.get(session_id)
        if handle is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return handle

    def persist(self, handle: SessionHandle) -> None:
        if self.session_dir is None or handle.state.stop_reason is None:
            return
        self.session_dir.mkdir(parents=True, exist_ok=True)
        path = self.session_dir / f"{handle.id}.jsonl"
        path.write_text(trajectory_of(handle.state).to_jsonl())


class StopConfigModel(BaseModel):
    tau_mi: float | None = 0.01
    tau_ent: float | None = None
    budget: int = 15


class CreateSessionRequest(BaseModel):
    strategy: str
    dataset_item_id: str | None = None
    image: list[list[float]] | None = None
    gt_mask: list[list[int]] | None = None
    posterior_id: str | None = None
    seed: int = 0
    mode: Literal["simulated", "human"] = "simulated"
    samples_k: int | None = None
    stop_config: StopConfigModel | None = None


class LabelRequest(BaseModel):
    q: list[int]
    label: Literal[0, 1]


def _suggestion_payload(handle: SessionHandle) -> dict | None:
    q = select_query(handle.state)
    if q is None:
        return None
    return {
        "q": [q[0], q[1]],
        "max_mi": handle.state.max_mi,
        "h_total": handle.state.h_total,
        "heatmap_url": f"/sessions/{handle.id}/heatmap.png",
    }


def create_app(store: EngineStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="active prompting service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error_code": exc.code, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error_code": "malformed_body", "message": str(exc.errors())},
        )

    @app.get("/datasets")
    def list_datasets():
        return {
            "datasets": [
                {"id": ds, "item_count": len(items)}
                for ds, items in sorted(store.datasets.items())
            ]
        }

    @app.get("/datasets/{dataset_id}/items")
    def list_items(dataset_id: str):
        items = store.datasets.get(dataset_id)
        if items is None:
            raise ApiError(404, "unknown_dataset", f"no dataset {dataset_id!r}")
        return {
            "items": [
                {
                    "id": it.item_id,
                    "height": it.image.height,
                    "width": it.image.width,
                    "has_gt": it.gt is not None,
                }
                for _, it in sorted(items.items())
            ]
        }

    @app.get("/datasets/{dataset_id}/items/{item_id}/image")
    def item_image(dataset_id: str, item_id: str):
        item = store.find_item(f"{dataset_id}/{item_id}")
        return {
            "height": item.image.height,
            "width": item.image.width,
            "values": [float(v) for v in item.image.values.ravel()],
        }

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        if req.strategy not in ("bald", "entropy", "random", "oracle"):
            raise ApiError(400, "bad_strategy", f"unsupported strategy {req.strategy!r}")
        strategy = StrategyKind(req.strategy)

        if req.dataset_item_id is not None:
            item = store.find_item(req.dataset_item_id)
            image, gt = item.image, item.gt
        elif req.image is not None:
            try:
                image = Image(np.asarray(req.image, dtype=np.float64))
            except (ContractViolation, ValueError) as exc:
                raise ApiError(400, "bad_image", str(exc))
            gt = None
            if req.gt_mask is not None:
                try:
                    gt = BinaryMask(np.asarray(req.gt_mask, dtype=np.uint8))
                except (ContractViolation, ValueError) as exc:
                    raise ApiError(400, "bad_mask", str(exc))
                if gt.shape != image.shape:
                    raise ApiError(400, "bad_mask", "mask shape differs from image")
        else:
            raise ApiError(400, "bad_request", "need dataset_item_id or inline image")

        posterior = None
        if strategy.uses_ensemble:
            if req.posterior_id is None:
                raise ApiError(400, "bad_request", f"{req.strategy} needs posterior_id")
            posterior = store.posteriors.get(req.posterior_id)
            if posterior is None:
                raise ApiError(
                    404, "unknown_posterior", f"no posterior {req.posterior_id!r}"
                )
        if req.mode == "simulated" and gt is None:
            raise ApiError(400, "bad_request", "simulated mode needs a ground truth")
        if req.strategy == "oracle" and gt is None:
            raise ApiError(400, "bad_request", "oracle strategy needs a ground truth")

        sc = req.stop_config or StopConfigModel()
        try:
            stop_config = StopConfig(sc.tau_mi, sc.tau_ent, sc.budget)
        except ContractViolation as exc:
            raise ApiError(400, "bad_stop_config", str(exc))

        state = init_session(
            image,
            strategy,
            posterior,
            req.seed,
            store.backbone,
            gt=gt,
            samples_k=req.samples_k or store.default_samples_k,
        )
        handle = SessionHandle(
            id=str(uuid.uuid4()),
            created_at=time.time(),
            mode=req.mode,
            strategy=strategy,
            stop_config=stop_config,
            state=state,
        )
        store.sessions[handle.id] = handle

        reason = check_stop(state, stop_config)
        body = {
            "session_id": handle.id,
            "initial_mask_digest": mask_digest(state.current_mask),
            "height": image.height,
            "width": image.width,
            "has_gt": gt is not None,
            "suggestion": None,
            "stop_reason": None,
        }
        if reason is None:
            body["suggestion"] = _suggestion_payload(handle)
            if body["suggestion"] is None:
                reason = StopReason.CANDIDATES_EXHAUSTED
        if reason is not None:
            handle.state = mark_stopped(handle.state, reason)
            store.persist(handle)
            body["stop_reason"] = reason.value
        return body

    @app.get("/sessions/{session_id}/suggestion")
    def get_suggestion(session_id: str):
        handle = store.get_session(session_id)
        if handle.state.stopped:
            raise ApiError(
                409, "session_stopped", handle.state.stop_reason.value
            )
        payload = _suggestion_payload(handle)
        if payload is None:
            raise ApiError(409, "candidates_exhausted", "no unqueried candidates left")
        return payload

    @app.post("/sessions/{session_id}/label")
    def post_label(session_id: str, req: LabelRequest):
        handle = store.get_session(session_id)
        with handle.lock:
            state = handle.state
            if state.stopped:
                raise ApiError(409, "session_stopped", state.stop_reason.value)
            if len(req.q) != 2:
                raise ApiError(400, "bad_query", "q must be [row, col]")
            r, c = int(req.q[0]), int(req.q[1])
            if not (0 <= r < state.image.height and 0 <= c < state.image.width):
                raise ApiError(400, "out_of_bounds", f"({r}, {c}) is out of bounds")
            if (r, c) in state.prompt_set.locations():
                raise ApiError(400, "duplicate_location", f"({r}, {c}) already labeled")
            # simulated sessions stay faithful to the ground truth no matter
            # what the client posted; human sessions record the click as-is
            label = int(state.gt.values[r, c]) if handle.mode == "simulated" else req.label
            new_state = apply_label(state, (r, c), label)
            rec = new_state.records[-1]
            body = {
                "t": rec.t,
                "label": rec.label,
                "mask_digest": rec.mask_sha256,
                "iou": rec.iou,
                "max_mi": rec.max_mi,
                "h_total": rec.h_total,
                "next_suggestion": None,
                "stop_reason": None,
            }
            reason = check_stop(new_state, handle.stop_config)
            handle.state = new_state
            if reason is None:
                body["next_suggestion"] = _suggestion_payload(handle)
                if body["next_suggestion"] is None:
                    # the next loop iteration could not select anything
                    reason = StopReason.CANDIDATES_EXHAUSTED
            if reason is not None:
                handle.state = mark_stopped(handle.state, reason)
                store.persist(handle)
                body["stop_reason"] = reason.value
            return body

    @app.post("/sessions/{session_id}/stop")
    def stop_session(session_id: str):
        handle = store.get_session(session_id)
        with handle.lock:
            if not handle.state.stopped:
                handle.state = mark_stopped(handle.state, StopReason.ANNOTATOR_ENDED)
                store.persist(handle)
            return {"stop_reason": handle.state.stop_reason.value}

    @app.get("/sessions/{session_id}/trajectory")
    def get_trajectory(session_id: str):
        handle = store.get_session(session_id)
        state = handle.state
        return {
            "records": [record_to_dict(r) for r in state.records],
            "stop": state.stop_reason.value if state.stop_reason else None,
            "strategy": state.strategy.name,
            "seed": state.seed,
        }

    @app.get("/sessions/{session_id}/heatmap.png")
    def heatmap(session_id: str):
        handle = store.get_session(session_id)
        scores = handle.state.current_scores
        if scores is None:
            raise ApiError(404, "no_scores", "this strategy exposes no score map")
        return Response(content=score_map_png(scores), media_type="image/png")

    @app.get("/sessions/{session_id}/scores")
    def scores(session_id: str):
        handle = store.get_session(session_id)
        sm = handle.state.current_scores
        if sm is None:
            raise ApiError(404, "no_scores", "this strategy exposes no score map")
        return score_map_payload(sm)

    @app.get("/sessions/{session_id}/image")
    def session_image(session_id: str):
        handle = store.get_session(session_id)
        img = handle.state.image
        return {
            "height": img.height,
            "width": img.width,
            "values": [float(v) for v in img.values.ravel()],
        }

    @app.get("/sessions/{session_id}/mask")
    def session_mask(session_id: str):
        handle = store.get_session(session_id)
        mask = handle.state.current_mask
        return {
            "height": mask.height,
            "width": mask.width,
            "values": [int(v) for v in mask.values.ravel()],
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
