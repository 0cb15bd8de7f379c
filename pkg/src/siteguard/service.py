"""HTTP facade: calibration intake, live frames, event stream, status.

The engine owns one camera and one calibration profile per process. Phases
move uncalibrated -> calibrated_idle -> running -> stopped; recalibration is
allowed whenever no run is active and (re)starts the pipeline when a source
is configured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import queue
import threading
import time
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import pipeline
from .compliance import ComplianceConfig
from .config import AppConfig, build_detector, build_source
from .errors import ConfigError, DegenerateConfiguration, SingularSystem, SiteguardError
from .geometry import CalibrationProfile, ImagePoint

logger = logging.getLogger(__name__)

HEARTBEAT_S = 15.0
CLIENT_BUFFER = 256


class CalibrationRequest(BaseModel):
    corners: list[list[float]] = Field(..., min_length=4, max_length=4)
    edge_length_ft: float = 6.0
    pixels_per_foot: float = 100.0


@dataclass
class _Subscriber:
    events: queue.Queue = field(default_factory=lambda: queue.Queue(maxsize=CLIENT_BUFFER))
    overflowed: bool = False


class EventBroker:
    """One-producer fan-out of violation events to any number of SSE clients."""

    def __init__(self, log_path: Optional[Path] = None):
        self.log_path = log_path
        self._subs: list[_Subscriber] = []
        self._lock = threading.Lock()

    def publish(self, record: dict) -> None:
        with self._lock:
            for sub in self._subs:
                if sub.overflowed:
                    continue
                try:
                    sub.events.put_nowait(record)
                except queue.Full:
                    sub.overflowed = True

    def subscribe(self) -> _Subscriber:
        sub = _Subscriber()
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def history(self, after_id: int) -> list[dict]:
        """Events with id > after_id replayed from the JSONL log."""
        if self.log_path is None or not Path(self.log_path).exists():
            return []
        out = []
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record["event_id"] > after_id:
                    out.append(record)
        return out


class ServiceEngine:
    """Owns the service state machine and the background pipeline run."""

    def __init__(self, config: AppConfig, heartbeat_s: float = HEARTBEAT_S):
        self.config = config
        self.heartbeat_s = heartbeat_s
        self.profile: Optional[CalibrationProfile] = None
        self._running = False
        self._stopped = False
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        self.latest_raw: Optional[bytes] = None
        self.latest_annotated: Optional[bytes] = None
        self.frames_seen = 0
        self.events_seen = 0
        self.run_started: Optional[float] = None
        self.last_metrics: Optional[dict] = None

        out = Path(config.output_dir)
        self.events_path = out / "events.jsonl"
        self.metrics_path = out / "metrics.json"
        self.broker = EventBroker(log_path=self.events_path)

        self._load_stored_calibration()
        self._prime_snapshot()

    # --- state ------------------------------------------------------------

    @property
    def phase(self) -> str:
        if self._running:
            return "running"
        if self._stopped:
            return "stopped"
        if self.profile is not None:
            return "calibrated_idle"
        return "uncalibrated"

    def _load_stored_calibration(self) -> None:
        path = Path(self.config.calibration_path)
        if not path.exists():
            return
        try:
            self.profile = CalibrationProfile.load(path)
        except (SiteguardError, ValueError, KeyError) as exc:
            logger.warning("ignoring stored calibration %s: %s", path, exc)

    def _prime_snapshot(self) -> None:
        """Expose the first source frame so the UI can calibrate before a run."""
        if self.config.source_kind != "image_directory" or not self.config.source_path:
            return
        try:
            source = build_source(self.config)
            if source.files:
                self.latest_raw = source.files[0].read_bytes()
        except (ConfigError, OSError) as exc:
            logger.warning("snapshot unavailable: %s", exc)

    # --- calibration --------------------------------------------------------

    def calibrate(self, request: CalibrationRequest) -> CalibrationProfile:
        with self._lock:
            if self._running:
                raise RuntimeError("engine is running")
            profile = CalibrationProfile(
                corners=tuple(ImagePoint(float(u), float(v)) for u, v in request.corners),
                edge_length_ft=request.edge_length_ft,
                pixels_per_foot=request.pixels_per_foot,
            )
            path = Path(self.config.calibration_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            profile.save(path)
            self.profile = profile
            self._stopped = False
        self.maybe_start()
        return profile

    # --- pipeline -----------------------------------------------------------

    def maybe_start(self) -> bool:
        """Start the background run when calibrated and a source is configured."""
        with self._lock:
            if self._running or self.profile is None:
                return False
            if not self.config.source_path or not self.config.detector:
                return False
            self._running = True
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return True

    def _run(self) -> None:
        self.run_started = time.monotonic()
        try:
            source = build_source(self.config)
            detector = build_detector(self.config.detector, self.config.adapter_deadline_ms)
            cfg = pipeline.PipelineConfig(
                source=source,
                detector=detector,
                profile=self.profile,
                compliance=ComplianceConfig(
                    threshold_ft=self.config.threshold_ft,
                    face_confidence_floor=self.config.face_confidence_floor,
                    person_confidence_floor=self.config.person_confidence_floor,
                ),
                output_dir=Path(self.config.output_dir) / "frames",
                events_path=self.events_path,
                metrics_path=self.metrics_path,
                on_frame=self._on_frame,
                on_event=self._on_event,
            )
            _, metrics = pipeline.run(cfg)
            self.last_metrics = metrics.summary()
        except Exception:
            logger.exception("pipeline run failed")
        finally:
            with self._lock:
                self._running = False
                self._stopped = True

    def _on_frame(self, index: int, annotated_png: bytes, raw_png: bytes) -> None:
        self.latest_annotated = annotated_png
        self.latest_raw = raw_png
        self.frames_seen += 1

    def _on_event(self, record: dict) -> None:
        self.events_seen += 1
        self.broker.publish(record)

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    # --- reporting -----------------------------------------------------------

    def metrics_snapshot(self) -> dict:
        if self.last_metrics is not None and not self._running:
            return self.last_metrics
        elapsed = time.monotonic() - self.run_started if self.run_started else 0.0
        return {
            "frames_processed": self.frames_seen,
            "events_emitted": self.events_seen,
            "achieved_fps": self.frames_seen / elapsed if elapsed > 0 else 0.0,
            "elapsed_s": elapsed,
        }

    def status(self) -> dict:
        profile = None
        if self.profile is not None:
            profile = {
                "corners": [[c.u, c.v] for c in self.profile.corners],
                "edge_length_ft": self.profile.edge_length_ft,
                "pixels_per_foot": self.profile.pixels_per_foot,
                "created_at": self.profile.created_at,
            }
        return {"phase": self.phase, "profile": profile, "metrics": self.metrics_snapshot()}


def _sse_frame(record: dict) -> str:
    return f"id: {record['event_id']}\ndata: {json.dumps(record)}\n\n"


def event_stream(engine: ServiceEngine, after_id: int):
    """SSE frames for one client: log history after after_id, then live events.

    Subscribes before replaying history so nothing published in between is
    lost; duplicates are filtered by event id. Idle periods emit a keep-alive
    comment every heartbeat interval; an overflowing client gets a terminal
    error frame.
    """
    sub = engine.broker.subscribe()
    last_sent = after_id
    try:
        for record in engine.broker.history(after_id):
            last_sent = record["event_id"]
            yield _sse_frame(record)
        while True:
            if sub.overflowed:
                yield 'event: error\ndata: {"detail": "client too slow"}\n\n'
                return
            try:
                record = sub.events.get(timeout=engine.heartbeat_s)
            except queue.Empty:
                yield ": keep-alive\n\n"
                continue
            if record["event_id"] <= last_sent:
                continue
            last_sent = record["event_id"]
            yield _sse_frame(record)
    finally:
        engine.broker.unsubscribe(sub)


def create_app(config: AppConfig, engine: Optional[ServiceEngine] = None) -> FastAPI:
    app = FastAPI(title="siteguard")
    engine = engine or ServiceEngine(config)
    app.state.engine = engine

    @app.post("/api/calibration", status_code=201)
    def post_calibration(request: CalibrationRequest):
        try:
            profile = engine.calibrate(request)
        except RuntimeError:
            return JSONResponse(status_code=409, content={"detail": "engine is running"})
        except (DegenerateConfiguration, SingularSystem, ValueError) as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        return profile.to_dict()

    @app.get("/api/snapshot")
    def get_snapshot():
        if engine.latest_raw is None:
            return JSONResponse(status_code=404, content={"detail": "no frame yet"})
        return Response(content=engine.latest_raw, media_type="image/png")

    @app.get("/api/frame")
    def get_frame():
        if engine.latest_annotated is None:
            return JSONResponse(status_code=404, content={"detail": "no frame yet"})
        return Response(content=engine.latest_annotated, media_type="image/png")

    @app.get("/api/status")
    def get_status():
        return engine.status()

    @app.get("/api/metrics")
    def get_metrics():
        return engine.metrics_snapshot()

    @app.get("/api/events")
    def get_events(request: Request):
        last_raw = request.headers.get("last-event-id")
        try:
            after_id = int(last_raw) if last_raw is not None else 0
        except ValueError:
            after_id = 0
        return StreamingResponse(
            event_stream(engine, after_id), media_type="text/event-stream"
        )

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
