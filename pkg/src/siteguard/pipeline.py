"""Frame pipeline: acquisition -> inference -> assessment -> rendered output.

Stages run as a bounded three-step pipeline (reader, detector, assess+render)
with at most K frames in flight. Events are appended to a JSONL log exactly
once per frame, ids strictly increasing and gap-free; dropped frames emit
nothing. With the replay detector and the deterministic clock, two runs over
the same inputs produce byte-identical logs and frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
import queue
import struct
import threading
import time
from typing import Callable, Iterator, Optional

import cv2
import numpy as np

from .adapter import InferenceAdapter
from .compliance import (
    ComplianceConfig,
    FrameAssessment,
    MaskState,
    ViolationEvent,
    assess_frame,
)
from .detection import FrameDetections, ReplaySource
from .errors import AdapterError, ConfigError
from .geometry import CalibrationProfile
from .imaging import decode_image, encode_png

__all__ = [
    "FrameSource",
    "ImageDirectorySource",
    "RawStreamSource",
    "ReplayDetector",
    "AdapterDetector",
    "PipelineConfig",
    "PipelineMetrics",
    "ViolationEvent",
    "render_overlay",
    "process_frame",
    "run",
]

RED = (229, 57, 53)      # 0xE53935
GREEN = (67, 160, 71)    # 0x43A047
WHITE = (255, 255, 255)
BOX_THICKNESS = 3
LABEL_HEIGHT_PX = 16
_FONT = cv2.FONT_HERSHEY_SIMPLEX
_FONT_SCALE = cv2.getFontScaleFromHeight(_FONT, LABEL_HEIGHT_PX, 1)

_MASK_LABEL_WORD = {
    MaskState.COMPLIANT: "mask",
    MaskState.VIOLATION_NO_MASK: "no-mask",
    MaskState.VIOLATION_INCORRECT: "incorrect",
}


# --- frame sources ------------------------------------------------------------

class FrameSource:
    """Yields (frame_index, png_bytes, rgb) in strictly increasing index order."""

    frame_rate_hint: float = 30.0

    def frames(self) -> Iterator[tuple[int, bytes, np.ndarray]]:
        raise NotImplementedError


class ImageDirectorySource(FrameSource):
    """Numbered PNG/JPEG files in a directory, ordered numerically."""

    def __init__(self, path, frame_rate_hint: float = 30.0):
        self.path = Path(path)
        self.frame_rate_hint = frame_rate_hint
        names = [
            p for p in self.path.iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        ]

        def order(p: Path):
            digits = "".join(ch for ch in p.stem if ch.isdigit())
            return (int(digits) if digits else 0, p.name)

        self.files = sorted(names, key=order)

    def frames(self):
        for index, path in enumerate(self.files):
            data = path.read_bytes()
            yield index, data, decode_image(data)


class RawStreamSource(FrameSource):
    """Length-prefixed encoded frames: 4-byte big-endian size + PNG bytes."""

    def __init__(self, stream, frame_rate_hint: float = 30.0):
        self.stream = stream
        self.frame_rate_hint = frame_rate_hint

    def frames(self):
        index = 0
        while True:
            header = self.stream.read(4)
            if not header:
                return
            if len(header) < 4:
                raise ValueError("truncated frame length header")
            (size,) = struct.unpack(">I", header)
            data = self.stream.read(size)
            if len(data) < size:
                raise ValueError("truncated frame payload")
            yield index, data, decode_image(data)
            index += 1


# --- detectors ------------------------------------------------------------------

class ReplayDetector:
    """Deterministic detector backed by a pre-recorded JSONL file."""

    def __init__(self, source: ReplaySource):
        self.source = source

    @classmethod
    def load(cls, path) -> "ReplayDetector":
        return cls(ReplaySource.load(path))

    def detect(self, frame_index: int, png_bytes: bytes) -> FrameDetections:
        return self.source.detect(frame_index)

    def close(self) -> None:
        pass


class AdapterDetector:
    """Detector delegating to an external inference adapter."""

    def __init__(self, adapter: InferenceAdapter):
        self.adapter = adapter
        adapter.handshake()

    def detect(self, frame_index: int, png_bytes: bytes) -> FrameDetections:
        return self.adapter.infer(frame_index, png_bytes, fmt="png")

    def close(self) -> None:
        self.adapter.close()


# --- rendering ------------------------------------------------------------------

def _draw_label(image: np.ndarray, text: str, x: int, y: int, color) -> None:
    y = max(y, LABEL_HEIGHT_PX + 2)
    cv2.putText(image, text, (x, y), _FONT, _FONT_SCALE, color, 1, cv2.LINE_AA)


def render_overlay(frame: np.ndarray, assessment: FrameAssessment) -> np.ndarray:
    """Annotated copy of the frame.

    Persons in a risk group get red boxes, everyone else green; each risk
    group gets a red hull rectangle; mask text goes above the associated face
    box. Output pixels are deterministic for fixed inputs.
    """
    out = frame.copy()
    risky = assessment.risk_ids()
    by_id = {p.person_id: p for p in assessment.persons}

    for group in assessment.risk_groups:
        members = [by_id[pid].box for pid in group]
        x0 = int(round(min(b.xmin for b in members)))
        y0 = int(round(min(b.ymin for b in members)))
        x1 = int(round(max(b.xmax for b in members)))
        y1 = int(round(max(b.ymax for b in members)))
        cv2.rectangle(out, (x0, y0), (x1, y1), RED, BOX_THICKNESS)

    for person in assessment.persons:
        color = RED if person.person_id in risky else GREEN
        b = person.box
        cv2.rectangle(
            out,
            (int(round(b.xmin)), int(round(b.ymin))),
            (int(round(b.xmax)), int(round(b.ymax))),
            color,
            BOX_THICKNESS,
        )
        if person.mask.state is not MaskState.UNKNOWN and person.face_box is not None:
            word = _MASK_LABEL_WORD[person.mask.state]
            text = f"{word} {round(person.mask.confidence * 100)}%"
            _draw_label(
                out,
                text,
                int(round(person.face_box.xmin)),
                int(round(person.face_box.ymin)) - 4,
                color,
            )

    _draw_label(out, f"frame {assessment.frame_index}", 8, LABEL_HEIGHT_PX + 6, WHITE)
    return out


# --- configuration and metrics ---------------------------------------------------

@dataclass
class PipelineConfig:
    source: FrameSource
    detector: object
    profile: CalibrationProfile
    compliance: ComplianceConfig = field(default_factory=ComplianceConfig)
    output_dir: Optional[Path] = None
    events_path: Optional[Path] = None
    metrics_path: Optional[Path] = None
    max_in_flight: int = 4
    deterministic_clock: bool = False
    on_frame: Optional[Callable[[int, bytes, bytes], None]] = None
    on_event: Optional[Callable[[dict], None]] = None


@dataclass
class PipelineMetrics:
    frames_processed: int = 0
    frames_dropped: int = 0
    achieved_fps: float = 0.0
    elapsed_s: float = 0.0
    events_emitted: int = 0
    horizon_dropped: int = 0
    stage_ms: dict = field(default_factory=lambda: {
        "decode": [], "infer": [], "assess": [], "render": [],
    })

    def summary(self) -> dict:
        stages = {}
        for name, values in self.stage_ms.items():
            if values:
                arr = np.asarray(values)
                stages[name] = {
                    "mean_ms": float(arr.mean()),
                    "median_ms": float(np.median(arr)),
                    "p95_ms": float(np.percentile(arr, 95)),
                }
            else:
                stages[name] = {"mean_ms": 0.0, "median_ms": 0.0, "p95_ms": 0.0}
        return {
            "frames_processed": self.frames_processed,
            "frames_dropped": self.frames_dropped,
            "achieved_fps": self.achieved_fps,
            "elapsed_s": self.elapsed_s,
            "events_emitted": self.events_emitted,
            "horizon_dropped": self.horizon_dropped,
            "stages": stages,
        }


# --- per-frame processing -----------------------------------------------------------

@dataclass
class ProcessContext:
    detector: object
    profile: CalibrationProfile
    cfg: ComplianceConfig
    next_event_id: int = 1
    clock: Callable[[int], float] = None  # frame_index -> wall_time seconds


def process_frame(
    frame_index: int, rgb: np.ndarray, png_bytes: bytes, ctx: ProcessContext
) -> tuple[np.ndarray, FrameAssessment]:
    """Detect, assess, and render one frame; advances the event counter."""
    dets = ctx.detector.detect(frame_index, png_bytes)
    wall = ctx.clock(frame_index) if ctx.clock else time.time()
    assessment = assess_frame(
        dets, ctx.profile, ctx.cfg, first_event_id=ctx.next_event_id, wall_time=wall
    )
    ctx.next_event_id += len(assessment.events)
    annotated = render_overlay(rgb, assessment)
    return annotated, assessment


# --- the run loop ---------------------------------------------------------------------

_SENTINEL = object()


def run(config: PipelineConfig) -> tuple[int, PipelineMetrics]:
    """Process every frame of the source; returns (exit status, metrics).

    Acquisition and inference overlap with assessment through bounded queues
    (max_in_flight each); assessment and rendering stay a single ordered
    stage so event order matches frame order. Interrupts flush the metrics
    file and leave a valid JSONL event-log prefix.
    """
    if config.profile is None:
        raise ConfigError("pipeline requires a calibration profile")

    fps_hint = getattr(config.source, "frame_rate_hint", 30.0) or 30.0
    clock = (lambda i: i / fps_hint) if config.deterministic_clock else (lambda i: time.time())

    metrics = PipelineMetrics()
    frames_q: queue.Queue = queue.Queue(maxsize=config.max_in_flight)
    dets_q: queue.Queue = queue.Queue(maxsize=config.max_in_flight)
    failures: list[BaseException] = []

    def reader():
        # Decode happens inside source.frames(); time the pull itself.
        try:
            it = config.source.frames()
            while True:
                t0 = time.perf_counter()
                try:
                    index, data, rgb = next(it)
                except StopIteration:
                    break
                decode_ms = (time.perf_counter() - t0) * 1000.0
                frames_q.put((index, data, rgb, decode_ms))
        except BaseException as exc:
            failures.append(exc)
        finally:
            frames_q.put(_SENTINEL)

    def detect_worker():
        try:
            while True:
                item = frames_q.get()
                if item is _SENTINEL:
                    break
                index, data, rgb, decode_ms = item
                t0 = time.perf_counter()
                try:
                    dets = config.detector.detect(index, data)
                except AdapterError:
                    dets_q.put(("drop", index))
                    continue
                infer_ms = (time.perf_counter() - t0) * 1000.0
                dets_q.put(("frame", index, rgb, dets, decode_ms, infer_ms))
        except BaseException as exc:
            failures.append(exc)
        finally:
            dets_q.put(_SENTINEL)

    threads = [
        threading.Thread(target=reader, daemon=True),
        threading.Thread(target=detect_worker, daemon=True),
    ]
    for t in threads:
        t.start()

    if config.output_dir is not None:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    events_fh = None
    if config.events_path is not None:
        Path(config.events_path).parent.mkdir(parents=True, exist_ok=True)
        events_fh = open(config.events_path, "w", encoding="utf-8")

    next_event_id = 1
    started = time.perf_counter()
    status = 0
    try:
        while True:
            item = dets_q.get()
            if item is _SENTINEL:
                break
            if item[0] == "drop":
                metrics.frames_dropped += 1
                continue
            _, index, rgb, dets, decode_ms, infer_ms = item

            t0 = time.perf_counter()
            assessment = assess_frame(
                dets,
                config.profile,
                config.compliance,
                first_event_id=next_event_id,
                wall_time=clock(index),
            )
            next_event_id += len(assessment.events)
            assess_ms = (time.perf_counter() - t0) * 1000.0

            t0 = time.perf_counter()
            annotated = render_overlay(rgb, assessment)
            render_ms = (time.perf_counter() - t0) * 1000.0

            annotated_png = None
            if config.output_dir is not None or config.on_frame is not None:
                annotated_png = encode_png(annotated)
            if config.output_dir is not None:
                Path(config.output_dir, f"frame_{index:06d}.png").write_bytes(annotated_png)

            for event in assessment.events:
                record = event.to_record()
                if events_fh is not None:
                    events_fh.write(json.dumps(record) + "\n")
                    events_fh.flush()
                if config.on_event is not None:
                    config.on_event(record)

            if config.on_frame is not None:
                config.on_frame(index, annotated_png, encode_png(rgb))

            metrics.frames_processed += 1
            metrics.events_emitted += len(assessment.events)
            metrics.horizon_dropped += assessment.horizon_dropped
            metrics.stage_ms["decode"].append(decode_ms)
            metrics.stage_ms["infer"].append(infer_ms)
            metrics.stage_ms["assess"].append(assess_ms)
            metrics.stage_ms["render"].append(render_ms)
    except KeyboardInterrupt:
        status = 130
    finally:
        if events_fh is not None:
            events_fh.close()
        metrics.elapsed_s = time.perf_counter() - started
        if metrics.elapsed_s > 0:
            metrics.achieved_fps = metrics.frames_processed / metrics.elapsed_s
        if config.metrics_path is not None:
            Path(config.metrics_path).parent.mkdir(parents=True, exist_ok=True)
            Path(config.metrics_path).write_text(
                json.dumps(metrics.summary(), indent=2) + "\n", encoding="utf-8"
            )

    if failures and status == 0:
        raise failures[0]
    return status, metrics
