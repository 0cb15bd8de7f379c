"""Wire contract for external inference backends.

Real detectors live outside the engine as a separate process speaking
newline-delimited JSON over standard streams or a local TCP socket:

    engine  -> backend   {"type": "hello", "version": 1}
    backend -> engine    {"type": "ready", "labels": [...]}
    engine  -> backend   {"type": "frame", "id": N, "format": "png", "data_b64": "..."}
    backend -> engine    {"type": "detections", "id": N, "detections": [...]}

Ids must match; a version mismatch aborts the handshake. One request is in
flight per adapter instance.

`python -m siteguard.adapter` runs a reference backend: with --replay FILE it
serves pre-recorded detections by frame id; without it, it echoes back any
detections list found in the frame payload (test plumbing).
"""

from __future__ import annotations

import base64
import json
import queue
import socket
import subprocess
import sys
import threading

from .detection import FrameDetections, ReplaySource, detections_to_record, record_to_detections
from .errors import AdapterClosed, AdapterProtocolError, AdapterTimeout

PROTOCOL_VERSION = 1
DEFAULT_DEADLINE_MS = 1000
# Backend startup (model loading) is allowed to take longer than a frame.
DEFAULT_HANDSHAKE_MS = 10_000


class InferenceAdapter:
    """Client side of the wire protocol. Subclasses provide the byte streams."""

    def __init__(
        self,
        deadline_ms: int = DEFAULT_DEADLINE_MS,
        handshake_ms: int = DEFAULT_HANDSHAKE_MS,
    ):
        self.deadline_ms = deadline_ms
        self.handshake_ms = handshake_ms
        self._lock = threading.Lock()
        self._ready = False
        self.labels: list[str] = []

    # transport hooks -------------------------------------------------------
    def _send_line(self, line: str) -> None:
        raise NotImplementedError

    def _recv_line(self, timeout_s: float) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass

    # protocol ---------------------------------------------------------------
    def _send(self, obj: dict) -> None:
        try:
            self._send_line(json.dumps(obj) + "\n")
        except (BrokenPipeError, OSError) as exc:
            raise AdapterClosed(str(exc)) from exc

    def _recv(self, timeout_ms: int | None = None) -> dict:
        line = self._recv_line((timeout_ms or self.deadline_ms) / 1000.0)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterProtocolError(f"unparsable reply: {line!r}") from exc
        if not isinstance(obj, dict) or "type" not in obj:
            raise AdapterProtocolError(f"reply without a type: {line!r}")
        return obj

    def handshake(self) -> None:
        with self._lock:
            self._send({"type": "hello", "version": PROTOCOL_VERSION})
            reply = self._recv(self.handshake_ms)
            if reply.get("type") != "ready":
                raise AdapterProtocolError(f"expected ready, got {reply.get('type')!r}")
            if reply.get("version", PROTOCOL_VERSION) != PROTOCOL_VERSION:
                raise AdapterProtocolError(
                    f"protocol version mismatch: {reply.get('version')}"
                )
            self.labels = list(reply.get("labels", []))
            self._ready = True

    def infer(self, frame_index: int, data: bytes, fmt: str = "png") -> FrameDetections:
        """Send one encoded frame and wait for its detections."""
        if not self._ready:
            raise AdapterProtocolError("handshake not completed")
        with self._lock:
            self._send(
                {
                    "type": "frame",
                    "id": frame_index,
                    "format": fmt,
                    "data_b64": base64.b64encode(data).decode("ascii"),
                }
            )
            reply = self._recv()
            if reply.get("type") != "detections":
                raise AdapterProtocolError(f"expected detections, got {reply.get('type')!r}")
            if reply.get("id") != frame_index:
                raise AdapterProtocolError(
                    f"id mismatch: sent {frame_index}, got {reply.get('id')}"
                )
            try:
                return record_to_detections(
                    {"frame": frame_index, "detections": reply.get("detections", [])}
                )
            except Exception as exc:
                raise AdapterProtocolError(f"invalid detections payload: {exc}") from exc


class StdioAdapter(InferenceAdapter):
    """Adapter speaking to a subprocess over its standard streams."""

    def __init__(
        self,
        command: list[str],
        deadline_ms: int = DEFAULT_DEADLINE_MS,
        handshake_ms: int = DEFAULT_HANDSHAKE_MS,
    ):
        super().__init__(deadline_ms, handshake_ms)
        self._proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise AdapterClosed(f"backend exited with {self._proc.returncode}")
        self._proc.stdin.write(line)
        self._proc.stdin.flush()

    def _recv_line(self, timeout_s: float) -> str:
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            raise AdapterTimeout(f"no reply within {self.deadline_ms} ms") from None
        if line is None:
            raise AdapterClosed("backend closed its output stream")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class TcpAdapter(InferenceAdapter):
    """Adapter speaking to a backend over a local TCP socket."""

    def __init__(
        self,
        host: str,
        port: int,
        deadline_ms: int = DEFAULT_DEADLINE_MS,
        handshake_ms: int = DEFAULT_HANDSHAKE_MS,
    ):
        super().__init__(deadline_ms, handshake_ms)
        self._sock = socket.create_connection((host, port), timeout=handshake_ms / 1000.0)
        self._reader = self._sock.makefile("r", encoding="utf-8")
        self._writer = self._sock.makefile("w", encoding="utf-8")

    def _send_line(self, line: str) -> None:
        self._writer.write(line)
        self._writer.flush()

    def _recv_line(self, timeout_s: float) -> str:
        self._sock.settimeout(timeout_s)
        try:
            line = self._reader.readline()
        except socket.timeout:
            raise AdapterTimeout(f"no reply within {self.deadline_ms} ms") from None
        if not line:
            raise AdapterClosed("backend closed the connection")
        return line

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def _backend_detections(msg: dict, source: ReplaySource | None) -> list[dict]:
    if source is not None:
        return detections_to_record(source.detect(int(msg["id"])))["detections"]
    # Echo mode: the frame payload may itself carry a detections list.
    try:
        payload = json.loads(base64.b64decode(msg.get("data_b64", "")))
        if isinstance(payload, list):
            return payload
    except (ValueError, json.JSONDecodeError):
        pass
    return []


def run_backend(stdin=None, stdout=None, source: ReplaySource | None = None) -> None:
    """Serve the backend side of the protocol until EOF (reference backend)."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for raw in stdin:
        raw = raw.strip()
        if not raw:
            continue
        msg = json.loads(raw)
        if msg.get("type") == "hello":
            if msg.get("version") != PROTOCOL_VERSION:
                break
            reply = {
                "type": "ready",
                "version": PROTOCOL_VERSION,
                "labels": ["person", "with_mask", "without_mask", "mask_worn_incorrect"],
            }
        elif msg.get("type") == "frame":
            reply = {
                "type": "detections",
                "id": msg["id"],
                "detections": _backend_detections(msg, source),
            }
        else:
            break
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="reference inference backend")
    parser.add_argument("--replay", help="serve detections from a JSONL replay file")
    args = parser.parse_args(argv)
    source = ReplaySource.load(args.replay) if args.replay else None
    run_backend(source=source)
    return 0


if __name__ == "__main__":
    sys.exit(main())
