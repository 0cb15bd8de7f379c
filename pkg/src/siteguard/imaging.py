"""Image I/O helpers. In-memory rasters are 8-bit RGB (H, W, 3) arrays."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


def encode_png(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def decode_image(data: bytes) -> np.ndarray:
    bgr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_COLOR)
    if bgr is None:
        raise ValueError("image decoding failed")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def load_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    return decode_image(data)


def save_image(path, image: np.ndarray) -> None:
    ext = Path(path).suffix or ".png"
    ok, buf = cv2.imencode(ext, cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ValueError(f"encoding failed for {path}")
    Path(path).write_bytes(buf.tobytes())
