"""Shared test helpers: samplers, independent oracles, scene builders."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from siteguard.detection import BoundingBox
from siteguard.geometry import CalibrationProfile, ImagePoint
from siteguard.imaging import save_image

STD_CORNERS = ((100.0, 400.0), (400.0, 400.0), (400.0, 100.0), (100.0, 100.0))


def std_profile(pixels_per_foot: float = 100.0) -> CalibrationProfile:
    """Axis-aligned 300 px calibration square: exact-arithmetic scale map."""
    return CalibrationProfile(
        corners=tuple(ImagePoint(u, v) for u, v in STD_CORNERS),
        edge_length_ft=6.0,
        pixels_per_foot=pixels_per_foot,
    )


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def is_convex(pts) -> bool:
    cross = []
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        cross.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    return all(x > 0 for x in cross) or all(x < 0 for x in cross)


def random_convex_quad(rng, lo: float, hi: float, min_area: float = 2000.0) -> np.ndarray:
    """Simple convex quadrilateral: random points ordered by angle, area-floored."""
    while True:
        pts = rng.uniform(lo, hi, (4, 2))
        center = pts.mean(axis=0)
        pts = pts[np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))]
        if not is_convex(pts):
            continue
        areas = [
            triangle_area(*[pts[k] for k in range(4) if k != skip]) for skip in range(4)
        ]
        if min(areas) >= min_area:
            return pts


def brute_force_homography(src, dst) -> np.ndarray:
    """Independent reference solve: normalize points (centroid 0, RMS sqrt(2)),
    assemble the 8x8 correspondence system, least-squares solve, denormalize,
    and rescale to a33 = 1."""

    def norm_t(pts):
        c = pts.mean(axis=0)
        rms = math.sqrt(float(np.mean(np.sum((pts - c) ** 2, axis=1))))
        s = math.sqrt(2.0) / rms
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])

    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ts, td = norm_t(src), norm_t(dst)
    sn = src @ ts[:2, :2].T + ts[:2, 2]
    dn = dst @ td[:2, :2].T + td[:2, 2]
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((u, v), (x, y)) in enumerate(zip(sn, dn)):
        a[2 * i] = [u, v, 1, 0, 0, 0, -u * x, -v * x]
        b[2 * i] = x
        a[2 * i + 1] = [0, 0, 0, u, v, 1, -u * y, -v * y]
        b[2 * i + 1] = y
    h, *_ = np.linalg.lstsq(a, b, rcond=None)
    hn = np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    full = np.linalg.inv(td) @ hn @ ts
    return full / full[2, 2]


def person_record(pid: int, x: float, y: float):
    """Minimal PersonRecord planted directly at a plane position."""
    from siteguard.compliance import MaskStatus, PersonRecord
    from siteguard.geometry import PlanePoint

    return PersonRecord(
        person_id=pid,
        box=BoundingBox(0.0, 0.0, 1.0, 1.0),
        anchor=ImagePoint(0.5, 1.0),
        plane_pos=PlanePoint(x, y),
        mask=MaskStatus.unknown(),
    )


def box_for_anchor(ax: float, ay: float, width: float = 80.0, height: float = 200.0) -> list:
    """A person box whose bottom-center sits at (ax, ay)."""
    return [ax - width / 2.0, ay - height, ax + width / 2.0, ay]


def make_frames(directory: Path, count: int, size=(640, 480), value: int = 96) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = np.full((size[1], size[0], 3), value, dtype=np.uint8)
    for i in range(count):
        save_image(directory / f"frame_{i:06d}.png", frame)
    return directory


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path


def fixtures_dir() -> Path:
    return Path(__file__).parent / "fixtures"


def golden_dir() -> Path:
    return Path(__file__).parent / "golden"
