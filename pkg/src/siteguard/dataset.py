"""Dataset tooling: class statistics, augmentation, and balancing.

Augmentation operators transform both pixels and bounding boxes; balancing
cycles seeded-random operators over deficient classes until every face class
reaches the target instance count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
import random

import cv2
import numpy as np

from .detection import (
    BoundingBox,
    ClassLabel,
    FACE_LABELS,
    GroundTruth,
    ground_truth_to_voc,
    parse_voc_annotation,
)
from .errors import InsufficientSourceImages
from .imaging import load_image, save_image

logger = logging.getLogger(__name__)

# Transformed annotations clipped below this area are dropped.
MIN_BOX_AREA = 4.0

ALPHA_RANGE = (0.5, 1.5)
BETA_RANGE = (-60.0, 60.0)
ANGLE_RANGE = (-15.0, 15.0)
RIGHT_ANGLES = (90.0, 180.0, 270.0)


@dataclass(frozen=True)
class AnnotatedImage:
    """An RGB raster with its face annotations, all boxes inside the raster."""

    image: np.ndarray
    annotations: tuple[GroundTruth, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.dtype != np.uint8:
            raise ValueError("image must be an (H, W, 3) uint8 array")
        h, w = self.image.shape[:2]
        for ann in self.annotations:
            box = ann.box
            if box.xmax > w or box.ymax > h:
                raise ValueError(
                    f"annotation {box.as_list()} outside {w}x{h} raster"
                )

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)."""
        return self.image.shape[1], self.image.shape[0]


@dataclass(frozen=True)
class AugmentationOp:
    """One of flip_horizontal, rotate(angle), brightness_contrast(alpha, beta)."""

    kind: str
    angle: float = 0.0
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind == "flip_horizontal":
            pass
        elif self.kind == "rotate":
            in_band = ANGLE_RANGE[0] <= self.angle <= ANGLE_RANGE[1]
            if not (in_band or self.angle in RIGHT_ANGLES):
                raise ValueError(
                    f"angle must be in [{ANGLE_RANGE[0]}, {ANGLE_RANGE[1]}] or one of"
                    f" {RIGHT_ANGLES}; got {self.angle}"
                )
        elif self.kind == "brightness_contrast":
            if not (ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]):
                raise ValueError(f"alpha out of {ALPHA_RANGE}: {self.alpha}")
            if not (BETA_RANGE[0] <= self.beta <= BETA_RANGE[1]):
                raise ValueError(f"beta out of {BETA_RANGE}: {self.beta}")
        else:
            raise ValueError(f"unknown op kind: {self.kind!r}")

    def describe(self) -> dict:
        if self.kind == "rotate":
            return {"kind": self.kind, "angle": self.angle}
        if self.kind == "brightness_contrast":
            return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}
        return {"kind": self.kind}

    @classmethod
    def flip_horizontal(cls) -> "AugmentationOp":
        return cls(kind="flip_horizontal")

    @classmethod
    def rotate(cls, angle: float) -> "AugmentationOp":
        return cls(kind="rotate", angle=angle)

    @classmethod
    def brightness_contrast(cls, alpha: float, beta: float) -> "AugmentationOp":
        return cls(kind="brightness_contrast", alpha=alpha, beta=beta)


def class_counts(dataset: list[AnnotatedImage]) -> dict[ClassLabel, int]:
    """Instance counts per face class across the whole dataset."""
    counts = {label: 0 for label in FACE_LABELS}
    for item in dataset:
        for ann in item.annotations:
            counts[ann.label] += 1
    return counts


def _rotation_geometry(w: int, h: int, angle_deg: float):
    """Rotation matrix (y-down pixel coords), output canvas, and corner map."""
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    new_w = int(math.ceil(abs(w * c) + abs(h * s) - 1e-9))
    new_h = int(math.ceil(abs(w * s) + abs(h * c) - 1e-9))

    cx, cy = w / 2.0, h / 2.0
    ncx, ncy = new_w / 2.0, new_h / 2.0

    def map_corner(x: float, y: float) -> tuple[float, float]:
        dx, dy = x - cx, y - cy
        return (c * dx - s * dy + ncx, s * dx + c * dy + ncy)

    return c, s, new_w, new_h, map_corner


def _rotate_pixels(image: np.ndarray, angle_deg: float) -> np.ndarray:
    if angle_deg == 0.0:
        return image.copy()
    if angle_deg in RIGHT_ANGLES:
        # Exact right-angle rotations; k chosen so positive angles appear
        # clockwise on screen, matching the corner map below.
        k = {90.0: -1, 180.0: 2, 270.0: 1}[angle_deg]
        return np.ascontiguousarray(np.rot90(image, k=k))
    h, w = image.shape[:2]
    c, s, new_w, new_h, _ = _rotation_geometry(w, h, angle_deg)
    # warpAffine works in pixel-center coordinates (integer = center), so the
    # corner-coordinate map shifts by half a pixel on each side.
    tx = c * (0.5 - w / 2.0) - s * (0.5 - h / 2.0) + new_w / 2.0 - 0.5
    ty = s * (0.5 - w / 2.0) + c * (0.5 - h / 2.0) + new_h / 2.0 - 0.5
    m = np.array([[c, -s, tx], [s, c, ty]], dtype=np.float64)
    return cv2.warpAffine(
        image,
        m,
        (new_w, new_h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0, 0, 0),
    )


def _transform_box(box: BoundingBox, op: AugmentationOp, w: int, h: int) -> BoundingBox | None:
    """New axis-aligned box under op; None when it clips below MIN_BOX_AREA."""
    if op.kind == "flip_horizontal":
        return BoundingBox(w - box.xmax, box.ymin, w - box.xmin, box.ymax)
    if op.kind == "brightness_contrast":
        return box
    if op.angle == 0.0:
        return box
    if op.angle == 180.0:
        return BoundingBox(w - box.xmax, h - box.ymax, w - box.xmin, h - box.ymin)
    _, _, new_w, new_h, map_corner = _rotation_geometry(w, h, op.angle)
    corners = [
        map_corner(box.xmin, box.ymin),
        map_corner(box.xmax, box.ymin),
        map_corner(box.xmax, box.ymax),
        map_corner(box.xmin, box.ymax),
    ]
    xs = [p[0] for p in corners]
    ys = [p[1] for p in corners]
    x0 = max(0.0, min(xs))
    y0 = max(0.0, min(ys))
    x1 = min(float(new_w), max(xs))
    y1 = min(float(new_h), max(ys))
    if x1 - x0 <= 0 or y1 - y0 <= 0 or (x1 - x0) * (y1 - y0) < MIN_BOX_AREA:
        return None
    return BoundingBox(x0, y0, x1, y1)


def apply_augmentation(
    img: AnnotatedImage, op: AugmentationOp, seed: int | None = None
) -> AnnotatedImage:
    """Apply one operator to pixels and annotations.

    flip reflects columns; rotate expands the canvas to the rotated bounds
    (bilinear, black fill) and each box becomes the clipped axis-aligned hull
    of its rotated corners; brightness_contrast clamps alpha*v + beta to
    [0, 255] per channel and leaves boxes untouched. Annotations whose clipped
    box drops below 4 px^2 are removed with a warning. The seed argument is
    reserved for stochastic operators; the current set is fully determined by
    the op parameters.
    """
    w, h = img.size
    if op.kind == "flip_horizontal":
        pixels = np.ascontiguousarray(img.image[:, ::-1])
    elif op.kind == "rotate":
        pixels = _rotate_pixels(img.image, op.angle)
    elif op.kind == "brightness_contrast":
        out = np.rint(img.image.astype(np.float64) * op.alpha + op.beta)
        pixels = np.clip(out, 0, 255).astype(np.uint8)
    else:
        raise ValueError(f"unknown op kind: {op.kind!r}")

    kept = []
    dropped = 0
    for ann in img.annotations:
        new_box = _transform_box(ann.box, op, w, h)
        if new_box is None:
            dropped += 1
            continue
        kept.append(GroundTruth(label=ann.label, box=new_box, source_image=ann.source_image))
    if dropped:
        logger.warning("%s: %d annotation(s) dropped below %s px^2", img.name, dropped, MIN_BOX_AREA)
    return AnnotatedImage(image=pixels, annotations=tuple(kept), name=img.name)


@dataclass(frozen=True)
class BalancePlan:
    """Per-class instance targets and the additions needed to reach them."""

    target: int
    current: dict[ClassLabel, int]
    needed: dict[ClassLabel, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.target < 0:
            raise ValueError("target must be >= 0")
        needed = {
            label: max(0, self.target - self.current.get(label, 0))
            for label in FACE_LABELS
        }
        object.__setattr__(self, "needed", needed)

    @property
    def total_additions(self) -> int:
        return sum(self.needed.values())


def balance_plan(counts: dict[ClassLabel, int], target: int) -> BalancePlan:
    return BalancePlan(target=target, current=dict(counts))


def random_op(rng: random.Random) -> AugmentationOp:
    """Sample one operator; parameter ranges keep faces recognizable."""
    kind = rng.choice(("flip_horizontal", "rotate", "brightness_contrast"))
    if kind == "flip_horizontal":
        return AugmentationOp.flip_horizontal()
    if kind == "rotate":
        return AugmentationOp.rotate(rng.uniform(*ANGLE_RANGE))
    return AugmentationOp.brightness_contrast(
        rng.uniform(*ALPHA_RANGE), rng.uniform(*BETA_RANGE)
    )


def run_balancing(
    dataset: list[AnnotatedImage], plan: BalancePlan, seed: int = 0
) -> tuple[list[AnnotatedImage], list[dict]]:
    """Augment until every face class reaches the plan target.

    Cycles deterministically through the images containing each deficient
    class, applying one seeded-random operator per copy. Returns the combined
    dataset and a manifest of one record per generated image; the manifest is
    a pure function of (dataset, plan, seed).

    Raises InsufficientSourceImages when a deficient class appears in no image.
    """
    rng = random.Random(seed)
    counts = class_counts(dataset)
    augmented = list(dataset)
    manifest: list[dict] = []
    serial = 0

    for label in FACE_LABELS:
        if plan.needed.get(label, 0) <= 0:
            continue
        sources = [img for img in dataset if any(a.label is label for a in img.annotations)]
        if not sources:
            raise InsufficientSourceImages(label.value)
        cursor = 0
        stall = 0
        while counts[label] < plan.target:
            src = sources[cursor % len(sources)]
            cursor += 1
            op = random_op(rng)
            serial += 1
            new_name = f"{src.name or 'image'}_aug{serial:05d}"
            result = apply_augmentation(src, op)
            new_img = AnnotatedImage(
                image=result.image, annotations=result.annotations, name=new_name
            )
            gained = sum(1 for a in new_img.annotations if a.label is label)
            if gained == 0:
                stall += 1
                if stall > 10 * len(sources) + 100:
                    raise InsufficientSourceImages(label.value)
                continue
            stall = 0
            augmented.append(new_img)
            for ann in new_img.annotations:
                counts[ann.label] += 1
            manifest.append(
                {
                    "source": src.name,
                    "output": new_name,
                    "op": op.describe(),
                    "seed": seed,
                    "counts": {k.value: v for k, v in counts.items()},
                }
            )
    return augmented, manifest


def split_files(items: list, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Seeded random split into (train, test) with len(train) = round(ratio * n)."""
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"ratio must be in [0, 1]; got {ratio}")
    shuffled = list(items)
    random.Random(seed).shuffle(shuffled)
    n_train = int(round(len(shuffled) * ratio))
    return shuffled[:n_train], shuffled[n_train:]


# --- directory layer ---------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_annotated_directory(path) -> list[AnnotatedImage]:
    """Read a directory of images with sibling VOC XML files."""
    root = Path(path)
    out = []
    for xml_path in sorted(root.glob("*.xml")):
        annotations = parse_voc_annotation(xml_path.read_text(encoding="utf-8"))
        image_path = None
        for suffix in IMAGE_SUFFIXES:
            candidate = xml_path.with_suffix(suffix)
            if candidate.exists():
                image_path = candidate
                break
        if image_path is None:
            raise FileNotFoundError(f"no image beside {xml_path}")
        out.append(
            AnnotatedImage(
                image=load_image(image_path),
                annotations=tuple(annotations),
                name=xml_path.stem,
            )
        )
    return out


def save_augmented(
    out_dir, new_images: list[AnnotatedImage], manifest: list[dict]
) -> None:
    """Write generated images, their VOC XML, and the manifest JSONL."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for img in new_images:
        save_image(out / f"{img.name}.png", img.image)
        (out / f"{img.name}.xml").write_text(
            ground_truth_to_voc(f"{img.name}.png", img.size, list(img.annotations)),
            encoding="utf-8",
        )
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for record in manifest:
            fh.write(json.dumps(record) + "\n")
