"""Detection data model, annotation parsing, and the replay backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import json
import math
import xml.etree.ElementTree as ET

from .errors import (
    InvalidBox,
    MalformedRecord,
    MalformedXml,
    NonMonotonicFrameIndex,
    UnknownLabel,
)


class ClassLabel(str, Enum):
    PERSON = "person"
    WITH_MASK = "with_mask"
    WITHOUT_MASK = "without_mask"
    MASK_WORN_INCORRECT = "mask_worn_incorrect"

    @classmethod
    def parse(cls, name: str) -> "ClassLabel":
        """Map a raw label string into the closed class set.

        Accepts the common dataset misspelling "mask_weared_incorrect".
        """
        normalized = _LABEL_ALIASES.get(name)
        if normalized is None:
            raise UnknownLabel(name)
        return normalized


_LABEL_ALIASES = {
    "person": ClassLabel.PERSON,
    "with_mask": ClassLabel.WITH_MASK,
    "without_mask": ClassLabel.WITHOUT_MASK,
    "mask_worn_incorrect": ClassLabel.MASK_WORN_INCORRECT,
    "mask_weared_incorrect": ClassLabel.MASK_WORN_INCORRECT,
}

FACE_LABELS = (
    ClassLabel.WITH_MASK,
    ClassLabel.WITHOUT_MASK,
    ClassLabel.MASK_WORN_INCORRECT,
)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels; y grows downward."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBox(f"non-finite coordinates: {coords}")
        if any(c < 0 for c in coords):
            raise InvalidBox(f"negative coordinates: {coords}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidBox(f"empty or inverted box: {coords}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class Detection:
    label: ClassLabel
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1]; got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    """One annotated face instance; persons are never ground truth."""

    label: ClassLabel
    box: BoundingBox
    source_image: str = ""

    def __post_init__(self):
        if self.label not in FACE_LABELS:
            raise UnknownLabel(self.label.value)


@dataclass(frozen=True)
class FrameDetections:
    """Detections of one frame, ordered by descending confidence (ties by xmin)."""

    frame_index: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0; got {self.frame_index}")
        ordered = tuple(
            sorted(self.detections, key=lambda d: (-d.confidence, d.box.xmin))
        )
        object.__setattr__(self, "detections", ordered)

    def __len__(self) -> int:
        return len(self.detections)


def filter_by_confidence(dets: FrameDetections, tau: float) -> FrameDetections:
    """Keep exactly the detections with confidence >= tau; order preserved."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1]; got {tau}")
    return FrameDetections(
        frame_index=dets.frame_index,
        detections=tuple(d for d in dets.detections if d.confidence >= tau),
    )


def parse_voc_annotation(xml_text: str) -> list[GroundTruth]:
    """Parse a Pascal-VOC annotation document into ground-truth instances.

    Raises MalformedXml, UnknownLabel, or InvalidBox.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc

    filename_el = root.find("filename")
    source = filename_el.text.strip() if filename_el is not None and filename_el.text else ""

    out = []
    for obj in root.iter("object"):
        name_el = obj.find("name")
        if name_el is None or not name_el.text:
            raise MalformedXml("object without a name element")
        label = ClassLabel.parse(name_el.text.strip())
        if label not in FACE_LABELS:
            raise UnknownLabel(name_el.text.strip())
        bnd = obj.find("bndbox")
        if bnd is None:
            raise MalformedXml("object without a bndbox element")
        try:
            coords = [float(bnd.find(k).text) for k in ("xmin", "ymin", "xmax", "ymax")]
        except (TypeError, AttributeError, ValueError) as exc:
            raise MalformedXml(f"bndbox with missing or non-numeric fields: {exc}") from exc
        out.append(GroundTruth(label=label, box=BoundingBox(*coords), source_image=source))
    return out


def ground_truth_to_voc(image_name: str, size: tuple[int, int], truths: list[GroundTruth]) -> str:
    """Serialize ground truths back to a VOC annotation document.

    size is (width, height). Box coordinates are written as integers per the
    public dataset layout.
    """
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = image_name
    size_el = ET.SubElement(root, "size")
    ET.SubElement(size_el, "width").text = str(size[0])
    ET.SubElement(size_el, "height").text = str(size[1])
    ET.SubElement(size_el, "depth").text = "3"
    for gt in truths:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = gt.label.value
        bnd = ET.SubElement(obj, "bndbox")
        ET.SubElement(bnd, "xmin").text = str(int(round(gt.box.xmin)))
        ET.SubElement(bnd, "ymin").text = str(int(round(gt.box.ymin)))
        ET.SubElement(bnd, "xmax").text = str(int(round(gt.box.xmax)))
        ET.SubElement(bnd, "ymax").text = str(int(round(gt.box.ymax)))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def detections_to_record(dets: FrameDetections) -> dict:
    return {
        "frame": dets.frame_index,
        "detections": [
            {"label": d.label.value, "box": d.box.as_list(), "conf": d.confidence}
            for d in dets.detections
        ],
    }


def _detection_from_obj(obj: dict) -> Detection:
    label = ClassLabel.parse(obj["label"])
    box = obj["box"]
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        raise InvalidBox(f"box must be [x0, y0, x1, y1]; got {box!r}")
    conf = float(obj["conf"])
    if not (0.0 <= conf <= 1.0):
        raise ValueError(f"confidence out of range: {conf}")
    return Detection(label=label, box=BoundingBox(*[float(c) for c in box]), confidence=conf)


def record_to_detections(record: dict) -> FrameDetections:
    frame = record["frame"]
    if not isinstance(frame, int) or frame < 0:
        raise ValueError(f"frame must be a non-negative integer; got {frame!r}")
    dets = tuple(_detection_from_obj(o) for o in record.get("detections", []))
    return FrameDetections(frame_index=frame, detections=dets)


class ReplaySource:
    """Deterministic detection backend serving pre-recorded frames.

    Loads a JSONL file of one FrameDetections record per line with strictly
    increasing frame indices. detect(i) returns the stored record or an empty
    FrameDetections, bit-identically across runs.
    """

    def __init__(self, frames: dict[int, FrameDetections]):
        self._frames = frames

    @classmethod
    def load(cls, path) -> "ReplaySource":
        frames: dict[int, FrameDetections] = {}
        last_index = -1
        with open(path, "r", encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    dets = record_to_detections(record)
                except NonMonotonicFrameIndex:
                    raise
                except Exception as exc:
                    raise MalformedRecord(line_number, str(exc)) from exc
                if dets.frame_index <= last_index:
                    raise NonMonotonicFrameIndex(
                        f"line {line_number}: frame {dets.frame_index} after {last_index}"
                    )
                last_index = dets.frame_index
                frames[dets.frame_index] = dets
        return cls(frames)

    def detect(self, frame_index: int) -> FrameDetections:
        found = self._frames.get(frame_index)
        if found is None:
            return FrameDetections(frame_index=frame_index)
        return found

    @property
    def frame_indices(self) -> list[int]:
        return sorted(self._frames)

    def __len__(self) -> int:
        return len(self._frames)
