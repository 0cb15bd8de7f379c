"""Per-frame compliance analytics.

Turns one frame's detections plus a ground-plane calibration into pairwise
distances, violation pairs, risk groups, and per-person mask status. All
operations are pure; frames can be assessed concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import math

from .detection import BoundingBox, ClassLabel, Detection, FACE_LABELS, FrameDetections
from .errors import PointAtHorizon
from .geometry import CalibrationProfile, ImagePoint, PlanePoint, transform_point

DEFAULT_THRESHOLD_FT = 6.0


class MaskState(str, Enum):
    COMPLIANT = "compliant"
    VIOLATION_NO_MASK = "violation_no_mask"
    VIOLATION_INCORRECT = "violation_incorrect"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class MaskStatus:
    """Mask classification for one person; unknown carries no confidence."""

    state: MaskState
    confidence: float | None = None

    def __post_init__(self):
        if self.state is MaskState.UNKNOWN:
            if self.confidence is not None:
                raise ValueError("unknown mask status carries no confidence")
        else:
            if self.confidence is None or not (0.0 <= self.confidence <= 1.0):
                raise ValueError(f"confidence must be in [0, 1]; got {self.confidence}")

    @property
    def is_violation(self) -> bool:
        return self.state in (MaskState.VIOLATION_NO_MASK, MaskState.VIOLATION_INCORRECT)

    def to_record(self) -> dict:
        if self.state is MaskState.UNKNOWN:
            return {"status": self.state.value}
        return {"status": self.state.value, "confidence": self.confidence}

    @classmethod
    def unknown(cls) -> "MaskStatus":
        return cls(MaskState.UNKNOWN)


@dataclass(frozen=True)
class ComplianceConfig:
    threshold_ft: float = DEFAULT_THRESHOLD_FT
    face_confidence_floor: float = 0.5
    person_confidence_floor: float = 0.5

    def __post_init__(self):
        if self.threshold_ft <= 0:
            raise ValueError("threshold_ft must be positive")
        for name in ("face_confidence_floor", "person_confidence_floor"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]; got {v}")


@dataclass(frozen=True)
class PersonRecord:
    """One detected person with ground-plane position and mask status."""

    person_id: int
    box: BoundingBox
    anchor: ImagePoint
    plane_pos: PlanePoint
    mask: MaskStatus
    face_box: BoundingBox | None = None


@dataclass(frozen=True)
class DistancePair:
    """Unordered person pair stored once with a < b."""

    a: int
    b: int
    distance_ft: float
    violating: bool

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"pair must satisfy a < b; got ({self.a}, {self.b})")
        if self.distance_ft < 0:
            raise ValueError(f"distance must be >= 0; got {self.distance_ft}")


@dataclass(frozen=True)
class ViolationEvent:
    """One timestamped distance or mask violation for the event stream."""

    event_id: int
    frame_index: int
    wall_time: float
    kind: str  # "distance" | "mask"
    subjects: tuple[int, ...]
    boxes: tuple[BoundingBox, ...]
    distance_ft: float | None = None
    mask_detail: MaskStatus | None = None

    def __post_init__(self):
        if self.kind == "distance":
            if self.distance_ft is None or len(self.subjects) != 2:
                raise ValueError("distance event needs two subjects and a distance")
        elif self.kind == "mask":
            if self.mask_detail is None or not self.mask_detail.is_violation:
                raise ValueError("mask event needs a violating mask status")
            if len(self.subjects) != 1:
                raise ValueError("mask event has exactly one subject")
        else:
            raise ValueError(f"unknown event kind: {self.kind!r}")
        if len(self.boxes) != len(self.subjects):
            raise ValueError("one box per subject required")

    def to_record(self) -> dict:
        record = {
            "event_id": self.event_id,
            "frame": self.frame_index,
            "wall_time": round(self.wall_time, 3),
            "kind": self.kind,
            "subjects": list(self.subjects),
            "boxes": [b.as_list() for b in self.boxes],
        }
        if self.kind == "distance":
            record["distance_ft"] = round(self.distance_ft, 3)
        else:
            record["mask_detail"] = self.mask_detail.to_record()
        return record


@dataclass(frozen=True)
class FrameAssessment:
    """Compliance result for one frame."""

    frame_index: int
    persons: tuple[PersonRecord, ...]
    pairs: tuple[DistancePair, ...]
    risk_groups: tuple[frozenset[int], ...]
    events: tuple[ViolationEvent, ...]
    horizon_dropped: int = 0

    def risk_ids(self) -> frozenset[int]:
        out: set[int] = set()
        for group in self.risk_groups:
            out |= group
        return frozenset(out)

    def to_record(self) -> dict:
        return {
            "frame": self.frame_index,
            "persons": [
                {
                    "id": p.person_id,
                    "box": p.box.as_list(),
                    "anchor": [p.anchor.u, p.anchor.v],
                    "plane": [round(p.plane_pos.x, 3), round(p.plane_pos.y, 3)],
                    "mask": p.mask.to_record(),
                    "face_box": p.face_box.as_list() if p.face_box else None,
                }
                for p in self.persons
            ],
            "pairs": [
                {
                    "a": q.a,
                    "b": q.b,
                    "distance_ft": round(q.distance_ft, 3),
                    "violating": q.violating,
                }
                for q in self.pairs
            ],
            "risk_groups": [sorted(g) for g in self.risk_groups],
            "events": [e.to_record() for e in self.events],
            "horizon_dropped": self.horizon_dropped,
        }


def anchor_point(box: BoundingBox) -> ImagePoint:
    """Bottom-center of the box, taken as the person's ground contact."""
    return ImagePoint((box.xmin + box.xmax) / 2.0, box.ymax)


def pairwise_distances(
    persons: list[PersonRecord],
    scale: float,
    threshold_ft: float = DEFAULT_THRESHOLD_FT,
) -> list[DistancePair]:
    """Euclidean bird's-eye distance for every unordered pair, in feet.

    Violation is strictly below the threshold: exactly threshold_ft apart is
    compliant.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    pairs = []
    ordered = sorted(persons, key=lambda p: p.person_id)
    for i, pa in enumerate(ordered):
        for pb in ordered[i + 1:]:
            dist = math.hypot(
                pa.plane_pos.x - pb.plane_pos.x, pa.plane_pos.y - pb.plane_pos.y
            ) / scale
            pairs.append(
                DistancePair(
                    a=pa.person_id,
                    b=pb.person_id,
                    distance_ft=dist,
                    violating=dist < threshold_ft,
                )
            )
    return pairs


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        root = self.parent.setdefault(x, x)
        while root != self.parent[root]:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def risk_groups(pairs: list[DistancePair], persons=None) -> list[frozenset[int]]:
    """Connected components of the violation graph; singletons omitted.

    Groups come back ordered by their smallest member.
    """
    uf = _UnionFind()
    for pair in pairs:
        if pair.violating:
            uf.union(pair.a, pair.b)
    components: dict[int, set[int]] = {}
    for node in uf.parent:
        components.setdefault(uf.find(node), set()).add(node)
    groups = [frozenset(g) for g in components.values() if len(g) >= 2]
    return sorted(groups, key=min)


def _containment(face: BoundingBox, person: BoundingBox) -> float:
    """area(face intersect person) / area(face)."""
    w = min(face.xmax, person.xmax) - max(face.xmin, person.xmin)
    h = min(face.ymax, person.ymax) - max(face.ymin, person.ymin)
    if w <= 0 or h <= 0:
        return 0.0
    return (w * h) / face.area


def associate_faces(
    person_boxes: dict[int, BoundingBox],
    face_detections: list[Detection],
    containment_floor: float = 0.5,
) -> dict[int, Detection | None]:
    """Assign each face to at most one person by containment ratio.

    Faces are taken greedily in descending confidence (ties by xmin); each
    takes the still-free person with the highest containment at or above the
    floor, ties broken toward the lower person id. A person holds at most one
    face.
    """
    assigned: dict[int, Detection | None] = {pid: None for pid in person_boxes}
    free = set(person_boxes)
    faces = sorted(face_detections, key=lambda d: (-d.confidence, d.box.xmin))
    for face in faces:
        best_pid = None
        best_ratio = 0.0
        for pid in sorted(free):
            ratio = _containment(face.box, person_boxes[pid])
            if ratio >= containment_floor and ratio > best_ratio:
                best_pid, best_ratio = pid, ratio
        if best_pid is not None:
            assigned[best_pid] = face
            free.discard(best_pid)
    return assigned


def mask_status(face: Detection | None, cfg: ComplianceConfig) -> MaskStatus:
    """Classify one person's mask from their associated face, if any.

    A missing face, or one below the confidence floor, yields unknown — the
    person is then judged on the distancing criterion only.
    """
    if face is None or face.confidence < cfg.face_confidence_floor:
        return MaskStatus.unknown()
    if face.label is ClassLabel.WITH_MASK:
        return MaskStatus(MaskState.COMPLIANT, face.confidence)
    if face.label is ClassLabel.WITHOUT_MASK:
        return MaskStatus(MaskState.VIOLATION_NO_MASK, face.confidence)
    if face.label is ClassLabel.MASK_WORN_INCORRECT:
        return MaskStatus(MaskState.VIOLATION_INCORRECT, face.confidence)
    return MaskStatus.unknown()


def assess_frame(
    dets: FrameDetections,
    profile: CalibrationProfile,
    cfg: ComplianceConfig | None = None,
    *,
    first_event_id: int = 1,
    wall_time: float = 0.0,
) -> FrameAssessment:
    """Full compliance assessment of one frame.

    Persons at or above the person confidence floor are anchored at the
    bottom-center of their box and mapped through the calibration; a person
    whose anchor maps to infinity is excluded and tallied in horizon_dropped.
    Events are numbered consecutively from first_event_id: distance events in
    pair order first, then mask events in person-id order.
    """
    cfg = cfg or ComplianceConfig()
    person_dets = [
        d
        for d in dets.detections
        if d.label is ClassLabel.PERSON and d.confidence >= cfg.person_confidence_floor
    ]
    faces = [d for d in dets.detections if d.label in FACE_LABELS]

    placed: list[tuple[int, Detection, ImagePoint, PlanePoint]] = []
    horizon_dropped = 0
    next_id = 1
    for det in person_dets:
        anchor = anchor_point(det.box)
        try:
            plane = transform_point(profile.homography, anchor)
        except PointAtHorizon:
            horizon_dropped += 1
            continue
        placed.append((next_id, det, anchor, plane))
        next_id += 1

    boxes = {pid: det.box for pid, det, _, _ in placed}
    face_map = associate_faces(boxes, faces)

    persons = tuple(
        PersonRecord(
            person_id=pid,
            box=det.box,
            anchor=anchor,
            plane_pos=plane,
            mask=mask_status(face_map[pid], cfg),
            face_box=face_map[pid].box if face_map[pid] else None,
        )
        for pid, det, anchor, plane in placed
    )

    pairs = tuple(pairwise_distances(list(persons), profile.pixels_per_foot, cfg.threshold_ft))
    groups = tuple(risk_groups(list(pairs)))

    events = []
    event_id = first_event_id
    by_id = {p.person_id: p for p in persons}
    for pair in pairs:
        if pair.violating:
            events.append(
                ViolationEvent(
                    event_id=event_id,
                    frame_index=dets.frame_index,
                    wall_time=wall_time,
                    kind="distance",
                    subjects=(pair.a, pair.b),
                    boxes=(by_id[pair.a].box, by_id[pair.b].box),
                    distance_ft=pair.distance_ft,
                )
            )
            event_id += 1
    for person in persons:
        if person.mask.is_violation:
            events.append(
                ViolationEvent(
                    event_id=event_id,
                    frame_index=dets.frame_index,
                    wall_time=wall_time,
                    kind="mask",
                    subjects=(person.person_id,),
                    boxes=(person.box,),
                    mask_detail=person.mask,
                )
            )
            event_id += 1

    return FrameAssessment(
        frame_index=dets.frame_index,
        persons=persons,
        pairs=pairs,
        risk_groups=groups,
        events=tuple(events),
        horizon_dropped=horizon_dropped,
    )
