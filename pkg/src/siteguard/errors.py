"""Exception hierarchy for the siteguard engine."""


class SiteguardError(Exception):
    """Base class for all engine errors."""


# --- geometry ---------------------------------------------------------------

class DegenerateConfiguration(SiteguardError):
    """Calibration points are collinear, duplicated, or non-convex."""


class SingularSystem(SiteguardError):
    """A linear solve or matrix inversion fell below the pivoting threshold."""


class PointAtHorizon(SiteguardError):
    """The point maps to infinity: |w'| below the homogeneous threshold."""


class LoadMismatch(SiteguardError):
    """A stored calibration matrix disagrees with the one recomputed from its corners."""


# --- detection --------------------------------------------------------------

class MalformedXml(SiteguardError):
    """Annotation XML could not be parsed."""


class UnknownLabel(SiteguardError):
    """A label outside the closed class set."""

    def __init__(self, name: str):
        super().__init__(f"unknown label: {name!r}")
        self.name = name


class InvalidBox(SiteguardError):
    """Bounding box violates xmin < xmax, ymin < ymax, or coordinate range."""


class MalformedRecord(SiteguardError):
    """A detections JSONL line failed validation."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class NonMonotonicFrameIndex(SiteguardError):
    """Replay file frame indices are not strictly increasing."""


# --- inference adapter ------------------------------------------------------

class AdapterError(SiteguardError):
    """Base class for inference-adapter failures."""


class AdapterTimeout(AdapterError):
    """Backend did not answer within the deadline."""


class AdapterProtocolError(AdapterError):
    """Backend sent a reply outside the wire contract."""


class AdapterClosed(AdapterError):
    """Backend process or connection is gone."""


# --- dataset ----------------------------------------------------------------

class BoxDegenerate(SiteguardError):
    """A transformed annotation clipped below the minimum area."""


class InsufficientSourceImages(SiteguardError):
    """A deficient class has no source image to augment from."""

    def __init__(self, label: str):
        super().__init__(f"no source image contains an instance of {label!r}")
        self.label = label


# --- service / config -------------------------------------------------------

class ConfigError(SiteguardError):
    """Invalid or missing runtime configuration."""
