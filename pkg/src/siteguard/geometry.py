"""Ground-plane perspective geometry.

Maps camera image pixels to a bird's-eye view of the ground plane through a
3x3 projective transformation solved from a user-clicked calibration square.

Coordinate conventions
======================
Image frame:   origin top-left, u right, v down, units px.
Bird's-eye:    origin top-left, x right, y down, units px; distances are
               proportional to real ground distances (pixels_per_foot).
Click order:   the 4 calibration corners are given bottom-left, bottom-right,
               top-right, top-left of the ground square as seen in the image.
Destination:   the square of side S = edge_length_ft * pixels_per_foot with
               corners BL=(0,S), BR=(S,S), TR=(S,0), TL=(0,0), preserving the
               click winding.

A point (u, v) transforms through the matrix A = (a_ij) as

    (x', y', w')^T = A . (u, v, 1)^T,    x = x'/w',  y = y'/w'

with the input homogeneous coordinate fixed to 1. Matrices are normalized so
a33 = 1; all arithmetic is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import DegenerateConfiguration, LoadMismatch, PointAtHorizon, SingularSystem
from .validation import as_matrix_3x3, as_point_array, check_finite_scalar, check_quad

# |w'| at or below this maps to infinity.
HORIZON_TOL = 1e-12
# Pivot threshold for the 8x8 solve.
PIVOT_TOL = 1e-12
# Reprojection tolerance for calibration corners, px.
REPROJECTION_TOL = 1e-6
# Stored-vs-recomputed matrix tolerance on load, per element.
LOAD_TOL = 1e-6


@dataclass(frozen=True)
class ImagePoint:
    """A pixel position in the camera image."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"image point must be finite; got ({self.u}, {self.v})")


@dataclass(frozen=True)
class PlanePoint:
    """A pixel position in the bird's-eye ground plane."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"plane point must be finite; got ({self.x}, {self.y})")


class Homography:
    """Immutable nonsingular 3x3 projective matrix, normalized so a33 = 1."""

    __slots__ = ("a",)

    def __init__(self, matrix):
        a = as_matrix_3x3(matrix, "homography")
        scale = float(np.max(np.abs(a)))
        if scale == 0.0 or abs(a[2, 2]) / scale < 1e-9:
            raise SingularSystem("a33 vanishes; matrix cannot be normalized")
        a = a / a[2, 2]
        row_max = np.max(np.abs(a), axis=1, keepdims=True)
        if np.any(row_max == 0.0) or abs(np.linalg.det(a / row_max)) <= 1e-12:
            raise SingularSystem("matrix is singular")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    def __setattr__(self, *_):
        raise AttributeError("Homography is immutable")

    def __repr__(self):
        return f"Homography({self.a.tolist()})"

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.a, other.a)

    def as_list(self) -> list[list[float]]:
        return [[float(x) for x in row] for row in self.a]

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def _hartley_transform(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity T (and its exact inverse) taking points to centroid 0, RMS sqrt(2)."""
    centroid = points.mean(axis=0)
    rms = math.sqrt(float(np.mean(np.sum((points - centroid) ** 2, axis=1))))
    if rms < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = math.sqrt(2.0) / rms
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    t_inv = np.array(
        [[1.0 / s, 0.0, centroid[0]], [0.0, 1.0 / s, centroid[1]], [0.0, 0.0, 1.0]]
    )
    return t, t_inv


def _eliminate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting; SingularSystem below PIVOT_TOL."""
    n = a.shape[0]
    m = np.hstack([a.astype(np.float64, copy=True), b.reshape(-1, 1)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(m[col:, col])))
        if abs(m[pivot_row, col]) < PIVOT_TOL:
            raise SingularSystem(f"pivot below {PIVOT_TOL} at column {col}")
        if pivot_row != col:
            m[[col, pivot_row]] = m[[pivot_row, col]]
        m[col + 1:] -= np.outer(m[col + 1:, col] / m[col, col], m[col])
    x = np.empty(n)
    for row in range(n - 1, -1, -1):
        x[row] = (m[row, n] - m[row, row + 1: n] @ x[row + 1:]) / m[row, row]
    return x


def _solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elimination plus one step of iterative refinement."""
    x = _eliminate(a, b)
    residual = b - a @ x
    if np.all(np.isfinite(residual)) and np.any(residual):
        x = x + _eliminate(a, residual)
    return x


def _dlt_system(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The 8x8 system in (a11..a32) with a33 := 1 from 4 correspondences."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((u, v), (x, y)) in enumerate(zip(src, dst)):
        a[2 * i] = [u, v, 1.0, 0.0, 0.0, 0.0, -u * x, -v * x]
        a[2 * i + 1] = [0.0, 0.0, 0.0, u, v, 1.0, -u * y, -v * y]
        b[2 * i] = x
        b[2 * i + 1] = y
    return a, b


def solve_homography(src, dst) -> Homography:
    """Solve the projective matrix taking 4 source points onto 4 destination points.

    Points are Hartley-normalized (centroid 0, RMS sqrt(2)) before the 8x8
    solve and the result is denormalized, then rescaled so a33 = 1. Each
    source point reprojects onto its destination within 1e-6 px.

    Raises DegenerateConfiguration for collinear or duplicate points and
    SingularSystem when the solve falls below the pivot threshold.
    """
    src = as_point_array(src, 4, "src")
    dst = as_point_array(dst, 4, "dst")
    check_quad(src, "src")
    check_quad(dst, "dst")

    t_src, _ = _hartley_transform(src)
    t_dst, t_dst_inv = _hartley_transform(dst)
    src_n = src @ t_src[:2, :2].T + t_src[:2, 2]
    dst_n = dst @ t_dst[:2, :2].T + t_dst[:2, 2]

    a, b = _dlt_system(src_n, dst_n)
    h = _solve_linear(a, b)
    h_n = np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])

    matrix = t_dst_inv @ h_n @ t_src
    return Homography(matrix)


def _coords(p) -> tuple[float, float]:
    if hasattr(p, "u"):
        return p.u, p.v
    if hasattr(p, "x"):
        return p.x, p.y
    return float(p[0]), float(p[1])


def transform_point(h: Homography, p) -> PlanePoint:
    """Apply the perspective equation to one point: x = x'/w', y = y'/w'.

    Accepts an ImagePoint, a PlanePoint (for inverse maps), or a 2-sequence.
    """
    a = h.a
    u, v = _coords(p)
    xp = a[0, 0] * u + a[0, 1] * v + a[0, 2]
    yp = a[1, 0] * u + a[1, 1] * v + a[1, 2]
    wp = a[2, 0] * u + a[2, 1] * v + a[2, 2]
    if abs(wp) <= HORIZON_TOL:
        raise PointAtHorizon(f"point ({u}, {v}) maps to infinity (|w'| = {abs(wp):.3e})")
    return PlanePoint(xp / wp, yp / wp)


def transform_points(h: Homography, points) -> np.ndarray:
    """Vectorized transform of an (m, 2) array of points."""
    pts = as_point_array(points, name="points")
    hom = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ h.a.T
    w = hom[:, 2]
    bad = np.abs(w) <= HORIZON_TOL
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise PointAtHorizon(f"point index {idx} maps to infinity")
    return hom[:, :2] / w[:, None]


def invert_homography(h: Homography) -> Homography:
    """Inverse map, renormalized so a33 = 1."""
    try:
        inv = np.linalg.inv(h.a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return Homography(inv)


def _target_square(edge_length_ft: float, pixels_per_foot: float) -> np.ndarray:
    side = edge_length_ft * pixels_per_foot
    return np.array([[0.0, side], [side, side], [side, 0.0], [0.0, 0.0]])


@dataclass(frozen=True)
class CalibrationProfile:
    """The 4 clicked ground-square corners plus scale, and the derived matrix.

    Corners follow the documented click order (BL, BR, TR, TL in the image).
    The profile is immutable and safe to share across threads.
    """

    corners: tuple[ImagePoint, ImagePoint, ImagePoint, ImagePoint]
    edge_length_ft: float = 6.0
    pixels_per_foot: float = 100.0
    homography: Homography = field(default=None)  # derived when omitted
    created_at: str = field(default=None)

    def __post_init__(self):
        corners = tuple(
            c if isinstance(c, ImagePoint) else ImagePoint(float(c[0]), float(c[1]))
            for c in self.corners
        )
        object.__setattr__(self, "corners", corners)
        check_finite_scalar(self.edge_length_ft, "edge_length_ft")
        check_finite_scalar(self.pixels_per_foot, "pixels_per_foot")
        if self.edge_length_ft <= 0 or self.pixels_per_foot <= 0:
            raise ValueError("edge_length_ft and pixels_per_foot must be positive")

        pts = as_point_array(corners, 4, "corners")
        check_quad(pts, "corners", require_convex=True)

        if self.homography is None:
            derived = solve_homography(
                pts, _target_square(self.edge_length_ft, self.pixels_per_foot)
            )
            object.__setattr__(self, "homography", derived)
        if self.created_at is None:
            object.__setattr__(
                self, "created_at", datetime.now(timezone.utc).isoformat()
            )
        # Every corner must land on the target square within tolerance.
        target = _target_square(self.edge_length_ft, self.pixels_per_foot)
        for corner, expected in zip(corners, target):
            got = transform_point(self.homography, corner)
            err = max(abs(got.x - expected[0]), abs(got.y - expected[1]))
            if err > REPROJECTION_TOL:
                raise DegenerateConfiguration(
                    f"corner reprojection error {err:.3e} px exceeds {REPROJECTION_TOL}"
                )

    def to_dict(self) -> dict:
        return {
            "corners": [[c.u, c.v] for c in self.corners],
            "edge_length_ft": self.edge_length_ft,
            "pixels_per_foot": self.pixels_per_foot,
            "homography": self.homography.as_list(),
            "created_at": self.created_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationProfile":
        """Rebuild a profile, re-deriving the matrix and checking it against the stored one."""
        corners = tuple(ImagePoint(float(u), float(v)) for u, v in data["corners"])
        recomputed = solve_homography(
            as_point_array(corners, 4),
            _target_square(float(data["edge_length_ft"]), float(data["pixels_per_foot"])),
        )
        stored = as_matrix_3x3(data["homography"], "stored homography")
        if np.max(np.abs(stored - recomputed.a)) > LOAD_TOL:
            raise LoadMismatch(
                "stored homography disagrees with the matrix recomputed from corners"
            )
        return cls(
            corners=corners,
            edge_length_ft=float(data["edge_length_ft"]),
            pixels_per_foot=float(data["pixels_per_foot"]),
            homography=recomputed,
            created_at=data.get("created_at"),
        )

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def calibration_to_homography(profile: CalibrationProfile) -> Homography:
    """The profile's image-to-bird's-eye matrix (derived at construction)."""
    return profile.homography


class GroundPlaneTransformer(BaseEstimator, TransformerMixin):
    """Estimator mapping image pixels to bird's-eye ground-plane pixels.

    fit() takes the 4 clicked corners of a ground square (click order BL, BR,
    TR, TL) as an (4, 2) array; transform() then maps (m, 2) image points to
    the bird's-eye plane where distances are pixels_per_foot-proportional.
    """

    def __init__(self, edge_length_ft: float = 6.0, pixels_per_foot: float = 100.0):
        self.edge_length_ft = edge_length_ft
        self.pixels_per_foot = pixels_per_foot

    def fit(self, X, y=None):
        corners = as_point_array(X, 4, "X")
        self.profile_ = CalibrationProfile(
            corners=tuple(ImagePoint(*c) for c in corners),
            edge_length_ft=self.edge_length_ft,
            pixels_per_foot=self.pixels_per_foot,
        )
        self.homography_ = self.profile_.homography
        return self

    def _check_fitted(self):
        if not hasattr(self, "homography_"):
            raise NotFittedError("GroundPlaneTransformer is not fitted; call fit() first")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        return transform_points(self.homography_, X)

    def inverse_transform(self, X) -> np.ndarray:
        self._check_fitted()
        return transform_points(invert_homography(self.homography_), X)
