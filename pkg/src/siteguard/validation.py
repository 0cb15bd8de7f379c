"""Input validation helpers shared by the geometry estimators and functional API."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateConfiguration

# Triangle areas at or below this (px^2) count as collinear.
COLLINEARITY_TOL = 1e-6


def as_point_array(points, n: int | None = None, name: str = "points") -> np.ndarray:
    """Coerce to a float64 (m, 2) array and check finiteness.

    Accepts sequences of 2-tuples, point dataclasses with u/v or x/y fields,
    or an (m, 2) array. Raises ValueError on bad shape or non-finite values.
    """
    if isinstance(points, np.ndarray):
        arr = points.astype(np.float64, copy=True)
    else:
        rows = []
        for p in points:
            if hasattr(p, "u"):
                rows.append((p.u, p.v))
            elif hasattr(p, "x"):
                rows.append((p.x, p.y))
            else:
                rows.append(tuple(p))
        arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (m, 2); got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} must contain exactly {n} points; got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix_3x3(mat, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 3x3 array."""
    arr = np.asarray(mat, dtype=np.float64)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3; got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr.copy()


def triangle_area(a, b, c) -> float:
    """Unsigned area of the triangle abc in px^2."""
    return 0.5 * abs(
        (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    )


def check_quad(points: np.ndarray, name: str = "points", require_convex: bool = False) -> None:
    """Reject degenerate 4-point configurations.

    Points must be pairwise distinct and no three collinear (triangle area
    above COLLINEARITY_TOL). With require_convex, the quadrilateral taken in
    the given order must also be convex.

    Raises DegenerateConfiguration.
    """
    if points.shape != (4, 2):
        raise ValueError(f"{name} must be 4 points; got {points.shape}")
    for i in range(4):
        for j in range(i + 1, 4):
            if np.array_equal(points[i], points[j]):
                raise DegenerateConfiguration(
                    f"{name}: points {i} and {j} coincide"
                )
    for skip in range(4):
        tri = [points[k] for k in range(4) if k != skip]
        if triangle_area(*tri) <= COLLINEARITY_TOL:
            raise DegenerateConfiguration(
                f"{name}: three points are collinear (triangle area <= {COLLINEARITY_TOL} px^2)"
            )
    if require_convex:
        crosses = []
        for i in range(4):
            a, b, c = points[i], points[(i + 1) % 4], points[(i + 2) % 4]
            crosses.append(
                (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            )
        if not (all(x > 0 for x in crosses) or all(x < 0 for x in crosses)):
            raise DegenerateConfiguration(f"{name}: quadrilateral is not convex")


def check_finite_scalar(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite; got {value}")
    return value
