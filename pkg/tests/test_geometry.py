import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _support import STD_CORNERS, brute_force_homography, random_convex_quad, std_profile
from siteguard.errors import (
    DegenerateConfiguration,
    LoadMismatch,
    PointAtHorizon,
    SingularSystem,
)
from siteguard.geometry import (
    CalibrationProfile,
    GroundPlaneTransformer,
    Homography,
    ImagePoint,
    invert_homography,
    solve_homography,
    transform_point,
    transform_points,
)

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
TRAPEZOID = [(100, 300), (300, 300), (260, 200), (140, 200)]
TARGET_600 = [(0, 600), (600, 600), (600, 0), (0, 0)]


class TestSolveHomography:
    def test_fixed_points_force_identity(self):
        h = solve_homography(UNIT_SQUARE, UNIT_SQUARE)
        assert np.allclose(h.a, np.eye(3), atol=1e-9)

    def test_pure_scale(self):
        h = solve_homography(UNIT_SQUARE, [(0, 0), (2, 0), (2, 2), (0, 2)])
        assert np.allclose(h.a, np.diag([2.0, 2.0, 1.0]), atol=1e-9)

    def test_trapezoid_reprojection(self):
        h = solve_homography(TRAPEZOID, TARGET_600)
        out = transform_points(h, TRAPEZOID)
        assert np.abs(out - np.asarray(TARGET_600, dtype=float)).max() < 1e-6

    def test_collinear_points_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            solve_homography([(0, 0), (1, 0), (2, 0), (0, 1)], UNIT_SQUARE)

    def test_duplicate_points_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            solve_homography([(0, 0), (0, 0), (1, 1), (0, 1)], UNIT_SQUARE)
        with pytest.raises(DegenerateConfiguration):
            solve_homography(UNIT_SQUARE, [(0, 0), (0, 0), (1, 1), (0, 1)])

    def test_a33_is_one(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            h = solve_homography(
                random_convex_quad(rng, 10, 630), random_convex_quad(rng, 0, 600)
            )
            assert h.a[2, 2] == 1.0

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            src = random_convex_quad(rng, 10, 630)
            dst = random_convex_quad(rng, 0, 600)
            h = solve_homography(src, dst)
            reference = brute_force_homography(src, dst)
            scale = np.abs(h.a).max()
            assert (np.abs(h.a - reference) / scale).max() < 1e-9


class TestTransformPoint:
    def test_identity(self):
        p = transform_point(Homography.identity(), ImagePoint(5, 7))
        assert (p.x, p.y) == (5, 7)

    def test_scale(self):
        p = transform_point(Homography(np.diag([2.0, 2.0, 1.0])), ImagePoint(3, 4))
        assert (p.x, p.y) == (6, 8)

    def test_perspective_division(self):
        h = Homography([[1, 0, 0], [0, 1, 0], [0.1, 0, 1]])
        p = transform_point(h, ImagePoint(10, 0))
        assert p.x == pytest.approx(5.0, abs=1e-15)
        assert p.y == 0.0

    def test_point_at_horizon(self):
        h = Homography([[1, 0, 0], [0, 1, 0], [-0.1, 0, 1]])
        with pytest.raises(PointAtHorizon):
            transform_point(h, ImagePoint(10, 0))

    @settings(max_examples=50, deadline=None)
    @given(
        scale=st.floats(min_value=1e-6, max_value=1e6, allow_nan=False),
        u=st.floats(min_value=-500, max_value=500),
        v=st.floats(min_value=-500, max_value=500),
    )
    def test_homogeneous_scale_invariance(self, scale, u, v):
        matrix = np.array([[2.0, 0.3, 5.0], [-0.1, 1.5, 2.0], [1e-4, -2e-4, 1.0]])
        p1 = transform_point(Homography(matrix), ImagePoint(u, v))
        p2 = transform_point(Homography(scale * matrix), ImagePoint(u, v))
        assert p1.x == pytest.approx(p2.x, rel=1e-12, abs=1e-12)
        assert p1.y == pytest.approx(p2.y, rel=1e-12, abs=1e-12)

    def test_collinearity_preserved(self):
        rng = np.random.default_rng(5)
        h = solve_homography(TRAPEZOID, TARGET_600)
        for _ in range(100):
            a = rng.uniform(50, 400, 2)
            b = rng.uniform(50, 400, 2)
            t = rng.uniform(0.1, 0.9)
            c = a + t * (b - a)
            pa, pb, pc = (transform_point(h, tuple(p)) for p in (a, b, c))
            cross = (pb.x - pa.x) * (pc.y - pa.y) - (pc.x - pa.x) * (pb.y - pa.y)
            span = max(abs(pb.x - pa.x), abs(pb.y - pa.y), 1.0)
            assert abs(cross) / span**2 < 1e-6


class TestInvertHomography:
    def test_identity(self):
        assert invert_homography(Homography.identity()) == Homography.identity()

    def test_scale(self):
        inv = invert_homography(Homography(np.diag([2.0, 2.0, 1.0])))
        assert np.allclose(inv.a, np.diag([0.5, 0.5, 1.0]), atol=1e-15)

    def test_round_trip_100_points(self):
        rng = np.random.default_rng(17)
        h = solve_homography(TRAPEZOID, TARGET_600)
        hi = invert_homography(h)
        worst = 0.0
        for _ in range(100):
            p = ImagePoint(*rng.uniform(50, 400, 2))
            q = transform_point(hi, transform_point(h, p))
            worst = max(worst, abs(q.x - p.u), abs(q.y - p.v))
        assert worst < 1e-9

    def test_singular_rejected(self):
        with pytest.raises(SingularSystem):
            Homography(np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 0, 1.0]]))

    def test_vanishing_a33_rejected(self):
        with pytest.raises(SingularSystem):
            Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1e-15]]))


class TestCalibrationProfile:
    def test_axis_aligned_square_gives_translation(self):
        profile = std_profile()
        a = profile.homography.a
        # 300 px square onto a 600 px target: scale 2, no perspective terms.
        assert a[0, 0] == pytest.approx(2.0, abs=1e-9)
        assert a[1, 1] == pytest.approx(2.0, abs=1e-9)
        assert abs(a[2, 0]) < 1e-12 and abs(a[2, 1]) < 1e-12

    def test_trapezoid_reprojection(self):
        profile = CalibrationProfile(
            corners=tuple(ImagePoint(*c) for c in TRAPEZOID)
        )
        target = [(0, 600), (600, 600), (600, 0), (0, 0)]
        for corner, expected in zip(profile.corners, target):
            got = transform_point(profile.homography, corner)
            assert abs(got.x - expected[0]) < 1e-6
            assert abs(got.y - expected[1]) < 1e-6

    def test_repeated_corner_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            CalibrationProfile(
                corners=(
                    ImagePoint(0, 0),
                    ImagePoint(0, 0),
                    ImagePoint(1, 1),
                    ImagePoint(0, 1),
                )
            )

    def test_nonconvex_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            CalibrationProfile(
                corners=(
                    ImagePoint(0, 100),
                    ImagePoint(100, 100),
                    ImagePoint(10, 60),  # reflex corner
                    ImagePoint(0, 0),
                )
            )

    def test_save_load_round_trip(self, tmp_path):
        profile = std_profile()
        path = tmp_path / "calibration.json"
        profile.save(path)
        loaded = CalibrationProfile.load(path)
        assert np.array_equal(loaded.homography.a, profile.homography.a)
        assert loaded.created_at == profile.created_at

    def test_load_mismatch_rejected(self, tmp_path):
        profile = std_profile()
        data = profile.to_dict()
        data["homography"][0][0] += 1e-3
        path = tmp_path / "calibration.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(LoadMismatch):
            CalibrationProfile.load(path)

    def test_json_schema_fields(self):
        data = std_profile().to_dict()
        assert set(data) == {
            "corners",
            "edge_length_ft",
            "pixels_per_foot",
            "homography",
            "created_at",
        }
        assert len(data["corners"]) == 4
        assert len(data["homography"]) == 3


class TestGroundPlaneTransformer:
    def test_fit_transform(self):
        est = GroundPlaneTransformer().fit(np.asarray(STD_CORNERS))
        out = est.transform([[250.0, 400.0]])
        assert out[0] == pytest.approx([300.0, 600.0], abs=1e-9)

    def test_inverse_transform(self):
        est = GroundPlaneTransformer().fit(np.asarray(TRAPEZOID, dtype=float))
        pts = np.array([[150.0, 250.0], [200.0, 280.0]])
        back = est.inverse_transform(est.transform(pts))
        assert np.abs(back - pts).max() < 1e-9

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            GroundPlaneTransformer().transform([[0.0, 0.0]])

    def test_get_params_round_trip(self):
        est = GroundPlaneTransformer(edge_length_ft=3.0, pixels_per_foot=50.0)
        params = est.get_params()
        assert params == {"edge_length_ft": 3.0, "pixels_per_foot": 50.0}
        clone = GroundPlaneTransformer(**params).fit(np.asarray(STD_CORNERS))
        assert clone.profile_.edge_length_ft == 3.0


class TestValidation:
    def test_nan_point_rejected(self):
        with pytest.raises(ValueError):
            ImagePoint(math.nan, 0.0)

    def test_nonfinite_matrix_rejected(self):
        with pytest.raises(ValueError):
            Homography(np.array([[1, 0, 0], [0, np.inf, 0], [0, 0, 1.0]]))
