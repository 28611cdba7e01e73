"""Distance-primitive tests against dense-sampling and closed-form oracles."""

import numpy as np
import pytest

from cbfsteer import geometry


def dense_rect_sdf_min(a, b, center, half, n=4001):
    """Sampling oracle: min rect SDF over many points of the segment."""
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return geometry.point_rect_sdf(pts, center, half).min()


class TestPointRectSdf:
    def test_outside_axis(self):
        d = geometry.point_rect_sdf(np.array([2.0, 0.0]), np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert d == pytest.approx(1.0)

    def test_corner(self):
        d = geometry.point_rect_sdf(np.array([2.0, 2.0]), np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert d == pytest.approx(np.sqrt(2.0))

    def test_inside(self):
        d = geometry.point_rect_sdf(np.array([0.2, 0.0]), np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert d == pytest.approx(-0.8)


class TestSegmentRect:
    def test_disjoint_matches_sampling(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.uniform(-2, 2, 2)
            b = rng.uniform(-2, 2, 2)
            c = rng.uniform(-2, 2, 2)
            h = rng.uniform(0.05, 0.6, 2)
            exact = geometry.segment_rect_signed_distance(a, b, c, h)
            approx = dense_rect_sdf_min(a, b, c, h)
            # sampling overestimates the min by at most the sample spacing
            assert exact <= approx + 1e-12
            assert approx - exact <= np.linalg.norm(b - a) / 4000 + 1e-9

    def test_sign_matches_sampling(self):
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(200):
            a = rng.uniform(-1, 1, 2)
            b = rng.uniform(-1, 1, 2)
            c = rng.uniform(-0.5, 0.5, 2)
            h = rng.uniform(0.1, 0.5, 2)
            exact = geometry.segment_rect_signed_distance(a, b, c, h)
            approx = dense_rect_sdf_min(a, b, c, h)
            if abs(approx) > 1e-3:  # avoid tangency ambiguity at sampling resolution
                assert np.sign(exact) == np.sign(approx)
            if exact < 0:
                hits += 1
        assert hits > 10  # the sweep actually exercised penetrations

    def test_fully_inside_negative(self):
        # deepest point of the segment is the origin, with SDF -1
        d = geometry.segment_rect_signed_distance(
            np.array([-0.1, 0.0]), np.array([0.1, 0.0]), np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert d == pytest.approx(-1.0)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, 2)
        b = rng.uniform(-1, 1, 2)
        centers = rng.uniform(-1, 1, (8, 2))
        halves = rng.uniform(0.05, 0.5, (8, 2))
        vec = geometry.segment_rects_signed_distance(a, b, centers, halves)
        for k in range(8):
            assert vec[k] == pytest.approx(
                geometry.segment_rect_signed_distance(a, b, centers[k], halves[k]), abs=1e-12)


class TestSegmentSegment:
    def test_crossing_is_zero(self):
        d = geometry.segment_segment_distance(
            np.array([-1.0, 0.0]), np.array([1.0, 0.0]),
            np.array([0.0, -1.0]), np.array([0.0, 1.0]))
        assert d == 0.0

    def test_parallel(self):
        d = geometry.segment_segment_distance(
            np.array([0.0, 0.0]), np.array([1.0, 0.0]),
            np.array([0.0, 0.5]), np.array([1.0, 0.5]))
        assert d == pytest.approx(0.5)

    def test_paired_matches_scalar(self):
        rng = np.random.default_rng(6)
        a1 = rng.uniform(-1, 1, (50, 2))
        b1 = rng.uniform(-1, 1, (50, 2))
        a2 = rng.uniform(-1, 1, (50, 2))
        b2 = rng.uniform(-1, 1, (50, 2))
        d = geometry.seg_seg_distance_paired(a1, b1, a2, b2)
        for i in range(50):
            assert d[i] == pytest.approx(
                geometry.segment_segment_distance(a1[i], b1[i], a2[i], b2[i]), abs=1e-12)


class TestRayCasts:
    def test_ray_circle_closed_form(self):
        # ray from origin along +x at a circle centered (2, 0) radius 0.5
        t, n = geometry.ray_circles(
            np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]),
            np.array([[2.0, 0.0]]), np.array([0.5]))
        assert t[0, 0] == pytest.approx(1.5)
        np.testing.assert_allclose(n[0, 0], [-1.0, 0.0], atol=1e-12)

    def test_ray_circle_miss(self):
        t, _ = geometry.ray_circles(
            np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]),
            np.array([[0.0, 2.0]]), np.array([0.5]))
        assert np.isinf(t[0, 0])

    def test_ray_rect_entry_face(self):
        t, n = geometry.ray_rects(
            np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]),
            np.array([[3.0, 0.0]]), np.array([[1.0, 0.5]]))
        assert t[0, 0] == pytest.approx(2.0)
        np.testing.assert_allclose(n[0, 0], [-1.0, 0.0])

    def test_ray_rect_parallel_miss(self):
        t, _ = geometry.ray_rects(
            np.array([[0.0, 2.0]]), np.array([[1.0, 0.0]]),
            np.array([[3.0, 0.0]]), np.array([[1.0, 0.5]]))
        assert np.isinf(t[0, 0])


class TestFusedKernel:
    def test_matches_componentwise_primitives(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            seg_a = rng.uniform(-1.5, 1.5, (6, 2))
            seg_b = rng.uniform(-1.5, 1.5, (6, 2))
            cc = rng.uniform(-1, 1, (3, 2))
            cr = rng.uniform(0.1, 0.4, 3)
            rc = rng.uniform(-1, 1, (3, 2))
            rh = rng.uniform(0.1, 0.4, (3, 2))
            hx = rh[:, 0]
            hy = rh[:, 1]
            corners = np.stack([
                rc + np.stack([-hx, -hy], axis=1),
                rc + np.stack([hx, -hy], axis=1),
                rc + np.stack([hx, hy], axis=1),
                rc + np.stack([-hx, hy], axis=1),
            ], axis=1)
            es = corners.reshape(-1, 2)
            ee = np.roll(corners, -1, axis=1).reshape(-1, 2)
            fused = geometry.capsule_world_min(seg_a, seg_b, cc, cr, rc, rh, es, ee)
            for i in range(6):
                circ = (geometry.segment_circles_signed_distance(seg_a[i], seg_b[i], cc, cr)).min()
                rect = (geometry.segment_rects_signed_distance(seg_a[i], seg_b[i], rc, rh)).min()
                assert fused[i] == pytest.approx(min(circ, rect), abs=1e-12)
