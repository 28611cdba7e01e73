"""Obstacle-world tests: signed distance against closed forms and sampling
oracles, labels, observation models, stepping and generation."""

import numpy as np
import pytest

from cbfsteer.environment import (
    CloudSource,
    EnvGenConfig,
    Environment,
    GenerationError,
    Obstacle,
    SafetyLabel,
    ScanSpec,
    Workspace,
    classify,
    random_environment,
    ray_cast_scan,
    sample_surface_points,
    signed_distance,
    signed_distance_batch,
    step_obstacles,
)
from cbfsteer.geometry import point_segment_distance
from cbfsteer.jsonio import canonical_dumps
from cbfsteer.kinematics import ArmModel, forward_kinematics, sample_config


@pytest.fixture
def arm():
    return ArmModel()


def far_circle_env(center=(1.0, 0.8), radius=0.2):
    return Environment(obstacles=(Obstacle(kind="circle", center=center, radius=radius),))


class TestSignedDistance:
    def test_single_circle_closed_form(self, arm):
        # close enough that the circle, not a self pair, attains the minimum
        env = far_circle_env(center=(1.0, 0.3))
        q = np.zeros(3)
        segs = forward_kinematics(arm, q)
        expected = min(
            float(point_segment_distance(np.array([1.0, 0.3]), s.endpoint_a, s.endpoint_b))
            for s in segs
        ) - 0.2 - arm.link_radius
        assert expected == pytest.approx(0.3 - 0.2 - arm.link_radius)
        assert signed_distance(env, arm, q) == pytest.approx(expected, abs=1e-12)

    def test_tip_inside_rectangle_negative(self, arm):
        # rectangle parked on the zero-pose tip (1.2, 0)
        env = Environment(obstacles=(
            Obstacle(kind="rect", center=(1.2, 0.0), half_extents=(0.1, 0.1)),))
        q = np.zeros(3)
        d = signed_distance(env, arm, q)
        assert d < 0
        # dense point-sampling penetration oracle agrees on the sign
        ts = np.linspace(0, 1, 2000)
        inside = False
        for seg in forward_kinematics(arm, q):
            pts = seg.endpoint_a[None, :] + ts[:, None] * (seg.endpoint_b - seg.endpoint_a)[None, :]
            q_rel = np.abs(pts - np.array([1.2, 0.0])) - np.array([0.1, 0.1])
            inside |= bool(np.any(np.maximum(q_rel, 0).sum(axis=1) == 0))
        assert inside

    def test_one_lipschitz_in_obstacle_translation(self, arm):
        rng = np.random.default_rng(0)
        for _ in range(100):
            center = rng.uniform(-1, 1, 2)
            shift = rng.normal(size=2)
            shift *= 0.1 / np.linalg.norm(shift)
            q = sample_config(arm, rng)
            if rng.random() < 0.5:
                e1 = Environment(obstacles=(
                    Obstacle(kind="circle", center=tuple(center), radius=0.2),))
                e2 = Environment(obstacles=(
                    Obstacle(kind="circle", center=tuple(center + shift), radius=0.2),))
            else:
                e1 = Environment(obstacles=(
                    Obstacle(kind="rect", center=tuple(center), half_extents=(0.2, 0.15)),))
                e2 = Environment(obstacles=(
                    Obstacle(kind="rect", center=tuple(center + shift), half_extents=(0.2, 0.15)),))
            d1 = signed_distance(e1, arm, q)
            d2 = signed_distance(e2, arm, q)
            assert abs(d2 - d1) <= 0.1 + 1e-9

    def test_no_obstacles_self_pairs_only(self, arm):
        env = Environment()
        # fold the arm back so link 0 and link 2 nearly touch
        q = np.array([0.0, 2.8, 2.8])
        d = signed_distance(env, arm, q)
        assert np.isfinite(d)
        segs = forward_kinematics(arm, q)
        from cbfsteer.geometry import segment_segment_distance

        expected = segment_segment_distance(
            segs[0].endpoint_a, segs[0].endpoint_b, segs[2].endpoint_a, segs[2].endpoint_b
        ) - 2 * arm.link_radius
        assert d == pytest.approx(expected, abs=1e-12)

    def test_two_link_empty_world_uses_workspace(self):
        arm2 = ArmModel(link_lengths=(0.5, 0.4))
        env = Environment(workspace=Workspace(center=(0.0, 0.0), half_extents=(1.5, 1.5)))
        d = signed_distance(env, arm2, np.zeros(2))
        assert np.isfinite(d)
        # zero pose reaches x=0.9; boundary at 1.5 -> clearance 0.6 - radius
        assert d == pytest.approx(1.5 - 0.9 - arm2.link_radius, abs=1e-12)

    def test_continuity_in_q(self, arm):
        rng = np.random.default_rng(1)
        env = random_environment(EnvGenConfig(), rng)
        lipschitz = sum(arm.link_lengths)
        for _ in range(200):
            q = sample_config(arm, rng)
            dq = rng.normal(scale=0.02, size=3)
            q2 = np.clip(q + dq, arm.lower, arm.upper)
            d1 = signed_distance(env, arm, q)
            d2 = signed_distance(env, arm, q2)
            assert abs(d2 - d1) <= lipschitz * np.linalg.norm(q2 - q, 1) + 1e-9


class TestClassify:
    def test_definitions(self, arm):
        env = far_circle_env()
        assert classify(env, arm, np.zeros(3), 0.05) is SafetyLabel.SAFE
        env_hit = Environment(obstacles=(
            Obstacle(kind="circle", center=(1.2, 0.0), radius=0.1),))
        assert classify(env_hit, arm, np.zeros(3), 0.05) is SafetyLabel.UNSAFE

    def test_boundary_band(self, arm):
        # circle at (1.0, 0.8): clearance = 0.8 - radius - link_radius = 0.02
        env = far_circle_env(radius=0.8 - arm.link_radius - 0.02)
        assert signed_distance(env, arm, np.zeros(3)) == pytest.approx(0.02, abs=1e-12)
        assert classify(env, arm, np.zeros(3), 0.05) is SafetyLabel.BOUNDARY

    def test_partition_property(self, arm):
        rng = np.random.default_rng(2)
        env = random_environment(EnvGenConfig(), rng)
        for _ in range(300):
            q = sample_config(arm, rng)
            d = signed_distance(env, arm, q)
            label = classify(env, arm, q, 0.05)
            expected = (SafetyLabel.UNSAFE if d <= 0
                        else SafetyLabel.SAFE if d >= 0.05 else SafetyLabel.BOUNDARY)
            assert label is expected

    def test_requires_positive_threshold(self, arm):
        with pytest.raises(ValueError):
            classify(far_circle_env(), arm, np.zeros(3), 0.0)


class TestSurfaceSampling:
    def test_square_sides_chi_squared(self):
        from scipy.stats import chisquare

        env = Environment(obstacles=(
            Obstacle(kind="rect", center=(0.0, 0.0), half_extents=(0.5, 0.5)),))
        rng = np.random.default_rng(3)
        cloud = sample_surface_points(env, 4000, rng)
        # classify points into the four sides by their normals
        keys = (cloud.normals @ np.array([[1, 0], [0, 1]])).round().astype(int)
        counts = {}
        for kx, ky in keys:
            counts[(kx, ky)] = counts.get((kx, ky), 0) + 1
        assert set(counts) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
        stat = chisquare(list(counts.values()))
        assert stat.pvalue > 0.01

    def test_circle_normals(self):
        env = Environment(obstacles=(Obstacle(kind="circle", center=(0.3, -0.2), radius=0.4),))
        rng = np.random.default_rng(4)
        cloud = sample_surface_points(env, 200, rng)
        expected = (cloud.points - np.array([0.3, -0.2])) / 0.4
        np.testing.assert_allclose(cloud.normals, expected, atol=1e-9)
        assert cloud.source is CloudSource.SURFACE_SAMPLED

    def test_points_on_boundary(self):
        rng = np.random.default_rng(5)
        env = random_environment(EnvGenConfig(num_obstacles=5, shapes=("rect", "circle")), rng)
        cloud = sample_surface_points(env, 500, rng)
        for p in cloud.points:
            d = min(abs(o.point_distance(p)) for o in env.obstacles)
            assert d <= 1e-9

    def test_perimeter_proportional_allocation(self):
        env = Environment(obstacles=(
            Obstacle(kind="rect", center=(-1.0, 0.0), half_extents=(0.1, 0.1)),  # perimeter 0.8
            Obstacle(kind="rect", center=(1.0, 0.0), half_extents=(0.3, 0.3)),  # perimeter 2.4
        ))
        rng = np.random.default_rng(6)
        cloud = sample_surface_points(env, 4000, rng)
        near_big = (cloud.points[:, 0] > 0).mean()
        assert near_big == pytest.approx(0.75, abs=0.03)

    def test_empty_environment_error(self):
        with pytest.raises(ValueError):
            sample_surface_points(Environment(), 10, np.random.default_rng(0))


class TestRayCast:
    def test_no_obstacles_all_sentinels(self, arm):
        spec = ScanSpec(mount_links=(0, 2), rays_per_mount=8, max_range=2.0)
        cloud = ray_cast_scan(Environment(), arm, np.zeros(3), spec)
        assert cloud.points.shape == (16, 2)
        assert cloud.source is CloudSource.RAY_CAST
        # sentinel: point at max range along the ray, normal opposite the ray
        origins = np.repeat([[0.25, 0.0], [1.05, 0.0]], 8, axis=0)
        rays = cloud.points - origins
        dist = np.linalg.norm(rays, axis=1)
        np.testing.assert_allclose(dist, 2.0, atol=1e-9)
        np.testing.assert_allclose(cloud.normals, -rays / dist[:, None], atol=1e-9)

    def test_circle_dead_ahead(self, arm):
        # first ray of the mount on link 0 points along the link (+x at q=0)
        env = Environment(obstacles=(Obstacle(kind="circle", center=(1.0, 0.0), radius=0.2),))
        spec = ScanSpec(mount_links=(0,), rays_per_mount=4, max_range=3.0)
        cloud = ray_cast_scan(env, arm, np.zeros(3), spec)
        # mount at link 0 midpoint (0.25, 0); hit at x = 1.0 - 0.2
        np.testing.assert_allclose(cloud.points[0], [0.8, 0.0], atol=1e-12)
        np.testing.assert_allclose(cloud.normals[0], [-1.0, 0.0], atol=1e-12)

    def test_hits_lie_on_boundaries(self, arm):
        rng = np.random.default_rng(7)
        env = random_environment(EnvGenConfig(num_obstacles=6, shapes=("rect", "circle")), rng)
        spec = ScanSpec(max_range=2.0)
        q = sample_config(arm, rng)
        cloud = ray_cast_scan(env, arm, q, spec)
        mounts = _mounts(arm, q, spec)
        for i, p in enumerate(cloud.points):
            d = min(abs(o.point_distance(p)) for o in env.obstacles)
            if d > 1e-6:
                # miss sentinel: exactly max_range from its mount
                mount = mounts[i // spec.rays_per_mount]
                assert np.linalg.norm(p - mount) == pytest.approx(2.0, abs=1e-9)

    def test_base_rotation_rotates_rays(self, arm):
        env = Environment()
        spec = ScanSpec(mount_links=(0,), rays_per_mount=8, max_range=1.0)
        c0 = ray_cast_scan(env, arm, np.zeros(3), spec)
        ang = 0.7
        c1 = ray_cast_scan(env, arm, np.array([ang, 0.0, 0.0]), spec)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        m0 = np.array([0.25, 0.0])
        d0 = (c0.points - m0) / 1.0
        m1 = rot @ m0
        d1 = c1.points - m1
        np.testing.assert_allclose(d1, d0 @ rot.T, atol=1e-9)


def _mounts(arm, q, spec):
    from cbfsteer.kinematics import joint_positions

    pts = joint_positions(arm, q)
    return [0.5 * (pts[l] + pts[l + 1]) for l in spec.mount_links]


class TestStepObstacles:
    def test_zero_velocity_only_time(self):
        env = far_circle_env()
        env2 = step_obstacles(env, 0.5)
        assert env2.time == pytest.approx(0.5)
        assert env2.obstacles == env.obstacles

    def test_constant_velocity(self):
        env = Environment(obstacles=(
            Obstacle(kind="circle", center=(0.0, 0.0), radius=0.1, velocity=(0.1, 0.0)),))
        env2 = step_obstacles(env, 2.0)
        np.testing.assert_allclose(env2.obstacles[0].center, [0.2, 0.0])

    def test_additivity(self):
        env = Environment(obstacles=(
            Obstacle(kind="rect", center=(0.2, -0.1), half_extents=(0.1, 0.2),
                     velocity=(-0.05, 0.12)),))
        a = step_obstacles(step_obstacles(env, 0.7), 0.3)
        b = step_obstacles(env, 1.0)
        np.testing.assert_allclose(a.obstacles[0].center, b.obstacles[0].center, atol=1e-12)
        assert a.time == pytest.approx(b.time)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            step_obstacles(Environment(), -0.1)


class TestRandomEnvironment:
    def test_zero_obstacles(self):
        env = random_environment(EnvGenConfig(num_obstacles=0), np.random.default_rng(0))
        assert env.num_obstacles == 0

    def test_seed_determinism_bytes(self):
        cfg = EnvGenConfig(num_obstacles=6, shapes=("rect", "circle"))
        e1 = random_environment(cfg, np.random.default_rng(42))
        e2 = random_environment(cfg, np.random.default_rng(42))
        assert canonical_dumps(e1.to_json()) == canonical_dumps(e2.to_json())

    def test_base_clearance_respected(self):
        rng = np.random.default_rng(1)
        cfg = EnvGenConfig(num_obstacles=4, min_clearance_from_base=0.25)
        for _ in range(1000):
            env = random_environment(cfg, rng)
            for obs in env.obstacles:
                assert obs.point_distance(np.zeros(2)) >= 0.25

    def test_generation_error_when_impossible(self):
        cfg = EnvGenConfig(num_obstacles=1, size_range=(4.0, 4.0),
                           workspace=Workspace(half_extents=(0.5, 0.5)),
                           min_clearance_from_base=0.25)
        with pytest.raises(GenerationError):
            random_environment(cfg, np.random.default_rng(2))


class TestSerialization:
    def test_environment_round_trip(self):
        rng = np.random.default_rng(8)
        env = random_environment(
            EnvGenConfig(num_obstacles=5, shapes=("rect", "circle"), obstacle_speed=0.1), rng)
        doc = env.to_json()
        env2 = Environment.from_json(doc)
        assert canonical_dumps(env2.to_json()) == canonical_dumps(doc)

    def test_batch_matches_single(self, arm):
        rng = np.random.default_rng(9)
        env = random_environment(EnvGenConfig(num_obstacles=6, shapes=("rect", "circle")), rng)
        qs = np.stack([sample_config(arm, rng) for _ in range(64)])
        batch = signed_distance_batch(env, arm, qs)
        for q, d in zip(qs, batch):
            assert d == pytest.approx(signed_distance(env, arm, q), abs=1e-12)
