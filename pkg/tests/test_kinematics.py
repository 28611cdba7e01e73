"""Arm model tests: FK against a phasor oracle, Jacobian against finite
differences, limit clamping and exact integration."""

import numpy as np
import pytest

from cbfsteer.kinematics import (
    ArmModel,
    clamp_to_limits,
    forward_kinematics,
    integrate,
    joint_positions,
    sample_config,
    tip_jacobian,
)


def phasor_tip(lengths, q, base=(0.0, 0.0)):
    """Independent FK oracle: accumulate unit phasors as complex products."""
    z = complex(*base)
    phase = complex(1.0, 0.0)
    for length, angle in zip(lengths, q):
        phase *= complex(np.cos(angle), np.sin(angle))
        z += length * phase
    return np.array([z.real, z.imag])


@pytest.fixture
def arm():
    return ArmModel()


@pytest.fixture
def wide_arm():
    return ArmModel(link_lengths=(1.0, 1.0), joint_lower=(-10.0, -10.0),
                    joint_upper=(10.0, 10.0), action_bound=(5.0, 5.0))


class TestForwardKinematics:
    def test_zero_chain_along_x(self, wide_arm):
        segs = forward_kinematics(wide_arm, np.zeros(2))
        np.testing.assert_allclose(segs[-1].endpoint_b, [2.0, 0.0], atol=1e-15)

    def test_quarter_turn(self, wide_arm):
        segs = forward_kinematics(wide_arm, np.array([np.pi / 2, 0.0]))
        np.testing.assert_allclose(segs[-1].endpoint_b, [0.0, 2.0], atol=1e-12)

    def test_tip_matches_phasor_oracle(self):
        arm = ArmModel(link_lengths=(0.5, 0.4, 0.3))
        q = np.array([0.3, -0.2, 0.1])
        tip = forward_kinematics(arm, q)[-1].endpoint_b
        np.testing.assert_allclose(tip, phasor_tip(arm.link_lengths, q), atol=1e-12)

    def test_random_configs_match_phasor(self, arm):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = sample_config(arm, rng)
            tip = forward_kinematics(arm, q)[-1].endpoint_b
            np.testing.assert_allclose(tip, phasor_tip(arm.link_lengths, q), atol=1e-12)

    def test_segments_chain_and_lengths(self, arm):
        rng = np.random.default_rng(1)
        q = sample_config(arm, rng)
        segs = forward_kinematics(arm, q)
        assert len(segs) == arm.n_links
        for i, seg in enumerate(segs):
            length = np.linalg.norm(seg.endpoint_b - seg.endpoint_a)
            assert length == pytest.approx(arm.link_lengths[i], rel=1e-9)
            if i:
                np.testing.assert_allclose(seg.endpoint_a, segs[i - 1].endpoint_b)

    def test_dimension_mismatch_raises(self, arm):
        with pytest.raises(ValueError):
            forward_kinematics(arm, np.zeros(2))

    def test_lipschitz_bound(self, arm):
        # per-endpoint displacement is bounded by (sum of lengths) * |dq|
        rng = np.random.default_rng(2)
        bound = sum(arm.link_lengths)
        for _ in range(200):
            q = sample_config(arm, rng)
            dq = rng.normal(scale=0.1, size=arm.n_links)
            p1 = joint_positions(arm, q)
            p2 = joint_positions(arm, np.clip(q + dq, arm.lower, arm.upper))
            dq_eff = clamp_to_limits(arm, q + dq) - q
            disp = np.linalg.norm(p2 - p1, axis=1).max()
            assert disp <= bound * np.linalg.norm(dq_eff, 1) + 1e-9


class TestTipJacobian:
    def test_all_links_along_x(self, wide_arm):
        jac = tip_jacobian(wide_arm, np.zeros(2))
        np.testing.assert_allclose(jac[:, 0], [0.0, 2.0], atol=1e-15)
        np.testing.assert_allclose(jac[:, 1], [0.0, 1.0], atol=1e-15)

    def test_single_link_quarter_turn(self):
        arm = ArmModel(link_lengths=(1.0, 1.0))
        jac = tip_jacobian(arm, np.array([np.pi / 2, 0.0]))
        np.testing.assert_allclose(jac[:, 0], [-2.0, 0.0], atol=1e-12)

    def test_matches_finite_differences(self, arm):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(100):
            q = sample_config(arm, rng) * 0.9  # keep the stencil inside the limits
            jac = tip_jacobian(arm, q)
            fd = np.zeros_like(jac)
            for i in range(arm.n_links):
                qp = q.copy()
                qp[i] += h
                qm = q.copy()
                qm[i] -= h
                fd[:, i] = (joint_positions(arm, qp)[-1] - joint_positions(arm, qm)[-1]) / (2 * h)
            np.testing.assert_allclose(jac, fd, atol=1e-6)


class TestClamp:
    def test_inside_unchanged(self, arm):
        q = np.array([0.1, -0.2, 0.3])
        np.testing.assert_array_equal(clamp_to_limits(arm, q), q)

    def test_above_upper(self, arm):
        q = np.array([arm.joint_upper[0] + 0.5, 0.0, 0.0])
        assert clamp_to_limits(arm, q)[0] == arm.joint_upper[0]

    def test_idempotent(self, arm):
        rng = np.random.default_rng(4)
        for _ in range(100):
            q = rng.uniform(-5, 5, arm.n_links)
            once = clamp_to_limits(arm, q)
            np.testing.assert_array_equal(clamp_to_limits(arm, once), once)


class TestIntegrate:
    def test_zero_control_identity(self, arm):
        q = np.array([0.5, -0.5, 0.2])
        q2, clipped = integrate(arm, q, np.zeros(3), 0.1)
        np.testing.assert_array_equal(q2, q)
        assert not clipped

    def test_euler_step(self, wide_arm):
        q2, clipped = integrate(wide_arm, np.zeros(2), np.array([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(q2, [0.1, -0.1])
        assert not clipped

    def test_constant_control_closed_form(self, arm):
        rng = np.random.default_rng(5)
        q = sample_config(arm, rng) * 0.3
        u = rng.uniform(-1, 1, arm.n_links)
        dt = 0.01
        steps = 50
        qq = q
        for _ in range(steps):
            qq, _ = integrate(arm, qq, u, dt)
        expected = clamp_to_limits(arm, q + u * dt * steps)
        np.testing.assert_allclose(qq, expected, atol=1e-12)

    def test_out_of_box_clipped_and_flagged(self, arm):
        q = np.zeros(3)
        q2, clipped = integrate(arm, q, np.array([5.0, 0.0, 0.0]), 0.1)
        assert clipped
        assert q2[0] == pytest.approx(arm.action_bound[0] * 0.1)

    def test_nonfinite_control_raises(self, arm):
        with pytest.raises(ValueError):
            integrate(arm, np.zeros(3), np.array([np.nan, 0.0, 0.0]), 0.1)


class TestArmModel:
    def test_json_round_trip(self):
        arm = ArmModel(link_lengths=(0.4, 0.3), base_position=(0.1, -0.2))
        doc = arm.to_json()
        assert set(doc) == {"link_lengths", "link_radius", "joint_lower", "joint_upper",
                            "action_bound", "base_position"}
        assert ArmModel.from_json(doc) == arm

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ArmModel(link_lengths=(1.0,))
        with pytest.raises(ValueError):
            ArmModel(link_lengths=(1.0, -1.0))
        with pytest.raises(ValueError):
            ArmModel(link_lengths=(1.0, 1.0), joint_lower=(1.0, 0.0), joint_upper=(0.5, 1.0))
        with pytest.raises(ValueError):
            ArmModel(link_lengths=(1.0, 1.0), action_bound=(0.0, 1.0))
