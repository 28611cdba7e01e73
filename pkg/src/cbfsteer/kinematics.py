"""Planar n-link serial arm: velocity-controlled kinematics and link geometry.

Joint angles are relative (cumulative-angle convention): link i points along
the direction sum(q[0..i]) measured from the +x axis. Configurations are plain
float arrays of length n. Links are capsules (segment plus radius).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LinkSegment:
    """World-frame capsule axis of one link."""

    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float
    link_index: int


@dataclass(frozen=True)
class ArmModel:
    """Kinematic chain with joint limits and a symmetric box action space.

    Dynamics are a pure integrator (q_dot = u), with per-joint speed bounds
    |u_i| <= action_bound[i].
    """

    link_lengths: tuple[float, ...] = (0.5, 0.4, 0.3)
    link_radius: float = 0.04
    joint_lower: tuple[float, ...] = field(default=None)  # type: ignore[assignment]
    joint_upper: tuple[float, ...] = field(default=None)  # type: ignore[assignment]
    action_bound: tuple[float, ...] = field(default=None)  # type: ignore[assignment]
    base_position: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        n = len(self.link_lengths)
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        if self.joint_lower is None:
            object.__setattr__(self, "joint_lower", tuple([-2.8] * n))
        if self.joint_upper is None:
            object.__setattr__(self, "joint_upper", tuple([2.8] * n))
        if self.action_bound is None:
            object.__setattr__(self, "action_bound", tuple([1.0] * n))
        object.__setattr__(self, "joint_lower", tuple(float(v) for v in self.joint_lower))
        object.__setattr__(self, "joint_upper", tuple(float(v) for v in self.joint_upper))
        object.__setattr__(self, "action_bound", tuple(float(v) for v in self.action_bound))
        object.__setattr__(self, "base_position", tuple(float(v) for v in self.base_position))
        if n < 2:
            raise ValueError("arm needs at least 2 links")
        if any(l <= 0 for l in self.link_lengths) or self.link_radius <= 0:
            raise ValueError("link lengths and radius must be positive")
        if len(self.joint_lower) != n or len(self.joint_upper) != n or len(self.action_bound) != n:
            raise ValueError("per-joint bounds must match the number of links")
        if any(lo >= hi for lo, hi in zip(self.joint_lower, self.joint_upper)):
            raise ValueError("joint_lower must be strictly below joint_upper")
        if any(u <= 0 for u in self.action_bound):
            raise ValueError("action box must have nonempty interior")

    @property
    def n_links(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.joint_lower)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.joint_upper)

    @property
    def action_lower(self) -> np.ndarray:
        return -np.array(self.action_bound)

    @property
    def action_upper(self) -> np.ndarray:
        return np.array(self.action_bound)

    def to_json(self) -> dict:
        return {
            "link_lengths": list(self.link_lengths),
            "link_radius": self.link_radius,
            "joint_lower": list(self.joint_lower),
            "joint_upper": list(self.joint_upper),
            "action_bound": list(self.action_bound),
            "base_position": list(self.base_position),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ArmModel":
        return cls(
            link_lengths=tuple(doc["link_lengths"]),
            link_radius=float(doc["link_radius"]),
            joint_lower=tuple(doc["joint_lower"]),
            joint_upper=tuple(doc["joint_upper"]),
            action_bound=tuple(doc["action_bound"]),
            base_position=tuple(doc["base_position"]),
        )


def _check_config(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (arm.n_links,):
        raise ValueError(f"configuration has shape {q.shape}, expected ({arm.n_links},)")
    return q


def joint_positions(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """World positions of the base and every joint/tip: array (n+1, 2)."""
    q = _check_config(arm, q)
    angles = np.cumsum(q)
    steps = np.array(arm.link_lengths)[:, None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )
    pts = np.empty((arm.n_links + 1, 2))
    pts[0] = arm.base_position
    np.cumsum(steps, axis=0, out=pts[1:])
    pts[1:] += pts[0]
    return pts


def forward_kinematics(arm: ArmModel, q: np.ndarray) -> list[LinkSegment]:
    """Capsule axes of all links at configuration q."""
    pts = joint_positions(arm, q)
    return [
        LinkSegment(pts[i], pts[i + 1], arm.link_radius, i) for i in range(arm.n_links)
    ]


def tip_position(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    return joint_positions(arm, q)[-1]


def tip_jacobian(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """2 x n Jacobian of the tip position: column i = d(tip)/d(q_i).

    Under the cumulative convention, d(tip)/d(q_i) = sum_{k>=i} L_k * (-sin S_k, cos S_k)
    with S_k = sum(q[0..k]).
    """
    q = _check_config(arm, q)
    angles = np.cumsum(q)
    lengths = np.array(arm.link_lengths)
    terms = lengths[None, :] * np.stack([-np.sin(angles), np.cos(angles)], axis=0)  # (2, n)
    # suffix sums over k >= i
    jac = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]
    return jac


def clamp_to_limits(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Clamp each joint into its limit interval (idempotent)."""
    q = _check_config(arm, q)
    return np.clip(q, arm.lower, arm.upper)


def integrate(arm: ArmModel, q: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, bool]:
    """One exact Euler step of q_dot = u, clamped to joint limits.

    Controls outside the action box are clipped; the returned flag reports
    whether clipping happened. Raises on non-finite u.
    """
    q = _check_config(arm, q)
    u = np.asarray(u, dtype=float)
    if u.shape != (arm.n_links,):
        raise ValueError(f"control has shape {u.shape}, expected ({arm.n_links},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite control input")
    u_clipped = np.clip(u, arm.action_lower, arm.action_upper)
    clipped = bool(np.any(u_clipped != u))
    return clamp_to_limits(arm, q + u_clipped * dt), clipped


def sample_config(arm: ArmModel, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw inside the joint limits."""
    return rng.uniform(arm.lower, arm.upper)


def batch_link_frames(arm: ArmModel, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Link-frame origins (R, n, 2) and absolute angles (R, n) for R configurations."""
    qs = np.asarray(qs, dtype=float)
    angles = np.cumsum(qs, axis=1)
    lengths = np.array(arm.link_lengths)
    steps = lengths[None, :, None] * np.stack([np.cos(angles), np.sin(angles)], axis=2)
    origins = np.zeros_like(steps)
    origins[:, 1:, :] = np.cumsum(steps[:, :-1, :], axis=1)
    origins += np.asarray(arm.base_position, dtype=float)
    return origins, angles
