"""Goal-seeking nominal policy, the barrier QP safety filter, and closed-loop
rollouts at split simulation/control rates.

The filter solves min ||u - u_nom||^2 over the action box subject to
grad_h . u + alpha*h <= 0 (drift-free dynamics). Strict mode is exact and can
signal infeasibility; relaxed mode trades the constraint for a quadratic
violation penalty and always returns a control.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import (
    Environment,
    ScanSpec,
    StateObservation,
    ray_cast_scan,
    signed_distance,
    signed_distance_batch,
    step_obstacles,
)
from .kinematics import ArmModel, integrate


@dataclass(frozen=True)
class NominalPolicy:
    """Proportional pull toward the goal, saturated to the action box."""

    gain: float = 1.0

    def control(self, q: np.ndarray, q_goal: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        u = -self.gain * (np.asarray(q, float) - np.asarray(q_goal, float))
        return np.clip(u, lo, hi)


def nominal_control(policy: NominalPolicy, q: np.ndarray, q_goal: np.ndarray,
                    lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return policy.control(q, q_goal, lo, hi)


class QpMode(str, enum.Enum):
    STRICT = "strict"
    RELAXED = "relaxed"


@dataclass(frozen=True)
class SafeControllerConfig:
    alpha: float = 1.0
    relax_penalty: float = 100.0
    mode: QpMode = QpMode.RELAXED

    def __post_init__(self):
        if self.mode is QpMode.RELAXED and self.relax_penalty <= 0:
            raise ValueError("relaxed mode needs a positive penalty")


@dataclass(frozen=True)
class QpDiagnostics:
    constraint_active: bool
    infeasible: bool
    violation: float


def _project_halfspace_box(u_nom: np.ndarray, a: np.ndarray, c: float,
                           lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact projection of u_nom onto {a.u = c} intersect box.

    Works on the dual scalar: u(lam) = clip(u_nom - lam*a) has a.u(lam)
    piecewise linear and non-increasing in lam; walk its breakpoints (the
    coordinate clamping events, i.e. the active-set changes) to the exact
    crossing. Assumes a.u_nom > c and that the intersection is nonempty.
    """
    n = u_nom.shape[0]
    lam_clamp = np.full(n, np.inf)
    bound_at_clamp = np.empty(n)
    for i in range(n):
        if a[i] > 0:
            lam_clamp[i] = (u_nom[i] - lo[i]) / a[i]
            bound_at_clamp[i] = lo[i]
        elif a[i] < 0:
            lam_clamp[i] = (u_nom[i] - hi[i]) / a[i]
            bound_at_clamp[i] = hi[i]
    order = np.argsort(lam_clamp)
    free = np.ones(n, dtype=bool)
    lam_prev = 0.0
    c_clamped = 0.0  # sum over clamped coords of a_i * bound_i
    for k in range(n + 1):
        s_free = float(np.sum(a[free] ** 2))
        c_free = float(a[free] @ u_nom[free])
        lam_next = lam_clamp[order[k]] if k < n else np.inf
        if s_free > 0.0:
            lam = (c_free + c_clamped - c) / s_free
            # phi is monotone, so a computed lam below the interval start is
            # roundoff; crossing beyond lam_next means clamp another coordinate.
            tol = 1e-12 * max(1.0, abs(lam))
            if lam <= lam_next + tol:
                return np.clip(u_nom - max(lam, lam_prev) * a, lo, hi)
        if k == n:
            break
        i = order[k]
        lam_prev = lam_clamp[i]
        if np.isfinite(lam_prev):
            free[i] = False
            c_clamped += a[i] * bound_at_clamp[i]
    # Feasible-by-precondition: the walk only falls through at the tangent point.
    return np.clip(u_nom - lam_prev * a, lo, hi)


def _relaxed_penalty_min(u_nom: np.ndarray, a: np.ndarray, b: float, rho: float,
                         lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact minimizer of ||u-u_nom||^2 + rho*[a.u+b]_+^2 over the box.

    The KKT point is u = clip(u_nom - mu*a) with mu = rho*[a.u+b]_+; the scalar
    fixpoint mu/rho = a.clip(u_nom - mu*a) + b pairs an increasing line with a
    non-increasing piecewise-linear curve, so walking the clamping breakpoints
    finds the unique crossing exactly. Assumes a.u_nom + b > 0 on entry.
    """
    n = u_nom.shape[0]
    mu_clamp = np.full(n, np.inf)
    bound_at_clamp = np.zeros(n)
    for i in range(n):
        if a[i] > 0:
            mu_clamp[i] = (u_nom[i] - lo[i]) / a[i]
            bound_at_clamp[i] = lo[i]
        elif a[i] < 0:
            mu_clamp[i] = (u_nom[i] - hi[i]) / a[i]
            bound_at_clamp[i] = hi[i]
    order = np.argsort(mu_clamp)
    free = np.ones(n, dtype=bool)
    mu_prev = 0.0
    c_clamped = 0.0
    for k in range(n + 1):
        s_free = float(np.sum(a[free] ** 2))
        c_free = float(a[free] @ u_nom[free])
        phi_const = c_free + c_clamped + b  # phi(mu) = phi_const - s_free*mu
        mu_next = mu_clamp[order[k]] if k < n else np.inf
        mu = rho * phi_const / (1.0 + rho * s_free)
        tol = 1e-12 * max(1.0, abs(mu))
        if mu <= mu_next + tol:
            return np.clip(u_nom - max(mu, mu_prev) * a, lo, hi)
        if k == n:
            break
        i = order[k]
        mu_prev = mu_clamp[i]
        if np.isfinite(mu_prev):
            free[i] = False
            c_clamped += a[i] * bound_at_clamp[i]
    return np.clip(u_nom - mu_prev * a, lo, hi)


def solve_safety_qp(u_nom: np.ndarray, grad_h: np.ndarray, h_val: float,
                    cfg: SafeControllerConfig, lo: np.ndarray, hi: np.ndarray
                    ) -> tuple[np.ndarray, QpDiagnostics]:
    """Filter a nominal control through the barrier constraint a.u + b <= 0
    with a = grad_h and b = alpha*h.

    Strict mode returns the exact constrained minimizer, or signals
    infeasibility when even the best box control cannot satisfy the
    constraint. Relaxed mode always returns a control, trading violation
    against deviation. Diagnostics carry the closed-form infeasibility test in
    both modes. u_nom is expected inside the box (the nominal policy clips).
    """
    u_nom = np.asarray(u_nom, dtype=float)
    a = np.asarray(grad_h, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(u_nom)) and np.all(np.isfinite(a)) and math.isfinite(h_val)):
        raise ValueError("non-finite QP inputs")
    if np.any(lo > hi):
        raise ValueError("empty action box")
    b = cfg.alpha * float(h_val)
    # Closed-form separability: the least achievable a.u over the box.
    best_u = np.where(a > 0.0, lo, np.where(a < 0.0, hi, lo))
    inf_box = float(a @ best_u)
    infeasible = inf_box + b > 0.0

    if float(a @ u_nom) + b <= 0.0:
        return u_nom, QpDiagnostics(constraint_active=False, infeasible=infeasible, violation=0.0)

    if cfg.mode is QpMode.STRICT:
        if infeasible:
            return best_u, QpDiagnostics(
                constraint_active=True, infeasible=True, violation=inf_box + b)
        u = _project_halfspace_box(u_nom, a, -b, lo, hi)
        viol = max(0.0, float(a @ u) + b)
        return u, QpDiagnostics(constraint_active=True, infeasible=False, violation=viol)

    if np.all(a == 0.0):
        u = u_nom
    else:
        u = _relaxed_penalty_min(u_nom, a, b, cfg.relax_penalty, lo, hi)
    viol = max(0.0, float(a @ u) + b)
    return u, QpDiagnostics(constraint_active=True, infeasible=infeasible, violation=viol)


@dataclass(frozen=True)
class RolloutLimits:
    horizon_s: float = 10.0
    sim_hz: int = 120
    ctrl_hz: int = 30
    r_goal: float = 0.1
    # stop after this many consecutive ticks with ||u|| below the threshold
    stall_threshold: float | None = None
    stall_ticks: int = 5


@dataclass
class RolloutRecord:
    configs: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    min_signed_distance: list = field(default_factory=list)
    reached_goal: bool = False
    collided: bool = False
    qp_infeasible_count: int = 0
    steps_used: int = 0

    def to_json(self) -> dict:
        return {
            "configs": [np.asarray(q).tolist() for q in self.configs],
            "controls": [np.asarray(u).tolist() for u in self.controls],
            "min_signed_distance": list(self.min_signed_distance),
            "reached_goal": self.reached_goal,
            "collided": self.collided,
            "qp_infeasible_count": self.qp_infeasible_count,
            "steps_used": self.steps_used,
        }


def make_state_observer():
    """Observation closure for the scalar signed-distance model."""

    def observe(env: Environment, arm: ArmModel, q: np.ndarray) -> StateObservation:
        return StateObservation(signed_distance(env, arm, q))

    return observe


def make_fixed_cloud_observer(cloud):
    """Closure returning one pre-sampled surface cloud (static full observation)."""

    def observe(env, arm, q):
        return cloud

    return observe


def make_raycast_observer(spec: ScanSpec):
    """Closure scanning the current environment from the arm's mounted fans."""

    def observe(env, arm, q):
        return ray_cast_scan(env, arm, q, spec)

    return observe


def safe_rollout(barrier, policy: NominalPolicy, cfg: SafeControllerConfig,
                 q0: np.ndarray, q_goal: np.ndarray, env: Environment,
                 limits: RolloutLimits, observe) -> RolloutRecord:
    """Closed-loop rollout: control recomputed at ctrl_hz and held (zero-order
    hold) across sim_hz substeps; dynamic obstacles advance at the sim rate.

    Terminates on goal (joint-space ball), collision (ground-truth signed
    distance), or horizon. The barrier object supplies value_and_grad; the
    observation closure supplies what it sees.
    """
    if limits.sim_hz % limits.ctrl_hz != 0:
        raise ValueError("sim_hz must be an integer multiple of ctrl_hz")
    arm = barrier.arm
    substeps = limits.sim_hz // limits.ctrl_hz
    dt_sim = 1.0 / limits.sim_hz
    n_ticks = int(round(limits.horizon_s * limits.ctrl_hz))
    dynamic = env.is_dynamic

    q = np.asarray(q0, dtype=float).copy()
    rec = RolloutRecord()
    rec.configs.append(q.copy())
    d0 = signed_distance(env, arm, q)
    rec.min_signed_distance.append(d0)
    if d0 < 0.0:
        rec.collided = True
        return rec
    if np.linalg.norm(q - q_goal) <= limits.r_goal:
        rec.reached_goal = True
        return rec

    stalled = 0
    for _ in range(n_ticks):
        obs = observe(env, arm, q) if (observe is not None and barrier.needs_observation) else None
        h, grad = barrier.value_and_grad(q, obs, env)
        u_nom = policy.control(q, q_goal, arm.action_lower, arm.action_upper)
        u, diag = solve_safety_qp(u_nom, grad, h, cfg, arm.action_lower, arm.action_upper)
        if diag.infeasible:
            rec.qp_infeasible_count += 1
        if limits.stall_threshold is not None:
            stalled = stalled + 1 if float(np.linalg.norm(u)) < limits.stall_threshold else 0
            if stalled >= limits.stall_ticks:
                break
        rec.controls.append(u.copy())
        rec.steps_used += 1
        if dynamic:
            for _ in range(substeps):
                q, _ = integrate(arm, q, u, dt_sim)
                env = step_obstacles(env, dt_sim)
                d = signed_distance(env, arm, q)
                rec.configs.append(q.copy())
                rec.min_signed_distance.append(d)
                if d < 0.0:
                    rec.collided = True
                    return rec
        else:
            # exact zero-order hold: one-shot clamp equals iterated clamped steps
            dts = (np.arange(1, substeps + 1) * dt_sim)[:, None]
            tick_configs = np.clip(q[None, :] + u[None, :] * dts, arm.lower, arm.upper)
            ds = signed_distance_batch(env, arm, tick_configs)
            for qk, d in zip(tick_configs, ds):
                rec.configs.append(qk)
                rec.min_signed_distance.append(float(d))
                if d < 0.0:
                    rec.collided = True
                    return rec
            q = tick_configs[-1].copy()
        if np.linalg.norm(q - q_goal) <= limits.r_goal:
            rec.reached_goal = True
            return rec
    return rec
