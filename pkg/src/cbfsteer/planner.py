"""RRT with pluggable steer functions: straight-line, barrier-filtered rollout
steering, the completeness-preserving filtered-LQR variant, and the
hand-crafted barrier baseline.

Tree edges always pass geometric collision validation at the configured
resolution before they are stored; the learned barrier is never trusted for
the safety of stored edges. The sampling order is part of the contract: each
iteration draws the goal-bias coin first and only on failure draws a uniform
configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cbf import HandcraftedBarrier, NeuralBarrier
from .controller import (
    NominalPolicy,
    SafeControllerConfig,
    make_state_observer,
    solve_safety_qp,
)
from .environment import Environment, signed_distance, signed_distance_batch
from .kinematics import ArmModel


@dataclass
class Edge:
    """Executed trajectory between tree nodes; configs[0] is the parent config."""

    configs: list = field(default_factory=list)
    controls: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return len(self.configs) <= 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.configs[-1]


@dataclass
class TreeNode:
    config: np.ndarray
    parent: int  # -1 for the root
    edge: Edge | None


class SearchTree:
    def __init__(self, root: np.ndarray):
        self.nodes: list[TreeNode] = [TreeNode(config=np.asarray(root, float), parent=-1, edge=None)]

    def __len__(self) -> int:
        return len(self.nodes)

    def nearest(self, q: np.ndarray) -> int:
        configs = np.stack([n.config for n in self.nodes])
        return int(np.argmin(np.linalg.norm(configs - np.asarray(q, float), axis=1)))

    def add(self, config: np.ndarray, parent: int, edge: Edge) -> int:
        self.nodes.append(TreeNode(config=np.asarray(config, float), parent=parent, edge=edge))
        return len(self.nodes) - 1


@dataclass(frozen=True)
class ControllerBundle:
    """Everything a rollout-based steer needs besides the endpoints."""

    barrier: NeuralBarrier | HandcraftedBarrier
    observe: object
    policy: NominalPolicy = NominalPolicy()
    qp_cfg: SafeControllerConfig = SafeControllerConfig()
    sim_hz: int = 120
    ctrl_hz: int = 30


@dataclass(frozen=True)
class SteerStraightLine:
    name: str = "straight"


@dataclass(frozen=True)
class SteerCbfInc:
    bundle: ControllerBundle
    name: str = "cbf-inc"


@dataclass(frozen=True)
class SteerHandCbf:
    """Rollout steering with the signed-distance baseline barrier."""

    bundle: ControllerBundle
    name: str = "hand-cbf"

    @classmethod
    def from_margin(cls, arm: ArmModel, margin: float = 0.15, **kwargs) -> "SteerHandCbf":
        bundle = ControllerBundle(
            barrier=HandcraftedBarrier(arm, margin=margin),
            observe=make_state_observer(),
            **kwargs,
        )
        return cls(bundle=bundle)


@dataclass(frozen=True)
class SteerCbfFilterLqr:
    """Discard-style steering: before `activation_after` tree nodes behave like
    barrier-filtered rollouts, afterwards unsafe nominal actions terminate the
    edge instead of being modified."""

    bundle: ControllerBundle
    activation_after: int = 0
    name: str = "filter-lqr"

    def __post_init__(self):
        if self.activation_after < 0:
            raise ValueError("activation threshold must be >= 0")


SteerKind = SteerStraightLine | SteerCbfInc | SteerHandCbf | SteerCbfFilterLqr


@dataclass(frozen=True)
class PlannerLimits:
    max_nodes: int = 200
    goal_bias: float = 0.1
    step_size: float = 0.5
    check_resolution: float = 0.02
    connect_radius: float = 1.0
    max_ctrl_steps: int = 90
    stall_threshold: float = 1e-3
    stall_ticks: int = 5


@dataclass(frozen=True)
class PlanProblem:
    arm: ArmModel
    env: Environment
    q0: np.ndarray
    qg: np.ndarray
    r_goal: float = 0.1


@dataclass
class PlanResult:
    status: str  # "solved" | "node_limit"
    path: list
    controls: list
    explored_nodes: int
    planning_seconds: float
    seed: int | None
    tree_size: int

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "path": [np.asarray(q).tolist() for q in self.path],
            "controls": [np.asarray(u).tolist() for u in self.controls],
            "explored_nodes": self.explored_nodes,
            "planning_seconds": self.planning_seconds,
            "seed": self.seed,
            "tree_size": self.tree_size,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PlanResult":
        return cls(
            status=doc["status"],
            path=[np.array(q, dtype=float) for q in doc["path"]],
            controls=[np.array(u, dtype=float) for u in doc["controls"]],
            explored_nodes=int(doc["explored_nodes"]),
            planning_seconds=float(doc["planning_seconds"]),
            seed=doc.get("seed"),
            tree_size=int(doc.get("tree_size", 0)),
        )


def validate_and_truncate(env: Environment, arm: ArmModel, configs: list,
                          check_resolution: float) -> list:
    """Longest collision-free prefix of a waypoint list, checked at the given
    resolution along every inter-waypoint segment (endpoints included)."""
    if not configs:
        return []
    if signed_distance(env, arm, configs[0]) < 0.0:
        return []
    # Build the full check-point ladder, then find the first violation in one
    # batched geometry query.
    check_pts: list[np.ndarray] = []
    owner: list[int] = []  # waypoint index each check point belongs to
    for w, nxt in enumerate(configs[1:], start=1):
        prev = np.asarray(configs[w - 1], float)
        seg = np.asarray(nxt, float) - prev
        dist = float(np.linalg.norm(seg))
        n_checks = max(1, int(np.ceil(dist / check_resolution)))
        for k in range(1, n_checks + 1):
            check_pts.append(prev + seg * (k / n_checks))
            owner.append(w)
    if not check_pts:
        return list(configs)
    d = signed_distance_batch(env, arm, np.stack(check_pts))
    bad = np.nonzero(d < 0.0)[0]
    if bad.size == 0:
        return list(configs)
    first_bad_waypoint = owner[int(bad[0])]
    return list(configs[:first_bad_waypoint])


def steer_straight(arm: ArmModel, env: Environment, q_from: np.ndarray, q_toward: np.ndarray,
                   step_size: float, check_resolution: float) -> Edge:
    """Advance along the joint-space segment up to step_size, truncating at the
    last valid sample before the first colliding one."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    q_from = np.asarray(q_from, dtype=float)
    q_toward = np.asarray(q_toward, dtype=float)
    delta = q_toward - q_from
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return Edge(configs=[q_from])
    frac = min(1.0, step_size / dist)
    target = q_from + frac * delta
    seg_len = dist * frac
    n_checks = max(1, int(np.ceil(seg_len / check_resolution)))
    ts = np.arange(1, n_checks + 1) / n_checks
    samples = q_from[None, :] + ts[:, None] * (target - q_from)[None, :]
    d = signed_distance_batch(env, arm, samples)
    bad = np.nonzero(d < 0.0)[0]
    last_ok = n_checks - 1 if bad.size == 0 else int(bad[0]) - 1
    if last_ok < 0:
        return Edge(configs=[q_from])
    return Edge(configs=[q_from, samples[last_ok]], controls=[])


def _rollout_edge(arm: ArmModel, env: Environment, q_from: np.ndarray, q_toward: np.ndarray,
                  bundle: ControllerBundle, max_ctrl_steps: int, limits: PlannerLimits,
                  r_goal: float) -> Edge:
    """Optimistic filtered rollout: geometry is not checked tick by tick (the
    barrier is doing that job online); one batched validation pass afterwards
    truncates the trajectory at the last collision-free state."""
    barrier = bundle.barrier
    substeps = bundle.sim_hz // bundle.ctrl_hz
    dt_sim = 1.0 / bundle.sim_hz
    q = np.asarray(q_from, dtype=float).copy()
    configs = [q.copy()]
    controls: list = []
    stalled = 0
    for _ in range(max_ctrl_steps):
        if np.linalg.norm(q - q_toward) <= r_goal:
            break
        obs = (bundle.observe(env, arm, q)
               if bundle.observe is not None and barrier.needs_observation else None)
        h, grad = barrier.value_and_grad(q, obs, env)
        u_nom = bundle.policy.control(q, q_toward, arm.action_lower, arm.action_upper)
        u, _ = solve_safety_qp(u_nom, grad, h, bundle.qp_cfg,
                               arm.action_lower, arm.action_upper)
        stalled = stalled + 1 if float(np.linalg.norm(u)) < limits.stall_threshold else 0
        if stalled >= limits.stall_ticks:
            break
        controls.append(u.copy())
        # exact zero-order-hold substeps: per-joint motion is monotone, so the
        # one-shot clamp equals iterated clamped Euler steps
        states = np.clip(q[None, :] + u[None, :] * _substep_dts(substeps, dt_sim),
                         arm.lower, arm.upper)
        configs.extend(states)
        q = states[-1].copy()
    kept = validate_and_truncate(env, arm, configs, limits.check_resolution)
    if len(kept) <= 1:
        return Edge(configs=list(kept) or [np.asarray(q_from, float)])
    n_ticks_kept = (len(kept) - 1 + substeps - 1) // substeps
    return Edge(configs=list(kept), controls=controls[:n_ticks_kept])


def _substep_dts(substeps: int, dt_sim: float) -> np.ndarray:
    return (np.arange(1, substeps + 1) * dt_sim)[:, None]


def steer_cbf_inc(arm: ArmModel, env: Environment, q_from: np.ndarray, q_toward: np.ndarray,
                  bundle: ControllerBundle, max_ctrl_steps: int,
                  limits: PlannerLimits = PlannerLimits(), r_goal: float = 0.1) -> Edge:
    """Roll the filtered controller toward the sampled point; the visited
    trajectory (possibly truncated at the last collision-free state) is the
    edge. Stalls cut the edge short so QP-pinned states do not burn the budget."""
    return _rollout_edge(arm, env, q_from, q_toward, bundle, max_ctrl_steps, limits, r_goal)


def steer_filter_lqr(arm: ArmModel, env: Environment, q_from: np.ndarray, q_toward: np.ndarray,
                     bundle: ControllerBundle, max_ctrl_steps: int,
                     limits: PlannerLimits = PlannerLimits(), r_goal: float = 0.1) -> Edge:
    """Accept nominal actions only while the barrier's derivative condition and
    sign both hold; the first rejection terminates the edge (no modification)."""
    barrier = bundle.barrier
    alpha_h = barrier.hyper.alpha_h if isinstance(barrier, NeuralBarrier) else bundle.qp_cfg.alpha
    substeps = bundle.sim_hz // bundle.ctrl_hz
    dt_sim = 1.0 / bundle.sim_hz
    q = np.asarray(q_from, dtype=float).copy()
    configs = [q.copy()]
    controls = []
    for _ in range(max_ctrl_steps):
        if np.linalg.norm(q - q_toward) <= r_goal:
            break
        obs = (bundle.observe(env, arm, q)
               if bundle.observe is not None and barrier.needs_observation else None)
        h, grad = barrier.value_and_grad(q, obs, env)
        u_nom = bundle.policy.control(q, q_toward, arm.action_lower, arm.action_upper)
        if h > 0.0 or float(grad @ u_nom) + alpha_h * h > 0.0:
            break
        controls.append(u_nom.copy())
        states = np.clip(q[None, :] + u_nom[None, :] * _substep_dts(substeps, dt_sim),
                         arm.lower, arm.upper)
        configs.extend(states)
        q = states[-1].copy()
        if float(np.linalg.norm(u_nom)) < limits.stall_threshold:
            break
    kept = validate_and_truncate(env, arm, configs, limits.check_resolution)
    if len(kept) <= 1:
        return Edge(configs=list(kept) or [np.asarray(q_from, float)])
    n_ticks_kept = (len(kept) - 1 + substeps - 1) // substeps
    return Edge(configs=list(kept), controls=controls[:n_ticks_kept])


def _dispatch_steer(steer: SteerKind, arm: ArmModel, env: Environment, q_from: np.ndarray,
                    q_toward: np.ndarray, limits: PlannerLimits, r_goal: float,
                    tree_size: int) -> Edge:
    if isinstance(steer, SteerStraightLine):
        return steer_straight(arm, env, q_from, q_toward, limits.step_size,
                              limits.check_resolution)
    if isinstance(steer, (SteerCbfInc, SteerHandCbf)):
        return steer_cbf_inc(arm, env, q_from, q_toward, steer.bundle,
                             limits.max_ctrl_steps, limits, r_goal)
    if isinstance(steer, SteerCbfFilterLqr):
        if tree_size < steer.activation_after:
            return steer_cbf_inc(arm, env, q_from, q_toward, steer.bundle,
                                 limits.max_ctrl_steps, limits, r_goal)
        return steer_filter_lqr(arm, env, q_from, q_toward, steer.bundle,
                                limits.max_ctrl_steps, limits, r_goal)
    raise TypeError(f"unknown steer kind {type(steer).__name__}")


def rrt_plan(problem: PlanProblem, steer: SteerKind, limits: PlannerLimits,
             rng: np.random.Generator, seed: int | None = None) -> PlanResult:
    """Grow a tree from q0 until some node lands in the goal ball or the
    attempt budget (max_nodes) runs out. Every steer attempt, successful or
    not, counts as one explored node.

    Sampling-order contract (fixed so determinism tests are portable): each
    iteration first draws the goal-bias coin (rng.random() < goal_bias selects
    the goal); only on failure does it draw one uniform configuration in the
    joint limits. The nearest node is the Euclidean argmin (lowest index on
    ties). After a successful expansion whose endpoint is within
    connect_radius of the goal, one direct steer to the goal is attempted
    (also counted); a node within r_goal of the goal solves the problem.
    """
    result, _ = rrt_plan_with_tree(problem, steer, limits, rng, seed=seed)
    return result


def rrt_plan_with_tree(problem: PlanProblem, steer: SteerKind, limits: PlannerLimits,
                       rng: np.random.Generator, seed: int | None = None
                       ) -> tuple[PlanResult, SearchTree]:
    """rrt_plan, additionally returning the search tree for edge audits."""
    arm = problem.arm
    env = problem.env
    q0 = np.asarray(problem.q0, dtype=float)
    qg = np.asarray(problem.qg, dtype=float)
    if signed_distance(env, arm, q0) < 0.0:
        raise ValueError("start configuration is in collision")
    if signed_distance(env, arm, qg) < 0.0:
        raise ValueError("goal configuration is in collision")

    t0 = time.perf_counter()
    tree = SearchTree(q0)
    explored = 0
    goal_node = None

    if np.linalg.norm(q0 - qg) <= problem.r_goal:
        goal_node = 0

    def try_add(parent: int, q_toward: np.ndarray) -> int | None:
        nonlocal explored
        edge = _dispatch_steer(steer, arm, env, tree.nodes[parent].config, q_toward,
                               limits, problem.r_goal, len(tree))
        explored += 1
        if edge.empty:
            return None
        return tree.add(edge.endpoint, parent, edge)

    while goal_node is None and explored < limits.max_nodes:
        if rng.random() < limits.goal_bias:
            q_rand = qg
        else:
            q_rand = rng.uniform(arm.lower, arm.upper)
        parent = tree.nearest(q_rand)
        new_idx = try_add(parent, q_rand)
        if new_idx is None:
            continue
        if np.linalg.norm(tree.nodes[new_idx].config - qg) <= problem.r_goal:
            goal_node = new_idx
            break
        # goal connection: direct steer when the new node is close enough
        if (np.linalg.norm(tree.nodes[new_idx].config - qg) <= limits.connect_radius
                and explored < limits.max_nodes):
            conn_idx = try_add(new_idx, qg)
            if conn_idx is not None and np.linalg.norm(
                    tree.nodes[conn_idx].config - qg) <= problem.r_goal:
                goal_node = conn_idx
                break

    elapsed = time.perf_counter() - t0
    if goal_node is None:
        return PlanResult(status="node_limit", path=[], controls=[],
                          explored_nodes=explored, planning_seconds=elapsed,
                          seed=seed, tree_size=len(tree)), tree
    path = [tree.nodes[0].config]
    controls: list = []
    chain = []
    idx = goal_node
    while idx != 0:
        chain.append(idx)
        idx = tree.nodes[idx].parent
    for idx in reversed(chain):
        edge = tree.nodes[idx].edge
        path.extend(edge.configs[1:])
        controls.extend(edge.controls)
    return PlanResult(status="solved", path=path, controls=controls,
                      explored_nodes=explored, planning_seconds=elapsed,
                      seed=seed, tree_size=len(tree)), tree
