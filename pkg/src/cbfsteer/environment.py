"""Obstacle worlds: collision and signed-distance queries, safety labels, and
the two observation models (minimum signed distance; surface/ray-cast point
clouds). Environments are immutable snapshots; stepping returns a new one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .kinematics import ArmModel, batch_link_frames, joint_positions


class SafetyLabel(str, enum.Enum):
    SAFE = "safe"
    BOUNDARY = "boundary"
    UNSAFE = "unsafe"


class CloudSource(str, enum.Enum):
    SURFACE_SAMPLED = "surface"
    RAY_CAST = "raycast"


@dataclass(frozen=True)
class StateObservation:
    """Minimum signed distance between the arm and everything it can hit."""

    min_signed_distance: float


@dataclass(frozen=True)
class CloudObservation:
    """Fixed-size set of (point, unit normal) records in the world frame."""

    points: np.ndarray  # (N, 2)
    normals: np.ndarray  # (N, 2)
    source: CloudSource

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float))
        if self.points.shape != self.normals.shape or self.points.ndim != 2:
            raise ValueError("points and normals must both be (N, 2)")

    def to_json(self) -> dict:
        return {
            "points": self.points.tolist(),
            "normals": self.normals.tolist(),
            "source": self.source.value,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CloudObservation":
        return cls(
            points=np.array(doc["points"], dtype=float),
            normals=np.array(doc["normals"], dtype=float),
            source=CloudSource(doc["source"]),
        )


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned rectangle or circle, optionally drifting at constant velocity."""

    kind: str  # "rect" | "circle"
    center: tuple[float, float]
    half_extents: tuple[float, float] | None = None
    radius: float | None = None
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if not np.all(np.isfinite(self.velocity)):
            raise ValueError("obstacle velocity must be finite")
        if self.kind == "rect":
            if self.half_extents is None:
                raise ValueError("rect obstacle needs half_extents")
            he = tuple(float(v) for v in self.half_extents)
            object.__setattr__(self, "half_extents", he)
            if he[0] <= 0 or he[1] <= 0:
                raise ValueError("rect half extents must be positive")
        elif self.kind == "circle":
            if self.radius is None or self.radius <= 0:
                raise ValueError("circle obstacle needs a positive radius")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")

    @property
    def perimeter(self) -> float:
        if self.kind == "rect":
            return 4.0 * (self.half_extents[0] + self.half_extents[1])
        return 2.0 * np.pi * self.radius

    def point_distance(self, p: np.ndarray) -> float:
        """Signed distance from a point to this obstacle (negative inside)."""
        p = np.asarray(p, dtype=float)
        if self.kind == "rect":
            return float(geometry.point_rect_sdf(p, np.array(self.center), np.array(self.half_extents)))
        return float(np.linalg.norm(p - np.array(self.center)) - self.radius)

    def to_json(self) -> dict:
        doc = {"kind": self.kind, "center": list(self.center), "velocity": list(self.velocity)}
        if self.kind == "rect":
            doc["half_extents"] = list(self.half_extents)
        else:
            doc["radius"] = self.radius
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Obstacle":
        return cls(
            kind=doc["kind"],
            center=tuple(doc["center"]),
            half_extents=tuple(doc["half_extents"]) if "half_extents" in doc else None,
            radius=doc.get("radius"),
            velocity=tuple(doc.get("velocity", (0.0, 0.0))),
        )


@dataclass(frozen=True)
class Workspace:
    center: tuple[float, float] = (0.0, 0.0)
    half_extents: tuple[float, float] = (1.5, 1.5)

    def to_json(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents)}

    @classmethod
    def from_json(cls, doc: dict) -> "Workspace":
        return cls(center=tuple(doc["center"]), half_extents=tuple(doc["half_extents"]))


@dataclass(frozen=True)
class Environment:
    obstacles: tuple[Obstacle, ...] = ()
    workspace: Workspace = Workspace()
    time: float = 0.0
    # cached stacked geometry, rebuilt on construction
    _rect_centers: np.ndarray = field(init=False, repr=False, compare=False)
    _rect_halves: np.ndarray = field(init=False, repr=False, compare=False)
    _circle_centers: np.ndarray = field(init=False, repr=False, compare=False)
    _circle_radii: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_starts: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_ends: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        rects = [o for o in self.obstacles if o.kind == "rect"]
        circles = [o for o in self.obstacles if o.kind == "circle"]
        centers = np.array([o.center for o in rects]).reshape(-1, 2)
        halves = np.array([o.half_extents for o in rects]).reshape(-1, 2)
        object.__setattr__(self, "_rect_centers", centers)
        object.__setattr__(self, "_rect_halves", halves)
        object.__setattr__(
            self, "_circle_centers", np.array([o.center for o in circles]).reshape(-1, 2)
        )
        object.__setattr__(
            self, "_circle_radii", np.array([o.radius for o in circles], dtype=float)
        )
        if centers.shape[0]:
            hx = halves[:, 0]
            hy = halves[:, 1]
            corners = np.stack(
                [
                    centers + np.stack([-hx, -hy], axis=1),
                    centers + np.stack([hx, -hy], axis=1),
                    centers + np.stack([hx, hy], axis=1),
                    centers + np.stack([-hx, hy], axis=1),
                ],
                axis=1,
            )  # (K, 4, 2)
            object.__setattr__(self, "_edge_starts", corners.reshape(-1, 2))
            object.__setattr__(self, "_edge_ends", np.roll(corners, -1, axis=1).reshape(-1, 2))
        else:
            object.__setattr__(self, "_edge_starts", np.empty((0, 2)))
            object.__setattr__(self, "_edge_ends", np.empty((0, 2)))

    @property
    def is_dynamic(self) -> bool:
        return any(v != 0.0 for o in self.obstacles for v in o.velocity)

    @property
    def num_obstacles(self) -> int:
        return len(self.obstacles)

    def to_json(self) -> dict:
        return {
            "obstacles": [o.to_json() for o in self.obstacles],
            "workspace": self.workspace.to_json(),
            "time": self.time,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Environment":
        return cls(
            obstacles=tuple(Obstacle.from_json(o) for o in doc["obstacles"]),
            workspace=Workspace.from_json(doc["workspace"]),
            time=float(doc.get("time", 0.0)),
        )


def _workspace_clearance_batch(env: Environment, pts: np.ndarray, radius: float) -> np.ndarray:
    """Clearance of the link capsules to the workspace boundary from inside.

    The rectangle SDF is convex, so its maximum along each link sits at a
    joint; clearance = -max(sdf over joints) - link radius. pts: (B, n+1, 2).
    """
    c = np.array(env.workspace.center)
    h = np.array(env.workspace.half_extents)
    sd = geometry.point_rect_sdf(pts, c, h)  # (B, n+1)
    return -(sd.max(axis=1) + radius)


def signed_distance_batch(env: Environment, arm: ArmModel, qs: np.ndarray) -> np.ndarray:
    """Vectorized minimum clearance for a batch of configurations (B, n).

    Minimum over (link, obstacle) capsule distances and non-adjacent link
    pairs; negative iff something penetrates. Disjoint capsule/rectangle pairs
    reduce to edge distances; overlapping pairs get the exact interior depth.
    """
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != arm.n_links:
        raise ValueError(f"configurations have shape {qs.shape}, expected (B, {arm.n_links})")
    b = qs.shape[0]
    n = arm.n_links
    origins, angles = batch_link_frames(arm, qs)
    pts = np.empty((b, n + 1, 2))
    pts[:, :n] = origins
    lengths = np.array(arm.link_lengths)
    pts[:, n] = origins[:, n - 1] + lengths[n - 1] * np.stack(
        [np.cos(angles[:, n - 1]), np.sin(angles[:, n - 1])], axis=1
    )
    seg_a = pts[:, :-1, :].reshape(b * n, 2)
    seg_b = pts[:, 1:, :].reshape(b * n, 2)
    r = arm.link_radius
    if env.obstacles:
        best = geometry.capsule_world_min(
            seg_a, seg_b,
            env._circle_centers, env._circle_radii,
            env._rect_centers, env._rect_halves,
            env._edge_starts, env._edge_ends,
        ) - r
        best = best.reshape(b, n).min(axis=1)
    else:
        best = np.full(b, np.inf)
    for i in range(n):
        for j in range(i + 2, n):
            d = geometry.seg_seg_distance_paired(
                pts[:, i, :], pts[:, i + 1, :], pts[:, j, :], pts[:, j + 1, :]) - 2.0 * r
            best = np.minimum(best, d)
    if n < 3 and not env.obstacles:
        # 2-link arm in an empty world: report workspace-boundary clearance.
        best = _workspace_clearance_batch(env, pts, r)
    return best


def signed_distance(env: Environment, arm: ArmModel, q: np.ndarray) -> float:
    """Minimum clearance between the arm and obstacles plus non-adjacent self pairs.

    Negative iff some capsule penetrates an obstacle (or another non-adjacent
    link). With no obstacles the self pairs remain; a 2-link arm with no
    obstacles falls back to the workspace-boundary clearance.
    """
    return float(signed_distance_batch(env, arm, np.asarray(q, dtype=float)[None, :])[0])


def classify(env: Environment, arm: ArmModel, q: np.ndarray, r_thres: float) -> SafetyLabel:
    """Partition by signed distance: d <= 0 unsafe, d >= r_thres safe, else boundary."""
    if r_thres <= 0:
        raise ValueError("r_thres must be positive")
    d = signed_distance(env, arm, q)
    if d <= 0.0:
        return SafetyLabel.UNSAFE
    if d >= r_thres:
        return SafetyLabel.SAFE
    return SafetyLabel.BOUNDARY


def sample_surface_points(env: Environment, n_points: int, rng: np.random.Generator) -> CloudObservation:
    """Uniform sample of obstacle boundaries with outward normals.

    Each point picks an obstacle with probability proportional to perimeter,
    then a uniform position along that perimeter.
    """
    if n_points < 1:
        raise ValueError("need at least one point")
    if not env.obstacles:
        raise ValueError("cannot sample a surface cloud from an empty environment")
    perims = np.array([o.perimeter for o in env.obstacles])
    probs = perims / perims.sum()
    choices = rng.choice(len(env.obstacles), size=n_points, p=probs)
    points = np.empty((n_points, 2))
    normals = np.empty((n_points, 2))
    for i, idx in enumerate(choices):
        obs = env.obstacles[idx]
        c = np.array(obs.center)
        if obs.kind == "circle":
            ang = rng.uniform(0.0, 2.0 * np.pi)
            nvec = np.array([np.cos(ang), np.sin(ang)])
            points[i] = c + obs.radius * nvec
            normals[i] = nvec
        else:
            hx, hy = obs.half_extents
            s = rng.uniform(0.0, obs.perimeter)
            # walk the perimeter: bottom, right, top, left
            if s < 2 * hx:
                points[i] = c + np.array([-hx + s, -hy])
                normals[i] = (0.0, -1.0)
            elif s < 2 * hx + 2 * hy:
                points[i] = c + np.array([hx, -hy + (s - 2 * hx)])
                normals[i] = (1.0, 0.0)
            elif s < 4 * hx + 2 * hy:
                points[i] = c + np.array([hx - (s - 2 * hx - 2 * hy), hy])
                normals[i] = (0.0, 1.0)
            else:
                points[i] = c + np.array([-hx, hy - (s - 4 * hx - 2 * hy)])
                normals[i] = (-1.0, 0.0)
    return CloudObservation(points=points, normals=normals, source=CloudSource.SURFACE_SAMPLED)


@dataclass(frozen=True)
class ScanSpec:
    """Ray fans cast from link midpoints, directions fixed in each link frame."""

    mount_links: tuple[int, ...] = (0, 2)
    rays_per_mount: int = 32
    max_range: float = 2.0


def ray_cast_scan(env: Environment, arm: ArmModel, q: np.ndarray, spec: ScanSpec) -> CloudObservation:
    """Cast evenly spaced full-circle ray fans from the mounted link midpoints.

    Hits return (hit point, outward surface normal); misses return the
    max-range sentinel point with normal opposite the ray direction.
    """
    pts = joint_positions(arm, q)
    cum = np.cumsum(np.asarray(q, dtype=float))
    origins = []
    dirs = []
    for link in spec.mount_links:
        if not 0 <= link < arm.n_links:
            raise ValueError(f"mount link {link} out of range")
        mid = 0.5 * (pts[link] + pts[link + 1])
        base_angle = cum[link]
        angles = base_angle + 2.0 * np.pi * np.arange(spec.rays_per_mount) / spec.rays_per_mount
        for ang in angles:
            origins.append(mid)
            dirs.append((np.cos(ang), np.sin(ang)))
    origins = np.array(origins)
    dirs = np.array(dirs)
    n_rays = origins.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 2))
    if env._circle_centers.shape[0]:
        t, nrm = geometry.ray_circles(origins, dirs, env._circle_centers, env._circle_radii)
        idx = np.argmin(t, axis=1)
        tc = t[np.arange(n_rays), idx]
        take = tc < best_t
        best_n[take] = nrm[np.arange(n_rays), idx][take]
        best_t = np.where(take, tc, best_t)
    if env._rect_centers.shape[0]:
        t, nrm = geometry.ray_rects(origins, dirs, env._rect_centers, env._rect_halves)
        idx = np.argmin(t, axis=1)
        tr = t[np.arange(n_rays), idx]
        take = tr < best_t
        best_n[take] = nrm[np.arange(n_rays), idx][take]
        best_t = np.where(take, tr, best_t)
    miss = ~(best_t <= spec.max_range)
    t_hit = np.where(miss, spec.max_range, best_t)
    points = origins + t_hit[:, None] * dirs
    normals = np.where(miss[:, None], -dirs, best_n)
    return CloudObservation(points=points, normals=normals, source=CloudSource.RAY_CAST)


def step_obstacles(env: Environment, dt: float) -> Environment:
    """Advance obstacle centers by velocity*dt; shapes unchanged, time accumulates."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    moved = tuple(
        replace(o, center=(o.center[0] + o.velocity[0] * dt, o.center[1] + o.velocity[1] * dt))
        for o in env.obstacles
    )
    return Environment(obstacles=moved, workspace=env.workspace, time=env.time + dt)


@dataclass(frozen=True)
class EnvGenConfig:
    """Random-world parameters: obstacle count, size range, placement rules."""

    num_obstacles: int = 4
    size_range: tuple[float, float] = (0.08, 0.16)
    workspace: Workspace = Workspace()
    min_clearance_from_base: float = 0.25
    obstacle_speed: float = 0.0
    shapes: tuple[str, ...] = ("rect",)
    fixed_size: float | None = None

    def to_json(self) -> dict:
        return {
            "num_obstacles": self.num_obstacles,
            "size_range": list(self.size_range),
            "workspace": self.workspace.to_json(),
            "min_clearance_from_base": self.min_clearance_from_base,
            "obstacle_speed": self.obstacle_speed,
            "shapes": list(self.shapes),
            "fixed_size": self.fixed_size,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EnvGenConfig":
        return cls(
            num_obstacles=int(doc["num_obstacles"]),
            size_range=tuple(doc["size_range"]),
            workspace=Workspace.from_json(doc["workspace"]),
            min_clearance_from_base=float(doc["min_clearance_from_base"]),
            obstacle_speed=float(doc.get("obstacle_speed", 0.0)),
            shapes=tuple(doc.get("shapes", ("rect",))),
            fixed_size=doc.get("fixed_size"),
        )


MAX_GEN_ATTEMPTS = 10_000


class GenerationError(RuntimeError):
    pass


def random_environment(
    gen_cfg: EnvGenConfig, rng: np.random.Generator, base_position: tuple[float, float] = (0.0, 0.0)
) -> Environment:
    """Sample obstacles with rejection until none overlaps the base clearance disk."""
    ws = gen_cfg.workspace
    lo = np.array(ws.center) - np.array(ws.half_extents)
    hi = np.array(ws.center) + np.array(ws.half_extents)
    base = np.asarray(base_position, dtype=float)
    obstacles: list[Obstacle] = []
    for _ in range(gen_cfg.num_obstacles):
        for attempt in range(MAX_GEN_ATTEMPTS):
            center = rng.uniform(lo, hi)
            kind = gen_cfg.shapes[int(rng.integers(len(gen_cfg.shapes)))]
            if gen_cfg.fixed_size is not None:
                size = (gen_cfg.fixed_size, gen_cfg.fixed_size)
            else:
                size = tuple(rng.uniform(gen_cfg.size_range[0], gen_cfg.size_range[1], size=2))
            if gen_cfg.obstacle_speed > 0.0:
                ang = rng.uniform(0.0, 2.0 * np.pi)
                vel = (gen_cfg.obstacle_speed * np.cos(ang), gen_cfg.obstacle_speed * np.sin(ang))
            else:
                vel = (0.0, 0.0)
            if kind == "circle":
                obs = Obstacle(kind="circle", center=tuple(center), radius=size[0], velocity=vel)
            else:
                obs = Obstacle(kind="rect", center=tuple(center), half_extents=size, velocity=vel)
            if obs.point_distance(base) >= gen_cfg.min_clearance_from_base:
                obstacles.append(obs)
                break
        else:
            raise GenerationError(
                f"could not place obstacle clear of the base after {MAX_GEN_ATTEMPTS} attempts"
            )
    return Environment(obstacles=tuple(obstacles), workspace=ws, time=0.0)
