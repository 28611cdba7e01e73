"""Barrier-function machinery: dataset collection, barrier value and numerical
Lie derivatives, the closed-form control infimum over a box, the three-term
hinge loss, the training loop, constraint auditing, and the hand-crafted
signed-distance baseline.

Sign convention: h is negative on the safe side. Safe states need h <= -gamma,
unsafe states h > gamma, and everywhere a control must exist with
grad_h . u + alpha_h * h <= -eps (drift-free system, so the drift term drops).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import (
    CloudObservation,
    EnvGenConfig,
    Environment,
    SafetyLabel,
    StateObservation,
    random_environment,
    sample_surface_points,
    signed_distance,
    signed_distance_batch,
)
from .jsonio import canonical_dumps, dump_json, load_json, load_jsonl
from .kinematics import ArmModel, batch_link_frames, integrate, sample_config
from .neural import (
    Mlp,
    PointSetEncoder,
    adam_step,
    AdamState,
    encoder_backward_batch,
    encoder_forward,
    encoder_forward_batch,
    mlp_backward,
    mlp_forward,
)


class FdMode(str, enum.Enum):
    """How stencil observations are produced for the numerical q-gradient."""

    FIXED_OBSERVATION = "fixed_observation"
    REFRESHED_OBSERVATION = "refreshed_observation"


@dataclass(frozen=True)
class CbfHyper:
    gamma: float = 0.05
    eps_margin: float = 0.02
    alpha_h: float = 1.0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 0.5)
    fd_step: float = 1e-3
    fd_mode: FdMode = FdMode.REFRESHED_OBSERVATION
    r_thres: float = 0.05

    def __post_init__(self):
        vals = (self.gamma, self.eps_margin, self.alpha_h, *self.loss_weights,
                self.fd_step, self.r_thres)
        if any(v <= 0 for v in vals):
            raise ValueError("all barrier hyperparameters must be positive")

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "eps_margin": self.eps_margin,
            "alpha_h": self.alpha_h,
            "loss_weights": list(self.loss_weights),
            "fd_step": self.fd_step,
            "fd_mode": self.fd_mode.value,
            "r_thres": self.r_thres,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CbfHyper":
        return cls(
            gamma=doc["gamma"],
            eps_margin=doc["eps_margin"],
            alpha_h=doc["alpha_h"],
            loss_weights=tuple(doc["loss_weights"]),
            fd_step=doc["fd_step"],
            fd_mode=FdMode(doc["fd_mode"]),
            r_thres=doc["r_thres"],
        )


def default_hyper(kind: str) -> CbfHyper:
    """State nets refresh the scalar observation at stencil points; cloud nets
    hold the cloud fixed (re-scanning inside a finite difference is neither
    needed nor cheap)."""
    mode = FdMode.REFRESHED_OBSERVATION if kind == "state" else FdMode.FIXED_OBSERVATION
    return CbfHyper(fd_mode=mode)


@dataclass
class LabeledSample:
    q: np.ndarray
    observation: StateObservation | CloudObservation
    label: SafetyLabel
    env_id: int


@dataclass
class Dataset:
    kind: str  # "state" | "cloud"
    arm: ArmModel
    environments: list[Environment]
    samples: list[LabeledSample]
    r_thres: float
    # shared per-environment surface clouds (cloud datasets only)
    clouds: dict[int, CloudObservation] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def save(self, path) -> None:
        """JSONL of samples plus a companion <stem>.envs.json with the
        environment table, arm, and any shared clouds."""
        from pathlib import Path

        path = Path(path)
        sidecar = path.with_suffix(".envs.json")
        dump_json(sidecar, {
            "kind": self.kind,
            "arm": self.arm.to_json(),
            "r_thres": self.r_thres,
            "environments": [env.to_json() for env in self.environments],
            "clouds": {str(k): c.to_json() for k, c in self.clouds.items()},
        })
        with open(path, "w") as f:
            for s in self.samples:
                if isinstance(s.observation, StateObservation):
                    obs = {"d": s.observation.min_signed_distance}
                elif s.env_id in self.clouds and s.observation is self.clouds[s.env_id]:
                    obs = {"cloud_env": s.env_id}
                else:
                    obs = {"cloud": s.observation.to_json()}
                row = {
                    "q": np.asarray(s.q).tolist(),
                    "label": s.label.value,
                    "env_id": s.env_id,
                    "obs": obs,
                }
                f.write(canonical_dumps(row) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        from pathlib import Path

        path = Path(path)
        meta = load_json(path.with_suffix(".envs.json"))
        envs = [Environment.from_json(e) for e in meta["environments"]]
        clouds = {int(k): CloudObservation.from_json(c) for k, c in meta.get("clouds", {}).items()}
        samples = []
        for row in load_jsonl(path):
            obs_doc = row["obs"]
            if "d" in obs_doc:
                obs = StateObservation(float(obs_doc["d"]))
            elif "cloud_env" in obs_doc:
                obs = clouds[int(obs_doc["cloud_env"])]
            else:
                obs = CloudObservation.from_json(obs_doc["cloud"])
            samples.append(LabeledSample(
                q=np.array(row["q"], dtype=float),
                observation=obs,
                label=SafetyLabel(row["label"]),
                env_id=int(row["env_id"]),
            ))
        return cls(
            kind=meta["kind"],
            arm=ArmModel.from_json(meta["arm"]),
            environments=envs,
            samples=samples,
            r_thres=float(meta["r_thres"]),
            clouds=clouds,
        )


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # per-epoch dicts
    wall_seconds: float = 0.0
    aborted: bool = False

    def to_json(self) -> dict:
        return {"epochs": self.epochs, "wall_seconds": self.wall_seconds, "aborted": self.aborted}


@dataclass(frozen=True)
class DatasetCounts:
    rollout_trajs: int = 0
    uniform_samples: int = 0


def collect_dataset(
    arm: ArmModel,
    env_distribution: EnvGenConfig,
    counts: DatasetCounts,
    nominal_policy,
    rng: np.random.Generator,
    observation_kind: str = "state",
    r_thres: float = 0.05,
    cloud_points: int = 128,
    rollout_ticks: int = 90,
    ctrl_hz: float = 30.0,
    uniform_samples_per_env: int = 200,
    r_goal: float = 0.1,
) -> Dataset:
    """Pre-collect labeled training data.

    Part one rolls out the nominal goal-seeking policy between random
    collision-free start/goal pairs at the control rate (a fresh environment
    per trajectory); part two samples configurations uniformly in the joint
    limits. Every sample gets a safety label from the true signed distance.
    """
    if counts.rollout_trajs < 0 or counts.uniform_samples < 0:
        raise ValueError("counts must be non-negative")
    if observation_kind not in ("state", "cloud"):
        raise ValueError(f"unknown observation kind {observation_kind!r}")
    envs: list[Environment] = []
    clouds: dict[int, CloudObservation] = {}
    samples: list[LabeledSample] = []
    dt = 1.0 / ctrl_hz

    def new_env() -> int:
        env = random_environment(env_distribution, rng, base_position=arm.base_position)
        envs.append(env)
        env_id = len(envs) - 1
        if observation_kind == "cloud":
            clouds[env_id] = sample_surface_points(env, cloud_points, rng)
        return env_id

    def add_samples(env_id: int, qs: np.ndarray) -> None:
        ds = signed_distance_batch(envs[env_id], arm, qs)
        for q, d in zip(qs, ds):
            if d <= 0.0:
                label = SafetyLabel.UNSAFE
            elif d >= r_thres:
                label = SafetyLabel.SAFE
            else:
                label = SafetyLabel.BOUNDARY
            obs = StateObservation(float(d)) if observation_kind == "state" else clouds[env_id]
            samples.append(LabeledSample(q=q, observation=obs, label=label, env_id=env_id))

    for _ in range(counts.rollout_trajs):
        env_id = new_env()
        env = envs[env_id]
        q = _sample_free_config(env, arm, rng)
        q_goal = _sample_free_config(env, arm, rng)
        traj = [q]
        for _ in range(rollout_ticks - 1):
            if np.linalg.norm(q - q_goal) <= r_goal:
                break
            u = nominal_policy.control(q, q_goal, arm.action_lower, arm.action_upper)
            q, _ = integrate(arm, q, u, dt)
            traj.append(q)
        add_samples(env_id, np.stack(traj))

    remaining = counts.uniform_samples
    while remaining > 0:
        env_id = new_env()
        take = min(uniform_samples_per_env, remaining)
        qs = rng.uniform(arm.lower, arm.upper, size=(take, arm.n_links))
        add_samples(env_id, qs)
        remaining -= take

    return Dataset(
        kind=observation_kind, arm=arm, environments=envs, samples=samples,
        r_thres=r_thres, clouds=clouds,
    )


def _sample_free_config(env: Environment, arm: ArmModel, rng: np.random.Generator,
                        max_tries: int = 1000) -> np.ndarray:
    for _ in range(max_tries):
        q = sample_config(arm, rng)
        if signed_distance(env, arm, q) > 0.0:
            return q
    raise RuntimeError("could not sample a collision-free configuration")


def h_value(net, q: np.ndarray, observation, arm: ArmModel) -> float:
    """Scalar barrier value; the network variant must match the observation."""
    if isinstance(net, Mlp):
        if not isinstance(observation, StateObservation):
            raise TypeError("state-variant net needs a StateObservation")
        x = np.concatenate([np.asarray(q, float), [observation.min_signed_distance]])
        y, _ = mlp_forward(net, x)
        return float(y[0])
    if isinstance(net, PointSetEncoder):
        if not isinstance(observation, CloudObservation):
            raise TypeError("cloud-variant net needs a CloudObservation")
        h, _ = encoder_forward(net, np.asarray(q, float), observation, arm)
        return h
    raise TypeError(f"unsupported network type {type(net).__name__}")


def _stencil_configs(q: np.ndarray, fd_step: float) -> np.ndarray:
    """(n+1, n): row 0 is q, row i is q with joint i-1 advanced by fd_step."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    out = np.tile(q, (n + 1, 1))
    out[1:] += np.eye(n) * fd_step
    return out


def h_and_grad(net, q: np.ndarray, env: Environment | None, arm: ArmModel,
               hyper: CbfHyper, observation=None) -> tuple[float, np.ndarray]:
    """Barrier value and forward-difference q-gradient.

    Fixed mode evaluates every stencil point with the same observation (the
    one passed in); refreshed mode recomputes the scalar observation at each
    stencil configuration from the environment.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    qs = _stencil_configs(q, hyper.fd_step)
    if isinstance(net, Mlp):
        if hyper.fd_mode is FdMode.REFRESHED_OBSERVATION:
            if env is None:
                raise ValueError("refreshed-observation mode needs the environment")
            if observation is not None:
                ds = np.empty(n + 1)
                ds[0] = observation.min_signed_distance
                ds[1:] = signed_distance_batch(env, arm, qs[1:])
            else:
                ds = signed_distance_batch(env, arm, qs)
        else:
            if observation is None:
                raise ValueError("fixed-observation mode needs the observation")
            ds = np.full(n + 1, observation.min_signed_distance)
        x = np.concatenate([qs, ds[:, None]], axis=1)
        y, _ = mlp_forward(net, x)
        h = y[:, 0]
    elif isinstance(net, PointSetEncoder):
        if hyper.fd_mode is not FdMode.FIXED_OBSERVATION:
            raise ValueError("cloud-variant gradients support fixed-observation mode only")
        if observation is None:
            raise ValueError("fixed-observation mode needs the observation")
        recs = _stencil_records(arm, qs[None, :, :], observation.points[None, :, :],
                                observation.normals[None, :, :])
        hvals, _ = encoder_forward_batch(
            net, qs, recs.reshape((n + 1,) + recs.shape[2:]))
        h = hvals
    else:
        raise TypeError(f"unsupported network type {type(net).__name__}")
    grad = (h[1:] - h[0]) / hyper.fd_step
    return float(h[0]), grad


def grad_h_q(net, q: np.ndarray, env: Environment | None, arm: ArmModel,
             hyper: CbfHyper, observation=None) -> np.ndarray:
    _, grad = h_and_grad(net, q, env, arm, hyper, observation=observation)
    return grad


def inf_control_term(grad: np.ndarray, action_lower: np.ndarray, action_upper: np.ndarray
                     ) -> tuple[float, np.ndarray]:
    """Minimum of grad . u over the action box, with its argmin.

    The objective is separable: per dimension take the bound whose sign
    opposes the coefficient; zero coefficients take the lower bound.
    """
    grad = np.asarray(grad, dtype=float)
    lo = np.asarray(action_lower, dtype=float)
    hi = np.asarray(action_upper, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("action box must be finite")
    argmin = np.where(grad > 0.0, lo, np.where(grad < 0.0, hi, lo))
    return float(grad @ argmin), argmin


def _stencil_records(arm: ArmModel, qs: np.ndarray, points: np.ndarray, normals: np.ndarray
                     ) -> np.ndarray:
    """Link-frame records for stencil batches.

    qs: (B, S, n) stencil configurations; points/normals: (B, N, 2) shared
    across a sample's stencil. Returns (B, S, n*N, 4+n), link-major.
    """
    b, s, n = qs.shape
    n_pts = points.shape[1]
    flat = qs.reshape(b * s, n)
    origins, angles = batch_link_frames(arm, flat)
    origins = origins.reshape(b, s, n, 2)
    angles = angles.reshape(b, s, n)
    cos = np.cos(angles)
    sin = np.sin(angles)
    recs = np.zeros((b, s, n, n_pts, 4 + n))
    pts_b = points[:, None, None, :, :]  # (B, 1, 1, N, 2)
    nrm_b = normals[:, None, None, :, :]
    rel = pts_b - origins[:, :, :, None, :]  # (B, S, n, N, 2)
    c = cos[:, :, :, None]
    sn = sin[:, :, :, None]
    recs[..., 0] = c * rel[..., 0] + sn * rel[..., 1]
    recs[..., 1] = -sn * rel[..., 0] + c * rel[..., 1]
    recs[..., 2] = c * nrm_b[..., 0] + sn * nrm_b[..., 1]
    recs[..., 3] = -sn * nrm_b[..., 0] + c * nrm_b[..., 1]
    for ell in range(n):
        recs[:, :, ell, :, 4 + ell] = 1.0
    return recs.reshape(b, s, n * n_pts, 4 + n)


@dataclass
class _Prepared:
    """Batch tensors shared by loss, training and constraint evaluation."""

    kind: str
    safe_mask: np.ndarray
    unsafe_mask: np.ndarray
    # state variant: stencil network inputs (B, S, n+1)
    x: np.ndarray | None = None
    # cloud variant: stencil configs and the per-sample cloud arrays
    qs: np.ndarray | None = None  # (B, S, n)
    points: np.ndarray | None = None  # (B, N, 2)
    normals: np.ndarray | None = None


def stencil_distances(samples, arm: ArmModel, hyper: CbfHyper, envs) -> np.ndarray:
    """Refreshed stencil observations for state samples: (B, n+1) with the
    stored observation in column 0 and signed distances at the perturbed
    configurations after it. Groups samples by environment so the geometric
    queries run batched."""
    n = arm.n_links
    b = len(samples)
    out = np.empty((b, n + 1))
    out[:, 0] = [s.observation.min_signed_distance for s in samples]
    if hyper.fd_mode is not FdMode.REFRESHED_OBSERVATION:
        out[:, 1:] = out[:, :1]
        return out
    if envs is None:
        raise ValueError("refreshed-observation mode needs environments")
    by_env: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_env.setdefault(s.env_id, []).append(i)
    eye = np.eye(n) * hyper.fd_step
    for env_id, idxs in by_env.items():
        env = envs[env_id]
        qs = np.stack([np.asarray(samples[i].q, float) for i in idxs])  # (m, n)
        pert = (qs[:, None, :] + eye[None, :, :]).reshape(-1, n)
        d = signed_distance_batch(env, arm, pert).reshape(len(idxs), n)
        out[np.array(idxs), 1:] = d
    return out


def _prepare_batch(batch, arm: ArmModel, hyper: CbfHyper, envs=None,
                   stencil_d: np.ndarray | None = None) -> _Prepared:
    if not batch:
        raise ValueError("empty batch")
    b = len(batch)
    safe_mask = np.array([s.label is SafetyLabel.SAFE for s in batch])
    unsafe_mask = np.array([s.label is SafetyLabel.UNSAFE for s in batch])
    qs = np.stack([_stencil_configs(s.q, hyper.fd_step) for s in batch])  # (B, S, n)
    first_obs = batch[0].observation
    if isinstance(first_obs, StateObservation):
        if stencil_d is None:
            stencil_d = stencil_distances(batch, arm, hyper, envs)
        x = np.concatenate([qs, stencil_d[:, :, None]], axis=2)
        return _Prepared(kind="state", safe_mask=safe_mask, unsafe_mask=unsafe_mask, x=x)
    points = np.stack([s.observation.points for s in batch])
    normals = np.stack([s.observation.normals for s in batch])
    return _Prepared(kind="cloud", safe_mask=safe_mask, unsafe_mask=unsafe_mask,
                     qs=qs, points=points, normals=normals)


def _forward_stencil(net, prep: _Prepared, arm: ArmModel):
    """Barrier values on all stencil slots: h (B, S) plus the tape."""
    if prep.kind == "state":
        b, s, d_in = prep.x.shape
        y, tape = mlp_forward(net, prep.x.reshape(b * s, d_in))
        return y[:, 0].reshape(b, s), tape
    recs = _stencil_records(arm, prep.qs, prep.points, prep.normals)
    b, s, m, din = recs.shape
    h, tape = encoder_forward_batch(net, prep.qs.reshape(b * s, -1), recs.reshape(b * s, m, din))
    return h.reshape(b, s), tape


def _condition_values(h: np.ndarray, prep: _Prepared, arm: ArmModel, hyper: CbfHyper):
    """Per-sample pieces of the three barrier conditions.

    Returns (h0, grad (B, n), inf values (B,), argmin controls (B, n)).
    """
    fd = hyper.fd_step
    h0 = h[:, 0]
    grad = (h[:, 1:] - h0[:, None]) / fd
    lo = arm.action_lower
    hi = arm.action_upper
    argmin = np.where(grad > 0.0, lo[None, :], np.where(grad < 0.0, hi[None, :], lo[None, :]))
    inf_vals = np.einsum("bn,bn->b", grad, argmin)
    return h0, grad, inf_vals, argmin


def loss(net, batch, arm: ArmModel, hyper: CbfHyper, envs=None,
         want_grads: bool = True):
    """Three-term hinge loss on a batch of labeled samples.

    term1 penalizes safe samples with h > -gamma, term2 unsafe samples with
    h <= gamma, term3 every sample whose best-case control cannot push the
    margined derivative condition below zero. Empty classes contribute zero.
    Returns (total, components dict, parameter grads or None).
    """
    prep = _prepare_batch(batch, arm, hyper, envs=envs)
    return _loss_prepared(net, prep, arm, hyper, want_grads=want_grads)


def _loss_prepared(net, prep: _Prepared, arm: ArmModel, hyper: CbfHyper,
                   want_grads: bool = True):
    h, tape = _forward_stencil(net, prep, arm)
    b, s = h.shape
    h0, grad, inf_vals, argmin = _condition_values(h, prep, arm, hyper)
    a1, a2, a3 = hyper.loss_weights
    n_total = b
    n_safe = int(prep.safe_mask.sum())
    n_unsafe = int(prep.unsafe_mask.sum())

    safe_viol = np.where(prep.safe_mask, np.maximum(hyper.gamma + h0, 0.0), 0.0)
    unsafe_viol = np.where(prep.unsafe_mask, np.maximum(hyper.gamma - h0, 0.0), 0.0)
    z = hyper.eps_margin + inf_vals + hyper.alpha_h * h0
    deriv_viol = np.maximum(z, 0.0)

    term1 = a1 / n_safe * safe_viol.sum() if n_safe else 0.0
    term2 = a2 / n_unsafe * unsafe_viol.sum() if n_unsafe else 0.0
    term3 = a3 / n_total * deriv_viol.sum()
    components = {"safe": float(term1), "unsafe": float(term2), "deriv": float(term3)}
    total = float(term1 + term2 + term3)
    if not want_grads:
        return total, components, None

    # Upstream weights per stencil slot. Term 3 flows through the base value
    # (alpha_h minus the stencil contributions folded back) and through each
    # stencil point via the argmin control; the argmin is held constant.
    up = np.zeros((b, s))
    if n_safe:
        up[:, 0] += np.where(prep.safe_mask & (safe_viol > 0.0), a1 / n_safe, 0.0)
    if n_unsafe:
        up[:, 0] -= np.where(prep.unsafe_mask & (unsafe_viol > 0.0), a2 / n_unsafe, 0.0)
    active3 = (z > 0.0).astype(float) * (a3 / n_total)
    fd = hyper.fd_step
    stencil_w = argmin / fd  # (B, n): weight of each stencil slot's h
    up[:, 1:] += active3[:, None] * stencil_w
    up[:, 0] += active3 * (hyper.alpha_h - stencil_w.sum(axis=1))

    if prep.kind == "state":
        grads, _ = mlp_backward(tape, up.reshape(b * s, 1))
    else:
        grads, _, _ = encoder_backward_batch(tape, up.reshape(b * s))
    return total, components, grads


def evaluate_constraints(net, samples, arm: ArmModel = None, hyper: CbfHyper = None, envs=None,
                         batch_size: int = 512, stencil_d: np.ndarray | None = None) -> dict:
    """Empirical satisfaction rates of the three barrier conditions.

    `samples` may be a Dataset (arm and environments taken from it) or a list
    of LabeledSample with `arm`/`envs` supplied.
    """
    if isinstance(samples, Dataset):
        arm = samples.arm
        envs = samples.environments
        samples = samples.samples
    if hyper is None:
        raise ValueError("hyper is required")
    n_safe = n_unsafe = n_total = 0
    ok_safe = ok_unsafe = ok_deriv = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        sd = stencil_d[start:start + batch_size] if stencil_d is not None else None
        prep = _prepare_batch(chunk, arm, hyper, envs=envs, stencil_d=sd)
        h, _ = _forward_stencil(net, prep, arm)
        h0, _, inf_vals, _ = _condition_values(h, prep, arm, hyper)
        n_total += len(chunk)
        n_safe += int(prep.safe_mask.sum())
        n_unsafe += int(prep.unsafe_mask.sum())
        ok_safe += int((prep.safe_mask & (h0 <= -hyper.gamma)).sum())
        ok_unsafe += int((prep.unsafe_mask & (h0 > hyper.gamma)).sum())
        ok_deriv += int((hyper.eps_margin + inf_vals + hyper.alpha_h * h0 <= 0.0).sum())
    return {
        "safe_rate": ok_safe / n_safe if n_safe else 1.0,
        "unsafe_rate": ok_unsafe / n_unsafe if n_unsafe else 1.0,
        "deriv_rate": ok_deriv / n_total if n_total else 1.0,
        "n_safe": n_safe,
        "n_unsafe": n_unsafe,
        "n_total": n_total,
    }


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 2e-3


def train(dataset: Dataset, net_init, hyper: CbfHyper, schedule: TrainSchedule,
          rng: np.random.Generator):
    """Mini-batch Adam on the hinge loss with per-epoch validation auditing.

    The dataset is split 90/10 train/validation by the generator; refreshed
    stencil observations are precomputed once. Divergence aborts with the
    report collected so far.
    """
    t0 = time.perf_counter()
    report = TrainReport()
    net = net_init
    if schedule.epochs == 0 or not dataset.samples:
        report.wall_seconds = time.perf_counter() - t0
        return net, report

    n_total = len(dataset.samples)
    perm = rng.permutation(n_total)
    n_val = max(1, n_total // 10) if n_total > 1 else 0
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    samples = dataset.samples
    envs = dataset.environments

    # Stencil observations are fixed across epochs; compute them once.
    stencil_cache = None
    if dataset.kind == "state":
        stencil_cache = stencil_distances(samples, dataset.arm, hyper, envs)

    params = net.params if isinstance(net, Mlp) else net.all_params()
    state = AdamState.for_params(params)
    val_samples = [samples[i] for i in val_idx]
    val_stencil = stencil_cache[val_idx] if stencil_cache is not None else None

    for epoch in range(schedule.epochs):
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        epoch_comps = {"safe": 0.0, "unsafe": 0.0, "deriv": 0.0}
        n_seen = 0
        for start in range(0, len(order), schedule.batch_size):
            idx = train_idx[order[start:start + schedule.batch_size]]
            chunk = [samples[i] for i in idx]
            sd = stencil_cache[idx] if stencil_cache is not None else None
            prep = _prepare_batch(chunk, dataset.arm, hyper, envs=envs, stencil_d=sd)
            total, comps, grads = _loss_prepared(net, prep, dataset.arm, hyper)
            if not np.isfinite(total):
                report.aborted = True
                report.wall_seconds = time.perf_counter() - t0
                return net, report
            if isinstance(net, Mlp):
                adam_step(net.params, grads, state, lr=schedule.lr)
            else:
                adam_step(params, grads, state, lr=schedule.lr)
            w = len(chunk)
            epoch_loss += total * w
            for k in epoch_comps:
                epoch_comps[k] += comps[k] * w
            n_seen += w
        rates = evaluate_constraints(net, val_samples, dataset.arm, hyper, envs=envs,
                                     stencil_d=val_stencil)
        report.epochs.append({
            "epoch": epoch,
            "loss": epoch_loss / max(n_seen, 1),
            "loss_safe": epoch_comps["safe"] / max(n_seen, 1),
            "loss_unsafe": epoch_comps["unsafe"] / max(n_seen, 1),
            "loss_deriv": epoch_comps["deriv"] / max(n_seen, 1),
            "val_safe_rate": rates["safe_rate"],
            "val_unsafe_rate": rates["unsafe_rate"],
            "val_deriv_rate": rates["deriv_rate"],
        })
    report.wall_seconds = time.perf_counter() - t0
    return net, report


def handcrafted_h(env: Environment, arm: ArmModel, q: np.ndarray, margin: float,
                  fd_step: float = 1e-3) -> tuple[float, np.ndarray]:
    """Signed-distance barrier baseline: h = margin - d(q), gradient by the
    same forward-difference rule with refreshed observations."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    q = np.asarray(q, dtype=float)
    ds = signed_distance_batch(env, arm, _stencil_configs(q, fd_step))
    grad = -(ds[1:] - ds[0]) / fd_step
    return margin - ds[0], grad


class NeuralBarrier:
    """Bundle of a trained net and its hyper block, for controllers/planners."""

    def __init__(self, net, arm: ArmModel, hyper: CbfHyper):
        self.net = net
        self.arm = arm
        self.hyper = hyper

    @property
    def kind(self) -> str:
        return "state" if isinstance(self.net, Mlp) else "cloud"

    @property
    def needs_observation(self) -> bool:
        """Whether rollouts must fetch an observation for this barrier (a
        refreshed state barrier regenerates its own scalar observation)."""
        return self.kind == "cloud" or self.hyper.fd_mode is FdMode.FIXED_OBSERVATION

    def value_and_grad(self, q, observation, env) -> tuple[float, np.ndarray]:
        return h_and_grad(self.net, q, env, self.arm, self.hyper, observation=observation)


class HandcraftedBarrier:
    """Signed-distance baseline with an inflated clearance margin."""

    def __init__(self, arm: ArmModel, margin: float = 0.15, fd_step: float = 1e-3):
        self.arm = arm
        self.margin = margin
        self.fd_step = fd_step

    @property
    def kind(self) -> str:
        return "handcrafted"

    @property
    def needs_observation(self) -> bool:
        return False

    def value_and_grad(self, q, observation, env) -> tuple[float, np.ndarray]:
        return handcrafted_h(env, self.arm, q, self.margin, fd_step=self.fd_step)
