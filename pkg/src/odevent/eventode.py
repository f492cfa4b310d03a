"""Piecewise-continuous models: chained event-terminated segments with
instantaneous state updates, trajectory losses, and training.

The forward loop alternates event-terminated solves with an update map h;
the backward pass walks the segments in reverse, converting loss cotangents
at each event boundary into a single state cotangent (the implicit-function
reduction) and carrying it through one backward solve per segment. Storage
is proportional to the number of events, not the number of solver steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from bisect import bisect_right

import numpy as np

from .adjoint import backward_segment
from .errors import DomainError, TrainingDivergedError
from .events import (
    DEADLINE,
    EVENT_FOUND,
    EventSpec,
    boundary_cotangent,
    ode_solve_event,
)
from .optim import Adam, AdamConfig
from .solver import SolverConfig, Solution, ode_solve


@dataclass
class EventOdeModel:
    """Drift f(theta), optional event spec g(phi), optional update h(psi).

    With no event spec the model is a plain fixed-horizon ODE. horizon is
    the default simulation endpoint; n_max caps the event count. When
    update_at_start is set, h is also applied once at the initial instant
    (used by models whose update net infers a discrete mode from position).
    """

    drift: object
    theta: np.ndarray | None = None
    event: EventSpec | None = None
    update: object | None = None
    psi: np.ndarray | None = None
    horizon: float = 1.0
    n_max: int = 100
    update_at_start: bool = False

    def __post_init__(self):
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        if self.psi is not None:
            self.psi = np.asarray(self.psi, dtype=np.float64).ravel()
        if self.update is not None and self.update.out_dim != self.update.in_dim:
            raise DomainError("update map must preserve the state dimension")

    @property
    def phi(self):
        return None if self.event is None else self.event.params

    def params_dict(self) -> dict:
        out = {}
        if self.theta is not None:
            out["theta"] = self.theta
        if self.event is not None and self.event.params is not None:
            out["phi"] = self.event.params
        if self.psi is not None:
            out["psi"] = self.psi
        return out

    def set_params(self, updates: dict) -> None:
        if "theta" in updates:
            self.theta = np.asarray(updates["theta"], dtype=np.float64).ravel()
        if "phi" in updates and self.event is not None:
            self.event.params = np.asarray(updates["phi"], dtype=np.float64).ravel()
        if "psi" in updates:
            self.psi = np.asarray(updates["psi"], dtype=np.float64).ravel()


@dataclass
class EventTrajectory:
    """Segments tiling [t0, t_end] with discontinuities at event times."""

    t0: float
    t_end: float
    z0: np.ndarray
    event_times: list
    segments: list
    pre_states: list
    post_states: list
    outcomes: list
    truncated: bool
    nfe_f: int
    nfe_g: int
    z0_updated: np.ndarray | None = None

    @property
    def n_events(self) -> int:
        return len(self.event_times)

    def dense_eval(self, t: float) -> np.ndarray:
        """State at time t; right-continuous at event instants."""
        t = float(t)
        if t < self.t0 or t > self.t_end:
            raise DomainError(f"t={t} outside trajectory domain [{self.t0}, {self.t_end}]")
        idx = bisect_right(self.event_times, t)
        if idx == len(self.segments):
            idx -= 1  # t == t_end of a truncated trajectory's last event
        return self.segments[idx].dense_eval(t)

    def states_at(self, times) -> np.ndarray:
        return np.stack([self.dense_eval(t) for t in np.asarray(times).ravel()])


def simulate(model: EventOdeModel, z0, t0: float = 0.0, cfg: SolverConfig | None = None) -> EventTrajectory:
    """Run the event loop from (t0, z0) to the model horizon.

    Each cycle solves to the next event, applies the update map, and
    resumes; a deadline-reached outcome closes the trajectory with a final
    ordinary segment. Hitting n_max before the horizon flags the trajectory
    truncated rather than raising.
    """
    cfg = cfg or SolverConfig()
    z = np.asarray(z0, dtype=np.float64).ravel()
    t = float(t0)
    horizon = float(model.horizon)
    if not t < horizon:
        raise DomainError(f"t0={t} must precede the horizon {horizon}")

    z0_updated = None
    if model.update_at_start and model.update is not None:
        z = np.asarray(model.update.value(t, z, model.psi), dtype=np.float64)
        z0_updated = z.copy()

    event_times, segments, pres, posts, outcomes = [], [], [], [], []
    nfe_f = nfe_g = 0
    truncated = False

    if model.event is None:
        sol = ode_solve(model.drift, z, t, horizon, cfg, model.theta)
        return EventTrajectory(
            t0, horizon, np.asarray(z0, dtype=np.float64), [], [sol], [], [], [],
            False, sol.nfe, 0, z0_updated,
        )

    spec = model.event.with_deadline(horizon)
    while True:
        try:
            outcome = ode_solve_event(model.drift, z, t, model.theta, spec, cfg)
        except Exception as exc:
            exc.args = (f"segment {len(segments)}: {exc}",) + exc.args[1:]
            raise
        nfe_f += outcome.nfe_f
        nfe_g += outcome.nfe_g
        segments.append(outcome.solution)
        if outcome.status != EVENT_FOUND:
            t_end = outcome.t_star
            break
        event_times.append(outcome.t_star)
        outcomes.append(outcome)
        pres.append(outcome.z_star.copy())
        z = np.asarray(
            model.update.value(outcome.t_star, outcome.z_star, model.psi),
            dtype=np.float64,
        )
        posts.append(z.copy())
        t = outcome.t_star
        if len(event_times) >= model.n_max:
            truncated = t < horizon
            t_end = t
            break

    return EventTrajectory(
        t0, t_end, np.asarray(z0, dtype=np.float64), event_times, segments,
        pres, posts, outcomes, truncated, nfe_f, nfe_g, z0_updated,
    )


def _loss_and_cotangents(pred, target, velocity_weight):
    """Mean squared position error plus weighted displacement-difference error.

    Returns (loss, dloss/dpred). pred and target are (N, d) arrays.
    """
    n, d = pred.shape
    diff = pred - target
    loss = float(np.mean(diff * diff))
    cot = 2.0 * diff / (n * d)
    if velocity_weight and n > 1:
        dd = np.diff(pred, axis=0) - np.diff(target, axis=0)
        loss += velocity_weight * float(np.mean(dd * dd))
        w = velocity_weight * 2.0 / ((n - 1) * d)
        cot[:-1] -= w * dd
        cot[1:] += w * dd
    return loss, cot


def trajectory_loss(traj: EventTrajectory, times, observations, velocity_weight: float = 0.0, obs_dim: int | None = None) -> float:
    """Squared-error fit of the trajectory to observations at given times.

    Observations cover the first obs_dim state components (all by default).
    """
    times = np.asarray(times, dtype=np.float64).ravel()
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    d = observations.shape[1] if obs_dim is None else int(obs_dim)
    pred = traj.states_at(times)[:, :d]
    loss, _ = _loss_and_cotangents(pred, observations[:, :d], velocity_weight)
    return loss


@dataclass
class TrajectoryGrads:
    loss: float
    dtheta: np.ndarray
    dphi: np.ndarray
    dpsi: np.ndarray
    dz0: np.ndarray
    nfe_backward: int


def trajectory_grad(
    model: EventOdeModel,
    traj: EventTrajectory,
    times,
    observations,
    velocity_weight: float = 0.0,
    obs_dim: int | None = None,
    cfg: SolverConfig | None = None,
) -> TrajectoryGrads:
    """Loss and its gradients w.r.t. theta, phi, psi, and the initial state.

    Walks segments in reverse. At each event boundary the downstream
    cotangent passes through the update map, is reduced by the event-time
    derivative, and continues through one backward solve over the segment;
    observation cotangents are injected at their times along the way.
    """
    cfg = cfg or SolverConfig()
    times = np.asarray(times, dtype=np.float64).ravel()
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    d_obs = observations.shape[1] if obs_dim is None else int(obs_dim)
    dim = traj.segments[0].dim

    pred_full = traj.states_at(times)
    loss, cot = _loss_and_cotangents(pred_full[:, :d_obs], observations[:, :d_obs], velocity_weight)

    # lift observation cotangents to full state dim and bucket by segment
    n_segments = len(traj.segments)
    buckets = [[] for _ in range(n_segments)]
    for k, t_k in enumerate(times):
        w = np.zeros(dim)
        w[:d_obs] = cot[k]
        idx = bisect_right(traj.event_times, t_k)
        if idx == n_segments:
            idx -= 1
        buckets[idx].append((float(t_k), w))

    n_theta = model.theta.size if model.theta is not None else 0
    n_phi = model.phi.size if model.phi is not None else 0
    n_psi = model.psi.size if model.psi is not None else 0
    g_theta = np.zeros(n_theta)
    g_phi = np.zeros(n_phi)
    g_psi = np.zeros(n_psi)
    nfe = 0

    lam = np.zeros(dim)  # dL/d(start state of the segment just processed)
    s_t = 0.0  # dL/d(start time of the segment just processed)

    has_tail = len(traj.segments) == len(traj.event_times) + 1
    for i in range(n_segments - 1, -1, -1):
        seg = traj.segments[i]
        if i == n_segments - 1 and (has_tail or not traj.event_times):
            a_end = np.zeros(dim)  # horizon endpoint carries no loss here
        else:
            # segment i ends at event i+1 (index i in the outcome list)
            outcome = traj.outcomes[i]
            t_ev = traj.event_times[i]
            if model.update is not None:
                ht, hz, hpsi = model.update.vjp(t_ev, traj.pre_states[i], model.psi, lam)
            else:
                ht, hz, hpsi = 0.0, lam, np.zeros(0)
            if n_psi:
                g_psi += hpsi
            dL_dt = s_t + ht
            v, scale = boundary_cotangent(outcome, dL_dt, hz)
            if n_phi and outcome.g_params is not None and outcome.g_params.size:
                g_phi += scale * outcome.g_params
            a_end = v
        z_start, a_start, pbar, seg_nfe = backward_segment(
            model.drift,
            model.theta,
            seg.y1,
            seg.t1,
            seg.t0,
            a_end,
            cfg,
            injections=buckets[i],
            z_start_ref=seg.y0,
        )
        nfe += seg_nfe
        if n_theta:
            g_theta += pbar
        lam = a_start
        s_t = -float(a_start @ model.drift.value(seg.t0, seg.y0, model.theta))
        nfe += 1

    if model.update_at_start and model.update is not None:
        ht, hz, hpsi = model.update.vjp(traj.t0, traj.z0, model.psi, lam)
        if n_psi:
            g_psi += hpsi
        lam = hz

    return TrajectoryGrads(loss, g_theta, g_phi, g_psi, lam, nfe)


@dataclass
class TrainConfig:
    iterations: int = 1000
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    trainable: tuple = ("theta", "phi", "psi")
    velocity_weight: float = 0.0
    seed: int = 0
    val_every: int = 50
    on_truncation: str = "skip"  # or "raise"
    debug_check_events: bool = False


@dataclass
class TrainResult:
    curve: list  # (iteration, train_loss, val_loss) rows
    nfe_forward: int
    nfe_backward: int
    skipped: int


def dataset_loss(
    model, sequences, velocity_weight=0.0, obs_dim=None, cfg=None, z0_of=None
):
    """Mean trajectory loss over (times, observations) sequences."""
    total = 0.0
    for times, obs in sequences:
        z0 = obs[0] if z0_of is None else z0_of(times, obs)
        traj = simulate(model, z0, float(times[0]), cfg)
        total += trajectory_loss(traj, times, obs, velocity_weight, obs_dim)
    return total / len(sequences)


def train(
    model: EventOdeModel,
    sequences,
    cfg: TrainConfig,
    solver_cfg: SolverConfig | None = None,
    val_sequences=None,
    obs_dim: int | None = None,
    z0_of=None,
) -> TrainResult:
    """Gradient training of an event model on observed trajectories.

    One sequence per iteration (cycled in seeded random order). Gradients
    flow through the chained backward pass; a nonfinite loss or gradient
    aborts with a diagnostic snapshot.
    """
    solver_cfg = solver_cfg or SolverConfig()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(AdamConfig(**{**cfg.optimizer.__dict__, "total_steps": cfg.iterations}))
    curve = []
    nfe_f = nfe_b = 0
    skipped = 0
    val_loss = float("nan")

    for it in range(cfg.iterations):
        times, obs = sequences[int(rng.integers(len(sequences)))]
        z0 = obs[0] if z0_of is None else z0_of(times, obs)
        traj = simulate(model, z0, float(times[0]), solver_cfg)
        nfe_f += traj.nfe_f
        if traj.truncated:
            if cfg.on_truncation == "raise":
                raise TrainingDivergedError(
                    f"iteration {it}: trajectory truncated at {traj.n_events} events",
                    snapshot={"iteration": it, "params": model.params_dict()},
                )
            skipped += 1
            curve.append((it, float("nan"), val_loss))
            continue
        grads = trajectory_grad(
            model, traj, times, obs, cfg.velocity_weight, obs_dim, solver_cfg
        )
        nfe_b += grads.nfe_backward
        if cfg.debug_check_events:
            recheck = simulate(model, z0, float(times[0]), solver_cfg)
            if recheck.n_events != traj.n_events:
                raise TrainingDivergedError(
                    f"iteration {it}: event count changed during gradient evaluation",
                    snapshot={"iteration": it},
                )
        g = {"theta": grads.dtheta, "phi": grads.dphi, "psi": grads.dpsi}
        params = model.params_dict()
        live = {k: v for k, v in params.items() if k in cfg.trainable and v.size}
        live_grads = {k: g[k] for k in live}
        bad = not np.isfinite(grads.loss) or any(
            not np.all(np.isfinite(v)) for v in live_grads.values()
        )
        if bad:
            raise TrainingDivergedError(
                f"iteration {it}: nonfinite loss or gradient",
                snapshot={
                    "iteration": it,
                    "loss": grads.loss,
                    "params": {k: v.tolist() for k, v in params.items()},
                },
            )
        new_params, _ = opt.step(live, live_grads)
        model.set_params(new_params)
        if val_sequences is not None and cfg.val_every and (
            it % cfg.val_every == cfg.val_every - 1 or it == cfg.iterations - 1
        ):
            val_loss = dataset_loss(
                model, val_sequences, cfg.velocity_weight, obs_dim, solver_cfg, z0_of
            )
        curve.append((it, grads.loss, val_loss))
    return TrainResult(curve, nfe_f, nfe_b, skipped)
