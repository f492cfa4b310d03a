"""Temporal point processes driven by threshold events.

A latent state follows an ODE between events and jumps at each event; a
positive head maps the latent state to the conditional intensity. Sampling
draws unit-exponential thresholds and solves for the time at which the
accumulated intensity reaches each threshold, which makes sampled event
times differentiable functions of the parameters (the pathwise route). The
score-function estimator is provided for comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .adjoint import backward_segment
from .errors import DomainError, InvalidSpecError, RunawayIntensityError
from .events import DEADLINE, EVENT_FOUND, EventSpec, boundary_cotangent, ode_solve_event
from .functions import DiffFn
from .params import ParamVec, pack
from .solver import SolverConfig, ode_solve
from .systems import ThresholdEvent


class ConstantIntensityHead(DiffFn):
    """Intensity independent of the latent state: softplus(raw) + floor."""

    n_params = 1
    out_dim = 1

    def __init__(self, dim: int, floor: float = 1e-12):
        self.in_dim = int(dim)
        self.floor = float(floor)

    @staticmethod
    def raw_for(lam: float, floor: float = 1e-12) -> float:
        """Parameter value giving intensity lam."""
        return float(np.log(np.expm1(lam - floor)))

    def init_params(self) -> ParamVec:
        return pack([("raw", np.asarray([self.raw_for(1.0, self.floor)]))])

    def value(self, t, z, p):
        p = self._check_p(p)
        return np.asarray([np.logaddexp(0.0, p[0]) + self.floor])

    def vjp(self, t, z, p, v):
        p = self._check_p(p)
        v = self._check_v(v)
        sig = 0.5 * (1.0 + np.tanh(0.5 * p[0]))
        return 0.0, np.zeros(self.in_dim), np.asarray([v[0] * sig])


class _AugmentedIntensity(DiffFn):
    """Latent drift plus the running intensity integral as the last state slot."""

    def __init__(self, model: "IntensityModel"):
        self.model = model
        self.in_dim = self.out_dim = model.latent_dim + 1
        self.n_params = model.n_params

    def value(self, t, z, p):
        m = self.model
        lat = z[: m.latent_dim]
        dz = m.drift.value(t, lat, m.p_drift(p))
        lam = m.head.value(t, lat, m.p_head(p))
        return np.concatenate([dz, lam])

    def vjp(self, t, z, p, v):
        m = self.model
        d = m.latent_dim
        lat = z[:d]
        dt1, dz1, dp_drift = m.drift.vjp(t, lat, m.p_drift(p), v[:d])
        dt2, dz2, dp_head = m.head.vjp(t, lat, m.p_head(p), v[d:])
        dz = np.zeros(d + 1)
        dz[:d] = dz1 + dz2
        dp = np.zeros(m.n_params)
        dp[m.sl_drift] = dp_drift
        dp[m.sl_head] = dp_head
        return dt1 + dt2, dz, dp


@dataclass
class IntensityModel:
    """Latent-state intensity model: drift, event-time jump, positive head."""

    latent_dim: int
    drift: DiffFn
    jump: DiffFn
    head: DiffFn
    latent0: np.ndarray | None = None

    def __post_init__(self):
        d = self.latent_dim
        if self.drift.in_dim != d or self.drift.out_dim != d:
            raise InvalidSpecError("drift must map latent -> latent")
        if self.jump.in_dim != d or self.jump.out_dim != d:
            raise InvalidSpecError("jump must map latent -> latent")
        if self.head.in_dim != d or self.head.out_dim != 1:
            raise InvalidSpecError("head must map latent -> scalar")
        if self.latent0 is None:
            self.latent0 = np.zeros(d)
        self.latent0 = np.asarray(self.latent0, dtype=np.float64).ravel()
        n_d, n_j, n_h = self.drift.n_params, self.jump.n_params, self.head.n_params
        self.sl_drift = slice(0, n_d)
        self.sl_jump = slice(n_d, n_d + n_j)
        self.sl_head = slice(n_d + n_j, n_d + n_j + n_h)
        self.n_params = n_d + n_j + n_h
        self.augmented = _AugmentedIntensity(self)

    def init_params(self) -> ParamVec:
        return pack(
            [
                ("drift", self.drift.init_params().values),
                ("jump", self.jump.init_params().values),
                ("head", self.head.init_params().values),
            ]
        )

    def p_drift(self, p):
        return np.asarray(p)[self.sl_drift]

    def p_jump(self, p):
        return np.asarray(p)[self.sl_jump]

    def p_head(self, p):
        return np.asarray(p)[self.sl_head]

    def intensity(self, t, latent, p) -> float:
        return float(self.head.value(t, latent, self.p_head(p))[0])


@dataclass
class EventSequence:
    """Strictly increasing event times inside an observation window."""

    times: np.ndarray
    t0: float
    t_end: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        if self.times.size and (
            np.any(np.diff(self.times) <= 0) or self.times[0] <= self.t0
        ):
            raise DomainError("event times must be strictly increasing after t0")
        if self.times.size and self.times[-1] > self.t_end:
            raise DomainError("event beyond the window end")

    def __len__(self):
        return self.times.size


@dataclass
class _EventRecord:
    t: float
    s: float
    latent_pre: np.ndarray
    latent_post: np.ndarray
    lam: float
    compensator: float  # accumulated intensity over the inter-event segment
    outcome: object


@dataclass
class SampleRecord:
    """A sampled sequence plus everything the backward pass needs."""

    t0: float
    t_end: float
    events: list
    censored: bool
    tail_compensator: float  # integral from the last event to t_end (window mode)
    nfe_f: int

    @property
    def times(self) -> np.ndarray:
        return np.asarray([e.t for e in self.events])

    @property
    def thresholds(self) -> np.ndarray:
        return np.asarray([e.s for e in self.events])

    def sequence(self) -> EventSequence:
        return EventSequence(self.times, self.t0, self.t_end)


def sample_next(model, params, latent, t_prev, s, cfg=None, deadline=np.inf, root_tol=1e-10):
    """Advance to the next event: solve until the intensity integral hits s.

    Returns an _EventRecord, or None when the deadline arrives first
    (censored: no event in the window). The integral restarts at zero.
    """
    if not s > 0:
        raise DomainError("threshold must be positive")
    cfg = cfg or SolverConfig()
    d = model.latent_dim
    thr = ThresholdEvent(d + 1)
    spec = EventSpec(
        thr, params=np.asarray([s]), direction="any", root_tol=root_tol,
        deadline=deadline, start_policy="error",
    )
    z0 = np.concatenate([latent, [0.0]])
    outcome = ode_solve_event(model.augmented, z0, t_prev, params, spec, cfg)
    if outcome.status != EVENT_FOUND:
        return None, outcome
    lat_pre = outcome.z_star[:d]
    lat_post = np.asarray(
        model.jump.value(outcome.t_star, lat_pre, model.p_jump(params)),
        dtype=np.float64,
    )
    lam = model.intensity(outcome.t_star, lat_pre, params)
    rec = _EventRecord(
        outcome.t_star, float(s), lat_pre, lat_post, lam,
        float(outcome.z_star[d]), outcome,
    )
    return rec, outcome


def sample_sequence(
    model,
    params,
    t0: float,
    t_end: float | None = None,
    n_events: int | None = None,
    rng=None,
    cfg=None,
    root_tol: float = 1e-10,
    max_events: int = 10_000,
    max_gap: float = 1e6,
) -> SampleRecord:
    """Draw a sequence by inverse-CDF thresholds s = -log(u), u uniform.

    Window mode (t_end set): events until the first censoring. Fixed-count
    mode (n_events set): exactly that many events, no censoring. The drawn
    thresholds are recorded so the same noise can be replayed under
    perturbed parameters.
    """
    if (t_end is None) == (n_events is None):
        raise DomainError("set exactly one of t_end or n_events")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    cfg = cfg or SolverConfig()
    latent = model.latent0.copy()
    t = float(t0)
    events = []
    censored = False
    tail = 0.0
    nfe = 0
    while True:
        if n_events is not None and len(events) >= n_events:
            break
        if len(events) >= max_events:
            raise RunawayIntensityError(
                f"exceeded {max_events} events in [{t0}, {t_end}]"
            )
        s = -np.log1p(-rng.random())
        deadline = t_end if t_end is not None else t + max_gap
        rec, outcome = sample_next(model, params, latent, t, s, cfg, deadline, root_tol)
        nfe += outcome.nfe_f
        if rec is None:
            if n_events is not None:
                raise DomainError(
                    f"intensity too small: no event within {max_gap} time units"
                )
            censored = True
            tail = float(outcome.z_star[model.latent_dim])
            break
        events.append(rec)
        latent = rec.latent_post
        t = rec.t
    end = t_end if t_end is not None else (events[-1].t if events else t0)
    return SampleRecord(float(t0), float(end), events, censored, tail, nfe)


def log_likelihood(model, params, times, t0: float, cfg=None) -> float:
    """Sum of log intensities at the events minus the integral up to the
    last event. An empty sequence scores zero by convention.
    """
    ll, _ = _loglik_segments(model, params, times, t0, cfg)
    return ll


def _loglik_segments(model, params, times, t0, cfg=None):
    cfg = cfg or SolverConfig()
    times = np.asarray(times, dtype=np.float64).ravel()
    if times.size == 0:
        return 0.0, []
    if times[0] <= t0 or np.any(np.diff(times) <= 0):
        raise DomainError("event times must be strictly increasing after t0")
    d = model.latent_dim
    latent = model.latent0.copy()
    compensator = 0.0
    ll = 0.0
    segs = []
    t_prev = float(t0)
    for t_i in times:
        z0 = np.concatenate([latent, [0.0]])
        sol = ode_solve(model.augmented, z0, t_prev, float(t_i), cfg, params)
        lat_pre = sol.y1[:d]
        lam = model.intensity(t_i, lat_pre, params)
        ll += np.log(lam)
        compensator += float(sol.y1[d])
        lat_post = np.asarray(
            model.jump.value(t_i, lat_pre, model.p_jump(params)), dtype=np.float64
        )
        segs.append(
            {
                "t_start": t_prev,
                "t_end": float(t_i),
                "z_start": z0,
                "z_end": sol.y1.copy(),
                "lat_pre": lat_pre.copy(),
                "lat_post": lat_post.copy(),
                "lam": lam,
            }
        )
        latent = lat_post
        t_prev = float(t_i)
    return float(ll - compensator), segs


def log_likelihood_grad(model, params, times, t0: float, cfg=None):
    """Log likelihood and its parameter gradient at fixed event times.

    The boundaries are data, not solver outputs, so the chain passes only
    through the jump map and the segment adjoints.
    """
    cfg = cfg or SolverConfig()
    ll, segs = _loglik_segments(model, params, times, t0, cfg)
    n = len(segs)
    d = model.latent_dim
    grad = np.zeros(model.n_params)
    if n == 0:
        return 0.0, grad
    a = np.zeros(d + 1)
    for i in range(n - 1, -1, -1):
        seg = segs[i]
        # cotangent arriving on the post-jump latent flows through the jump
        _, a_lat, dp_jump = model.jump.vjp(
            seg["t_end"], seg["lat_pre"], model.p_jump(params), a[:d]
        )
        grad[model.sl_jump] += dp_jump
        # log-intensity term at the segment end
        _, dlat_head, dp_head = model.head.vjp(
            seg["t_end"], seg["lat_pre"], model.p_head(params), [1.0 / seg["lam"]]
        )
        grad[model.sl_head] += dp_head
        # -1 on the integral slot: each segment owns one compensator increment
        a_end = np.concatenate([a_lat + dlat_head, [-1.0]])
        _, a_start, pbar, _ = backward_segment(
            model.augmented, params, seg["z_end"], seg["t_end"], seg["t_start"],
            a_end, cfg, z_start_ref=seg["z_start"],
        )
        grad += pbar
        a = a_start
        a[d] = 0.0  # the integral restarts at zero each segment
    return ll, grad


@dataclass
class HawkesTarget:
    """Self-exciting process with exponential kernel: mu + sum a*exp(-b*dt)."""

    mu: float = 1.0
    alpha: float = 0.8
    beta: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("mu must be > 0")
        if self.alpha < 0:
            raise DomainError("alpha must be >= 0")
        if not self.beta > 0:
            raise DomainError("beta must be > 0")
        if not self.alpha < self.beta:
            raise DomainError("stationarity requires alpha < beta")

    def intensity(self, t, times) -> float:
        times = np.asarray(times, dtype=np.float64)
        past = times[times < t]
        return self.mu + self.alpha * float(np.sum(np.exp(-self.beta * (t - past))))


def _hawkes_excitations(target: HawkesTarget, times):
    """A_i = sum_{j<i} exp(-beta (t_i - t_j)) by the standard recursion."""
    n = times.size
    a = np.zeros(n)
    for i in range(1, n):
        a[i] = np.exp(-target.beta * (times[i] - times[i - 1])) * (a[i - 1] + 1.0)
    return a


def hawkes_loglik(target: HawkesTarget, times, t0: float) -> float:
    """Closed-form log likelihood with the integral taken to the last event."""
    times = np.asarray(times, dtype=np.float64).ravel()
    if times.size == 0:
        return 0.0
    if times[0] <= t0 or np.any(np.diff(times) <= 0):
        raise DomainError("event times must be strictly increasing after t0")
    exc = _hawkes_excitations(target, times)
    lam = target.mu + target.alpha * exc
    t_n = times[-1]
    compensator = target.mu * (t_n - t0) + (target.alpha / target.beta) * float(
        np.sum(1.0 - np.exp(-target.beta * (t_n - times)))
    )
    return float(np.sum(np.log(lam)) - compensator)


def hawkes_loglik_time_grad(target: HawkesTarget, times, t0: float):
    """Log likelihood and its gradient with respect to each event time."""
    times = np.asarray(times, dtype=np.float64).ravel()
    n = times.size
    if n == 0:
        return 0.0, np.zeros(0)
    exc = _hawkes_excitations(target, times)
    lam = target.mu + target.alpha * exc
    mu, al, be = target.mu, target.alpha, target.beta
    t_n = times[-1]
    ll = hawkes_loglik(target, times, t0)
    grad = np.zeros(n)
    for k in range(n):
        # own intensity decays as t_k moves right
        grad[k] -= be * (lam[k] - mu) / lam[k]
        # later intensities gain excitation as t_k moves right
        later = times[k + 1 :]
        if later.size:
            grad[k] += float(
                np.sum(al * be * np.exp(-be * (later - times[k])) / lam[k + 1 :])
            )
        if k < n - 1:
            grad[k] += al * np.exp(-be * (t_n - times[k]))
        else:
            # the j = n compensator term is identically zero; only j < n move
            grad[k] -= mu + al * exc[-1]
    return ll, grad


@dataclass
class KlGradResult:
    kl: float
    grad: np.ndarray
    per_sample_kl: np.ndarray
    per_sample_grad: np.ndarray  # (batch, n_params)
    dthresholds: list | None = None


def _pathwise_sample_grad(model, params, target, record: SampleRecord, cfg):
    """Gradient of log p_model - log p_target through one sampled sequence.

    The thresholds are frozen noise: with them fixed, every event time is a
    differentiable function of the parameters through the event solves.
    Also returns the per-event objective sensitivity to the thresholds
    (used when thresholds are learnable).
    """
    d = model.latent_dim
    events = record.events
    n = len(events)
    times = record.times
    ll_target, dll_dt = hawkes_loglik_time_grad(target, times, record.t0)
    lams = np.asarray([e.lam for e in events])
    obj = float(np.sum(np.log(lams)) - np.sum(record.thresholds)) - ll_target

    grad = np.zeros(model.n_params)
    ds = [0.0] * n
    a_lat = np.zeros(d)
    s_t = 0.0
    nfe = 0
    for i in range(n - 1, -1, -1):
        ev = events[i]
        jt, jz, dp_jump = model.jump.vjp(
            ev.t, ev.latent_pre, model.p_jump(params), a_lat
        )
        grad[model.sl_jump] += dp_jump
        _, dlat_head, dp_head = model.head.vjp(
            ev.t, ev.latent_pre, model.p_head(params), [1.0 / ev.lam]
        )
        grad[model.sl_head] += dp_head
        dL_dt = s_t + jt - dll_dt[i]
        dL_dz = np.concatenate([jz + dlat_head, [0.0]])
        v, scale = boundary_cotangent(ev.outcome, dL_dt, dL_dz)
        # d(objective)/ds_i: through the event time, plus the -sum(s) term
        ds[i] = float(scale * ev.outcome.g_params[0]) - 1.0
        t_start = events[i - 1].t if i else record.t0
        z_start, a_start, pbar, seg_nfe = backward_segment(
            model.augmented, params, ev.outcome.z_star, ev.t, t_start, v, cfg,
            z_start_ref=np.concatenate(
                [events[i - 1].latent_post if i else model.latent0, [0.0]]
            ),
        )
        nfe += seg_nfe
        grad += pbar
        a_lat = a_start[:d]
        s_t = -float(
            a_start @ model.augmented.value(t_start, z_start, params)
        )
        nfe += 1
    return obj, grad, ds, nfe


def reverse_kl_grad_reparam(
    model, params, target: HawkesTarget, batch: int, rng, cfg=None,
    n_events: int = 5, root_tol: float = 1e-10,
) -> KlGradResult:
    """Monte Carlo reverse KL and its pathwise gradient.

    Samples fixed-length sequences with retained thresholds; the gradient
    flows through every sampled event time via the event-solve backward
    pass and through the model's own log likelihood.
    """
    if batch < 1:
        raise DomainError("batch must be >= 1")
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    kls = np.zeros(batch)
    grads = np.zeros((batch, model.n_params))
    dthresholds = []
    for m in range(batch):
        rec = sample_sequence(
            model, params, 0.0, n_events=n_events, rng=rng, cfg=cfg, root_tol=root_tol
        )
        obj, g, ds, _ = _pathwise_sample_grad(model, params, target, rec, cfg)
        kls[m] = obj
        grads[m] = g
        dthresholds.append(ds)
    return KlGradResult(float(kls.mean()), grads.mean(axis=0), kls, grads, dthresholds)


def reverse_kl_grad_reinforce(
    model, params, target: HawkesTarget, batch: int, rng, cfg=None,
    n_events: int = 5, baseline="batch-mean",
) -> KlGradResult:
    """Score-function estimator of the same objective.

    Per sample: (objective - baseline) * grad log p_model at the sampled
    times, plus the direct entropy term grad log p_model (zero-mean), which
    folds into a +1 on the centered weight. No event-time gradients are
    used, only the fixed-time likelihood adjoint.
    """
    if batch < 1:
        raise DomainError("batch must be >= 1")
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    kls = np.zeros(batch)
    scores = np.zeros((batch, model.n_params))
    for m in range(batch):
        rec = sample_sequence(model, params, 0.0, n_events=n_events, rng=rng, cfg=cfg)
        times = rec.times
        ll_model, score = log_likelihood_grad(model, params, times, rec.t0, cfg)
        kls[m] = ll_model - hawkes_loglik(target, times, rec.t0)
        scores[m] = score
    b = float(kls.mean()) if baseline == "batch-mean" else float(baseline)
    grads = (kls - b + 1.0)[:, None] * scores
    return KlGradResult(float(kls.mean()), grads.mean(axis=0), kls, grads)


def write_sequence_csv(path, times, thresholds=None) -> None:
    """Event sequence as CSV rows i,t_i,s_i."""
    times = np.asarray(times, dtype=np.float64).ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "t_i", "s_i"])
        for i, t in enumerate(times, start=1):
            s = "" if thresholds is None else repr(float(thresholds[i - 1]))
            writer.writerow([i, repr(float(t)), s])
