"""Event-terminated ODE solving and its exact backward pass.

Forward: integrate with dense output, watch the scalar event function g at
accepted-step endpoints, and refine the first sign change to a root of
t -> g(t, z(t)) inside the bracketing step. Backward: the root is an
implicit function of the solve inputs; its derivative needs only g's
gradients at the root and one backward ODE solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import isfinite

import numpy as np

from .adjoint import ode_solve_vjp
from .errors import (
    BracketError,
    GrazingEventError,
    ImmediateEventError,
    RootRefineError,
)
from .solver import Solution, SolverConfig, make_stepper

EVENT_FOUND = "event-found"
DEADLINE = "deadline-reached"
NO_SIGN_CHANGE = "no-sign-change"

_EPS = float(np.finfo(np.float64).eps)


def brent(fun, a, b, fa=None, fb=None, xtol=1e-12, max_iter=200):
    """Root of fun on a sign-change bracket [a, b] by Brent's method.

    Converges to a bracket narrower than xtol. Returns (root, evaluations).
    """
    fa = fun(a) if fa is None else fa
    fb = fun(b) if fb is None else fb
    n_eval = 0 if fa is not None and fb is not None else 0
    if fa == 0.0:
        return a, 0
    if fb == 0.0:
        return b, 0
    if (fa > 0) == (fb > 0):
        raise BracketError(f"no sign change: f({a})={fa}, f({b})={fb}")

    c, fc = a, fa
    d = e = b - a
    n_eval = 0
    for _ in range(max_iter):
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2.0 * _EPS * abs(b) + 0.5 * xtol
        m = 0.5 * (c - b)
        if abs(m) <= tol or fb == 0.0:
            return b, n_eval
        if abs(e) < tol or abs(fa) <= abs(fb):
            d = e = m
        else:
            s = fb / fa
            if a == c:
                p = 2.0 * m * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            else:
                p = -p
            s, e = e, d
            if 2.0 * p < 3.0 * m * q - abs(tol * q) and p < abs(0.5 * s * q):
                d = p / q
            else:
                d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol else (tol if m > 0 else -tol)
        fb = fun(b)
        n_eval += 1
        if (fb > 0) == (fc > 0):
            c, fc = a, fa
            d = e = b - a
    raise RootRefineError(f"no convergence in {max_iter} iterations")


def root_refine(curve, ta, tb, tol):
    """First root of a scalar curve inside a sign-change bracket [ta, tb]."""
    root, _ = brent(curve, ta, tb, xtol=tol)
    return root


@dataclass
class EventSpec:
    """An event function with its parameters and detection policy.

    direction: 'any', 'rising', or 'falling', judged by the sign of the
    total time derivative of g along the trajectory at the root.
    start_policy: 'error' raises if g is zero at the initial instant;
    'ignore' skips any root within ``window`` of the start (defaults to
    root_tol), which prevents re-triggering when an update lands exactly on
    the event surface.
    """

    fn: object
    params: np.ndarray | None = None
    direction: str = "any"
    root_tol: float = 1e-9
    deadline: float = np.inf
    start_policy: str = "ignore"
    window: float | None = None

    def __post_init__(self):
        if self.direction not in ("any", "rising", "falling"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if not self.root_tol > 0:
            raise ValueError("root_tol must be > 0")
        if self.start_policy not in ("error", "ignore"):
            raise ValueError(f"unknown start policy {self.start_policy!r}")
        if self.window is not None and self.window < 0:
            raise ValueError("window must be >= 0")
        if self.params is not None:
            self.params = np.asarray(self.params, dtype=np.float64).ravel()

    @property
    def effective_window(self) -> float:
        return self.root_tol if self.window is None else self.window

    def with_deadline(self, deadline: float) -> "EventSpec":
        return replace(self, deadline=deadline)


@dataclass
class EventOutcome:
    """Result of an event-terminated solve plus the backward-pass cache."""

    t_star: float
    z_star: np.ndarray
    status: str
    f_star: np.ndarray | None
    g_t: float | None
    g_z: np.ndarray | None
    g_params: np.ndarray | None
    nfe_f: int
    nfe_g: int
    solution: Solution
    t0: float = field(default=0.0)
    z0: np.ndarray | None = field(default=None)

    @property
    def found(self) -> bool:
        return self.status == EVENT_FOUND


def _denominator(g_t, g_z, f_star):
    """Total time derivative of g along the flow at the root."""
    return float(g_t) + float(np.dot(g_z, f_star))


def _grazing_threshold(g_z, f_star):
    return 1e-8 * (1.0 + float(np.linalg.norm(g_z)) * float(np.linalg.norm(f_star)))


def ode_solve_event(f, z0, t0, params, spec: EventSpec, cfg: SolverConfig | None = None) -> EventOutcome:
    """Integrate until the first admissible root of the event function.

    Samples g at every accepted-step endpoint; a sign change is refined on
    the step's dense output with Brent's method to spec.root_tol. Returns a
    deadline-reached outcome with the final state if no admissible root
    appears before spec.deadline, and a no-sign-change outcome if the step
    budget runs out first.
    """
    cfg = cfg or SolverConfig()
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    t0 = float(t0)
    phi = spec.params
    g = spec.fn
    nfe_g = 0

    def g_at(t, z):
        nonlocal nfe_g
        nfe_g += 1
        return float(g.value(t, z, phi)[0])

    g0 = g_at(t0, z0)
    window = spec.effective_window
    if g0 == 0.0 and spec.start_policy == "error":
        raise ImmediateEventError(f"event function is zero at t0={t0}")
    if spec.start_policy == "ignore":
        scan_from = t0 + window
        ref = None if (g0 == 0.0 or window > 0.0) else (t0, g0)
    else:
        scan_from = t0
        ref = (t0, g0)

    fn = lambda t, y: f.value(t, y, params)
    deadline = float(spec.deadline)
    if not isfinite(deadline):
        # integrate in open-ended chunks; bounded overall by cfg.max_steps
        deadline_t = t0 + 1e18
    else:
        deadline_t = deadline
    stepper = make_stepper(fn, z0, t0, deadline_t, cfg)
    steps = []

    def build_solution(t_end, y_end, extra_nfe=0):
        return Solution(
            cfg.method, t0, t_end, z0, y_end, list(steps),
            stepper.nfe + extra_nfe, stepper.n_accepted, stepper.n_rejected,
        )

    def refine_in(step, lo, g_lo, hi, g_hi):
        curve = lambda t: g_at(t, step.interpolate(t))
        root, _ = brent(curve, lo, hi, fa=g_lo, fb=g_hi, xtol=spec.root_tol)
        return root

    def finish_event(step, t_root):
        z_star = step.interpolate(t_root) if t_root != step.tb else step.yb.copy()
        f_star = np.asarray(f.value(t_root, z_star, params), dtype=np.float64)
        g_t, g_z, g_p = g.vjp(t_root, z_star, phi, np.asarray([1.0]))
        sol = build_solution(t_root, z_star, extra_nfe=1).truncated(t_root, z_star)
        return EventOutcome(
            t_root, z_star, EVENT_FOUND, f_star, g_t, g_z, g_p,
            sol.nfe, nfe_g, sol, t0, z0.copy(),
        ), _denominator(g_t, g_z, f_star)

    while True:
        step = stepper.advance()
        if step is None:
            if stepper.exhausted:
                y = stepper.y.copy()
                return EventOutcome(
                    stepper.t, y, NO_SIGN_CHANGE, None, None, None, None,
                    stepper.nfe, nfe_g, build_solution(stepper.t, y), t0, z0.copy(),
                )
            zT = stepper.y.copy()
            fT = np.asarray(f.value(deadline_t, zT, params), dtype=np.float64)
            return EventOutcome(
                deadline_t, zT, DEADLINE, fT, None, None, None,
                stepper.nfe + 1, nfe_g, build_solution(deadline_t, zT), t0, z0.copy(),
            )
        steps.append(step)
        if step.tb <= scan_from:
            continue
        if ref is None:
            t_ref = max(scan_from, step.ta)
            g_ref = g_at(t_ref, step.interpolate(t_ref))
            tries = 0
            while g_ref == 0.0 and tries < 8:
                t_ref = min(t_ref + max(window, spec.root_tol), step.tb)
                g_ref = g_at(t_ref, step.interpolate(t_ref))
                tries += 1
            if g_ref == 0.0:
                raise ImmediateEventError(
                    f"event function identically zero after t0={t0}"
                )
            ref = (t_ref, g_ref)

        lo, g_lo = ref
        if lo < step.ta:
            lo, g_lo = step.ta, g_lo  # endpoint value carried from previous step
        while True:
            g_hi = g_at(step.tb, step.yb)
            if not ((g_lo > 0) == (g_hi > 0)) or g_hi == 0.0:
                t_root = refine_in(step, lo, g_lo, step.tb, g_hi)
                outcome, denom = finish_event(step, t_root)
                if (
                    spec.direction == "any"
                    or (spec.direction == "rising" and denom > 0)
                    or (spec.direction == "falling" and denom < 0)
                ):
                    return outcome
                # wrong direction: resume scanning just past this root
                lo = min(t_root + max(spec.root_tol, 4 * _EPS * abs(t_root)), step.tb)
                g_lo = g_at(lo, step.interpolate(lo))
                if lo >= step.tb:
                    ref = (step.tb, g_lo)
                    break
                continue
            ref = (step.tb, g_hi)
            break


@dataclass
class EventGrad:
    dz0: np.ndarray
    dparams: np.ndarray
    dphi: np.ndarray
    dt0: float
    nfe: int


def boundary_cotangent(outcome: EventOutcome, dL_dtstar, dL_dzstar):
    """Reduce loss cotangents at (t*, z*) to a single state cotangent.

    Returns (v, scale) where v is the cotangent to propagate through a plain
    backward solve from t* and scale = -(dL/dt*_total)/D multiplies g's
    parameter gradient to give dL/dphi.
    """
    dL_dzstar = np.asarray(dL_dzstar, dtype=np.float64).ravel()
    denom = _denominator(outcome.g_t, outcome.g_z, outcome.f_star)
    if abs(denom) < _grazing_threshold(outcome.g_z, outcome.f_star):
        raise GrazingEventError(
            f"grazing event at t*={outcome.t_star}: |dg/dt|={abs(denom):.3e}"
        )
    total_dt = float(dL_dtstar) + float(dL_dzstar @ outcome.f_star)
    scale = -total_dt / denom
    v = scale * outcome.g_z + dL_dzstar
    return v, scale


def event_vjp(
    outcome: EventOutcome,
    f,
    params,
    dL_dtstar,
    dL_dzstar,
    cfg: SolverConfig | None = None,
) -> EventGrad:
    """Gradients of L(t*, z*) with respect to the event solve's inputs.

    The event time enters through the implicit-function derivative of the
    root; all quantities besides one backward ODE solve come from the
    cached g-gradients in the outcome.
    """
    if not outcome.found:
        raise ValueError(f"cannot differentiate a {outcome.status} outcome")
    cfg = cfg or SolverConfig()
    v, scale = boundary_cotangent(outcome, dL_dtstar, dL_dzstar)
    dphi = scale * outcome.g_params if outcome.g_params is not None else np.zeros(0)
    res = ode_solve_vjp(
        f, outcome.z_star, outcome.t_star, outcome.t0, params, v, cfg, z0=outcome.z0
    )
    return EventGrad(res.dz0, res.dparams, dphi, res.dt0, res.nfe)
