"""Initial-value ODE solvers with dense output.

Two methods: an adaptive Dormand-Prince 5(4) pair (dopri5) with the standard
4th-order interpolant, and a fixed-step classical RK4 with cubic Hermite
interpolation. Both integrate forward or backward in time; backward solves
are required by the adjoint pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

from .errors import DivergenceError, DomainError, InvalidSpecError, StepLimitError

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# b - b_hat: weights of the embedded 4th-order error estimate
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# dense-output weights (Hairer's contd5 coefficients)
_D = (
    -12715105075 / 11282082432,
    0.0,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
)

_PI_BETA = 0.04
_PI_EXPO = 0.2 - 0.75 * _PI_BETA
_FAC_MIN, _FAC_MAX = 0.2, 5.0


@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri5"
    rtol: float = 1e-8
    atol: float = 1e-8
    first_step: float | None = None
    max_steps: int = 100_000
    safety: float = 0.9
    max_step: float = np.inf

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise InvalidSpecError(f"unknown method {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidSpecError("rtol and atol must be > 0")
        if self.max_steps < 1:
            raise InvalidSpecError("max_steps must be >= 1")
        if not 0 < self.safety < 1:
            raise InvalidSpecError("safety must lie in (0, 1)")
        if self.first_step is not None and not self.first_step > 0:
            raise InvalidSpecError("first_step must be > 0")
        if not self.max_step > 0:
            raise InvalidSpecError("max_step must be > 0")


@dataclass
class _Step:
    """One accepted step and its interpolant payload."""

    ta: float
    tb: float
    ya: np.ndarray
    yb: np.ndarray
    kind: str  # "dopri" or "hermite"
    dense: tuple

    def interpolate(self, t: float) -> np.ndarray:
        h = self.tb - self.ta
        theta = 0.0 if h == 0 else (t - self.ta) / h
        if self.kind == "dopri":
            r1, r2, r3, r4, r5 = self.dense
            t1 = 1.0 - theta
            return r1 + theta * (r2 + t1 * (r3 + theta * (r4 + t1 * r5)))
        fa, fb = self.dense
        th2 = theta * theta
        th3 = th2 * theta
        return (
            (2 * th3 - 3 * th2 + 1) * self.ya
            + (th3 - 2 * th2 + theta) * h * fa
            + (-2 * th3 + 3 * th2) * self.yb
            + (th3 - th2) * h * fb
        )


def _rms(x):
    return sqrt(float(np.mean(x * x)))


class Solution:
    """A solved segment with per-step dense output.

    The mesh is strictly monotone in the integration direction; nfe counts
    every evaluation of the right-hand side, including the probe used by
    automatic initial-step selection (exactly one extra when enabled).
    """

    def __init__(self, method, t0, t1, y0, y1, steps, nfe, n_accepted, n_rejected):
        self.method = method
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.y0 = np.asarray(y0, dtype=np.float64)
        self.y1 = np.asarray(y1, dtype=np.float64)
        self.steps = steps
        self.nfe = int(nfe)
        self.n_accepted = int(n_accepted)
        self.n_rejected = int(n_rejected)
        self.direction = 1.0 if t1 >= t0 else -1.0
        # mesh node i is the start of step i; last node is the domain end
        self.mesh = np.asarray([s.ta for s in steps] + [t1], dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.y0.size

    def dense_eval(self, t: float) -> np.ndarray:
        t = float(t)
        lo, hi = (self.t0, self.t1) if self.direction > 0 else (self.t1, self.t0)
        slack = 1e-12 * (1.0 + abs(hi - lo))
        if t < lo - slack or t > hi + slack:
            raise DomainError(f"t={t} outside solution domain [{lo}, {hi}]")
        if not self.steps:
            return self.y0.copy()
        if t == self.t1:
            return self.y1.copy()
        key = self.direction * t
        nodes = self.direction * self.mesh[1:-1]
        idx = int(np.searchsorted(nodes, key, side="right"))
        idx = min(idx, len(self.steps) - 1)
        return self.steps[idx].interpolate(t)

    __call__ = dense_eval

    def truncated(self, t_star: float, y_star: np.ndarray) -> "Solution":
        """Copy of this solution with its domain cut to [t0, t_star]."""
        keep = [s for s in self.steps if self.direction * s.ta < self.direction * t_star]
        return Solution(
            self.method, self.t0, t_star, self.y0, y_star, keep,
            self.nfe, self.n_accepted, self.n_rejected,
        )


def dense_eval(sol: Solution, t: float) -> np.ndarray:
    """Continuous-time evaluation of a solved segment."""
    return sol.dense_eval(t)


class _Dopri5Stepper:
    def __init__(self, fn, y0, t0, t1, cfg: SolverConfig):
        self.fn = fn
        self.t = float(t0)
        self.t1 = float(t1)
        self.y = np.asarray(y0, dtype=np.float64).copy()
        self.cfg = cfg
        self.dir = 1.0 if t1 >= t0 else -1.0
        self.nfe = 0
        self.n_accepted = 0
        self.n_rejected = 0
        self.exhausted = False
        self.done = self.t == self.t1
        self._facold = 1e-4
        self._k1 = self._eval(self.t, self.y)
        self._h = self._initial_step()

    def _eval(self, t, y):
        self.nfe += 1
        f = np.asarray(self.fn(t, y), dtype=np.float64)
        return f

    def _initial_step(self):
        cfg = self.cfg
        span = abs(self.t1 - self.t)
        cap = min(span, cfg.max_step)
        if cfg.first_step is not None:
            return min(cfg.first_step, cap)
        # Hairer-Norsett-Wanner heuristic; costs one probe evaluation.
        sc = cfg.atol + cfg.rtol * np.abs(self.y)
        d0 = _rms(self.y / sc)
        d1 = _rms(self._k1 / sc)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, cap)
        y1 = self.y + h0 * self.dir * self._k1
        f1 = self._eval(self.t + h0 * self.dir, y1)
        d2 = _rms((f1 - self._k1) / sc) / h0 if h0 > 0 else 0.0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        return min(100 * h0, h1, cap)

    def advance(self):
        """Take one accepted step; returns a _Step, or None when finished."""
        if self.done or self.exhausted:
            return None
        cfg = self.cfg
        k = [None] * 7
        while True:
            if self.n_accepted + self.n_rejected >= cfg.max_steps:
                self.exhausted = True
                return None
            h = min(self._h, abs(self.t1 - self.t), cfg.max_step)
            h = max(h, 1e-14 * max(1.0, abs(self.t)))
            hs = h * self.dir
            k[0] = self._k1
            for i in range(1, 6):
                yi = self.y + hs * sum(a * k[j] for j, a in enumerate(_A[i]) if a)
                k[i] = self._eval(self.t + _C[i] * hs, yi)
            ynew = self.y + hs * sum(b * ki for b, ki in zip(_B[:6], k[:6]) if b)
            # FSAL: the 7th stage sits at (t+h, ynew) and seeds the next step
            k[6] = self._eval(self.t + hs, ynew)
            if not np.all(np.isfinite(ynew)):
                raise DivergenceError(f"nonfinite state at t={self.t + hs}")
            err_vec = hs * sum(e * ki for e, ki in zip(_E, k) if e)
            sc = cfg.atol + cfg.rtol * np.maximum(np.abs(self.y), np.abs(ynew))
            err = _rms(err_vec / sc)

            if err <= 1.0:
                factor = (
                    _FAC_MAX
                    if err == 0.0
                    else min(
                        _FAC_MAX,
                        max(_FAC_MIN, cfg.safety * self._facold**_PI_BETA * err**-_PI_EXPO),
                    )
                )
                self._facold = max(err, 1e-4)
                ydiff = ynew - self.y
                bspl = hs * k[0] - ydiff
                dense = (
                    self.y.copy(),
                    ydiff,
                    bspl,
                    ydiff - hs * k[6] - bspl,
                    hs * sum(d * ki for d, ki in zip(_D, k) if d),
                )
                step = _Step(self.t, self.t + hs, self.y.copy(), ynew, "dopri", dense)
                self.t += hs
                self.y = ynew
                self._k1 = k[6]
                self._h = h * factor
                self.n_accepted += 1
                if abs(self.t1 - self.t) <= 1e-14 * max(1.0, abs(self.t1)):
                    self.t = self.t1
                    self.done = True
                return step
            self.n_rejected += 1
            factor = max(_FAC_MIN, min(1.0, cfg.safety * err**-_PI_EXPO))
            self._h = h * factor


class _Rk4Stepper:
    def __init__(self, fn, y0, t0, t1, cfg: SolverConfig):
        self.fn = fn
        self.t = float(t0)
        self.t1 = float(t1)
        self.y = np.asarray(y0, dtype=np.float64).copy()
        self.cfg = cfg
        self.dir = 1.0 if t1 >= t0 else -1.0
        span = abs(t1 - t0)
        base = cfg.first_step if cfg.first_step is not None else span / 100
        base = min(base, cfg.max_step)
        self.n_steps = max(1, ceil(span / base)) if span > 0 else 0
        self._h = (t1 - t0) / self.n_steps if self.n_steps else 0.0
        self._i = 0
        self.nfe = 0
        self.n_accepted = 0
        self.n_rejected = 0
        self.exhausted = False
        self.done = self.n_steps == 0
        self._fa = self._eval(self.t, self.y)

    def _eval(self, t, y):
        self.nfe += 1
        return np.asarray(self.fn(t, y), dtype=np.float64)

    def advance(self):
        if self.done or self.exhausted:
            return None
        if self._i >= self.cfg.max_steps:
            self.exhausted = True
            return None
        h = self._h
        t, y = self.t, self.y
        k1 = self._fa
        k2 = self._eval(t + h / 2, y + (h / 2) * k1)
        k3 = self._eval(t + h / 2, y + (h / 2) * k2)
        k4 = self._eval(t + h, y + h * k3)
        ynew = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(ynew)):
            raise DivergenceError(f"nonfinite state at t={t + h}")
        tb = self.t + h
        self._i += 1
        if self._i == self.n_steps:
            tb = self.t1
            self.done = True
        fb = self._eval(tb, ynew)
        step = _Step(t, tb, y.copy(), ynew, "hermite", (k1, fb))
        self.t = tb
        self.y = ynew
        self._fa = fb
        self.n_accepted += 1
        return step


def make_stepper(fn, y0, t0, t1, cfg: SolverConfig):
    cls = _Dopri5Stepper if cfg.method == "dopri5" else _Rk4Stepper
    return cls(fn, y0, t0, t1, cfg)


def ode_solve(f, z0, t0, t1, cfg: SolverConfig | None = None, params=None) -> Solution:
    """Integrate dz/dt = f(t, z, params) from t0 to t1 (either direction).

    Returns a Solution whose dense output covers [t0, t1]. Raises
    StepLimitError (carrying the partial solution) if the step budget runs
    out and DivergenceError if the state becomes nonfinite.
    """
    cfg = cfg or SolverConfig()
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    fn = (lambda t, y: f.value(t, y, params)) if hasattr(f, "value") else f
    if t1 == t0:
        return Solution(cfg.method, t0, t1, z0, z0.copy(), [], 0, 0, 0)
    stepper = make_stepper(fn, z0, t0, t1, cfg)
    steps = []
    while True:
        step = stepper.advance()
        if step is None:
            break
        steps.append(step)
    sol = Solution(
        cfg.method, t0, stepper.t, z0, stepper.y, steps,
        stepper.nfe, stepper.n_accepted, stepper.n_rejected,
    )
    if stepper.exhausted:
        raise StepLimitError(
            f"step budget {cfg.max_steps} exhausted at t={stepper.t}", partial=sol
        )
    return sol


def write_trajectory_csv(sol: Solution, times, path) -> None:
    """Dump dense-output states at the requested times: t,z_0,...,z_{d-1}."""
    times = np.asarray(times, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"z_{i}" for i in range(sol.dim)])
        for t in times:
            z = sol.dense_eval(t)
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in z])
