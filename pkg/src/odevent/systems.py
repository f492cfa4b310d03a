"""Concrete dynamics, event, and update functions used by the experiments."""

from __future__ import annotations

import numpy as np

from .errors import InvalidSpecError, ShapeError
from .functions import DiffFn, Mlp
from .params import ParamVec, pack


class ScalarLinearDrift(DiffFn):
    """dz/dt = theta * z for scalar z; the classic closed-form test system."""

    in_dim = 1
    out_dim = 1
    n_params = 1

    def value(self, t, z, p):
        z = self._check_z(z)
        p = self._check_p(p)
        return p[0] * z

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        p = self._check_p(p)
        v = self._check_v(v)
        return 0.0, p[0] * v, np.asarray([v[0] * z[0]])


class AffineDrift(DiffFn):
    """dz/dt = A z + b with fixed coefficients (no learnable parameters)."""

    n_params = 0

    def __init__(self, a_mat, b_vec):
        self.a_mat = np.asarray(a_mat, dtype=np.float64)
        self.b_vec = np.asarray(b_vec, dtype=np.float64)
        self.in_dim = self.out_dim = self.b_vec.size
        if self.a_mat.shape != (self.in_dim, self.in_dim):
            raise ShapeError("A must be square and match b")

    def value(self, t, z, p):
        return self.a_mat @ self._check_z(z) + self.b_vec

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        return 0.0, self.a_mat.T @ v, np.zeros(0)


class BouncingBallDrift(DiffFn):
    """State [x, v] under constant acceleration: d[x, v]/dt = [v, a].

    The acceleration is the single parameter so event-time sensitivities to
    gravity can be checked against closed forms.
    """

    in_dim = 2
    out_dim = 2
    n_params = 1

    def __init__(self, accel: float = -1.0):
        self.default_accel = float(accel)

    def init_params(self) -> ParamVec:
        return pack([("a", np.asarray([self.default_accel]))])

    def value(self, t, z, p):
        z = self._check_z(z)
        p = self._check_p(p)
        return np.asarray([z[1], p[0]])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        return 0.0, np.asarray([0.0, v[0]]), np.asarray([v[1]])


class MomentumAbsorbReset(DiffFn):
    """Bounce update [x, v] -> [x, -(1 - alpha) v]; alpha is the parameter."""

    in_dim = 2
    out_dim = 2
    n_params = 1

    def __init__(self, alpha: float = 0.0):
        self.default_alpha = float(alpha)

    def init_params(self) -> ParamVec:
        return pack([("alpha", np.asarray([self.default_alpha]))])

    def value(self, t, z, p):
        z = self._check_z(z)
        p = self._check_p(p)
        return np.asarray([z[0], -(1.0 - p[0]) * z[1]])

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        p = self._check_p(p)
        v = self._check_v(v)
        dz = np.asarray([v[0], -(1.0 - p[0]) * v[1]])
        return 0.0, dz, np.asarray([v[1] * z[1]])


class KinematicDrift(DiffFn):
    """Position-velocity structure: d[x, v]/dt = [v, accel_net(x, v)].

    Used by the physics baseline without events; only the acceleration is
    learned.
    """

    def __init__(self, accel: DiffFn):
        if accel.out_dim * 2 != accel.in_dim:
            raise InvalidSpecError("accel net must map [x, v] -> dv")
        self.accel = accel
        self.in_dim = accel.in_dim
        self.out_dim = accel.in_dim
        self.n_params = accel.n_params
        self._half = accel.out_dim

    def init_params(self) -> ParamVec:
        return self.accel.init_params()

    def value(self, t, z, p):
        z = self._check_z(z)
        dv = self.accel.value(t, z, p)
        return np.concatenate([z[self._half :], dv])

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        v = self._check_v(v)
        k = self._half
        dt, dz_a, dp = self.accel.vjp(t, z, p, v[k:])
        dz = dz_a.copy()
        dz[k:] += v[:k]
        return dt, dz, dp


class StateIndexEvent(DiffFn):
    """g(t, z) = z[index] - level; no parameters (fixed guard surface)."""

    n_params = 0
    out_dim = 1

    def __init__(self, index: int, level: float, dim: int, sign: float = 1.0):
        self.index = int(index)
        self.level = float(level)
        self.sign = float(sign)
        self.in_dim = int(dim)

    def value(self, t, z, p):
        z = self._check_z(z)
        return np.asarray([self.sign * (z[self.index] - self.level)])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        dz = np.zeros(self.in_dim)
        dz[self.index] = self.sign * v[0]
        return 0.0, dz, np.zeros(0)


class ClockEvent(DiffFn):
    """g(t, z) = t - deadline: a state-independent explicit termination time."""

    n_params = 0
    out_dim = 1

    def __init__(self, deadline: float, dim: int):
        self.deadline = float(deadline)
        self.in_dim = int(dim)

    def value(self, t, z, p):
        return np.asarray([t - self.deadline])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        return float(v[0]), np.zeros(self.in_dim), np.zeros(0)


class ThresholdEvent(DiffFn):
    """g(t, z) = s - z[slot]: fires when an accumulator reaches threshold s.

    The threshold is the single parameter, which makes event times
    differentiable with respect to it (learnable thresholds).
    """

    n_params = 1
    out_dim = 1

    def __init__(self, dim: int, slot: int = -1):
        self.in_dim = int(dim)
        self.slot = slot if slot >= 0 else dim + slot

    def init_params(self) -> ParamVec:
        return pack([("s", np.asarray([1.0]))])

    def value(self, t, z, p):
        z = self._check_z(z)
        p = self._check_p(p)
        return np.asarray([p[0] - z[self.slot]])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        dz = np.zeros(self.in_dim)
        dz[self.slot] = -v[0]
        return 0.0, dz, np.asarray([v[0]])


# Fan-track switching system: a rotation region feeding two constant flows.
SLDS_ROTATION = np.asarray([[0.0, -1.0], [1.0, 0.0]])  # row-convention x @ A
SLDS_OFFSET_1 = np.asarray([0.0, 2.0])
SLDS_FLOW_2 = np.asarray([-1.0, -1.0])
SLDS_FLOW_3 = np.asarray([1.0, -1.0])


def slds_flows():
    """The three affine flows (A, b) of the fan-track ground truth."""
    zero = np.zeros((2, 2))
    return [
        (SLDS_ROTATION, SLDS_OFFSET_1),
        (zero, SLDS_FLOW_2),
        (zero, SLDS_FLOW_3),
    ]


def slds_region(z) -> int:
    """Total region selector: 0 if x1 >= 2, else 1 if x0 >= 0, else 2."""
    if z[1] >= 2.0:
        return 0
    return 1 if z[0] >= 0.0 else 2


def slds_true_drift(z) -> np.ndarray:
    """Piecewise ground-truth velocity at a position."""
    a_mat, b_vec = slds_flows()[slds_region(z)]
    return a_mat @ np.asarray(z, dtype=np.float64) + b_vec


class SldsMixtureDrift(DiffFn):
    """Switching mixture: state [x0, x1, w_1..w_M], dx/dt = sum_m w_m (A_m x + b_m).

    The switch weights are constant between events (dw/dt = 0); the affine
    components are fixed to the ground-truth flows.
    """

    n_params = 0

    def __init__(self, flows=None):
        self.flows = flows if flows is not None else slds_flows()
        self.n_modes = len(self.flows)
        self.in_dim = self.out_dim = 2 + self.n_modes

    def value(self, t, z, p):
        z = self._check_z(z)
        x, w = z[:2], z[2:]
        dx = np.zeros(2)
        for wm, (a_mat, b_vec) in zip(w, self.flows):
            dx += wm * (a_mat @ x + b_vec)
        return np.concatenate([dx, np.zeros(self.n_modes)])

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        v = self._check_v(v)
        x, w = z[:2], z[2:]
        vx = v[:2]
        dx = np.zeros(2)
        dw = np.zeros(self.n_modes)
        for m, (a_mat, b_vec) in enumerate(self.flows):
            dx += w[m] * (a_mat.T @ vx)
            dw[m] = float(vx @ (a_mat @ x + b_vec))
        return 0.0, np.concatenate([dx, dw]), np.zeros(0)


class SwitchUpdate(DiffFn):
    """Event update for the switching system: positions pass through, the
    switch weights are recomputed by a network of the position (softmax out).
    """

    def __init__(self, net: Mlp, n_modes: int, full_state_input: bool = False):
        self.net = net
        self.n_modes = int(n_modes)
        self.full_state_input = bool(full_state_input)
        self.in_dim = self.out_dim = 2 + self.n_modes
        self.n_params = net.n_params
        expected = self.in_dim if full_state_input else 2
        if net.in_dim != expected or net.out_dim != n_modes:
            raise InvalidSpecError("switch net dims do not match state layout")

    def init_params(self) -> ParamVec:
        return self.net.init_params()

    def _net_input(self, z):
        return z if self.full_state_input else z[:2]

    def value(self, t, z, p):
        z = self._check_z(z)
        w = self.net.value(t, self._net_input(z), p)
        return np.concatenate([z[:2], w])

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        v = self._check_v(v)
        dt, dz_net, dp = self.net.vjp(t, self._net_input(z), p, v[2:])
        dz = np.zeros(self.in_dim)
        dz[:2] = v[:2]
        if self.full_state_input:
            dz += dz_net
        else:
            dz[:2] += dz_net
        return dt, dz, dp


class IdentityMap(DiffFn):
    """The identity update: state passes through unchanged."""

    n_params = 0

    def __init__(self, dim: int):
        self.in_dim = self.out_dim = int(dim)

    def value(self, t, z, p):
        return self._check_z(z).copy()

    def vjp(self, t, z, p, v):
        return 0.0, self._check_v(v).copy(), np.zeros(0)


class ConstantFn(DiffFn):
    """A constant output regardless of state; handy for never-firing events."""

    n_params = 0

    def __init__(self, values, dim: int):
        self.values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        self.in_dim = int(dim)
        self.out_dim = self.values.size

    def value(self, t, z, p):
        return self.values.copy()

    def vjp(self, t, z, p, v):
        self._check_v(v)
        return 0.0, np.zeros(self.in_dim), np.zeros(0)
