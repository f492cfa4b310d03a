"""Differentiable functions with hand-derived vector-Jacobian products.

Everything the solvers differentiate through is a DiffFn: a pure function
y = fn(t, z, p) together with a vjp giving (v.dy/dt, v.dy/dz, v.dy/dp) for a
cotangent v. Parameters are flat float64 arrays; ParamVec handles naming
and serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import backends
from .errors import InvalidSpecError, ShapeError
from .params import ParamVec, pack, spec_hash

ACT_CODES = {
    "identity": backends.IDENTITY,
    "tanh": backends.TANH,
    "relu": backends.RELU,
    "sine": backends.SINE,
    "softmax": backends.SOFTMAX,
}

HIDDEN_ACTIVATIONS = ("tanh", "relu", "sine", "identity")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "relu", "sine", "softmax")


class DiffFn:
    """Base class: a differentiable map (t, z, p) -> y.

    Subclasses set in_dim, out_dim, n_params and implement value() and
    vjp(). Instances are immutable after construction and safe to evaluate
    concurrently.
    """

    in_dim: int
    out_dim: int
    n_params: int

    def value(self, t: float, z: np.ndarray, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, t, z, p, v):
        """Return (v.dy/dt, v.dy/dz, v.dy/dp) for cotangent v."""
        raise NotImplementedError

    def init_params(self) -> ParamVec:
        return ParamVec(np.zeros(self.n_params))

    def _check_z(self, z):
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.size != self.in_dim:
            raise ShapeError(f"state has dim {z.size}, expected {self.in_dim}")
        return z

    def _check_v(self, v):
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.size != self.out_dim:
            raise ShapeError(f"cotangent has dim {v.size}, expected {self.out_dim}")
        return v

    def _check_p(self, p):
        if p is None:
            if self.n_params:
                raise ShapeError(f"expected {self.n_params} parameters, got none")
            return np.zeros(0)
        if isinstance(p, ParamVec):
            p = p.values
        p = np.asarray(p, dtype=np.float64).ravel()
        if p.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {p.size}")
        return p


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    widths lists every layer width including input and output; the number
    of parameters is sum((w_i + 1) * w_{i+1}). When time_input is set, the
    last input feature is the time value and the state dim is widths[0]-1.
    init_scale sets the weight standard deviation to scale/sqrt(fan_in);
    final_scale multiplies the last layer's scale (event heads use > 1).
    """

    widths: tuple
    activation: str = "tanh"
    out_activation: str = "identity"
    init_scale: float = 1.0
    final_scale: float = 1.0
    seed: int = 0
    time_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise InvalidSpecError("widths must list at least input and output")
        if any(w < 1 for w in self.widths):
            raise InvalidSpecError("widths must be positive")
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise InvalidSpecError(f"unknown activation {self.activation!r}")
        if self.out_activation not in OUTPUT_ACTIVATIONS:
            raise InvalidSpecError(f"unknown output activation {self.out_activation!r}")
        if not self.init_scale > 0:
            raise InvalidSpecError("scale must be > 0")
        if not self.final_scale > 0:
            raise InvalidSpecError("final_scale must be > 0")
        if self.time_input and self.widths[0] < 2:
            raise InvalidSpecError("time_input needs input width >= 2")

    @property
    def in_dim(self) -> int:
        return self.widths[0] - (1 if self.time_input else 0)

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def param_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def digest(self) -> str:
        return spec_hash(
            {
                "widths": list(self.widths),
                "activation": self.activation,
                "out_activation": self.out_activation,
                "init_scale": self.init_scale,
                "final_scale": self.final_scale,
                "seed": self.seed,
                "time_input": self.time_input,
            }
        )


class Mlp(DiffFn):
    """Fully connected network evaluated by the active kernel backend."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.in_dim = spec.in_dim
        self.out_dim = spec.out_dim
        self.n_params = spec.param_count
        self._widths = np.asarray(spec.widths, dtype=np.int64)
        self._act = ACT_CODES[spec.activation]
        self._out_act = ACT_CODES[spec.out_activation]
        self._time = bool(spec.time_input)

    def init_params(self) -> ParamVec:
        return mlp_init(self.spec)

    def value(self, t, z, p):
        z = self._check_z(z)
        p = self._check_p(p)
        return backends.mlp_forward(
            self._widths, self._act, self._out_act, self._time, p, float(t), z
        )

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        p = self._check_p(p)
        v = self._check_v(v)
        return backends.mlp_vjp(
            self._widths, self._act, self._out_act, self._time, p, float(t), z, v
        )


@lru_cache(maxsize=256)
def _mlp_for(spec: MlpSpec) -> Mlp:
    return Mlp(spec)


def mlp_init(spec: MlpSpec) -> ParamVec:
    """Draw initial parameters: weights N(0, (scale/sqrt(fan_in))^2), biases 0."""
    rng = np.random.default_rng(spec.seed)
    n_layers = len(spec.widths) - 1
    arrays = []
    for layer in range(n_layers):
        n_in, n_out = spec.widths[layer], spec.widths[layer + 1]
        sd = spec.init_scale / np.sqrt(n_in)
        if layer == n_layers - 1:
            sd *= spec.final_scale
        arrays.append((f"W{layer}", rng.normal(0.0, sd, size=(n_out, n_in))))
        arrays.append((f"b{layer}", np.zeros(n_out)))
    return pack(arrays)


def mlp_forward(spec: MlpSpec, p, t, z) -> np.ndarray:
    return _mlp_for(spec).value(t, z, p)


def mlp_vjp(spec: MlpSpec, p, t, z, v):
    """Reverse-mode products; dp is returned as a ParamVec on the spec layout."""
    fn = _mlp_for(spec)
    dt, dz, dp = fn.vjp(t, z, p, v)
    return dt, dz, fn.init_params().with_values(dp)


class TanhProduct(DiffFn):
    """Scalar event head: the product of tanh over another function's outputs.

    g(t, z) = prod_i tanh(head(t, z)_i). The gradient uses the product rule;
    when a factor is within 1e-12 of zero the leave-one-out products are
    formed explicitly instead of dividing by the factor.
    """

    TINY = 1e-12

    def __init__(self, head: DiffFn):
        self.head = head
        self.in_dim = head.in_dim
        self.out_dim = 1
        self.n_params = head.n_params
        if head.out_dim < 1:
            raise InvalidSpecError("head must produce at least one output")

    def init_params(self) -> ParamVec:
        return self.head.init_params()

    def value(self, t, z, p):
        y = self.head.value(t, z, p)
        return np.asarray([np.prod(np.tanh(y))])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        y = self.head.value(t, z, p)
        tau = np.tanh(y)
        if np.all(np.abs(tau) > self.TINY):
            total = np.prod(tau)
            others = total / tau
        else:
            m = tau.size
            others = np.empty(m)
            for i in range(m):
                others[i] = np.prod(np.delete(tau, i))
        dg_dy = (1.0 - tau * tau) * others
        return self.head.vjp(t, z, p, v[0] * dg_dy)


def tanh_product_eventfn(head: DiffFn, p, t, z) -> float:
    """Value of the tanh-product event function over ``head``'s outputs."""
    return float(TanhProduct(head).value(t, z, p)[0])


def tanh_product_eventfn_vjp(head: DiffFn, p, t, z, v):
    return TanhProduct(head).vjp(t, z, p, v)


class SoftplusHead(DiffFn):
    """Positive scalar head: softplus of an inner function's single output.

    Output is softplus(u) + floor, strictly positive for all finite u.
    """

    def __init__(self, inner: DiffFn, floor: float = 1e-12):
        if inner.out_dim != 1:
            raise InvalidSpecError("softplus head needs a scalar inner output")
        self.inner = inner
        self.floor = float(floor)
        self.in_dim = inner.in_dim
        self.out_dim = 1
        self.n_params = inner.n_params

    def init_params(self) -> ParamVec:
        return self.inner.init_params()

    def value(self, t, z, p):
        u = self.inner.value(t, z, p)[0]
        return np.asarray([np.logaddexp(0.0, u) + self.floor])

    def vjp(self, t, z, p, v):
        v = self._check_v(v)
        u = self.inner.value(t, z, p)[0]
        sig = 0.5 * (1.0 + np.tanh(0.5 * u))  # numerically stable sigmoid
        return self.inner.vjp(t, z, p, np.asarray([v[0] * sig]))


class SliceInput(DiffFn):
    """Adapter feeding only selected state components to an inner function."""

    def __init__(self, inner: DiffFn, indices, full_dim: int):
        self.inner = inner
        self.indices = np.asarray(indices, dtype=np.intp)
        if self.indices.size != inner.in_dim:
            raise ShapeError("index count must match inner input dim")
        self.in_dim = int(full_dim)
        self.out_dim = inner.out_dim
        self.n_params = inner.n_params

    def init_params(self) -> ParamVec:
        return self.inner.init_params()

    def value(self, t, z, p):
        z = self._check_z(z)
        return self.inner.value(t, z[self.indices], p)

    def vjp(self, t, z, p, v):
        z = self._check_z(z)
        dt, dz_in, dp = self.inner.vjp(t, z[self.indices], p, v)
        dz = np.zeros(self.in_dim)
        dz[self.indices] = dz_in
        return dt, dz, dp


def fd_check(fn: DiffFn, t, z, p, v=None, step=1e-5, rng=None):
    """Max relative error of fn.vjp against central finite differences.

    Used by the test suite and the gradcheck command; compares every
    component of (dt, dz, dp) for one (possibly random) cotangent.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    p = p.values if isinstance(p, ParamVec) else np.asarray(p, dtype=np.float64)
    if v is None:
        rng = rng or np.random.default_rng(0)
        v = rng.normal(size=fn.out_dim)
    dt, dz, dp = fn.vjp(t, z, p, v)

    def central(f_plus, f_minus):
        return float(v @ (f_plus - f_minus)) / (2 * step)

    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(a), abs(b))

    worst = max(
        worst,
        rel(dt, central(fn.value(t + step, z, p), fn.value(t - step, z, p))),
    )
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        worst = max(worst, rel(dz[i], central(fn.value(t, z + e, p), fn.value(t, z - e, p))))
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = step
        worst = max(worst, rel(dp[i], central(fn.value(t, z, p + e), fn.value(t, z, p - e))))
    return worst
