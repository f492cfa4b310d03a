"""Pure-numpy MLP kernels. Reference implementation for the compiled backend."""

import numpy as np

IDENTITY, TANH, RELU, SINE, SOFTMAX = 0, 1, 2, 3, 4

BACKEND_NAME = "python"


def _activate(a, code):
    if code == IDENTITY:
        return a
    if code == TANH:
        return np.tanh(a)
    if code == RELU:
        return np.maximum(a, 0.0)
    if code == SINE:
        return np.sin(a)
    if code == SOFTMAX:
        e = np.exp(a - a.max())
        return e / e.sum()
    raise ValueError(f"unknown activation code {code}")


def _act_backward(delta, a, h, code):
    # delta is the cotangent on h = act(a); returns cotangent on a.
    if code == IDENTITY:
        return delta
    if code == TANH:
        return delta * (1.0 - h * h)
    if code == RELU:
        return delta * (a > 0.0)
    if code == SINE:
        return delta * np.cos(a)
    if code == SOFTMAX:
        return h * (delta - np.dot(delta, h))
    raise ValueError(f"unknown activation code {code}")


def _input_vec(widths, time_input, t, z):
    h = np.empty(widths[0])
    h[: z.size] = z
    if time_input:
        h[-1] = t
    return h


def mlp_forward(widths, act, out_act, time_input, p, t, z):
    h = _input_vec(widths, time_input, t, z)
    off = 0
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        n_in = widths[layer]
        n_out = widths[layer + 1]
        w = p[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = p[off : off + n_out]
        off += n_out
        a = w @ h + b
        h = _activate(a, act if layer < n_layers - 1 else out_act)
    return h


def mlp_vjp(widths, act, out_act, time_input, p, t, z, v):
    n_layers = len(widths) - 1
    inputs = [_input_vec(widths, time_input, t, z)]
    pres = []
    off = 0
    w_offsets = []
    for layer in range(n_layers):
        n_in = widths[layer]
        n_out = widths[layer + 1]
        w = p[off : off + n_out * n_in].reshape(n_out, n_in)
        w_offsets.append(off)
        off += n_out * n_in
        b = p[off : off + n_out]
        off += n_out
        a = w @ inputs[-1] + b
        pres.append(a)
        code = act if layer < n_layers - 1 else out_act
        inputs.append(_activate(a, code))

    dp = np.zeros_like(p)
    delta = np.asarray(v, dtype=np.float64)
    for layer in range(n_layers - 1, -1, -1):
        n_in = widths[layer]
        n_out = widths[layer + 1]
        code = act if layer < n_layers - 1 else out_act
        delta = _act_backward(delta, pres[layer], inputs[layer + 1], code)
        woff = w_offsets[layer]
        w = p[woff : woff + n_out * n_in].reshape(n_out, n_in)
        dp[woff : woff + n_out * n_in] += np.outer(delta, inputs[layer]).ravel()
        dp[woff + n_out * n_in : woff + n_out * n_in + n_out] += delta
        delta = w.T @ delta

    if time_input:
        dz = delta[:-1].copy()
        dt = float(delta[-1])
    else:
        dz = delta
        dt = 0.0
    return dt, dz, dp
