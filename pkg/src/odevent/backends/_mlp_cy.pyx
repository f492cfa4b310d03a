# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels: forward pass and vector-Jacobian product.

Semantics match _mlp_py exactly; see that module for the readable version.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, sin, tanh

cnp.import_array()

DEF IDENTITY = 0
DEF TANH = 1
DEF RELU = 2
DEF SINE = 3
DEF SOFTMAX = 4

BACKEND_NAME = "cython"


cdef inline void _apply_act(double* a, double* h, Py_ssize_t n, int code) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m, s
    if code == IDENTITY:
        for i in range(n):
            h[i] = a[i]
    elif code == TANH:
        for i in range(n):
            h[i] = tanh(a[i])
    elif code == RELU:
        for i in range(n):
            h[i] = a[i] if a[i] > 0.0 else 0.0
    elif code == SINE:
        for i in range(n):
            h[i] = sin(a[i])
    else:  # SOFTMAX
        m = a[0]
        for i in range(1, n):
            if a[i] > m:
                m = a[i]
        s = 0.0
        for i in range(n):
            h[i] = exp(a[i] - m)
            s += h[i]
        for i in range(n):
            h[i] /= s


cdef inline void _act_backward(double* delta, double* a, double* h,
                               Py_ssize_t n, int code) noexcept nogil:
    # In-place: delta (cotangent on h) becomes the cotangent on a.
    cdef Py_ssize_t i
    cdef double dot
    if code == IDENTITY:
        return
    elif code == TANH:
        for i in range(n):
            delta[i] *= 1.0 - h[i] * h[i]
    elif code == RELU:
        for i in range(n):
            if a[i] <= 0.0:
                delta[i] = 0.0
    elif code == SINE:
        for i in range(n):
            delta[i] *= cos(a[i])
    else:  # SOFTMAX
        dot = 0.0
        for i in range(n):
            dot += delta[i] * h[i]
        for i in range(n):
            delta[i] = h[i] * (delta[i] - dot)


def mlp_forward(long[::1] widths, int act, int out_act, bint time_input,
                double[::1] p, double t, double[::1] z):
    cdef Py_ssize_t n_layers = widths.shape[0] - 1
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t i, j, layer, n_in, n_out, off, hoff
    for i in range(widths.shape[0]):
        if widths[i] > total:
            total = widths[i]
    # double buffer of the widest layer
    buf = np.empty(2 * total, dtype=np.float64)
    cdef double[::1] work = buf
    cdef double* cur = &work[0]
    cdef double* nxt = &work[total]
    cdef double* tmp
    cdef double acc
    cdef int code

    for i in range(z.shape[0]):
        cur[i] = z[i]
    if time_input:
        cur[widths[0] - 1] = t

    off = 0
    with nogil:
        for layer in range(n_layers):
            n_in = widths[layer]
            n_out = widths[layer + 1]
            for j in range(n_out):
                acc = p[off + n_out * n_in + j]  # bias
                for i in range(n_in):
                    acc += p[off + j * n_in + i] * cur[i]
                nxt[j] = acc
            code = act if layer < n_layers - 1 else out_act
            _apply_act(nxt, nxt, n_out, code)
            off += n_out * n_in + n_out
            tmp = cur
            cur = nxt
            nxt = tmp

    out = np.empty(widths[n_layers], dtype=np.float64)
    cdef double[::1] outv = out
    for i in range(widths[n_layers]):
        outv[i] = cur[i]
    return out


def mlp_vjp(long[::1] widths, int act, int out_act, bint time_input,
            double[::1] p, double t, double[::1] z, double[::1] v):
    cdef Py_ssize_t n_layers = widths.shape[0] - 1
    cdef Py_ssize_t i, j, layer, n_in, n_out, off, woff
    cdef Py_ssize_t post_total = 0, pre_total = 0, widest = 0
    for i in range(widths.shape[0]):
        post_total += widths[i]
        if widths[i] > widest:
            widest = widths[i]
    pre_total = post_total - widths[0]

    posts_b = np.empty(post_total, dtype=np.float64)
    pres_b = np.empty(pre_total, dtype=np.float64)
    delta_b = np.empty(2 * widest, dtype=np.float64)
    dp_b = np.zeros(p.shape[0], dtype=np.float64)
    cdef double[::1] posts = posts_b
    cdef double[::1] pres = pres_b
    cdef double[::1] dwork = delta_b
    cdef double[::1] dp = dp_b
    cdef double* delta = &dwork[0]
    cdef double* dprev = &dwork[widest]
    cdef double* tmp
    cdef double acc, dt
    cdef int code

    # offsets of each layer's post-activations / pre-activations
    for i in range(z.shape[0]):
        posts[i] = z[i]
    if time_input:
        posts[widths[0] - 1] = t

    cdef Py_ssize_t ppost, ppre
    off = 0
    ppost = widths[0]
    ppre = 0
    with nogil:
        for layer in range(n_layers):
            n_in = widths[layer]
            n_out = widths[layer + 1]
            for j in range(n_out):
                acc = p[off + n_out * n_in + j]
                for i in range(n_in):
                    acc += p[off + j * n_in + i] * posts[ppost - n_in + i]
                pres[ppre + j] = acc
            code = act if layer < n_layers - 1 else out_act
            _apply_act(&pres[ppre], &posts[ppost], n_out, code)
            off += n_out * n_in + n_out
            ppost += n_out
            ppre += n_out

        # backward
        for i in range(widths[n_layers]):
            delta[i] = v[i]
        for layer in range(n_layers - 1, -1, -1):
            n_in = widths[layer]
            n_out = widths[layer + 1]
            ppost -= n_out
            ppre -= n_out
            off -= n_out * n_in + n_out
            code = act if layer < n_layers - 1 else out_act
            _act_backward(delta, &pres[ppre], &posts[ppost], n_out, code)
            woff = off
            for j in range(n_out):
                for i in range(n_in):
                    dp[woff + j * n_in + i] += delta[j] * posts[ppost - n_in + i]
                dp[woff + n_out * n_in + j] += delta[j]
            for i in range(n_in):
                acc = 0.0
                for j in range(n_out):
                    acc += p[woff + j * n_in + i] * delta[j]
                dprev[i] = acc
            tmp = delta
            delta = dprev
            dprev = tmp

    dz = np.empty(z.shape[0], dtype=np.float64)
    cdef double[::1] dzv = dz
    for i in range(z.shape[0]):
        dzv[i] = delta[i]
    dt = delta[widths[0] - 1] if time_input else 0.0
    return dt, dz, dp_b
