"""Hot numeric kernels with a numba-compiled fast path and a pure-numpy fallback.

The backend is chosen once at import time from the DIALFUSE_BACKEND environment
variable: "numba" (default when numba is importable), "numpy" to force the
fallback, or "auto". Both paths compute the same quantities; within one backend
results are bit-stable across runs. Accumulation happens in the input dtype in
a fixed sequential order, so float32 in means float32 arithmetic.

Kernels operate on 2D views: callers reshape to (rows, n) before dispatching.
`benchmarks/bench_kernels.py` compares the two backends on training-sized and
larger shapes.
"""

import os

import numpy as np

__all__ = [
    "BACKEND",
    "softmax_rows",
    "softmax_rows_backward",
    "layer_combine",
    "layer_combine_backward",
]


def _pick_backend():
    choice = os.environ.get("DIALFUSE_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"DIALFUSE_BACKEND must be 'auto', 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()


# -- pure numpy reference path -------------------------------------------------

def _np_softmax_rows(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    return e / s


def _np_softmax_rows_backward(y, gy):
    dot = np.sum(y * gy, axis=1, keepdims=True)
    return y * (gy - dot)


def _np_layer_combine(weights, stack):
    # stack is (L, M), weights is (L,): convex combination of layers
    return weights @ stack


def _np_layer_combine_backward(stack, gout):
    return stack @ gout


if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _nb_softmax_rows(x):
        rows, n = x.shape
        out = np.empty_like(x)
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = x.dtype.type(0.0)
            for j in range(n):
                v = np.exp(x[i, j] - m)
                out[i, j] = v
                s += v
            inv = x.dtype.type(1.0) / s
            for j in range(n):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _nb_softmax_rows_backward(y, gy):
        rows, n = y.shape
        gx = np.empty_like(y)
        for i in range(rows):
            dot = y.dtype.type(0.0)
            for j in range(n):
                dot += y[i, j] * gy[i, j]
            for j in range(n):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
        return gx

    @njit(cache=True)
    def _nb_layer_combine(weights, stack):
        L, M = stack.shape
        out = np.zeros(M, dtype=stack.dtype)
        for l in range(L):
            w = weights[l]
            for m in range(M):
                out[m] += w * stack[l, m]
        return out

    @njit(cache=True)
    def _nb_layer_combine_backward(stack, gout):
        L, M = stack.shape
        gw = np.zeros(L, dtype=stack.dtype)
        for l in range(L):
            acc = stack.dtype.type(0.0)
            for m in range(M):
                acc += stack[l, m] * gout[m]
            gw[l] = acc
        return gw

    softmax_rows = _nb_softmax_rows
    softmax_rows_backward = _nb_softmax_rows_backward
    layer_combine = _nb_layer_combine
    layer_combine_backward = _nb_layer_combine_backward
else:
    softmax_rows = _np_softmax_rows
    softmax_rows_backward = _np_softmax_rows_backward
    layer_combine = _np_layer_combine
    layer_combine_backward = _np_layer_combine_backward
