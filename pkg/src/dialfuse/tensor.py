"""Dense tensors with reverse-mode differentiation.

The op surface is deliberately small: exactly what the fusion stack needs
(matmul, add, scale, softmax, layer combination, concat, narrow, transpose,
reshape, mean, cross-entropy). Values are float32 by default; `grad_check`
promotes to float64 internally so finite differences are not drowned in
rounding noise. Accumulation order is fixed and sequential, so repeated runs
are bit-identical.
"""

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

CLAMP_MIN = 1e-12  # floor applied to probabilities before log


class Tensor:
    """A dense float array plus the bookkeeping needed for backprop.

    Immutable by convention after construction except for gradient
    accumulation. `grad` is populated by `backward()` and has the same
    shape as `data`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) node into every ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without an explicit gradient requires a scalar, "
                    f"got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, s):
        return scale(self, s)

    __rmul__ = __mul__

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name=None):
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


def _node(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g is None:
        return None
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


def matmul(a, b):
    """Matrix product with numpy-style batch broadcasting on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs operands of rank >= 2, got {a.shape} x {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents differ: {a.shape} x {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g @ _swap(b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(a.data) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add extents incompatible: {a.shape} + {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    out = a.data * a.data.dtype.type(s)

    def backward(g):
        return (g * s,)

    return _node(out, (a,), backward)


def transpose(a, axis0=-2, axis1=-1):
    a = as_tensor(a)
    out = np.swapaxes(a.data, axis0, axis1)

    def backward(g):
        return (np.swapaxes(g, axis0, axis1),)

    return _node(out, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(tensors))
        )

    return _node(out, tuple(tensors), backward)


def narrow(a, axis, start, length):
    """Contiguous slice of `length` extents along `axis`."""
    a = as_tensor(a)
    extent = a.shape[axis]
    if not (0 <= start and start + length <= extent):
        raise DimensionError(
            f"narrow [{start}:{start + length}] out of range for extent {extent}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _node(out, (a,), backward)


def mean(a, axis):
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis)
    count = a.shape[axis]

    def backward(g):
        expanded = np.expand_dims(g, axis) / a.data.dtype.type(count)
        return (np.broadcast_to(expanded, a.shape).copy(),)

    return _node(out, (a,), backward)


def _validate_softmax_input(flat):
    if np.isnan(flat).any() or np.isposinf(flat).any():
        raise NumericError("softmax input contains NaN or +inf")
    if np.all(np.isneginf(flat), axis=1).any():
        raise NumericError("softmax row is entirely masked (-inf)")


def softmax(a, axis=-1):
    """Stable softmax along `axis`; -inf entries get exactly zero weight."""
    a = as_tensor(a)
    moved = np.moveaxis(a.data, axis, -1)
    flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
    _validate_softmax_input(flat)
    y2 = kernels.softmax_rows(flat)
    out = np.moveaxis(y2.reshape(moved.shape), -1, axis)

    def backward(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(y2.shape)
        gx = kernels.softmax_rows_backward(y2, gm.astype(y2.dtype, copy=False))
        return (np.moveaxis(gx.reshape(moved.shape), -1, axis),)

    return _node(out, (a,), backward)


def layer_combine(weights, stack):
    """Combine stack[l] slices with the given per-layer weights.

    `weights` has shape (L,); `stack` has shape (L, ...). The result drops the
    layer axis. Gradients flow to both operands, though in practice the stack
    is a frozen activation constant.
    """
    weights, stack = as_tensor(weights), as_tensor(stack)
    if weights.ndim != 1 or weights.shape[0] != stack.shape[0]:
        raise DimensionError(
            f"layer weights {weights.shape} do not match stack layers {stack.shape}"
        )
    dtype = np.promote_types(weights.dtype, stack.dtype)
    w = weights.data.astype(dtype, copy=False)
    s = np.ascontiguousarray(stack.data, dtype=dtype)
    flat = s.reshape(s.shape[0], -1)
    out = kernels.layer_combine(w, flat).reshape(s.shape[1:])

    def backward(g):
        gflat = np.ascontiguousarray(g, dtype=dtype).reshape(-1)
        gw = kernels.layer_combine_backward(flat, gflat) if weights.requires_grad else None
        gs = np.multiply.outer(w, g).reshape(stack.shape) if stack.requires_grad else None
        return gw, gs

    return _node(out, (weights, stack), backward)


def _check_weights(class_weights, n_classes, dtype):
    if class_weights is None:
        return np.ones(n_classes, dtype=dtype)
    w = np.asarray(class_weights.data if isinstance(class_weights, Tensor) else class_weights)
    if w.shape != (n_classes,):
        raise DimensionError(f"class weights {w.shape} for {n_classes} classes")
    return w.astype(dtype, copy=False)


def cross_entropy(probs, target, class_weights=None):
    """Negative weighted log-probability of the target class.

    `probs` is a (n_classes,) probability vector; the result is the scalar
    -w[target] * log(max(probs[target], CLAMP_MIN)).
    """
    probs = as_tensor(probs)
    if probs.ndim != 1:
        raise DimensionError(f"cross_entropy expects a probability vector, got {probs.shape}")
    n = probs.shape[0]
    target = int(target)
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    w = _check_weights(class_weights, n, probs.dtype)
    p = probs.data[target]
    clamped = max(p, probs.dtype.type(CLAMP_MIN))
    out = -w[target] * np.log(clamped)

    def backward(g):
        gp = np.zeros_like(probs.data)
        if p >= CLAMP_MIN:
            gp[target] = -w[target] / clamped
        return (gp * g,)

    return _node(np.asarray(out), (probs,), backward)


def cross_entropy_mean(probs, targets, class_weights=None):
    """Weight-normalized mean cross-entropy over a batch.

    `probs` is (B, n_classes), `targets` is (B,). Returns
    sum_i w[t_i] * (-log p_i) / sum_i w[t_i], which reduces to the plain mean
    when every class weight is 1.
    """
    probs = as_tensor(probs)
    if probs.ndim != 2:
        raise DimensionError(f"cross_entropy_mean expects (batch, classes), got {probs.shape}")
    batch, n = probs.shape
    if batch == 0:
        raise ContractError("cross_entropy_mean over an empty batch")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (batch,):
        raise DimensionError(f"targets {targets.shape} for batch of {batch}")
    if targets.min() < 0 or targets.max() >= n:
        raise IndexError(f"target out of range for {n} classes")
    w = _check_weights(class_weights, n, probs.dtype)
    wt = w[targets]
    picked = probs.data[np.arange(batch), targets]
    clamped = np.maximum(picked, probs.dtype.type(CLAMP_MIN))
    wsum = wt.sum()
    out = np.asarray((wt * -np.log(clamped)).sum() / wsum)

    def backward(g):
        gp = np.zeros_like(probs.data)
        live = picked >= CLAMP_MIN
        gp[np.arange(batch), targets] = np.where(live, -wt / clamped, 0.0) / wsum
        return (gp * g,)

    return _node(out, (probs,), backward)


def grad_check(f, params, epsilon=None, promote=True):
    """Max relative disagreement between backprop and central differences.

    `f` rebuilds and returns the scalar loss from `params` on every call.
    Parameters with requires_grad=False are excluded. With `promote` (the
    default) the check runs in float64 with epsilon 1e-5; float32 evaluation
    at the documented epsilon 1e-3 is too noisy to resolve small gradients,
    so promotion is what makes the 1e-3 verification bar meaningful.
    """
    checked = [p for p in params if p.requires_grad]
    if not checked:
        raise ContractError("grad_check needs at least one trainable parameter")
    if epsilon is None:
        epsilon = 1e-5 if promote else 1e-3
    saved = [p.data for p in checked]

    def pname(p, i):
        label = p.name if p.name else f"param{checked.index(p)}"
        return f"{label}[{i}]"

    try:
        for p in checked:
            # contiguous copy so reshape(-1) below is a mutable view
            p.data = np.ascontiguousarray(
                p.data, dtype=np.float64 if promote else p.data.dtype
            ).copy()
            p.grad = None
        out = f()
        if out.size != 1:
            raise ContractError(f"grad_check target must be scalar, got {out.shape}")
        if not np.isfinite(out.data).all():
            raise NumericError("grad_check: loss is not finite")
        out.backward()
        analytic = []
        for p in checked:
            g = np.zeros_like(p.data) if p.grad is None else np.asarray(p.grad, dtype=np.float64)
            if not np.isfinite(g).all():
                bad = int(np.flatnonzero(~np.isfinite(g.reshape(-1)))[0])
                raise NumericError(f"non-finite analytic gradient at {pname(p, bad)}")
            analytic.append(g.reshape(-1))

        max_rel = 0.0
        for p, grads in zip(checked, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = float(f().data)
                flat[i] = orig - epsilon
                fm = float(f().data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError(f"non-finite loss while perturbing {pname(p, i)}")
                numeric = (fp - fm) / (2.0 * epsilon)
                a = float(grads[i])
                # the 1e-6 floor turns the test absolute for near-zero
                # gradients (e.g. a key bias, which softmax shift-invariance
                # makes mathematically dead): both sides are then rounding
                # noise and a relative comparison would amplify it
                rel = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
                if rel > max_rel:
                    max_rel = rel
    finally:
        for p, data in zip(checked, saved):
            p.data = data
            p.grad = None
    return max_rel
