"""Minimal reverse-mode autodiff over numpy float64 arrays.

Every op checks its output for non-finite values (toggle with
FINITE_CHECKS) and raises NumericalError when tripped.  Gradients flow
only through tensors with requires_grad; stop_gradient cuts the graph
exactly.  Reductions are deterministic: max-style ops route gradient to
the first maximizer.
"""

import numpy as np

from ..errors import NumericalError, ShapeError

FINITE_CHECKS = True


def _check(data, opname):
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by op {opname!r}")
    return data


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(p for p in parents if p.requires_grad)
        self._backward_fn = backward_fn if self.requires_grad else None
        self._op = op

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if self.grad is None:
            # always copy: the incoming buffer may be shared with a sibling
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
                if FINITE_CHECKS:
                    for p in node._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise NumericalError(
                                f"non-finite gradient flowing into op {node._op!r}")

    # ---- arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(_check(self.data + other.data, "add"), parents=(self, other), op="add")

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))
        out._backward_fn = backward if out.requires_grad else None
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,), op="neg")

        def backward(g):
            self._accumulate(-g)
        out._backward_fn = backward if out.requires_grad else None
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(_check(self.data * other.data, "mul"), parents=(self, other), op="mul")

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        out._backward_fn = backward if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(_check(self.data / other.data, "div"), parents=(self, other), op="div")

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.data.shape))
        out._backward_fn = backward if out.requires_grad else None
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(_check(self.data @ other.data, "matmul"),
                     parents=(self, other), op="matmul")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)
        out._backward_fn = backward if out.requires_grad else None
        return out

    def pow_const(self, exponent):
        out = Tensor(_check(self.data**exponent, "pow_const"), parents=(self,), op="pow_const")

        def backward(g):
            self._accumulate(g * exponent * self.data**(exponent - 1))
        out._backward_fn = backward if out.requires_grad else None
        return out

    # ---- nonlinearities ---------------------------------------------

    def relu(self):
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), parents=(self,), op="relu")

        def backward(g):
            self._accumulate(g * mask)
        out._backward_fn = backward if out.requires_grad else None
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-np.clip(self.data, -500, 500)))
        out = Tensor(_check(s, "sigmoid"), parents=(self,), op="sigmoid")

        def backward(g):
            self._accumulate(g * s * (1.0 - s))
        out._backward_fn = backward if out.requires_grad else None
        return out

    def exp(self):
        e = np.exp(self.data)
        out = Tensor(_check(e, "exp"), parents=(self,), op="exp")

        def backward(g):
            self._accumulate(g * e)
        out._backward_fn = backward if out.requires_grad else None
        return out

    def log(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Tensor(_check(np.log(self.data), "log"), parents=(self,), op="log")

        def backward(g):
            self._accumulate(g / self.data)
        out._backward_fn = backward if out.requires_grad else None
        return out

    def sqrt(self):
        root = np.sqrt(self.data)
        out = Tensor(_check(root, "sqrt"), parents=(self,), op="sqrt")

        def backward(g):
            self._accumulate(g * 0.5 / root)
        out._backward_fn = backward if out.requires_grad else None
        return out

    # ---- shape ops ---------------------------------------------------

    def reshape(self, *shape):
        old = self.data.shape
        out = Tensor(self.data.reshape(*shape), parents=(self,), op="reshape")

        def backward(g):
            self._accumulate(g.reshape(old))
        out._backward_fn = backward if out.requires_grad else None
        return out

    def transpose(self):
        out = Tensor(self.data.T.copy(), parents=(self,), op="transpose")

        def backward(g):
            self._accumulate(g.T)
        out._backward_fn = backward if out.requires_grad else None
        return out

    # ---- reductions ---------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     parents=(self,), op="sum")
        shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, shape).copy())
        out._backward_fn = backward if out.requires_grad else None
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis, keepdims=False):
        """Max along one axis; gradient routes to the first maximizer."""
        out_data = self.data.max(axis=axis, keepdims=True)
        argmax = np.expand_dims(self.data.argmax(axis=axis), axis)
        out = Tensor(out_data if keepdims else out_data.squeeze(axis),
                     parents=(self,), op="max")

        def backward(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            grad = np.zeros_like(self.data)
            np.put_along_axis(grad, argmax, gg, axis)
            self._accumulate(grad)
        out._backward_fn = backward if out.requires_grad else None
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def stop_gradient(x):
    """Identity forward; blocks gradient flow exactly."""
    return Tensor(x.data, op="stop_gradient")


def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out = Tensor(_check(np.concatenate(datas, axis=axis), "concat"),
                 parents=tuple(tensors), op="concat")
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))
    out._backward_fn = backward if out.requires_grad else None
    return out


def gather_rows(x, indices):
    """x[indices] along axis 0; backward scatter-adds (repeats allowed)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = Tensor(x.data[indices], parents=(x,), op="gather_rows")

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, indices, g)
        x._accumulate(grad)
    out._backward_fn = backward if out.requires_grad else None
    return out


def spmm(matrix, x):
    """Constant sparse matrix @ dense tensor."""
    if matrix.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"spmm: sparse {matrix.shape} does not match dense {x.data.shape}")
    out = Tensor(_check(matrix @ x.data, "spmm"), parents=(x,), op="spmm")
    mt = matrix.T.tocsr() if x.requires_grad else None

    def backward(g):
        x._accumulate(mt @ g)
    out._backward_fn = backward if out.requires_grad else None
    return out


def segment_sum(x, starts, lengths):
    """Sum of row segments; segment i covers rows starts[i]:starts[i]+lengths[i]."""
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    out = Tensor(np.add.reduceat(x.data, starts, axis=0), parents=(x,), op="segment_sum")

    def backward(g):
        x._accumulate(np.repeat(g, lengths, axis=0))
    out._backward_fn = backward if out.requires_grad else None
    return out


def segment_mean(x, starts, lengths):
    total = segment_sum(x, starts, lengths)
    inv = (1.0 / np.asarray(lengths, dtype=np.float64))[:, None]
    return total * inv


def segment_max(x, starts, lengths):
    """Per-segment column max; gradient goes to the first maximizer."""
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    data = np.maximum.reduceat(x.data, starts, axis=0)
    arg = np.empty_like(data, dtype=np.int64)
    for i, (lo, ln) in enumerate(zip(starts, lengths)):
        arg[i] = lo + x.data[lo:lo + ln].argmax(axis=0)
    out = Tensor(data, parents=(x,), op="segment_max")

    def backward(g):
        grad = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.data.shape[1]), arg.shape)
        np.add.at(grad, (arg.ravel(), cols.ravel()), g.ravel())
        x._accumulate(grad)
    out._backward_fn = backward if out.requires_grad else None
    return out


def layernorm(x, gain, bias, eps=1e-6):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_sigma
    out = Tensor(_check(xhat * gain.data + bias.data, "layernorm"),
                 parents=(x, gain, bias), op="layernorm")
    width = x.data.shape[-1]

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv_sigma)
    out._backward_fn = backward if out.requires_grad else None
    return out


def l2_normalize(x, eps=1e-12):
    """Row-normalize over the last axis with an epsilon guard."""
    norm = np.sqrt((x.data**2).sum(axis=-1, keepdims=True) + eps)
    y = x.data / norm
    out = Tensor(_check(y, "l2_normalize"), parents=(x,), op="l2_normalize")

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x._accumulate((g - y * dot) / norm)
    out._backward_fn = backward if out.requires_grad else None
    return out
