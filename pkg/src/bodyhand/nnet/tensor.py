"""A small reverse-mode autodiff over numpy arrays.

Each op records its parents and a closure that pushes the output gradient back to
them. ``Tensor.backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_relu_trace: list | None = None


@contextmanager
def record_relu_masks():
    """Collects the on/off mask of every relu evaluated inside the block."""
    global _relu_trace
    outer, _relu_trace = _relu_trace, []
    try:
        yield _relu_trace
    finally:
        _relu_trace = outer


class GradientError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _float_array(x) -> np.ndarray:
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = _float_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(data, parents, op, backward):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
        if needs:
            out._backward = backward
        return out

    # --- elementwise -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)

        def backward(out):
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))

        return Tensor._make(self.data + other.data, (self, other), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(out):
            self._accumulate(-out.grad)

        return Tensor._make(-self.data, (self,), "neg", backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def backward(out):
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        return Tensor._make(self.data * other.data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def reciprocal(self):
        val = 1.0 / self.data

        def backward(out):
            self._accumulate(-out.grad * val * val)

        return Tensor._make(val, (self,), "reciprocal", backward)

    def exp(self):
        val = np.exp(self.data)

        def backward(out):
            self._accumulate(out.grad * val)

        return Tensor._make(val, (self,), "exp", backward)

    def log(self):
        def backward(out):
            self._accumulate(out.grad / self.data)

        return Tensor._make(np.log(self.data), (self,), "log", backward)

    def relu(self):
        mask = self.data > 0
        if _relu_trace is not None:
            _relu_trace.append(mask)

        def backward(out):
            self._accumulate(out.grad * mask)

        return Tensor._make(self.data * mask, (self,), "relu", backward)

    def sigmoid(self):
        # split by sign so exp never overflows
        x = self.data
        e = np.exp(-np.abs(x))
        val = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

        def backward(out):
            self._accumulate(out.grad * val * (1.0 - val))

        return Tensor._make(val, (self,), "sigmoid", backward)

    # --- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def backward(out):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        def backward(out):
            self._accumulate(out.grad.reshape(self.shape))

        return Tensor._make(self.data.reshape(*shape), (self,), "reshape", backward)

    def transpose(self, *axes):
        inv = np.argsort(axes)

        def backward(out):
            self._accumulate(out.grad.transpose(inv))

        return Tensor._make(self.data.transpose(axes), (self,), "transpose", backward)

    def __getitem__(self, idx):
        def backward(out):
            g = np.zeros_like(self.data)
            np.add.at(g, idx, out.grad)
            self._accumulate(g)

        return Tensor._make(self.data[idx], (self,), "getitem", backward)

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        val = shifted - lse
        soft = np.exp(val)

        def backward(out):
            g = out.grad
            self._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

        return Tensor._make(val, (self,), "log_softmax", backward)

    # --- graph traversal ---------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable einsum for explicit '->' forms without repeated indices per operand."""
    operands = tuple(as_tensor(o) for o in operands)
    inputs, output = subscripts.replace(" ", "").split("->")
    inputs = inputs.split(",")
    val = np.einsum(subscripts, *(o.data for o in operands), optimize=True)

    def backward(out):
        for i, op in enumerate(operands):
            if not op.requires_grad:
                continue
            others = [inputs[j] for j in range(len(operands)) if j != i]
            spec = ",".join([output] + others) + "->" + inputs[i]
            args = [out.grad] + [operands[j].data for j in range(len(operands)) if j != i]
            op._accumulate(np.einsum(spec, *args, optimize=True))

    return Tensor._make(val, operands, "einsum", backward)


def stack_sum(tensors: list[Tensor]) -> Tensor:
    """Sum of a list in fixed left-to-right order."""
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total
