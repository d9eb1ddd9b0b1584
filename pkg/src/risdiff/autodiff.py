"""Minimal reverse-mode automatic differentiation on numpy payloads.

A Tensor wraps a float64 array and remembers the operation that produced
it, so the value graph reachable from a loss node doubles as the gradient
tape. backward(loss) walks that graph once in reverse topological order
and accumulates d loss / d tensor into .grad for every tensor that
requires gradients.

Only the operations the denoiser needs exist: matmul, broadcast add/sub,
elementwise mul, silu, concat, sum, mean. Broadcasting in forward ops is
undone in the backward pass by summing over the broadcast axes.
"""

import numpy as np

__all__ = ["Tensor", "concat", "backward"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def _make(self, data, parents, backward):
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    @staticmethod
    def _lift(other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data

        def backward(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)

        return self._make(out_data, (self, other), backward)

    def __sub__(self, other):
        other = self._lift(other)
        out_data = self.data - other.data

        def backward(g):
            return _unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape)

        return self._make(out_data, (self, other), backward)

    def __mul__(self, other):
        other = self._lift(other)
        out_data = self.data * other.data
        a, b = self, other

        def backward(g):
            return (_unbroadcast(g * b.data, a.data.shape),
                    _unbroadcast(g * a.data, b.data.shape))

        return self._make(out_data, (self, other), backward)

    __radd__ = __add__
    __rmul__ = __mul__

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other
        out_data = a.data @ b.data

        def backward(g):
            if a.data.ndim == 1:      # (k,) @ (k, n) -> (n,)
                ga = g @ b.data.T
                gb = np.outer(a.data, g)
            else:                      # (m, k) @ (k, n) -> (m, n)
                ga = g @ b.data.T
                gb = a.data.T @ g
            return ga, gb

        return self._make(out_data, (self, other), backward)

    def silu(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out_data = self.data * s

        def backward(g):
            return (g * (s * (1.0 + self.data * (1.0 - s))),)

        return self._make(out_data, (self,), backward)

    def square(self):
        return self * self

    def sum(self):
        out_data = self.data.sum()

        def backward(g):
            return (np.broadcast_to(g, self.data.shape).copy(),)

        return self._make(out_data, (self,), backward)

    def mean(self):
        n = self.data.size
        out_data = self.data.mean()

        def backward(g):
            return (np.broadcast_to(g / n, self.data.shape).copy(),)

        return self._make(out_data, (self,), backward)


def concat(tensors, axis=-1):
    """Concatenate along ``axis``; gradients split back at the seams."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in tensors))
    if out.requires_grad:
        out._parents = tuple(tensors)
        out._backward = backward
    return out


def backward(loss: Tensor):
    """Reverse-accumulate gradients of a scalar loss over its value graph."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return  # constant loss: every gradient is zero, nothing to accumulate

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:  # iterative DFS: chains are T*layers deep
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] += pg
            else:
                grads[id(parent)] = pg
