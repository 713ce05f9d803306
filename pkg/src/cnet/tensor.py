"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous row-major numpy array plus an optional
gradient buffer.  Differentiable operations record themselves on an explicit
:class:`Tape`; :func:`backward` replays the tape in reverse to populate
gradients.  Tapes are per-forward-pass objects, never global state.
"""

import numpy as np

from .errors import DetachedGraph, NotScalar, ShapeMismatch


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    The data buffer is treated as immutable between construction and the
    optimizer update; ``grad`` is the only field mutated by the engine.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach_copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def tensor_new(shape, data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    """Build a tensor from an explicit shape and flat scalar data.

    Raises ShapeMismatch when the element count disagrees with the shape,
    or when any dimension is < 1.
    """
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeMismatch(f"all dimensions must be >= 1, got {shape}")
    flat = np.asarray(data, dtype=dtype).reshape(-1)
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ShapeMismatch(
            f"shape {shape} implies {expected} elements, data has {flat.size}"
        )
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


class Tape:
    """Ordered record of operations for one forward pass.

    Each entry holds the input tensors, the output tensor, and a backward
    rule mapping the upstream gradient to per-input gradients.  Recording
    order is topological by construction; backward traverses it reversed.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def record(self, inputs, output, backward_fn):
        self.records.append((tuple(inputs), output, backward_fn))

    def __len__(self):
        return len(self.records)


def emit(tape, inputs, out_data, backward_fn) -> Tensor:
    """Wrap an op result, recording it when any input participates in autodiff."""
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients at fan-out points are sum-accumulated.  Leaf gradients add on
    top of any existing ``grad`` buffer, so two backward calls on the same
    tape accumulate exactly twice the gradient.
    """
    if loss.size != 1:
        raise NotScalar(f"loss must have one element, has {loss.size}")
    if not any(out is loss for _, out, _ in tape.records):
        raise DetachedGraph("loss was not produced by an operation on this tape")

    # Per-call scratch keeps intermediate gradients off the tensors between
    # calls; only the final accumulation below touches .grad.
    scratch = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for inputs, output, backward_fn in reversed(tape.records):
        upstream = scratch.get(id(output))
        if upstream is None:
            continue
        grads = backward_fn(upstream)
        for tensor, grad in zip(inputs, grads):
            if grad is None:
                continue
            key = id(tensor)
            if key in scratch:
                # No in-place add: backward rules may hand the same buffer
                # (or views of one) to several inputs.
                scratch[key] = scratch[key] + grad
            else:
                scratch[key] = grad
                holders[key] = tensor

    for key, grad in scratch.items():
        tensor = holders[key]
        if not tensor.requires_grad:
            continue
        if tensor.grad is None:
            tensor.grad = grad.copy()
        else:
            tensor.grad += grad


# Elementwise engine ops used by tests and small compositions; the neural
# network layers live in layers.py.

def add(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add shapes differ: {a.shape} vs {b.shape}")
    return emit(tape, (a, b), a.data + b.data, lambda g: (g, g))


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return emit(tape, (a, b), ad * bd, lambda g: (g * bd, g * ad))


def tsum(tape, x: Tensor) -> Tensor:
    """Sum of all elements as a shape-(1,) tensor."""
    out_data = np.asarray([x.data.sum()], dtype=x.dtype)
    return emit(tape, (x,), out_data, lambda g: (np.full_like(x.data, g[0]),))
