"""Tape-based reverse-mode differentiation over float64 numpy arrays."""
import contextlib
import threading

import numpy as np

from ..errors import ContractError

_local = threading.local()


class Tape:
    """Primitive applications in the order they were executed.

    Each entry is ``(out, parents, vjp)``; replaying the list backwards is a
    reverse topological order by construction.
    """

    def __init__(self):
        self.nodes = []

    def record(self, out, parents, vjp):
        self.nodes.append((out, parents, vjp))

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


def current_tape():
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def grad_enabled():
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


@contextlib.contextmanager
def use_tape(tape):
    prev = getattr(_local, "tape", None)
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    __array_priority__ = 100  # keep ndarray <op> Tensor on our operators

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def detach(self):
        """A graph-free view of the same values (stop-gradient)."""
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops

        return ops.index(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data, parents, vjp):
    """Wrap a primitive's forward value and record it if any input needs grad."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        current_tape().record(out, parents, vjp)
    return out


def backward(loss, tape=None):
    """Accumulate d(loss)/d(leaf) into every grad-requiring leaf, then clear the tape."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward() needs a scalar loss tensor")
    tape = tape or current_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.is_leaf:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += pg
            else:
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    tape.clear()
