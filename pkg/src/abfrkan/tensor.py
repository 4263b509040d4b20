"""Dense f64 tensors with define-by-run reverse-mode autodiff.

Each op builds its output eagerly and, if any input requires a gradient,
records its parents plus a vector-Jacobian closure. ``backward`` sorts the
recorded graph topologically and visits every node once.

Broadcasting is deliberately narrow: operands must have equal shapes, or one
of them is a scalar (shape ``()``), or one shape is a trailing suffix of the
other (row broadcast of a bias over a batch of rows).
"""

from __future__ import annotations

import contextlib
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


def _check_broadcast(a: tuple, b: tuple) -> None:
    if a == b or a == () or b == ():
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(f"unsupported broadcast between {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # --- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # --- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return permute(self, axes if axes else None)

    @property
    def T(self):
        return swap_last(self)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build outputs without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def custom_op(
    out: np.ndarray,
    inputs: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap a precomputed forward value with a hand-written VJP.

    ``vjp(g)`` returns one gradient (or None) per input, shaped like it.
    """
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(out, dtype=np.float64)
    t.grad = None
    t.name = None
    t.requires_grad = _GRAD_ENABLED and any(i.requires_grad for i in inputs)
    if t.requires_grad:
        t._parents = tuple(inputs)
        t._vjp = vjp
    else:
        t._parents = ()
        t._vjp = None
    return t


# --- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return custom_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return custom_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    return custom_op(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise ZeroDivisionError("tensor division by zero")
    out = ad / bd
    return custom_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def _unary(x, fwd: Callable, dfdx: Callable) -> Tensor:
    x = tensor(x)
    xd = x.data
    out = fwd(xd)
    return custom_op(out, (x,), lambda g: (g * dfdx(xd, out),))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda x, y: 1.0 - y * y)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda x, y: y)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda x, y: 1.0 / x)


def square(x) -> Tensor:
    return _unary(x, np.square, lambda x, y: 2.0 * x)


def sqrt(x) -> Tensor:
    return _unary(x, np.sqrt, lambda x, y: 0.5 / y)


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda x, y: (x > 0).astype(np.float64))


def sigmoid(x) -> Tensor:
    def f(v):
        return 0.5 * (1.0 + np.tanh(0.5 * v))

    return _unary(x, f, lambda x, y: y * (1.0 - y))


def silu(x) -> Tensor:
    def df(v, y):
        s = 0.5 * (1.0 + np.tanh(0.5 * v))
        return s * (1.0 + v * (1.0 - s))

    return _unary(x, lambda v: v * 0.5 * (1.0 + np.tanh(0.5 * v)), df)


def softplus(x) -> Tensor:
    return _unary(
        x,
        lambda v: np.logaddexp(0.0, v),
        lambda v, y: 0.5 * (1.0 + np.tanh(0.5 * v)),
    )


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    return _unary(
        x,
        lambda v: 0.5 * v * (1.0 + erf(v * _INV_SQRT2)),
        lambda v, y: 0.5 * (1.0 + erf(v * _INV_SQRT2)) + v * _INV_SQRT2PI * np.exp(-0.5 * v * v),
    )


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by op name: add, sub, mul, div, tanh, exp, silu, relu, square."""
    table = {
        "add": add, "sub": sub, "mul": mul, "div": div, "tanh": tanh, "exp": exp,
        "silu": silu, "relu": relu, "square": square, "gelu": gelu, "sigmoid": sigmoid,
        "softplus": softplus, "log": log, "sqrt": sqrt,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --- shape ops ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D operands, a stack of rows times a shared matrix
    (``(..., m, k) @ (k, n)``), or equal-batch 3-D operands."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return custom_op(ad @ bd, (a, b), vjp)


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    old = x.shape
    return custom_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x, axes=None) -> Tensor:
    x = tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return custom_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x) -> Tensor:
    x = tensor(x)
    return custom_op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return custom_op(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Pick rows along axis -2. ``x`` is (N, D) with index (K,), or
    (B, N, D) with index (B, K)."""
    x = tensor(x)
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape
    if x.ndim == 2:
        out = x.data[index]

        def vjp(g):
            gx = np.zeros(shape)
            np.add.at(gx, index, g)
            return (gx,)
    elif x.ndim == 3:
        b = np.arange(shape[0])[:, None]
        out = x.data[b, index]

        def vjp(g):
            gx = np.zeros(shape)
            np.add.at(gx, (b, index), g)
            return (gx,)
    else:
        raise ShapeError(f"gather_rows expects 2-D or 3-D input, got {shape}")
    return custom_op(out, (x,), vjp)


def scale_rows(x, s) -> Tensor:
    """Multiply each row ``x[..., :]`` by the matching scalar ``s[..., 0]``."""
    x, s = tensor(x), tensor(s)
    if s.shape != x.shape[:-1] + (1,):
        raise ShapeError(f"scale_rows: x {x.shape}, s {s.shape}")
    xd, sd = x.data, s.data
    return custom_op(
        xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=-1, keepdims=True))
    )


# --- fused ops ------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def vjp(g):
        gxhat = g * gd
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return custom_op(xhat * gd + beta.data, (x, gamma, beta), vjp)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    x = tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return custom_op(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class over the rows."""
    logits = tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (n, C) logits, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    p = np.exp(logp)

    def vjp(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return custom_op(np.asarray(loss), (logits,), vjp)


# --- backward -------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node
    that requires a gradient."""
    if loss.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --- modules, optimizer, schedule ----------------------------------------

class Module:
    """Parameter container; parameters are found by walking attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError("betas must lie in (0, 1)")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(params: Sequence[Tensor], state: AdamW) -> None:
    state.step()


class CosineWarmRestarts:
    """Epoch-indexed cosine annealing with warm restarts."""

    def __init__(self, base_lr: float = 1e-3, T_0: int = 10, T_mult: int = 2, eta_min: float = 0.0):
        if base_lr <= 0 or T_0 < 1 or T_mult < 1 or eta_min < 0:
            raise ValueError("invalid schedule parameters")
        self.base_lr = base_lr
        self.T_0 = T_0
        self.T_mult = T_mult
        self.eta_min = eta_min

    def cycle(self, epoch: int) -> tuple[int, int]:
        """(epochs into current cycle, current cycle length)."""
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        t, T_i = epoch, self.T_0
        while t >= T_i:
            t -= T_i
            T_i *= self.T_mult
        return t, T_i

    def lr_at(self, epoch: int) -> float:
        t_cur, T_i = self.cycle(epoch)
        lr = self.eta_min + 0.5 * (self.base_lr - self.eta_min) * (1.0 + math.cos(math.pi * t_cur / T_i))
        return min(max(lr, self.eta_min), self.base_lr)


def lr_at(schedule: CosineWarmRestarts, epoch: int) -> float:
    return schedule.lr_at(epoch)


# --- checkpoint format ----------------------------------------------------

CHECKPOINT_MAGIC = b"ABFK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} too large for the format")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic, not an ABFK checkpoint")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if off + nbytes > len(data):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=off).reshape(dims).astype(np.float64)
            off += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(data):
        raise CheckpointError("trailing bytes after last entry")
    return out
