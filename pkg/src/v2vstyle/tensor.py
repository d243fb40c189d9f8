"""Dense tensors over numpy with reverse-mode automatic differentiation.

Everything the video networks need lives here: elementwise math, dense and
2-D convolution kernels (stride 1, same padding), pooling and nearest
upsampling, reductions, a momentum SGD step with global norm clipping,
Xavier initialization, and the small binary tensor format ("V2VT") used by
dataset stats files and checkpoints.

The graph is a tape rebuilt on every step: each op records its parents and a
backward closure when gradients are enabled, ``backward()`` walks the tape in
reverse topological order, accumulates gradients into requires_grad leaves
and then clears the tape.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32

# floor applied to log arguments inside loss code (not in the log primitive)
LOG_EPS = 1e-7


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested op."""


class FormatError(ValueError):
    """Malformed V2VT / V2VC byte stream."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection ----------------------------------------------------
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- autograd ----------------------------------------------------------
    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Accumulate gradients of this scalar into all requires_grad leaves.

        The recorded tape is cleared afterwards; grads survive only on leaves.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.data.shape}")
        if not self._parents:
            raise RuntimeError("backward: tape is empty (no graph recorded for this tensor)")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, int]] = [(self, 0)]
        seen.add(id(self))
        while stack:
            node, idx = stack[-1]
            if idx < len(node._parents):
                stack[-1] = (node, idx + 1)
                parent = node._parents[idx]
                if id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, 0))
            else:
                topo.append(node)
                stack.pop()

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            if node._parents:
                node._parents = ()
                node._backward = None
                node.grad = None

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named requires_grad leaf; names are unique within a network set."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(value: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(value, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(value, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(value, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    value = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _node(value, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError(f"log: non-positive input (min={a.data.min()}); callers must clamp")
    value = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(value, (a,), backward)


def clip(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient passes only where the input was inside the range."""
    value = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask = mask * (a.data >= lo)
    if hi is not None:
        mask = mask * (a.data <= hi)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _node(value, (a,), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _node(value, (a,), backward)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    value = np.where(a.data > 0, a.data, alpha * a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, alpha).astype(a.dtype))

    return _node(value, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    value = np.empty_like(x)
    pos = x >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    value[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * value * (1.0 - value))

    return _node(value, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - value * value))

    return _node(value, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * value).sum(axis=axis, keepdims=True)
            a._accumulate(value * (g - dot))

    return _node(value, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shaping
# ---------------------------------------------------------------------------

def _restore_axes(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        shape = list(in_shape)
        for ax in sorted(a % len(in_shape) for a in axes):
            shape[ax] = 1
        g = g.reshape(shape)
    return np.broadcast_to(g, in_shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_restore_axes(g, a.shape, axis, keepdims).astype(a.dtype))

    return _node(np.asarray(value), (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        if a.requires_grad:
            a._accumulate((_restore_axes(g, a.shape, axis, keepdims) / count).astype(a.dtype))

    return _node(np.asarray(value), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    value = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _node(value, (a,), backward)


def slice_(a: Tensor, index) -> Tensor:
    value = a.data[index]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] += g
            a._accumulate(full)

    return _node(value, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    value = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node(value, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra and spatial kernels
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul: need (..., k) @ (k, m), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    value = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1]))

    return _node(value, (a, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, H+kh-1, W+kw-1, C) padded input -> (N*H*W, kh*kw*C) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # windows: (N, H, W, C, kh, kw) -> (N, H, W, kh, kw, C)
    windows = windows.transpose(0, 1, 2, 4, 5, 3)
    n, h, w = windows.shape[:3]
    return windows.reshape(n * h * w, kh * kw * xp.shape[3])


def _conv2d_value(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw, cin, cout = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(xp, kh, kw)
    out = cols @ k.reshape(-1, cout)
    return out.reshape(x.shape[0], x.shape[1], x.shape[2], cout)


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D convolution, NHWC input, (kh, kw, cin, cout) kernel, stride 1, same padding."""
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: need NHWC input and 4-d kernel, got {x.shape} and {k.shape}")
    kh, kw, cin, cout = k.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[3]} != kernel channels {cin} "
                         f"(input {x.shape}, kernel {k.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: same padding requires odd kernel extents, got {k.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(xp, kh, kw)
    out = cols @ k.data.reshape(-1, cout)
    if bias is not None:
        out = out + bias.data
    value = out.reshape(x.shape[0], x.shape[1], x.shape[2], cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if k.requires_grad:
            # patch matrix is recomputed here rather than cached: keeps graph memory
            # proportional to activations, not receptive-field-expanded activations
            k._accumulate((_im2col(xp, kh, kw).T @ g2).reshape(k.shape))
        if x.requires_grad:
            kf = np.ascontiguousarray(k.data[::-1, ::-1].transpose(0, 1, 3, 2))
            x._accumulate(_conv2d_value(g, kf))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    parents = (x, k) if bias is None else (x, k, bias)
    return _node(value, parents, backward)


def avgpool2x2(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"avgpool2x2: need NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2: spatial dims must be even, got {x.shape}")
    value = x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(g):
        if x.requires_grad:
            spread = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * np.asarray(0.25, dtype=x.dtype)
            x._accumulate(spread)

    return _node(value, (x,), backward)


def upsample2x_nearest(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample2x_nearest: need NHWC input, got {x.shape}")
    value = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        if x.requires_grad:
            n, h2, w2, c = g.shape
            x._accumulate(g.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)))

    return _node(value, (x,), backward)


# op-kind dispatch table; tests iterate over this to gradient-check everything
OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "conv2d": conv2d,
    "avgpool2x2": avgpool2x2,
    "upsample2x_nearest": upsample2x_nearest,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "sum": sum_,
    "mean": mean_,
    "square": square,
    "log": log,
    "clip": clip,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "dense": dense,
    "power": power,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch an op by kind name. Shape errors name the op and both shapes."""
    if kind not in OPS:
        raise KeyError(f"forward_op: unknown op kind {kind!r}")
    return OPS[kind](*inputs, **attrs)


# ---------------------------------------------------------------------------
# initialization and optimizer
# ---------------------------------------------------------------------------

def xavier_array(shape, seed: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ShapeError(f"xavier init: need >= 2 dims to derive fans, got {shape}")
    if len(shape) == 4:
        kh, kw, cin, cout = shape
        fan_in, fan_out = kh * kw * cin, kh * kw * cout
    else:
        fan_in = int(np.prod(shape[:-1]))
        fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_init(shape, seed: int, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6/(fan_in+fan_out)); deterministic per (shape, seed)."""
    return Tensor(xavier_array(shape, seed, dtype))


@dataclass
class SgdState:
    """Momentum SGD with weight decay and optional global gradient-norm clipping."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    clip_norm: float | None = None
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def sgd_step(params, state: SgdState) -> None:
    """v <- momentum*v + grad + wd*theta; theta <- theta - lr*v.

    When clip_norm is set, the global gradient norm across all params is
    rescaled to <= clip_norm before the update.
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {p.name!r} has no gradient")
    if state.clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
            for p in params:
                p.grad *= scale
    for p in params:
        v = state.velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        grad = p.grad
        if state.weight_decay:
            grad = grad + state.weight_decay * p.data
        v = state.momentum * v + grad
        p.data -= state.learning_rate * v
        state.velocity[p.name] = v


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# V2VT binary tensor records
# ---------------------------------------------------------------------------

_MAGIC_T = b"\x56\x32\x56\x54"  # "V2VT"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def tensor_to_bytes(arr) -> bytes:
    """Serialize an array to a V2VT record."""
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    if arr.dtype not in _CODES_DTYPE:
        arr = arr.astype(np.float32)
    code = _CODES_DTYPE[arr.dtype]
    header = _MAGIC_T + struct.pack("<BBBB", 1, code, arr.ndim, 0)
    extents = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    return header + extents + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one V2VT record starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < 8:
        raise FormatError("V2VT: truncated header")
    if buf[offset:offset + 4] != _MAGIC_T:
        raise FormatError(f"V2VT: bad magic {buf[offset:offset + 4]!r}")
    version, code, ndim, reserved = struct.unpack_from("<BBBB", buf, offset + 4)
    if version != 1:
        raise FormatError(f"V2VT: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"V2VT: unknown dtype code {code}")
    if reserved != 0:
        raise FormatError(f"V2VT: reserved byte must be 0, got {reserved}")
    pos = offset + 8
    if len(buf) - pos < 4 * ndim:
        raise FormatError("V2VT: truncated extents")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos) if ndim else ()
    pos += 4 * ndim
    dtype = _DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if len(buf) - pos < nbytes:
        raise FormatError("V2VT: truncated payload")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
    return arr, pos + nbytes


def save_tensor(path, arr) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"V2VT: {len(buf) - end} trailing bytes")
    return arr
