"""Dense rank-4 tensors with a small reverse-mode tape.

Only the operations the floor-plan network needs are provided.  Every tensor
is laid out as ``(batch, channel, height, width)``; scalars are ``1x1x1x1``.

Recording is explicit::

    with Tape() as tape:
        loss = sum_all(mul(x, x))
    tape.backward(loss)
    x.grad  # == 2 * x.data
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Tape", "backward", "no_tape",
    "conv2d", "max_pool2d", "upsample_nearest2", "add", "mul", "scale",
    "relu", "sigmoid", "concat_channels", "softmax_channels", "sum_all",
    "weighted_cross_entropy", "grad_check",
]


class Tensor:
    """A 4-D array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim != 4:
            raise ValueError(f"Tensor needs 4 extents (b, c, h, w), got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t._grad = None
        t.name = None
        return t

    @classmethod
    def scalar(cls, value: float, requires_grad: bool = False, dtype=np.float64) -> "Tensor":
        return cls(np.full((1, 1, 1, 1), value, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"


class _Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op: str, inputs: tuple, out: Tensor, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


_local = threading.local()


def _active() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications.

    A tape is bound to the thread that entered it.  Nodes are appended in
    execution order, so the list is topologically sorted by construction.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple, out: Tensor, backward: Callable) -> None:
        self.nodes.append(_Node(op, inputs, out, backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf on the tape."""
        if loss.shape != (1, 1, 1, 1):
            raise ValueError(f"backward needs a 1x1x1x1 scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            if loss.requires_grad:
                loss.grad = loss.grad + 1.0
            return
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in self._produced:
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
                else:
                    t.grad = t.grad + gi


class no_tape:
    """Suspend recording inside a ``with`` block (evaluation passes)."""

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(None)

    def __exit__(self, *exc):
        _local.stack.pop()


def backward(tape: Tape, scalar_loss: Tensor) -> None:
    tape.backward(scalar_loss)


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, bwd: Callable) -> Tensor:
    tape = _active()
    rg = tape is not None and any(t.requires_grad for t in inputs)
    res = Tensor._wrap(out, rg)
    if rg:
        tape.record(op, tuple(inputs), res, bwd)
    return res


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------- conv


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    # (b, c*kh*kw, ho*wo): the product with the weight matrix lands directly in NCHW order
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, zero_pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` (out_ch, in_ch, kh, kw) plus bias.

    ``bias`` is a tensor of shape ``(1, out_ch, 1, 1)`` or ``None``.
    """
    if stride < 1 or zero_pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and zero_pad >= 0, got {stride}, {zero_pad}")
    b, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if c != ic:
        raise ValueError(f"conv2d channel mismatch: input shape {x.shape} vs weight shape {weight.shape}")
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weight shape {weight.shape}")
    ho = (h + 2 * zero_pad - kh) // stride + 1
    wo = (w + 2 * zero_pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty: input shape {x.shape}, weight shape {weight.shape}")

    p = zero_pad
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(oc, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data.reshape(1, oc, 1)
    out = out.reshape(b, oc, ho, wo)

    def bwd(g):
        gmat = g.reshape(b, oc, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = (gmat @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=(0, 2)).reshape(1, oc, 1, 1)
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(b, c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, bwd)


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    if window != 2:
        raise ValueError(f"only 2x2 pooling is supported, got window {window}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d needs even height and width, got shape {x.shape}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    # np.argmax returns the first maximum, i.e. row-major scan order within the window
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _emit("max_pool2d", (x,), np.ascontiguousarray(out), bwd)


def upsample_nearest2(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _emit("upsample_nearest2", (x,), out, bwd)


# --------------------------------------------------------------- pointwise


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    sa, sb = a.shape, b.shape
    if sb[1] == 1 and (sa[0], sa[2], sa[3]) == (sb[0], sb[2], sb[3]):
        return True
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """``a + b``; ``b`` may be a single-channel map broadcast over ``a``'s channels."""
    bcast = _check_broadcast(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        return g, (g.sum(axis=1, keepdims=True) if bcast else g)

    return _emit("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """``a * b``; ``b`` may be a single-channel map broadcast over ``a``'s channels."""
    bcast = _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        ga = g * b.data if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g * a.data
            if bcast:
                gb = gb.sum(axis=1, keepdims=True)
        return ga, gb

    return _emit("mul", (a, b), out, bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)

    def bwd(g):
        return (g * g.dtype.type(factor),)

    return _emit("scale", (x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def bwd(g):
        return (g * mask,)

    return _emit("relu", (x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        s = t.shape
        if (s[0], s[2], s[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"concat_channels: shapes {ref} and {s} differ outside the channel axis")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def bwd(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _emit("concat_channels", tuple(tensors), out, bwd)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels(x: Tensor) -> Tensor:
    out = _softmax(x.data)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit("softmax_channels", (x,), out, bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)

    def bwd(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum_all", (x,), out, bwd)


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, class_weights: Iterable[float],
                           reduction: str = "mean", clamp: float = 1e-12) -> Tensor:
    """Per-pixel ``w[y] * -log(max(p_y, clamp))`` with ``p = softmax(logits)``.

    ``labels`` has shape ``(b, h, w)`` or ``(h, w)`` with ids in ``[0, C)``.
    ``reduction`` is ``"mean"`` (over pixels) or ``"sum"``.
    """
    b, c, h, w = logits.shape
    y = np.asarray(labels)
    if y.ndim == 2:
        y = y[None]
    if y.shape != (b, h, w):
        raise ValueError(f"labels shape {y.shape} does not match logits shape {logits.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"label ids must lie in [0, {c}), found range [{y.min()}, {y.max()}]")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    wts = np.asarray(list(class_weights), dtype=logits.dtype)
    if wts.shape != (c,):
        raise ValueError(f"expected {c} class weights, got {wts.shape[0]}")

    p = _softmax(logits.data)
    py = np.take_along_axis(p, y[:, None], axis=1)[:, 0]
    wy = wts[y]
    clamped = py < clamp
    per_px = -wy * np.log(np.maximum(py, clamp))
    norm = 1.0 / (b * h * w) if reduction == "mean" else 1.0
    out = np.full((1, 1, 1, 1), per_px.sum() * norm, dtype=logits.dtype)

    def bwd(g):
        coef = (wy * ~clamped * norm * g.reshape(()))[:, None]
        gl = p * coef
        onehot_part = np.take_along_axis(gl, y[:, None], axis=1) - coef
        np.put_along_axis(gl, y[:, None], onehot_part, axis=1)
        return (gl.astype(logits.dtype, copy=False),)

    return _emit("weighted_cross_entropy", (logits,), out, bwd)


# ------------------------------------------------------------ grad check


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Iterable[tuple] | None = None) -> float:
    """Max relative gap between tape gradients and central differences.

    ``f`` maps ``x`` to a scalar tensor and must be deterministic.  The error at
    a coordinate is ``|analytic - numeric| / max(1, |analytic|)``.  ``coords``
    restricts the check to the given index tuples (all coordinates by default).
    """
    if x.dtype != np.float64:
        raise ValueError("grad_check runs in double precision; pass a float64 tensor")
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = x.grad.copy()

    idx = list(coords) if coords is not None else list(np.ndindex(*x.shape))
    worst = 0.0
    with no_tape():
        for ix in idx:
            orig = x.data[ix]
            x.data[ix] = orig + eps
            fp = f(x).item()
            x.data[ix] = orig - eps
            fm = f(x).item()
            x.data[ix] = orig
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[ix] - num) / max(1.0, abs(analytic[ix])))
    return worst
