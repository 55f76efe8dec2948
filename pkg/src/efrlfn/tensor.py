"""Rank-4 tensor kernel with reverse-mode differentiation.

Data lives in NCHW numpy buffers (float64 by default, float32 for speed
builds). Differentiable ops record a backward closure on their output;
``Tensor.backward()`` on a scalar result replays the graph in reverse
topological order and accumulates gradients onto every leaf created with
``requires_grad=True``.

Convolution follows the cross-correlation convention (no kernel flip)
with zero padding. Its accumulation order per output element is fixed:
bias first, then input-channel-major / kernel-row / kernel-column, so
results are bit-reproducible across runs and match a straight nested-loop
evaluation of the same definition in the same precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "conv2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "global_avg_pool",
    "max_pool2d",
    "bilinear_resize",
    "activation",
    "elementwise",
    "scalar_reduce",
    "ACTIVATIONS",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class no_grad:
    """Context manager disabling graph recording (inference / benchmarks)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


_GRAD_ENABLED = True


class Tensor:
    """Numeric array with optional recorded backward rule.

    Treat tensors produced by ops as immutable; graph recording and
    backward are single-threaded.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float64, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float64, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    # ---- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---- autodiff engine ---------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from this scalar.

        Repeated calls accumulate; use ``zero_grad`` between steps. A graph
        with no requires_grad leaves is a silent no-op.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                node._backward(g, flowing)
            else:
                node.grad = g if node.grad is None else node.grad + g

    # ---- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub")

    def __rsub__(self, other):
        return _binary(_wrap(other, self.dtype), self, "sub")

    def __mul__(self, other):
        return _binary(self, other, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data)
        _record(out, (self,), lambda g, acc: _send(acc, self, -g))
        return out

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        out = Tensor(np.abs(self.data))
        _record(out, (self,), lambda g, acc: _send(acc, self, g * sign))
        return out

    def sqrt(self) -> "Tensor":
        root = np.sqrt(self.data)
        out = Tensor(root)
        _record(out, (self,), lambda g, acc: _send(acc, self, g * (0.5 / root)))
        return out

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = Tensor(t)
        _record(out, (self,), lambda g, acc: _send(acc, self, g * (1.0 - t * t)))
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0))
        _record(out, (self,), lambda g, acc: _send(acc, self, g * mask))
        return out

    def sigmoid(self) -> "Tensor":
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(s)
        _record(out, (self,), lambda g, acc: _send(acc, self, g * (s * (1.0 - s))))
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out = Tensor(self.data.reshape(shape))
        _record(out, (self,), lambda g, acc: _send(acc, self, g.reshape(old)))
        return out

    def sum(self) -> "Tensor":
        out = Tensor(np.asarray(self.data.sum(dtype=self.data.dtype)))
        _record(
            out,
            (self,),
            lambda g, acc: _send(acc, self, np.broadcast_to(g, self.data.shape).copy()),
        )
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        if n == 0:
            raise ShapeError("mean of an empty tensor is undefined")
        out = Tensor(np.asarray(self.data.mean(dtype=self.data.dtype)))
        _record(
            out,
            (self,),
            lambda g, acc: _send(
                acc, self, np.broadcast_to(g / n, self.data.shape).copy()
            ),
        )
        return out


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _record(out: Tensor, parents: tuple[Tensor, ...], fn: Callable) -> None:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn


def _send(acc: dict, tensor: Tensor, contribution: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    key = id(tensor)
    if key in acc:
        acc[key] = acc[key] + contribution
    else:
        acc[key] = contribution


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a: Tensor, b, kind: str) -> Tensor:
    b = _wrap(b, a.dtype)
    try:
        if kind == "add":
            data = a.data + b.data
        elif kind == "sub":
            data = a.data - b.data
        else:
            data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(
            f"{kind}: shapes {a.shape} and {b.shape} are not compatible"
        ) from exc
    out = Tensor(data)

    if kind == "mul":
        def fn(g, acc, a=a, b=b):
            _send(acc, a, _unbroadcast(g * b.data, a.data.shape))
            _send(acc, b, _unbroadcast(g * a.data, b.data.shape))
    elif kind == "sub":
        def fn(g, acc, a=a, b=b):
            _send(acc, a, _unbroadcast(g, a.data.shape))
            _send(acc, b, _unbroadcast(-g, b.data.shape))
    else:
        def fn(g, acc, a=a, b=b):
            _send(acc, a, _unbroadcast(g, a.data.shape))
            _send(acc, b, _unbroadcast(g, b.data.shape))

    _record(out, (a, b), fn)
    return out


# ---- same-shape elementwise surface -------------------------------------------


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Same-shape elementwise add / mul / sub."""
    if kind not in ("add", "mul", "sub"):
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind}: shapes {a.shape} != {b.shape}")
    return _binary(a, b, kind)


def scalar_reduce(x: Tensor, kind: str) -> Tensor:
    """Full reduction to a scalar tensor (fixed, deterministic order)."""
    if kind == "sum":
        return x.sum()
    if kind == "mean":
        return x.mean()
    raise ValueError(f"unknown reduction kind {kind!r}")


# ---- activations -------------------------------------------------------------


def _shifted_sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid() + (-0.5)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": Tensor.tanh,
    "relu": Tensor.relu,
    "shifted_sigmoid": _shifted_sigmoid,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
    return fn(x)


# ---- structured ops ----------------------------------------------------------


def _require_rank4(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 NCHW, got shape {x.shape}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output spatial size is ``(h + 2*padding - kh) // stride + 1``. Per
    output element the sum is accumulated bias-first, then over
    (in-channel, kernel-row, kernel-col) in that order.
    """
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d padding must be >= 0, got {padding}")
    if wcin != cin:
        raise ShapeError(
            f"conv2d input channels ({cin}) != weight input channels ({wcin})"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(
            f"conv2d bias must have shape ({cout},), got {bias.shape}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    dtype = x.data.dtype
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data

    wd = weight.data.astype(dtype, copy=False)
    out = np.empty((n, cout, oh, ow), dtype=dtype)
    if bias is not None:
        out[:] = bias.data.astype(dtype, copy=False).reshape(1, cout, 1, 1)
    else:
        out[:] = 0.0
    for ci in range(cin):
        plane = xp[:, ci]
        for i in range(kh):
            rows = plane[:, i : i + stride * (oh - 1) + 1 : stride]
            for j in range(kw):
                patch = rows[:, :, j : j + stride * (ow - 1) + 1 : stride]
                out += wd[:, ci, i, j].reshape(1, cout, 1, 1) * patch[:, None]

    result = Tensor(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def fn(g, acc, x=x, weight=weight, bias=bias, xp_shape=xp.shape):
        wd = weight.data
        if x.requires_grad:
            gxp = np.zeros(xp_shape, dtype=g.dtype)
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        gxp[
                            :,
                            ci,
                            i : i + stride * (oh - 1) + 1 : stride,
                            j : j + stride * (ow - 1) + 1 : stride,
                        ] += np.tensordot(g, wd[:, ci, i, j], axes=([1], [0]))
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            _send(acc, x, gxp)
        if weight.requires_grad:
            gw = np.empty(weight.shape, dtype=g.dtype)
            for ci in range(cin):
                plane = xp[:, ci]
                for i in range(kh):
                    rows = plane[:, i : i + stride * (oh - 1) + 1 : stride]
                    for j in range(kw):
                        patch = rows[:, :, j : j + stride * (ow - 1) + 1 : stride]
                        gw[:, ci, i, j] = np.tensordot(
                            g, patch, axes=([0, 2, 3], [0, 1, 2])
                        )
            _send(acc, weight, gw)
        if bias is not None and bias.requires_grad:
            _send(acc, bias, g.sum(axis=(0, 2, 3)))

    _record(result, parents, fn)
    return result


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: (n, c*r^2, h, w) -> (n, c, h*r, w*r).

    out[n, c, y*r+i, x*r+j] = in[n, c*r^2 + i*r + j, y, x].
    """
    _require_rank4(x, "pixel_shuffle input")
    n, c, h, w = x.shape
    if r < 1:
        raise ShapeError(f"pixel_shuffle factor must be >= 1, got {r}")
    if c % (r * r) != 0:
        raise ShapeError(
            f"pixel_shuffle needs channels divisible by r^2={r * r}, got {c}"
        )
    co = c // (r * r)
    data = (
        x.data.reshape(n, co, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, co, h * r, w * r)
    )
    out = Tensor(np.ascontiguousarray(data))

    def fn(g, acc, x=x):
        gi = (
            g.reshape(n, co, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w)
        )
        _send(acc, x, np.ascontiguousarray(gi))

    _record(out, (x,), fn)
    return out


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth, exact inverse of ``pixel_shuffle``."""
    _require_rank4(x, "pixel_unshuffle input")
    n, c, h, w = x.shape
    if r < 1:
        raise ShapeError(f"pixel_unshuffle factor must be >= 1, got {r}")
    if h % r != 0 or w % r != 0:
        raise ShapeError(
            f"pixel_unshuffle needs spatial dims divisible by {r}, got {h}x{w}"
        )
    ho, wo = h // r, w // r
    data = (
        x.data.reshape(n, c, ho, r, wo, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, ho, wo)
    )
    out = Tensor(np.ascontiguousarray(data))

    def fn(g, acc, x=x):
        gi = (
            g.reshape(n, c, r, r, ho, wo)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, h, w)
        )
        _send(acc, x, np.ascontiguousarray(gi))

    _record(out, (x,), fn)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over each spatial plane: (n, c, h, w) -> (n, c, 1, 1)."""
    _require_rank4(x, "global_avg_pool input")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"global_avg_pool needs non-empty planes, got {h}x{w}")
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=x.data.dtype))

    def fn(g, acc, x=x):
        _send(acc, x, np.broadcast_to(g / (h * w), x.data.shape).copy())

    _record(out, (x,), fn)
    return out


def max_pool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling; ties resolve to the first (row-major) window position."""
    _require_rank4(x, "max_pool2d input")
    n, c, h, w = x.shape
    if kernel < 1 or stride < 1:
        raise ShapeError(f"max_pool2d kernel/stride must be >= 1, got {kernel}/{stride}")
    if h < kernel or w < kernel:
        raise ShapeError(
            f"max_pool2d kernel {kernel} exceeds input {h}x{w}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0].copy())

    def fn(g, acc, x=x):
        gi = np.zeros_like(x.data, dtype=g.dtype)
        ys = (np.arange(oh) * stride)[None, None, :, None] + (arg // kernel)
        xs = (np.arange(ow) * stride)[None, None, None, :] + (arg % kernel)
        ns = np.arange(n)[:, None, None, None]
        cs = np.arange(c)[None, :, None, None]
        np.add.at(gi, (ns, cs, ys, xs), g)
        _send(acc, x, gi)

    _record(out, (x,), fn)
    return out


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel-centre alignment, edge clamped."""
    _require_rank4(x, "bilinear_resize input")
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize output dims must be >= 1, got {out_h}x{out_w}")

    def grid(out_n, in_n):
        src = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
        src = np.clip(src, 0.0, in_n - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, in_n - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = grid(out_h, h)
    x0, x1, fx = grid(out_w, w)
    fy = fy[:, None]
    fx = fx[None, :]
    w00 = ((1 - fy) * (1 - fx)).astype(x.data.dtype)
    w01 = ((1 - fy) * fx).astype(x.data.dtype)
    w10 = (fy * (1 - fx)).astype(x.data.dtype)
    w11 = (fy * fx).astype(x.data.dtype)

    d = x.data
    data = (
        w00 * d[:, :, y0[:, None], x0[None, :]]
        + w01 * d[:, :, y0[:, None], x1[None, :]]
        + w10 * d[:, :, y1[:, None], x0[None, :]]
        + w11 * d[:, :, y1[:, None], x1[None, :]]
    )
    out = Tensor(data)

    def fn(g, acc, x=x):
        gi = np.zeros_like(x.data, dtype=g.dtype)
        for wgt, ys, xs in (
            (w00, y0, x0),
            (w01, y0, x1),
            (w10, y1, x0),
            (w11, y1, x1),
        ):
            np.add.at(
                gi,
                (slice(None), slice(None), ys[:, None], xs[None, :]),
                g * wgt,
            )
        _send(acc, x, gi)

    _record(out, (x,), fn)
    return out
