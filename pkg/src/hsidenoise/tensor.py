"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Operations build a
graph by recording parent tensors and a backward closure; calling
``backward()`` on a scalar walks the graph once in reverse topological
order and accumulates gradients into every tensor that requires them.

Design constraints:
  * float32 by default, float64 on request (gradient checks run in f64);
    operands of a single op must share a dtype, there is no silent
    promotion.
  * No general broadcasting. Shapes must match exactly except through
    the dedicated channel ops (add_channel_bias, scale_channels,
    channel_mean) which broadcast a [C] vector over trailing axes.
  * Every operation checks its output for NaN/Inf and raises
    NumericError naming the op. Non-finite values never propagate.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_deterministic = True


def set_deterministic(flag: bool) -> None:
    """Toggle deterministic reduction mode.

    When on (the default), reductions and tiled writes follow a fixed
    ordering so repeated runs are bit-identical. Benchmarks may switch
    it off to allow threaded BLAS scheduling.
    """
    global _deterministic
    _deterministic = bool(flag)


def deterministic_mode() -> bool:
    return _deterministic


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif not (isinstance(data, np.ndarray) and arr.dtype in (np.float32, np.float64)):
            # ndarrays keep their float dtype; lists and scalars default to f32
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        _check_finite(arr, "leaf")

    # -- graph construction -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        out._op = op
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self._op})"

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar. Gradients accumulate until zeroed."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor._result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g)
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor._result(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(-g)
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor._result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)
        out._backward = _bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor._result(-a.data, (a,), "neg")
    if out.requires_grad:
        def _bw(g):
            a._accum(-g)
        out._backward = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python constant (not a graph node)."""
    s = float(s)
    out = Tensor._result(a.data * np.asarray(s, dtype=a.data.dtype), (a,), "scale")
    if out.requires_grad:
        def _bw(g):
            a._accum(g * s)
        out._backward = _bw
    return out


def smul(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable scalar tensor (shape () or (1,))."""
    if s.data.size != 1:
        raise ShapeError(f"smul: scalar operand has shape {s.data.shape}")
    sval = s.data.reshape(())
    out = Tensor._result(a.data * sval, (a, s), "smul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g * sval)
            if s.requires_grad:
                s._accum(np.sum(g * a.data).reshape(s.data.shape))
        out._backward = _bw
    return out


# -- reductions -----------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._result(np.sum(a.data).reshape(()), (a,), "sum")
    if out.requires_grad:
        def _bw(g):
            a._accum(np.full_like(a.data, g))
        out._backward = _bw
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor._result(np.mean(a.data).reshape(()), (a,), "mean")
    if out.requires_grad:
        def _bw(g):
            a._accum(np.full_like(a.data, g / n))
        out._backward = _bw
    return out


# -- linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: need 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    out = Tensor._result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)
        out._backward = _bw
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need a 2-D tensor, got {a.data.shape}")
    out = Tensor._result(np.ascontiguousarray(a.data.T), (a,), "transpose")
    if out.requires_grad:
        def _bw(g):
            a._accum(g.T)
        out._backward = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor._result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw(g):
            a._accum(g.reshape(a.data.shape))
        out._backward = _bw
    return out


# -- channel ops (leading axis is the channel axis) -------------------------------


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[C, ...] + b[C] broadcast over all trailing axes."""
    if b.data.ndim != 1 or x.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"add_channel_bias: x {x.data.shape} vs b {b.data.shape}")
    view = b.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    out = Tensor._result(x.data + view, (x, b), "add_channel_bias")
    if out.requires_grad:
        axes = tuple(range(1, x.data.ndim))
        def _bw(g):
            if x.requires_grad:
                x._accum(g)
            if b.requires_grad:
                b._accum(g.sum(axis=axes) if axes else g)
        out._backward = _bw
    return out


def scale_channels(x: Tensor, w: Tensor) -> Tensor:
    """x[C, ...] * w[C] broadcast over all trailing axes."""
    if w.data.ndim != 1 or x.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"scale_channels: x {x.data.shape} vs w {w.data.shape}")
    view = w.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    out = Tensor._result(x.data * view, (x, w), "scale_channels")
    if out.requires_grad:
        axes = tuple(range(1, x.data.ndim))
        def _bw(g):
            if x.requires_grad:
                x._accum(g * view)
            if w.requires_grad:
                w._accum((g * x.data).sum(axis=axes) if axes else g * x.data)
        out._backward = _bw
    return out


def channel_mean(x: Tensor) -> Tensor:
    """Mean over all trailing axes of x[C, ...], returning [C]."""
    if x.data.ndim < 2:
        raise ShapeError(f"channel_mean: need at least 2 axes, got {x.data.shape}")
    axes = tuple(range(1, x.data.ndim))
    n = int(np.prod([x.data.shape[i] for i in axes]))
    out = Tensor._result(x.data.mean(axis=axes), (x,), "channel_mean")
    if out.requires_grad:
        def _bw(g):
            view = g.reshape((-1,) + (1,) * (x.data.ndim - 1))
            x._accum(np.broadcast_to(view / n, x.data.shape))
        out._backward = _bw
    return out


# -- convolutions ------------------------------------------------------------------


def _im2col3(xpad: np.ndarray, h: int, w: int) -> np.ndarray:
    # xpad: [C, h+2, w+2] -> [C*9, h*w], rows ordered (channel, ky, kx)
    c = xpad.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xpad, (3, 3), axis=(1, 2))
    # win: [C, h, w, 3, 3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * w)
    return np.ascontiguousarray(cols)


def conv2d_same(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 same-padding convolution. x[Cin,H,W], w[Cout,Cin,3,3], b[Cout]."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d_same: x must be [C,H,W], got {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d_same: w must be [Cout,Cin,3,3], got {w.data.shape}")
    cin, h, wd = x.data.shape
    cout = w.data.shape[0]
    if w.data.shape[1] != cin:
        raise ShapeError(f"conv2d_same: x has {cin} channels, w expects {w.data.shape[1]}")
    xpad = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = _im2col3(xpad, h, wd)
    wmat = w.data.reshape(cout, cin * 9)
    ymat = wmat @ cols
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeError(f"conv2d_same: b must be [Cout], got {b.data.shape}")
        ymat = ymat + b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._result(ymat.reshape(cout, h, wd), parents, "conv2d_same")
    if out.requires_grad:
        def _bw(g):
            gmat = g.reshape(cout, h * wd)
            if w.requires_grad:
                w._accum((gmat @ cols.T).reshape(w.data.shape))
            if b is not None and b.requires_grad:
                b._accum(gmat.sum(axis=1))
            if x.requires_grad:
                dcols = (wmat.T @ gmat).reshape(cin, 3, 3, h, wd)
                dxpad = np.zeros_like(xpad)
                for ky in range(3):
                    for kx in range(3):
                        dxpad[:, ky:ky + h, kx:kx + wd] += dcols[:, ky, kx]
                x._accum(dxpad[:, 1:-1, 1:-1])
        out._backward = _bw
    return out


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     mode: str = "centered") -> Tensor:
    """Per-channel 1-D convolution along the sequence axis.

    x[C,L], w[C,K]. K must be odd for centered mode. Zero padding keeps
    the output length L; causal mode pads only on the left so position t
    never sees positions > t.
    """
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"depthwise_conv1d: x {x.data.shape}, w {w.data.shape}")
    c, length = x.data.shape
    if w.data.shape[0] != c:
        raise ShapeError(f"depthwise_conv1d: {c} channels vs kernel {w.data.shape}")
    k = w.data.shape[1]
    if mode == "centered":
        if k % 2 == 0:
            raise ShapeError(f"depthwise_conv1d: centered mode needs odd K, got {k}")
        left = right = (k - 1) // 2
    elif mode == "causal":
        left, right = k - 1, 0
    else:
        raise ShapeError(f"depthwise_conv1d: unknown mode '{mode}'")
    xpad = np.pad(x.data, ((0, 0), (left, right)))
    win = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=1)  # [C, L, K]
    ydata = np.einsum("clk,ck->cl", win, w.data)
    if b is not None:
        if b.data.shape != (c,):
            raise ShapeError(f"depthwise_conv1d: b must be [C], got {b.data.shape}")
        ydata = ydata + b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor._result(np.ascontiguousarray(ydata), parents, "depthwise_conv1d")
    if out.requires_grad:
        def _bw(g):
            if w.requires_grad:
                w._accum(np.einsum("clk,cl->ck", win, g))
            if b is not None and b.requires_grad:
                b._accum(g.sum(axis=1))
            if x.requires_grad:
                dxpad = np.zeros_like(xpad)
                for j in range(k):
                    dxpad[:, j:j + length] += g * w.data[:, j:j + 1]
                dx = dxpad[:, left:left + length] if right == 0 else dxpad[:, left:-right]
                x._accum(dx)
        out._backward = _bw
    return out


# -- normalization ------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis: (x - mu) / sqrt(var + eps) * gamma + beta."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.data.shape} / beta {beta.data.shape} vs width {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = Tensor._result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        lead = tuple(range(x.data.ndim - 1))
        def _bw(g):
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=lead) if lead else g * xhat)
            if beta.requires_grad:
                beta._accum(g.sum(axis=lead) if lead else g)
            if x.requires_grad:
                dxhat = g * gamma.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accum(inv * (dxhat - m1 - xhat * m2))
        out._backward = _bw
    return out


# -- activations ---------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # stable in both tails: exp argument is never positive
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor._result(s, (a,), "sigmoid")
    if out.requires_grad:
        def _bw(g):
            a._accum(g * s * (1.0 - s))
        out._backward = _bw
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor._result(a.data * s, (a,), "silu")
    if out.requires_grad:
        def _bw(g):
            a._accum(g * s * (1.0 + a.data * (1.0 - s)))
        out._backward = _bw
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor._result(np.logaddexp(np.asarray(0, dtype=a.data.dtype), a.data),
                         (a,), "softplus")
    if out.requires_grad:
        s = _sigmoid(a.data)
        def _bw(g):
            a._accum(g * s)
        out._backward = _bw
    return out


# -- sequence reordering ---------------------------------------------------------------


def permute_flat(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder the sequence axis of x[C,L] by a permutation of range(L)."""
    if x.data.ndim != 2:
        raise ShapeError(f"permute_flat: need [C,L], got {x.data.shape}")
    perm = np.asarray(perm)
    length = x.data.shape[1]
    if perm.shape != (length,) or not np.array_equal(np.sort(perm), np.arange(length)):
        raise ShapeError(f"permute_flat: perm is not a permutation of range({length})")
    out = Tensor._result(np.ascontiguousarray(x.data[:, perm]), (x,), "permute_flat")
    if out.requires_grad:
        inv = np.empty_like(perm)
        inv[perm] = np.arange(length)
        def _bw(g):
            x._accum(g[:, inv])
        out._backward = _bw
    return out
