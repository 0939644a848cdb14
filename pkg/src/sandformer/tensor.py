"""Dense float tensors with reverse-mode autodiff on an explicit tape.

The engine is deliberately small: row-major numpy storage, a Wengert-list
tape, and exactly the operations the restoration blocks need.  Recording
is scoped by a context manager::

    with Tape() as tape:
        y = conv2d(x, w, b, padding=1)
        loss = mean(y)
    grads = backward(loss, tape)

Outside a ``with Tape()`` block every op is a pure forward function.
Tensors default to float32; building a graph from float64 inputs runs the
same rules in float64 (the finite-difference oracles rely on this).
Mixing dtypes inside one expression is an error, never a silent cast.

In-place mutation of ``Tensor.data`` while a tape referencing it is alive
is not supported (the optimizer mutates parameters only between tapes).
"""

from __future__ import annotations

import math
import os
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special as _special

from .errors import InvalidArgumentError, StateError

_FLOAT_DTYPES = (np.float32, np.float64)

# Finiteness checks after every forward op; enabled by tests/debug runs.
DEBUG_CHECK_FINITE = os.environ.get("SANDFORMER_DEBUG_FINITE", "0") not in ("", "0")


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.node_id: int | None = None

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
            raise InvalidArgumentError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of operations, consumed exactly once by backward."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise StateError("tape context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_tls = threading.local()


def _stack() -> list:
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _finite_check(out: np.ndarray, opname: str) -> None:
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values produced by {opname}")


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable,
            opname: str) -> Tensor:
    _finite_check(out_data, opname)
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None:
        tracked = any(
            t.requires_grad or (t.tape is tape and t.node_id is not None) for t in inputs
        )
        if tracked:
            tape.nodes.append(_Node(inputs, backward_fn))
            out.tape = tape
            out.node_id = len(tape.nodes) - 1
    return out


def _same_dtype(*tensors: Tensor) -> np.dtype:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise InvalidArgumentError(
                f"mixed dtypes {dt} and {t.data.dtype}; cast explicitly"
            )
    return dt


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, Tensor]:
    """Reverse sweep. Returns gradients for every requires_grad leaf.

    Also accumulates into each leaf's ``.grad``. The tape is consumed: a
    second call raises ``StateError``.
    """
    if loss.data.size != 1:
        raise InvalidArgumentError(f"loss must be scalar, got shape {loss.shape}")
    if tape.consumed:
        raise StateError("tape already consumed by a previous backward")
    if loss.tape is not tape or loss.node_id is None:
        raise InvalidArgumentError("loss was not produced on this tape")
    tape.consumed = True

    node_grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    node_grads[loss.node_id] = np.ones_like(loss.data)
    leaf_grads: dict[int, np.ndarray] = {}
    leaf_refs: dict[int, Tensor] = {}

    for idx in range(len(tape.nodes) - 1, -1, -1):
        g = node_grads[idx]
        if g is None:
            continue
        node = tape.nodes[idx]
        input_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, input_grads):
            if gi is None:
                continue
            if inp.tape is tape and inp.node_id is not None:
                j = inp.node_id
                if node_grads[j] is None:
                    node_grads[j] = gi.copy()
                else:
                    node_grads[j] += gi
            elif inp.requires_grad:
                k = id(inp)
                if k in leaf_grads:
                    leaf_grads[k] += gi
                else:
                    leaf_grads[k] = gi.copy()
                    leaf_refs[k] = inp
        node_grads[idx] = None

    result: dict[Tensor, Tensor] = {}
    for k, g in leaf_grads.items():
        leaf = leaf_refs[k]
        if leaf.grad is None:
            leaf.grad = g.copy()
        else:
            leaf.grad += g
        result[leaf] = Tensor(g, dtype=g.dtype)
    tape.nodes.clear()
    return result


# ---------------------------------------------------------------------------
# shape inference (pure functions of input shapes and static arguments)
# ---------------------------------------------------------------------------

def conv2d_out_shape(in_shape: tuple[int, int, int], w_shape: tuple[int, int, int, int],
                     stride: int, padding: int, groups: int) -> tuple[int, int, int]:
    cin, h, w = in_shape
    cout, cin_g, kh, kw = w_shape
    if kh != kw:
        raise InvalidArgumentError(f"only square kernels supported, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise InvalidArgumentError(f"bad stride/padding ({stride}, {padding})")
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise InvalidArgumentError(
            f"groups={groups} does not divide in/out channels ({cin}, {cout})"
        )
    if cin_g != cin // groups:
        raise InvalidArgumentError(
            f"weight shape {w_shape} inconsistent with input shape {in_shape} "
            f"and groups={groups}"
        )
    num_h = h + 2 * padding - kh
    num_w = w + 2 * padding - kw
    if num_h < 0 or num_w < 0:
        raise InvalidArgumentError(
            f"conv output size not positive for input {in_shape}, "
            f"kernel {kh}, stride {stride}, padding {padding}"
        )
    # floor semantics, matching deep-learning convention
    return (cout, num_h // stride + 1, num_w // stride + 1)


def pixel_unshuffle_out_shape(in_shape: tuple[int, int, int], r: int) -> tuple[int, int, int]:
    c, h, w = in_shape
    if r < 1 or h % r != 0 or w % r != 0:
        raise InvalidArgumentError(f"spatial dims {h}x{w} not divisible by factor {r}")
    return (c * r * r, h // r, w // r)


def pixel_shuffle_out_shape(in_shape: tuple[int, int, int], r: int) -> tuple[int, int, int]:
    c, h, w = in_shape
    if r < 1 or c % (r * r) != 0:
        raise InvalidArgumentError(f"channel count {c} not divisible by {r}^2")
    return (c // (r * r), h * r, w * r)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (C, Hp, Wp) -> (C, H', W', k, k) stride-subsampled view
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation over a CHW tensor (zero-padded).

    ``groups=1`` is a dense conv, ``groups=Cin`` with one output per group a
    depthwise conv; both 1x1 and 3x3 kernels take the same path.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise InvalidArgumentError(
            f"conv2d expects CHW input and OIKK weight, got {x.shape} and {w.shape}"
        )
    out_shape = conv2d_out_shape(x.shape, w.shape, stride, padding, groups)
    cout = w.shape[0]
    if b is not None:
        _same_dtype(x, w, b)
        if b.shape != (cout,):
            raise InvalidArgumentError(f"bias shape {b.shape} != ({cout},)")
    else:
        _same_dtype(x, w)
    cin, h, win_ = x.shape
    k = w.shape[2]
    _, ho, wo = out_shape

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k, stride)  # (Cin, H', W', k, k)

    depthwise = groups == cin and cout == cin
    if depthwise:
        out = np.einsum("chwab,cab->chw", win, w.data[:, 0], optimize=True)
    elif groups == 1:
        cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * k * k)
        out = (cols @ w.data.reshape(cout, -1).T).T.reshape(cout, ho, wo)
    else:
        cpg = cin // groups
        opg = cout // groups
        out = np.empty((cout, ho, wo), dtype=x.data.dtype)
        for g in range(groups):
            wg = w.data[g * opg:(g + 1) * opg].reshape(opg, -1)
            cols = win[g * cpg:(g + 1) * cpg].transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
            out[g * opg:(g + 1) * opg] = (cols @ wg.T).T.reshape(opg, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]
    out = np.ascontiguousarray(out)

    def bwd(gout: np.ndarray):
        gb = gout.sum(axis=(1, 2)) if b is not None else None
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.einsum("chw,chwab->cab", gout, win, optimize=True)[:, None]
            for a in range(k):
                for c_ in range(k):
                    gxp[:, a:a + stride * ho:stride, c_:c_ + stride * wo:stride] += (
                        gout * w.data[:, 0, a, c_][:, None, None]
                    )
        elif groups == 1:
            g2 = gout.reshape(cout, -1)
            cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * k * k)
            gw = (g2 @ cols).reshape(w.shape)
            # gx[:, i*s+a, j*s+c] += sum_o g[o,i,j] * w[o, :, a, c]
            gcontrib = np.tensordot(w.data, gout, axes=([0], [0]))  # (Cin,k,k,H',W')
            for a in range(k):
                for c_ in range(k):
                    gxp[:, a:a + stride * ho:stride, c_:c_ + stride * wo:stride] += (
                        gcontrib[:, a, c_]
                    )
        else:
            cpg = cin // groups
            opg = cout // groups
            gw = np.empty_like(w.data)
            for g in range(groups):
                go = gout[g * opg:(g + 1) * opg].reshape(opg, -1)
                cols = win[g * cpg:(g + 1) * cpg].transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
                gw[g * opg:(g + 1) * opg] = (go @ cols).reshape(opg, cpg, k, k)
                gc = np.tensordot(
                    w.data[g * opg:(g + 1) * opg], gout[g * opg:(g + 1) * opg],
                    axes=([0], [0]),
                )
                for a in range(k):
                    for c_ in range(k):
                        gxp[g * cpg:(g + 1) * cpg,
                            a:a + stride * ho:stride,
                            c_:c_ + stride * wo:stride] += gc[:, a, c_]
        gx = gxp[:, padding:padding + h, padding:padding + win_] if padding else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(gb)
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, bwd, "conv2d")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    _same_dtype(a, b)
    out = a.data @ b.data

    def bwd(g):
        return [g @ b.data.T, a.data.T @ g]

    return _record(out, (a, b), bwd, "matmul")


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise InvalidArgumentError(f"transpose2d expects a matrix, got shape {a.shape}")
    out = np.ascontiguousarray(a.data.T)

    def bwd(g):
        return [np.ascontiguousarray(g.T)]

    return _record(out, (a,), bwd, "transpose2d")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise InvalidArgumentError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)
    old = x.shape

    def bwd(g):
        return [g.reshape(old)]

    return _record(out, (x,), bwd, "reshape")


# ---------------------------------------------------------------------------
# normalization and attention helpers
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise InvalidArgumentError(f"axis {axis} out of bounds for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return [y * (g - (g * y).sum(axis=axis, keepdims=True))]

    return _record(y, (x,), bwd, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Channel-axis normalization per spatial location with per-channel affine."""
    if eps <= 0:
        raise InvalidArgumentError("eps must be > 0")
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"layer_norm expects CHW, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidArgumentError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},)"
        )
    _same_dtype(x, gamma, beta)
    mu = x.data.mean(axis=0, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(1, 2))
        dbeta = g.sum(axis=(1, 2))
        dxhat = g * gamma.data[:, None, None]
        # standard layer-norm backward over axis 0 (N = C)
        dx = inv / c * (
            c * dxhat
            - dxhat.sum(axis=0, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True)
        )
        return [dx, dgamma, dbeta]

    return _record(y, (x, gamma, beta), bwd, "layer_norm")


def l2norm_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row of a matrix to unit L2 norm (eps-damped)."""
    if x.data.ndim != 2:
        raise InvalidArgumentError(f"l2norm_rows expects a matrix, got {x.shape}")
    r = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True)
                + np.asarray(eps, dtype=x.data.dtype))
    y = x.data / r

    def bwd(g):
        dot = (g * x.data).sum(axis=1, keepdims=True)
        return [g / r - x.data * (dot / (r * r * r))]

    return _record(y, (x,), bwd, "l2norm_rows")


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------

def _binary(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")
    _same_dtype(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: [g, g], "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: [g, -g], "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b, "mul")
    return _record(a.data * b.data, (a, b), lambda g: [g * b.data, g * a.data], "mul")


def scale(x: Tensor, s: "float | Tensor") -> Tensor:
    """Scalar-tensor product; the one sanctioned broadcast.

    ``s`` may be a plain float (constant) or a single-element Tensor
    (differentiable, e.g. a learnable temperature).
    """
    if isinstance(s, Tensor):
        if s.size != 1:
            raise InvalidArgumentError(f"scale factor must be a scalar, got shape {s.shape}")
        _same_dtype(x, s)
        sval = s.data.reshape(())
        out = x.data * sval

        def bwd(g):
            return [g * sval, np.asarray((g * x.data).sum(), dtype=x.data.dtype).reshape(s.shape)]

        return _record(out, (x, s), bwd, "scale")
    sval = x.data.dtype.type(s)
    return _record(x.data * sval, (x,), lambda g: [g * sval], "scale")


def sigmoid(x: Tensor) -> Tensor:
    y = _special.expit(x.data).astype(x.data.dtype, copy=False)
    return _record(y, (x,), lambda g: [g * y * (1.0 - y)], "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0), (x,), lambda g: [g * mask], "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU (no tanh approximation)."""
    phi = 0.5 * (1.0 + _special.erf(x.data * _INV_SQRT2))
    y = (x.data * phi).astype(x.data.dtype, copy=False)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return [(g * (phi + x.data * pdf)).astype(x.data.dtype, copy=False)]

    return _record(y, (x,), bwd, "gelu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: [g * y], "exp")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _record(y, (x,), lambda g: [g * (0.5 / y)], "sqrt")


_POINTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_POINTWISE_UNARY = {"sigmoid": sigmoid, "relu": relu, "gelu": gelu, "exp": exp, "sqrt": sqrt}


def pointwise(kind: str, *operands) -> Tensor:
    """Dispatch by name; the spec-level entry point for elementwise ops."""
    if kind in _POINTWISE_BINARY:
        if len(operands) != 2:
            raise InvalidArgumentError(f"{kind} takes 2 operands")
        return _POINTWISE_BINARY[kind](*operands)
    if kind in _POINTWISE_UNARY:
        if len(operands) != 1:
            raise InvalidArgumentError(f"{kind} takes 1 operand")
        return _POINTWISE_UNARY[kind](*operands)
    if kind == "scale":
        if len(operands) != 2:
            raise InvalidArgumentError("scale takes (tensor, scalar)")
        return scale(*operands)
    raise InvalidArgumentError(f"unknown pointwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and rearrangements
# ---------------------------------------------------------------------------

def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return _record(out, (x,), lambda g: [np.broadcast_to(g, x.shape).astype(x.data.dtype)],
                   "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    return _record(out, (x,),
                   lambda g: [np.broadcast_to(g / n, x.shape).astype(x.data.dtype)],
                   "mean")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"global_avg_pool expects CHW, got {x.shape}")
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2)).reshape(c, 1, 1)

    def bwd(g):
        return [np.broadcast_to(g / (h * w), x.shape).astype(x.data.dtype)]

    return _record(out, (x,), bwd, "global_avg_pool")


def mul_channels(x: Tensor, s: Tensor) -> Tensor:
    """Per-channel rescale of a CHW map by an (C,1,1) factor."""
    if x.data.ndim != 3 or s.shape != (x.shape[0], 1, 1):
        raise InvalidArgumentError(
            f"mul_channels: factor shape {s.shape} incompatible with map {x.shape}"
        )
    _same_dtype(x, s)
    out = x.data * s.data

    def bwd(g):
        return [g * s.data, (g * x.data).sum(axis=(1, 2), keepdims=True)]

    return _record(out, (x, s), bwd, "mul_channels")


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise InvalidArgumentError("concat_channels of nothing")
    _same_dtype(*parts)
    for p in parts[1:]:
        if p.shape[1:] != parts[0].shape[1:]:
            raise InvalidArgumentError(
                f"concat_channels: trailing dims differ ({parts[0].shape} vs {p.shape})"
            )
    sizes = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return [g[offsets[i]:offsets[i + 1]] for i in range(len(sizes))]

    return _record(out, tuple(parts), bwd, "concat_channels")


def split_channels(x: Tensor, parts: int) -> tuple[Tensor, ...]:
    """Split the leading axis into `parts` equal chunks (each its own node)."""
    c = x.shape[0]
    if parts < 1 or c % parts != 0:
        raise InvalidArgumentError(f"cannot split leading dim {c} into {parts} parts")
    step = c // parts
    outs = []
    for i in range(parts):
        lo = i * step

        def bwd(g, lo=lo):
            gx = np.zeros_like(x.data)
            gx[lo:lo + step] = g
            return [gx]

        outs.append(_record(np.ascontiguousarray(x.data[lo:lo + step]), (x,), bwd, "split"))
    return tuple(outs)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    c, h, w = x.shape
    out_shape = pixel_unshuffle_out_shape(x.shape, r)
    out = np.ascontiguousarray(
        x.data.reshape(c, h // r, r, w // r, r).transpose(0, 2, 4, 1, 3).reshape(out_shape)
    )

    def bwd(g):
        return [np.ascontiguousarray(
            g.reshape(c, r, r, h // r, w // r).transpose(0, 3, 1, 4, 2).reshape(c, h, w)
        )]

    return _record(out, (x,), bwd, "pixel_unshuffle")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    c, h, w = x.shape
    out_shape = pixel_shuffle_out_shape(x.shape, r)
    co = out_shape[0]
    out = np.ascontiguousarray(
        x.data.reshape(co, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(out_shape)
    )

    def bwd(g):
        return [np.ascontiguousarray(
            g.reshape(co, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c, h, w)
        )]

    return _record(out, (x,), bwd, "pixel_shuffle")


_REDUCE_RESHAPE = {
    "global_avg_pool": global_avg_pool,
    "mean": mean,
    "sum": reduce_sum,
    "concat_channels": concat_channels,
    "split_channels": split_channels,
    "pixel_unshuffle": pixel_unshuffle,
    "pixel_shuffle": pixel_shuffle,
    "transpose2d": transpose2d,
    "reshape": reshape,
}


def reduce_reshape(kind: str, *args):
    if kind not in _REDUCE_RESHAPE:
        raise InvalidArgumentError(f"unknown reduce_reshape kind {kind!r}")
    return _REDUCE_RESHAPE[kind](*args)


def const(value, like: Tensor | None = None, dtype=None) -> Tensor:
    """Non-differentiable constant, matching `like`'s shape/dtype if given."""
    if like is not None:
        return Tensor(np.full(like.shape, value, dtype=dtype or like.data.dtype))
    return Tensor(np.asarray(value, dtype=dtype or np.float32))
