"""Reverse-mode automatic differentiation on numpy arrays.

Operations executed under an active :class:`Tape` append a record (inputs,
output, per-input backward rules).  Walking the tape in reverse accumulates
vector-Jacobian products.  Every backward rule is itself expressed through
the public ops, so a backward pass run with ``create_graph=True`` is recorded
too and can be differentiated again -- that is how a loss containing an
input-gradient norm gets optimized.

Production code runs in float32.  A Tensor built from an explicit float64
ndarray stays float64, which the finite-difference test oracles rely on.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

LRELU_ALPHA = 0.2


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class ParameterError(ValueError):
    """An argument lies outside the operation's domain."""


class ContractError(RuntimeError):
    """A caller-facing contract was violated (e.g. non-scalar loss)."""


class Tensor:
    """N-dimensional float array, optionally participating in differentiation.

    ``tracked`` marks a leaf whose gradient should be reported; ``needs_grad``
    is set on any tensor lying on a recorded path to a tracked leaf.
    """

    __slots__ = ("data", "tracked", "needs_grad", "tid")
    _ids = itertools.count()

    def __init__(self, data, tracked: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        keep64 = getattr(data, "dtype", None) == np.float64
        arr = np.asarray(data, dtype=np.float64 if keep64 else DEFAULT_DTYPE)
        self.data = arr
        self.tracked = tracked
        self.needs_grad = tracked
        self.tid = next(Tensor._ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detached(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

    # sugar used in losses and tests
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class GradientMap(dict):
    """Maps parameter Tensor -> gradient Tensor of identical shape."""


_TAPE_STACK: list["Tape"] = []
_GRAD_ENABLED: list[bool] = [True]


class no_grad:
    """Context that suppresses tape recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


class _use_tape:
    def __init__(self, tape: "Tape"):
        self.tape = tape

    def __enter__(self):
        _TAPE_STACK.append(self.tape)
        _GRAD_ENABLED.append(True)
        return self.tape

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        _GRAD_ENABLED.pop()
        return False


class Tape:
    """Ordered record of executed operations, replayable backwards.

    Records are appended at execution time, so inputs always precede the
    operations consuming them; the backward walk visits each record once.
    """

    def __init__(self):
        # (output id, input tensors, per-input vjp callables, op name)
        self.records: list[tuple[int, tuple[Tensor, ...], tuple, str]] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def tracked_leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor] | None = None,
                  create_graph: bool = False) -> GradientMap:
        """Accumulate d(loss)/d(t) for each target tensor.

        With ``create_graph=True`` the vector-Jacobian products are recorded
        on this tape, so the returned gradients are differentiable in turn.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        targets = self.tracked_leaves() if wrt is None else list(wrt)
        target_ids = {t.tid for t in targets}

        # only walk ops whose value actually depends on a target
        upto = len(self.records)
        relevant = set(target_ids)
        for out_tid, inputs, _, _ in self.records[:upto]:
            if any(t.tid in relevant for t in inputs):
                relevant.add(out_tid)

        grads: dict[int, Tensor] = {loss.tid: Tensor(np.ones_like(loss.data))}
        ctx = _use_tape(self) if create_graph else no_grad()
        with ctx:
            for i in range(upto - 1, -1, -1):
                out_tid, inputs, vjps, _ = self.records[i]
                upstream = grads.pop(out_tid, None)
                if upstream is None:
                    continue
                for inp, vjp in zip(inputs, vjps):
                    if vjp is None or inp.tid not in relevant:
                        continue
                    g = vjp(upstream)
                    prev = grads.get(inp.tid)
                    grads[inp.tid] = g if prev is None else add(prev, g)

        out = GradientMap()
        for t in targets:
            g = grads.get(t.tid)
            out[t] = g if g is not None else Tensor(np.zeros_like(t.data))
        return out


def backward(loss: Tensor, tape: Tape, wrt: Sequence[Tensor] | None = None,
             create_graph: bool = False) -> GradientMap:
    """Gradient of a scalar loss for every tracked parameter on the tape."""
    return tape.gradients(loss, wrt=wrt, create_graph=create_graph)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _live(*inputs: Tensor) -> bool:
    return bool(_TAPE_STACK) and _GRAD_ENABLED[-1] and any(t.needs_grad for t in inputs)


def _emit(out: Tensor, inputs: tuple[Tensor, ...], vjps: tuple, name: str) -> Tensor:
    tape = _TAPE_STACK[-1]
    out.needs_grad = True
    tape.records.append((out.tid, inputs, vjps, name))
    for t in inputs:
        if t.tracked:
            tape._leaves.setdefault(t.tid, t)
    return out


def _unbroadcast(u: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum a broadcast gradient back down to ``shape`` (differentiably)."""
    if u.shape == shape:
        return u
    extra = u.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        extra + i for i, n in enumerate(shape) if n == 1 and u.shape[extra + i] != 1
    )
    s = reduce_sum(u, axis=axes, keepdims=False) if axes else u
    return reshape(s, shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data + b.data)
    if _live(a, b):
        va = (lambda u: _unbroadcast(u, a.shape)) if a.needs_grad else None
        vb = (lambda u: _unbroadcast(u, b.shape)) if b.needs_grad else None
        _emit(out, (a, b), (va, vb), "add")
    return out


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data - b.data)
    if _live(a, b):
        va = (lambda u: _unbroadcast(u, a.shape)) if a.needs_grad else None
        vb = (lambda u: _unbroadcast(neg(u), b.shape)) if b.needs_grad else None
        _emit(out, (a, b), (va, vb), "sub")
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data * b.data)
    if _live(a, b):
        va = (lambda u: _unbroadcast(mul(u, b), a.shape)) if a.needs_grad else None
        vb = (lambda u: _unbroadcast(mul(u, a), b.shape)) if b.needs_grad else None
        _emit(out, (a, b), (va, vb), "mul")
    return out


def neg(x) -> Tensor:
    x = _coerce(x)
    out = Tensor(-x.data)
    if _live(x):
        _emit(out, (x,), (lambda u: neg(u),), "neg")
    return out


def smul(x, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    x = _coerce(x)
    out = Tensor(x.data * c)
    if _live(x):
        _emit(out, (x,), (lambda u: smul(u, c),), "smul")
    return out


def sadd(x, c: float) -> Tensor:
    """Add a python scalar constant."""
    x = _coerce(x)
    out = Tensor(x.data + c)
    if _live(x):
        _emit(out, (x,), (lambda u: u,), "sadd")
    return out


def square(x) -> Tensor:
    x = _coerce(x)
    return mul(x, x)


def reciprocal(x) -> Tensor:
    x = _coerce(x)
    out = Tensor(1.0 / x.data)
    if _live(x):
        _emit(out, (x,), (lambda u: neg(mul(u, mul(out, out))),), "reciprocal")
    return out


def log(x) -> Tensor:
    x = _coerce(x)
    if np.any(x.data <= 0):
        raise ParameterError("log requires strictly positive input")
    out = Tensor(np.log(x.data))
    if _live(x):
        _emit(out, (x,), (lambda u: mul(u, reciprocal(x)),), "log")
    return out


def sqrt(x) -> Tensor:
    x = _coerce(x)
    if np.any(x.data < 0):
        raise ParameterError("sqrt requires non-negative input")
    out = Tensor(np.sqrt(x.data))
    if _live(x):
        # clamp keeps the rule finite at exactly zero (true derivative diverges)
        def vjp(u):
            return mul(u, smul(reciprocal(clamp_min(out, 1e-12)), 0.5))
        _emit(out, (x,), (vjp,), "sqrt")
    return out


def clamp_min(x, c: float) -> Tensor:
    x = _coerce(x)
    out = Tensor(np.maximum(x.data, c))
    if _live(x):
        mask = Tensor((x.data >= c).astype(x.data.dtype))
        _emit(out, (x,), (lambda u: mul(u, mask),), "clamp_min")
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x) -> Tensor:
    x = _coerce(x)
    out = Tensor(np.maximum(x.data, 0))
    if _live(x):
        mask = Tensor((x.data > 0).astype(x.data.dtype))
        _emit(out, (x,), (lambda u: mul(u, mask),), "relu")
    return out


def lrelu(x, alpha: float = LRELU_ALPHA) -> Tensor:
    x = _coerce(x)
    slopes = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(alpha))
    out = Tensor(x.data * slopes)
    if _live(x):
        slopes_t = Tensor(slopes)
        _emit(out, (x,), (lambda u: mul(u, slopes_t),), "lrelu")
    return out


def tanh_act(x) -> Tensor:
    x = _coerce(x)
    out = Tensor(np.tanh(x.data))
    if _live(x):
        # d tanh = 1 - y^2, kept differentiable through the saved output
        _emit(out, (x,), (lambda u: mul(u, sadd(neg(mul(out, out)), 1.0)),), "tanh")
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    if _live(x):
        src = x.shape
        _emit(out, (x,), (lambda u: reshape(u, src),), "reshape")
    return out


def permute(x, axes: tuple[int, ...]) -> Tensor:
    x = _coerce(x)
    out = Tensor(np.transpose(x.data, axes))
    if _live(x):
        inv = tuple(np.argsort(axes))
        _emit(out, (x,), (lambda u: permute(u, inv),), "permute")
    return out


def transpose(x) -> Tensor:
    x = _coerce(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {x.shape}")
    return permute(x, (1, 0))


def broadcast_to(x, shape) -> Tensor:
    x = _coerce(x)
    shape = tuple(shape)
    out = Tensor(np.ascontiguousarray(np.broadcast_to(x.data, shape)))
    if _live(x):
        src = x.shape
        _emit(out, (x,), (lambda u: _unbroadcast(u, src),), "broadcast_to")
    return out


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims, dtype=x.data.dtype))
    if _live(x):
        src = x.shape

        def vjp(u):
            if axis is None:
                kshape = (1,) * len(src)
            else:
                ax = (axis,) if isinstance(axis, int) else tuple(axis)
                ax = tuple(a % len(src) for a in ax)
                kshape = tuple(1 if i in ax else n for i, n in enumerate(src))
            return broadcast_to(reshape(u, kshape), src)

        _emit(out, (x,), (vjp,), "sum")
    return out


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    if x.size == 0:
        raise ParameterError("mean of an empty tensor")
    if axis is None:
        count = x.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a % x.ndim] for a in ax]))
    return smul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def l2_norm(x, axes=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axes`` (all axes when None)."""
    x = _coerce(x)
    if x.size == 0:
        raise ParameterError("norm of an empty tensor")
    return sqrt(reduce_sum(mul(x, x), axis=axes, keepdims=keepdims))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    if _live(a, b):
        va = (lambda u: matmul(u, transpose(b))) if a.needs_grad else None
        vb = (lambda u: matmul(transpose(a), u)) if b.needs_grad else None
        _emit(out, (a, b), (va, vb), "matmul")
    return out


def dense(x, w, b) -> Tensor:
    """Affine layer: x[B,I] @ w[I,O] + b[O]."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense shapes do not conform: x{x.shape} vs w{w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense bias shape {b.shape} does not match w{w.shape}")
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# windowed gather/scatter: the strided-convolution work horses


def pad1(x, left: int, right: int) -> Tensor:
    """Zero-pad along axis 1 of a [B, L, C] tensor."""
    x = _coerce(x)
    out = Tensor(np.pad(x.data, ((0, 0), (left, right), (0, 0))))
    if _live(x):
        L = x.shape[1]
        _emit(out, (x,), (lambda u: slice1(u, left, left + L),), "pad1")
    return out


def slice1(x, start: int, stop: int) -> Tensor:
    x = _coerce(x)
    out = Tensor(x.data[:, start:stop])
    if _live(x):
        L = x.shape[1]
        _emit(out, (x,), (lambda u: pad1(u, start, L - stop),), "slice1")
    return out


def window_gather(x, width: int, stride: int) -> Tensor:
    """[B, L, C] -> [B, T, C, width] of overlapping strided windows.

    The window axis comes last (numpy's native sliding-window layout), which
    keeps the materializing copy sequential along the input.
    """
    x = _coerce(x)
    view = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=1)
    data = np.ascontiguousarray(view[:, ::stride])
    out = Tensor(data)
    if _live(x):
        L = x.shape[1]
        _emit(out, (x,), (lambda u: window_scatter(u, stride, L),), "window_gather")
    return out


def window_scatter(w, stride: int, length: int) -> Tensor:
    """Adjoint of :func:`window_gather`: overlap-add [B, T, C, width] windows
    back to [B, length, C].

    Window position j = a*stride + r lands at absolute index (t+a)*stride + r,
    so grouping by the block index a turns the overlap-add into a handful of
    contiguous block additions; one small transposed copy restores [B, L, C].
    """
    w = _coerce(w)
    B, T, C, width = w.shape
    nblocks = -(-width // stride)
    buf = np.zeros((B, T + nblocks, C, stride), dtype=w.data.dtype)
    wd = w.data
    for a in range(nblocks):
        seg = wd[:, :, :, a * stride:(a + 1) * stride]
        buf[:, a:a + T, :, :seg.shape[3]] += seg
    data = buf.transpose(0, 1, 3, 2).reshape(B, (T + nblocks) * stride, C)[:, :length, :]
    out = Tensor(data)
    if _live(w):
        _emit(out, (w,), (lambda u: window_gather(u, width, stride),), "window_scatter")
    return out


def _flat_length_index(idx: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Row-major flat indices for a per-position axis-1 index array."""
    B, L, C = shape
    full = np.broadcast_to(idx, (B, idx.shape[1], C))
    bi = np.arange(B)[:, None, None] * (L * C)
    ci = np.arange(C)[None, None, :]
    return (full * C + bi + ci).ravel()


def take_length(x, idx: np.ndarray) -> Tensor:
    """Gather along axis 1 with a constant integer index array (broadcast
    over batch and channels)."""
    x = _coerce(x)
    B, L, C = x.shape
    flat = _flat_length_index(idx, (B, L, C))
    out = Tensor(x.data.ravel()[flat].reshape(B, idx.shape[1], C))
    if _live(x):
        _emit(out, (x,), (lambda u: scatter_length(u, idx, L, _flat=flat),), "take_length")
    return out


def scatter_length(u, idx: np.ndarray, length: int, _flat: np.ndarray | None = None) -> Tensor:
    """Adjoint of :func:`take_length` (accumulating on repeated indices)."""
    u = _coerce(u)
    B, _, C = u.shape
    flat = _flat_length_index(idx, (B, length, C)) if _flat is None else _flat
    acc = np.bincount(flat, weights=u.data.ravel(), minlength=B * length * C)
    out = Tensor(acc.reshape(B, length, C).astype(u.data.dtype, copy=False))
    if _live(u):
        _emit(out, (u,), (lambda uu: take_length(uu, idx),), "scatter_length")
    return out


# ---------------------------------------------------------------------------
# one-dimensional convolutions


def _conv_geometry(length: int, width: int, stride: int) -> tuple[int, int, int]:
    """Output length and symmetric zero padding for a 'same'-style conv."""
    out_len = -(-length // stride)
    pad_total = max(0, (out_len - 1) * stride + width - length)
    pad_left = pad_total // 2
    return out_len, pad_left, pad_total - pad_left


def _check_conv_args(x: Tensor, k: Tensor, stride: int) -> None:
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [B, L, C], got shape {x.shape}")
    if k.ndim != 3:
        raise ShapeError(f"conv kernel must be [K, Cin, Cout], got shape {k.shape}")
    if k.shape[0] % 2 == 0:
        raise ParameterError(f"kernel width must be odd, got {k.shape[0]}")
    if x.shape[2] != k.shape[1]:
        raise ShapeError(
            f"channel mismatch: input {x.shape} vs kernel {k.shape}")
    if x.shape[1] < 1:
        raise ParameterError("conv input length must be >= 1")


def conv1d(x, k, stride: int) -> Tensor:
    """Zero-padded strided cross-correlation: [B,L,Ci] x [K,Ci,Co] -> [B,ceil(L/s),Co]."""
    x, k = _coerce(x), _coerce(k)
    _check_conv_args(x, k, stride)
    B, L, cin = x.shape
    K, _, cout = k.shape
    out_len, pl, pr = _conv_geometry(L, K, stride)
    xp = pad1(x, pl, pr)
    w = window_gather(xp, K, stride)
    flat = reshape(w, (B * out_len, cin * K))
    km = reshape(permute(k, (1, 0, 2)), (cin * K, cout))
    out = matmul(flat, km)
    return reshape(out, (B, out_len, cout))


def conv1d_transpose(x, k, stride: int) -> Tensor:
    """Fractionally-strided upsampling conv: [B,L,Ci] x [K,Ci,Co] -> [B,L*s,Co].

    Defined as the exact adjoint of ``conv1d(., swap(k), stride)`` mapping
    [B, L*s, Co] down to [B, L, Ci], which gives the adjoint identity
    <conv1d_transpose(x,k,s), y> == <x, conv1d(y, swap(k), s)>.

    Computed in polyphase form: with j = a*s + r, output position t*s + j - pl
    groups by residue r into s interleaved stride-1 convolutions, evaluated as
    one window gather of width A = ceil(K/s) and one matrix product against a
    rearranged kernel, so no overlap-add scatter is needed in the forward.
    """
    x, k = _coerce(x), _coerce(k)
    _check_conv_args(x, k, stride)
    B, L, cin = x.shape
    K, _, cout = k.shape
    s = stride
    out_len = L * s
    _, pl, _ = _conv_geometry(out_len, K, s)
    A = -(-K // s)
    # branch kernel table: entry [(a, ci), (r, co)] = k[(A-1-a)*s + r] (0 beyond K)
    kpad = pad1(reshape(k, (1, K, cin * cout)), 0, A * s - K)
    jmap = ((A - 1 - np.arange(A))[:, None] * s + np.arange(s)[None, :]).reshape(-1)
    kperm = take_length(kpad, jmap[None, :, None])
    kcomb = reshape(permute(reshape(kperm, (A, s, cin, cout)), (2, 0, 1, 3)),
                    (cin * A, s * cout))
    # win[q] = x[q-(A-1) .. q]; out[tau] = win[(tau+pl)//s] . branch[(tau+pl)%s]
    q_count = (out_len - 1 + pl) // s + 1
    xp = pad1(x, A - 1, q_count - L)
    win = window_gather(xp, A, 1)
    prod = matmul(reshape(win, (B * q_count, cin * A)), kcomb)
    full = reshape(prod, (B, q_count * s, cout))
    return slice1(full, pl, pl + out_len)


# ---------------------------------------------------------------------------
# input gradients (second-order entry point)


def input_gradient(net_apply: Callable[[Tensor], Tensor], m: Tensor,
                   tape: Tape | None = None) -> Tensor:
    """Gradient of a per-row-scalar network output with respect to its input.

    The result is produced with ``create_graph=True``, so it remains
    differentiable with respect to any tracked parameters used inside
    ``net_apply`` -- a gradient-norm penalty built from it can itself be
    backpropagated.
    """
    m = _coerce(m)
    t = tape
    if t is None:
        t = _TAPE_STACK[-1] if _TAPE_STACK else Tape()
    src = Tensor(m.data, tracked=True)
    active = bool(_TAPE_STACK) and _TAPE_STACK[-1] is t
    ctx = _use_tape(t) if not active else _noop_ctx()
    with ctx:
        y = net_apply(src)
        rows = m.shape[0] if m.ndim > 0 else 1
        if y.shape not in ((rows,), (rows, 1)):
            raise ContractError(
                f"net_apply must return one scalar per batch row, got shape {y.shape}")
        total = reduce_sum(y)
        grad = t.gradients(total, wrt=[src], create_graph=True)[src]
    return grad


class _noop_ctx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False
