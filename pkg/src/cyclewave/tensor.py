"""Dense float64 tensors with reverse-mode automatic differentiation.

The library is deliberately small: it provides exactly the operations the
synthesis models, the mel front end, and the training losses need. Executed
operations are recorded on an ambient :class:`GradTape`; :func:`backward`
replays the recorded adjoints once in reverse order and consumes the tape.

Convolution-style operations accept either the documented per-sample shapes
(``[C, T]`` / ``[C, H, W]``) or the same shapes with one leading batch axis.
All arithmetic is float64 and deterministic.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, TapeError


class Tensor:
    """A dense float64 array, optionally carrying a gradient accumulator.

    ``grad`` exists iff ``requires_grad`` is set and always matches the data
    shape. Tensors produced by recorded operations require grad whenever any
    of their inputs does.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the underlying data."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same data, cut off from the tape (no grad requirement)."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))


class GradTape:
    """Ordered record of executed operations for one backward pass.

    Each record holds the op's output tensor and a closure that pushes the
    output adjoint into the inputs' grad buffers. Replaying the records in
    reverse order visits each op exactly once; a tape can be consumed only
    once and clearing it drops every recorded intermediate.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, ...]] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, fn) -> None:
        self._records.append((out, fn))

    def replay(self) -> None:
        if self.consumed:
            raise TapeError("gradient tape already consumed; re-record the graph")
        for out, fn in reversed(self._records):
            g = out.grad
            if g is not None and g.any():
                fn(g)
        self.consumed = True
        self.clear()

    def clear(self) -> None:
        self._records.clear()


_active_tape: GradTape | None = None
_grad_enabled: bool = True


def active_tape() -> GradTape | None:
    return _active_tape


def reset_tape() -> None:
    """Drop any pending records (useful between independent graphs)."""
    global _active_tape
    _active_tape = None


@contextmanager
def no_grad():
    """Disable recording; outputs created inside are detached constants."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_recording() -> bool:
    return _grad_enabled


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    The ambient tape is replayed in reverse and consumed; calling backward
    again without re-recording raises :class:`TapeError`.
    """
    global _active_tape
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _active_tape
    if tape is None or len(tape) == 0:
        raise TapeError("no recorded operations to differentiate")
    if loss.grad is None:
        raise TapeError("loss does not require grad; nothing to differentiate")
    loss.grad[...] = 1.0
    _active_tape = None
    tape.replay()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _out(data, *inputs: Tensor) -> Tensor:
    rg = _grad_enabled and any(t.requires_grad for t in inputs)
    return Tensor(data, requires_grad=rg)


def _record(out: Tensor, fn) -> None:
    global _active_tape
    if not out.requires_grad:
        return
    if _active_tape is None or _active_tape.consumed:
        _active_tape = GradTape()
    _active_tape.record(out, fn)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data + b.data, a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    _record(out, fn)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data - b.data, a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    _record(out, fn)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data * b.data, a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    _record(out, fn)
    return out


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _out(x.data * x.data, x)

    def fn(g):
        if x.requires_grad:
            x.grad += 2.0 * x.data * g

    _record(out, fn)
    return out


def absolute(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _out(np.abs(x.data), x)

    def fn(g):
        if x.requires_grad:
            x.grad += np.sign(x.data) * g

    _record(out, fn)
    return out


def tsum(x: Tensor) -> Tensor:
    """Full reduction to a scalar."""
    x = _as_tensor(x)
    out = _out(np.asarray(x.data.sum()), x)

    def fn(g):
        if x.requires_grad:
            x.grad += g  # scalar broadcast

    _record(out, fn)
    return out


def mean(x: Tensor) -> Tensor:
    """Full reduction to the arithmetic mean."""
    x = _as_tensor(x)
    n = x.data.size
    out = _out(np.asarray(x.data.mean()), x)

    def fn(g):
        if x.requires_grad:
            x.grad += g / n

    _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    x = _as_tensor(x)
    out = _out(np.maximum(x.data, slope * x.data), x)  # slope < 1

    def fn(g):
        if x.requires_grad:
            x.grad += np.where(x.data >= 0, g, slope * g)

    _record(out, fn)
    return out


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = _out(y, x)

    def fn(g):
        if x.requires_grad:
            x.grad += (1.0 - y * y) * g

    _record(out, fn)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = _out(s, x)

    def fn(g):
        if x.requires_grad:
            x.grad += s * (1.0 - s) * g

    _record(out, fn)
    return out


def glu(x: Tensor, axis: int = 0) -> Tensor:
    """Gated linear unit: first half channels * sigmoid(second half)."""
    x = _as_tensor(x)
    c2 = x.data.shape[axis]
    if c2 % 2 != 0:
        raise DimensionError(f"glu needs an even channel extent, got {c2} on axis {axis}")
    half = c2 // 2
    value = np.take(x.data, range(half), axis=axis)
    gate = np.take(x.data, range(half, c2), axis=axis)
    s = 1.0 / (1.0 + np.exp(-gate))
    out = _out(value * s, x)

    def fn(g):
        if x.requires_grad:
            dv = g * s
            dg = g * value * s * (1.0 - s)
            x.grad += np.concatenate([dv, dg], axis=axis)

    _record(out, fn)
    return out


def log_clamped(x: Tensor, floor: float) -> Tensor:
    """Natural log of max(x, floor); zero gradient where the floor engaged."""
    x = _as_tensor(x)
    clamped = np.maximum(x.data, floor)
    above = x.data > floor
    out = _out(np.log(clamped), x)

    def fn(g):
        if x.requires_grad:
            x.grad += np.where(above, g / clamped, 0.0)

    _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    orig = x.data.shape
    out = _out(x.data.reshape(shape), x)

    def fn(g):
        if x.requires_grad:
            x.grad += g.reshape(orig)

    _record(out, fn)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _out(np.ascontiguousarray(np.transpose(x.data, axes)), x)

    def fn(g):
        if x.requires_grad:
            x.grad += np.transpose(g, inv)

    _record(out, fn)
    return out


def concat_channels(parts, axis: int = 0) -> Tensor:
    """Concatenate along one axis; all other extents must agree."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat_channels needs at least one input")
    ref = parts[0].data.shape
    for p in parts:
        s = p.data.shape
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat_channels extent mismatch: {s} vs {ref}")
    out = _out(np.concatenate([p.data for p in parts], axis=axis), *parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p.grad += g[tuple(idx)]

    _record(out, fn)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    x = _as_tensor(x)
    extent = x.data.shape[axis]
    if start < 0 or length < 0 or start + length > extent:
        raise DimensionError(f"slice [{start}:{start + length}] outside extent {extent}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _out(x.data[idx], x)

    def fn(g):
        if x.requires_grad:
            x.grad[idx] += g

    _record(out, fn)
    return out


def pad1d(x: Tensor, pad: tuple[int, int], mode: str = "constant") -> Tensor:
    """Pad the last axis. ``mode`` is "constant" (zeros) or "reflect"."""
    x = _as_tensor(x)
    left, right = pad
    if left < 0 or right < 0:
        raise ContractError("padding must be non-negative")
    length = x.data.shape[-1]
    width = [(0, 0)] * (x.data.ndim - 1) + [(left, right)]
    if mode == "constant":
        data = np.pad(x.data, width)
    elif mode == "reflect":
        if max(left, right) > length - 1:
            raise ContractError(f"reflect padding {pad} too wide for length {length}")
        data = np.pad(x.data, width, mode="reflect")
    else:
        raise ContractError(f"unknown pad mode {mode!r}")
    out = _out(data, x)

    def fn(g):
        if not x.requires_grad:
            return
        core = g[..., left:left + length].copy()
        if mode == "reflect":
            if left:
                core[..., 1:left + 1] += g[..., :left][..., ::-1]
            if right:
                core[..., length - 1 - right:length - 1] += g[..., left + length:][..., ::-1]
        x.grad += core

    _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` is 2-D or has one batch axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim not in (2, 3):
        raise DimensionError(f"matmul supports [.., M, K] @ [K, N]; got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    out = _out(a.data @ b.data, a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            k = a.data.shape[-1]
            b.grad += a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])

    _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# convolution family


def _norm_pad(padding) -> tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        left, right = padding
    else:
        left = right = int(padding)
    if left < 0 or right < 0:
        raise ContractError("padding must be non-negative")
    return int(left), int(right)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding=0, dilation: int = 1, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x [.., C_in, T]`` with ``w [C_out, C_in/g, k]``.

    Output length is floor((T + pl + pr - dilation*(k-1) - 1)/stride) + 1.
    ``padding`` may be a single int or an asymmetric (left, right) pair.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 3:
        raise DimensionError(f"conv1d weight must be [C_out, C_in/g, k], got {w.shape}")
    batched = x.data.ndim == 3
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be [C, T] or [N, C, T], got {x.shape}")
    x3 = x.data if batched else x.data[None]
    n, c_in, t = x3.shape
    c_out, c_in_g, k = w.data.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise DimensionError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_in_g != c_in // groups:
        raise DimensionError(f"weight expects C_in/g={c_in_g}, input has C_in={c_in} with g={groups}")
    left, right = _norm_pad(padding)
    span = dilation * (k - 1) + 1
    if t + left + right < span:
        raise ContractError(f"input length {t}+{left}+{right} shorter than kernel span {span}")
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (c_out,):
            raise DimensionError(f"bias must be [C_out]={c_out}, got {b.shape}")

    xp = x3 if left == right == 0 else np.pad(x3, ((0, 0), (0, 0), (left, right)))
    t_pad = xp.shape[2]
    wv = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation]  # [N, C_in, To, k]
    t_out = wv.shape[2]
    co_g = c_out // groups
    # narrow layers: contract the strided view directly; wide layers: im2col+BLAS
    small = co_g * c_in_g * k <= 512

    out_data = np.empty((n, c_out, t_out))
    for gi in range(groups):
        cols = wv[:, gi * c_in_g:(gi + 1) * c_in_g]                  # [N, Cig, To, k]
        wg = w.data[gi * co_g:(gi + 1) * co_g]
        sl = slice(gi * co_g, (gi + 1) * co_g)
        if small:
            np.einsum("oik,nitk->not", wg, cols, out=out_data[:, sl])
        else:
            col = cols.transpose(0, 2, 1, 3).reshape(n * t_out, c_in_g * k)
            out_data[:, sl] = (col @ wg.reshape(co_g, -1).T).reshape(n, t_out, co_g).transpose(0, 2, 1)
    if b is not None:
        out_data += b.data[:, None]

    inputs = (x, w) if b is None else (x, w, b)
    out = _out(out_data if batched else out_data[0], *inputs)

    def fn(g):
        g3 = g if batched else g[None]
        if b is not None and b.requires_grad:
            b.grad += g3.sum(axis=(0, 2))
        need_x = x.requires_grad
        need_w = w.requires_grad
        if not (need_x or need_w):
            return
        plain = stride == 1 and dilation == 1
        gxp = None if plain or not need_x else np.zeros((n, c_in, t_pad))
        gx_parts = []
        wv_b = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation] if need_w else None
        for gi in range(groups):
            gg = g3[:, gi * co_g:(gi + 1) * co_g]
            wg = w.data[gi * co_g:(gi + 1) * co_g]
            if need_w:
                cols = wv_b[:, gi * c_in_g:(gi + 1) * c_in_g]
                if small:
                    w.grad[gi * co_g:(gi + 1) * co_g] += np.einsum("not,nitk->oik", gg, cols)
                else:
                    gm = gg.transpose(0, 2, 1).reshape(n * t_out, co_g)
                    col = cols.transpose(0, 2, 1, 3).reshape(n * t_out, c_in_g * k)
                    w.grad[gi * co_g:(gi + 1) * co_g] += (gm.T @ col).reshape(co_g, c_in_g, k)
            if not need_x:
                continue
            if plain:
                # full correlation with the flipped kernel
                gp = np.pad(gg, ((0, 0), (0, 0), (k - 1, k - 1)))
                win = sliding_window_view(gp, k, axis=2)                      # [N, Cog, Tp, k]
                wf = wg[:, :, ::-1]
                if small:
                    gx_parts.append(np.einsum("notj,oij->nit", win, wf))
                else:
                    col2 = win.transpose(0, 2, 1, 3).reshape(n * t_pad, co_g * k)
                    wf2 = wf.transpose(0, 2, 1).reshape(co_g * k, c_in_g)
                    gx_parts.append((col2 @ wf2).reshape(n, t_pad, c_in_g).transpose(0, 2, 1))
            else:
                gm = gg.transpose(0, 2, 1).reshape(n * t_out, co_g)
                dcol = (gm @ wg.reshape(co_g, -1)).reshape(n, t_out, c_in_g, k).transpose(0, 2, 1, 3)
                sl = slice(gi * c_in_g, (gi + 1) * c_in_g)
                for j in range(k):
                    start = j * dilation
                    gxp[:, sl, start:start + t_out * stride:stride] += dcol[..., j]
        if need_x:
            full = np.concatenate(gx_parts, axis=1) if plain else gxp
            core = full[:, :, left:left + t] if (left or right) else full
            x.grad += core if batched else core[0]

    _record(out, fn)
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of ``x [.., C_in, H, W]`` with ``w [C_out, C_in, kH, kW]``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be [C_out, C_in, kH, kW], got {w.shape}")
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be [C, H, W] or [N, C, H, W], got {x.shape}")
    x4 = x.data if batched else x.data[None]
    n, c_in, h, wd = x4.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if c_in_w != c_in:
        raise DimensionError(f"weight expects C_in={c_in_w}, input has C_in={c_in}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if h + 2 * ph < kh or wd + 2 * pw < kw:
        raise ContractError("padded input smaller than the kernel")
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (c_out,):
            raise DimensionError(f"bias must be [C_out]={c_out}, got {b.shape}")

    xp = x4 if ph == pw == 0 else np.pad(x4, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wv = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # [N, Ci, Ho, Wo, kh, kw]
    h_out, w_out = wv.shape[2], wv.shape[3]
    wm = w.data.reshape(c_out, -1)
    small = c_out * c_in * kh * kw <= 512
    if small:
        out_data = np.einsum("oihw,nixyhw->noxy", w.data, wv)
    else:
        col = wv.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c_in * kh * kw)
        out_data = np.ascontiguousarray(
            (col @ wm.T).reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2))
    if b is not None:
        out_data += b.data[:, None, None]

    inputs = (x, w) if b is None else (x, w, b)
    out = _out(out_data if batched else out_data[0], *inputs)

    def fn(g):
        g4 = g if batched else g[None]
        if b is not None and b.requires_grad:
            b.grad += g4.sum(axis=(0, 2, 3))
        need_x = x.requires_grad
        need_w = w.requires_grad
        if not (need_x or need_w):
            return
        wv_b = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        if need_w:
            if small:
                w.grad += np.einsum("noxy,nixyhw->oihw", g4, wv_b)
            else:
                gm = g4.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
                col_b = wv_b.transpose(0, 2, 3, 1, 4, 5).reshape(gm.shape[0], c_in * kh * kw)
                w.grad += (gm.T @ col_b).reshape(c_out, c_in, kh, kw)
        if need_x:
            gm = g4.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
            dcol = (gm @ wm).reshape(n, h_out, w_out, c_in, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for jh in range(kh):
                for jw in range(kw):
                    gxp[:, :, jh:jh + h_out * sh:sh, jw:jw + w_out * sw:sw] += dcol[..., jh, jw]
            core = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
            x.grad += core if batched else core[0]

    _record(out, fn)
    return out


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv1d: ``x [.., C_in, T]``, ``w [C_in, C_out, k]``.

    Output length is (T - 1)*stride - 2*padding + k; with k = 2*stride and
    padding = stride/2 this upsamples exactly by the stride factor.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 3:
        raise DimensionError(f"conv_transpose1d weight must be [C_in, C_out, k], got {w.shape}")
    batched = x.data.ndim == 3
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"input must be [C, T] or [N, C, T], got {x.shape}")
    x3 = x.data if batched else x.data[None]
    n, c_in, t = x3.shape
    c_in_w, c_out, k = w.data.shape
    if c_in_w != c_in:
        raise DimensionError(f"weight expects C_in={c_in_w}, input has C_in={c_in}")
    p = int(padding)
    t_full = (t - 1) * stride + k
    t_out = t_full - 2 * p
    if t_out <= 0:
        raise ContractError(f"non-positive output length for T={t}, stride={stride}, k={k}, p={p}")
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (c_out,):
            raise DimensionError(f"bias must be [C_out]={c_out}, got {b.shape}")

    xm = np.ascontiguousarray(x3.transpose(0, 2, 1)).reshape(n * t, c_in)
    prod = (xm @ w.data.reshape(c_in, c_out * k)).reshape(n, t, c_out, k)
    full = np.zeros((n, c_out, t_full))
    for j in range(k):
        full[:, :, j:j + t * stride:stride] += prod[:, :, :, j].transpose(0, 2, 1)
    out_data = np.ascontiguousarray(full[:, :, p:p + t_out])
    if b is not None:
        out_data += b.data[:, None]

    inputs = (x, w) if b is None else (x, w, b)
    out = _out(out_data if batched else out_data[0], *inputs)

    def fn(g):
        g3 = g if batched else g[None]
        if b is not None and b.requires_grad:
            b.grad += g3.sum(axis=(0, 2))
        need_x = x.requires_grad
        need_w = w.requires_grad
        if not (need_x or need_w):
            return
        g_full = np.zeros((n, c_out, t_full))
        g_full[:, :, p:p + t_out] = g3
        win = sliding_window_view(g_full, k, axis=2)[:, :, ::stride]      # [N, C_out, T, k]
        win2 = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * t, c_out * k)
        if need_x:
            dx = (win2 @ w.data.reshape(c_in, c_out * k).T).reshape(n, t, c_in).transpose(0, 2, 1)
            x.grad += dx if batched else dx[0]
        if need_w:
            w.grad += (xm.T @ win2).reshape(c_in, c_out, k)

    _record(out, fn)
    return out


def avg_pool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Mean over sliding windows of the last axis."""
    x = _as_tensor(x)
    stride = kernel if stride is None else stride
    t = x.data.shape[-1]
    if t < kernel:
        raise ContractError(f"input length {t} shorter than pool kernel {kernel}")
    wv = sliding_window_view(x.data, kernel, axis=-1)[..., ::stride, :]
    t_out = wv.shape[-2]
    out = _out(np.ascontiguousarray(wv.mean(axis=-1)), x)

    def fn(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        share = g / kernel
        for j in range(kernel):
            gx[..., j:j + t_out * stride:stride] += share
        x.grad += gx

    _record(out, fn)
    return out


def frame_signal(x: Tensor, frame: int, hop: int, num_frames: int | None = None) -> Tensor:
    """Slice ``x [.., L]`` into overlapping frames ``[.., T, frame]``.

    The hop must divide the frame length (holds for all uses here); that
    keeps the overlap-add in the adjoint fully vectorized.
    """
    x = _as_tensor(x)
    if frame % hop != 0:
        raise ContractError("frame length must be a multiple of the hop")
    length = x.data.shape[-1]
    if length < frame:
        raise ContractError(f"signal length {length} shorter than frame {frame}")
    t = (length - frame) // hop + 1
    if num_frames is not None:
        if num_frames > t:
            raise ContractError(f"requested {num_frames} frames, only {t} available")
        t = num_frames
    wv = sliding_window_view(x.data, frame, axis=-1)[..., ::hop, :][..., :t, :]
    out = _out(np.ascontiguousarray(wv), x)

    def fn(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        for p in range(frame // hop):
            chunk = np.ascontiguousarray(g[..., :, p * hop:(p + 1) * hop])
            gx[..., p * hop:(p + t) * hop] += chunk.reshape(chunk.shape[:-2] + (t * hop,))
        x.grad += gx

    _record(out, fn)
    return out


def rdft_magnitude(x: Tensor) -> Tensor:
    """Magnitude of the real DFT over the last axis (length must be even)."""
    x = _as_tensor(x)
    nfft = x.data.shape[-1]
    if nfft % 2 != 0:
        raise ContractError("rdft_magnitude expects an even transform length")
    spec = np.fft.rfft(x.data, axis=-1)
    mag = np.abs(spec)
    out = _out(mag, x)

    def fn(g):
        if not x.requires_grad:
            return
        phase = spec / np.maximum(mag, 1e-300)
        v = g * phase
        v[..., 1:-1] *= 0.5
        x.grad += nfft * np.fft.irfft(v, n=nfft, axis=-1)

    _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# parameters and optimization


def randn_param(shape, rng: np.random.Generator, std: float = 0.01) -> Tensor:
    """Trainable tensor initialized from N(0, std^2)."""
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


def set_requires_grad(params, flag: bool) -> None:
    """Toggle grad tracking on a parameter collection.

    Freezing a group lets backward skip its weight gradients while input
    gradients still flow through the ops (useful for adversarial phases).
    """
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        if flag and not p.requires_grad:
            p.requires_grad = True
            p.grad = np.zeros_like(p.data)
        elif not flag and p.requires_grad:
            p.requires_grad = False
            p.grad = None


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.99, eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} does not match param {name} {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
