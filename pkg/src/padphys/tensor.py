"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Only the operations the two-branch attention network needs are provided.
Every op accepts an optional leading batch axis so that training can run
on mini-batches of frame pairs.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Tensors produced by ops keep a reference to their parents and a closure
    that pushes the output gradient back to them.  The graph is released by
    :func:`backward`, so a second backward on the same loss fails loudly.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._released = False
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # convenience operators
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), Tensor(-1.0)))

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._released = False
    out.name = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot combine shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; broadcasting is allowed along size-1 axes."""
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot combine shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward)


elementwise_mul = mul


def tensor_sum(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.array(a.data.sum()), (a,), backward)


def tensor_mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(np.array(a.data.mean()), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid overflow in exp
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is passed only where the input was inside the range."""
    y = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _make(y, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, 2.0 * g * a.data)

    return _make(a.data * a.data, (a,), backward)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: cannot combine shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    y = a.data.reshape(tuple(shape))

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(y, (a,), backward)


def flatten(a: Tensor, batched: bool = False) -> Tensor:
    """Flatten to 1-D, or to [N, -1] when ``batched`` is set."""
    shape = (a.shape[0], -1) if batched else (-1,)
    return reshape(a, shape)


# ---------------------------------------------------------------------------
# layers


def _split_batch(x: Tensor, rank: int, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x.data[None], False
    if x.ndim == rank + 1:
        return x.data, True
    raise ShapeError(f"{op}: expected a {rank}-D input (optionally batched), got shape {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """2-D cross-correlation, stride 1.

    ``x`` is [C_in, H, W] or [N, C_in, H, W]; ``kernel`` is [C_out, C_in, kH, kW].
    ``padding="same"`` zero-pads by (k-1)/2 on each side, ``"valid"`` does not pad.
    """
    xb, batched = _split_batch(x, 3, "conv2d")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv2d: input has {xb.shape[1]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if padding == "same":
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if xb.shape[2] + 2 * ph < kh or xb.shape[3] + 2 * pw < kw:
        raise ShapeError(f"conv2d: input {xb.shape[2:]} smaller than kernel {kh}x{kw}")

    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xb
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, H', W', kh, kw
    n, _, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * kh * kw)
    wmat = kernel.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gb = g if batched else g[None]
        gmat = gb.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        if kernel.requires_grad:
            _accumulate(kernel, (gmat.T @ cols).reshape(kernel.shape))
        if bias.requires_grad:
            _accumulate(bias, gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # input gradient is a correlation of the padded output gradient with the flipped kernel
            qh, qw = kh - 1 - ph, kw - 1 - pw
            gp = np.pad(gb, ((0, 0), (0, 0), (qh, qh), (qw, qw)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            h_in, w_in = gwin.shape[2:4]
            gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_in * w_in, c_out * kh * kw)
            kflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
            dx = (gcols @ kflip.T).reshape(n, h_in, w_in, c_in).transpose(0, 3, 1, 2)
            _accumulate(x, dx if batched else dx[0])

    return _make(out if batched else out[0], (x, kernel, bias), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weight @ x + bias`` for x of shape [n] or [N, n]."""
    if weight.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got {weight.shape}")
    m, n_in = weight.shape
    if x.shape[-1] != n_in or x.ndim not in (1, 2):
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({m},)")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(x.data)
        _accumulate(weight, g2.T @ x2)
        _accumulate(bias, g2.sum(axis=0))
        _accumulate(x, (g2 @ weight.data).reshape(x.shape))

    return _make(out, (x, weight, bias), backward)


def avg_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean pooling; odd trailing rows/columns are dropped."""
    xb, batched = _split_batch(x, 3, "avg_pool2x2")
    n, c, h, w = xb.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"avg_pool2x2: input {x.shape} too small")
    core = xb[:, :, : 2 * h2, : 2 * w2]
    out = core.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        gb = g if batched else g[None]
        dx = np.zeros_like(xb)
        up = np.repeat(np.repeat(gb, 2, axis=2), 2, axis=3) * 0.25
        dx[:, :, : 2 * h2, : 2 * w2] = up
        _accumulate(x, dx if batched else dx[0])

    return _make(out if batched else out[0], (x,), backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout.  Identity when ``rate == 0`` or outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# gradient propagation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(.) to every tensor with ``requires_grad`` in the graph.

    The recorded graph is released afterwards; calling again on the same loss
    raises :class:`GradientError`.
    """
    if loss._released:
        raise GradientError("backward called twice on the same graph; run a new forward pass")
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss._backward is None:
        raise GradientError("loss was not produced by a recorded forward pass over trainable tensors")
    order = _topo_order(loss)
    # intermediate nodes accumulate into .grad transiently; leaves keep theirs
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        fn = node._backward
        if fn is None:
            continue
        g = node.grad
        if g is not None:
            fn(g)
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._backward = None
            node._parents = ()
            node._released = True
        elif node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise GradientError(f"non-finite gradient in {node.name or 'tensor'}")
    loss._released = True


# ---------------------------------------------------------------------------
# parameters


class Parameter:
    __slots__ = ("tensor", "trainable")

    def __init__(self, tensor: Tensor, trainable: bool = True):
        self.tensor = tensor
        self.trainable = trainable
        tensor.requires_grad = trainable

    def __repr__(self) -> str:
        return f"Parameter(shape={self.tensor.shape}, trainable={self.trainable})"


class ParameterSet:
    """Ordered mapping name -> Parameter with unique names."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.name = name
        self._params[name] = Parameter(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return ((k, p.tensor) for k, p in self._params.items())

    def trainable(self, name: str) -> bool:
        return self._params[name].trainable

    def set_trainable(self, name: str, flag: bool) -> None:
        p = self._params[name]
        p.trainable = flag
        p.tensor.requires_grad = flag
        if not flag:
            p.tensor.grad = None

    def trainable_names(self) -> list[str]:
        return [k for k, p in self._params.items() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for k, p in self._params.items():
            out.add(k, Tensor(p.tensor.data.copy()), p.trainable)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.tensor.data.copy() for k, p in self._params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, arr in snap.items():
            self._params[k].tensor.data = arr.copy()
