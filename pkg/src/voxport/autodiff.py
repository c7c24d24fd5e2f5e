"""Minimal reverse-mode automatic differentiation over float64 arrays.

Ops executed while a :class:`Tape` is active append a record holding the
output, its inputs, and a backward closure. :func:`backward` replays the
records in reverse (execution order is a topological order), accumulating
gradients into ``Tensor.grad``. With no active tape every op is plain
forward arithmetic, which is what the finite-difference checker relies on.

Everything runs in float64; speed is traded for verifiability throughout.
"""

import math

import numpy as np

from .errors import InvalidArgumentError, ShapeError


class Tensor:
    """A float64 ndarray plus an accumulated gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g):
        """Add a gradient contribution that may alias another array."""
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def accumulate_owned(self, g):
        """Add a contribution the caller freshly allocated; takes ownership
        on first touch instead of copying."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # convenience arithmetic; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Recorded op sequence for one reverse sweep."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise InvalidArgumentError("a tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False


_ACTIVE: Tape | None = None


def _record(out: Tensor, backward_fn) -> Tensor:
    if _ACTIVE is not None:
        _ACTIVE.records.append((out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; gradients accumulate in-place."""
    if loss.data.size != 1:
        raise InvalidArgumentError(f"loss must be scalar, has shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, backward_fn in reversed(tape.records):
        if out.grad is not None:
            backward_fn(out.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def back(g):
        for t in (a, b):
            gt = _unbroadcast(g, t.data.shape)
            (t.accumulate if gt is g else t.accumulate_owned)(gt)

    return _record(out, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def back(g):
        a.accumulate_owned(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_owned(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, back)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, lambda g: a.accumulate_owned(-g))


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p.accumulate(piece)

    return _record(out, back)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Advanced row indexing along axis 0; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx])

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x.accumulate_owned(gx)

    return _record(out, back)


def gather_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Column selection along the last axis; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[..., idx])

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (..., idx), g)
        x.accumulate_owned(gx)

    return _record(out, back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = Tensor(x.data.reshape(shape))
    return _record(out, lambda g: x.accumulate(g.reshape(old)))


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, lambda g: x.accumulate_owned(g * (x.data > 0)))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data))
    return _record(out, lambda g: x.accumulate_owned(g * np.where(x.data > 0, 1.0, slope)))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    return _record(out, lambda g: x.accumulate_owned(g * y * (1.0 - y)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, lambda g: x.accumulate_owned(g * (1.0 - y * y)))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, lambda g: x.accumulate_owned(g * y))


_ACTIVATIONS = {"none", "relu", "sigmoid", "tanh"}


def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "none") -> Tensor:
    """Affine map over the last axis, shared across leading axes."""
    if activation not in _ACTIVATIONS:
        raise InvalidArgumentError(f"unknown activation {activation!r}")
    if x.data.shape[-1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[-1]:
        raise ShapeError(
            f"dense shapes disagree: x {x.data.shape}, w {w.data.shape}, "
            f"b {b.data.shape}"
        )
    out = Tensor(x.data @ w.data + b.data)

    def back(g):
        x2 = x.data.reshape(-1, w.data.shape[0])
        g2 = g.reshape(-1, w.data.shape[1])
        w.accumulate_owned(x2.T @ g2)
        b.accumulate_owned(g2.sum(axis=0))
        x.accumulate_owned(np.ascontiguousarray((g2 @ w.data.T).reshape(x.data.shape)))

    out = _record(out, back)
    if activation == "relu":
        out = relu(out)
    elif activation == "sigmoid":
        out = sigmoid(out)
    elif activation == "tanh":
        out = tanh(out)
    return out


# ---------------------------------------------------------------------------
# Reductions and normalization
# ---------------------------------------------------------------------------


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate_owned(np.broadcast_to(g, x.data.shape).copy())

    return _record(out, back)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate_owned(np.broadcast_to(g, x.data.shape) / count)

    return _record(out, back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate_owned(y * (g - dot))

    return _record(out, back)


def max_pool_global(x: Tensor) -> Tensor:
    """Columnwise max of an (N, D) map; gradient routes to the first argmax."""
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise InvalidArgumentError(
            f"max_pool_global needs a nonempty (N, D) input, got {x.data.shape}"
        )
    rows = np.argmax(x.data, axis=0)
    out = Tensor(x.data[rows, np.arange(x.data.shape[1])])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[rows, np.arange(x.data.shape[1])] = g
        x.accumulate_owned(gx)

    return _record(out, back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not training or rate == 0.0:
        return x
    mask = (rng.uniform(size=x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    return _record(out, lambda g: x.accumulate_owned(g * mask))


def wrap_degrees(x: Tensor) -> Tensor:
    """Wrap angles to (-180, 180]; unit gradient almost everywhere."""
    out = Tensor(-(np.mod(-x.data + 180.0, 360.0) - 180.0))
    return _record(out, lambda g: x.accumulate(g))


def cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Class-weighted cross-entropy, mean over rows; stable log-softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise InvalidArgumentError(
            f"cross_entropy shapes disagree: logits {logits.data.shape}, "
            f"labels {labels.shape}"
        )
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = weights[labels]
    out = Tensor((-w * logp[np.arange(n), labels]).sum() / n)

    def back(g):
        p = np.exp(logp)
        gl = p * w[:, None]
        gl[np.arange(n), labels] -= w
        logits.accumulate_owned(g * gl / n)

    return _record(out, back)


# ---------------------------------------------------------------------------
# Parameters, initialization, optimizer
# ---------------------------------------------------------------------------


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) >= 2:
        fan_in, fan_out = shape[-2], shape[-1]
    else:
        fan_in = fan_out = shape[0]
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class ParamStore:
    """Named parameter tensors with parallel gradient and moment slots."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise InvalidArgumentError(f"duplicate parameter {name!r}")
        t = Tensor(data)
        self._params[name] = t
        return t

    def dense_init(self, name: str, d_in: int, d_out: int, rng) -> None:
        self.add(f"{name}.w", glorot_uniform((d_in, d_out), rng))
        self.add(f"{name}.b", np.zeros(d_out))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self._params.items()
        }


def adam_step(
    params: ParamStore,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction; moments live in the store."""
    params._t += 1
    t = params._t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = params._m.setdefault(name, np.zeros_like(p.data))
        v = params._v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


def grad_check(
    fn,
    params: ParamStore,
    h: float = 1e-5,
    sample_frac: float = 0.05,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` must rebuild its graph on every call and be deterministic
    (dropout disabled). A random ``sample_frac`` of coordinates per
    parameter is probed, at least one per parameter.
    """
    params.zero_grads()
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    analytic = {k: g.copy() for k, g in params.gradients().items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        count = max(1, int(math.ceil(sample_frac * n)))
        coords = rng.choice(n, size=min(count, n), replace=False)
        ga = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = fn().item()
            flat[c] = orig - h
            down = fn().item()
            flat[c] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(fd - ga[c]) / max(abs(fd), abs(ga[c]), 1.0)
            if err > worst:
                worst = err
    return worst
