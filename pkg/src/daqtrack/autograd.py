"""Dense 2-D float64 tensors with reverse-mode differentiation.

Every value flowing through the trackers is a ``Tensor2``: a row-major
2-D array of 64-bit floats that doubles as a node in the expression graph
built during a forward pass.  The op set is deliberately small -- exactly
the kernels the trackers compose -- and every op carries an analytic
backward rule.  Calling :func:`backward` on a scalar output fills ``grad``
on every recorded ancestor; leaf tensors (parameters) keep accumulating
until reset.

64-bit floats throughout: the test suite verifies each backward rule
against central finite differences, which is hopeless at float32.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

__all__ = [
    "Axis",
    "GradientError",
    "ShapeError",
    "Tensor2",
    "add",
    "backward",
    "bce_with_logits",
    "concat_cols",
    "concat_rows",
    "cosine_sim",
    "dice_from_logits",
    "gather_rows",
    "gelu",
    "layer_norm",
    "mask_pool",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "relu",
    "scale",
    "sigmoid",
    "slice_cols",
    "slice_rows",
    "softmax",
    "softmax_xent",
    "sub",
    "sum_all",
    "transpose",
]

_COSINE_TINY = 1e-12
_MASK_POOL_EPS = 1e-8


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class GradientError(RuntimeError):
    """A gradient was requested for a value the graph never recorded."""


class Axis(Enum):
    """Which index of a 2-D tensor a reduction/normalization runs along.

    ``ROWS``: values down each column are normalized (column sums to 1).
    ``COLS``: values across each row are normalized (row sums to 1).
    """

    ROWS = 0
    COLS = 1


class Tensor2:
    """2-D float64 tensor; also a node of the recorded expression graph."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"expected 2-D data, got ndim={arr.ndim}")
        if arr.size == 0:
            raise ShapeError(f"empty tensor of shape {arr.shape} is not allowed")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor2, ...] = ()
        self._bwd = None

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple, bwd) -> "Tensor2":
        node = object.__new__(cls)
        node.data = data
        node.grad = None
        node._parents = parents
        node._bwd = bwd
        return node

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor2":
        """Copy of the value with no recorded history."""
        return Tensor2._op(self.data.copy(), (), None)

    def gradient(self) -> np.ndarray:
        """Gradient filled in by :func:`backward`; raises if never recorded."""
        if self.grad is None:
            raise GradientError(
                "no gradient recorded for this tensor; it was not part of a "
                "backward() pass (or gradients were reset)"
            )
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.data.shape})"


def _accum(t: Tensor2, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _check_same_shape(op: str, a: Tensor2, b: Tensor2) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    """Elementwise sum; ``b`` may be a 1-row vector or 1x1 scalar broadcast."""
    if a.shape == b.shape:
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
        return Tensor2._op(a.data + b.data, (a, b), bwd)
    if b.shape == (1, 1):
        def bwd(g):
            _accum(a, g)
            _accum(b, np.array([[g.sum()]]))
        return Tensor2._op(a.data + b.data[0, 0], (a, b), bwd)
    if b.rows == 1 and b.cols == a.cols:
        def bwd(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0, keepdims=True))
        return Tensor2._op(a.data + b.data, (a, b), bwd)
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not match")


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    _check_same_shape("sub", a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return Tensor2._op(a.data - b.data, (a, b), bwd)


def neg(a: Tensor2) -> Tensor2:
    def bwd(g):
        _accum(a, -g)

    return Tensor2._op(-a.data, (a,), bwd)


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    """Elementwise product; either operand may be a 1x1 scalar node."""
    if a.shape == b.shape:
        def bwd(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        return Tensor2._op(a.data * b.data, (a, b), bwd)
    if a.shape == (1, 1):
        def bwd(g):
            _accum(a, np.array([[np.sum(g * b.data)]]))
            _accum(b, g * a.data[0, 0])
        return Tensor2._op(a.data[0, 0] * b.data, (a, b), bwd)
    if b.shape == (1, 1):
        return mul(b, a)
    raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not match")


def scale(a: Tensor2, c: float) -> Tensor2:
    def bwd(g):
        _accum(a, g * c)

    return Tensor2._op(a.data * c, (a,), bwd)


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor2._op(a.data @ b.data, (a, b), bwd)


def transpose(a: Tensor2) -> Tensor2:
    def bwd(g):
        _accum(a, g.T)

    return Tensor2._op(np.ascontiguousarray(a.data.T), (a,), bwd)


# ---------------------------------------------------------------------------
# structure


def concat_rows(parts: list[Tensor2]) -> Tensor2:
    if not parts:
        raise ShapeError("concat_rows: empty part list")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"concat_rows: column mismatch {p.shape} vs {parts[0].shape}")
    splits = np.cumsum([p.rows for p in parts])[:-1]

    def bwd(g):
        for p, gp in zip(parts, np.split(g, splits, axis=0)):
            _accum(p, gp)

    return Tensor2._op(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def concat_cols(parts: list[Tensor2]) -> Tensor2:
    if not parts:
        raise ShapeError("concat_cols: empty part list")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row mismatch {p.shape} vs {parts[0].shape}")
    splits = np.cumsum([p.cols for p in parts])[:-1]

    def bwd(g):
        for p, gp in zip(parts, np.split(g, splits, axis=1)):
            _accum(p, gp)

    return Tensor2._op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def slice_rows(a: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start < stop <= a.rows):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    return Tensor2._op(a.data[start:stop].copy(), (a,), bwd)


def gather_rows(a: Tensor2, indices) -> Tensor2:
    """Select rows by index (repeats allowed); scatter-add on backward."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index list")
    if np.any(idx < 0) or np.any(idx >= a.rows):
        raise ShapeError(f"gather_rows: index out of range for {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return Tensor2._op(a.data[idx].copy(), (a,), bwd)


def slice_cols(a: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start < stop <= a.cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return Tensor2._op(a.data[:, start:stop].copy(), (a,), bwd)


def sum_all(a: Tensor2) -> Tensor2:
    def bwd(g):
        _accum(a, np.full_like(a.data, g[0, 0]))

    return Tensor2._op(np.array([[a.data.sum()]]), (a,), bwd)


def mean_all(a: Tensor2) -> Tensor2:
    n = a.data.size

    def bwd(g):
        _accum(a, np.full_like(a.data, g[0, 0] / n))

    return Tensor2._op(np.array([[a.data.mean()]]), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities

_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor2) -> Tensor2:
    """Smooth gated activation (tanh form)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        _accum(a, g * local)

    return Tensor2._op(out, (a,), bwd)


def relu(a: Tensor2) -> Tensor2:
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)

    return Tensor2._op(a.data * mask, (a,), bwd)


def sigmoid(a: Tensor2) -> Tensor2:
    out = _stable_sigmoid(a.data)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor2._op(out, (a,), bwd)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(a: Tensor2, axis: Axis) -> Tensor2:
    """Max-subtracted softmax; along ``axis`` the outputs sum to one."""
    ax = axis.value
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        _accum(a, out * (g - dot))

    return Tensor2._op(out, (a,), bwd)


def layer_norm(x: Tensor2, gamma: Tensor2, beta: Tensor2, eps: float = 1e-5) -> Tensor2:
    """Per-row normalization with learnable affine."""
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not fit {x.shape}"
        )
    n = x.cols
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        _accum(beta, g.sum(axis=0, keepdims=True))
        _accum(gamma, (g * xhat).sum(axis=0, keepdims=True))
        gh = g * gamma.data
        term = gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True)
        _accum(x, term * inv)

    _ = n
    return Tensor2._op(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# tracker-specific fused kernels


def mask_pool(features: Tensor2, masks: Tensor2) -> Tensor2:
    """Soft-mask weighted average of pixel features.

    ``features`` is P x C (one row per pixel), ``masks`` is n x P with
    values in [0, 1].  Row i of the result is the mask-weighted mean of the
    pixel features; an all-zero mask row yields the zero vector via the
    epsilon floor on the denominator.
    """
    if masks.cols != features.rows:
        raise ShapeError(
            f"mask_pool: mask width {masks.shape} does not match pixel count {features.shape}"
        )
    raw = masks.data.sum(axis=1, keepdims=True)
    denom = np.maximum(raw, _MASK_POOL_EPS)
    out = (masks.data @ features.data) / denom

    def bwd(g):
        _accum(features, (masks.data / denom).T @ g)
        gm = (g @ features.data.T - (g * out).sum(axis=1, keepdims=True)) / denom
        gm = np.where(raw > _MASK_POOL_EPS, gm, 0.0)
        _accum(masks, gm)

    return Tensor2._op(out, (features, masks), bwd)


def cosine_sim(a: Tensor2, b: Tensor2) -> Tensor2:
    """Cosine similarity of two row vectors; zero vectors map to 0."""
    if a.rows != 1 or b.rows != 1 or a.cols != b.cols:
        raise ShapeError(f"cosine_sim: need matching row vectors, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data)
    nb = np.linalg.norm(b.data)
    if na < _COSINE_TINY or nb < _COSINE_TINY:
        return Tensor2._op(np.zeros((1, 1)), (a, b), lambda g: None)
    c = float(np.dot(a.data[0], b.data[0])) / (na * nb)

    def bwd(g):
        gs = g[0, 0]
        _accum(a, gs * (b.data / (na * nb) - c * a.data / (na * na)))
        _accum(b, gs * (a.data / (na * nb) - c * b.data / (nb * nb)))

    return Tensor2._op(np.array([[c]]), (a, b), bwd)


# ---------------------------------------------------------------------------
# loss kernels (all "from logits" for numerical stability)


def softmax_xent(logits: Tensor2, targets: np.ndarray,
                 row_weights: np.ndarray | None = None) -> Tensor2:
    """Per-row cross entropy against integer class targets; returns n x 1.

    ``row_weights`` rescales individual rows (e.g. down-weighting the
    no-object class, as set-prediction losses do).
    """
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != logits.rows:
        raise ShapeError(f"softmax_xent: {t.shape[0]} targets for {logits.rows} rows")
    if np.any(t < 0) or np.any(t >= logits.cols):
        raise ValueError("softmax_xent: target class out of range")
    if row_weights is None:
        w = np.ones(t.shape[0])
    else:
        w = np.asarray(row_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != t.shape[0]:
            raise ShapeError("softmax_xent: row_weights length mismatch")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    out = (lse[:, 0] - z[rows, t]) * w
    probs = np.exp(z - lse)

    def bwd(g):
        gw = g * w[:, None]
        gz = probs * gw
        gz[rows, t] -= gw[:, 0]
        _accum(logits, gz)

    return Tensor2._op(out.reshape(-1, 1), (logits,), bwd)


def bce_with_logits(logits: Tensor2, targets: np.ndarray) -> Tensor2:
    """Per-row mean binary cross entropy; targets in [0, 1]; returns n x 1."""
    tgt = np.asarray(targets, dtype=np.float64)
    if tgt.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: target shape {tgt.shape} vs {logits.shape}")
    z = logits.data
    per = np.maximum(z, 0.0) - z * tgt + np.log1p(np.exp(-np.abs(z)))
    out = per.mean(axis=1, keepdims=True)
    p = _stable_sigmoid(z)
    width = z.shape[1]

    def bwd(g):
        _accum(logits, (p - tgt) * (g / width))

    return Tensor2._op(out, (logits,), bwd)


def dice_from_logits(logits: Tensor2, targets: np.ndarray, smooth: float = 1.0) -> Tensor2:
    """Per-row soft dice loss on sigmoid(logits); returns n x 1.

    Zero exactly when the sigmoid mask equals a binary target row.
    """
    tgt = np.asarray(targets, dtype=np.float64)
    if tgt.shape != logits.shape:
        raise ShapeError(f"dice_from_logits: target shape {tgt.shape} vs {logits.shape}")
    p = _stable_sigmoid(logits.data)
    inter = (p * tgt).sum(axis=1, keepdims=True)
    denom = p.sum(axis=1, keepdims=True) + tgt.sum(axis=1, keepdims=True) + smooth
    out = 1.0 - (2.0 * inter + smooth) / denom

    def bwd(g):
        dp = -(2.0 * tgt * denom - (2.0 * inter + smooth)) / denom**2
        _accum(logits, g * dp * p * (1.0 - p))

    return Tensor2._op(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# reverse pass


def backward(output: Tensor2, output_grad: np.ndarray | None = None) -> None:
    """Run the reverse pass from ``output``, filling ``grad`` on ancestors.

    ``output_grad`` defaults to ones.  Gradients accumulate: leaves touched
    by several backward calls sum their contributions until reset.
    """
    if output_grad is None:
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(output_grad, dtype=np.float64)
        if seed.shape != output.data.shape:
            raise ShapeError(
                f"backward: output_grad shape {seed.shape} vs output {output.data.shape}"
            )

    topo: list[Tensor2] = []
    state: dict[int, int] = {}
    stack = [output]
    while stack:
        node = stack[-1]
        st = state.get(id(node), 0)
        if st == 0:
            state[id(node)] = 1
            for p in node._parents:
                if state.get(id(p), 0) == 0:
                    stack.append(p)
        else:
            stack.pop()
            if st == 1:
                state[id(node)] = 2
                topo.append(node)

    _accum(output, seed)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
