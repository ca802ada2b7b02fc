"""Learnable kernels assembled from the autograd op set.

Holds the parameter registry plus the composite blocks the trackers use:
linear maps, the two-layer residual feature MLP, and multi-head attention
with a selectable softmax axis (over keys for standard cross-attention,
over queries for the disappearance tracker).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Axis,
    ShapeError,
    Tensor2,
    add,
    concat_cols,
    gelu,
    layer_norm,
    matmul,
    scale,
    slice_cols,
    softmax,
    transpose,
)

__all__ = [
    "AttentionConfig",
    "ParamStore",
    "attention",
    "cross_attention",
    "init_attention_params",
    "init_layer_norm_params",
    "init_linear_params",
    "init_mlp_params",
    "linear",
    "mlp",
    "residual_mlp",
]


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and normalization contract for one attention block."""

    model_dim: int
    num_heads: int = 4
    softmax_axis: Axis = Axis.COLS  # COLS = over keys (standard)

    def __post_init__(self):
        if self.num_heads < 1 or self.model_dim < self.num_heads:
            raise ValueError(
                f"need model_dim >= num_heads >= 1, got {self.model_dim}/{self.num_heads}"
            )
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )


class ParamStore:
    """Named parameter tensors with paired gradient accumulators.

    Leaf ``Tensor2`` values; ``grad`` buffers are allocated at registration
    so every parameter always has exactly one same-shaped accumulator.
    """

    def __init__(self):
        self._params: dict[str, Tensor2] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor2:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor2(value)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor2:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.data.copy())
        return other

    def copy_from(self, other: "ParamStore") -> None:
        """Transplant values for every name present in both stores."""
        for name, t in self._params.items():
            if name in other:
                src = other[name]
                if src.shape != t.shape:
                    raise ShapeError(f"transplant {name!r}: {src.shape} vs {t.shape}")
                t.data = src.data.copy()


# ---------------------------------------------------------------------------
# initializers


def init_linear_params(store: ParamStore, prefix: str, fan_in: int, fan_out: int,
                       rng: np.random.Generator, out_scale: float = 1.0) -> None:
    bound = np.sqrt(6.0 / (fan_in + fan_out)) * out_scale
    store.add(prefix + ".w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    store.add(prefix + ".b", np.zeros((1, fan_out)))


def init_layer_norm_params(store: ParamStore, prefix: str, dim: int) -> None:
    store.add(prefix + ".g", np.ones((1, dim)))
    store.add(prefix + ".b", np.zeros((1, dim)))


QK_INIT_GAIN = 5.0


def init_attention_params(store: ParamStore, prefix: str, dim: int,
                          rng: np.random.Generator) -> None:
    # Small-budget-friendly initialization: query and key projections start
    # identical and amplified, so aligned query/key pairs score as a scaled
    # positive semidefinite form and attention is selective from the first
    # step; value/output start near identity so the attended key's content
    # reaches the residual stream unmixed.
    bound = np.sqrt(6.0 / (2 * dim))
    wqk = QK_INIT_GAIN * rng.uniform(-bound, bound, size=(dim, dim))
    store.add(f"{prefix}.wq.w", wqk.copy())
    store.add(f"{prefix}.wq.b", np.zeros((1, dim)))
    store.add(f"{prefix}.wk.w", wqk.copy())
    store.add(f"{prefix}.wk.b", np.zeros((1, dim)))
    noise = np.sqrt(6.0 / (2 * dim)) * 0.2
    for name in ("v", "o"):
        store.add(f"{prefix}.w{name}.w",
                  np.eye(dim) + rng.uniform(-noise, noise, size=(dim, dim)))
        store.add(f"{prefix}.w{name}.b", np.zeros((1, dim)))


def init_mlp_params(store: ParamStore, prefix: str, dim: int, hidden: int,
                    rng: np.random.Generator, out_scale: float = 1.0) -> None:
    init_linear_params(store, prefix + ".l1", dim, hidden, rng)
    init_linear_params(store, prefix + ".l2", hidden, dim, rng, out_scale=out_scale)


# ---------------------------------------------------------------------------
# composites


def linear(x: Tensor2, w: Tensor2, b: Tensor2) -> Tensor2:
    """y = x @ w + b with b broadcast over rows."""
    if x.cols != w.rows:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b.shape != (1, w.cols):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    return add(matmul(x, w), b)


def mlp(x: Tensor2, store: ParamStore, prefix: str) -> Tensor2:
    """Two-layer feed-forward: linear, gelu, linear."""
    h = gelu(linear(x, store[prefix + ".l1.w"], store[prefix + ".l1.b"]))
    return linear(h, store[prefix + ".l2.w"], store[prefix + ".l2.b"])


def residual_mlp(x: Tensor2, store: ParamStore, prefix: str) -> Tensor2:
    """x + MLP(x): near-identity when the output layer starts small."""
    return add(x, mlp(x, store, prefix))


def attention(q: Tensor2, kv: Tensor2, cfg: AttentionConfig, store: ParamStore,
              prefix: str, v: Tensor2 | None = None,
              weights_out: list | None = None) -> Tensor2:
    """Multi-head attention; ``cfg.softmax_axis`` picks the normalization.

    ``Axis.COLS`` is standard attention (each query's weights over keys sum
    to one); ``Axis.ROWS`` normalizes over queries per key, so several
    queries cannot each claim the same key with full weight.  When
    ``weights_out`` is a list, the per-head weight matrices are appended to
    it (inspection only, detached from the graph).
    """
    if q.cols != cfg.model_dim or kv.cols != cfg.model_dim:
        raise ShapeError(
            f"attention: query {q.shape} / key-value {kv.shape} do not match "
            f"model_dim {cfg.model_dim}"
        )
    if v is None:
        v = kv
    dh = cfg.model_dim // cfg.num_heads
    qp = linear(q, store[prefix + ".wq.w"], store[prefix + ".wq.b"])
    kp = linear(kv, store[prefix + ".wk.w"], store[prefix + ".wk.b"])
    vp = linear(v, store[prefix + ".wv.w"], store[prefix + ".wv.b"])
    heads = []
    for h in range(cfg.num_heads):
        lo, hi = h * dh, (h + 1) * dh
        qi = slice_cols(qp, lo, hi)
        ki = slice_cols(kp, lo, hi)
        vi = slice_cols(vp, lo, hi)
        scores = scale(matmul(qi, transpose(ki)), 1.0 / np.sqrt(dh))
        weights = softmax(scores, cfg.softmax_axis)
        if weights_out is not None:
            weights_out.append(weights.data.copy())
        heads.append(matmul(weights, vi))
    out = heads[0] if len(heads) == 1 else concat_cols(heads)
    return linear(out, store[prefix + ".wo.w"], store[prefix + ".wo.b"])


def cross_attention(q: Tensor2, kv: Tensor2, cfg: AttentionConfig, store: ParamStore,
                    prefix: str = "attn") -> Tensor2:
    """Attention where queries and keys/values come from different sets."""
    return attention(q, kv, cfg, store, prefix)
