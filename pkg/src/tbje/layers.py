"""Transformer building blocks: scaled dot-product attention, multi-head
attention over projected subspaces, the position-wise MLP, the residual
sublayer wrapper, and sinusoidal positional encodings.

Parameter containers expose ``named(prefix)`` so the model can iterate every
learnable tensor under a stable dotted name; those names are also the keys
used in checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .tensor import Tensor

NamedTensors = Iterator[tuple[str, Tensor]]


def xavier_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


@dataclass
class AffineParams:
    """Learned map x @ weight + bias; weight is (in, out)."""

    weight: Tensor
    bias: Tensor

    @staticmethod
    def init(rng: np.random.Generator, n_in: int, n_out: int) -> "AffineParams":
        return AffineParams(
            weight=Tensor(xavier_uniform(rng, n_in, n_out), requires_grad=True),
            bias=Tensor(np.zeros(n_out), requires_grad=True))

    def apply(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def named(self, prefix: str) -> NamedTensors:
        yield prefix + ".weight", self.weight
        yield prefix + ".bias", self.bias


@dataclass
class MhaParams:
    """Per-head query/key/content projections (width k -> k/h each) plus the
    output projection applied after head concatenation."""

    query: list[AffineParams]
    key: list[AffineParams]
    content: list[AffineParams]
    out: AffineParams
    heads: int
    width: int

    @staticmethod
    def init(rng: np.random.Generator, width: int, heads: int) -> "MhaParams":
        if heads < 1 or width % heads != 0:
            raise ConfigError(
                f"hidden width {width} must be a positive multiple of the "
                f"head count {heads}")
        sub = width // heads
        mk = lambda: [AffineParams.init(rng, width, sub) for _ in range(heads)]
        return MhaParams(query=mk(), key=mk(), content=mk(),
                         out=AffineParams.init(rng, width, width),
                         heads=heads, width=width)

    def named(self, prefix: str) -> NamedTensors:
        for tag, group in (("q", self.query), ("k", self.key), ("c", self.content)):
            for i, p in enumerate(group):
                yield from p.named(f"{prefix}.{tag}{i}")
        yield from self.out.named(prefix + ".out")


@dataclass
class MlpParams:
    """Two affine maps k -> d_ff -> k with a pointwise activation between."""

    hidden: AffineParams
    out: AffineParams
    activation: str = "relu"

    @staticmethod
    def init(rng: np.random.Generator, width: int, inner: int) -> "MlpParams":
        if inner < 1:
            raise ConfigError(f"MLP inner width must be positive, got {inner}")
        return MlpParams(hidden=AffineParams.init(rng, width, inner),
                         out=AffineParams.init(rng, inner, width))

    def apply(self, x: Tensor) -> Tensor:
        return self.out.apply(T.relu(self.hidden.apply(x)))

    def named(self, prefix: str) -> NamedTensors:
        yield from self.hidden.named(prefix + ".hidden")
        yield from self.out.named(prefix + ".out")


@dataclass
class SublayerParams:
    """Layer-norm gain and bias owned by one residual sublayer."""

    gain: Tensor
    bias: Tensor

    @staticmethod
    def init(width: int) -> "SublayerParams":
        return SublayerParams(gain=Tensor(np.ones(width), requires_grad=True),
                              bias=Tensor(np.zeros(width), requires_grad=True))

    def named(self, prefix: str) -> NamedTensors:
        yield prefix + ".gain", self.gain
        yield prefix + ".bias", self.bias


def _key_keep(mask: Optional[np.ndarray], scores_ndim: int) -> Optional[np.ndarray]:
    if mask is None:
        return None
    keep = np.asarray(mask, dtype=bool)
    if not keep.any(axis=-1).all():
        raise ContractError("attention is undefined when every key is masked")
    # broadcast one key-validity row across all query rows
    while keep.ndim < scores_ndim:
        keep = keep[..., None, :]
    return keep


def attention(query: Tensor, key: Tensor, content: Tensor,
              key_mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(Q Kᵀ / sqrt(width)) C with padded key rows forced to -inf."""
    if key.data.shape[-2] != content.data.shape[-2]:
        raise ContractError(
            f"key rows {key.data.shape[-2]} != content rows "
            f"{content.data.shape[-2]}")
    scores = T.scale(T.matmul(query, T.transpose(key)),
                     1.0 / math.sqrt(query.data.shape[-1]))
    keep = _key_keep(key_mask, scores.data.ndim)
    if keep is not None:
        scores = T.masked_fill(scores, keep, -np.inf)
    return T.matmul(T.softmax(scores, axis=-1), content)


def multi_head_attention(params: MhaParams, query: Tensor, key: Tensor,
                         content: Tensor,
                         key_mask: Optional[np.ndarray] = None) -> Tensor:
    heads = [attention(params.query[i].apply(query),
                       params.key[i].apply(key),
                       params.content[i].apply(content),
                       key_mask)
             for i in range(params.heads)]
    return params.out.apply(T.concat(heads, axis=-1))


def sublayer(x: Tensor, f: Callable[[Tensor], Tensor], params: SublayerParams,
             dropout_p: float = 0.0, rng: Optional[np.random.Generator] = None,
             training: bool = False) -> Tensor:
    """Residual wrapper layer_norm(x + dropout(f(x)))."""
    fx = f(x)
    if fx.data.shape != x.data.shape:
        raise ContractError(
            f"sublayer function changed shape {x.data.shape} -> {fx.data.shape}")
    return T.layer_norm(T.add(x, T.dropout(fx, dropout_p, rng, training)),
                        params.gain, params.bias)


def positional_encoding(n: int, width: int) -> Tensor:
    """Sinusoidal position table; row p holds interleaved
    sin(p / 10000^(2i/width)), cos(p / 10000^(2i/width))."""
    if n < 1 or width < 1:
        raise ConfigError(f"positional encoding needs n>=1 and width>=1, "
                          f"got n={n}, width={width}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    even = np.arange(0, width, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, even / width)
    table = np.zeros((n, width))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : width // 2])
    return Tensor(table)
