"""Pre-LN bidirectional transformer encoder with a tied MLM head."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigError, EmptyPool, ShapeMismatch
from .tensor import Tensor
from .tokenizer import Role

# layer whose mean-pooled output feeds the contrastive loss in a 12-layer model
PAPER_POOL_LAYER = 8
NEG_INF = -1e9


def default_pool_layer(n_layers: int) -> int:
    """Two thirds of the depth, rounded up (8 of 12, 3 of 4)."""
    return math.ceil(2 * n_layers / 3)


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 64
    pool_layer: int | None = None
    init_std: float = 0.02

    def __post_init__(self):
        if self.pool_layer is None:
            self.pool_layer = default_pool_layer(self.n_layers)
        self.validate()

    def validate(self):
        if self.d_model % max(self.n_heads, 1) or self.n_heads < 1:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_layers < 0 or self.vocab_size < 6 or self.max_len < 2:
            raise ConfigError("n_layers >= 0, vocab_size > 5 and max_len >= 2 required")
        lo = 1 if self.n_layers else 0
        if not lo <= self.pool_layer <= self.n_layers:
            raise ConfigError(f"pool_layer {self.pool_layer} outside [{lo}, {self.n_layers}]")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**d)


@dataclass
class EncoderOutput:
    hidden: list[Tensor]  # index 0 is the embedding output, then one per layer


def layer_param_names(i: int) -> list[str]:
    p = f"layer.{i}."
    return [p + n for n in (
        "ln1.gain", "ln1.bias",
        "attn.q", "attn.q_bias", "attn.k",  # no key bias: softmax cancels it, its gradient is always zero
        "attn.v", "attn.v_bias", "attn.o", "attn.o_bias",
        "ln2.gain", "ln2.bias",
        "ffn.in", "ffn.in_bias", "ffn.out", "ffn.out_bias",
    )]


MLM_ONLY_PARAMS = ("mlm.ln.gain", "mlm.ln.bias", "mlm.bias")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed.tok": (v, d), "embed.pos": (config.max_len, d)}
    for i in range(config.n_layers):
        for name in layer_param_names(i):
            kind = name.split(".", 2)[2]
            shapes[name] = {
                "attn.q": (d, d), "attn.k": (d, d), "attn.v": (d, d), "attn.o": (d, d),
                "ffn.in": (d, f), "ffn.out": (f, d), "ffn.in_bias": (f,),
            }.get(kind, (d,))
    shapes.update({"mlm.ln.gain": (d,), "mlm.ln.bias": (d,), "mlm.bias": (v,)})
    return shapes


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0,
                dtype=np.float32) -> dict[str, Tensor]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("gain"):
            arr = np.ones(shape)
        elif name.endswith("bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, config.init_std, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor]

    @classmethod
    def init(cls, config: ModelConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> "Model":
        return cls(config, init_params(config, seed, dtype))

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: Tensor(p.data.astype(dtype), requires_grad=True, name=k)
                                   for k, p in self.params.items()})

    def copy(self) -> "Model":
        return self.astype(next(iter(self.params.values())).dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path: str | Path, extra: Mapping[str, np.ndarray] | None = None,
             metadata: Mapping | None = None) -> None:
        meta = {"model_config": self.config.to_dict(), **(metadata or {})}
        T.save_tensors(path, {**{k: p.data for k, p in self.params.items()}, **(extra or {})}, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", dict[str, np.ndarray], dict]:
        """Returns the model, any non-parameter tensors, and the metadata."""
        arrays, meta = T.load_tensors(path)
        config = ModelConfig.from_dict(meta["model_config"])
        shapes = param_shapes(config)
        for name, shape in shapes.items():
            if name not in arrays or arrays[name].shape != shape:
                raise ShapeMismatch(f"checkpoint parameter {name} missing or not {shape}")
        params = {k: Tensor(arrays.pop(k), requires_grad=True, name=k) for k in shapes}
        return cls(config, params), arrays, meta


def _heads(x: Tensor, b: int, t: int, h: int, dh: int) -> Tensor:
    return T.transpose(T.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))


def forward(model: Model, ids: np.ndarray, roles: np.ndarray) -> EncoderOutput:
    """Run the encoder on a padded batch (B, T) or a single sequence (T,).

    Keys at [pad] positions are masked out of every attention row.
    """
    cfg, p = model.config, model.params
    ids = np.asarray(ids)
    roles = np.asarray(roles)
    single = ids.ndim == 1
    if single:
        ids, roles = ids[None], roles[None]
    if ids.shape != roles.shape or ids.ndim != 2:
        raise ShapeMismatch(f"ids {ids.shape} vs roles {roles.shape}")
    b, t = ids.shape
    if t > cfg.max_len:
        raise ShapeMismatch(f"sequence length {t} exceeds max_len {cfg.max_len}")
    h, dh = cfg.n_heads, cfg.head_dim
    x = T.embed_lookup(p["embed.tok"], ids) + T.getitem(p["embed.pos"], slice(0, t))
    dtype = x.dtype
    key_mask = Tensor(np.where(roles == Role.PAD, NEG_INF, 0.0).astype(dtype)[:, None, None, :])
    inv_sqrt = 1.0 / math.sqrt(dh)
    hidden = [x]
    for i in range(cfg.n_layers):
        n = f"layer.{i}."
        y = T.layer_norm(x, p[n + "ln1.gain"], p[n + "ln1.bias"])
        q = _heads(T.linear(y, p[n + "attn.q"], p[n + "attn.q_bias"]), b, t, h, dh)
        k = _heads(T.linear(y, p[n + "attn.k"]), b, t, h, dh)
        v = _heads(T.linear(y, p[n + "attn.v"], p[n + "attn.v_bias"]), b, t, h, dh)
        scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), inv_sqrt) + key_mask
        ctx = T.softmax(scores, axis=-1) @ v
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, cfg.d_model))
        x = x + T.linear(ctx, p[n + "attn.o"], p[n + "attn.o_bias"])
        y = T.layer_norm(x, p[n + "ln2.gain"], p[n + "ln2.bias"])
        ff = T.gelu(T.linear(y, p[n + "ffn.in"], p[n + "ffn.in_bias"]))
        x = x + T.linear(ff, p[n + "ffn.out"], p[n + "ffn.out_bias"])
        hidden.append(x)
    if single:
        hidden = [T.reshape(hs, (t, cfg.d_model)) for hs in hidden]
    return EncoderOutput(hidden)


def pool_mask(roles: np.ndarray) -> np.ndarray:
    """Positions that count toward a sentence vector: content and [mask]."""
    roles = np.asarray(roles)
    return (roles == Role.CONTENT) | (roles == Role.MASK)


def mean_pool(output: EncoderOutput, roles: np.ndarray, layer: int) -> Tensor:
    """Mean of one layer's rows over content and [mask] positions."""
    if not 0 <= layer < len(output.hidden):
        raise ShapeMismatch(f"layer {layer} not in [0, {len(output.hidden) - 1}]")
    mask = pool_mask(roles)
    if np.any(mask.sum(axis=-1) == 0):
        raise EmptyPool("a sequence has no content or [mask] positions to pool")
    return T.mean_rows(output.hidden[layer], mask)


def mlm_logits(output: EncoderOutput, model: Model, rows: np.ndarray | None = None) -> Tensor:
    """Vocabulary scores from the last layer, tied to ``embed.tok``.

    ``rows`` (flat indices into the batch positions) restricts the
    projection to those positions; the result is then (len(rows), V).
    """
    p = model.params
    last = output.hidden[-1]
    if rows is not None:
        last = T.embed_lookup(T.reshape(last, (-1, model.config.d_model)), np.asarray(rows))
    y = T.layer_norm(last, p["mlm.ln.gain"], p["mlm.ln.bias"])
    return T.matmul(y, T.transpose(p["embed.tok"])) + p["mlm.bias"]


def save_config(path: str | Path, config: ModelConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
