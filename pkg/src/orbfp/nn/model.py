"""Dual-branch weight-shared convolutional encoder.

Pipeline for a batch ``(B, n, 2)``:

1. fixed band-limited interpolation to ``(B, n * interp_factor)`` complex;
2. in training mode, bit-transition shuffling and dropout;
3. the I and Q planes are encoded as separate single-channel sequences by the
   same conv stack and the same branch dense layer;
4. the two branch outputs are added and a final dense layer gives the embedding.

Because every weight is shared between the branches and they are merged by a
sum, swapping I and Q leaves the embedding unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .. import PACKET_SAMPLES, SPS
from ..anonymizer import shuffle_indices
from ..errors import ParameterError
from ..signal import interpolation_matrix
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    channels: int
    kernel: int = 7
    pool: int = 1
    dropout: float = 0.1


DEFAULT_CONV = (
    ConvSpec(8, pool=4),
    ConvSpec(8, pool=4),
    ConvSpec(16, pool=2),
    ConvSpec(16, pool=2),
    ConvSpec(32, pool=2),
    ConvSpec(32, pool=2),
    ConvSpec(64),
    ConvSpec(64),
    ConvSpec(72),
    ConvSpec(72),
)


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = PACKET_SAMPLES
    interp_factor: int = 64
    sps: int = SPS
    conv: tuple[ConvSpec, ...] = DEFAULT_CONV
    branch_dense_dim: int = 256
    embedding_dim: int = 256
    dense_dropout: float = 0.1
    margin: float = 0.7
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ParameterError("margin must be positive")
        if self.input_len < 1 or self.interp_factor < 1:
            raise ParameterError("input_len and interp_factor must be positive")
        if self.shuffle and self.input_len % self.sps:
            raise ParameterError("input_len must be a whole number of symbols when shuffling")
        length = self.interp_len
        for i, c in enumerate(self.conv):
            if c.channels < 1 or c.kernel < 1 or c.kernel % 2 == 0:
                raise ParameterError(f"conv layer {i}: channels must be positive and kernel odd")
            if not 0 <= c.dropout < 1:
                raise ParameterError(f"conv layer {i}: dropout must be in [0, 1)")
            if c.pool < 1 or length % c.pool:
                raise ParameterError(f"conv layer {i}: pool {c.pool} does not divide length {length}")
            length //= c.pool
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")

    @property
    def interp_len(self) -> int:
        return self.input_len * self.interp_factor

    @property
    def flat_dim(self) -> int:
        length = self.interp_len
        for c in self.conv:
            length //= c.pool
        return length * (self.conv[-1].channels if self.conv else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [asdict(c) for c in self.conv]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        if "conv" in data:
            data["conv"] = tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in data["conv"])
        return cls(**data)


@lru_cache(maxsize=8)
def _interp_operator(n: int, factor: int, dtype: str) -> np.ndarray:
    return interpolation_matrix(n, factor).astype(dtype)


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class EmbeddingModel:
    def __init__(self, config: ModelConfig | None = None, dtype=np.float32, seed: int | None = None):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        cfg = self.config
        params: dict[str, Tensor] = {}
        cin = 1
        for i, c in enumerate(cfg.conv):
            params[f"conv{i}.w"] = Tensor(_he(rng, (cin, c.kernel, c.channels), cin * c.kernel, self.dtype), True)
            params[f"conv{i}.b"] = Tensor(np.zeros(c.channels, self.dtype), True)
            cin = c.channels
        params["branch.w"] = Tensor(_he(rng, (cfg.flat_dim, cfg.branch_dense_dim), cfg.flat_dim, self.dtype), True)
        params["branch.b"] = Tensor(np.zeros(cfg.branch_dense_dim, self.dtype), True)
        d = cfg.branch_dense_dim
        params["head.w"] = Tensor(
            (rng.standard_normal((d, cfg.embedding_dim)) * np.sqrt(1.0 / d)).astype(self.dtype), True
        )
        params["head.b"] = Tensor(np.zeros(cfg.embedding_dim, self.dtype), True)
        for name, p in params.items():
            p.name = name
        self.params = params

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ParameterError("state dict does not match the model's parameters")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ParameterError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.asarray(v, dtype=self.dtype).copy()

    # -- forward ------------------------------------------------------------------

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        n = self.config.input_len
        if batch.ndim != 3 or batch.shape[1:] != (n, 2) or batch.shape[0] < 1:
            raise ParameterError(f"expected a batch shaped (B, {n}, 2), got {batch.shape}")
        return batch

    def forward(
        self,
        batch,
        training: bool = False,
        rng: np.random.Generator | None = None,
        bits: np.ndarray | None = None,
        shuffle_index: np.ndarray | None = None,
    ) -> Tensor:
        """Embed ``batch`` ``(B, n, 2)``.

        In training mode ``rng`` drives dropout and shuffling. The shuffle
        needs the packets' bits (``bits``, ``(B, n / sps)``) or precomputed
        gather indices (``shuffle_index``); with neither, shuffling is skipped.
        """
        cfg = self.config
        x = self._check_batch(batch).astype(self.dtype, copy=False)
        b = x.shape[0]
        if training and rng is None:
            raise ParameterError("training mode needs an rng")
        rows = Tensor(np.concatenate([x[:, :, 0], x[:, :, 1]], axis=0))  # (2B, n)
        if cfg.interp_factor > 1:
            rows = T.linear_map(rows, _interp_operator(cfg.input_len, cfg.interp_factor, self.dtype.str))
        if training and cfg.shuffle:
            if shuffle_index is None and bits is not None:
                shuffle_index = shuffle_indices(bits, cfg.sps * cfg.interp_factor, rng)
            if shuffle_index is not None:
                rows = T.take_rows(rows, np.concatenate([shuffle_index, shuffle_index], axis=0))
        h = T.reshape(rows, (2 * b, cfg.interp_len, 1))
        for i, c in enumerate(cfg.conv):
            h = T.conv1d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])
            h = T.relu(h)
            h = T.maxpool1d(h, c.pool)
            h = T.dropout(h, c.dropout, rng, training)
        h = T.reshape(h, (2 * b, cfg.flat_dim))
        h = T.relu(T.dense(h, self.params["branch.w"], self.params["branch.b"]))
        h = T.dropout(h, cfg.dense_dropout, rng, training)
        h = T.sum_axis0(T.reshape(h, (2, b, cfg.branch_dense_dim)))
        return T.dense(h, self.params["head.w"], self.params["head.b"])

    def embed(self, batch, chunk: int = 256) -> np.ndarray:
        """Inference-mode embeddings as a plain array, computed in chunks."""
        batch = self._check_batch(batch)
        with T.no_grad():
            out = [self.forward(batch[i : i + chunk]).data for i in range(0, batch.shape[0], chunk)]
        return np.concatenate(out, axis=0)


def forward(model: EmbeddingModel, batch, training: bool = False, **kwargs) -> np.ndarray:
    return model.forward(batch, training, **kwargs).data
