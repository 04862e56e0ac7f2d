"""The heterogeneous sheaf diffusion encoder.

Pipeline: per-type affine preprocessing -> stalk projection -> ``L`` layers of
(predict sheaf, assemble + normalize Laplacian, diffusion step) -> the list
of hidden cochains.  Task-specific postprocessing lives in
:func:`postprocess_nc` and :func:`postprocess_lp`.
"""

from __future__ import annotations

import json
import struct
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError
from .graph import FeatureStore, HeteroGraph
from .laplacian import SheafLaplacian, assemble, laplacian_apply, normalization_factors, normalize
from .maps import MAP_KINDS
from .nn import Linear, Module, glorot_uniform, parameter
from .predictors import PREDICTOR_KINDS, SheafPredictor

INPUT_MODES = ("type0", "type1", "type2")


@dataclass
class ModelConfig:
    d: int = 3
    hidden_channels: int = 8
    layers: int = 2
    predictor: str = "te"
    map_kind: str = "general"
    rank: int = 1
    input_mode: str = "type0"
    input_dim: int = 16
    predictor_hidden: int = 32
    input_dropout: float = 0.0
    dropout: float = 0.0
    initial_dropout: float = 0.0
    share_sheaf_across_layers: bool = False
    ensemble_with_node_types: bool = False
    grad_through_norm: bool = False
    norm_eps: float = 1e-8
    activation: str = "elu"
    task: str = "nc"

    def __post_init__(self):
        if self.task not in ("nc", "lp"):
            raise ValidationError(f"task must be 'nc' or 'lp', got {self.task!r}")
        if self.predictor not in PREDICTOR_KINDS:
            raise ValidationError(f"predictor must be one of {PREDICTOR_KINDS}, got {self.predictor!r}")
        if self.map_kind not in MAP_KINDS:
            raise ValidationError(f"map_kind must be one of {MAP_KINDS}, got {self.map_kind!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        for name in ("input_dropout", "dropout", "initial_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 0.9:
                raise ValidationError(f"{name} must lie in [0, 0.9], got {rate}")
        if self.d < 1 or self.hidden_channels < 1 or self.layers < 0 or self.input_dim < 1:
            raise ValidationError("d, hidden_channels and input_dim must be >= 1 and layers >= 0")
        if self.map_kind == "lowrank" and not 1 <= self.rank <= self.d:
            raise ValidationError(f"rank must lie in [1, d], got {self.rank}")
        if not 2 <= self.d <= 5 or not 2 <= self.layers <= 8:
            warnings.warn(f"d={self.d}, layers={self.layers} lie outside the usual search space "
                          "(d in 2..5, layers in 2..8)", stacklevel=3)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GraphSchema:
    """Dataset facts the parameter shapes depend on."""

    num_node_types: int
    num_edge_types: int
    feature_dims: list[int | None]
    type_counts: list[int]
    target_types: list[int] = field(default_factory=list)

    def input_dims(self, mode: str) -> list[int]:
        dims = []
        for t in range(self.num_node_types):
            if mode == "type2":
                dims.append(self.type_counts[t])
            elif self.feature_dims[t] is not None:
                dims.append(self.feature_dims[t])
            elif mode == "type1" and t not in self.target_types:
                dims.append(1)
            else:
                raise ValidationError(f"input mode {mode} needs features for node type {t}")
        return dims

    def check(self, other: "GraphSchema"):
        for name in ("num_node_types", "num_edge_types", "feature_dims", "type_counts"):
            expected, actual = getattr(self, name), getattr(other, name)
            if expected != actual:
                raise ValidationError(f"schema mismatch for {name}: expected {expected}, got {actual}")

    @classmethod
    def from_dict(cls, data: dict) -> "GraphSchema":
        return cls(**data)


def prepare_inputs(graph: HeteroGraph, features: FeatureStore, mode: str,
                   target_types=()) -> dict[int, np.ndarray]:
    """Raw per-type input matrices for ``type0``/``type1``/``type2`` inputs.

    ``type1`` keeps only target-type features and gives every other node a
    zero vector; ``type2`` replaces all features by one-hot ids within type.
    """
    counts = graph.type_counts()
    out = {}
    for t in range(graph.num_node_types):
        if mode == "type2":
            out[t] = np.eye(counts[t])
        elif mode == "type1" and t not in target_types:
            width = features.dim(t) if t in features else 1
            out[t] = np.zeros((counts[t], width))
        elif mode in ("type0", "type1"):
            if t not in features:
                raise ValidationError(f"input mode {mode}: missing feature matrix for node type {t}")
            if features[t].shape[0] != counts[t]:
                raise ValidationError(f"type {t}: {features[t].shape[0]} feature rows for {counts[t]} nodes")
            out[t] = features[t]
        else:
            raise ValidationError(f"unknown input mode {mode!r}")
    return out


def project_to_stalks(x, layer: Linear, d: int, f: int) -> Tensor:
    """Affine map to ``d*f`` features per node, reshaped to an ``(n*d, f)`` cochain."""
    x = ad.as_tensor(x)
    if layer.out_features != d * f:
        raise DimensionError(f"stalk projection outputs {layer.out_features} features, need d*f = {d * f}")
    return layer(x).reshape(x.shape[0] * d, f)


def diffusion_layer(X, delta: SheafLaplacian, W1, W2, activation: str = "elu", dropout: float = 0.0,
                    training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """``X - act(Delta (I_n kron W1) X W2)``, dropout applied after the activation."""
    X = ad.as_tensor(X)
    n, d = delta.num_nodes, delta.d
    W1, W2 = ad.as_tensor(W1), ad.as_tensor(W2)
    if X.ndim != 2 or X.shape[0] != n * d:
        raise DimensionError(f"diffusion_layer: cochain shape {X.shape} does not match n*d = {n * d}")
    f = X.shape[1]
    if W1.shape != (d, d) or W2.shape != (f, f):
        raise DimensionError(f"diffusion_layer: W1 {W1.shape} / W2 {W2.shape} need ({d},{d}) / ({f},{f})")
    Y = (W1 @ (X @ W2).reshape(n, d, f)).reshape(n * d, f)
    Y = ad.activation(activation)(laplacian_apply(delta, Y))
    Y = ad.dropout(Y, dropout, training, rng)
    return X - Y


def l2_normalize_rows(x) -> Tensor:
    """Row-wise unit-norm scaling; rows with norm below 1e-12 map to zero."""
    x = ad.as_tensor(x)
    sq = (x * x).sum(axis=1, keepdims=True)
    zero = sq.data < 1e-24
    return x * (~zero).astype(float) / ad.sqrt(sq + zero.astype(float))


@dataclass
class HiddenState:
    """Cochains ``[h0, h1, ..., hL]``; ``h0`` is the stalk projection."""

    layers: list[Tensor]
    num_nodes: int
    d: int
    f: int

    @property
    def final(self) -> Tensor:
        return self.layers[-1]

    def node_view(self, layer: int = -1) -> Tensor:
        return self.layers[layer].reshape(self.num_nodes, self.d * self.f)


def postprocess_nc(H: HiddenState) -> Tensor:
    return l2_normalize_rows(H.node_view(-1))


def postprocess_lp(H: HiddenState) -> Tensor:
    """Concatenate the normalized hidden states of layers 1..L."""
    if len(H.layers) < 2:
        raise ValidationError("link-prediction postprocessing needs at least one diffusion layer")
    return ad.concat([l2_normalize_rows(H.node_view(i)) for i in range(1, len(H.layers))], axis=1)


class HetSheafModel(Module):
    def __init__(self, config: ModelConfig, schema: GraphSchema, rng: np.random.Generator):
        self.config = config
        self.schema = schema
        c = config
        self.input_layers = [Linear(width, c.input_dim, rng) for width in schema.input_dims(c.input_mode)]
        self.stalk_layer = Linear(c.input_dim, c.d * c.hidden_channels, rng)
        self.W1 = [parameter(glorot_uniform(rng, c.d, c.d)) for _ in range(c.layers)]
        self.W2 = [parameter(glorot_uniform(rng, c.hidden_channels, c.hidden_channels)) for _ in range(c.layers)]
        n_predictors = min(c.layers, 1) if c.share_sheaf_across_layers else c.layers
        self.predictors = [
            SheafPredictor(c.predictor, c.map_kind, c.d, c.hidden_channels, schema.num_node_types,
                           schema.num_edge_types, rng, hidden=c.predictor_hidden, rank=c.rank,
                           activation=c.activation, ensemble_with_node_types=c.ensemble_with_node_types)
            for _ in range(n_predictors)
        ]
        self._norm_cache: dict[int, Tensor] | None = None

    @property
    def embedding_width(self) -> int:
        return self.config.d * self.config.hidden_channels

    def predictor(self, layer: int) -> SheafPredictor:
        return self.predictors[0 if self.config.share_sheaf_across_layers else layer]

    @contextmanager
    def frozen_normalization(self):
        """Reuse the first forward's ``D^{-1/2}`` factors as constants.

        Finite differences of the frozen function match the stop-gradient
        tape gradient.
        """
        self._norm_cache = {}
        try:
            yield
        finally:
            self._norm_cache = None

    def preprocess(self, graph: HeteroGraph, inputs: dict[int, np.ndarray], training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
        parts, order = [], []
        for t, layer in enumerate(self.input_layers):
            members = graph.nodes_of_type(t)
            if not members.size:
                continue
            raw = ad.dropout(Tensor(inputs[t]), self.config.initial_dropout, training, rng)
            parts.append(layer(raw))
            order.append(members)
        inverse = np.argsort(np.concatenate(order), kind="stable")
        return ad.take(ad.concat(parts, axis=0), inverse)

    def laplacian(self, graph: HeteroGraph, X: Tensor, layer: int) -> SheafLaplacian:
        c = self.config
        n = graph.num_nodes
        maps = self.predictor(layer)(graph, X.reshape(n, c.d * c.hidden_channels))
        L = assemble(maps, graph)
        cache = self._norm_cache
        if cache is not None and layer in cache:
            return normalize(L, c.norm_eps, d_inv_sqrt=cache[layer])
        factors = normalization_factors(L, c.norm_eps, c.grad_through_norm)
        if cache is not None:
            cache[layer] = factors.detach()
        return normalize(L, c.norm_eps, d_inv_sqrt=factors)

    def forward(self, graph: HeteroGraph, inputs: dict[int, np.ndarray], training: bool = False,
                rng: np.random.Generator | None = None) -> HiddenState:
        c = self.config
        if graph.num_node_types != self.schema.num_node_types or graph.num_edge_types != self.schema.num_edge_types:
            raise ValidationError(
                f"graph has {graph.num_node_types} node / {graph.num_edge_types} edge types; model expects "
                f"{self.schema.num_node_types} / {self.schema.num_edge_types}"
            )
        h = self.preprocess(graph, inputs, training, rng)
        X = project_to_stalks(h, self.stalk_layer, c.d, c.hidden_channels)
        X = ad.dropout(X, c.input_dropout, training, rng)
        states = [X]
        for layer in range(c.layers):
            delta = self.laplacian(graph, X, layer)
            X = diffusion_layer(X, delta, self.W1[layer], self.W2[layer], c.activation, c.dropout, training, rng)
            states.append(X)
        return HiddenState(states, graph.num_nodes, c.d, c.hidden_channels)

    __call__ = forward


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"HSHF"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: dict, state: dict[str, np.ndarray]):
    """Write ``HSHF | u32 version | u32 len + config JSON | u32 count | blobs``.

    Each blob is ``u16 name length, name, u8 ndim, u64 extents, float64 data``,
    all little-endian.
    """
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(config_bytes)), config_bytes,
              struct.pack("<I", len(state))]
    for name, value in state.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path} is not a checkpoint (bad magic bytes)")
    try:
        version, config_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        config = json.loads(raw[pos:pos + config_len].decode("utf-8"))
        pos += config_len
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            state[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(raw):
        raise ValidationError(f"{path}: {len(raw) - pos} trailing bytes after the last parameter")
    return config, state
