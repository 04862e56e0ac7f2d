"""Restriction-map predictors conditioned on node features and/or type one-hots.

For an incidence ``u <| e`` with ``e = (u, v)`` the predictor input is
assembled with ``u``'s data first; the ``v <| e`` incidence swaps the roles.

    kind      input
    nsd       x_u || x_v
    te        x_u || x_v || e_phi(u) || e_phi(v) || e_psi(e)
    ee        x_u || x_v || e_psi(e)
    ne        x_u || x_v || e_phi(u) || e_phi(v)
    types     e_phi(u) || e_phi(v) || e_psi(e)
    nt        e_phi(u) || e_phi(v)
    et        e_psi(e)
    ensemble  x_u || x_v   through MLP_psi(e), one network per edge type
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError
from .graph import HeteroGraph, one_hot
from .maps import RestrictionMapSet, build_maps, param_count
from .nn import MLP, Module, mlp_param_count

PREDICTOR_KINDS = ("nsd", "te", "ee", "ne", "types", "nt", "et", "ensemble")
FEATURE_KINDS = frozenset({"nsd", "te", "ee", "ne", "ensemble"})
TYPE_ONLY_KINDS = frozenset({"types", "nt", "et"})

_USES_NODE_TYPES = frozenset({"te", "ne", "types", "nt"})
_USES_EDGE_TYPES = frozenset({"te", "ee", "types", "et"})


def _check_kind(kind: str):
    if kind not in PREDICTOR_KINDS:
        raise ValidationError(f"unknown predictor kind {kind!r}; choose from {PREDICTOR_KINDS}")


def input_width(kind: str, w: int, num_node_types: int, num_edge_types: int,
                ensemble_with_node_types: bool = False) -> int:
    """Width of the predictor input for stalk feature width ``w = d*f``."""
    _check_kind(kind)
    width = 2 * w if kind in FEATURE_KINDS else 0
    if kind in _USES_NODE_TYPES or (kind == "ensemble" and ensemble_with_node_types):
        width += 2 * num_node_types
    if kind in _USES_EDGE_TYPES:
        width += num_edge_types
    return width


def num_networks(kind: str, num_edge_types: int) -> int:
    return num_edge_types if kind == "ensemble" else 1


def _net_sizes(in_width: int, hidden: int, out_width: int) -> list[int]:
    return [in_width, hidden, out_width] if hidden > 0 else [in_width, out_width]


def param_budget(kind: str, map_kind: str, d: int, f: int, num_node_types: int, num_edge_types: int,
                 hidden: int = 32, rank: int = 1, ensemble_with_node_types: bool = False) -> int:
    """Exact number of trainable parameters in one predictor."""
    sizes = _net_sizes(input_width(kind, d * f, num_node_types, num_edge_types, ensemble_with_node_types),
                       hidden, param_count(map_kind, d, rank))
    return num_networks(kind, num_edge_types) * mlp_param_count(sizes)


class SheafPredictor(Module):
    """Maps stalk features and graph types to a :class:`RestrictionMapSet`.

    ``hidden=0`` gives a single linear layer.  Pre-built ``nets`` may be
    passed; their widths are checked against the kind.
    """

    def __init__(self, kind: str, map_kind: str, d: int, f: int, num_node_types: int, num_edge_types: int,
                 rng: np.random.Generator | None = None, hidden: int = 32, rank: int = 1,
                 activation: str = "elu", ensemble_with_node_types: bool = False,
                 nets: list[MLP] | None = None):
        _check_kind(kind)
        self.kind = kind
        self.map_kind = map_kind
        self.d, self.f = d, f
        self.rank = rank
        self.num_node_types = num_node_types
        self.num_edge_types = num_edge_types
        self.ensemble_with_node_types = ensemble_with_node_types
        self.in_width = input_width(kind, d * f, num_node_types, num_edge_types, ensemble_with_node_types)
        self.out_width = param_count(map_kind, d, rank)
        count = num_networks(kind, num_edge_types)
        if nets is None:
            if rng is None:
                raise ValidationError("SheafPredictor needs an rng to initialize its networks")
            sizes = _net_sizes(self.in_width, hidden, self.out_width)
            nets = [MLP(sizes, rng, activation=activation) for _ in range(count)]
        if len(nets) != count:
            raise ValidationError(f"predictor {kind!r} needs {count} network(s), got {len(nets)}")
        for i, net in enumerate(nets):
            if net.in_features != self.in_width or net.out_features != self.out_width:
                raise DimensionError(
                    f"network {i} maps {net.in_features} -> {net.out_features}; predictor {kind!r} "
                    f"with {map_kind} maps needs {self.in_width} -> {self.out_width}"
                )
        self.nets = list(nets)

    def assemble_inputs(self, graph: HeteroGraph, x: Tensor, first: np.ndarray, second: np.ndarray,
                        edge_type: np.ndarray) -> Tensor:
        parts = []
        if self.kind in FEATURE_KINDS:
            parts += [ad.take(x, first), ad.take(x, second)]
        if self.kind in _USES_NODE_TYPES or (self.kind == "ensemble" and self.ensemble_with_node_types):
            parts += [Tensor(one_hot(graph.node_type[first], self.num_node_types)),
                      Tensor(one_hot(graph.node_type[second], self.num_node_types))]
        if self.kind in _USES_EDGE_TYPES:
            parts.append(Tensor(one_hot(edge_type, self.num_edge_types)))
        return ad.concat(parts, axis=1)

    def _validate(self, graph: HeteroGraph, x: Tensor):
        if graph.num_edges and graph.edge_type.max() >= self.num_edge_types:
            raise ValidationError(
                f"edge type {int(graph.edge_type.max())} unseen by a predictor built for "
                f"{self.num_edge_types} edge types"
            )
        if graph.num_nodes and graph.node_type.max() >= self.num_node_types:
            raise ValidationError(
                f"node type {int(graph.node_type.max())} unseen by a predictor built for "
                f"{self.num_node_types} node types"
            )
        if self.kind in FEATURE_KINDS and (x.ndim != 2 or x.shape != (graph.num_nodes, self.d * self.f)):
            raise DimensionError(
                f"stalk features must have shape ({graph.num_nodes}, {self.d * self.f}), got {x.shape}"
            )

    def predict_params(self, graph: HeteroGraph, x) -> tuple[Tensor, Tensor]:
        """Parameter vectors for the ``u <| e`` and ``v <| e`` incidences, each (m, P)."""
        x = ad.as_tensor(x)
        self._validate(graph, x)
        m = graph.num_edges
        first = np.concatenate([graph.src, graph.dst])
        second = np.concatenate([graph.dst, graph.src])
        etype = np.concatenate([graph.edge_type, graph.edge_type])
        inputs = self.assemble_inputs(graph, x, first, second, etype)
        if self.kind == "ensemble":
            outputs, order = [], []
            for t, net in enumerate(self.nets):
                rows = np.flatnonzero(etype == t)
                if rows.size:
                    outputs.append(net(ad.take(inputs, rows)))
                    order.append(rows)
            if outputs:
                inverse = np.argsort(np.concatenate(order), kind="stable")
                out = ad.take(ad.concat(outputs, axis=0), inverse)
            else:
                out = Tensor(np.zeros((0, self.out_width)))
        else:
            out = self.nets[0](inputs)
        return out[:m], out[m:]

    def __call__(self, graph: HeteroGraph, x) -> RestrictionMapSet:
        p_src, p_dst = self.predict_params(graph, x)
        return RestrictionMapSet(
            build_maps(self.map_kind, p_src, self.d, self.rank),
            build_maps(self.map_kind, p_dst, self.d, self.rank),
            self.d,
            kind=self.map_kind,
        )
