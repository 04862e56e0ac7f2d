"""Differentiable builders turning flat parameter vectors into d x d restriction maps.

Every builder accepts either one vector of shape ``(P,)`` (returning a
``(d, d)`` map) or a batch ``(m, P)`` (returning ``(m, d, d)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError

MAP_KINDS = ("diagonal", "orthogonal", "general", "lowrank")
DEFAULT_MAP_KINDS = ("diagonal", "orthogonal", "general")


def param_count(kind: str, d: int, rank: int = 1) -> int:
    if kind == "diagonal":
        return d
    if kind == "general":
        return d * d
    if kind == "orthogonal":
        return d * (d - 1) // 2
    if kind == "lowrank":
        return 2 * d * rank + d
    raise ValidationError(f"unknown map kind {kind!r}; choose from {MAP_KINDS}")


def _batched(params, expected: int, what: str) -> tuple[Tensor, bool]:
    params = ad.as_tensor(params)
    single = params.ndim == 1
    if single:
        params = params.reshape(1, -1)
    if params.ndim != 2 or params.shape[1] != expected:
        raise DimensionError(f"{what} expects {expected} parameters per map, got shape {params.shape}")
    return params, single


def _unbatch(maps: Tensor, single: bool) -> Tensor:
    return maps.reshape(maps.shape[1:]) if single else maps


def build_diagonal(params, d: int) -> Tensor:
    params, single = _batched(params, d, "diagonal map")
    maps = params.reshape(-1, d, 1) * np.eye(d)
    return _unbatch(maps, single)


def build_general(params, d: int) -> Tensor:
    params, single = _batched(params, d * d, "general map")
    return _unbatch(params.reshape(-1, d, d), single)


def householder_selectors(d: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Constant matrices packing parameters into Householder vectors.

    Vector ``j`` (for j < d-1) is ``params @ S_j + e_j``: a unit pivot at
    position ``j``, the next ``d-1-j`` parameters below it, zeros above.
    """
    total = d * (d - 1) // 2
    selectors = []
    offset = 0
    for j in range(d - 1):
        S = np.zeros((total, d))
        for k, row in enumerate(range(j + 1, d)):
            S[offset + k, row] = 1.0
        offset += d - 1 - j
        e = np.zeros(d)
        e[j] = 1.0
        selectors.append((S, e))
    return selectors


def build_orthogonal(params, d: int) -> Tensor:
    """Product of ``d-1`` Householder reflections ``H_j = I - 2 v v^T / |v|^2``.

    The unit pivot keeps ``|v_j|^2 >= 1``, so no epsilon guard is needed.
    The determinant is always ``(-1)^(d-1)``.
    """
    if d < 1:
        raise DimensionError(f"stalk dimension must be >= 1, got {d}")
    params, single = _batched(params, d * (d - 1) // 2, "orthogonal map")
    m = params.shape[0]
    eye = np.eye(d)
    out = None
    for S, e in householder_selectors(d):
        v = params @ S + e
        sq = (v * v).sum(axis=1).reshape(m, 1, 1)
        outer = v.reshape(m, d, 1) * v.reshape(m, 1, d)
        H = eye - 2.0 * outer / sq
        out = H if out is None else out @ H
    if out is None:
        out = Tensor(np.broadcast_to(eye, (m, d, d)).copy())
    return _unbatch(out, single)


def build_lowrank(params, d: int, rank: int = 1) -> Tensor:
    """``A @ B^T + diag(c)`` with ``A, B`` of shape ``d x rank``."""
    if not 1 <= rank <= d:
        raise DimensionError(f"low-rank map needs 1 <= rank <= d, got rank={rank}, d={d}")
    params, single = _batched(params, 2 * d * rank + d, "low-rank map")
    m = params.shape[0]
    dr = d * rank
    A = params[:, :dr].reshape(m, d, rank)
    B = params[:, dr:2 * dr].reshape(m, d, rank)
    c = params[:, 2 * dr:].reshape(m, d, 1) * np.eye(d)
    return _unbatch(A @ B.T + c, single)


def build_maps(kind: str, params, d: int, rank: int = 1) -> Tensor:
    if kind == "diagonal":
        return build_diagonal(params, d)
    if kind == "general":
        return build_general(params, d)
    if kind == "orthogonal":
        return build_orthogonal(params, d)
    if kind == "lowrank":
        return build_lowrank(params, d, rank)
    raise ValidationError(f"unknown map kind {kind!r}; choose from {MAP_KINDS}")


@dataclass
class RestrictionMapSet:
    """Two maps per edge ``e = (u, v)`` with ``u < v``.

    ``src[e]`` is ``F_{u <| e}`` and ``dst[e]`` is ``F_{v <| e}``, both of
    shape ``(m, d, d)``.
    """

    src: Tensor
    dst: Tensor
    d: int
    kind: str = "general"

    def __post_init__(self):
        for name, maps in (("src", self.src), ("dst", self.dst)):
            if maps.ndim != 3 or maps.shape[1:] != (self.d, self.d):
                raise DimensionError(f"{name} maps must have shape (m, {self.d}, {self.d}), got {maps.shape}")
        if self.src.shape != self.dst.shape:
            raise DimensionError(f"src/dst map counts differ: {self.src.shape} vs {self.dst.shape}")

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    @classmethod
    def identity(cls, num_edges: int, d: int) -> "RestrictionMapSet":
        eye = np.broadcast_to(np.eye(d), (num_edges, d, d)).copy()
        return cls(Tensor(eye), Tensor(eye.copy()), d, kind="identity")
