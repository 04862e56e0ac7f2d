"""Coboundary, sheaf Laplacian and its normalized form as block-sparse operators.

A 0-cochain with ``f`` channels is an ``(n*d, f)`` tensor in which node ``u``
owns rows ``[u*d, (u+1)*d)``.  Diagonal blocks are stored per node and
off-diagonal blocks once per edge ``(u, v)``, ``u < v``.  The transpose
block is materialized on the fly during products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError
from .graph import HeteroGraph
from .maps import RestrictionMapSet


@dataclass
class SheafLaplacian:
    """Block operator with ``diag`` of shape (n, d, d) and ``off`` of shape (m, d, d).

    ``off[e]`` is the ``(src[e], dst[e])`` block; the ``(dst, src)`` block is
    its transpose.  For a normalized operator, ``d_inv_sqrt`` holds the
    per-node ``D_u^{-1/2}`` blocks that were applied.
    """

    diag: Tensor
    off: Tensor
    src: np.ndarray
    dst: np.ndarray
    d_inv_sqrt: Tensor | None = None

    @property
    def num_nodes(self) -> int:
        return self.diag.shape[0]

    @property
    def d(self) -> int:
        return self.diag.shape[1]

    @property
    def normalized(self) -> bool:
        return self.d_inv_sqrt is not None

    def to_dense(self) -> np.ndarray:
        n, d = self.num_nodes, self.d
        dense = np.zeros((n * d, n * d))
        for u in range(n):
            dense[u * d:(u + 1) * d, u * d:(u + 1) * d] = self.diag.data[u]
        for e, (u, v) in enumerate(zip(self.src, self.dst)):
            block = self.off.data[e]
            dense[u * d:(u + 1) * d, v * d:(v + 1) * d] += block
            dense[v * d:(v + 1) * d, u * d:(u + 1) * d] += block.T
        return dense

    def apply(self, x: Tensor) -> Tensor:
        return laplacian_apply(self, x)


def _check_cochain(x: Tensor, n: int, d: int, what: str):
    if x.ndim != 2 or x.shape[0] != n * d:
        raise DimensionError(f"{what}: expected a cochain with {n * d} rows (n={n}, d={d}), got shape {x.shape}")


def _check_maps(maps: RestrictionMapSet, graph: HeteroGraph):
    if maps.num_edges != graph.num_edges:
        raise DimensionError(f"{maps.num_edges} restriction-map pairs for {graph.num_edges} edges")


def coboundary_apply(maps: RestrictionMapSet, graph: HeteroGraph, x) -> Tensor:
    """Edge disagreements ``F_{v<|e} x_v - F_{u<|e} x_u``, shape (m*d, f)."""
    x = ad.as_tensor(x)
    n, d = graph.num_nodes, maps.d
    _check_maps(maps, graph)
    _check_cochain(x, n, d, "coboundary_apply")
    f = x.shape[1]
    xr = x.reshape(n, d, f)
    y = maps.dst @ ad.take(xr, graph.dst) - maps.src @ ad.take(xr, graph.src)
    return y.reshape(graph.num_edges * d, f)


def coboundary_transpose(maps: RestrictionMapSet, graph: HeteroGraph, y) -> Tensor:
    """Adjoint of :func:`coboundary_apply`: edge cochain back to node cochain."""
    y = ad.as_tensor(y)
    n, d, m = graph.num_nodes, maps.d, graph.num_edges
    _check_maps(maps, graph)
    if y.ndim != 2 or y.shape[0] != m * d:
        raise DimensionError(f"coboundary_transpose: expected {m * d} rows, got shape {y.shape}")
    f = y.shape[1]
    yr = y.reshape(m, d, f)
    to_dst = maps.dst.T @ yr
    to_src = -(maps.src.T @ yr)
    out = ad.index_add(ad.concat([to_src, to_dst], axis=0), np.concatenate([graph.src, graph.dst]), n)
    return out.reshape(n * d, f)


def assemble(maps: RestrictionMapSet, graph: HeteroGraph) -> SheafLaplacian:
    """``L_uu = sum F^T F`` over incident edges, ``L_uv = -F_u^T F_v``."""
    _check_maps(maps, graph)
    n = graph.num_nodes
    own = ad.concat([maps.src.T @ maps.src, maps.dst.T @ maps.dst], axis=0)
    diag = ad.index_add(own, np.concatenate([graph.src, graph.dst]), n)
    off = -(maps.src.T @ maps.dst)
    return SheafLaplacian(diag, off, graph.src, graph.dst)


def laplacian_apply(L: SheafLaplacian, x) -> Tensor:
    x = ad.as_tensor(x)
    n, d = L.num_nodes, L.d
    _check_cochain(x, n, d, "laplacian_apply")
    f = x.shape[1]
    xr = x.reshape(n, d, f)
    out = L.diag @ xr
    if L.src.size:
        to_src = L.off @ ad.take(xr, L.dst)
        to_dst = L.off.T @ ad.take(xr, L.src)
        out = out + ad.index_add(ad.concat([to_src, to_dst], axis=0), np.concatenate([L.src, L.dst]), n)
    return out.reshape(n * d, f)


def _inv_sqrt_blocks(blocks: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    w, Q = np.linalg.eigh(blocks)
    clamped = np.maximum(w, eps)
    f = clamped ** -0.5
    out = (Q * f[..., None, :]) @ np.swapaxes(Q, -1, -2)
    return out, w, Q, f


def inv_sqrt_psd(blocks, eps: float = 1e-8) -> Tensor:
    """Batched ``A^{-1/2}`` of symmetric blocks, eigenvalues clamped below at ``eps``.

    Differentiable: the backward pass uses the divided-difference form of
    the derivative of a spectral matrix function.
    """
    blocks = ad.as_tensor(blocks)
    out, w, Q, f = _inv_sqrt_blocks(blocks.data, eps)
    fprime = np.where(w > eps, -0.5 * np.maximum(w, eps) ** -1.5, 0.0)
    wi, wj = w[..., :, None], w[..., None, :]
    fi, fj = f[..., :, None], f[..., None, :]
    gap = wi - wj
    close = np.abs(gap) <= 1e-12 * np.maximum(1.0, np.maximum(np.abs(wi), np.abs(wj)))
    kernel = np.where(close, 0.5 * (fprime[..., :, None] + fprime[..., None, :]),
                      (fi - fj) / np.where(close, 1.0, gap))
    Qt = np.swapaxes(Q, -1, -2)

    def backward(g):
        inner = kernel * (Qt @ g @ Q)
        grad = Q @ inner @ Qt
        return (0.5 * (grad + np.swapaxes(grad, -1, -2)),)

    return ad.custom_op("inv_sqrt_psd", (blocks,), out, backward)


def normalization_factors(L: SheafLaplacian, eps: float = 1e-8, grad_through_norm: bool = False) -> Tensor:
    """``(L_uu + eps I)^{-1/2}`` per node; a constant unless ``grad_through_norm``."""
    D = L.diag + eps * np.eye(L.d)
    bad = ~np.isfinite(D.data).all(axis=(1, 2))
    if bad.any():
        raise NumericError(f"non-finite diagonal block at node {int(np.flatnonzero(bad)[0])}")
    if grad_through_norm:
        return inv_sqrt_psd(D, eps)
    return Tensor(_inv_sqrt_blocks(D.data, eps)[0])


def normalize(L: SheafLaplacian, eps: float = 1e-8, grad_through_norm: bool = False,
              d_inv_sqrt: Tensor | np.ndarray | None = None) -> SheafLaplacian:
    """``D^{-1/2} L D^{-1/2}`` with ``D`` the (regularized) block diagonal.

    Passing ``d_inv_sqrt`` reuses precomputed factors instead.
    """
    if d_inv_sqrt is None:
        d_inv_sqrt = normalization_factors(L, eps, grad_through_norm)
    Dis = ad.as_tensor(d_inv_sqrt)
    if Dis.shape != L.diag.shape:
        raise DimensionError(f"normalization factors {Dis.shape} do not match diagonal {L.diag.shape}")
    diag = Dis @ L.diag @ Dis
    diag = (diag + diag.T) * 0.5  # exact symmetry despite rounding
    off = ad.take(Dis, L.src) @ L.off @ ad.take(Dis, L.dst)
    return SheafLaplacian(diag, off, L.src, L.dst, d_inv_sqrt=Dis)


def dirichlet_energy(L: SheafLaplacian, x) -> Tensor:
    """``trace(x^T L x)``: the disagreement summed over channels."""
    x = ad.as_tensor(x)
    return (x * laplacian_apply(L, x)).sum()
