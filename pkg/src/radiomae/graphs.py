"""Geometric graph over visible voxels: nodes, k-nearest-neighbor edges, edge attributes.

Every node carries a scalar feature triple (value, normalized frequency index,
normalized time index) and fixed 2D spatial coordinates.  Each node connects
to its k spatially nearest candidates.  Ordering is made fully deterministic
by ranking candidates on (quantized squared distance, |dt|, |df|, voxel
index); the quantization step is ~2^-20 of the largest squared distance, so
exact geometric ties (co-located voxels, symmetric lattices) survive the
floating-point noise of a rigid transform without reordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGraphError, ShapeMismatchError
from .masks import MaskPartition

_QBITS = 20                 # distance quantization resolution
_IDX_BITS = 24              # voxel-index field inside the packed sort key
_TIE_CLIP = 255             # |dt|, |df| clip inside the packed key


@dataclass(frozen=True)
class VoxelNode:
    index: int               # flat voxel id, row-major (x, y, t, f)
    h0: np.ndarray           # (value, f_norm, t_norm)
    p: np.ndarray            # 2D spatial coordinates
    t_idx: int
    f_idx: int


@dataclass
class GeometricGraph:
    node_index: np.ndarray   # (N,) flat voxel ids, ascending
    h0: np.ndarray           # (N, 3)
    p: np.ndarray            # (N, 2)
    t_idx: np.ndarray        # (N,)
    f_idx: np.ndarray        # (N,)
    neighbors: np.ndarray    # (N, deg) positions into the node arrays
    attrs: np.ndarray        # (N, deg, 3): dist_sq, |df|, |dt| (index units)
    k: int
    dist_scale: float        # squared grid diagonal, for feature normalization
    t_span: float            # max(n_t - 1, 1)
    f_span: float            # max(n_f - 1, 1)
    shape: tuple | None = None

    @property
    def n_nodes(self) -> int:
        return self.node_index.shape[0]

    def nodes(self) -> list[VoxelNode]:
        return [VoxelNode(int(self.node_index[i]), self.h0[i], self.p[i],
                          int(self.t_idx[i]), int(self.f_idx[i]))
                for i in range(self.n_nodes)]


def _node_arrays(phi: np.ndarray, mask: MaskPartition, coords: str, region_m: float):
    if phi.shape != mask.shape:
        raise ShapeMismatchError(f"sample shape {phi.shape} != mask shape {mask.shape}")
    nx, ny, nt, nf = phi.shape
    visible = np.asarray(mask.visible, dtype=np.int64)
    if visible.size == 0:
        raise EmptyGraphError("no visible voxel to build nodes from")
    f_idx = visible % nf
    t_idx = (visible // nf) % nt
    y_idx = (visible // (nf * nt)) % ny
    x_idx = visible // (nf * nt * ny)
    f_norm = f_idx / (nf - 1) if nf > 1 else np.zeros_like(f_idx, dtype=np.float64)
    t_norm = t_idx / (nt - 1) if nt > 1 else np.zeros_like(t_idx, dtype=np.float64)
    h0 = np.stack([phi.ravel()[visible], f_norm, t_norm], axis=1).astype(np.float64)
    p = np.stack([x_idx, y_idx], axis=1).astype(np.float64)
    if coords == "meters":
        p[:, 0] *= region_m / (nx - 1)
        p[:, 1] *= region_m / (ny - 1)
    elif coords != "grid":
        raise ValueError(f"coords must be 'grid' or 'meters', got {coords!r}")
    return visible, h0, p, t_idx, f_idx


def build_nodes(sample, mask: MaskPartition, coords: str = "grid",
                region_m: float | None = None) -> list[VoxelNode]:
    """One node per visible voxel, ordered by flat index; masked voxels never appear."""
    phi = sample.phi if hasattr(sample, "phi") else np.asarray(sample)
    region = region_m if region_m is not None else getattr(
        getattr(sample, "config", None), "region_m", 1.0)
    index, h0, p, t_idx, f_idx = _node_arrays(phi, mask, coords, region)
    return [VoxelNode(int(index[i]), h0[i], p[i], int(t_idx[i]), int(f_idx[i]))
            for i in range(index.size)]


def _packed_keys(p: np.ndarray, t_idx: np.ndarray, f_idx: np.ndarray,
                 node_index: np.ndarray, rows: np.ndarray, step: float) -> np.ndarray:
    """int64 sort keys for all candidate pairs (rows x all nodes)."""
    diff = p[rows, None, :] - p[None, :, :]
    dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
    if step > 0.0:
        qd = np.rint(dist_sq / step).astype(np.int64)
    else:
        qd = np.zeros(dist_sq.shape, dtype=np.int64)
    dt = np.minimum(np.abs(t_idx[rows, None] - t_idx[None, :]), _TIE_CLIP).astype(np.int64)
    df = np.minimum(np.abs(f_idx[rows, None] - f_idx[None, :]), _TIE_CLIP).astype(np.int64)
    keys = (((qd << 8 | dt) << 8 | df) << _IDX_BITS) | node_index[None, :].astype(np.int64)
    # exclude self-edges
    keys[rows[:, None] == np.arange(p.shape[0])[None, :]] = np.int64(1) << 62
    return keys


def knn_edges(nodes, k: int) -> np.ndarray:
    """(N, deg) neighbor positions with deg = min(k, N-1), deterministically ordered.

    Accepts a list of VoxelNode or a GeometricGraph-like object with the
    node arrays.  Candidates are ranked by spatial distance with ties broken
    by (|dt|, |df|, voxel index) ascending.
    """
    if isinstance(nodes, list):
        p = np.stack([n.p for n in nodes]).astype(np.float64)
        t_idx = np.array([n.t_idx for n in nodes], dtype=np.int64)
        f_idx = np.array([n.f_idx for n in nodes], dtype=np.int64)
        node_index = np.array([n.index for n in nodes], dtype=np.int64)
    else:
        p, t_idx, f_idx, node_index = nodes.p, nodes.t_idx, nodes.f_idx, nodes.node_index
    n = p.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < 2:
        raise EmptyGraphError(f"need at least 2 nodes for edges, got {n}")
    if node_index.max() >= (1 << _IDX_BITS):
        raise ShapeMismatchError("voxel index exceeds the packed-key capacity")
    deg = min(k, n - 1)

    # Quantization step shared by every pair.  The scale must be (numerically)
    # rigid-transform invariant, so it comes from centroid distances, not the
    # axis-aligned bounding box.
    centered = p - p.mean(axis=0)
    max_dist_sq = 4.0 * float(np.max(np.einsum("ij,ij->i", centered, centered)))
    step = max_dist_sq / (1 << _QBITS)

    neighbors = np.empty((n, deg), dtype=np.int64)
    block = max(1, min(n, (1 << 22) // max(n, 1)))
    for start in range(0, n, block):
        rows = np.arange(start, min(start + block, n))
        keys = _packed_keys(p, t_idx, f_idx, node_index, rows, step)
        if deg < n - 1:
            part = np.argpartition(keys, deg - 1, axis=1)[:, :deg]
        else:
            part = np.broadcast_to(np.arange(n), (rows.size, n)).copy()
        picked = np.take_along_axis(keys, part, axis=1)
        order = np.argsort(picked, axis=1, kind="stable")[:, :deg]
        neighbors[rows] = np.take_along_axis(part, order, axis=1)
    return neighbors


def edge_attributes(node_i: VoxelNode, node_j: VoxelNode) -> tuple[float, float, float]:
    """Invariant edge features: squared spatial distance, |df|, |dt| (index units)."""
    diff = np.asarray(node_i.p, float) - np.asarray(node_j.p, float)
    return (float(diff @ diff),
            float(abs(node_i.f_idx - node_j.f_idx)),
            float(abs(node_i.t_idx - node_j.t_idx)))


def _attr_array(p, t_idx, f_idx, neighbors) -> np.ndarray:
    diff = p[:, None, :] - p[neighbors]
    dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
    df = np.abs(f_idx[:, None] - f_idx[neighbors]).astype(np.float64)
    dt = np.abs(t_idx[:, None] - t_idx[neighbors]).astype(np.float64)
    return np.stack([dist_sq, df, dt], axis=2)


def build_graph(nodes: list[VoxelNode], k: int, shape=None,
                dist_scale: float | None = None) -> GeometricGraph:
    """Assemble a GeometricGraph from explicit nodes (spec-level constructor)."""
    p = np.stack([n.p for n in nodes]).astype(np.float64)
    t_idx = np.array([n.t_idx for n in nodes], dtype=np.int64)
    f_idx = np.array([n.f_idx for n in nodes], dtype=np.int64)
    node_index = np.array([n.index for n in nodes], dtype=np.int64)
    h0 = np.stack([n.h0 for n in nodes]).astype(np.float64)
    neighbors = knn_edges(nodes, k)
    attrs = _attr_array(p, t_idx, f_idx, neighbors)
    if shape is not None:
        nx, ny, nt, nf = shape
        scale = float((nx - 1) ** 2 + (ny - 1) ** 2)
        t_span, f_span = float(max(nt - 1, 1)), float(max(nf - 1, 1))
    else:
        scale = dist_scale if dist_scale is not None else max(float(attrs[..., 0].max()), 1.0)
        t_span = float(max(t_idx.max() - t_idx.min(), 1))
        f_span = float(max(f_idx.max() - f_idx.min(), 1))
    return GeometricGraph(node_index, h0, p, t_idx, f_idx, neighbors, attrs,
                          k, scale, t_span, f_span, shape)


def graph_from_sample(sample, mask: MaskPartition, k: int, coords: str = "grid",
                      region_m: float | None = None) -> GeometricGraph:
    """Fast path from a (standardized) sample and mask straight to the graph."""
    phi = sample.phi if hasattr(sample, "phi") else np.asarray(sample)
    region = region_m if region_m is not None else getattr(
        getattr(sample, "config", None), "region_m", 1.0)
    node_index, h0, p, t_idx, f_idx = _node_arrays(phi, mask, coords, region)
    nx, ny, nt, nf = phi.shape
    if coords == "meters":
        sx, sy = region / (nx - 1), region / (ny - 1)
    else:
        sx = sy = 1.0
    scale = float(((nx - 1) * sx) ** 2 + ((ny - 1) * sy) ** 2)
    graph = GeometricGraph(node_index, h0, p, t_idx, f_idx,
                           neighbors=np.empty((0, 0), dtype=np.int64),
                           attrs=np.empty((0, 0, 3)),
                           k=k, dist_scale=scale,
                           t_span=float(max(nt - 1, 1)), f_span=float(max(nf - 1, 1)),
                           shape=phi.shape)
    graph.neighbors = knn_edges(graph, k)
    graph.attrs = _attr_array(p, t_idx, f_idx, graph.neighbors)
    return graph
