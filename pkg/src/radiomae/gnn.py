"""Geometry-aware feature extraction by invariant message passing.

Positions enter only through squared relative distances and through the norm
of the aggregated relative-position message, so node features are exactly
invariant under 2D rotations and translations of the coordinate frame.  Per
edge (i <- j):

    m_ij = g_s(h_i, h_j, |p_i - p_j|^2, |f_i - f_j|, |t_i - t_j|)
    M_ij = (p_i - p_j) * g_v(m_ij)

followed by sum-aggregation and the residual node update

    h_i <- h_i + g_h(h_i, sum_j m_ij, || sum_j M_ij ||).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .graphs import GeometricGraph

# Keeps the vector-norm gradient finite when the aggregate is exactly zero
# (all neighbors co-located); inactive above ~1e-8 in float64.
NORM_EPS_SQ = 1e-24


def two_layer_mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_out))


def scalar_message(g_s: nn.Module, h_i: torch.Tensor, h_j: torch.Tensor,
                   attrs: torch.Tensor) -> torch.Tensor:
    """m_ij from node features and the three invariant edge scalars."""
    return g_s(torch.cat([h_i, h_j, attrs], dim=-1))


def vector_message(g_v: nn.Module, p_i: torch.Tensor, p_j: torch.Tensor,
                   m_ij: torch.Tensor) -> torch.Tensor:
    """Relative position scaled by a learned scalar; rotates with the frame."""
    return (p_i - p_j) * g_v(m_ij)


def aggregate(m_ij: torch.Tensor, vec_ij: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Sum messages over the neighbor axis (dim=-2); empty neighborhoods give zeros."""
    return m_ij.sum(dim=-2), vec_ij.sum(dim=-2)


def stable_norm(vec: torch.Tensor) -> torch.Tensor:
    return torch.sqrt(vec.pow(2).sum(dim=-1, keepdim=True) + NORM_EPS_SQ)


def update_node(g_h: nn.Module, h: torch.Tensor, m_agg: torch.Tensor,
                vec_norm: torch.Tensor) -> torch.Tensor:
    return h + g_h(torch.cat([h, m_agg, vec_norm], dim=-1))


class GeoMessageLayer(nn.Module):
    """One invariant message-passing layer over a fixed-out-degree neighbor array."""

    def __init__(self, d_h: int, d_m: int):
        super().__init__()
        self.g_s = two_layer_mlp(2 * d_h + 3, d_m, d_m)
        self.g_v = two_layer_mlp(d_m, d_m, 1)
        self.g_h = two_layer_mlp(d_h + d_m + 1, d_h, d_h)

    def forward(self, h: torch.Tensor, p: torch.Tensor, neighbors: torch.Tensor,
                attrs: torch.Tensor) -> torch.Tensor:
        deg = neighbors.shape[1]
        h_i = h.unsqueeze(1).expand(-1, deg, -1)
        h_j = h[neighbors]
        m = scalar_message(self.g_s, h_i, h_j, attrs)
        vec = vector_message(self.g_v, p.unsqueeze(1), p[neighbors], m)
        m_agg, vec_agg = aggregate(m, vec)
        return update_node(self.g_h, h, m_agg, stable_norm(vec_agg))


class GeoFeatureExtractor(nn.Module):
    """Input lift, L message-passing layers, final projection to model width."""

    def __init__(self, d_h: int = 32, d_m: int = 32, d_out: int = 64, n_layers: int = 2):
        super().__init__()
        if n_layers < 1:
            raise ValueError("need at least one message-passing layer")
        self.input_proj = nn.Linear(3, d_h)
        self.layers = nn.ModuleList(GeoMessageLayer(d_h, d_m) for _ in range(n_layers))
        self.output_proj = nn.Linear(d_h, d_out)

    def forward(self, h0: torch.Tensor, p: torch.Tensor, neighbors: torch.Tensor,
                attrs: torch.Tensor) -> torch.Tensor:
        h = self.input_proj(h0)
        for layer in self.layers:
            h = layer(h, p, neighbors, attrs)
        return self.output_proj(h)


def graph_tensors(graph: GeometricGraph, dtype=torch.float64):
    """Torch views of a graph with edge attributes normalized to O(1) scale."""
    attrs = np.empty_like(graph.attrs)
    attrs[..., 0] = graph.attrs[..., 0] / max(graph.dist_scale, 1e-30)
    attrs[..., 1] = graph.attrs[..., 1] / graph.f_span
    attrs[..., 2] = graph.attrs[..., 2] / graph.t_span
    return (torch.as_tensor(graph.h0, dtype=dtype),
            torch.as_tensor(graph.p, dtype=dtype),
            torch.as_tensor(graph.neighbors, dtype=torch.long),
            torch.as_tensor(attrs, dtype=dtype))


def extract_features(model: GeoFeatureExtractor, graph: GeometricGraph,
                     dtype=torch.float64) -> torch.Tensor:
    """Convenience wrapper: GeometricGraph -> (N_vis, D) invariant features."""
    h0, p, neighbors, attrs = graph_tensors(graph, dtype)
    return model(h0, p, neighbors, attrs)
