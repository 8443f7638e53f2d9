"""Attention autoencoder over geometry-aware features.

Encoder: visible tokens + sinusoidal positional encoding of the flat voxel
index, then pre-normalization attention blocks.  Decoder: the encoded tokens
are scattered back to their voxel positions, every masked position receives a
single shared learned embedding, and a smaller attention stack plus a linear
head predicts the PSD value of every voxel (standardized units).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import math
import numpy as np
import torch
from torch import nn

from .errors import ConfigError, SequenceLengthError, ShapeMismatchError
from .graphs import GeometricGraph, graph_from_sample
from .gnn import GeoFeatureExtractor, graph_tensors
from .masks import MaskPartition

PE_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 32            # node feature width inside message passing
    d_m: int = 32            # scalar message width
    gafe_layers: int = 2
    d_model: int = 64        # encoder token width
    enc_layers: int = 4
    dec_layers: int = 2
    heads: int = 4
    d_dec: int = 32          # decoder token width
    k: int = 8               # neighbors per node
    max_tokens: int = 16384  # decoder attention is quadratic; hard cap

    def __post_init__(self):
        for name in ("d_model", "d_dec"):
            width = getattr(self, name)
            if width % 2 != 0:
                raise ConfigError(f"{name} must be even for sinusoidal encoding")
            if width % self.heads != 0:
                raise ConfigError(f"heads must divide {name}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_encoding(positions: torch.Tensor, dim: int,
                        dtype=torch.float64) -> torch.Tensor:
    """Interleaved sin/cos of pos / 10000^(2j/dim); shape (N, dim), values in [-1, 1]."""
    if dim % 2 != 0:
        raise ConfigError(f"positional encoding width must be even, got {dim}")
    pos = positions.to(dtype).unsqueeze(1)
    j = torch.arange(dim // 2, dtype=dtype)
    angles = pos / torch.pow(torch.tensor(PE_BASE, dtype=dtype), 2.0 * j / dim)
    pe = torch.empty(positions.shape[0], dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles)
    return pe


@lru_cache(maxsize=8)
def _full_encoding(n_total: int, dim: int) -> torch.Tensor:
    return sinusoidal_encoding(torch.arange(n_total), dim)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention, H heads of width D/H, fused qkv projection."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, d = x.shape
        q, k, v = self.qkv(x).reshape(n, 3, self.heads, self.d_head).unbind(dim=1)
        q = q.transpose(0, 1)                                # (H, N, d_head)
        k = k.transpose(0, 1)
        v = v.transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        mixed = torch.softmax(scores, dim=-1) @ v            # (H, N, d_head)
        return self.proj(mixed.transpose(0, 1).reshape(n, d))


class TransformerBlock(nn.Module):
    """Pre-normalization residual block: attention, then position-wise FFN."""

    def __init__(self, d_model: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_mult * d_model), nn.GELU(),
                                 nn.Linear(ffn_mult * d_model, d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class MaskedMapModel(nn.Module):
    """Full estimator: graph features -> encoder -> full-length decoder -> PSD head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.extractor = GeoFeatureExtractor(cfg.d_h, cfg.d_m, cfg.d_model, cfg.gafe_layers)
        self.encoder = nn.ModuleList(TransformerBlock(cfg.d_model, cfg.heads)
                                     for _ in range(cfg.enc_layers))
        self.adapter = nn.Linear(cfg.d_model, cfg.d_dec)
        self.mask_embedding = nn.Parameter(torch.zeros(cfg.d_dec))
        self.decoder = nn.ModuleList(TransformerBlock(cfg.d_dec, cfg.heads)
                                     for _ in range(cfg.dec_layers))
        self.head = nn.Linear(cfg.d_dec, 1)

    def encode(self, features: torch.Tensor, visible_idx: torch.Tensor) -> torch.Tensor:
        z = features + sinusoidal_encoding(visible_idx, self.cfg.d_model)
        for block in self.encoder:
            z = block(z)
        return z

    def assemble_decoder_input(self, encoded: torch.Tensor, visible_idx: torch.Tensor,
                               n_total: int) -> torch.Tensor:
        if encoded.shape[0] != visible_idx.shape[0]:
            raise ShapeMismatchError("encoded rows do not match the visible index set")
        if visible_idx.numel() and (visible_idx.min() < 0 or visible_idx.max() >= n_total
                                    or visible_idx.unique().numel() != visible_idx.numel()):
            raise ShapeMismatchError("visible indices must be unique and within range")
        y = self.mask_embedding.expand(n_total, self.cfg.d_dec).clone()
        y[visible_idx] = self.adapter(encoded)
        return y + _full_encoding(n_total, self.cfg.d_dec)

    def decode(self, y: torch.Tensor) -> torch.Tensor:
        for block in self.decoder:
            y = block(y)
        return self.head(y).squeeze(-1)

    def reconstruct(self, graph: GeometricGraph, n_total: int) -> torch.Tensor:
        """Estimate all n_total voxel values (standardized) from the visible graph."""
        if n_total > self.cfg.max_tokens:
            raise SequenceLengthError(
                f"{n_total} voxels exceed the decoder cap of {self.cfg.max_tokens}")
        visible_idx = torch.as_tensor(graph.node_index, dtype=torch.long)
        features = self.extractor(*graph_tensors(graph))
        z = self.encode(features, visible_idx)
        y = self.assemble_decoder_input(z, visible_idx, n_total)
        return self.decode(y)


def build_model(cfg: ModelConfig | None = None, seed: int | None = 0) -> MaskedMapModel:
    """Float64 model; when seed is given, parameters are drawn reproducibly."""
    model = MaskedMapModel(cfg or ModelConfig()).double()
    if seed is not None:
        init_parameters(model, np.random.default_rng(seed))
    return model


def init_parameters(model: nn.Module, rng: np.random.Generator) -> None:
    """Uniform fan-in init for weights, zero biases, small-normal mask embedding."""
    for module in model.modules():
        if isinstance(module, nn.Linear):
            bound = 1.0 / math.sqrt(module.in_features)
            w = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
            with torch.no_grad():
                module.weight.copy_(torch.from_numpy(w))
                module.bias.zero_()
        elif isinstance(module, nn.LayerNorm):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()
    if isinstance(model, MaskedMapModel):
        with torch.no_grad():
            h = rng.normal(0.0, 0.02, size=model.mask_embedding.shape[0])
            model.mask_embedding.copy_(torch.from_numpy(h))


def model_forward(model: MaskedMapModel, sample, mask: MaskPartition) -> np.ndarray:
    """Reconstruct a full 4D tensor (standardized units) from the visible voxels."""
    phi = sample.phi if hasattr(sample, "phi") else np.asarray(sample)
    if phi.shape != mask.shape:
        raise ShapeMismatchError(f"sample shape {phi.shape} != mask shape {mask.shape}")
    graph = graph_from_sample(phi, mask, model.cfg.k)
    with torch.no_grad():
        est = model.reconstruct(graph, int(np.prod(phi.shape)))
    return est.numpy().reshape(phi.shape)


# ---------------------------------------------------------------------------
# Checkpoint bridge
# ---------------------------------------------------------------------------

def model_tensors(model: MaskedMapModel) -> dict[str, np.ndarray]:
    return {name: param.detach().numpy().astype(np.float64)
            for name, param in model.named_parameters()}


def save_model(path, model: MaskedMapModel, datasets: list[str],
               stats: dict[str, tuple[float, float]], extra: dict | None = None) -> None:
    from . import rmapio

    meta = {"kind": "radiomae-checkpoint", "version": 1,
            "model": model.cfg.to_dict(),
            "datasets": list(datasets),
            "stats": {k: [float(m), float(s)] for k, (m, s) in stats.items()}}
    if extra:
        meta.update(extra)
    rmapio.save_checkpoint(path, model_tensors(model), meta)


def load_model(path) -> tuple[MaskedMapModel, dict]:
    from . import rmapio
    from .errors import FormatError

    tensors, meta = rmapio.load_checkpoint(path)
    if meta.get("kind") != "radiomae-checkpoint":
        raise FormatError(f"{path}: not a model checkpoint")
    model = build_model(ModelConfig.from_dict(meta["model"]), seed=None)
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise FormatError(f"{path}: checkpoint tensors do not match the model: {exc}")
    return model, meta
