"""Masked self-supervised pre-training.

Every step draws one partition per strategy (spatial, temporal, spectral) for
each sample in the batch, reconstructs through the model, and descends the
mean of the three masked-MSE losses with Adam.  The whole trajectory is a
deterministic function of the seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from .config import TrainConfig
from .errors import ConfigError, DivergenceError, PartitionError
from .graphs import graph_from_sample
from .masks import MaskPartition, mask_spatial, mask_spectral, mask_temporal, merge_masked
from .model import MaskedMapModel, ModelConfig, build_model

STRATEGIES = ("spatial", "temporal", "spectral")

LOG_COLUMNS = ("step", "loss_spatial", "loss_temporal", "loss_spectral",
               "loss_mean", "grad_norm", "wall_ms")


@dataclass
class LossReport:
    step: int
    loss_spatial: float
    loss_temporal: float
    loss_spectral: float
    composite: float
    grad_norm: float
    wall_ms: float = 0.0

    def csv_row(self) -> str:
        return (f"{self.step},{self.loss_spatial:.10g},{self.loss_temporal:.10g},"
                f"{self.loss_spectral:.10g},{self.composite:.10g},"
                f"{self.grad_norm:.10g},{self.wall_ms:.3f}")


def masked_mse_loss(phi_hat: torch.Tensor, phi_true: torch.Tensor,
                    masked_idx) -> torch.Tensor:
    """Mean squared error over the masked voxels only (standardized units)."""
    masked_idx = torch.as_tensor(np.asarray(masked_idx), dtype=torch.long)
    if masked_idx.numel() == 0:
        raise PartitionError("masked index set is empty")
    diff = phi_hat.reshape(-1)[masked_idx] - phi_true.reshape(-1)[masked_idx]
    return diff.pow(2).mean()


def draw_partitions(shape, rng: np.random.Generator,
                    cfg: TrainConfig) -> dict[str, MaskPartition]:
    """One partition per strategy; ratios/horizons drawn from the config menus."""
    n_t, n_f = shape[2], shape[3]
    if n_t < 2 or n_f < 2:
        raise ConfigError("pre-training needs n_t >= 2 and n_f >= 2 "
                          "(temporal and spectral strategies are degenerate otherwise)")
    spatial = mask_spatial(shape, float(rng.choice(cfg.spatial_ratios)), rng)
    t_h = int(rng.integers(math.ceil(n_t / 3), n_t))
    temporal = mask_temporal(shape, max(1, t_h))
    bands = rng.choice(n_f, size=2, replace=False)
    full = mask_spectral(shape, [int(bands[0])], 1.0, rng)
    partial = mask_spectral(shape, [int(bands[1])],
                            float(rng.choice(cfg.spectral_ratios)), rng)
    spectral = merge_masked([full, partial], "spectral")
    return {"spatial": spatial, "temporal": temporal, "spectral": spectral}


def compute_gradients(loss: torch.Tensor, model: torch.nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-accumulate exact gradients of a scalar loss for every parameter."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    return {name: (param.grad.detach().clone() if param.grad is not None
                   else torch.zeros_like(param))
            for name, param in model.named_parameters()}


def grad_global_norm(model: torch.nn.Module) -> float:
    total = 0.0
    for param in model.parameters():
        if param.grad is not None:
            total += float(param.grad.pow(2).sum())
    return math.sqrt(total)


def composite_step(model: MaskedMapModel, optimizer: torch.optim.Optimizer,
                   batch: list[np.ndarray], rng: np.random.Generator,
                   cfg: TrainConfig, step: int) -> LossReport:
    """One gradient step on the mean of the three strategy losses over the batch."""
    if not batch:
        raise ConfigError("batch must contain at least one sample")
    t0 = time.perf_counter()
    per_strategy = {s: [] for s in STRATEGIES}
    for phi in batch:
        target = torch.as_tensor(phi.reshape(-1), dtype=torch.float64)
        parts = draw_partitions(phi.shape, rng, cfg)
        for strategy in STRATEGIES:
            part = parts[strategy]
            graph = graph_from_sample(phi, part, model.cfg.k)
            est = model.reconstruct(graph, target.numel())
            per_strategy[strategy].append(masked_mse_loss(est, target, part.masked))
    strategy_means = {s: torch.stack(v).mean() for s, v in per_strategy.items()}
    loss = torch.stack(list(strategy_means.values())).mean()
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite composite loss at step {step}: "
                              + ", ".join(f"{s}={v.item():.4g}" for s, v in strategy_means.items()))
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    grad_norm = grad_global_norm(model)
    if not math.isfinite(grad_norm):
        raise DivergenceError(f"non-finite gradient at step {step}")
    if cfg.clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
    optimizer.step()
    return LossReport(step,
                      float(strategy_means["spatial"]),
                      float(strategy_means["temporal"]),
                      float(strategy_means["spectral"]),
                      float(loss), grad_norm,
                      (time.perf_counter() - t0) * 1e3)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                            betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def pretrain(datasets: dict[str, list[np.ndarray]], cfg: TrainConfig,
             model_cfg: ModelConfig | None = None,
             log_path=None, progress=None) -> tuple[MaskedMapModel, list[LossReport]]:
    """Train on standardized samples pooled across datasets.

    ``datasets`` maps dataset name -> list of standardized 4D tensors.  Samples
    are shuffled across datasets into batches; the sample order, mask draws,
    and parameter initialization all derive from ``cfg.seed``.
    """
    if not datasets or not any(datasets.values()):
        raise ConfigError("need at least one dataset with samples")
    root = np.random.SeedSequence(cfg.seed)
    init_seed, order_seed, mask_seed = root.spawn(3)
    model = build_model(model_cfg, seed=None)
    from .model import init_parameters
    init_parameters(model, np.random.default_rng(init_seed))
    optimizer = make_optimizer(model, cfg)
    order_rng = np.random.default_rng(order_seed)
    mask_rng = np.random.default_rng(mask_seed)

    pool = [phi for name in sorted(datasets) for phi in datasets[name]]
    queue: list[int] = []
    history: list[LossReport] = []
    log_fh = open(log_path, "w") if log_path else None
    if log_fh:
        log_fh.write(",".join(LOG_COLUMNS) + "\n")
    try:
        for step in range(cfg.steps):
            while len(queue) < cfg.batch_size:
                queue.extend(order_rng.permutation(len(pool)).tolist())
            batch = [pool[queue.pop(0)] for _ in range(cfg.batch_size)]
            report = composite_step(model, optimizer, batch, mask_rng, cfg, step)
            history.append(report)
            if log_fh:
                log_fh.write(report.csv_row() + "\n")
            if progress and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                progress(report)
    finally:
        if log_fh:
            log_fh.close()
    return model, history
