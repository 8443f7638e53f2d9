"""Visible/masked voxel partitions for the three self-supervised strategies.

Flat indices are row-major over (x, y, t, f).  A partition is always a strict
two-set cover of {0..N-1}; the availability tensor has 1 at visible voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PartitionError

Shape4 = tuple[int, int, int, int]


@dataclass(frozen=True)
class MaskPartition:
    shape: Shape4
    visible: np.ndarray   # sorted flat indices
    masked: np.ndarray    # sorted flat indices
    strategy: str

    @property
    def n_voxels(self) -> int:
        nx, ny, nt, nf = self.shape
        return nx * ny * nt * nf

    def visible_grid(self) -> np.ndarray:
        """Boolean availability tensor: True where a measurement exists."""
        grid = np.zeros(self.n_voxels, dtype=bool)
        grid[self.visible] = True
        return grid.reshape(self.shape)


def _coords(shape: Shape4, axis: int) -> np.ndarray:
    """Per-voxel coordinate along one axis, flattened row-major."""
    idx = np.arange(int(np.prod(shape)))
    if axis == 3:
        return idx % shape[3]
    if axis == 2:
        return (idx // shape[3]) % shape[2]
    if axis == 1:
        return (idx // (shape[3] * shape[2])) % shape[1]
    return idx // (shape[3] * shape[2] * shape[1])


def from_masked_indices(shape: Shape4, masked: np.ndarray, strategy: str) -> MaskPartition:
    n = int(np.prod(shape))
    masked = np.unique(np.asarray(masked, dtype=np.int64))
    if masked.size and (masked[0] < 0 or masked[-1] >= n):
        raise PartitionError("masked indices out of range")
    keep = np.ones(n, dtype=bool)
    keep[masked] = False
    return MaskPartition(shape, np.flatnonzero(keep).astype(np.int64), masked, strategy)


def mask_spatial(shape: Shape4, mask_ratio: float, rng: np.random.Generator) -> MaskPartition:
    """Mask floor(ratio * N) voxels drawn uniformly without replacement."""
    if not 0.0 < mask_ratio < 1.0:
        raise PartitionError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n = int(np.prod(shape))
    n_masked = int(np.floor(mask_ratio * n))
    if n_masked == 0:
        raise PartitionError(f"mask_ratio {mask_ratio} masks no voxel of {n}")
    masked = rng.choice(n, size=n_masked, replace=False)
    return from_masked_indices(shape, masked, "spatial")


def mask_temporal(shape: Shape4, t_h: int) -> MaskPartition:
    """Mask every voxel at time slots t >= t_h; the past stays visible."""
    n_t = shape[2]
    if not 1 <= t_h <= n_t - 1:
        raise PartitionError(f"t_h must be in [1, {n_t - 1}], got {t_h}")
    masked = np.flatnonzero(_coords(shape, 2) >= t_h)
    return from_masked_indices(shape, masked, "temporal")


def mask_spectral(shape: Shape4, target_bands, within_band_ratio: float,
                  rng: np.random.Generator) -> MaskPartition:
    """Mask a ratio of the voxels inside the target bands; other bands stay visible."""
    n_f = shape[3]
    bands = sorted(set(int(b) for b in target_bands))
    if not bands:
        raise PartitionError("target_bands must be nonempty")
    if any(b < 0 or b >= n_f for b in bands):
        raise PartitionError(f"target bands {bands} outside [0, {n_f - 1}]")
    if len(bands) >= n_f:
        raise PartitionError("target_bands must be a proper subset of all bands")
    if not 0.0 < within_band_ratio <= 1.0:
        raise PartitionError(f"within_band_ratio must be in (0, 1], got {within_band_ratio}")
    pool = np.flatnonzero(np.isin(_coords(shape, 3), bands))
    n_masked = int(np.floor(within_band_ratio * pool.size))
    if n_masked == 0:
        raise PartitionError("ratio masks no voxel in the target bands")
    masked = rng.choice(pool, size=n_masked, replace=False)
    return from_masked_indices(shape, masked, "spectral")


def merge_masked(parts: list[MaskPartition], strategy: str) -> MaskPartition:
    """Union the masked sets of several partitions over the same shape."""
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise PartitionError("cannot merge partitions of different shapes")
    masked = np.unique(np.concatenate([p.masked for p in parts]))
    return from_masked_indices(parts[0].shape, masked, strategy)


def validate_partition(part: MaskPartition) -> bool:
    """Assert the partition invariants; raises PartitionError with diagnostics."""
    n = part.n_voxels
    vis, msk = np.asarray(part.visible), np.asarray(part.masked)
    overlap = np.intersect1d(vis, msk)
    if overlap.size:
        raise PartitionError(f"overlap: {overlap.size} indices in both sets "
                             f"(first: {overlap[:5].tolist()})")
    union = np.union1d(vis, msk)
    if union.size != n or (union.size and (union[0] != 0 or union[-1] != n - 1)):
        raise PartitionError(f"cover: union has {union.size} of {n} indices")
    if vis.size == 0:
        raise PartitionError("empty side: no visible voxel")
    if msk.size == 0:
        raise PartitionError("empty side: no masked voxel")
    return True
