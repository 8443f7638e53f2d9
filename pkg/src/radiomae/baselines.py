"""Reference estimators: ordinary kriging with a Gaussian kernel, and a mean fill.

Ordinary kriging solves, per query,

    [ K + nugget*I   1 ] [ w      ]   [ k(q) ]
    [ 1^T            0 ] [ lambda ] = [ 1    ]

so prediction weights always sum to one.  For 4D tensors the model is fit
independently per (t, f) slice on the 2D spatial coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import KrigingFitError, PartitionError
from .masks import MaskPartition

DEFAULT_NUGGET = 1e-6


def gaussian_kernel(dist_sq: np.ndarray, sigma2: float, length_scale: float) -> np.ndarray:
    return sigma2 * np.exp(-dist_sq / (2.0 * length_scale ** 2))


@dataclass
class KrigingModel:
    positions: np.ndarray          # (V, 2)
    values: np.ndarray             # (V,)
    sigma2: float
    length_scale: float
    nugget: float
    _lu: tuple = field(repr=False, default=None)

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _moment_defaults(positions: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    sigma2 = max(float(np.var(values)), 1e-12)
    if positions.shape[0] >= 2:
        d = np.sqrt(_pairwise_sq(positions, positions))
        np.fill_diagonal(d, np.inf)
        length = 3.0 * float(d.min(axis=1).mean())
    else:
        length = 1.0
    return sigma2, max(length, 1e-9)


def kriging_fit(positions: np.ndarray, values: np.ndarray, sigma2: float | None = None,
                length_scale: float | None = None,
                nugget: float = DEFAULT_NUGGET) -> KrigingModel:
    """Factorize the ordinary-kriging system for the given sample sites.

    ``sigma2`` and ``length_scale`` default to moment heuristics (value
    variance; 3x mean nearest-neighbor distance).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    v = positions.shape[0]
    if v < 1 or v != values.shape[0]:
        raise KrigingFitError("need >= 1 sample with one value per position")
    if sigma2 is None or length_scale is None:
        s2, ls = _moment_defaults(positions, values)
        sigma2 = s2 if sigma2 is None else sigma2
        length_scale = ls if length_scale is None else length_scale
    if nugget == 0.0 and v > 1:
        rounded = np.unique(np.round(positions, 12), axis=0)
        if rounded.shape[0] != v:
            raise KrigingFitError("duplicate sample positions; use a positive nugget")
    a = np.empty((v + 1, v + 1))
    a[:v, :v] = gaussian_kernel(_pairwise_sq(positions, positions), sigma2, length_scale)
    a[:v, :v] += nugget * np.eye(v)
    a[v, :v] = 1.0
    a[:v, v] = 1.0
    a[v, v] = 0.0
    lu = scipy.linalg.lu_factor(a)
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= diag.max() * 1e-14:
        raise KrigingFitError("kriging system is singular; increase the nugget")
    return KrigingModel(positions, values, float(sigma2), float(length_scale),
                        float(nugget), lu)


def kriging_weights(model: KrigingModel, query_pos: np.ndarray) -> np.ndarray:
    """Prediction weights for each query, shape (Q, V); rows sum to one."""
    query = np.atleast_2d(np.asarray(query_pos, dtype=np.float64))
    v = model.n_samples
    rhs = np.empty((v + 1, query.shape[0]))
    rhs[:v] = gaussian_kernel(_pairwise_sq(model.positions, query),
                              model.sigma2, model.length_scale)
    rhs[v] = 1.0
    sol = scipy.linalg.lu_solve(model._lu, rhs)
    return sol[:v].T


def kriging_predict(model: KrigingModel, query_pos: np.ndarray):
    """Predicted value(s) at the query position(s)."""
    weights = kriging_weights(model, query_pos)
    out = weights @ model.values
    return float(out[0]) if np.asarray(query_pos).ndim == 1 else out


def kriging_reconstruct(phi: np.ndarray, mask: MaskPartition,
                        nugget: float = DEFAULT_NUGGET) -> np.ndarray:
    """Fill masked voxels by per-(t, f)-slice kriging on grid coordinates.

    Slices without any visible voxel fall back to the global visible mean.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != mask.shape:
        raise PartitionError(f"tensor shape {phi.shape} != mask shape {mask.shape}")
    nx, ny, nt, nf = phi.shape
    vis = mask.visible_grid()
    if not vis.any():
        raise PartitionError("no visible voxel")
    global_mean = float(phi[vis].mean())
    gx, gy = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float), indexing="ij")
    coords = np.stack([gx, gy], axis=-1)
    out = phi.copy()
    for t in range(nt):
        for f in range(nf):
            sel = vis[:, :, t, f]
            holes = ~sel
            if not holes.any():
                continue
            if not sel.any():
                out[:, :, t, f][holes] = global_mean
                continue
            model = kriging_fit(coords[sel], phi[:, :, t, f][sel], nugget=nugget)
            out[:, :, t, f][holes] = kriging_predict(model, coords[holes])
    return out


def mean_predictor(phi: np.ndarray, mask: MaskPartition) -> np.ndarray:
    """Fill every masked voxel with the mean of the visible values."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != mask.shape:
        raise PartitionError(f"tensor shape {phi.shape} != mask shape {mask.shape}")
    if mask.visible.size == 0:
        raise PartitionError("no visible voxel")
    out = phi.copy().reshape(-1)
    out[mask.masked] = out[mask.visible].mean()
    return out.reshape(phi.shape)
