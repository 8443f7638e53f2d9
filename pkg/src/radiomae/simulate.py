"""Synthetic spatial-temporal-spectral radio map generation.

Received power spectral density at every voxel is the linear-domain sum of
per-transmitter contributions plus a constant noise floor,

    psd(x, f, t) = sum_m gamma_m(f) * |g_m(x, f)|^2 + eta,

with log-distance path loss and spatially correlated (exponential-covariance)
log-normal shadowing per transmitter.  Transmitters follow straight-line
motion with specular reflection at the region boundary; channels are held
fixed within a time slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import DatasetConfig
from .errors import DegenerateDataError, ShadowingError

# Largest grid factorized exactly; bigger grids draw on a coarse grid and
# bilinearly upsample with per-point variance correction.
MAX_EXACT_POINTS = 4096
_MIN_STD = 1e-9


@dataclass
class TransmitterState:
    """One mobile transmitter: position, velocity, and per-band transmit PSD (dBm)."""

    position_m: np.ndarray
    velocity_mps: np.ndarray
    psd_per_band: np.ndarray


@dataclass
class ShadowingField:
    """One realization of a zero-mean Gaussian shadowing field (dB) on the rx grid."""

    values_db: np.ndarray          # (n_x, n_y)
    sigma_db: float
    d_corr_m: float
    region_m: float

    def lookup(self, pos_m: np.ndarray) -> float:
        """Shadowing value at the grid point nearest to ``pos_m`` (meters)."""
        nx, ny = self.values_db.shape
        dx = self.region_m / (nx - 1)
        dy = self.region_m / (ny - 1)
        i = int(np.clip(round(pos_m[0] / dx), 0, nx - 1))
        j = int(np.clip(round(pos_m[1] / dy), 0, ny - 1))
        return float(self.values_db[i, j])


@dataclass
class RadioMapSample:
    """A 4D received-PSD tensor of shape (n_x, n_y, n_t, n_f) plus generation metadata."""

    phi: np.ndarray
    units_dbm: bool
    config: DatasetConfig
    seed: int | None = None


def grid_positions_m(config: DatasetConfig) -> np.ndarray:
    """Voxel-center coordinates in meters, shape (n_x*n_y, 2), x-major order."""
    nx, ny = config.grid
    xs = np.linspace(0.0, config.region_m, nx)
    ys = np.linspace(0.0, config.region_m, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


# ---------------------------------------------------------------------------
# Shadowing
# ---------------------------------------------------------------------------

_factor_cache: dict[tuple, tuple] = {}


def _exp_cov(points: np.ndarray, sigma_db: float, d_corr_m: float) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    return sigma_db ** 2 * np.exp(-d / d_corr_m)


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    jitter = 1e-12 * cov[0, 0]
    for _ in range(6):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise ShadowingError("shadowing covariance not positive-definite after jitter")


def _coarse_dims(nx: int, ny: int) -> tuple[int, int]:
    # Shrink both axes by the same integer stride until the point count fits.
    stride = 1
    while math.ceil(nx / stride) * math.ceil(ny / stride) > MAX_EXACT_POINTS:
        stride += 1
    return math.ceil(nx / stride), math.ceil(ny / stride)


def _shadowing_factor(config: DatasetConfig):
    """(cached) Cholesky factor of the field covariance plus the upsampling plan.

    Returns (chol, plan) where plan is None on the exact path, otherwise
    (corner indices (n,4), weights (n,4), scale (n,)) mapping a coarse draw to
    the fine grid with the per-point variance restored to sigma^2.
    """
    key = (config.grid, config.region_m, config.shadow_sigma_db, config.shadow_dcorr_m)
    if key in _factor_cache:
        return _factor_cache[key]

    nx, ny = config.grid
    sigma, dcorr = config.shadow_sigma_db, config.shadow_dcorr_m
    if nx * ny <= MAX_EXACT_POINTS:
        chol = _cholesky_with_jitter(_exp_cov(grid_positions_m(config), sigma, dcorr))
        value = (chol, None)
    else:
        cx, cy = _coarse_dims(nx, ny)
        cxs = np.linspace(0.0, config.region_m, cx)
        cys = np.linspace(0.0, config.region_m, cy)
        gx, gy = np.meshgrid(cxs, cys, indexing="ij")
        coarse = np.stack([gx.ravel(), gy.ravel()], axis=1)
        chol = _cholesky_with_jitter(_exp_cov(coarse, sigma, dcorr))

        fine = grid_positions_m(config)
        fx = np.clip(fine[:, 0] / (config.region_m / (cx - 1)), 0, cx - 1 - 1e-12)
        fy = np.clip(fine[:, 1] / (config.region_m / (cy - 1)), 0, cy - 1 - 1e-12)
        i0, j0 = fx.astype(np.int64), fy.astype(np.int64)
        tx, ty = fx - i0, fy - j0
        corners = np.stack([i0 * cy + j0, i0 * cy + j0 + 1,
                            (i0 + 1) * cy + j0, (i0 + 1) * cy + j0 + 1], axis=1)
        weights = np.stack([(1 - tx) * (1 - ty), (1 - tx) * ty,
                            tx * (1 - ty), tx * ty], axis=1)
        # Interpolation shrinks the marginal variance; rescale so every fine
        # point keeps variance sigma^2 exactly.
        var = np.zeros(fine.shape[0])
        for a in range(4):
            pa = coarse[corners[:, a]]
            for b in range(4):
                pb = coarse[corners[:, b]]
                cov_ab = sigma ** 2 * np.exp(-np.linalg.norm(pa - pb, axis=1) / dcorr)
                var += weights[:, a] * weights[:, b] * cov_ab
        scale = sigma / np.sqrt(np.maximum(var, 1e-30))
        value = (chol, (corners, weights, scale))

    _factor_cache[key] = value
    return value


def sample_shadowing(config: DatasetConfig, rng: np.random.Generator) -> ShadowingField:
    """Draw one Gaussian shadowing field with covariance sigma^2 exp(-d/d_corr)."""
    if config.shadow_sigma_db <= 0 or config.shadow_dcorr_m <= 0:
        raise ShadowingError("shadow_sigma_db and shadow_dcorr_m must be positive")
    chol, plan = _shadowing_factor(config)
    z = rng.standard_normal(chol.shape[0])
    draw = chol @ z
    if plan is not None:
        corners, weights, scale = plan
        draw = scale * np.sum(draw[corners] * weights, axis=1)
    nx, ny = config.grid
    return ShadowingField(draw.reshape(nx, ny), config.shadow_sigma_db,
                          config.shadow_dcorr_m, config.region_m)


# ---------------------------------------------------------------------------
# Channel and per-slot PSD
# ---------------------------------------------------------------------------

def pathloss_db(distance_m, freq_hz, config: DatasetConfig):
    """Log-distance path loss with a 20*log10(f/f_ref) carrier offset."""
    d = np.maximum(distance_m, config.ref_distance_m)
    f_ref = config.base_freq_ghz * 1e9
    return (config.pathloss_ref_db
            + 20.0 * np.log10(np.asarray(freq_hz, dtype=np.float64) / f_ref)
            + 10.0 * config.pathloss_exponent * np.log10(d / config.ref_distance_m))


def channel_gain_db(tx_pos: np.ndarray, rx_pos: np.ndarray, freq_hz: float,
                    shadow: ShadowingField, config: DatasetConfig) -> float:
    """Power gain |g|^2 in dB between one TX and one RX at one carrier."""
    d = float(np.linalg.norm(np.asarray(tx_pos, float) - np.asarray(rx_pos, float)))
    return float(-(pathloss_db(d, freq_hz, config) + shadow.lookup(np.asarray(rx_pos, float))))


def _gain_grid_db(tx_pos: np.ndarray, shadow: ShadowingField,
                  config: DatasetConfig) -> np.ndarray:
    """Gain in dB from one TX to every grid point and band, shape (n_x, n_y, n_f)."""
    nx, ny = config.grid
    d = np.linalg.norm(grid_positions_m(config) - tx_pos[None, :], axis=1).reshape(nx, ny)
    pl = pathloss_db(d[:, :, None], config.carrier_frequencies_hz()[None, None, :], config)
    return -(pl + shadow.values_db[:, :, None])


def psd_slot_linear(states: list[TransmitterState], fields: list[ShadowingField],
                    config: DatasetConfig) -> np.ndarray:
    """Linear-domain received PSD (mW) for one quasi-static slot, (n_x, n_y, n_f)."""
    nx, ny = config.grid
    psd = np.zeros((nx, ny, config.n_f))
    for state, shadow in zip(states, fields):
        gain = _gain_grid_db(state.position_m, shadow, config)
        psd += 10.0 ** ((state.psd_per_band[None, None, :] + gain) / 10.0)
    if config.noise_psd_dbm is not None:
        psd += 10.0 ** (config.noise_psd_dbm / 10.0)
    return psd


def _reflect(coord: float, lo: float, hi: float) -> tuple[float, float]:
    """Fold a coordinate into [lo, hi]; returns (folded value, direction sign)."""
    span = hi - lo
    u = (coord - lo) % (2.0 * span)
    if u <= span:
        return lo + u, 1.0
    return lo + 2.0 * span - u, -1.0


def draw_transmitters(config: DatasetConfig, rng: np.random.Generator) -> list[TransmitterState]:
    count = int(rng.integers(config.tx_count_range[0], config.tx_count_range[1] + 1))
    states = []
    for _ in range(count):
        pos = rng.uniform(0.0, config.region_m, size=2)
        speed = rng.uniform(*config.speed_range_mps)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vel = speed * np.array([np.cos(angle), np.sin(angle)])
        power = rng.uniform(*config.power_range_dbm)
        states.append(TransmitterState(pos, vel, np.full(config.n_f, power)))
    return states


def advance_transmitters(states: list[TransmitterState], dt: float,
                         config: DatasetConfig, rng: np.random.Generator
                         ) -> list[TransmitterState]:
    """Move each TX by one slot: fresh speed, persistent heading, boundary reflection."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    out = []
    for state in states:
        speed = rng.uniform(*config.speed_range_mps)
        heading = state.velocity_mps / np.linalg.norm(state.velocity_mps)
        raw = state.position_m + heading * speed * dt
        pos = np.empty(2)
        signs = np.empty(2)
        for axis in range(2):
            pos[axis], signs[axis] = _reflect(raw[axis], 0.0, config.region_m)
        out.append(TransmitterState(pos, heading * signs * speed, state.psd_per_band.copy()))
    return out


def to_dbm(psd_linear: np.ndarray, config: DatasetConfig) -> np.ndarray:
    """Convert linear mW to dBm, floored at the noise level to avoid -inf."""
    if config.noise_psd_dbm is not None:
        floor = 10.0 ** (config.noise_psd_dbm / 10.0)
    else:
        floor = 1e-30
    return 10.0 * np.log10(np.maximum(psd_linear, floor))


def synthesize_map(config: DatasetConfig, rng: np.random.Generator,
                   seed: int | None = None) -> RadioMapSample:
    """Generate one 4D radio map sample (dBm) under the given configuration."""
    states = draw_transmitters(config, rng)
    fields = [sample_shadowing(config, rng) for _ in states]
    nx, ny = config.grid
    phi_lin = np.empty((nx, ny, config.n_t, config.n_f))
    for t in range(config.n_t):
        if t > 0:
            states = advance_transmitters(states, config.delta_t_s, config, rng)
        phi_lin[:, :, t, :] = psd_slot_linear(states, fields, config)
    return RadioMapSample(to_dbm(phi_lin, config), True, config, seed)


def generate_dataset(config: DatasetConfig, n_samples: int, seed: int) -> list[RadioMapSample]:
    """Generate ``n_samples`` independent samples from per-sample seed streams."""
    children = np.random.SeedSequence(seed).spawn(n_samples)
    return [synthesize_map(config, np.random.default_rng(child), seed=i)
            for i, child in enumerate(children)]


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def dataset_stats(samples: list[RadioMapSample]) -> tuple[float, float]:
    """Pooled mean and (population) standard deviation over every voxel."""
    if not samples:
        raise DegenerateDataError("no samples")
    stacked = np.concatenate([s.phi.ravel() for s in samples])
    mean = float(stacked.mean())
    std = float(stacked.std())
    if std <= _MIN_STD:
        raise DegenerateDataError(f"dataset is (near-)constant, std={std:.3g}")
    return mean, std


def standardize_dataset(samples: list[RadioMapSample]
                        ) -> tuple[list[RadioMapSample], float, float]:
    """Zero-mean/unit-std the pooled split; returns the stats for later inversion."""
    mean, std = dataset_stats(samples)
    out = [replace(s, phi=(s.phi - mean) / std, units_dbm=False) for s in samples]
    return out, mean, std


def de_standardize(phi: np.ndarray, mean: float, std: float) -> np.ndarray:
    return phi * std + mean
