"""Dataset and training configuration, presets, and the key=value config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# Physical envelope the simulated scenarios must stay inside.
SPEED_ENVELOPE_MPS = (10.0, 15.0)
POWER_ENVELOPE_DBM = (5.0, 11.0)
CARRIER_ENVELOPE_GHZ = (2.4, 6.0)


@dataclass(frozen=True)
class DatasetConfig:
    """Full description of one simulated 4D radio-map dataset.

    Spatial grid covers a ``region_m`` x ``region_m`` square; voxel (i, j)
    sits at (i*dx, j*dy) with dx = region_m/(n_x-1).
    """

    name: str
    n_f: int
    delta_f_mhz: float
    n_t: int
    delta_t_s: float
    grid: tuple[int, int]
    region_m: float = 200.0
    tx_count_range: tuple[int, int] = (2, 5)
    speed_range_mps: tuple[float, float] = (10.0, 15.0)
    power_range_dbm: tuple[float, float] = (5.0, 11.0)
    base_freq_ghz: float = 2.4
    noise_psd_dbm: float | None = -120.0
    # Propagation defaults: log-distance path loss, Gudmundson shadowing.
    pathloss_exponent: float = 2.5
    pathloss_ref_db: float = 40.0
    ref_distance_m: float = 1.0
    shadow_sigma_db: float = 6.0
    shadow_dcorr_m: float = 50.0

    def __post_init__(self):
        if self.n_f < 1 or self.n_t < 1:
            raise ConfigError(f"{self.name}: n_f and n_t must be >= 1")
        if self.grid[0] < 2 or self.grid[1] < 2:
            raise ConfigError(f"{self.name}: grid dims must be >= 2")
        if self.region_m <= 0:
            raise ConfigError(f"{self.name}: region_m must be positive")
        lo, hi = self.speed_range_mps
        if not (SPEED_ENVELOPE_MPS[0] <= lo <= hi <= SPEED_ENVELOPE_MPS[1]):
            raise ConfigError(f"{self.name}: speed range must lie within {SPEED_ENVELOPE_MPS} m/s")
        lo, hi = self.power_range_dbm
        if not (POWER_ENVELOPE_DBM[0] <= lo <= hi <= POWER_ENVELOPE_DBM[1]):
            raise ConfigError(f"{self.name}: power range must lie within {POWER_ENVELOPE_DBM} dBm")
        lo, hi = self.tx_count_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"{self.name}: tx_count_range must satisfy 1 <= min <= max")
        f_top = self.base_freq_ghz + (self.n_f - 1) * self.delta_f_mhz * 1e-3
        if not (CARRIER_ENVELOPE_GHZ[0] - 1e-9 <= self.base_freq_ghz
                and f_top <= CARRIER_ENVELOPE_GHZ[1] + 1e-9):
            raise ConfigError(f"{self.name}: carriers must lie within {CARRIER_ENVELOPE_GHZ} GHz "
                              f"(top carrier {f_top:.4f} GHz)")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.grid[0], self.grid[1], self.n_t, self.n_f)

    @property
    def n_voxels(self) -> int:
        nx, ny, nt, nf = self.shape
        return nx * ny * nt * nf

    def carrier_frequencies_hz(self):
        import numpy as np

        return (self.base_freq_ghz * 1e9
                + np.arange(self.n_f, dtype=np.float64) * self.delta_f_mhz * 1e6)


@dataclass
class TrainConfig:
    """Hyperparameters of one self-supervised pre-training run."""

    steps: int = 2000
    batch_size: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float | None = 1.0
    # Per-step draws: spatial mask ratio and the within-band ratio of the
    # partially masked band in the spectral strategy.
    spatial_ratios: tuple[float, ...] = (0.5, 0.7, 0.9)
    spectral_ratios: tuple[float, ...] = (0.5, 0.7, 0.9)
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


# Published four-dimensional dataset grid (name: n_f, delta_f MHz, n_t, delta_t s, grid).
PRESETS: dict[str, DatasetConfig] = {
    "d1": DatasetConfig("d1", 5, 900.0, 6, 1.0, (64, 64)),
    "d2": DatasetConfig("d2", 5, 900.0, 60, 6.0, (64, 64)),
    "d3": DatasetConfig("d3", 5, 900.0, 40, 1.0, (128, 128)),
    "d4": DatasetConfig("d4", 3, 1800.0, 30, 2.0, (128, 128)),
    "d5": DatasetConfig("d5", 4, 1200.0, 30, 2.0, (128, 128)),
    "d6": DatasetConfig("d6", 3, 1800.0, 60, 3.0, (128, 128)),
    "d7": DatasetConfig("d7", 8, 514.0, 50, 1.0, (64, 64)),
    # Desk-scale configs used by the acceptance experiments.
    "mini_a": DatasetConfig("mini_a", 3, 1800.0, 4, 1.0, (16, 16), region_m=100.0),
    "mini_b": DatasetConfig("mini_b", 3, 900.0, 4, 2.0, (16, 16), region_m=100.0),
    "mini_holdout": DatasetConfig("mini_holdout", 2, 1200.0, 3, 1.0, (12, 12), region_m=80.0),
}

_TUPLE_FIELDS = {"grid", "tx_count_range", "speed_range_mps", "power_range_dbm",
                 "spatial_ratios", "spectral_ratios"}


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Parse a ``key = value`` text file; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(name: str, text: str, pytype):
    if pytype is bool:
        return text.lower() in ("1", "true", "yes")
    try:
        return pytype(text)
    except ValueError as exc:
        raise ConfigError(f"field {name}: cannot parse {text!r} as {pytype.__name__}") from exc


def _config_from_kv(cls, kv: dict[str, str], context: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in kv.items():
        if key not in fields:
            raise ConfigError(f"{context}: unknown field {key!r}")
        if key in _TUPLE_FIELDS:
            parts = [p for p in text.replace(",", " ").split() if p]
            elem = int if key in ("grid", "tx_count_range") else float
            kwargs[key] = tuple(_coerce(key, p, elem) for p in parts)
        elif text.lower() in ("none", "null"):
            kwargs[key] = None
        else:
            ann = str(fields[key].type)
            if ann.startswith("str"):
                kwargs[key] = text
            elif ann.startswith("int"):
                kwargs[key] = _coerce(key, text, int)
            else:
                kwargs[key] = _coerce(key, text, float)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def dataset_config_from_file(path: str | Path) -> DatasetConfig:
    kv = parse_kv_file(path)
    if "name" not in kv:
        kv = {"name": Path(path).stem, **kv}
    return _config_from_kv(DatasetConfig, kv, str(path))


def train_config_from_file(path: str | Path) -> TrainConfig:
    return _config_from_kv(TrainConfig, parse_kv_file(path), str(path))


def dataset_config_to_kv(cfg: DatasetConfig) -> dict[str, str]:
    """Flatten a DatasetConfig into config-file strings (inverse of the parser)."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            out[f.name] = ",".join(repr(v) for v in value)
        elif value is None:
            out[f.name] = "none"
        else:
            out[f.name] = repr(value) if not isinstance(value, str) else value
    return out
