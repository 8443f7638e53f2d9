"""On-disk formats: sample tensors, availability masks, dataset manifests, checkpoints.

Sample file layout (little-endian throughout):
    magic "RMAP" | u16 version | u32 n_x, n_y, n_t, n_f | f64 mean | f64 std
    | float32 tensor, row-major (x, y, t, f)

Mask files reuse the same header (mean/std written as 0/1 and ignored) and
carry one bit per voxel, row-major, LSB-first within each byte; a set bit
marks a visible voxel.

A checkpoint is a JSON manifest (length-prefixed with u64) followed by the
named parameter tensors as float64, in manifest order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .config import DatasetConfig, dataset_config_to_kv, parse_kv_file, _config_from_kv
from .errors import FormatError, ShapeMismatchError
from .masks import MaskPartition, from_masked_indices

MAGIC = b"RMAP"
VERSION = 1
_HEADER = struct.Struct("<4sH4I2d")

CKPT_MAGIC = b"RMCK"
MANIFEST_NAME = "manifest.cfg"


def _read_header(data: bytes, path) -> tuple[tuple[int, int, int, int], float, float]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, nt, nf, mean, std = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    return (nx, ny, nt, nf), mean, std


def write_sample(path: str | Path, phi: np.ndarray, mean: float, std: float) -> None:
    """Write one 4D tensor with the dataset standardization stats in the header."""
    if phi.ndim != 4:
        raise ShapeMismatchError(f"expected a 4D tensor, got shape {phi.shape}")
    header = _HEADER.pack(MAGIC, VERSION, *phi.shape, float(mean), float(std))
    payload = np.ascontiguousarray(phi, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_sample(path: str | Path) -> tuple[np.ndarray, float, float]:
    data = Path(path).read_bytes()
    shape, mean, std = _read_header(data, path)
    n = int(np.prod(shape))
    expected = _HEADER.size + 4 * n
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - _HEADER.size} bytes, "
                          f"expected {4 * n}")
    phi = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return phi.reshape(shape), mean, std


def write_mask(path: str | Path, part: MaskPartition) -> None:
    header = _HEADER.pack(MAGIC, VERSION, *part.shape, 0.0, 1.0)
    bits = np.packbits(part.visible_grid().ravel(), bitorder="little")
    Path(path).write_bytes(header + bits.tobytes())


def read_mask(path: str | Path, strategy: str = "file") -> MaskPartition:
    data = Path(path).read_bytes()
    shape, _, _ = _read_header(data, path)
    n = int(np.prod(shape))
    expected = _HEADER.size + (n + 7) // 8
    if len(data) != expected:
        raise FormatError(f"{path}: bitmap is {len(data) - _HEADER.size} bytes, "
                          f"expected {(n + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size),
                         count=n, bitorder="little").astype(bool)
    return from_masked_indices(shape, np.flatnonzero(~bits), strategy)


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

def sample_filename(index: int) -> str:
    return f"sample_{index:05d}.rmap"


def write_dataset(out_dir: str | Path, config: DatasetConfig, phis_dbm: list[np.ndarray],
                  mean: float, std: float, seed: int) -> None:
    """One .rmap file per sample plus a key=value manifest echoing the config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, phi in enumerate(phis_dbm):
        write_sample(out / sample_filename(i), phi, mean, std)
    lines = [f"{k} = {v}" for k, v in dataset_config_to_kv(config).items()]
    lines += [f"seed = {seed}", f"n_samples = {len(phis_dbm)}",
              f"mean = {mean!r}", f"std = {std!r}"]
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def read_dataset(in_dir: str | Path):
    """Load a dataset directory -> (config, tensors list, mean, std, meta dict)."""
    in_dir = Path(in_dir)
    manifest = in_dir / MANIFEST_NAME
    if not manifest.is_file():
        raise FormatError(f"{in_dir}: missing {MANIFEST_NAME}")
    kv = parse_kv_file(manifest)
    meta = {k: kv.pop(k) for k in ("seed", "n_samples", "mean", "std") if k in kv}
    config = _config_from_kv(DatasetConfig, kv, str(manifest))
    n = int(meta.get("n_samples", 0))
    phis = []
    for i in range(n):
        phi, mean, std = read_sample(in_dir / sample_filename(i))
        if phi.shape != config.shape:
            raise ShapeMismatchError(f"{sample_filename(i)}: shape {phi.shape} "
                                     f"!= config shape {config.shape}")
        phis.append(phi)
    return config, phis, float(meta["mean"]), float(meta["std"]), meta


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Manifest (names, shapes, dtype, hyperparameters, stats) + float64 payloads."""
    entries = [{"name": k, "shape": list(v.shape), "dtype": "float64"}
               for k, v in tensors.items()]
    manifest = dict(meta)
    manifest["tensors"] = entries
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {data[:4]!r}")
    (length,) = struct.unpack_from("<Q", data, 4)
    head = 12 + length
    try:
        manifest = json.loads(data[12:head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    offset = head
    for entry in manifest.pop("tensors"):
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = offset + 8 * n
        if end > len(data):
            raise FormatError(f"{path}: truncated tensor payload at {entry['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset = end
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return tensors, manifest


def config_to_jsonable(cfg) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in dataclasses.asdict(cfg).items()}
