"""Binary checkpoint format.

Layout: magic `STRATSCK`, little-endian u16 format version, u32 JSON header
length, JSON header (model config, parameter manifest, normalization
statistics, payload length and CRC-32), then the raw little-endian float32
parameter payload. Manifest offsets are contiguous and exhaustive; loading
is bit-exact and any corruption is detected by the length and CRC checks.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormalizationStats, VariableVocabulary
from .errors import CheckpointError
from .model import ModelConfig
from .optim import ParameterStore

MAGIC = b"STRATSCK"
FORMAT_VERSION = 1


def config_hash(config: ModelConfig) -> str:
    """Stable fingerprint of a model configuration."""
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _stats_to_dict(stats: NormalizationStats | None) -> dict | None:
    if stats is None:
        return None
    return {"variable_names": list(stats.vocabulary.names),
            "variable_means": stats.vocabulary.means.tolist(),
            "variable_stds": stats.vocabulary.stds.tolist(),
            "demographic_mean": stats.demographic_mean.tolist(),
            "demographic_std": stats.demographic_std.tolist(),
            "time_scale": stats.time_scale}


def _stats_from_dict(d: dict | None) -> NormalizationStats | None:
    if d is None:
        return None
    vocab = VariableVocabulary(tuple(d["variable_names"]),
                               np.asarray(d["variable_means"]),
                               np.asarray(d["variable_stds"]))
    return NormalizationStats(vocab, np.asarray(d["demographic_mean"]),
                              np.asarray(d["demographic_std"]),
                              float(d["time_scale"]))


@dataclass
class Checkpoint:
    """Everything needed to evaluate a trained model."""
    model_config: ModelConfig
    values: dict[str, np.ndarray]
    normalization: NormalizationStats | None

    @property
    def config_hash(self) -> str:
        return config_hash(self.model_config)

    def to_store(self, dtype=np.float32) -> ParameterStore:
        from .model import init_parameters
        store = init_parameters(self.model_config, seed=0, dtype=dtype)
        store.load_values(self.values)
        return store


def save_checkpoint(path, store: ParameterStore, model_config: ModelConfig,
                    stats: NormalizationStats | None = None) -> None:
    """Serialize parameters (cast to float32) with config and statistics."""
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in store.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(tensor.data.shape),
                         "dtype": "float32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"format_version": FORMAT_VERSION,
              "model_config": model_config.to_dict(),
              "config_hash": config_hash(model_config),
              "manifest": manifest,
              "normalization": _stats_to_dict(stats),
              "payload_length": len(payload),
              "payload_crc32": zlib.crc32(payload)}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint; bit-identical to what was saved.

    Raises CheckpointError on bad magic, unsupported version, truncation,
    manifest/payload disagreement, CRC mismatch, or (when `expected_config`
    is given) a configuration-hash mismatch.
    """
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 6 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos:pos + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    pos += header_len
    payload = blob[pos:]
    if len(payload) != header["payload_length"]:
        raise CheckpointError(f"{path}: payload length {len(payload)} != "
                              f"declared {header['payload_length']}")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    expected_offset = 0
    values: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: unsupported dtype "
                                  f"{entry['dtype']!r}")
        if entry["offset"] != expected_offset:
            raise CheckpointError(f"{path}: manifest offsets are not "
                                  f"contiguous at {entry['name']!r}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * count
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=entry["offset"]).reshape(entry["shape"])
        values[entry["name"]] = arr
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise CheckpointError(f"{path}: manifest does not cover the payload "
                              f"({expected_offset} of {len(payload)} bytes)")

    model_config = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and \
            config_hash(expected_config) != config_hash(model_config):
        raise CheckpointError(
            f"{path}: checkpoint was written for a different model "
            f"configuration (hash {config_hash(model_config)}, expected "
            f"{config_hash(expected_config)})")
    return Checkpoint(model_config, values, _stats_from_dict(header["normalization"]))
