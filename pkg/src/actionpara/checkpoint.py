"""Checkpoint = ``manifest.json`` + ``weights.bin`` (+ ``vocab.txt``) in one directory.

The manifest records the model config, every array's name/shape/byte offset,
the precision and a digest of the blob. Arrays are little-endian floats in
manifest order. ``checkpoint_id`` is the SHA-256 of the manifest bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import ActionTransformer, ModelConfig
from .text_prep import Vocab

FORMAT = "actionpara-checkpoint"
VERSION = 1
MANIFEST, BLOB, VOCAB = "manifest.json", "weights.bin", "vocab.txt"
_NP_DTYPES = {"f32": "<f4", "f64": "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ActionTransformer
    arrays: dict[str, np.ndarray] = field(default_factory=dict)  # non-parameter arrays
    extra: dict = field(default_factory=dict)
    vocab: Vocab | None = None
    checkpoint_id: str = ""


def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def manifest_hash(path: str | Path) -> str:
    return hashlib.sha256((Path(path) / MANIFEST).read_bytes()).hexdigest()


def save_checkpoint(
    path: str | Path,
    model: ActionTransformer,
    arrays: dict[str, torch.Tensor | np.ndarray] | None = None,
    extra: dict | None = None,
    vocab: Vocab | None = None,
) -> str:
    """Write a checkpoint directory; returns its ``checkpoint_id``.

    ``arrays`` holds extra named arrays (optimizer moments, best weights) that
    are stored after the model parameters.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = model.cfg
    dt = _NP_DTYPES[cfg.precision]
    entries, chunks, offset = [], [], 0
    named = [(n, p.detach()) for n, p in model.named_parameters()]
    named += sorted((arrays or {}).items())
    for name, arr in named:
        a = arr.detach().cpu().numpy() if isinstance(arr, torch.Tensor) else np.asarray(arr)
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": cfg.to_dict(),
        "precision": cfg.precision,
        "parameters": [n for n, _ in model.named_parameters()],
        "arrays": entries,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    (path / BLOB).write_bytes(blob)
    if vocab is not None:
        vocab.save(path / VOCAB)
    data = _dump(manifest)
    (path / MANIFEST).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _require(manifest: dict, key: str):
    if key not in manifest:
        raise CheckpointError(f"checkpoint manifest missing field {key!r}")
    return manifest[key]


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = (path / MANIFEST).read_bytes()
        manifest = json.loads(data)
    except FileNotFoundError as e:
        raise CheckpointError(f"no {MANIFEST} in {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest is not valid JSON: {e}") from e
    if _require(manifest, "format") != FORMAT:
        raise CheckpointError(f"field 'format': expected {FORMAT!r}, got {manifest['format']!r}")
    if _require(manifest, "version") != VERSION:
        raise CheckpointError(f"field 'version': unsupported checkpoint version {manifest['version']!r}")
    try:
        cfg = ModelConfig(**_require(manifest, "config"))
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"field 'config': {e}") from e
    if _require(manifest, "precision") != cfg.precision:
        raise CheckpointError("field 'precision' disagrees with config.precision")
    blob = (path / BLOB).read_bytes()
    if hashlib.sha256(blob).hexdigest() != _require(manifest, "blob_sha256"):
        raise CheckpointError("field 'blob_sha256' does not match weights.bin")
    dt = np.dtype(_NP_DTYPES[cfg.precision])
    loaded = {}
    for entry in _require(manifest, "arrays"):
        n = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(blob, dtype=dt, count=n, offset=entry["offset"]).reshape(entry["shape"])
        loaded[entry["name"]] = a.copy()
    model = ActionTransformer(cfg)
    state = {}
    for name, p in model.named_parameters():
        if name not in loaded:
            raise CheckpointError(f"field 'arrays': parameter {name!r} missing")
        if tuple(loaded[name].shape) != tuple(p.shape):
            raise CheckpointError(
                f"field 'arrays': {name!r} has shape {tuple(loaded[name].shape)}, config implies {tuple(p.shape)}"
            )
        state[name] = torch.from_numpy(loaded.pop(name))
    model.load_state_dict(state, strict=False)
    model.eval()
    vocab = Vocab.load(path / VOCAB) if (path / VOCAB).exists() else None
    if vocab is not None and vocab.size != cfg.vocab_size:
        raise CheckpointError(f"vocab.txt has {vocab.size} entries, config.vocab_size={cfg.vocab_size}")
    return Checkpoint(model, loaded, manifest.get("extra", {}), vocab, hashlib.sha256(data).hexdigest())
