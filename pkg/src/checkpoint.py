"""Single-file checkpoints: magic, version, JSON header, then the raw arrays in declared order."""
import hashlib
import struct
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from errors import CheckpointError
from model import PARAM_NAMES, Gradients, Hyper, ModelParams
from numerics import DTYPE
from training import Checkpoint, OptimizerState, TrainConfig

MAGIC = b"HREDCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sII")
_STORAGE = {"float32": "<f4", "float64": "<f8"}


class CheckpointHeader(BaseModel):
    version: int
    hyper: Hyper
    config: TrainConfig
    vocab_digest: str
    precision: str
    init_schemes: Dict[str, str]
    history: List[float]
    best_epoch: int
    initial_validation_ll: Optional[float]
    has_optimizer: bool
    optimizer_step: int
    payload_bytes: int
    payload_sha256: str
    settings: Dict[str, str]


def _pack(params: ModelParams, precision: str) -> List[bytes]:
    dtype = _STORAGE[precision]
    return [np.ascontiguousarray(params.get(name), dtype=dtype).tobytes() for name in PARAM_NAMES]


def checkpoint_save(checkpoint: Checkpoint, path: Union[str, Path], precision: str = "float32") -> None:
    if precision not in _STORAGE:
        raise CheckpointError(f"Unsupported checkpoint precision '{precision}'")

    blocks = _pack(checkpoint.params, precision)
    if checkpoint.optimizer is not None:
        blocks += _pack(checkpoint.optimizer.accumulators, precision)
    payload = b"".join(blocks)

    header = CheckpointHeader(
        version=FORMAT_VERSION,
        hyper=checkpoint.hyper,
        config=checkpoint.config,
        vocab_digest=checkpoint.vocab_digest,
        precision=precision,
        init_schemes=checkpoint.init_schemes,
        history=checkpoint.history,
        best_epoch=checkpoint.best_epoch,
        initial_validation_ll=checkpoint.initial_validation_ll,
        has_optimizer=checkpoint.optimizer is not None,
        optimizer_step=checkpoint.optimizer.step if checkpoint.optimizer else 0,
        payload_bytes=len(payload),
        payload_sha256=hashlib.sha256(payload).hexdigest(),
        settings=checkpoint.settings,
    )
    header_bytes = header.model_dump_json().encode("utf-8")

    path = Path(path)
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)

    _write_manifest(path, header, checkpoint.params, blocks)


def _write_manifest(path: Path, header: CheckpointHeader, params: ModelParams, blocks: List[bytes]) -> None:
    lines = [
        f"format_version: {header.version}",
        f"precision: {header.precision}",
        f"vocab_digest: {header.vocab_digest}",
        f"payload_sha256: {header.payload_sha256}",
        f"hyper: V={header.hyper.V} d_h={header.hyper.d_h} d_s={header.hyper.d_s} d_e={header.hyper.d_e}",
    ]
    for name, block in zip(PARAM_NAMES, blocks):
        shape = "x".join(str(dim) for dim in params.get(name).shape)
        lines.append(f"{name}\t{shape}\t{hashlib.sha256(block).hexdigest()}")
    for key in sorted(header.settings):
        lines.append(f"setting {key}={header.settings[key]}")
    Path(f"{path}.manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _unpack(payload: bytes, offset: int, hyper: Hyper, precision: str, cls):
    dtype = np.dtype(_STORAGE[precision])
    params = cls.zeros(hyper)
    for name in PARAM_NAMES:
        shape = params.get(name).shape
        count = int(np.prod(shape))
        array = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape)
        params.set(name, array.astype(DTYPE))
        offset += count * dtype.itemsize
    return params, offset


def checkpoint_load(path: Union[str, Path], vocab_digest: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()

    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, header_length = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")

    header_end = _PREAMBLE.size + header_length
    try:
        header = CheckpointHeader.model_validate_json(raw[_PREAMBLE.size:header_end])
    except ValidationError as e:
        raise CheckpointError(f"{path}: corrupt header ({e.error_count()} errors)")

    payload = raw[header_end:]
    if len(payload) != header.payload_bytes:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header declares {header.payload_bytes}")
    if hashlib.sha256(payload).hexdigest() != header.payload_sha256:
        raise CheckpointError(f"{path}: payload digest mismatch, file is corrupt")
    if vocab_digest is not None and vocab_digest != header.vocab_digest:
        raise CheckpointError(f"Vocabulary digest {vocab_digest} does not match "
                              f"checkpoint digest {header.vocab_digest}")

    params, offset = _unpack(payload, 0, header.hyper, header.precision, ModelParams)
    optimizer = None
    if header.has_optimizer:
        accumulators, offset = _unpack(payload, offset, header.hyper, header.precision, Gradients)
        optimizer = OptimizerState(accumulators=accumulators, step=header.optimizer_step)

    return Checkpoint(
        version=header.version,
        hyper=header.hyper,
        vocab_digest=header.vocab_digest,
        params=params,
        optimizer=optimizer,
        config=header.config,
        history=header.history,
        best_epoch=header.best_epoch,
        initial_validation_ll=header.initial_validation_ll,
        init_schemes=header.init_schemes,
        settings=header.settings,
    )
