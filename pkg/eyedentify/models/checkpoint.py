"""
Checkpoint file layout:

    magic b"EYID" | major u16 | minor u16 | header length u32   (little-endian)
    JSON header (configs, tensor index, z-scores, labels, metadata)
    float32 little-endian tensor payloads in index order
    SHA-256 over all preceding bytes
"""
import hashlib
import json
import logging
import os
import struct

import numpy as np
import torch

from eyedentify.errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from eyedentify.models.model_manager import ModelBundle
from eyedentify.preprocessing.transforms import ZScoreStats
from eyedentify.pydantic_models.models import JointConfig, SubnetConfig, TransformConfig

logger = logging.getLogger(__name__)

MAGIC = b"EYID"
VERSION = (1, 0)
_PREFIX = struct.Struct("<4sHHI")
_DIGEST_SIZE = hashlib.sha256().digest_size


def _header(bundle: ModelBundle) -> dict:
    tensors = []
    offset = 0
    for name, t in bundle.state_dict().items():
        nbytes = t.numel() * 4
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {
        "config": {
            "slow": bundle.slow_cfg.model_dump(),
            "fast": bundle.fast_cfg.model_dump(),
            "joint": bundle.joint_cfg.model_dump(),
            "transform": bundle.transform.model_dump(),
            "window_length": bundle.window_length,
        },
        "seed": bundle.seed,
        "class_labels": bundle.class_labels,
        "zscore": bundle.zscore.to_dict() if bundle.zscore is not None else None,
        "trained_stages": list(bundle.trained_stages),
        "metadata": bundle.metadata,
        "tensors": tensors,
    }


def checkpoint_bytes(bundle: ModelBundle) -> bytes:
    header = json.dumps(_header(bundle), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION[0], VERSION[1], len(header)), header]
    for t in bundle.state_dict().values():
        parts.append(t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(bundle: ModelBundle, path: str) -> str:
    """Write the bundle and return the hex SHA-256 trailer, which identifies the checkpoint."""
    data = checkpoint_bytes(bundle)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    digest = data[-_DIGEST_SIZE:].hex()
    bundle.checkpoint_digest = digest
    logger.info(f"Saved checkpoint to {path} ({len(data)} bytes, stages: {bundle.trained_stages or 'none'})")
    return digest


def _checksum_ok(data: bytes) -> bool:
    return len(data) > _DIGEST_SIZE and hashlib.sha256(data[:-_DIGEST_SIZE]).digest() == data[-_DIGEST_SIZE:]


def _header_len_disagrees(data: bytes, header_len: int) -> bool:
    """True when a complete JSON header is present but ends somewhere other than `header_len` says."""
    # the header is ASCII JSON, so latin-1 keeps one character per byte
    try:
        _, end = json.JSONDecoder().raw_decode(data[_PREFIX.size:].decode("latin-1"))
    except ValueError:
        return False
    return end != header_len


def _layout_consistent(tensors) -> bool:
    """Offsets are contiguous and every payload size matches its shape."""
    offset = 0
    for t in tensors:
        if t["offset"] != offset or t["nbytes"] != 4 * int(np.prod(t["shape"], dtype=np.int64)):
            return False
        offset += t["nbytes"]
    return True


def load_checkpoint(path: str, device=None) -> ModelBundle:
    """
    Raises:
        CheckpointFormatError: not a checkpoint (bad magic or malformed header).
        CheckpointVersionError: written with another major format version.
        CheckpointTruncatedError: file shorter than its header promises.
        CheckpointChecksumError: content does not match the SHA-256 trailer.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path} is not an eyedentify checkpoint")
    _, major, minor, header_len = _PREFIX.unpack_from(data)
    if major != VERSION[0]:
        raise CheckpointVersionError(
            f"{path} has format version {major}.{minor}, this build reads {VERSION[0]}.x"
        )
    header_end = _PREFIX.size + header_len
    if len(data) < header_end + _DIGEST_SIZE:
        if _header_len_disagrees(data, header_len) and not _checksum_ok(data):
            raise CheckpointChecksumError(f"{path} fails its checksum (corrupted header length)")
        raise CheckpointTruncatedError(f"{path} is truncated inside its header")
    try:
        header = json.loads(data[_PREFIX.size:header_end].decode("utf-8"))
        tensors = header["tensors"]
        payload_size = sum(int(t["nbytes"]) for t in tensors)
        consistent = _layout_consistent(tensors)
    except (ValueError, KeyError, TypeError) as e:
        if not _checksum_ok(data):
            raise CheckpointChecksumError(f"{path} fails its checksum")
        raise CheckpointFormatError(f"{path} has a malformed header: {e}")
    # a header whose tensor index contradicts itself cannot be trusted for the size checks below
    if not consistent:
        if not _checksum_ok(data):
            raise CheckpointChecksumError(f"{path} fails its checksum (corrupted tensor index)")
        raise CheckpointFormatError(f"{path} has an inconsistent tensor index")

    expected = header_end + payload_size + _DIGEST_SIZE
    if len(data) < expected:
        raise CheckpointTruncatedError(f"{path} is truncated: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise CheckpointFormatError(f"{path} has {len(data) - expected} unexpected trailing bytes")
    if not _checksum_ok(data):
        raise CheckpointChecksumError(f"{path} fails its checksum")

    # configs were validated when the bundle was built
    context = {"unsafe_hparams": True}
    cfg = header["config"]
    bundle = ModelBundle(
        SubnetConfig.model_validate(cfg["slow"], context=context),
        SubnetConfig.model_validate(cfg["fast"], context=context),
        JointConfig.model_validate(cfg["joint"]),
        TransformConfig.model_validate(cfg["transform"], context=context),
        header["class_labels"],
        zscore=ZScoreStats.from_dict(header["zscore"]) if header["zscore"] is not None else None,
        window_length=cfg["window_length"],
        seed=header["seed"],
        device=device,
    )
    state = {}
    for t in tensors:
        start = header_end + t["offset"]
        values = np.frombuffer(data, dtype="<f4", count=t["nbytes"] // 4, offset=start)
        state[t["name"]] = torch.from_numpy(values.astype(np.float32).reshape(t["shape"]))
    bundle.load_state_dict(state)
    bundle.trained_stages = list(header["trained_stages"])
    bundle.metadata = header["metadata"]
    bundle.checkpoint_digest = data[-_DIGEST_SIZE:].hex()
    bundle.eval()
    logger.info(f"Loaded checkpoint {path} (format {major}.{minor}, stages: {bundle.trained_stages or 'none'})")
    return bundle
