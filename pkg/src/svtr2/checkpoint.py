"""Binary checkpoint container.

Layout: 8-byte magic ``SVTR2CKP``, little-endian u32 header length, a UTF-8
JSON header (sorted keys, compact separators), then every array as raw
little-endian float32 in header order.  The encoding is canonical, so
load followed by save reproduces the input bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CharsetMismatchError, FormatError, TruncatedFileError
from .model import ModelConfig, TextRecognizer

MAGIC = b"SVTR2CKP"
FORMAT_VERSION = 1
PHASES = ("A", "B", "inference")
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]"
    model_config: dict
    charset: list
    phase: str
    step: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.model_config.get("variant", "")

    @property
    def charset_hash(self) -> str:
        from .msr import Charset

        return Charset(self.charset).hash


def _header(ckpt: Checkpoint) -> dict:
    index, offset = [], 0
    for name, arr in ckpt.arrays.items():
        nbytes = int(np.prod(arr.shape, dtype=np.int64)) * _DTYPE.itemsize
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {
        "format_version": FORMAT_VERSION,
        "variant": ckpt.variant,
        "charset": list(ckpt.charset),
        "charset_hash": ckpt.charset_hash,
        "phase": ckpt.phase,
        "step": int(ckpt.step),
        "model_config": ckpt.model_config,
        "meta": ckpt.meta,
        "arrays": index,
    }


def to_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.phase not in PHASES:
        raise FormatError(f"unknown phase {ckpt.phase!r}")
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(header)), header]
    parts.extend(np.ascontiguousarray(a, dtype=_DTYPE).tobytes() for a in ckpt.arrays.values())
    return b"".join(parts)


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 4:
        if blob[: len(MAGIC)] != MAGIC[: len(blob)]:
            raise FormatError("not a checkpoint: bad magic")
        raise TruncatedFileError("checkpoint shorter than its fixed preamble")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if len(blob) < start + hlen:
        raise TruncatedFileError("checkpoint header truncated")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')!r}")
    body = start + hlen
    arrays = OrderedDict()
    for entry in header["arrays"]:
        lo = body + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(blob):
            raise TruncatedFileError(f"array {entry['name']!r} truncated")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=_DTYPE, count=entry["nbytes"] // 4,
                                              offset=lo).reshape(entry["shape"]).copy()
    expected_end = body + sum(e["nbytes"] for e in header["arrays"])
    if len(blob) != expected_end:
        raise FormatError(f"{len(blob) - expected_end} trailing bytes after the last array")
    ckpt = Checkpoint(arrays, header["model_config"], header["charset"], header["phase"], header["step"],
                      header.get("meta", {}))
    if ckpt.charset_hash != header["charset_hash"]:
        raise FormatError("stored charset hash does not match the stored charset")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def checkpoint_from_model(model: TextRecognizer, charset, phase: str, step: int = 0,
                          meta: Optional[dict] = None) -> Checkpoint:
    if model.inference_only and phase != "inference":
        raise FormatError("an SGM-stripped model can only be saved with phase 'inference'")
    arrays = OrderedDict((n, np.asarray(a, dtype=np.float32)) for n, a in model.state_dict().items())
    return Checkpoint(arrays, model.config.to_dict(), list(charset), phase, step, dict(meta or {}))


def model_from_checkpoint(ckpt: Checkpoint, expected_charset_hash: Optional[str] = None,
                          dtype=np.float32) -> TextRecognizer:
    """Rebuild the network; ``expected_charset_hash`` guards against evaluating with another charset."""
    if expected_charset_hash is not None and expected_charset_hash != ckpt.charset_hash:
        raise CharsetMismatchError(
            f"checkpoint charset {ckpt.charset_hash} does not match data charset {expected_charset_hash}")
    config = ModelConfig.from_dict(ckpt.model_config)
    if ckpt.phase == "inference":
        config = ModelConfig(**{**config.to_dict(), "use_sgm": False})
    model = TextRecognizer(config, dtype)
    model.load_state_dict(ckpt.arrays)
    if ckpt.phase == "inference":
        model.inference_only = True
    return model
