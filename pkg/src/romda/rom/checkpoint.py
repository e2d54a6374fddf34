"""Model checkpoints: magic, JSON header, then RMX1 blocks addressed by an index.

Layout::

    b"ROMCKPT1" | <Q header_len | header JSON (utf-8) | RMX1 block | RMX1 block | ...

The header carries the hyper-parameters, freeze flags, format version and an
index ``name -> [offset, length]`` with offsets relative to the first block.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from romda.errors import ContractError
from romda.numerics.tensor import decode_rmx, encode_rmx
from romda.rom.model import COMPONENTS, Normalizer, RomHyper, RomModel, XI_CENTER, XI_HALF_RANGE

MAGIC = b"ROMCKPT1"
FORMAT_VERSION = 1
_NORM_KEYS = ("norm.x_mean", "norm.x_scale")


def to_bytes(model: RomModel) -> bytes:
    arrays = dict(model.params)
    arrays["norm.x_mean"] = model.norm.mean
    arrays["norm.x_scale"] = model.norm.scale
    blocks, index, offset = [], {}, 0
    for name in sorted(arrays):
        blob = encode_rmx(arrays[name])
        index[name] = [offset, len(blob)]
        offset += len(blob)
        blocks.append(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "hyper": model.hyper.to_dict(),
        "frozen": dict(model.frozen),
        "xi_norm": {"center": XI_CENTER, "half_range": XI_HALF_RANGE},
        "index": index,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(blocks)


def from_bytes(buf: bytes) -> RomModel:
    if buf[:len(MAGIC)] != MAGIC:
        raise ContractError("not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", buf, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(buf[start:start + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint version {header.get('format_version')}")
    base = start + hlen
    arrays = {}
    for name, (off, length) in header["index"].items():
        arr, end = decode_rmx(buf, base + off)
        if end != base + off + length:
            raise ContractError(f"checkpoint block {name!r} has inconsistent length")
        arrays[name] = arr
    norm = Normalizer(arrays.pop(_NORM_KEYS[0]), arrays.pop(_NORM_KEYS[1]))
    frozen = {c: bool(header["frozen"].get(c, False)) for c in COMPONENTS}
    return RomModel(RomHyper.from_dict(header["hyper"]), arrays, norm, frozen)


def save_model(model: RomModel, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(to_bytes(model))
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_model(path) -> RomModel:
    return from_bytes(Path(path).read_bytes())


def component_bytes(model: RomModel, component: str) -> bytes:
    """Concatenated raw bytes of one component's parameters (for bitwise checks)."""
    params = model.component_params(component)
    return b"".join(np.ascontiguousarray(params[k]).tobytes() for k in sorted(params))
