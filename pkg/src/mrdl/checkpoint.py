"""Binary model checkpoints.

Layout (all integers little-endian u32):

    magic "MRDLCKPT" | version=1
    config block: byte length, then UTF-8 key=value text
    rng block:    byte length, then UTF-8 JSON (may be empty)
    array count, then per array:
        name byte length, UTF-8 name, ndim, dims..., float32 payload

Parameters are stored as float32; training runs in float64, so a
round-trip perturbs values only at the float32 quantization level.
"""

from __future__ import annotations

import json

import numpy as np

from .config import format_kv, parse_kv_text
from .texdata import DataFormatError, _read_exact, _read_u32

__all__ = ["save_checkpoint", "load_checkpoint", "CKPT_MAGIC"]

CKPT_MAGIC = b"MRDLCKPT"


def save_checkpoint(path, params: dict[str, np.ndarray], config_map: dict[str, str],
                    rng_state: dict | None = None) -> None:
    config_blob = format_kv(config_map).encode("utf-8")
    rng_blob = json.dumps(rng_state, sort_keys=True).encode("utf-8") if rng_state else b""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        np.array([1], dtype="<u4").tofile(fh)
        np.array([len(config_blob)], dtype="<u4").tofile(fh)
        fh.write(config_blob)
        np.array([len(rng_blob)], dtype="<u4").tofile(fh)
        fh.write(rng_blob)
        np.array([len(params)], dtype="<u4").tofile(fh)
        for name in sorted(params):
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            np.array([len(blob)], dtype="<u4").tofile(fh)
            fh.write(blob)
            np.array([arr.ndim], dtype="<u4").tofile(fh)
            np.array(arr.shape, dtype="<u4").tofile(fh)
            arr.tofile(fh)


def load_checkpoint(path):
    """Returns ``(params, config_map, rng_state)``; params come back float64."""
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise DataFormatError("bad_magic", f"not a checkpoint file: {path}")
        version = int(_read_u32(fh, 1, "version")[0])
        if version != 1:
            raise DataFormatError("bad_version", f"unsupported checkpoint version {version}")
        config_len = int(_read_u32(fh, 1, "config length")[0])
        config_map = parse_kv_text(_read_exact(fh, config_len, "config block").decode("utf-8"))
        rng_len = int(_read_u32(fh, 1, "rng length")[0])
        rng_blob = _read_exact(fh, rng_len, "rng block") if rng_len else b""
        rng_state = json.loads(rng_blob.decode("utf-8")) if rng_blob else None
        count = int(_read_u32(fh, 1, "array count")[0])
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = int(_read_u32(fh, 1, "name length")[0])
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            ndim = int(_read_u32(fh, 1, "ndim")[0])
            dims = tuple(int(v) for v in _read_u32(fh, ndim, "dims"))
            size = int(np.prod(dims)) if dims else 1
            payload = _read_exact(fh, 4 * size, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
            if not np.all(np.isfinite(arr)):
                raise DataFormatError("non_finite", f"array {name} contains non-finite values")
            params[name] = arr
    return params, config_map, rng_state
