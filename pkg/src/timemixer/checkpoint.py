"""Single-file checkpoints.

Layout::

    TIMEMIXER-CHECKPOINT 1\\n
    <one line of JSON: config, metadata, tensor index>\\n
    <raw little-endian float64 values, tensors back to back in index order>

The JSON header is written with sorted keys and no whitespace variation and
the payload is the exact row-major bytes, so save -> load -> save reproduces
the file byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import ModelConfig, TimeMixerModel
from .tensor import Tensor

MAGIC = b"TIMEMIXER-CHECKPOINT 1\n"
_DTYPE = np.dtype("<f8")


def save_checkpoint(path, model: TimeMixerModel, metadata: Optional[dict] = None) -> None:
    index, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=_DTYPE)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {"config": model.config.to_dict(), "metadata": metadata or {}, "tensors": index}
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(text.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Tuple[TimeMixerModel, dict]:
    """Returns ``(model, metadata)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a timemixer checkpoint")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    payload = np.frombuffer(raw, dtype=_DTYPE, offset=end + 1)
    config = ModelConfig.from_dict(header["config"])
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        values = payload[entry["offset"]: entry["offset"] + size]
        if values.size != size:
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']}")
        params[entry["name"]] = Tensor(values.reshape(shape).astype(np.float64), requires_grad=True)
    return TimeMixerModel(config, params), header.get("metadata", {})
