"""Single-file parameter containers.

Layout: one JSON metadata line ``{"meta": {...}, "tensors": [{"name", "dtype",
"shape"}, ...]}`` followed by the raw little-endian payloads of every listed
tensor, concatenated in listing order. Float tensors are stored as f32,
integer tensors (batch-norm step counters) as i64.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from .datamodel import TensorFormatError

_DTYPES = {"f32": "<f4", "i64": "<i8"}


def _dtype_tag(array: np.ndarray) -> str:
    if np.issubdtype(array.dtype, np.floating):
        return "f32"
    if np.issubdtype(array.dtype, np.integer):
        return "i64"
    raise TensorFormatError(f"unsupported tensor dtype {array.dtype}")


def save_container(
    path: Union[str, Path],
    meta: Dict[str, Any],
    tensors: Mapping[str, np.ndarray],
) -> None:
    entries = []
    payloads = []
    for name, array in tensors.items():
        tag = _dtype_tag(array)
        data = np.ascontiguousarray(array, dtype=_DTYPES[tag])
        entries.append({"name": name, "dtype": tag, "shape": list(array.shape)})
        payloads.append(data.tobytes())
    header = json.dumps({"meta": meta, "tensors": entries}, separators=(",", ":"))
    with Path(path).open("wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for blob in payloads:
            fh.write(blob)


def load_container(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    with path.open("rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise TensorFormatError(f"{path}: missing container header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise TensorFormatError(f"{path}: malformed container header: {exc}") from None
        tensors: Dict[str, np.ndarray] = {}
        for entry in header.get("tensors", []):
            tag = entry["dtype"]
            if tag not in _DTYPES:
                raise TensorFormatError(f"{path}: unsupported dtype {tag!r}")
            shape = entry["shape"]
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * np.dtype(_DTYPES[tag]).itemsize
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise TensorFormatError(
                    f"{path}: payload length mismatch for tensor {entry['name']!r}"
                )
            tensors[entry["name"]] = np.frombuffer(blob, dtype=_DTYPES[tag]).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise TensorFormatError(f"{path}: trailing bytes after last tensor payload")
    return header.get("meta", {}), tensors
