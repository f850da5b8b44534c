"""Serialization: JSONL manifests, CSV votes, and raw .rwt tensor files.

The tensor file layout is a single JSON header line
``{"dtype": "f32", "shape": [...]}`` followed by the raw little-endian
float32 payload in row-major order, so files round-trip bit-exactly and
stay readable from any language.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List, Union

import cv2
import numpy as np

from .datamodel import (
    DatasetManifest,
    ManifestError,
    ManifestRecord,
    ScoreMap,
    TensorFormatError,
    TextLabel,
    VoteRecord,
)

VOTES_CSV_FIELDS = ["worker_id", "image_id", "label", "vote_time_s", "batch"]
TENSOR_SUFFIX = ".rwt"


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Load a JSON Lines manifest, preserving record order.

    Malformed lines and duplicate ids are reported with their line number.
    """
    path = Path(path)
    manifest = DatasetManifest()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: malformed JSON on line {lineno}: {exc}") from None
            if not isinstance(data, dict):
                raise ManifestError(f"{path}: line {lineno} is not a JSON object")
            try:
                record = ManifestRecord.from_dict(data)
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}: invalid record on line {lineno}: {exc}") from None
            if record.image_id in manifest:
                raise ManifestError(
                    f"{path}: duplicate image_id {record.image_id!r} on line {lineno}"
                )
            manifest.append(record)
    return manifest


def write_manifest(path: Union[str, Path], manifest: DatasetManifest) -> None:
    Path(path).write_bytes(manifest_bytes(manifest))


def manifest_bytes(manifest: DatasetManifest) -> bytes:
    """Canonical JSONL serialization, one compact record per line."""
    lines = [
        json.dumps(rec.to_dict(), ensure_ascii=False, separators=(",", ":"))
        for rec in manifest
    ]
    return ("".join(line + "\n" for line in lines)).encode("utf-8")


def read_votes(path: Union[str, Path]) -> List[VoteRecord]:
    path = Path(path)
    votes: List[VoteRecord] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(VOTES_CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: votes CSV missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                votes.append(
                    VoteRecord(
                        worker_id=row["worker_id"],
                        image_id=row["image_id"],
                        label=TextLabel.parse(row["label"]),
                        vote_time_s=float(row["vote_time_s"]),
                        batch=int(row["batch"]),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}: invalid vote on line {lineno}: {exc}") from None
    return votes


def write_votes(path: Union[str, Path], votes: List[VoteRecord]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VOTES_CSV_FIELDS)
        for v in votes:
            writer.writerow([v.worker_id, v.image_id, v.label.value, v.vote_time_s, v.batch])


def write_tensor(path: Union[str, Path], tensor: Union[np.ndarray, ScoreMap]) -> None:
    """Write an array (or a ScoreMap's data) as a .rwt file."""
    array = tensor.data if isinstance(tensor, ScoreMap) else np.asarray(tensor)
    if array.ndim == 0 or any(s == 0 for s in array.shape):
        raise TensorFormatError(f"refusing to write tensor with shape {array.shape}")
    payload = np.ascontiguousarray(array, dtype="<f4")
    header = json.dumps({"dtype": "f32", "shape": list(array.shape)}, separators=(",", ":"))
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(payload.tobytes())


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise TensorFormatError(f"{path}: missing tensor header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise TensorFormatError(f"{path}: malformed tensor header: {exc}") from None
        if header.get("dtype") != "f32":
            raise TensorFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        shape = header.get("shape")
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(s, int) and s > 0 for s in shape)
        ):
            raise TensorFormatError(f"{path}: invalid tensor shape {shape!r}")
        payload = fh.read()
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload length mismatch (expected {expected} bytes, got {len(payload)})"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def read_score_map(path: Union[str, Path]) -> ScoreMap:
    return ScoreMap(read_tensor(path))


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Read a PNG/JPEG file as an RGB float32 array in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise IOError(f"cannot read image file {path}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float32) / 255.0


def save_image(path: Union[str, Path], image: np.ndarray) -> None:
    """Write an RGB float array in [0, 1] as an 8-bit image file."""
    u8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    bgr = cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"cannot write image file {path}")


def encode_png(image: np.ndarray) -> bytes:
    """Encode an RGB float array in [0, 1] to PNG bytes."""
    u8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    ok, buf = cv2.imencode(".png", cv2.cvtColor(u8, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError("PNG encoding failed")
    return bytes(buf)


def score_map_path(directory: Union[str, Path], image_id: str) -> Path:
    """Cache location of the score map for one image."""
    return Path(directory) / f"{image_id}{TENSOR_SUFFIX}"
