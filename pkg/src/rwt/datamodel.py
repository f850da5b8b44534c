"""Core domain types: labels, votes, score maps, and the dataset manifest."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional

import numpy as np


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest data."""


class TensorFormatError(ValueError):
    """Raised for malformed tensor files or invalid tensor shapes."""


class TextLabel(str, Enum):
    """The four non-overlapping annotation classes."""

    OVERLAYING = "Overlaying"
    ORGANIC = "Organic"
    BOTH = "Both"
    NONE = "None"

    @classmethod
    def parse(cls, value: str) -> "TextLabel":
        # "Scene" appears as a synonym for organically captured text in
        # older vote exports; canonicalize it on input.
        if value == "Scene":
            return cls.ORGANIC
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown text label {value!r}") from None


class BinaryClass(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


class LabelSource(str, Enum):
    VOTE = "vote"
    MANUAL_REVIEW = "manual_review"


@dataclass(frozen=True)
class ScoreMap:
    """Half-resolution character detector output.

    ``data`` has shape (h/2, w/2, 2); channel 0 is the per-cell probability
    of a character center (region), channel 1 the probability of lying
    between adjacent characters of one word (affinity).
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 3 or d.shape[2] != 2:
            raise TensorFormatError(f"score map must have shape (h/2, w/2, 2), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise TensorFormatError("score map must have nonzero spatial dimensions")
        if not np.issubdtype(d.dtype, np.floating):
            raise TensorFormatError(f"score map must be floating point, got {d.dtype}")
        if d.size and (float(d.min()) < 0.0 or float(d.max()) > 1.0):
            raise ValueError("score map values must lie in [0, 1]")

    @classmethod
    def from_channels(cls, region: np.ndarray, affinity: np.ndarray) -> "ScoreMap":
        if region.shape != affinity.shape:
            raise TensorFormatError("region and affinity channels must share a shape")
        return cls(np.stack([region, affinity], axis=-1).astype(np.float32))

    @property
    def region(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def affinity(self) -> np.ndarray:
        return self.data[:, :, 1]

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    def image_shape(self) -> tuple[int, int]:
        """Shape (h, w) of the source image this map corresponds to."""
        return 2 * self.height, 2 * self.width


def check_image(image: np.ndarray, *, min_side: int = 32, require_even: bool = False) -> np.ndarray:
    """Validate an RGB image array in [0, 1] and return it as float32.

    Raises ValueError on bad shape, dtype, or out-of-range values.
    """
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"image must have shape (h, w, 3), got {a.shape}")
    h, w = a.shape[:2]
    if h < min_side or w < min_side:
        raise ValueError(f"image sides must be >= {min_side}, got {h}x{w}")
    if require_even and (h % 2 or w % 2):
        raise ValueError(f"image sides must be even, got {h}x{w}")
    if not np.issubdtype(a.dtype, np.floating):
        raise ValueError(f"image must be floating point in [0, 1], got dtype {a.dtype}")
    if a.size and (float(a.min()) < 0.0 or float(a.max()) > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return np.ascontiguousarray(a, dtype=np.float32)


@dataclass(frozen=True)
class VoteRecord:
    """A single annotator's categorical vote with timing."""

    worker_id: str
    image_id: str
    label: TextLabel
    vote_time_s: float
    batch: int = 0

    def __post_init__(self) -> None:
        if self.vote_time_s <= 0:
            raise ValueError(f"vote_time_s must be > 0, got {self.vote_time_s}")


@dataclass(frozen=True)
class AggregatedLabel:
    """Majority-vote outcome for one image.

    ``label`` is None while no strict plurality winner exists (the example is
    ambiguous) and until a manual review decision resolves it.
    """

    image_id: str
    label: Optional[TextLabel]
    votes_for_winner: int
    total_votes: int
    ambiguous: bool
    source: LabelSource = LabelSource.VOTE

    def __post_init__(self) -> None:
        if self.ambiguous and self.label is not None and self.source is LabelSource.VOTE:
            raise ValueError("an ambiguous vote outcome cannot carry a label")

    @property
    def resolved(self) -> bool:
        return self.label is not None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "image_id": self.image_id,
            "votes_for_winner": self.votes_for_winner,
            "total_votes": self.total_votes,
            "ambiguous": self.ambiguous,
            "source": self.source.value,
        }
        if self.label is not None:
            out["label"] = self.label.value
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AggregatedLabel":
        label = data.get("label")
        return cls(
            image_id=data["image_id"],
            label=TextLabel.parse(label) if label is not None else None,
            votes_for_winner=int(data["votes_for_winner"]),
            total_votes=int(data["total_votes"]),
            ambiguous=bool(data["ambiguous"]),
            source=LabelSource(data.get("source", "vote")),
        )


@dataclass
class ManifestRecord:
    """One catalog entry: identity, label state, split, and gate bookkeeping."""

    image_id: str
    image_path: str
    category: str
    aggregated: Optional[AggregatedLabel] = None
    binary_class: Optional[BinaryClass] = None
    split: Optional[Split] = None
    gate_score: Optional[float] = None
    n_text_regions: Optional[int] = None
    needs_reannotation: bool = False
    version: int = 0

    def __post_init__(self) -> None:
        if self.gate_score is not None and self.gate_score < 0:
            raise ValueError("gate_score must be >= 0")
        if self.n_text_regions is not None and self.n_text_regions < 0:
            raise ValueError("n_text_regions must be >= 0")
        if self.binary_class is not None and (self.aggregated is None or not self.aggregated.resolved):
            raise ManifestError(
                f"record {self.image_id!r} has a binary class but no resolved aggregated label"
            )

    @property
    def status(self) -> str:
        """Review status: 'ambiguous', 'resolved', or 'pending'."""
        if self.needs_reannotation or self.aggregated is None:
            return "pending"
        if self.aggregated.ambiguous and not self.aggregated.resolved:
            return "ambiguous"
        if self.aggregated.resolved:
            return "resolved"
        return "pending"

    def copy(self) -> "ManifestRecord":
        return replace(self, aggregated=self.aggregated)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "image_id": self.image_id,
            "image_path": self.image_path,
            "category": self.category,
        }
        if self.aggregated is not None:
            out["aggregated"] = self.aggregated.to_dict()
        if self.binary_class is not None:
            out["binary_class"] = self.binary_class.value
        if self.split is not None:
            out["split"] = self.split.value
        if self.gate_score is not None:
            out["gate_score"] = self.gate_score
        if self.n_text_regions is not None:
            out["n_text_regions"] = self.n_text_regions
        if self.needs_reannotation:
            out["needs_reannotation"] = True
        if self.version:
            out["version"] = self.version
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestRecord":
        agg = data.get("aggregated")
        binary = data.get("binary_class")
        split = data.get("split")
        return cls(
            image_id=data["image_id"],
            image_path=data["image_path"],
            category=data["category"],
            aggregated=AggregatedLabel.from_dict(agg) if agg is not None else None,
            binary_class=BinaryClass(binary) if binary is not None else None,
            split=Split(split) if split is not None else None,
            gate_score=data.get("gate_score"),
            n_text_regions=data.get("n_text_regions"),
            needs_reannotation=bool(data.get("needs_reannotation", False)),
            version=int(data.get("version", 0)),
        )


@dataclass
class DatasetManifest:
    """Ordered collection of manifest records with unique image ids."""

    records: List[ManifestRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index: Dict[str, int] = {}
        for i, rec in enumerate(self.records):
            if rec.image_id in self._index:
                raise ManifestError(f"duplicate image_id {rec.image_id!r}")
            self._index[rec.image_id] = i

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def get(self, image_id: str) -> ManifestRecord:
        try:
            return self.records[self._index[image_id]]
        except KeyError:
            raise ManifestError(f"unknown image_id {image_id!r}") from None

    def append(self, record: ManifestRecord) -> None:
        if record.image_id in self._index:
            raise ManifestError(f"duplicate image_id {record.image_id!r}")
        self._index[record.image_id] = len(self.records)
        self.records.append(record)

    def replace_record(self, record: ManifestRecord) -> None:
        """Swap in an updated record for an existing image_id."""
        try:
            i = self._index[record.image_id]
        except KeyError:
            raise ManifestError(f"unknown image_id {record.image_id!r}") from None
        self.records[i] = record

    def copy(self) -> "DatasetManifest":
        return DatasetManifest([rec.copy() for rec in self.records])
