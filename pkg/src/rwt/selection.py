"""Candidate selection: the thresholded region-score gate.

An image goes to annotation only when enough of its score map shows confident
character responses. The gate statistic over an h x w image with region
scores R on the half-resolution grid is

    G = 4 / (h * w) * sum(R[R > T])

with T = 0.8 by default; images pass when G exceeds a small cutoff
(5e-4 by default). The sum runs over the whole half-resolution map, and the
normalization uses the original image area, exactly as stated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .datamodel import DatasetManifest, ManifestError, ScoreMap

ScoreMapSource = Union[Mapping[str, ScoreMap], Callable[[str], ScoreMap]]


@dataclass(frozen=True)
class GateConfig:
    region_threshold: float = 0.8
    gate_cutoff: float = 5e-4
    strict_indicator: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.region_threshold < 1.0:
            raise ValueError("region_threshold must lie in (0, 1)")
        if self.gate_cutoff <= 0.0:
            raise ValueError("gate_cutoff must be > 0")


def region_gate_score(score_map: ScoreMap, cfg: GateConfig = GateConfig()) -> float:
    """Gate statistic of one score map; uses only the region channel.

    Scores at exactly the threshold contribute nothing under the default
    strict indicator.
    """
    region = score_map.region
    # Compare in the map's own dtype so a cell storing e.g. float32(0.8)
    # sits exactly at a 0.8 threshold instead of epsilon above it.
    threshold = np.asarray(cfg.region_threshold, dtype=region.dtype)
    if cfg.strict_indicator:
        kept = region[region > threshold]
    else:
        kept = region[region >= threshold]
    h, w = score_map.image_shape()
    return 4.0 / (h * w) * float(kept.astype(np.float64).sum())


def select_candidates(
    manifest: DatasetManifest,
    maps: ScoreMapSource,
    cfg: GateConfig = GateConfig(),
) -> DatasetManifest:
    """Record gate scores and keep the records whose score clears the cutoff.

    Input order is preserved. Applying the filter twice is a no-op beyond
    the first pass.
    """
    lookup = maps.__getitem__ if isinstance(maps, Mapping) else maps
    selected = DatasetManifest()
    for record in manifest:
        try:
            score_map = lookup(record.image_id)
        except (KeyError, FileNotFoundError):
            raise ManifestError(f"no score map available for image_id {record.image_id!r}") from None
        gate = region_gate_score(score_map, cfg)
        if gate > cfg.gate_cutoff:
            kept = record.copy()
            kept.gate_score = gate
            selected.append(kept)
    return selected
