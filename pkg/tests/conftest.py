import numpy as np
import pytest

from rwt.datamodel import (
    AggregatedLabel,
    BinaryClass,
    DatasetManifest,
    LabelSource,
    ManifestRecord,
    ScoreMap,
    TextLabel,
    VoteRecord,
)


@pytest.fixture
def gate_fixture_map() -> ScoreMap:
    """4x4 map (8x8 image) with region scores {0.9, 0.85}, rest zero."""
    data = np.zeros((4, 4, 2), dtype=np.float32)
    data[0, 0, 0] = 0.9
    data[1, 2, 0] = 0.85
    return ScoreMap(data)


def make_record(
    image_id: str,
    label: TextLabel = TextLabel.OVERLAYING,
    votes_for_winner: int = 5,
    total_votes: int = 5,
    ambiguous: bool = False,
    **kwargs,
) -> ManifestRecord:
    aggregated = AggregatedLabel(
        image_id=image_id,
        label=None if ambiguous else label,
        votes_for_winner=0 if ambiguous else votes_for_winner,
        total_votes=total_votes,
        ambiguous=ambiguous,
        source=LabelSource.VOTE,
    )
    binary = None
    if not ambiguous:
        binary = (
            BinaryClass.POSITIVE
            if label in (TextLabel.OVERLAYING, TextLabel.BOTH)
            else BinaryClass.NEGATIVE
        )
    return ManifestRecord(
        image_id=image_id,
        image_path=f"images/{image_id}.png",
        category=label.value if not ambiguous else "unknown",
        aggregated=aggregated,
        binary_class=binary,
        **kwargs,
    )


def make_manifest(n_pos: int, n_neg: int) -> DatasetManifest:
    records = []
    for i in range(n_pos):
        records.append(make_record(f"pos_{i:05d}", TextLabel.OVERLAYING))
    for i in range(n_neg):
        records.append(make_record(f"neg_{i:05d}", TextLabel.ORGANIC))
    return DatasetManifest(records)


def vote(image_id: str, label: TextLabel, t: float = 10.0, worker: str = "w1", batch: int = 0):
    return VoteRecord(
        worker_id=worker, image_id=image_id, label=label, vote_time_s=t, batch=batch
    )
