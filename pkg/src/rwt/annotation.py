"""Vote curation: timing outlier rejection, majority aggregation, label
binarization, stratified splitting, and dataset statistics."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .datamodel import (
    AggregatedLabel,
    BinaryClass,
    DatasetManifest,
    LabelSource,
    ManifestError,
    Split,
    TextLabel,
    VoteRecord,
)


class InsufficientVotesError(ValueError):
    """Raised when an image has too few counted votes to aggregate."""


@dataclass(frozen=True)
class AggregationConfig:
    time_percentile_cut: float = 5.0
    min_votes: int = 3
    expected_votes: int = 5
    split_ratio: float = 0.75
    split_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.time_percentile_cut < 50.0:
            raise ValueError("time_percentile_cut must lie in [0, 50)")
        if not 1 <= self.min_votes <= self.expected_votes:
            raise ValueError("need 1 <= min_votes <= expected_votes")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")


def time_cut_threshold(times: Sequence[float], percentile: float) -> float:
    """Value below which votes count as timing outliers.

    Nearest-rank convention: with k = floor(n * p / 100), the threshold is
    the (k+1)-th smallest time, so at most k votes ever fall strictly below
    it and a degenerate all-equal distribution loses nothing.
    """
    if not times:
        raise ValueError("cannot take a percentile of zero vote times")
    ordered = sorted(times)
    k = math.floor(len(ordered) * percentile / 100.0)
    return ordered[k]


def filter_votes_by_time(
    votes: Sequence[VoteRecord], cfg: AggregationConfig = AggregationConfig()
) -> List[VoteRecord]:
    """Drop votes cast suspiciously fast.

    The percentile is taken per annotation batch, and the cut is value
    based, so the removed set does not depend on input order.
    """
    if not votes:
        raise ValueError("filter_votes_by_time needs a non-empty vote sequence")
    if cfg.time_percentile_cut == 0.0:
        return list(votes)
    by_batch: Dict[int, List[float]] = defaultdict(list)
    for v in votes:
        by_batch[v.batch].append(v.vote_time_s)
    thresholds = {
        batch: time_cut_threshold(times, cfg.time_percentile_cut)
        for batch, times in by_batch.items()
    }
    return [v for v in votes if v.vote_time_s >= thresholds[v.batch]]


def aggregate_votes(
    votes_for_image: Sequence[VoteRecord], cfg: AggregationConfig = AggregationConfig()
) -> AggregatedLabel:
    """Majority-vote one image's label.

    The winner needs strictly more votes than every other label; otherwise
    the example is ambiguous and stays unresolved for manual review.
    """
    if not votes_for_image:
        raise InsufficientVotesError("no votes for image")
    image_ids = {v.image_id for v in votes_for_image}
    if len(image_ids) != 1:
        raise ValueError(f"votes span multiple images: {sorted(image_ids)}")
    image_id = votes_for_image[0].image_id
    if len(votes_for_image) < cfg.min_votes:
        raise InsufficientVotesError(
            f"image {image_id!r} has {len(votes_for_image)} votes, need {cfg.min_votes}"
        )
    counts = Counter(v.label for v in votes_for_image)
    total = sum(counts.values())
    top_label, top_count = counts.most_common(1)[0]
    strict_winner = all(c < top_count for lbl, c in counts.items() if lbl is not top_label)
    if strict_winner:
        return AggregatedLabel(
            image_id=image_id,
            label=top_label,
            votes_for_winner=top_count,
            total_votes=total,
            ambiguous=False,
        )
    return AggregatedLabel(
        image_id=image_id,
        label=None,
        votes_for_winner=0,
        total_votes=total,
        ambiguous=True,
    )


def binarize_label(label: TextLabel) -> BinaryClass:
    """Overlay-bearing classes are positive; purely organic or empty images
    are negative."""
    if label is None or not isinstance(label, TextLabel):
        raise ValueError(f"cannot binarize unresolved label {label!r}")
    if label in (TextLabel.OVERLAYING, TextLabel.BOTH):
        return BinaryClass.POSITIVE
    return BinaryClass.NEGATIVE


def aggregate_manifest(
    manifest: DatasetManifest,
    votes: Sequence[VoteRecord],
    cfg: AggregationConfig = AggregationConfig(),
) -> DatasetManifest:
    """Filter votes, aggregate per image, and attach labels to the manifest.

    Images whose counted votes fall below ``min_votes`` are flagged for
    re-annotation instead of receiving a label.
    """
    kept = filter_votes_by_time(votes, cfg) if votes else []
    by_image: Dict[str, List[VoteRecord]] = defaultdict(list)
    for v in kept:
        by_image[v.image_id].append(v)

    out = DatasetManifest()
    for record in manifest:
        rec = record.copy()
        image_votes = by_image.get(rec.image_id)
        if image_votes:
            try:
                agg = aggregate_votes(image_votes, cfg)
            except InsufficientVotesError:
                rec.needs_reannotation = True
                rec.aggregated = None
                rec.binary_class = None
            else:
                rec.aggregated = agg
                rec.needs_reannotation = False
                rec.binary_class = binarize_label(agg.label) if agg.resolved else None
        out.append(rec)
    return out


def split_dataset(
    manifest: DatasetManifest, cfg: AggregationConfig = AggregationConfig()
) -> DatasetManifest:
    """Assign train/val tags, stratified by binary class.

    The train side gets round(n * split_ratio) records overall, allocated to
    the strata by largest remainder; assignment is a seeded shuffle, so a
    fixed seed reproduces the split exactly.
    """
    unresolved = [r.image_id for r in manifest if r.binary_class is None]
    if unresolved:
        raise ManifestError(
            f"cannot split with unresolved records, e.g. {unresolved[0]!r} "
            f"({len(unresolved)} total)"
        )
    n = len(manifest)
    total_train = int(math.floor(n * cfg.split_ratio + 0.5))

    strata: Dict[BinaryClass, List[str]] = defaultdict(list)
    for r in manifest:
        strata[r.binary_class].append(r.image_id)
    ordered = sorted(strata.items(), key=lambda kv: kv[0].value)

    quotas: Dict[BinaryClass, int] = {}
    remainders = []
    assigned = 0
    for cls, ids in ordered:
        exact = len(ids) * cfg.split_ratio
        base = int(math.floor(exact))
        quotas[cls] = base
        assigned += base
        remainders.append((exact - base, cls))
    remainders.sort(key=lambda rc: (-rc[0], rc[1].value))
    for _, cls in remainders[: total_train - assigned]:
        quotas[cls] += 1

    rng = np.random.default_rng(cfg.split_seed)
    train_ids = set()
    for cls, ids in ordered:
        ids = list(ids)
        rng.shuffle(ids)
        train_ids.update(ids[: quotas[cls]])

    out = DatasetManifest()
    for record in manifest:
        rec = record.copy()
        rec.split = Split.TRAIN if rec.image_id in train_ids else Split.VAL
        out.append(rec)
    return out


@dataclass
class DatasetStats:
    """Aggregate counts: categories, text-region histogram, vote agreement."""

    total_records: int
    category_counts: Dict[str, int] = field(default_factory=dict)
    text_region_hist: Dict[int, int] = field(default_factory=dict)
    agreement_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def total_aggregated(self) -> int:
        return sum(self.agreement_counts.values())

    @property
    def agreement_fractions(self) -> Dict[str, float]:
        total = self.total_aggregated
        if total == 0:
            return {k: 0.0 for k in self.agreement_counts}
        return {k: v / total for k, v in self.agreement_counts.items()}

    def merge(self, other: "DatasetStats") -> "DatasetStats":
        merged = DatasetStats(self.total_records + other.total_records)
        for src in (self, other):
            for cat, c in src.category_counts.items():
                merged.category_counts[cat] = merged.category_counts.get(cat, 0) + c
            for k, c in src.text_region_hist.items():
                merged.text_region_hist[k] = merged.text_region_hist.get(k, 0) + c
            for k, c in src.agreement_counts.items():
                merged.agreement_counts[k] = merged.agreement_counts.get(k, 0) + c
        return merged


AGREEMENT_BINS = ("unanimous", "majority_3_4", "ambiguous")


def _agreement_bin(agg: AggregatedLabel) -> str:
    # votes_for_winner stays 0 whenever no strict plurality existed, also
    # after a manual relabel, so it is the stable no-winner marker.
    if agg.votes_for_winner == 0:
        return "ambiguous"
    if agg.votes_for_winner == agg.total_votes:
        return "unanimous"
    return "majority_3_4"


def dataset_stats(
    manifest: DatasetManifest, votes: Optional[Sequence[VoteRecord]] = None
) -> DatasetStats:
    """Compute dataset statistics from an aggregated manifest.

    When a record carries no aggregated label yet but raw votes are
    supplied, its agreement bin is computed from those votes directly.
    """
    by_image: Dict[str, List[VoteRecord]] = defaultdict(list)
    for v in votes or []:
        by_image[v.image_id].append(v)

    stats = DatasetStats(total_records=len(manifest))
    stats.agreement_counts = {k: 0 for k in AGREEMENT_BINS}
    for record in manifest:
        stats.category_counts[record.category] = stats.category_counts.get(record.category, 0) + 1
        if record.n_text_regions is not None:
            k = record.n_text_regions
            stats.text_region_hist[k] = stats.text_region_hist.get(k, 0) + 1
        agg = record.aggregated
        if agg is None and by_image.get(record.image_id):
            try:
                agg = aggregate_votes(by_image[record.image_id], AggregationConfig(min_votes=1))
            except ValueError:
                agg = None
        if agg is not None:
            stats.agreement_counts[_agreement_bin(agg)] += 1
    return stats


def format_agreement_report(stats: DatasetStats) -> str:
    """Human-readable agreement breakdown, one line per bin."""
    lines = []
    fractions = stats.agreement_fractions
    labels = {
        "unanimous": "all annotators agreed",
        "majority_3_4": "strict majority short of unanimity",
        "ambiguous": "no clear voting majority",
    }
    for key in AGREEMENT_BINS:
        count = stats.agreement_counts.get(key, 0)
        frac = fractions.get(key, 0.0)
        lines.append(f"{labels[key]}: {count} ({100.0 * frac:.1f}%)")
    return "\n".join(lines)


def write_stats_outputs(stats: DatasetStats, out_dir: Union[str, Path]) -> List[Path]:
    """Emit CSV histograms and SVG plots for a stats run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    cat_csv = out_dir / "category_histogram.csv"
    with cat_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "count"])
        for cat, count in sorted(stats.category_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            writer.writerow([cat, count])
    written.append(cat_csv)

    reg_csv = out_dir / "text_regions_histogram.csv"
    with reg_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_text_regions", "count"])
        for k in sorted(stats.text_region_hist):
            writer.writerow([k, stats.text_region_hist[k]])
    written.append(reg_csv)

    agr_csv = out_dir / "agreement.csv"
    with agr_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agreement", "count", "fraction"])
        fractions = stats.agreement_fractions
        for key in AGREEMENT_BINS:
            writer.writerow([key, stats.agreement_counts.get(key, 0), fractions.get(key, 0.0)])
    written.append(agr_csv)

    if stats.category_counts:
        fig, ax = plt.subplots(figsize=(8, 4))
        cats, counts = zip(*sorted(stats.category_counts.items(), key=lambda kv: (-kv[1], kv[0])))
        ax.bar(range(len(cats)), counts)
        ax.set_xticks(range(len(cats)))
        ax.set_xticklabels(cats, rotation=90, fontsize=6)
        ax.set_ylabel("images")
        ax.set_title("Images per category")
        fig.tight_layout()
        path = out_dir / "category_histogram.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    if stats.text_region_hist:
        fig, ax = plt.subplots(figsize=(5, 4))
        ks = sorted(stats.text_region_hist)
        ax.plot([max(k, 1) for k in ks], [stats.text_region_hist[k] for k in ks], marker="o")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("text regions per image")
        ax.set_ylabel("images")
        ax.set_title("Text regions per image (log-log)")
        fig.tight_layout()
        path = out_dir / "text_regions_histogram.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    return written
