import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwt.annotation import (
    AGREEMENT_BINS,
    AggregationConfig,
    DatasetStats,
    InsufficientVotesError,
    aggregate_manifest,
    aggregate_votes,
    binarize_label,
    dataset_stats,
    filter_votes_by_time,
    format_agreement_report,
    split_dataset,
    time_cut_threshold,
    write_stats_outputs,
)
from rwt.datamodel import (
    BinaryClass,
    DatasetManifest,
    ManifestError,
    Split,
    TextLabel,
)

from conftest import make_manifest, make_record, vote

LABELS = st.sampled_from(list(TextLabel))


class TestTimeFilter:
    def test_lowest_five_of_hundred_removed(self):
        votes = [vote("img", TextLabel.NONE, t=float(i)) for i in range(1, 101)]
        kept = filter_votes_by_time(votes, AggregationConfig(time_percentile_cut=5.0))
        removed = set(range(1, 101)) - {int(v.vote_time_s) for v in kept}
        assert removed == {1, 2, 3, 4, 5}

    def test_all_equal_times_nothing_removed(self):
        votes = [vote("img", TextLabel.NONE, t=7.0, worker=f"w{i}") for i in range(20)]
        assert filter_votes_by_time(votes) == votes

    def test_zero_percentile_is_identity(self):
        votes = [vote("img", TextLabel.NONE, t=float(i + 1)) for i in range(10)]
        cfg = AggregationConfig(time_percentile_cut=0.0)
        assert filter_votes_by_time(votes, cfg) == votes

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            filter_votes_by_time([])

    def test_removed_set_is_order_independent(self):
        rng = np.random.default_rng(11)
        votes = [
            vote("img", TextLabel.NONE, t=float(t), worker=f"w{i}")
            for i, t in enumerate(rng.uniform(1.0, 30.0, size=40))
        ]
        shuffled = list(votes)
        rng.shuffle(shuffled)
        kept_a = {(v.worker_id, v.vote_time_s) for v in filter_votes_by_time(votes)}
        kept_b = {(v.worker_id, v.vote_time_s) for v in filter_votes_by_time(shuffled)}
        assert kept_a == kept_b

    def test_percentile_cut_is_per_batch(self):
        # Batch 0 has a spread; batch 1 is degenerate and must lose nothing
        # even though all its times sit far above batch 0's threshold.
        fast_elsewhere = [
            vote("img", TextLabel.NONE, t=float(i), batch=0) for i in range(1, 21)
        ] + [vote("img", TextLabel.NONE, t=100.0, worker=f"w{i}", batch=1) for i in range(20)]
        kept = filter_votes_by_time(
            fast_elsewhere, AggregationConfig(time_percentile_cut=5.0)
        )
        assert {v.vote_time_s for v in kept if v.batch == 0} == {float(i) for i in range(2, 21)}
        assert sum(1 for v in kept if v.batch == 1) == 20

    def test_never_removes_more_than_percentile(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            n = int(rng.integers(1, 60))
            votes = [
                vote("img", TextLabel.NONE, t=float(t), worker=f"w{i}")
                for i, t in enumerate(rng.uniform(0.5, 20.0, size=n))
            ]
            kept = filter_votes_by_time(votes, AggregationConfig(time_percentile_cut=5.0))
            assert len(votes) - len(kept) <= n * 5 // 100

    def test_threshold_nearest_rank(self):
        assert time_cut_threshold([5.0, 1.0, 3.0], 50.0) == 3.0
        assert time_cut_threshold([4.0], 5.0) == 4.0


class TestAggregateVotes:
    def test_unanimous(self):
        votes = [vote("img", TextLabel.OVERLAYING, worker=f"w{i}") for i in range(5)]
        agg = aggregate_votes(votes)
        assert agg.label is TextLabel.OVERLAYING
        assert (agg.votes_for_winner, agg.total_votes) == (5, 5)
        assert not agg.ambiguous

    def test_two_two_one_is_ambiguous(self):
        labels = [
            TextLabel.OVERLAYING,
            TextLabel.OVERLAYING,
            TextLabel.BOTH,
            TextLabel.NONE,
            TextLabel.NONE,
        ]
        agg = aggregate_votes([vote("img", l, worker=f"w{i}") for i, l in enumerate(labels)])
        assert agg.ambiguous
        assert agg.label is None
        assert agg.votes_for_winner == 0
        assert agg.total_votes == 5

    def test_three_two_majority(self):
        labels = [TextLabel.ORGANIC] * 3 + [TextLabel.NONE] * 2
        agg = aggregate_votes([vote("img", l, worker=f"w{i}") for i, l in enumerate(labels)])
        assert agg.label is TextLabel.ORGANIC
        assert (agg.votes_for_winner, agg.total_votes) == (3, 5)

    def test_too_few_votes(self):
        votes = [vote("img", TextLabel.NONE, worker=f"w{i}") for i in range(2)]
        with pytest.raises(InsufficientVotesError):
            aggregate_votes(votes, AggregationConfig(min_votes=3))

    def test_mixed_image_ids_rejected(self):
        votes = [vote("a", TextLabel.NONE)] * 2 + [vote("b", TextLabel.NONE)]
        with pytest.raises(ValueError, match="multiple images"):
            aggregate_votes(votes)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(LABELS, min_size=3, max_size=9), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, labels, rnd):
        votes = [vote("img", l, worker=f"w{i}") for i, l in enumerate(labels)]
        shuffled = list(votes)
        rnd.shuffle(shuffled)
        assert aggregate_votes(votes) == aggregate_votes(shuffled)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(LABELS, min_size=3, max_size=9))
    def test_winner_matches_counting_oracle(self, labels):
        from collections import Counter

        votes = [vote("img", l, worker=f"w{i}") for i, l in enumerate(labels)]
        agg = aggregate_votes(votes)
        counts = Counter(labels)
        top = counts.most_common()
        strict = len(top) == 1 or top[0][1] > top[1][1]
        if strict:
            assert agg.label is top[0][0]
            assert agg.votes_for_winner == top[0][1]
        else:
            assert agg.ambiguous and agg.label is None

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from([TextLabel.ORGANIC, TextLabel.NONE]), min_size=3, max_size=9))
    def test_binarize_never_positive_without_positive_votes(self, labels):
        votes = [vote("img", l, worker=f"w{i}") for i, l in enumerate(labels)]
        agg = aggregate_votes(votes)
        if agg.resolved:
            assert binarize_label(agg.label) is BinaryClass.NEGATIVE


class TestBinarize:
    @pytest.mark.parametrize(
        "label,expected",
        [
            (TextLabel.OVERLAYING, BinaryClass.POSITIVE),
            (TextLabel.BOTH, BinaryClass.POSITIVE),
            (TextLabel.ORGANIC, BinaryClass.NEGATIVE),
            (TextLabel.NONE, BinaryClass.NEGATIVE),
        ],
    )
    def test_mapping(self, label, expected):
        assert binarize_label(label) is expected

    def test_unresolved_rejected(self):
        with pytest.raises(ValueError):
            binarize_label(None)


class TestAggregateManifest:
    def manifest_and_votes(self):
        records = [
            make_record("clear", TextLabel.OVERLAYING),
            make_record("tied", TextLabel.NONE),
            make_record("sparse", TextLabel.NONE),
        ]
        for rec in records:
            rec.aggregated = None
            rec.binary_class = None
        manifest = DatasetManifest(records)
        votes = (
            [vote("clear", TextLabel.OVERLAYING, worker=f"w{i}") for i in range(5)]
            + [
                vote("tied", l, worker=f"w{i}")
                for i, l in enumerate(
                    [TextLabel.NONE, TextLabel.NONE, TextLabel.BOTH, TextLabel.BOTH, TextLabel.ORGANIC]
                )
            ]
            + [vote("sparse", TextLabel.NONE, worker=f"w{i}") for i in range(2)]
        )
        return manifest, votes

    def test_statuses_after_aggregation(self):
        manifest, votes = self.manifest_and_votes()
        out = aggregate_manifest(manifest, votes)
        assert out.get("clear").status == "resolved"
        assert out.get("clear").binary_class is BinaryClass.POSITIVE
        assert out.get("tied").status == "ambiguous"
        assert out.get("tied").binary_class is None
        assert out.get("sparse").status == "pending"
        assert out.get("sparse").needs_reannotation

    def test_input_manifest_unchanged(self):
        manifest, votes = self.manifest_and_votes()
        aggregate_manifest(manifest, votes)
        assert manifest.get("clear").aggregated is None

    def test_voteless_records_left_pending(self):
        manifest = DatasetManifest([make_record("lonely", TextLabel.NONE)])
        manifest.get("lonely").aggregated = None
        manifest.get("lonely").binary_class = None
        out = aggregate_manifest(manifest, [])
        assert out.get("lonely").status == "pending"
        assert not out.get("lonely").needs_reannotation


class TestSplitDataset:
    def test_exact_paper_counts(self):
        manifest = make_manifest(2418, 2418)
        out = split_dataset(manifest, AggregationConfig(split_ratio=0.75))
        train = sum(1 for r in out if r.split is Split.TRAIN)
        val = sum(1 for r in out if r.split is Split.VAL)
        assert (train, val) == (3627, 1209)

    def test_small_stratified_split(self):
        manifest = make_manifest(2, 2)
        out = split_dataset(manifest, AggregationConfig(split_ratio=0.5))
        for cls in (BinaryClass.POSITIVE, BinaryClass.NEGATIVE):
            members = [r for r in out if r.binary_class is cls]
            assert sum(1 for r in members if r.split is Split.TRAIN) == 1
            assert sum(1 for r in members if r.split is Split.VAL) == 1

    def test_deterministic_for_fixed_seed(self):
        manifest = make_manifest(30, 20)
        cfg = AggregationConfig(split_seed=42)
        a = split_dataset(manifest, cfg)
        b = split_dataset(manifest, cfg)
        assert [(r.image_id, r.split) for r in a] == [(r.image_id, r.split) for r in b]

    def test_different_seeds_differ(self):
        manifest = make_manifest(40, 40)
        a = split_dataset(manifest, AggregationConfig(split_seed=0))
        b = split_dataset(manifest, AggregationConfig(split_seed=1))
        assert [(r.image_id, r.split) for r in a] != [(r.image_id, r.split) for r in b]

    def test_train_fraction_within_one_record(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n_pos = int(rng.integers(1, 40))
            n_neg = int(rng.integers(1, 40))
            ratio = float(rng.uniform(0.2, 0.9))
            out = split_dataset(make_manifest(n_pos, n_neg), AggregationConfig(split_ratio=ratio))
            train = sum(1 for r in out if r.split is Split.TRAIN)
            assert abs(train - (n_pos + n_neg) * ratio) <= 1.0 + 1e-9

    def test_unresolved_records_rejected(self):
        manifest = DatasetManifest([make_record("amb", ambiguous=True)])
        with pytest.raises(ManifestError, match="unresolved"):
            split_dataset(manifest)

    def test_order_preserved(self):
        manifest = make_manifest(5, 5)
        out = split_dataset(manifest)
        assert [r.image_id for r in out] == [r.image_id for r in manifest]


class TestDatasetStats:
    def build_manifest(self):
        records = [
            make_record("u1", TextLabel.OVERLAYING, 5, 5, n_text_regions=2),
            make_record("u2", TextLabel.OVERLAYING, 5, 5, n_text_regions=1),
            make_record("m1", TextLabel.ORGANIC, 3, 5, n_text_regions=1),
            make_record("m2", TextLabel.NONE, 4, 5, n_text_regions=0),
            make_record("a1", ambiguous=True, n_text_regions=0),
        ]
        return DatasetManifest(records)

    def test_exact_bins(self):
        stats = dataset_stats(self.build_manifest())
        assert stats.total_records == 5
        assert stats.category_counts == {"Overlaying": 2, "Organic": 1, "None": 1, "unknown": 1}
        assert stats.text_region_hist == {0: 2, 1: 2, 2: 1}
        assert stats.agreement_counts == {"unanimous": 2, "majority_3_4": 2, "ambiguous": 1}

    def test_fractions_sum_to_one(self):
        stats = dataset_stats(self.build_manifest())
        assert sum(stats.agreement_fractions.values()) == pytest.approx(1.0, abs=1e-9)

    def test_single_record_from_raw_votes(self):
        rec = make_record("solo", TextLabel.BOTH)
        rec.aggregated = None
        rec.binary_class = None
        manifest = DatasetManifest([rec])
        votes = [vote("solo", TextLabel.BOTH, worker=f"w{i}") for i in range(5)]
        stats = dataset_stats(manifest, votes)
        assert stats.agreement_counts["unanimous"] == 1

    def test_totals_conserved_under_concatenation(self):
        left = dataset_stats(self.build_manifest())
        other = DatasetManifest([make_record("x1", TextLabel.BOTH, 4, 5, n_text_regions=3)])
        right = dataset_stats(other)
        both = DatasetManifest(
            [r.copy() for r in self.build_manifest()] + [r.copy() for r in other]
        )
        merged = left.merge(right)
        direct = dataset_stats(both)
        assert merged.total_records == direct.total_records
        assert merged.category_counts == direct.category_counts
        assert merged.text_region_hist == direct.text_region_hist
        assert merged.agreement_counts == direct.agreement_counts

    def test_report_format_matches_paper_layout(self):
        # Fractions shaped like the published 60.2% / 34.2% / 1.3% breakdown.
        stats = DatasetStats(total_records=1000)
        stats.agreement_counts = {"unanimous": 602, "majority_3_4": 342, "ambiguous": 13}
        stats.category_counts = {"misc": 1000}
        report = format_agreement_report(stats)
        lines = report.splitlines()
        assert len(lines) == 3
        assert "602 (62.9%)" in lines[0]
        assert lines[0].index("agreed") < lines[0].index("602")

    def test_report_percentages(self):
        stats = DatasetStats(total_records=1000)
        stats.agreement_counts = {"unanimous": 602, "majority_3_4": 342, "ambiguous": 56}
        report = format_agreement_report(stats)
        assert "(60.2%)" in report
        assert "(34.2%)" in report
        assert "(5.6%)" in report

    def test_write_outputs(self, tmp_path):
        stats = dataset_stats(self.build_manifest())
        written = write_stats_outputs(stats, tmp_path / "stats")
        names = {p.name for p in written}
        assert "category_histogram.csv" in names
        assert "text_regions_histogram.csv" in names
        assert any(p.suffix == ".svg" for p in written)
        for p in written:
            assert p.exists() and p.stat().st_size > 0

    def test_agreement_bins_constant(self):
        assert AGREEMENT_BINS == ("unanimous", "majority_3_4", "ambiguous")
