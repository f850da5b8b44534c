import numpy as np
import pytest

from rwt.datamodel import (
    AggregatedLabel,
    BinaryClass,
    DatasetManifest,
    LabelSource,
    ManifestError,
    ManifestRecord,
    ScoreMap,
    Split,
    TensorFormatError,
    TextLabel,
    VoteRecord,
    check_image,
)

from conftest import make_record


class TestTextLabel:
    def test_parse_canonical_names(self):
        assert TextLabel.parse("Overlaying") is TextLabel.OVERLAYING
        assert TextLabel.parse("Organic") is TextLabel.ORGANIC
        assert TextLabel.parse("Both") is TextLabel.BOTH
        assert TextLabel.parse("None") is TextLabel.NONE

    def test_parse_scene_synonym(self):
        assert TextLabel.parse("Scene") is TextLabel.ORGANIC

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown text label"):
            TextLabel.parse("Watermark")


class TestScoreMap:
    def test_channels_and_shape(self):
        data = np.random.default_rng(0).uniform(size=(3, 5, 2)).astype(np.float32)
        sm = ScoreMap(data)
        assert sm.height == 3 and sm.width == 5
        assert sm.image_shape() == (6, 10)
        np.testing.assert_array_equal(sm.region, data[:, :, 0])
        np.testing.assert_array_equal(sm.affinity, data[:, :, 1])

    def test_from_channels_stacks(self):
        region = np.full((2, 2), 0.25, dtype=np.float32)
        affinity = np.full((2, 2), 0.75, dtype=np.float32)
        sm = ScoreMap.from_channels(region, affinity)
        assert sm.data.shape == (2, 2, 2)
        assert float(sm.region[0, 0]) == 0.25
        assert float(sm.affinity[0, 0]) == 0.75

    def test_from_channels_shape_mismatch(self):
        with pytest.raises(TensorFormatError):
            ScoreMap.from_channels(np.zeros((2, 2)), np.zeros((2, 3)))

    @pytest.mark.parametrize("shape", [(4, 4), (4, 4, 3), (0, 4, 2)])
    def test_rejects_bad_shapes(self, shape):
        with pytest.raises(TensorFormatError):
            ScoreMap(np.zeros(shape, dtype=np.float32))

    def test_rejects_integer_dtype(self):
        with pytest.raises(TensorFormatError):
            ScoreMap(np.zeros((2, 2, 2), dtype=np.int32))

    @pytest.mark.parametrize("bad", [-0.01, 1.01])
    def test_rejects_out_of_range(self, bad):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = bad
        with pytest.raises(ValueError):
            ScoreMap(data)


class TestCheckImage:
    def test_accepts_and_casts(self):
        img = np.zeros((32, 40, 3), dtype=np.float64)
        out = check_image(img)
        assert out.dtype == np.float32
        assert out.flags["C_CONTIGUOUS"]

    def test_rejects_small(self):
        with pytest.raises(ValueError, match=">= 32"):
            check_image(np.zeros((16, 40, 3), dtype=np.float32))

    def test_rejects_odd_when_even_required(self):
        with pytest.raises(ValueError, match="even"):
            check_image(np.zeros((33, 40, 3), dtype=np.float32), require_even=True)

    def test_rejects_uint8(self):
        with pytest.raises(ValueError, match="floating"):
            check_image(np.zeros((32, 32, 3), dtype=np.uint8))

    def test_rejects_out_of_range(self):
        img = np.zeros((32, 32, 3), dtype=np.float32)
        img[0, 0, 0] = 2.0
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            check_image(img)


class TestVoteRecord:
    def test_requires_positive_time(self):
        with pytest.raises(ValueError):
            VoteRecord("w1", "img", TextLabel.NONE, vote_time_s=0.0)


class TestAggregatedLabel:
    def test_ambiguous_vote_cannot_carry_label(self):
        with pytest.raises(ValueError):
            AggregatedLabel("img", TextLabel.BOTH, 2, 5, ambiguous=True)

    def test_manual_review_may_resolve_ambiguous_tallies(self):
        agg = AggregatedLabel(
            "img", TextLabel.BOTH, 0, 5, ambiguous=False, source=LabelSource.MANUAL_REVIEW
        )
        assert agg.resolved

    def test_round_trip_omits_null_label(self):
        agg = AggregatedLabel("img", None, 0, 5, ambiguous=True)
        d = agg.to_dict()
        assert "label" not in d
        assert AggregatedLabel.from_dict(d) == agg

    def test_round_trip_with_label(self):
        agg = AggregatedLabel("img", TextLabel.ORGANIC, 4, 5, ambiguous=False)
        assert AggregatedLabel.from_dict(agg.to_dict()) == agg


class TestManifestRecord:
    def test_status_pending_without_aggregation(self):
        rec = ManifestRecord("a", "a.png", "misc")
        assert rec.status == "pending"

    def test_status_ambiguous(self):
        rec = make_record("a", ambiguous=True)
        assert rec.status == "ambiguous"

    def test_status_resolved(self):
        assert make_record("a").status == "resolved"

    def test_needs_reannotation_forces_pending(self):
        rec = make_record("a", needs_reannotation=True)
        assert rec.status == "pending"

    def test_binary_class_requires_resolved_label(self):
        with pytest.raises(ManifestError):
            ManifestRecord("a", "a.png", "misc", binary_class=BinaryClass.POSITIVE)

    def test_round_trip_full(self):
        rec = make_record(
            "a", TextLabel.BOTH, split=Split.VAL, gate_score=0.25, n_text_regions=2, version=3
        )
        back = ManifestRecord.from_dict(rec.to_dict())
        assert back == rec

    def test_round_trip_minimal(self):
        rec = ManifestRecord("a", "a.png", "misc")
        d = rec.to_dict()
        assert set(d) == {"image_id", "image_path", "category"}
        assert ManifestRecord.from_dict(d) == rec

    def test_version_serialized_only_when_nonzero(self):
        assert "version" not in make_record("a").to_dict()
        assert make_record("a", version=2).to_dict()["version"] == 2

    def test_copy_is_independent(self):
        rec = make_record("a")
        dup = rec.copy()
        dup.needs_reannotation = True
        assert not rec.needs_reannotation


class TestDatasetManifest:
    def test_lookup_and_contains(self):
        m = DatasetManifest([make_record("a"), make_record("b")])
        assert len(m) == 2
        assert "a" in m and "z" not in m
        assert m.get("b").image_id == "b"

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ManifestError, match="duplicate"):
            DatasetManifest([make_record("a"), make_record("a")])

    def test_append_rejects_duplicate(self):
        m = DatasetManifest([make_record("a")])
        with pytest.raises(ManifestError):
            m.append(make_record("a"))

    def test_get_unknown_id(self):
        with pytest.raises(ManifestError, match="unknown image_id"):
            DatasetManifest().get("nope")

    def test_replace_record(self):
        m = DatasetManifest([make_record("a")])
        updated = make_record("a", version=1)
        m.replace_record(updated)
        assert m.get("a").version == 1

    def test_replace_unknown_id(self):
        with pytest.raises(ManifestError):
            DatasetManifest().replace_record(make_record("a"))

    def test_copy_deep_enough_for_record_mutation(self):
        m = DatasetManifest([make_record("a")])
        dup = m.copy()
        dup.get("a").version = 9
        assert m.get("a").version == 0
