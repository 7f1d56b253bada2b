import pytest

from histoloop.classes import CLASSES
from histoloop.errors import CannotSplitError, MergeConflictError
from histoloop.label_store import (
    LabeledDataset,
    LabeledSlide,
    class_histogram,
    load_dataset,
    merge,
    save_dataset,
    split_by_slide,
)


def make_labeled_slide(slide_id, n_per_class=10, finalized=100.0, session="sess1",
                       discarded=0):
    records = {}
    idx = 0
    for cls in CLASSES:
        for _ in range(n_per_class):
            records[(idx // 50, idx % 50)] = cls
            idx += 1
    disc = set()
    for _ in range(discarded):
        disc.add((idx // 50, idx % 50))
        idx += 1
    return LabeledSlide(
        slide_id=slide_id,
        records=records,
        discarded=disc,
        provenance={
            "session_id": session,
            "annotator": "alice",
            "round_timestamps": {"created": finalized - 10, "finalized": finalized},
        },
    )


def dataset_of(n_slides, prefix="s", **kw):
    return LabeledDataset.from_slides(
        [make_labeled_slide(f"{prefix}{i}", **kw) for i in range(n_slides)]
    )


class TestLabeledSlide:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            LabeledSlide("x", {(0, 0): "Stroma"}, {(0, 0)}, {})

    def test_discard_fraction(self):
        slide = make_labeled_slide("x", n_per_class=10, discarded=12)
        assert slide.discard_fraction == pytest.approx(12 / 72)


class TestMerge:
    def test_identity_with_empty(self):
        a = dataset_of(3)
        merged = merge([a, LabeledDataset.empty()])
        assert set(merged.slides) == set(a.slides)
        assert merged.class_counts == a.class_counts

    def test_disjoint_counts_additive(self):
        a = dataset_of(20, prefix="a")
        b = dataset_of(10, prefix="b")
        merged = merge([a, b])
        assert merged.n_slides == 30
        for cls in CLASSES:
            assert merged.class_counts[cls] == a.class_counts[cls] + b.class_counts[cls]
        assert merged.class_counts == class_histogram(merged)

    def test_newer_annotation_wins(self):
        old = make_labeled_slide("dup", finalized=100.0, session="first")
        new = make_labeled_slide("dup", finalized=200.0, session="second")
        merged = merge([LabeledDataset.from_slides([old]),
                        LabeledDataset.from_slides([new])])
        assert merged.slides["dup"].provenance["session_id"] == "second"
        assert len(merged.supersessions) == 1
        assert merged.supersessions[0]["superseded_session"] == "first"

    def test_identical_timestamp_conflict(self):
        a = make_labeled_slide("dup", finalized=100.0, session="a", n_per_class=10)
        b = make_labeled_slide("dup", finalized=100.0, session="b", n_per_class=9)
        with pytest.raises(MergeConflictError):
            merge([LabeledDataset.from_slides([a]), LabeledDataset.from_slides([b])])

    def test_same_annotation_twice_is_fine(self):
        a = make_labeled_slide("dup", finalized=100.0)
        merged = merge([LabeledDataset.from_slides([a]), LabeledDataset.from_slides([a])])
        assert merged.n_slides == 1

    def test_associative_record_sets(self):
        a = dataset_of(3, prefix="a")
        b = dataset_of(2, prefix="b")
        c = LabeledDataset.from_slides([make_labeled_slide("a0", finalized=999.0)])
        left = merge([merge([a, b]), c])
        right = merge([a, merge([b, c])])
        assert set(left.slides) == set(right.slides)
        for sid in left.slides:
            assert (
                left.slides[sid].canonical_json() == right.slides[sid].canonical_json()
            )


class TestSplit:
    def test_paper_fraction_fifteen_five(self):
        train, val = split_by_slide(dataset_of(20), train_fraction=0.75, seed=0)
        assert (train.n_slides, val.n_slides) == (15, 5)

    def test_two_slides_high_fraction_keeps_validation(self):
        train, val = split_by_slide(dataset_of(2), train_fraction=0.99, seed=0)
        assert (train.n_slides, val.n_slides) == (1, 1)

    def test_deterministic(self):
        ds = dataset_of(9)
        a = split_by_slide(ds, 0.6, seed=4)
        b = split_by_slide(ds, 0.6, seed=4)
        assert set(a[0].slides) == set(b[0].slides)

    def test_slide_level_disjoint(self):
        ds = dataset_of(11)
        train, val = split_by_slide(ds, 0.7, seed=1)
        assert not (set(train.slides) & set(val.slides))
        assert set(train.slides) | set(val.slides) == set(ds.slides)

    def test_single_slide_rejected(self):
        with pytest.raises(CannotSplitError):
            split_by_slide(dataset_of(1), 0.5, seed=0)


class TestHistogram:
    def test_empty_all_zero(self):
        counts = class_histogram(LabeledDataset.empty())
        assert counts == {cls: 0 for cls in CLASSES}

    def test_balanced_six_hundred(self):
        ds = LabeledDataset.from_slides([make_labeled_slide("s", n_per_class=100)])
        assert all(v == 100 for v in class_histogram(ds).values())

    def test_recount_matches_stored(self):
        merged = merge([dataset_of(4, prefix="x"), dataset_of(3, prefix="y")])
        assert merged.class_counts == class_histogram(merged)
        assert sum(merged.class_counts.values()) == merged.n_labeled


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        ds = LabeledDataset.from_slides(
            [make_labeled_slide("s1", discarded=3), make_labeled_slide("s2")]
        )
        save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path)
        assert set(loaded.slides) == {"s1", "s2"}
        assert loaded.class_counts == ds.class_counts
        assert loaded.slides["s1"].discarded == ds.slides["s1"].discarded
        for sid in ds.slides:
            assert loaded.slides[sid].canonical_json() == ds.slides[sid].canonical_json()

    def test_manifest_is_jsonl(self, tmp_path):
        import json

        save_dataset(dataset_of(1), tmp_path)
        lines = (tmp_path / "labels.jsonl").read_text().splitlines()
        assert len(lines) == 60
        rec = json.loads(lines[0])
        assert set(rec) == {"slide_id", "row", "col", "class", "session_id"}
