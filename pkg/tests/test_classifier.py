import numpy as np
import pytest

from histoloop.classes import CLASSES, CLASS_INDEX, NUM_CLASSES
from histoloop.classifier import (
    FeatureTable,
    ModelArtifact,
    PredictionMap,
    TrainConfig,
    build_feature_table,
    evaluate,
    load_model,
    load_prediction_map,
    predict_map,
    predict_probabilities,
    save_model,
    save_prediction_map,
    train,
)
from histoloop.embedder import BaselineTextureBackend, embed
from histoloop.errors import ConfigurationError, DataLeakError
from histoloop.synth import texture_tile

from conftest import make_patch


def texture_table(slide_ids, tiles_per_class=12, size=32, seed=0):
    """Feature rows from procedural textures, one slide_id block at a time."""
    backend = BaselineTextureBackend()
    rng = np.random.default_rng(seed)
    X, y, sids = [], [], []
    for sid in slide_ids:
        for cls in CLASSES:
            for _ in range(tiles_per_class):
                tile = texture_tile(cls, size, rng)
                X.append(embed(backend, make_patch(tile, slide_id=sid)).vector)
                y.append(CLASS_INDEX[cls])
                sids.append(sid)
    return FeatureTable(np.stack(X), np.array(y), sids)


def uniform_model():
    dim = 40
    return ModelArtifact(
        backend="baseline",
        class_order=CLASSES,
        params={
            "W": np.zeros((dim, NUM_CLASSES)),
            "b": np.zeros(NUM_CLASSES),
            "mu": np.zeros(dim),
            "sigma": np.ones(dim),
        },
        report={"train_loss": [], "val_loss": []},
        selected_epoch=1,
    )


class TestTrain:
    def test_separable_textures_high_accuracy(self):
        train_tab = texture_table(["a", "b", "c"], seed=1)
        val_tab = texture_table(["d"], seed=2)
        test_tab = texture_table(["e"], seed=3)
        model = train(train_tab, val_tab, TrainConfig())
        assert evaluate(model, test_tab)["accuracy"] >= 0.95

    def test_selected_epoch_is_argmin_val_loss(self):
        model = train(texture_table(["a"], seed=1), texture_table(["b"], seed=2),
                      TrainConfig(max_epochs=40))
        val = model.report["val_loss"]
        assert model.selected_epoch == int(np.argmin(val)) + 1
        assert model.min_val_loss() == min(val)

    def test_deterministic_given_seed(self):
        tr, va = texture_table(["a"], seed=1), texture_table(["b"], seed=2)
        m1 = train(tr, va, TrainConfig(seed=5, max_epochs=30))
        m2 = train(tr, va, TrainConfig(seed=5, max_epochs=30))
        np.testing.assert_array_equal(m1.params["W"], m2.params["W"])
        np.testing.assert_array_equal(m1.params["b"], m2.params["b"])
        assert m1.report["val_loss"] == m2.report["val_loss"]

    def test_slide_overlap_is_data_leak(self):
        tab = texture_table(["a"], seed=1)
        with pytest.raises(DataLeakError):
            train(tab, tab, TrainConfig())

    def test_missing_class_flagged_not_fatal(self):
        tr = texture_table(["a"], seed=1)
        keep = tr.y != CLASS_INDEX["Adipose"]
        tr_missing = FeatureTable(tr.X[keep], tr.y[keep],
                                  [s for s, k in zip(tr.slide_ids, keep) if k])
        model = train(tr_missing, texture_table(["b"], seed=2), TrainConfig(max_epochs=20))
        assert model.report["degenerate_classes"] == ["Adipose"]

    def test_gd_optimizer_supported(self):
        model = train(texture_table(["a"], seed=1), texture_table(["b"], seed=2),
                      TrainConfig(optimizer="gd", learning_rate=0.5, max_epochs=50))
        assert model.selected_epoch >= 1

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(optimizer="sgd-metal")
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_label_permutation_equivariance(self):
        tr, va = texture_table(["a"], seed=4), texture_table(["b"], seed=5)
        perm = np.array([3, 0, 5, 1, 4, 2])
        tr_p = FeatureTable(tr.X, perm[tr.y], tr.slide_ids)
        va_p = FeatureTable(va.X, perm[va.y], va.slide_ids)
        cfg = TrainConfig(max_epochs=25)
        base = train(tr, va, cfg)
        permuted = train(tr_p, va_p, cfg)
        probs = predict_probabilities(base, va.X)
        probs_p = predict_probabilities(permuted, va.X)
        np.testing.assert_allclose(probs_p, probs[:, np.argsort(perm)], atol=1e-12)


class TestPredict:
    def test_uniform_tie_takes_class_zero(self):
        pmap = predict_map(
            uniform_model(),
            [e for e in _fake_embeddings(3)],
            rows=1,
            cols=3,
        )
        for addr in pmap.probabilities:
            np.testing.assert_allclose(pmap.probabilities[addr], np.full(6, 1 / 6))
            assert pmap.argmax_class(addr) == "Epithelium"

    def test_trained_class_confident(self):
        tr = texture_table(["a", "b"], seed=1)
        va = texture_table(["c"], seed=2)
        model = train(tr, va, TrainConfig())
        probs = predict_probabilities(model, va.X)
        hits = probs[np.arange(len(va.y)), va.y]
        assert np.median(hits) > 0.9

    def test_simplex_property_sweep(self):
        model = uniform_model()
        rng = np.random.default_rng(0)
        X = rng.normal(size=(10_000, 40))
        probs = predict_probabilities(model, X)
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_feature_dim_mismatch(self):
        with pytest.raises(ConfigurationError):
            predict_probabilities(uniform_model(), np.zeros((4, 13)))


def _fake_embeddings(n, slide_id="s"):
    from histoloop.embedder import Embedding

    return [Embedding(slide_id, 0, c, np.zeros(40)) for c in range(n)]


class TestEvaluate:
    def test_perfect_predictions_identity_confusion(self):
        tr = texture_table(["a", "b"], seed=1)
        va = texture_table(["c"], seed=2)
        model = train(tr, va, TrainConfig())
        res = evaluate(model, va)
        if res["accuracy"] == 1.0:
            off_diag = res["confusion"] - np.diag(np.diag(res["confusion"]))
            assert off_diag.sum() == 0
        assert res["confusion"].sum() == va.n

    def test_single_class_predictor_on_balanced_set(self):
        # model biased to always predict class 0
        model = uniform_model()
        model.params["b"] = np.array([100.0, 0, 0, 0, 0, 0])
        tab = FeatureTable(
            np.zeros((60, 40)), np.repeat(np.arange(6), 10), ["s"] * 60
        )
        res = evaluate(model, tab)
        assert res["accuracy"] == pytest.approx(1 / 6)
        assert res["per_class_recall"]["Epithelium"] == 1.0
        assert res["per_class_recall"]["Stroma"] == 0.0

    def test_confusion_matches_bruteforce_tally(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(100, 40))
        y = rng.integers(0, 6, size=100)
        model = uniform_model()
        model.params["W"] = rng.normal(size=(40, 6))
        res = evaluate(model, FeatureTable(X, y, ["s"] * 100))
        predicted = predict_probabilities(model, X).argmax(axis=1)
        expected = np.zeros((6, 6), dtype=int)
        for t, p in zip(y, predicted):
            expected[t, p] += 1
        np.testing.assert_array_equal(res["confusion"], expected)
        assert all(
            res["confusion"][i].sum() == (y == i).sum() for i in range(6)
        )


class TestArtifactIO:
    def test_checkpoint_reload_reproduces_val_loss(self, tmp_path):
        tr, va = texture_table(["a"], seed=1), texture_table(["b"], seed=2)
        model = train(tr, va, TrainConfig(max_epochs=30))
        path = tmp_path / "model.zip"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.class_order == CLASSES
        from histoloop.classifier import _cross_entropy

        probs = predict_probabilities(loaded, va.X)
        assert _cross_entropy(probs, va.y) == pytest.approx(
            loaded.min_val_loss(), abs=1e-6
        )

    def test_prediction_map_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        pmap = PredictionMap(slide_id="s", rows=2, cols=3)
        for addr in [(0, 0), (0, 2), (1, 1)]:
            raw = rng.random(6)
            pmap.probabilities[addr] = raw / raw.sum()
        path = tmp_path / "s.predictions.jsonl"
        save_prediction_map(pmap, path)
        loaded = load_prediction_map(path)
        assert loaded.slide_id == "s" and (loaded.rows, loaded.cols) == (2, 3)
        assert set(loaded.probabilities) == set(pmap.probabilities)
        for addr in pmap.probabilities:
            np.testing.assert_allclose(loaded.probabilities[addr],
                                       pmap.probabilities[addr])
            assert loaded.argmax_class(addr) == pmap.argmax_class(addr)


class TestFeatureTableBuild:
    def test_join_with_embedding_store(self):
        from histoloop.embedder import Embedding
        from histoloop.label_store import LabeledDataset, LabeledSlide

        slide = LabeledSlide(
            "s1",
            {(0, 0): "Stroma", (0, 1): "Adipose"},
            set(),
            {"session_id": "x", "annotator": "a",
             "round_timestamps": {"created": 0, "finalized": 1}},
        )
        embs = {"s1": [Embedding("s1", 0, 0, np.zeros(40)),
                       Embedding("s1", 0, 1, np.ones(40))]}
        tab = build_feature_table(LabeledDataset.from_slides([slide]), embs)
        assert tab.n == 2
        assert list(tab.y) == [CLASS_INDEX["Stroma"], CLASS_INDEX["Adipose"]]

    def test_missing_embedding_rejected(self):
        from histoloop.label_store import LabeledDataset, LabeledSlide

        slide = LabeledSlide(
            "s1", {(5, 5): "Stroma"}, set(),
            {"session_id": "x", "annotator": "a",
             "round_timestamps": {"created": 0, "finalized": 1}},
        )
        with pytest.raises(ValueError):
            build_feature_table(LabeledDataset.from_slides([slide]), {"s1": []})
