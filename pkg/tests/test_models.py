"""Architecture assembly, training loop, persistence."""

import numpy as np
import pytest

from pepclf import models, nn, seqdata
from pepclf.embeddings import EmbeddingConfig, EmbeddingMatrix, train_fasttext, train_word2vec
from pepclf.models import (
    Model,
    ModelConfig,
    ModelFileError,
    TrainConfig,
    TrainingDivergedError,
    build_bilstm,
    build_cnn,
    build_lstm,
    build_model,
    load_params,
    model_from_params,
    predict,
    save_params,
    train,
)
from pepclf.seqdata import Dataset, PeptideRecord


def tiny_embedding(dim=8, seed=0, tokens="ACDEFGHIKL"):
    corpus = [list(tokens)] * 3
    return train_word2vec(
        corpus, EmbeddingConfig(dim=dim, epochs=1, seed=seed, mode="skipgram")
    )


def tiny_dataset(n_per_class=8, seed=0):
    """Separable toy data: positives K-heavy, negatives D-heavy."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_per_class):
        pos = "".join(rng.choice(list("KLIK")) for _ in range(12))
        neg = "".join(rng.choice(list("DEGD")) for _ in range(12))
        records.append(PeptideRecord(2 * i + 1, pos, 1))
        records.append(PeptideRecord(2 * i + 2, neg, 0))
    return Dataset("toy", tuple(records))


class TestBuild:
    def test_cnn_head_rows_sum_to_one(self):
        model = build_cnn(ModelConfig("cnn", tiny_embedding(), max_len=10, seed=1))
        ids = np.random.default_rng(0).integers(2, 10, (4, 10))
        out = model.forward(ids, np.ones((4, 10), dtype=bool))
        assert out.shape == (4, 2)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_cnn_parameter_count(self):
        emb = tiny_embedding(dim=8)
        model = build_cnn(ModelConfig("cnn", emb, max_len=10, seed=1,
                                      embedding_trainable=False))
        kernel, dim = 3, 8
        expected = kernel * dim * 64 + 64 + 64 * 2 + 2
        assert model.parameter_count() == expected
        trainable = build_cnn(ModelConfig("cnn", emb, max_len=10, seed=1))
        assert trainable.parameter_count() == expected + len(emb.vocab) * dim

    def test_lstm_parameter_count(self):
        emb = tiny_embedding(dim=8)
        model = build_lstm(ModelConfig("lstm", emb, max_len=10, seed=1,
                                       embedding_trainable=False))
        expected = 4 * (8 * 32 + 32 * 32 + 32) + 32 * 2 + 2
        assert model.parameter_count() == expected

    def test_lstm_all_pad_rows_identical_output(self):
        model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=6, seed=2))
        ids = np.zeros((3, 6), dtype=np.int64)
        ids[0] = np.random.default_rng(0).integers(2, 10, 6)
        mask = np.zeros((3, 6), dtype=bool)
        mask[0] = True
        out = model.forward(ids, mask)
        np.testing.assert_array_equal(out[1], out[2])
        assert not np.allclose(out[0], out[1])

    def test_bilstm_feature_widths(self):
        model = build_bilstm(ModelConfig("bilstm", tiny_embedding(), max_len=6, seed=3))
        ids = np.random.default_rng(1).integers(2, 10, (2, 6))
        mask = np.ones((2, 6), dtype=bool)
        x = model.embedding.forward(ids)
        seq1 = model.layers[0].forward(x, mask=mask)
        assert seq1.shape[2] == 128
        seq2 = model.layers[2].forward(seq1, mask=mask)
        assert seq2.shape[2] == 64
        last = model.layers[4].forward(seq2, mask=mask)
        assert last.shape[1] == 32

    def test_bilstm_output_in_unit_interval(self):
        model = build_bilstm(ModelConfig("bilstm", tiny_embedding(), max_len=6, seed=3))
        ids = np.random.default_rng(1).integers(2, 10, (5, 6))
        out = model.forward(ids, np.ones((5, 6), dtype=bool))
        assert out.shape == (5, 1)
        assert np.all((out > 0) & (out < 1))

    def test_same_seed_same_weights(self):
        emb = tiny_embedding()
        for build in (build_cnn, build_lstm, build_bilstm):
            arch = build.__name__.split("_")[1]
            a = build(ModelConfig(arch, emb, max_len=8, seed=11))
            b = build(ModelConfig(arch, emb, max_len=8, seed=11))
            for pa, pb in zip(a.state_parameters(), b.state_parameters()):
                np.testing.assert_array_equal(pa.value, pb.value)

    def test_max_len_shorter_than_kernel(self):
        with pytest.raises(ValueError, match="kernel"):
            build_cnn(ModelConfig("cnn", tiny_embedding(), max_len=2, seed=0))

    def test_builder_checks_architecture(self):
        with pytest.raises(ValueError):
            build_cnn(ModelConfig("lstm", tiny_embedding(), max_len=8, seed=0))

    def test_head_defaults(self):
        emb = tiny_embedding()
        assert ModelConfig("cnn", emb, max_len=8).class_head == "softmax2"
        assert ModelConfig("bilstm", emb, max_len=8).class_head == "sigmoid1"

    def test_lstm_relu_after_variant(self):
        emb = tiny_embedding()
        model = build_lstm(ModelConfig("lstm", emb, max_len=8, seed=0,
                                       lstm_relu_position="after"))
        assert model.layers[0].cell_activation == "tanh"
        ids = np.random.default_rng(0).integers(2, 10, (2, 8))
        out = model.forward(ids, np.ones((2, 8), dtype=bool))
        np.testing.assert_allclose(out.sum(axis=1), 1.0)


class TestTrain:
    def test_memorizes_small_subset(self):
        ds = tiny_dataset(8)
        emb = tiny_embedding(dim=8)
        model = build_lstm(ModelConfig("lstm", emb, max_len=12, seed=4))
        cfg = TrainConfig(max_epochs=200, batch_size=16, patience=None,
                          validation_fraction=0.0, seed=4)
        _, history = train(model, ds, cfg)
        scores = model.predict_proba(ds.sequences())
        acc = np.mean((scores >= 0.5) == (ds.labels() == 1))
        assert acc == 1.0
        assert history.stopped_epoch <= 200

    def test_patience_stops_on_worsening_validation(self, monkeypatch):
        losses = iter([1.0, 1.1, 1.2, 1.3, 1.4])
        monkeypatch.setattr(models, "_mean_loss",
                            lambda *a, **k: next(losses))
        ds = tiny_dataset(8)
        model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=12, seed=0))
        cfg = TrainConfig(max_epochs=50, batch_size=8, patience=2,
                          validation_fraction=0.2, seed=0)
        _, history = train(model, ds, cfg)
        assert history.stopped_epoch == 3
        assert history.best_epoch == 1

    def test_best_epoch_weights_restored(self, monkeypatch):
        # validation pretends epoch 2 was best; weights must match epoch 2
        losses = iter([1.0, 0.5, 0.9, 0.95, 1.0])
        monkeypatch.setattr(models, "_mean_loss", lambda *a, **k: next(losses))
        ds = tiny_dataset(8)
        model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=12, seed=0))
        cfg = TrainConfig(max_epochs=50, batch_size=8, patience=3,
                          validation_fraction=0.2, seed=0)
        params, history = train(model, ds, cfg)
        assert history.best_epoch == 2
        assert history.stopped_epoch == 5

    def test_divergence_carries_history(self, monkeypatch):
        ds = tiny_dataset(8)
        model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=12, seed=0))
        calls = {"n": 0}
        original = model.loss

        def exploding_loss(pred, targets):
            calls["n"] += 1
            if calls["n"] > 3:
                return np.nan, np.zeros_like(pred)
            return original(pred, targets)

        monkeypatch.setattr(model, "loss", exploding_loss)
        with pytest.raises(TrainingDivergedError) as err:
            train(model, ds, TrainConfig(max_epochs=10, batch_size=8,
                                         patience=None,
                                         validation_fraction=0.0, seed=0))
        assert isinstance(err.value.history, models.TrainHistory)
        assert all(np.isfinite(err.value.history.train_loss))

    def test_single_class_rejected(self):
        records = tuple(PeptideRecord(i + 1, "KKKKK", 1) for i in range(6))
        model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=5, seed=0))
        with pytest.raises(ValueError, match="both classes"):
            train(model, Dataset("x", records), TrainConfig(seed=0))

    def test_dropout_zero_runs_identical(self):
        ds = tiny_dataset(10)
        histories = []
        for _ in range(2):
            model = build_lstm(ModelConfig("lstm", tiny_embedding(), max_len=12, seed=6))
            for layer in model.layers:
                if isinstance(layer, nn.Dropout):
                    layer.rate = 0.0
            cfg = TrainConfig(max_epochs=4, batch_size=8, patience=None,
                              validation_fraction=0.25, seed=6)
            _, history = train(model, ds, cfg)
            histories.append(history)
        assert histories[0].train_loss == histories[1].train_loss
        assert histories[0].val_loss == histories[1].val_loss

    def test_first_epoch_loss_decreases_all_combinations(self):
        ds = tiny_dataset(16, seed=3)
        corpus1 = [seqdata.tokenize(r.sequence, 1) for r in ds.records]
        corpus2 = [seqdata.tokenize(r.sequence, 2) for r in ds.records]
        for mode in ("skipgram", "cbow", "fasttext"):
            if mode == "fasttext":
                matrix, subwords = train_fasttext(
                    corpus2, EmbeddingConfig(dim=12, epochs=2, seed=1,
                                             mode="fasttext", minn=2, maxn=2,
                                             bucket_count=500))
            else:
                matrix = train_word2vec(
                    corpus1, EmbeddingConfig(dim=12, epochs=2, seed=1, mode=mode))
                subwords = None
            for arch in ("cnn", "lstm", "bilstm"):
                model = build_model(ModelConfig(
                    arch, matrix, max_len=11 if mode == "fasttext" else 12,
                    subwords=subwords, embedding_mode=mode, seed=2))
                ids, mask = model.encode_sequences(ds.sequences())
                targets = model.targets_for(ds.labels())
                initial = models._mean_loss(model, ids, mask, targets)
                _, history = train(model, ds, TrainConfig(
                    max_epochs=1, batch_size=8, patience=None,
                    validation_fraction=0.0, seed=2))
                assert history.train_loss[0] < initial, (mode, arch)


class TestPredictAndPersistence:
    def setup_method(self):
        self.ds = tiny_dataset(8)
        corpus = [seqdata.tokenize(r.sequence, 2) for r in self.ds.records]
        self.matrix, self.subwords = train_fasttext(
            corpus, EmbeddingConfig(dim=8, epochs=2, seed=1, mode="fasttext",
                                    minn=2, maxn=2, bucket_count=300))
        self.model = build_bilstm(ModelConfig(
            "bilstm", self.matrix, max_len=11, subwords=self.subwords,
            embedding_mode="fasttext", seed=5))
        self.params, _ = train(self.model, self.ds, TrainConfig(
            max_epochs=2, batch_size=8, patience=None,
            validation_fraction=0.0, seed=5))

    def test_predict_deterministic(self):
        seqs = self.ds.sequences()
        a = self.model.predict_proba(seqs)
        b = self.model.predict_proba(seqs)
        np.testing.assert_array_equal(a, b)

    def test_probabilities_in_range(self):
        probs = self.model.predict_proba(self.ds.sequences())
        assert np.all((probs >= 0) & (probs <= 1))

    def test_batch_equals_single_record_predictions(self):
        seqs = self.ds.sequences()[:6]
        batch = self.model.predict_proba(seqs)
        singles = np.array([self.model.predict_proba([s])[0] for s in seqs])
        np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-14)

    def test_save_load_round_trip_exact(self, tmp_path):
        path = tmp_path / "model.bin"
        save_params(self.params, path)
        loaded = load_params(path)
        rebuilt = model_from_params(loaded)
        seqs = self.ds.sequences()
        np.testing.assert_array_equal(
            self.model.predict_proba(seqs), rebuilt.predict_proba(seqs)
        )

    def test_predict_applies_params(self, tmp_path):
        path = tmp_path / "model.bin"
        save_params(self.params, path)
        loaded = load_params(path)
        fresh = build_bilstm(ModelConfig(
            "bilstm", self.matrix, max_len=11, subwords=self.subwords,
            embedding_mode="fasttext", seed=99))
        probs = predict(fresh, loaded, self.ds.sequences())
        np.testing.assert_allclose(
            probs, self.model.predict_proba(self.ds.sequences()), atol=1e-15
        )

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_params(self.params, path)
        data = path.read_bytes()
        (tmp_path / "cut.bin").write_bytes(data[: len(data) // 2])
        with pytest.raises(ModelFileError, match="truncated"):
            load_params(tmp_path / "cut.bin")

    def test_newer_version_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_params(self.params, path)
        data = bytearray(path.read_bytes())
        data[4] = 99  # format version little-endian low byte
        (tmp_path / "new.bin").write_bytes(bytes(data))
        with pytest.raises(ModelFileError, match="newer"):
            load_params(tmp_path / "new.bin")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "junk.bin").write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(ModelFileError, match="magic"):
            load_params(tmp_path / "junk.bin")

    def test_architecture_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_params(self.params, path)
        loaded = load_params(path)
        other = build_cnn(ModelConfig(
            "cnn", self.matrix, max_len=11, subwords=self.subwords,
            embedding_mode="fasttext", seed=0))
        with pytest.raises(ModelFileError, match="architecture"):
            predict(other, loaded, ["KWKL"])
