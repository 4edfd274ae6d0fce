"""Embedding training: windows, negative sampling, subwords, persistence."""

import numpy as np
import pytest

from pepclf import embeddings as emb
from pepclf import seqdata
from pepclf.embeddings import (
    EmbeddingConfig,
    build_negative_table,
    embedding_for,
    extract_subwords,
    fnv1a_32,
    generate_pairs,
    load_embedding,
    materialize_matrix,
    pair_loss_and_grads,
    parse_embedding_text,
    save_embedding,
    subword_strings,
    train_fasttext,
    train_word2vec,
)


def fnv1a_oracle(data: bytes) -> int:
    """Straight transcription of the 32-bit FNV-1a definition."""
    h = 0x811C9DC5
    for byte in data:
        h = ((h ^ byte) * 0x01000193) % 2**32
    return h


class TestHashing:
    def test_against_independent_oracle(self):
        rng = np.random.default_rng(0)
        letters = "ACDEFGHIKLMNPQRSTVWY<>"
        for _ in range(200):
            n = rng.integers(1, 12)
            s = "".join(letters[i] for i in rng.integers(0, len(letters), n))
            assert fnv1a_32(s) == fnv1a_oracle(s.encode("utf-8"))

    def test_offset_basis(self):
        assert fnv1a_32("") == 2166136261


class TestSubwords:
    def test_two_letter_token(self):
        assert subword_strings("KW", 2, 3) == ["<K", "KW", "W>", "<KW", "KW>", "<KW>"]

    def test_single_letter_token(self):
        # "<K>" has length 3: its 2-grams, its single 3-gram (the whole
        # wrapped token), deduplicated
        assert subword_strings("K", 2, 3) == ["<K", "K>", "<K>"]

    def test_deterministic_ids(self):
        a = extract_subwords("KWK", 2, 4, 1000)
        b = extract_subwords("KWK", 2, 4, 1000)
        assert a == b

    def test_ids_in_bucket_range(self):
        ids = extract_subwords("KWKLFF", 2, 4, 37)
        assert all(0 <= i < 37 for i in ids)

    def test_empty_token_rejected(self):
        with pytest.raises(ValueError):
            subword_strings("", 2, 3)


class TestGeneratePairs:
    def test_fixed_radius_window_one(self):
        pairs = generate_pairs(["A", "B", "C"], 1, "skipgram",
                               np.random.default_rng(0))
        assert pairs == [("A", "B"), ("B", "A"), ("B", "C"), ("C", "B")]

    def test_single_token_no_pairs(self):
        assert generate_pairs(["A"], 3, "skipgram", np.random.default_rng(0)) == []
        assert generate_pairs(["A"], 3, "cbow", np.random.default_rng(0)) == []

    def test_multiset_matches_bruteforce_enumeration(self):
        tokens = ["A", "B", "C", "D"]
        window = 2
        pairs = generate_pairs(tokens, window, "skipgram",
                               np.random.default_rng(99))
        # oracle: replay the same radius draws, enumerate windows by hand
        rng = np.random.default_rng(99)
        expected = []
        for i in range(len(tokens)):
            radius = int(rng.integers(1, window + 1))
            for j in range(max(0, i - radius), min(len(tokens), i + radius + 1)):
                if j != i:
                    expected.append((tokens[i], tokens[j]))
        assert sorted(pairs) == sorted(expected)

    def test_cbow_instances(self):
        pairs = generate_pairs(["A", "B", "C"], 1, "cbow",
                               np.random.default_rng(0))
        assert all(center in "ABC" and isinstance(ctx, tuple)
                   for ctx, center in pairs)
        assert len(pairs) == 3

    def test_empty_tokens_rejected(self):
        with pytest.raises(ValueError):
            generate_pairs([], 2, "skipgram", np.random.default_rng(0))


class TestNegativeTable:
    def test_symmetric_frequencies(self):
        table = build_negative_table([0, 0, 1, 1])
        assert table.probability(2) == pytest.approx(0.5)
        assert table.probability(3) == pytest.approx(0.5)

    def test_power_formula(self):
        table = build_negative_table([0, 0, 16, 1])
        assert table.probability(2) == pytest.approx(8.0 / 9.0, abs=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(5)
        table = build_negative_table(rng.integers(0, 50, size=30))
        assert abs(table.probs.sum() - 1.0) < 1e-12

    def test_monte_carlo_matches_table(self):
        freqs = [0, 0, 40, 10, 5, 1]
        table = build_negative_table(freqs)
        rng = np.random.default_rng(7)
        draws = table.sample(rng, 10**6)
        for token_id in (2, 3, 4, 5):
            empirical = np.mean(draws == token_id)
            assert abs(empirical - table.probability(token_id)) < 0.01

    def test_single_token_error(self):
        with pytest.raises(ValueError, match="at least 2"):
            build_negative_table([0, 0, 7])


class TestPairLoss:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            v = rng.standard_normal(6)
            u_pos = rng.standard_normal(6)
            u_negs = rng.standard_normal((4, 6))
            _, dv, du_pos, du_negs = pair_loss_and_grads(v, u_pos, u_negs)
            eps = 1e-6
            worst = 0.0
            for arr, grad in ((v, dv), (u_pos, du_pos), (u_negs, du_negs)):
                flat, gflat = arr.reshape(-1), grad.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    f1 = pair_loss_and_grads(v, u_pos, u_negs)[0]
                    flat[i] = orig - eps
                    f2 = pair_loss_and_grads(v, u_pos, u_negs)[0]
                    flat[i] = orig
                    num = (f1 - f2) / (2 * eps)
                    worst = max(worst, abs(num - gflat[i])
                                / max(abs(num), abs(gflat[i]), 1e-8))
            assert worst < 1e-5

    def test_sgd_step_decreases_loss(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            v = rng.standard_normal(8)
            u_pos = rng.standard_normal(8)
            u_negs = rng.standard_normal((5, 8))
            loss0, dv, du_pos, du_negs = pair_loss_and_grads(v, u_pos, u_negs)
            lr = 1e-3
            loss1 = pair_loss_and_grads(
                v - lr * dv, u_pos - lr * du_pos, u_negs - lr * du_negs
            )[0]
            assert loss1 < loss0


def shared_context_corpus(rng, n=400):
    """A and B appear in identical contexts; C appears elsewhere."""
    corpus = []
    for _ in range(n):
        ctx = "XYZ"[rng.integers(3)]
        corpus.append([ctx, "AB"[rng.integers(2)], ctx])
        corpus.append(["Q", "C", "Q"])
    return corpus


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestWord2Vec:
    @pytest.mark.parametrize("mode", ["skipgram", "cbow"])
    def test_shared_context_tokens_are_closer(self, mode):
        corpus = shared_context_corpus(np.random.default_rng(5))
        cfg = EmbeddingConfig(dim=24, window=2, epochs=10, seed=3, mode=mode)
        matrix = train_word2vec(corpus, cfg)
        va = embedding_for("A", matrix)
        assert cosine(va, embedding_for("B", matrix)) > cosine(
            va, embedding_for("C", matrix)
        )

    def test_vector_dimension(self):
        matrix = train_word2vec(
            [["A", "B", "A"]], EmbeddingConfig(dim=7, epochs=2, seed=0)
        )
        assert matrix.input_vectors.shape[1] == 7

    def test_bitwise_deterministic(self):
        corpus = shared_context_corpus(np.random.default_rng(1), n=50)
        cfg = EmbeddingConfig(dim=12, epochs=3, seed=9, mode="skipgram")
        m1 = train_word2vec(corpus, cfg)
        m2 = train_word2vec(corpus, cfg)
        assert np.array_equal(m1.input_vectors, m2.input_vectors)
        assert np.array_equal(m1.output_vectors, m2.output_vectors)

    def test_empty_corpus_error(self):
        with pytest.raises(ValueError):
            train_word2vec([], EmbeddingConfig())

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            train_word2vec([["A", "B"]], EmbeddingConfig(mode="fasttext"))

    def test_all_vectors_finite(self):
        corpus = shared_context_corpus(np.random.default_rng(2), n=100)
        matrix = train_word2vec(corpus, EmbeddingConfig(dim=16, epochs=5, seed=1))
        assert np.all(np.isfinite(matrix.input_vectors))
        assert np.all(np.isfinite(matrix.output_vectors))


class TestFastText:
    def test_oov_token_gets_finite_vector(self):
        corpus = [["KWK", "WKL", "KLF"] * 5]
        cfg = EmbeddingConfig(dim=10, epochs=3, seed=0, mode="fasttext",
                              minn=2, maxn=3, bucket_count=500)
        matrix, subwords = train_fasttext(corpus, cfg)
        vec = embedding_for("LFK", matrix, subwords)  # not in vocab
        assert vec.shape == (10,)
        assert np.all(np.isfinite(vec))
        assert np.any(vec != 0.0)

    def test_shared_subwords_raise_similarity(self):
        # uniform contexts mean training cannot create structure, so any
        # similarity structure must come from the shared subword buckets:
        # "AAA"/"AAAA" share almost every n-gram, "DDD" shares none
        rng = np.random.default_rng(4)
        words = ["AAA", "AAAA", "DDD", "DDDD"]
        corpus = []
        for _ in range(200):
            corpus.append([words[rng.integers(4)], words[rng.integers(4)],
                           words[rng.integers(4)]])
        cfg = EmbeddingConfig(dim=16, window=2, epochs=2, seed=2,
                              mode="fasttext", minn=2, maxn=3, bucket_count=2000)
        matrix, subwords = train_fasttext(corpus, cfg)
        a = embedding_for("AAA", matrix, subwords)
        b = embedding_for("AAAA", matrix, subwords)
        c = embedding_for("DDD", matrix, subwords)
        assert cosine(a, b) > cosine(a, c)

    def test_deterministic(self):
        corpus = [["KWK", "WKL"] * 3, ["KLF", "KWK"] * 2]
        cfg = EmbeddingConfig(dim=8, epochs=4, seed=5, mode="fasttext",
                              bucket_count=200)
        m1, s1 = train_fasttext(corpus, cfg)
        m2, s2 = train_fasttext(corpus, cfg)
        assert np.array_equal(m1.input_vectors, m2.input_vectors)
        assert np.array_equal(s1.bucket_vectors, s2.bucket_vectors)


class TestEmbeddingFor:
    def setup_method(self):
        corpus = [["KWK", "WKL", "KWK"]]
        self.cfg = EmbeddingConfig(dim=6, epochs=2, seed=1, mode="fasttext",
                                   minn=2, maxn=3, bucket_count=100)
        self.matrix, self.subwords = train_fasttext(corpus, self.cfg)
        self.w2v = train_word2vec(
            corpus, EmbeddingConfig(dim=6, epochs=2, seed=1, mode="skipgram")
        )

    def test_in_vocab_is_exact_row(self):
        idx = self.w2v.vocab.token_to_index["KWK"]
        np.testing.assert_array_equal(
            embedding_for("KWK", self.w2v), self.w2v.input_vectors[idx]
        )

    def test_oov_is_unk_row(self):
        np.testing.assert_array_equal(
            embedding_for("ZZZ", self.w2v), self.w2v.input_vectors[1]
        )

    def test_pad_is_zero_in_both_modes(self):
        np.testing.assert_array_equal(embedding_for(seqdata.PAD_TOKEN, self.w2v), 0.0)
        np.testing.assert_array_equal(
            embedding_for(seqdata.PAD_TOKEN, self.matrix, self.subwords), 0.0
        )

    def test_fasttext_mean_matches_manual_summation(self):
        token = "KWK"
        ids = extract_subwords(token, 2, 3, self.subwords.bucket_count)
        manual = self.matrix.input_vectors[self.matrix.vocab.token_to_index[token]].copy()
        for i in ids:
            manual += self.subwords.bucket_vectors[i]
        manual /= 1 + len(ids)
        np.testing.assert_allclose(
            embedding_for(token, self.matrix, self.subwords), manual, atol=1e-15
        )

    def test_materialize_aligns_to_vocab(self):
        out = materialize_matrix(self.w2v.vocab, self.w2v)
        np.testing.assert_array_equal(out[0], 0.0)
        idx = self.w2v.vocab.token_to_index["WKL"]
        np.testing.assert_array_equal(out[idx], self.w2v.input_vectors[idx])


class TestPersistence:
    def test_word2vec_round_trip_exact(self, tmp_path):
        corpus = [["KW", "WK", "KW", "KL"]]
        matrix = train_word2vec(corpus, EmbeddingConfig(dim=5, epochs=2, seed=3))
        path = tmp_path / "emb.txt"
        save_embedding(matrix, path, "skipgram")
        loaded, subwords, mode = load_embedding(path)
        assert mode == "skipgram"
        assert subwords is None
        assert np.array_equal(loaded.input_vectors, matrix.input_vectors)
        assert loaded.vocab.token_to_index == matrix.vocab.token_to_index
        assert loaded.vocab.k == 2

    def test_fasttext_round_trip_exact(self, tmp_path):
        corpus = [["KWK", "WKL", "KWK"]]
        cfg = EmbeddingConfig(dim=4, epochs=2, seed=3, mode="fasttext",
                              bucket_count=50)
        matrix, subwords = train_fasttext(corpus, cfg)
        path = tmp_path / "emb.txt"
        save_embedding(matrix, path, "fasttext", subwords)
        loaded, lsub, mode = load_embedding(path)
        assert mode == "fasttext"
        assert np.array_equal(loaded.input_vectors, matrix.input_vectors)
        assert np.array_equal(lsub.bucket_vectors, subwords.bucket_vectors)
        assert (lsub.minn, lsub.maxn) == (2, 3)

    def test_header_contract(self, tmp_path):
        corpus = [["KWK", "WKL"]]
        cfg = EmbeddingConfig(dim=4, epochs=1, seed=0, mode="fasttext",
                              minn=2, maxn=3, bucket_count=50)
        matrix, subwords = train_fasttext(corpus, cfg)
        path = tmp_path / "emb.txt"
        save_embedding(matrix, path, "fasttext", subwords)
        head = path.read_text().splitlines()[0].split()
        assert head == ["4", str(len(matrix.vocab)), "fasttext", "2", "3"]

    def test_malformed_header_rejected(self):
        with pytest.raises(ValueError, match="malformed"):
            parse_embedding_text("1 2 3\n")

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="declares"):
            parse_embedding_text("2 5 skipgram 0 0\n<pad> 0.0 0.0\n<unk> 0.0 0.0\n")
