import math

import numpy as np
import pytest

from glosslab.errors import ConfigError, ValidationError
from glosslab.glove import (
    CoocMatrix,
    build_cooc,
    build_idf,
    gloss_vector_tfidf,
    load_embeddings,
    save_embeddings,
    total_loss,
    train_glove,
    weight_fn,
)


def brute_cooc(sequences, window):
    """Direct pair enumeration oracle."""
    counts = {}
    for seq in sequences:
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                d = j - i
                if d > window:
                    continue
                a, b = seq[i], seq[j]
                counts[(a, b)] = counts.get((a, b), 0.0) + 1.0 / d
                if a != b:
                    counts[(b, a)] = counts.get((b, a), 0.0) + 1.0 / d
    return counts


class TestBuildCooc:
    def test_within_window_pairs(self):
        # tokens [a, b, a]: both bigram pairs plus the distance-2 self pair
        m = build_cooc([[0, 1, 0]], window=2)
        assert m.counts[(0, 1)] == pytest.approx(2.0)
        assert m.counts[(1, 0)] == pytest.approx(2.0)
        assert m.counts[(0, 0)] == pytest.approx(0.5)

    def test_no_cross_gloss_pairs(self):
        m = build_cooc([[0], [1]], window=5)
        assert len(m) == 0

    def test_single_pair(self):
        m = build_cooc([[0, 1]], window=1)
        assert m.counts[(0, 1)] == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        seqs = [list(rng.integers(0, 5, size=rng.integers(1, 12))) for _ in range(20)]
        got = build_cooc(seqs, window=3).counts
        want = brute_cooc(seqs, window=3)
        assert set(got) == set(want)
        for k in want:
            assert got[k] == pytest.approx(want[k])

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        seqs = [list(rng.integers(0, 6, size=10)) for _ in range(5)]
        m = build_cooc(seqs, window=4)
        for (i, j), v in m.counts.items():
            assert m.counts[(j, i)] == pytest.approx(v)

    def test_bad_window(self):
        with pytest.raises(ConfigError):
            build_cooc([[0, 1]], window=0)


class TestWeightFn:
    def test_at_cutoff(self):
        assert weight_fn(10.0, x_max=10.0) == 1.0

    def test_above_cutoff(self):
        assert weight_fn(25.0, x_max=10.0) == 1.0

    def test_below_cutoff(self):
        assert weight_fn(5.0, x_max=10.0, alpha=0.75) == pytest.approx(0.5 ** 0.75)


class TestTrainGlove:
    def test_two_token_corpus_loss_drops(self):
        # X(a, b) = e so the zero-parameter loss term is exactly f(e) * 1
        cooc = CoocMatrix(counts={(0, 1): math.e, (1, 0): math.e}, window=10)
        model = train_glove(cooc, dim=8, iters=50, seed=1)
        zero_param_loss = 2 * weight_fn(math.e) * 1.0
        final = total_loss(model, cooc)
        assert final <= 0.1 * zero_param_loss

    def test_loss_non_increasing_across_epochs(self):
        rng = np.random.default_rng(2)
        seqs = [list(rng.integers(0, 8, size=10)) for _ in range(15)]
        cooc = build_cooc(seqs, window=4)
        losses = []
        for iters in range(1, 10):
            model = train_glove(cooc, dim=6, iters=iters, seed=3)
            losses.append(total_loss(model, cooc))
        for prev, cur in zip(losses, losses[1:]):
            assert cur <= prev + 1e-6

    def test_deterministic(self):
        cooc = build_cooc([[0, 1, 2, 0, 1]], window=3)
        m1 = train_glove(cooc, dim=4, iters=5, seed=7)
        m2 = train_glove(cooc, dim=4, iters=5, seed=7)
        np.testing.assert_array_equal(m1.w, m2.w)
        np.testing.assert_array_equal(m1.b_ctx, m2.b_ctx)

    def test_main_context_role_swap_same_loss(self):
        # a symmetric matrix makes the objective symmetric in the two roles
        rng = np.random.default_rng(4)
        seqs = [list(rng.integers(0, 5, size=8)) for _ in range(10)]
        cooc = build_cooc(seqs, window=3)
        model = train_glove(cooc, dim=4, iters=3, seed=5)
        swapped = type(model)(
            w=model.w_ctx.copy(), w_ctx=model.w.copy(),
            b=model.b_ctx.copy(), b_ctx=model.b.copy(),
            x_max=model.x_max, alpha=model.alpha,
        )
        assert total_loss(swapped, cooc) == pytest.approx(total_loss(model, cooc), rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            train_glove(CoocMatrix(counts={}, window=10))


class TestTfidf:
    def make_setup(self):
        # three glosses over four tokens
        seqs = [[0, 1], [0, 2], [0, 3, 3]]
        idf = build_idf(seqs)
        cooc = build_cooc(seqs, window=2)
        glove = train_glove(cooc, dim=4, iters=3, seed=6)
        return seqs, idf, glove

    def test_idf_values(self):
        seqs, idf, _ = self.make_setup()
        assert idf[0] == pytest.approx(math.log(3 / 3))
        assert idf[1] == pytest.approx(math.log(3 / 1))
        assert idf[3] == pytest.approx(math.log(3 / 1))

    def test_single_token_gloss_is_unit_token_vector(self):
        _, idf, glove = self.make_setup()
        v = gloss_vector_tfidf([1], glove, idf)
        want = glove.embedding(1) / np.linalg.norm(glove.embedding(1))
        np.testing.assert_allclose(v, want, rtol=1e-9)

    def test_repeated_token_equals_single(self):
        _, idf, glove = self.make_setup()
        np.testing.assert_allclose(
            gloss_vector_tfidf([1, 1], glove, idf),
            gloss_vector_tfidf([1], glove, idf),
        )

    def test_hand_computed_weights(self):
        _, idf, glove = self.make_setup()
        toks = [1, 3, 3]
        w1 = 1 * idf[1]
        w3 = 2 * idf[3]
        expected = (w1 * glove.embedding(1) + w3 * glove.embedding(3)) / (w1 + w3)
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(gloss_vector_tfidf(toks, glove, idf), expected, rtol=1e-9)

    def test_all_zero_weights_give_zero_vector(self):
        _, idf, glove = self.make_setup()
        # token 0 appears in every gloss, so idf = 0
        np.testing.assert_array_equal(gloss_vector_tfidf([0, 0], glove, idf), np.zeros(glove.dim))

    def test_self_similarity_one(self):
        _, idf, glove = self.make_setup()
        v = gloss_vector_tfidf([1, 2, 3], glove, idf)
        assert v @ v == pytest.approx(1.0)


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path):
        cooc = build_cooc([[0, 1, 2], [2, 1, 0]], window=2)
        model = train_glove(cooc, dim=4, iters=2, seed=8)
        pieces = ["<pad>", "a b", "▁c"]
        path = tmp_path / "vectors.txt"
        save_embeddings(path, model, pieces)
        loaded = load_embeddings(path)
        assert set(loaded) == set(pieces)
        np.testing.assert_allclose(loaded["a b"], model.embedding(1), rtol=1e-5, atol=1e-8)
