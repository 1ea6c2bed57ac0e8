import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glosslab import tokenizer as tk
from glosslab.errors import ConfigError
from glosslab.tokenizer import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    UNK_SURFACE,
    TokenizerModel,
    corpus_loglik,
    decode,
    encode,
    train,
)


# --- independent oracles ----------------------------------------------------

def all_segmentations(word, vocab):
    """Exhaustive segmentations of a string over a piece set."""
    if not word:
        return [[]]
    out = []
    for k in range(1, len(word) + 1):
        piece = word[:k]
        if piece in vocab:
            for rest in all_segmentations(word[k:], vocab):
                out.append([piece] + rest)
    return out


def brute_em(word_counts, probs, iters):
    """Plain EM with full lattice enumeration (the independent oracle)."""
    probs = dict(probs)
    for _ in range(iters):
        counts = {p: 0.0 for p in probs}
        for word, cnt in word_counts.items():
            segs = all_segmentations(word, probs)
            weights = [math.prod(probs[p] for p in s) for s in segs]
            tot = sum(weights)
            for s, w in zip(segs, weights):
                for p in s:
                    counts[p] += cnt * w / tot
        total = sum(counts.values())
        probs = {p: c / total for p, c in counts.items()}
    return probs


class TestTrain:
    def test_repeated_bigram_corpus(self):
        model = train(["abab", "abab"], vocab_size=8)
        assert "ab" in model.pieces
        assert model.pieces["ab"] > model.pieces["a"]
        assert model.pieces["ab"] > model.pieces["b"]

    def test_em_step_matches_enumeration(self):
        # one E/M step of the trainer equals enumeration over all segmentations
        probs = {"a": 0.25, "b": 0.25, "ab": 0.25, "abab": 0.125, "ba": 0.125}
        logp = {p: math.log(v) for p, v in probs.items()}
        word_counts = {"abab": 2}
        new_logp, ll = tk._em_round(word_counts, logp)
        oracle = brute_em(word_counts, probs, iters=1)
        for p, v in oracle.items():
            assert math.exp(new_logp[p]) == pytest.approx(v, rel=1e-12)
        segs = all_segmentations("abab", probs)
        marginal = sum(math.prod(probs[p] for p in s) for s in segs)
        assert ll == pytest.approx(2 * math.log(marginal), rel=1e-12)

    def test_single_character_corpus(self):
        model = train(["a", "a", "a"], vocab_size=5)
        assert set(model.pieces) == {"a"}
        assert model.pieces["a"] == pytest.approx(0.0, abs=1e-12)
        assert model.vocab_size == 5

    def test_exact_vocab_size(self):
        corpus = ["the cat sat", "the mat", "a cat ate", "the rat sat there"] * 4
        model = train(corpus, vocab_size=30)
        assert model.vocab_size == 30
        assert len(model.pieces) == 26
        ids = sorted(model.piece_ids.values())
        assert ids == list(range(30))

    def test_vocab_smaller_than_alphabet_rejected(self):
        with pytest.raises(ConfigError):
            train(["abcdefgh"], vocab_size=8)

    def test_em_loglik_monotone(self):
        trace = []
        corpus = ["the cat sat on the mat", "a cat ate the rat", "the rat sat"] * 3
        train(corpus, vocab_size=32, ll_trace=trace)
        # EM never decreases the marginal likelihood within a pruning round;
        # pruning resets the level, so compare consecutive EM iterations only.
        per_token = 1e-9 * sum(len(c) for c in corpus)
        # identify round boundaries by likelihood drops larger than tolerance
        for prev, cur in zip(trace, trace[1:]):
            if cur < prev - per_token:
                # must be a pruning boundary: a strictly smaller vocabulary
                # can only lose likelihood, never an EM step
                continue
            assert cur >= prev - per_token

    def test_determinism_byte_identical(self, tmp_path):
        corpus = ["the cat sat", "a mat", "the bat"] * 2
        m1 = train(corpus, vocab_size=24)
        m2 = train(corpus, vocab_size=24)
        f1, f2 = tmp_path / "m1.tok", tmp_path / "m2.tok"
        m1.save(f1)
        m2.save(f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_logprobs_finite_nonpositive_and_normalized(self):
        model = train(["the cat sat on the mat"] * 2, vocab_size=20)
        lps = np.array(list(model.pieces.values()))
        assert np.all(np.isfinite(lps))
        assert np.all(lps <= 1e-12)
        assert np.exp(lps).sum() <= 1 + 1e-6

    def test_char_coverage_excludes_rare_chars(self):
        corpus = ["aaaa bbbb"] * 200 + ["q"]
        model = train(corpus, vocab_size=12, char_coverage=0.999)
        assert "q" not in model.pieces
        assert encode(model, "q") == [UNK_ID]


class TestEncode:
    def test_viterbi_prefers_joint_piece(self):
        model = TokenizerModel.from_probs({"a": 0.5, "b": 0.3, "ab": 0.2})
        # 0.2 > 0.5 * 0.3, so the single piece wins
        assert [model.id_pieces[i] for i in encode(model, "ab")] == ["ab"]

    def test_empty_string(self):
        model = TokenizerModel.from_probs({"a": 1.0})
        assert encode(model, "") == []

    def test_unseen_character_is_unk(self):
        model = TokenizerModel.from_probs({"a": 1.0})
        assert encode(model, "z") == [UNK_ID]

    def test_viterbi_matches_enumeration_on_random_strings(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            probs = dict(zip(["a", "b", "c"], rng.dirichlet([1, 1, 1])))
            # add a few multi-char pieces with random mass
            for piece in ["ab", "bc", "abc", "ca"]:
                if rng.random() < 0.6:
                    probs[piece] = float(rng.random())
            total = sum(probs.values())
            probs = {p: v / total for p, v in probs.items()}
            model = TokenizerModel.from_probs(probs)
            s = "".join(rng.choice(["a", "b", "c"], size=6))
            got = [model.id_pieces[i] for i in encode(model, s)]
            segs = all_segmentations(s, probs)
            best = max(sum(math.log(probs[p]) for p in seg) for seg in segs)
            ours = sum(math.log(probs[p]) for p in got)
            assert ours == pytest.approx(best, abs=1e-9)

    def test_tie_break_fewer_tokens_then_lexicographic(self):
        # log-probs chosen so ties are float-exact: logP(ab) == logP(a)+logP(b)
        model = TokenizerModel(pieces={"a": -1.0, "b": -1.0, "ab": -2.0})
        assert [model.id_pieces[i] for i in encode(model, "ab")] == ["ab"]
        # equal-score, equal-length paths: smaller first piece wins
        model = TokenizerModel(pieces={"a": -1.0, "b": -1.0, "ab": -2.0, "ba": -2.0})
        assert [model.id_pieces[i] for i in encode(model, "aba")] == ["a", "ba"]


class TestDecode:
    def test_round_trip(self):
        corpus = ["a fool", "an idiot", "a fool of fools"] * 2
        model = train(corpus, vocab_size=30)
        for text in corpus + ["a fool of fools", "fool an"]:
            assert decode(model, encode(model, text)) == text

    def test_round_trip_preserves_odd_spacing(self):
        model = train(["a b", "ab a  b"], vocab_size=10)
        for text in ["a  b", " a b", "a b "]:
            assert decode(model, encode(model, text)) == text

    def test_empty(self):
        model = TokenizerModel.from_probs({"a": 1.0})
        assert decode(model, []) == ""

    def test_unk_surface(self):
        model = TokenizerModel.from_probs({"a": 1.0})
        assert decode(model, [UNK_ID]) == UNK_SURFACE

    def test_specials_are_silent(self):
        model = train(["a fool"], vocab_size=12)
        ids = [BOS_ID] + encode(model, "a fool") + [EOS_ID, PAD_ID, PAD_ID]
        assert decode(model, ids) == "a fool"

    @given(st.text(alphabet="ab f", min_size=0, max_size=24))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, text):
        model = train(["a fool", "ab fab", "ba baf"] * 2, vocab_size=16)
        assert decode(model, encode(model, text)) == text


class TestModelFile:
    def test_save_load_bit_exact(self, tmp_path):
        model = train(["the cat sat on a mat"] * 3, vocab_size=24)
        path = tmp_path / "m.tok"
        model.save(path)
        loaded = TokenizerModel.load(path)
        assert loaded.pieces == model.pieces
        assert loaded.id_pieces == model.id_pieces
        loaded.save(tmp_path / "m2.tok")
        assert (tmp_path / "m2.tok").read_bytes() == path.read_bytes()

    def test_reject_garbage(self, tmp_path):
        path = tmp_path / "bad.tok"
        path.write_text("not a model\n")
        with pytest.raises(Exception):
            TokenizerModel.load(path)


class TestSampling:
    def test_sample_encode_decodes_back(self):
        model = train(["a fool of fools", "a fool"] * 2, vocab_size=24)
        rng = np.random.default_rng(5)
        for _ in range(10):
            ids = tk.sample_encode(model, "a fool of fools", rng)
            assert decode(model, ids) == "a fool of fools"

    def test_corpus_loglik_matches_enumeration(self):
        probs = {"a": 0.3, "b": 0.3, "ab": 0.4}
        model = TokenizerModel.from_probs(probs)
        segs = all_segmentations("abab", probs)
        marginal = sum(math.prod(probs[p] for p in s) for s in segs)
        assert corpus_loglik(model, ["abab"]) == pytest.approx(math.log(marginal))
