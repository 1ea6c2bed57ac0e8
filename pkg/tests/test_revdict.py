import numpy as np
import pytest

from glosslab import tensor as T
from glosslab.corpus import AtomicGloss, Language
from glosslab.errors import ValidationError
from glosslab.revdict import (
    PRESETS,
    RetrievalIndex,
    RevdictModel,
    aggregate,
    batch_loss,
    build_index,
    encode_gloss,
    evaluate_revdict,
    load_checkpoint,
    prepare_revdict_examples,
    query,
    save_checkpoint,
    train_revdict,
)
from glosslab.tokenizer import PAD_ID, TokenizerModel, train as tok_train


def small_model(seed=0, heads=("sgns",), dim=16, out_dim=8, vocab=32, **kw):
    return RevdictModel(
        vocab_size=vocab,
        head_types=heads,
        dim=dim,
        num_layers=2,
        num_heads=2,
        ff_dim=32,
        out_dim=out_dim,
        max_len=16,
        seed=seed,
        **kw,
    )


def toy_records(n=40, seed=0, dim=8, types=("sgns",)):
    rng = np.random.default_rng(seed)
    words = ["fool", "идиот", "boat", "cut", "run", "speak", "navy", "slow", "red"]
    out = []
    for i in range(n):
        text = " ".join(rng.choice(words, size=rng.integers(2, 5)))
        vecs = {t: rng.normal(size=dim) for t in types}
        out.append(AtomicGloss(parent_id=f"r{i}", text=text, language=Language.EN, **vecs))
    return out


class TestAggregation:
    def test_average_on_stub(self):
        hidden = T.Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        mask = np.ones((1, 2))
        out = aggregate(hidden, mask, "average")
        np.testing.assert_allclose(out.data, [[2.0, 3.0]])

    def test_single_token_sum_equals_average(self):
        hidden = T.Tensor(np.random.default_rng(0).normal(size=(1, 1, 4)))
        mask = np.ones((1, 1))
        np.testing.assert_allclose(
            aggregate(hidden, mask, "sum").data, aggregate(hidden, mask, "average").data
        )

    def test_mask_excludes_pad_rows(self):
        rng = np.random.default_rng(1)
        h = rng.normal(size=(1, 3, 4)).astype(np.float32)
        mask_full = np.array([[1.0, 1.0, 0.0]])
        out = aggregate(T.Tensor(h), mask_full, "sum").data
        np.testing.assert_allclose(out, h[:, :2].sum(axis=1), rtol=1e-6)

    def test_eos_picks_last_real_position(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(2, 4, 3)).astype(np.float32)
        mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=float)
        out = aggregate(T.Tensor(h), mask, "eos").data
        np.testing.assert_allclose(out[0], h[0, 2])
        np.testing.assert_allclose(out[1], h[1, 1])

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValidationError):
            aggregate(T.Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2)), "sum")


class TestEncode:
    @pytest.mark.parametrize("mode", ["sum", "average", "eos"])
    def test_pad_invariance(self, mode):
        model = small_model(seed=3, **{}) if mode == "average" else small_model(seed=3)
        model.aggregation = mode
        ids = np.array([2, 5, 6, 7, 3])
        base = encode_gloss(model, ids)
        padded = encode_gloss(model, np.concatenate([ids, [PAD_ID] * 4]))
        np.testing.assert_allclose(base, padded, atol=1e-6)

    def test_permutation_changes_output_with_positions(self):
        model = small_model(seed=4)
        ids = np.array([2, 5, 6, 7, 8, 3])
        perm = np.array([2, 7, 6, 5, 8, 3])
        a = encode_gloss(model, ids)
        b = encode_gloss(model, perm)
        assert np.abs(a - b).max() > 1e-3

    @pytest.mark.parametrize("mode", ["sum", "average"])
    def test_permutation_invariant_without_positions(self, mode):
        model = small_model(seed=5)
        model.aggregation = mode
        rng = np.random.default_rng(6)
        ids = np.array([2, 5, 6, 7, 8, 3])
        perm = ids[rng.permutation(len(ids))]
        a = model.encode_batch(ids[None, :], use_positions=False).data[0]
        b = model.encode_batch(perm[None, :], use_positions=False).data[0]
        # identical up to float32 reduction order over the permuted axis
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_empty_rejected(self):
        model = small_model(seed=7)
        with pytest.raises(ValidationError):
            encode_gloss(model, [])


class TestPredict:
    def make_tok(self):
        return tok_train(["a fool of fools", "to cut and run", "navy boat"], vocab_size=30)

    def test_deterministic(self):
        tok = self.make_tok()
        model = small_model(seed=8)
        a = model.predict(tok, "a fool")["sgns"]
        b = model.predict(tok, "a fool")["sgns"]
        np.testing.assert_array_equal(a, b)

    def test_lowercased_input(self):
        tok = self.make_tok()
        model = small_model(seed=9)
        np.testing.assert_array_equal(
            model.predict(tok, "A Fool")["sgns"], model.predict(tok, "a fool")["sgns"]
        )

    def test_output_shape_finite(self):
        tok = self.make_tok()
        model = small_model(seed=10, out_dim=8)
        out = model.predict(tok, "navy boat")["sgns"]
        assert out.shape == (8,)
        assert np.all(np.isfinite(out))

    def test_truncation_warns_but_works(self):
        tok = self.make_tok()
        model = small_model(seed=11)
        long_gloss = " ".join(["fool"] * 200)
        ids = model.tokenize(tok, long_gloss)
        assert len(ids) <= model.max_len + 1
        assert ids[0] == 2 and ids[-1] == 3

    def test_relu_placement_flag_changes_output(self):
        tok = self.make_tok()
        pre = small_model(seed=12)
        post = small_model(seed=12, relu_after_affine=True)
        a = pre.predict(tok, "a fool")["sgns"]
        b = post.predict(tok, "a fool")["sgns"]
        assert np.all(b >= 0)  # post-affine rectifier forces non-negative outputs
        assert np.abs(a - b).max() > 1e-6


class TestTraining:
    def setup_data(self, n=60, types=("sgns",)):
        records = toy_records(n, types=types)
        tok = tok_train([r.text for r in records], vocab_size=40)
        model = small_model(seed=13, heads=types, vocab=tok.vocab_size, out_dim=8)
        examples = prepare_revdict_examples(records, tok, model)
        return records, tok, model, examples

    def test_dev_mse_decreases(self):
        _, _, model, examples = self.setup_data()
        before = evaluate_revdict(model, examples[:20])["mse"]
        train_revdict(model, examples, examples[:20], batch_size=16, max_epochs=20,
                      lr=3e-3, seed=1)
        after = evaluate_revdict(model, examples[:20])["mse"]
        assert after < before

    def test_same_seed_same_result(self):
        _, tok, _, _ = self.setup_data()
        records = toy_records(30)
        results = []
        for _ in range(2):
            model = small_model(seed=21, vocab=tok.vocab_size, out_dim=8)
            examples = prepare_revdict_examples(records, tok, model)
            report = train_revdict(model, examples, examples[:10], batch_size=16,
                                   max_epochs=3, seed=5)
            results.append((report.epochs[-1]["train_loss"],
                            model.params["head_sgns_w"].data.copy()))
        assert results[0][0] == results[1][0]
        np.testing.assert_array_equal(results[0][1], results[1][1])

    def test_multitask_gradients_reach_encoder_from_each_head(self):
        records = toy_records(8, types=("sgns", "char"))
        tok = tok_train([r.text for r in records], vocab_size=40)
        model = small_model(seed=14, heads=("sgns", "char"), vocab=tok.vocab_size, out_dim=8)
        examples = prepare_revdict_examples(records, tok, model)
        for head in ("sgns", "char"):
            for p in model.params.values():
                p.grad = None
            pooled = model.encode_batch(np.stack([np.pad(np.array(ex.ids),
                                        (0, 12 - len(ex.ids))) for ex in examples[:4]]))
            pred = model.head(pooled, head)
            tgt = T.Tensor(np.stack([ex.targets[head] for ex in examples[:4]]))
            T.mse(pred, tgt).backward()
            enc_grads = [model.params[k].grad for k in model.encoder_param_names()
                         if model.params[k].grad is not None]
            assert any(np.abs(g).max() > 0 for g in enc_grads), f"head {head} sends no gradient"

    def test_missing_target_rejected(self):
        records = toy_records(5, types=("sgns",))
        tok = tok_train([r.text for r in records], vocab_size=30)
        model = small_model(seed=15, heads=("sgns", "char"), vocab=tok.vocab_size, out_dim=8)
        with pytest.raises(ValidationError, match="r0"):
            prepare_revdict_examples(records, tok, model)

    def test_cosine_weight_changes_loss(self):
        _, tok, model, examples = self.setup_data(20)
        a = batch_loss(model, examples[:8], train=False).item()
        b = batch_loss(model, examples[:8], train=False, cosine_weight=1.0).item()
        assert a != b


class TestPresets:
    def test_table(self):
        assert [PRESETS[f"v{i}"].batch_size for i in range(1, 7)] == [
            1024, 2048, 4096, 8192, 2048, 2048]
        assert [PRESETS[f"v{i}"].max_epochs for i in range(1, 7)] == [
            20, 20, 20, 20, 150, 150]
        assert [PRESETS[f"v{i}"].hp_points for i in range(1, 7)] == [
            30, 30, 30, 30, 10, 10]
        assert [PRESETS[f"v{i}"].scheduler for i in range(1, 7)] == [
            "cosine"] * 4 + ["plateau"] * 2
        assert [PRESETS[f"v{i}"].multitask for i in range(1, 7)] == [
            False, False, False, False, False, True]
        assert all(PRESETS[f"v{i}"].loss == "mse" for i in range(1, 7))


class TestRetrieval:
    def test_build_index_normalizes(self):
        records = toy_records(5)
        idx = build_index(records, "sgns")
        np.testing.assert_allclose(np.linalg.norm(idx.matrix, axis=1), 1.0, atol=1e-6)
        assert idx.ids == [f"r{i}" for i in range(5)]

    def test_zero_vector_rejected(self):
        records = toy_records(3)
        records[1].sgns = np.zeros(8)
        with pytest.raises(ValidationError, match="r1"):
            build_index(records, "sgns")

    def test_duplicate_id_rejected(self):
        records = toy_records(2)
        records[1].parent_id = "r0"
        with pytest.raises(ValidationError, match="duplicate"):
            build_index(records, "sgns")

    def test_query_stubbed_exact_hit(self):
        records = toy_records(6, dim=8)
        idx = build_index(records, "sgns")
        tok = tok_train([r.text for r in records], vocab_size=30)
        model = small_model(seed=16, vocab=tok.vocab_size, out_dim=8)

        class Stub(RevdictModel):
            pass

        stub = model
        target_row = idx.matrix[3]
        stub.predict = lambda tok_, text: {"sgns": target_row.copy()}
        out = query(stub, tok, idx, "whatever", k=2)
        assert out[0][0] == "r3"
        assert out[0][2] == pytest.approx(1.0)

    def test_k_beyond_size_returns_all(self):
        records = toy_records(4)
        idx = build_index(records, "sgns")
        tok = tok_train([r.text for r in records], vocab_size=30)
        model = small_model(seed=17, vocab=tok.vocab_size, out_dim=8)
        out = query(model, tok, idx, "a fool", k=50)
        assert len(out) == 4

    def test_orthogonal_ties_order_by_id(self):
        base = toy_records(3, dim=4)
        for i, rec in enumerate(base):
            v = np.zeros(4)
            v[i] = 1.0
            rec.sgns = v
        idx = build_index(base, "sgns")
        tok = tok_train([r.text for r in base], vocab_size=30)
        model = small_model(seed=18, vocab=tok.vocab_size, out_dim=4)
        model.predict = lambda tok_, text: {"sgns": np.array([0.0, 0.0, 0.0, 1.0])}
        out = query(model, tok, idx, "x", k=3)
        assert [o[0] for o in out] == ["r0", "r1", "r2"]
        assert all(o[2] == pytest.approx(0.0) for o in out)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        records = toy_records(5)
        tok = tok_train([r.text for r in records], vocab_size=30)
        model = small_model(seed=19, vocab=tok.vocab_size, out_dim=8)
        save_checkpoint(tmp_path / "ck", model, tok)
        loaded = load_checkpoint(tmp_path / "ck", tok)
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name].data, model.params[name].data)
        assert loaded.aggregation == model.aggregation
        assert loaded.primary_head == model.primary_head

    def test_family_mismatch_rejected(self, tmp_path):
        from glosslab.defmod import DefmodModel, save_checkpoint as save_dm

        records = toy_records(4)
        tok = tok_train([r.text for r in records], vocab_size=30)
        dm = DefmodModel(vocab_size=tok.vocab_size, types=("sgns",), hidden=8, emb_dim=8,
                         vec_dim=8)
        save_dm(tmp_path / "dm", dm, tok)
        with pytest.raises(ValidationError, match="revdict"):
            load_checkpoint(tmp_path / "dm", tok)
