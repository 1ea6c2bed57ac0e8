import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glosslab.corpus import (
    EMBEDDING_DIM,
    AtomicGloss,
    GlossRecord,
    Language,
    gloss_stats,
    load_dataset,
    normalize,
    save_dataset,
    split_atomic,
    strip_label,
    transform_dataset,
    vector_stats,
)
from glosslab.errors import ValidationError

from conftest import write_dataset


class TestLoadDataset:
    def test_single_entry(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.json",
            [{"id": "x.1", "gloss": "a fool", "sgns": [0.0] * EMBEDDING_DIM}],
        )
        recs = load_dataset(path, Language.EN)
        assert len(recs) == 1
        assert recs[0].id == "x.1"
        assert recs[0].gloss == "a fool"
        assert np.all(recs[0].sgns == 0.0)
        assert recs[0].embedding_types() == ("sgns",)

    def test_wrong_length_names_record(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.json",
            [{"id": "x.1", "gloss": "a fool", "sgns": [0.0] * 255}],
        )
        with pytest.raises(ValidationError, match="x.1"):
            load_dataset(path, Language.EN)

    def test_non_finite_rejected(self, tmp_path):
        vec = [0.0] * EMBEDDING_DIM
        vec[17] = float("nan")
        path = tmp_path / "d.json"
        with open(path, "w") as f:
            f.write(json.dumps([{"id": "x.2", "gloss": "g", "sgns": vec}]).replace("NaN", "NaN"))
        with pytest.raises(ValidationError, match="x.2"):
            load_dataset(path, Language.EN)

    def test_malformed_json_reports_byte_offset(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[{"id": "x", "gloss": "g", }]')
        with pytest.raises(ValidationError, match="byte offset"):
            load_dataset(path, Language.EN)

    def test_missing_embedding_rejected_when_required(self, tmp_path):
        path = write_dataset(tmp_path / "d.json", [{"id": "x", "gloss": "g"}])
        with pytest.raises(ValidationError, match="x"):
            load_dataset(path, Language.EN)
        recs = load_dataset(path, Language.EN, require_embedding=False)
        assert recs[0].embedding_types() == ()


class TestSplitAtomic:
    def test_two_definitions(self):
        assert split_atomic("a fool; an idiot") == ["a fool", "an idiot"]

    def test_no_delimiter(self):
        assert split_atomic("a fool") == ["a fool"]

    def test_only_delimiters(self):
        assert split_atomic("; ;") == []


class TestStripLabel:
    def test_fr_paren_label(self):
        assert strip_label("(Géographie) rivière", Language.FR) == "rivière"

    def test_en_pass_through(self):
        assert strip_label("(Geography) river", Language.EN) == "(Geography) river"

    def test_fr_no_label(self):
        assert strip_label("rivière", Language.FR) == "rivière"

    def test_at_most_one_label(self):
        out = strip_label("(Géographie) (Rare) rivière", Language.FR)
        assert out == "(Rare) rivière"

    def test_capdot_requires_capital(self):
        assert strip_label("Geometria. figura piana", Language.IT) == "figura piana"
        assert strip_label("geometria. figura piana", Language.IT) == "geometria. figura piana"

    def test_ru_abbreviation_extra_rule(self):
        assert strip_label("разг. дурак", Language.RU) == "дурак"


class TestNormalize:
    def test_trailing_period(self):
        assert normalize("A fool.") == "a fool"

    def test_unicode_lowercase(self):
        assert normalize("Río Grande") == "río grande"

    def test_iterative_trailing_strip(self):
        assert normalize("what?!") == "what"

    @given(st.text(max_size=40))
    def test_no_trailing_punct_and_lowercase(self, s):
        out = normalize(s)
        assert out == out.lower()
        if out:
            assert out[-1] not in {".", ",", ";", ":", "!", "?"}
            assert not out[-1].isspace()


class TestTransformDataset:
    def test_split_shares_embeddings(self):
        rng = np.random.default_rng(0)
        vec = rng.normal(size=EMBEDDING_DIM)
        rec = GlossRecord(id="x", gloss="a fool; an idiot", language=Language.EN, sgns=vec)
        atomics, actions = transform_dataset([rec])
        assert [a.text for a in atomics] == ["a fool", "an idiot"]
        assert all(a.sgns is vec for a in atomics)
        assert ("x", "split:2") in actions

    def test_empty_record_dropped_and_logged(self):
        rec = GlossRecord(id="x", gloss="; ;", language=Language.EN, sgns=np.zeros(4))
        atomics, actions = transform_dataset([rec])
        assert atomics == []
        assert ("x", "dropped_record") in actions

    def test_order_strip_then_split_then_normalize(self):
        rec = GlossRecord(
            id="f",
            gloss="(Géographie) Grande rivière; Petit ruisseau.",
            language=Language.FR,
            sgns=np.zeros(4),
        )
        atomics, _ = transform_dataset([rec])
        assert [a.text for a in atomics] == ["grande rivière", "petit ruisseau"]

    def test_idempotent_on_own_output(self, toy_dataset_file):
        recs = load_dataset(toy_dataset_file, Language.EN)
        atomics, _ = transform_dataset(recs)
        rewrapped = [
            GlossRecord(id=a.parent_id, gloss=a.text, language=a.language, sgns=a.sgns)
            for a in atomics
        ]
        again, _ = transform_dataset(rewrapped)
        assert [a.text for a in again] == [a.text for a in atomics]

    def test_atomic_invariants(self, toy_dataset_file):
        recs = load_dataset(toy_dataset_file, Language.EN)
        atomics, _ = transform_dataset(recs)
        for a in atomics:
            assert ";" not in a.text
            assert a.text == a.text.lower()
            assert a.text[-1] not in {".", ",", ";", ":", "!", "?"}

    def test_piece_count_accounting(self, toy_dataset_file):
        recs = load_dataset(toy_dataset_file, Language.EN)
        atomics, actions = transform_dataset(recs)
        dropped = sum(1 for _, act in actions if act == "dropped_empty_piece")
        expected = sum(len(split_atomic(strip_label(r.gloss, r.language))) for r in recs)
        assert len(atomics) + dropped == expected

    def test_save_round_trip(self, toy_dataset_file, tmp_path):
        recs = load_dataset(toy_dataset_file, Language.EN)
        atomics, _ = transform_dataset(recs)
        out = tmp_path / "t.json"
        save_dataset(atomics, out)
        reloaded = load_dataset(out, Language.EN)
        assert [r.gloss for r in reloaded] == [a.text for a in atomics]
        np.testing.assert_allclose(reloaded[0].sgns, atomics[0].sgns)


class TestGlossStats:
    def test_tiny_case(self):
        s = gloss_stats(["a b", "a"])
        assert s.n_glosses == 2
        assert s.gloss_size["mean"] == 1.5
        assert s.dict_size == 2
        assert s.n_tokens == 3

    def test_quantile_ordering_and_token_sum(self, toy_dataset_file):
        recs = load_dataset(toy_dataset_file, Language.EN)
        glosses = [r.gloss for r in recs]
        s = gloss_stats(glosses)
        gs = s.gloss_size
        assert gs["min"] <= gs["q25"] <= gs["median"] <= gs["q75"] <= gs["max"]
        assert s.n_tokens == sum(len(g.split()) for g in glosses)

    def test_population_std(self):
        s = gloss_stats(["a", "a b c"])
        # sizes {1, 3}: population std is 1, sample std would be sqrt(2)
        assert s.gloss_size["st_dev"] == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            gloss_stats([])


class TestVectorStats:
    def test_tiny_case(self):
        a = AtomicGloss(parent_id="p", text="t", language=Language.EN, sgns=np.array([1.0, -1.0]))
        b = AtomicGloss(parent_id="q", text="u", language=Language.EN, sgns=np.array([3.0, -3.0]))
        vs = vector_stats([a, b], "sgns")
        assert vs.min == -3.0
        assert vs.mean == 0.0
        assert vs.abs_mean == 2.0
        assert vs.max == 3.0
        assert vs.abs_min == 1.0
        assert vs.abs_max == 3.0

    def test_invariants_random(self):
        rng = np.random.default_rng(3)
        recs = [
            AtomicGloss(parent_id=str(i), text="t", language=Language.EN,
                        sgns=rng.normal(size=16))
            for i in range(5)
        ]
        vs = vector_stats(recs, "sgns")
        assert vs.abs_min >= 0
        assert vs.min <= vs.mean <= vs.max
        assert vs.abs_mean <= max(abs(vs.min), abs(vs.max))

    def test_missing_type_rejected(self):
        a = AtomicGloss(parent_id="p", text="t", language=Language.EN, sgns=np.ones(4))
        with pytest.raises(ValidationError):
            vector_stats([a], "electra")
