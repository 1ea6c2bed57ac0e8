import json

import numpy as np
import pytest

from glosslab.corpus import EMBEDDING_DIM, GlossRecord, Language


def make_record(rid="r0", gloss="a fool", language=Language.EN, seed=0, types=("sgns",)):
    rng = np.random.default_rng(seed)
    vecs = {t: rng.normal(size=EMBEDDING_DIM) for t in types}
    return GlossRecord(id=rid, gloss=gloss, language=language, **vecs)


def write_dataset(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(entries, f, ensure_ascii=False)
    return path


@pytest.fixture
def toy_dataset_file(tmp_path):
    """Ten-record English file in the on-disk JSON shape."""
    rng = np.random.default_rng(7)
    entries = []
    glosses = [
        "a fool; an idiot",
        "to cut with scissors",
        "a small boat.",
        "the act of running",
        "not bright; dim",
        "a large mammal",
        "to speak loudly!",
        "belonging to the navy",
        "a written agreement",
        "in a slow manner",
    ]
    for i, g in enumerate(glosses):
        entries.append(
            {
                "id": f"en.{i}",
                "gloss": g,
                "sgns": rng.normal(size=EMBEDDING_DIM).tolist(),
                "char": rng.normal(size=EMBEDDING_DIM).tolist(),
            }
        )
    return write_dataset(tmp_path / "en.train.json", entries)
