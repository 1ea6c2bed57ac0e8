"""Dataset loading, gloss transformation, and descriptive statistics.

The on-disk format is the CODWOE JSON shape: an array of objects with an
``id``, a ``gloss`` string, and up to three 256-dim embedding vectors
keyed ``sgns``, ``char``, and ``electra``. Trial files additionally carry
the original ``word``.

The transformation pipeline turns each record into one or more *atomic
glosses*: the leading lexicographic label (non-English languages only) is
stripped, the text is split into separate definitions around ";", and each
piece is lowercased and cleared of trailing punctuation. Every atomic
gloss keeps all embedding vectors of its parent record.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

EMBEDDING_DIM = 256
EMBEDDING_TYPES = ("sgns", "char", "electra")

# Punctuation stripped iteratively from gloss ends during normalization.
TRAILING_PUNCT = {".", ",", ";", ":", "!", "?"}


class Language(str, Enum):
    EN = "en"
    ES = "es"
    FR = "fr"
    IT = "it"
    RU = "ru"


@dataclass
class GlossRecord:
    """One dataset entry: an identifier, its gloss, and embedding vectors."""

    id: str
    gloss: str
    language: Language
    word: Optional[str] = None
    sgns: Optional[np.ndarray] = None
    char: Optional[np.ndarray] = None
    electra: Optional[np.ndarray] = None

    def embedding(self, kind: str) -> Optional[np.ndarray]:
        if kind not in EMBEDDING_TYPES:
            raise ValidationError(f"unknown embedding type {kind!r}")
        return getattr(self, kind)

    def embedding_types(self) -> tuple[str, ...]:
        return tuple(k for k in EMBEDDING_TYPES if getattr(self, k) is not None)


@dataclass
class AtomicGloss:
    """A single definition extracted from a parent record."""

    parent_id: str
    text: str
    language: Language
    sgns: Optional[np.ndarray] = None
    char: Optional[np.ndarray] = None
    electra: Optional[np.ndarray] = None

    def embedding(self, kind: str) -> Optional[np.ndarray]:
        if kind not in EMBEDDING_TYPES:
            raise ValidationError(f"unknown embedding type {kind!r}")
        return getattr(self, kind)

    def embedding_types(self) -> tuple[str, ...]:
        return tuple(k for k in EMBEDDING_TYPES if getattr(self, k) is not None)


@dataclass
class CorpusStats:
    dict_size: int
    n_tokens: int
    n_glosses: int
    gloss_size: dict[str, float] = field(default_factory=dict)


@dataclass
class VectorStats:
    min: float
    mean: float
    max: float
    abs_min: float
    abs_mean: float
    abs_max: float


def _parse_vector(raw, record_id: str, key: str) -> np.ndarray:
    vec = np.asarray(raw, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != EMBEDDING_DIM:
        raise ValidationError(
            f"record {record_id!r}: {key} vector has {vec.size} elements, "
            f"expected {EMBEDDING_DIM}"
        )
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"record {record_id!r}: {key} vector has non-finite elements")
    return vec


def load_dataset(
    path,
    language: Language,
    require_gloss: bool = True,
    require_embedding: bool = True,
) -> list[GlossRecord]:
    """Load a CODWOE JSON file into validated records.

    ``require_gloss`` / ``require_embedding`` are relaxed for prediction
    inputs (generation-side test files carry vectors but no gloss, and
    regression-side test files the reverse).
    """
    language = Language(language)
    with open(path, "rb") as f:
        raw = f.read()
    text = raw.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        byte_offset = len(text[: e.pos].encode("utf-8"))
        raise ValidationError(f"{path}: malformed JSON at byte offset {byte_offset}: {e.msg}") from e
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array of records")

    records = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict) or "id" not in obj:
            raise ValidationError(f"{path}: entry {i} is not an object with an 'id'")
        rid = str(obj["id"])
        gloss = obj.get("gloss", "")
        if require_gloss and not str(gloss).strip():
            raise ValidationError(f"record {rid!r}: empty or missing gloss")
        vectors = {}
        for key in EMBEDDING_TYPES:
            if obj.get(key) is not None:
                vectors[key] = _parse_vector(obj[key], rid, key)
        if require_embedding and not vectors:
            raise ValidationError(f"record {rid!r}: no embedding vector present")
        records.append(
            GlossRecord(
                id=rid,
                gloss=str(gloss),
                language=language,
                word=obj.get("word"),
                **vectors,
            )
        )
    return records


def save_dataset(records: Iterable, path) -> None:
    """Write records (GlossRecord or AtomicGloss) back to the JSON shape."""
    out = []
    counters: dict[str, int] = {}
    for rec in records:
        if isinstance(rec, AtomicGloss):
            k = counters.get(rec.parent_id, 0)
            counters[rec.parent_id] = k + 1
            obj = {"id": f"{rec.parent_id}.{k}", "gloss": rec.text}
        else:
            obj = {"id": rec.id, "gloss": rec.gloss}
            if rec.word is not None:
                obj["word"] = rec.word
        for key in EMBEDDING_TYPES:
            vec = getattr(rec, key)
            if vec is not None:
                obj[key] = [float(x) for x in vec]
        out.append(obj)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Transformation pipeline
# ---------------------------------------------------------------------------

def _load_label_rules() -> dict:
    with resources.files("glosslab.data").joinpath("label_rules.json").open("rb") as f:
        return json.load(f)


_RULES = _load_label_rules()


def _compile_rules(language: Language) -> list[tuple[re.Pattern, str]]:
    conf = _RULES["languages"][language.value]
    pats = []
    if conf.get("paren"):
        n = _RULES.get("paren_max_words", 6)
        # A leading "(...)" span containing at most n whitespace-separated words.
        pats.append((re.compile(r"^\(\s*[^()\s]+(?:\s+[^()\s]+){0,%d}\s*\)\s*" % (n - 1)), "paren"))
    if conf.get("capdot"):
        pats.append((re.compile(r"^[^\W\d_]{2,24}[.:]\s+(?=\S)"), "capdot"))
    for extra in conf.get("extra", []):
        pats.append((re.compile(extra), "extra"))
    return pats


_COMPILED: dict[Language, list[tuple[re.Pattern, str]]] = {}


def strip_label(gloss: str, language: Language) -> str:
    """Remove one leading lexicographic label, if the language rules match.

    English glosses carry no labels and pass through unchanged. The
    'capdot' rule only fires on a capitalized domain word, so glosses that
    merely start with a lowercase abbreviation keep their text unless a
    language-specific extra rule covers it.
    """
    language = Language(language)
    if language is Language.EN:
        return gloss
    if language not in _COMPILED:
        _COMPILED[language] = _compile_rules(language)
    for pat, kind in _COMPILED[language]:
        m = pat.match(gloss)
        if m is None:
            continue
        if kind == "capdot" and not gloss[:1].isupper():
            continue
        return gloss[m.end():].lstrip()
    return gloss


def split_atomic(gloss: str) -> list[str]:
    """Split a gloss into atomic definitions around ';', dropping empties."""
    return [seg.strip() for seg in gloss.split(";") if seg.strip()]


def normalize(gloss: str) -> str:
    """Lowercase and iteratively strip trailing sentence punctuation."""
    out = gloss.lower()
    while out and out[-1] in TRAILING_PUNCT:
        out = out[:-1].rstrip()
    return out.strip()


def transform_dataset(
    records: Sequence[GlossRecord],
) -> tuple[list[AtomicGloss], list[tuple[str, str]]]:
    """Expand records into atomic glosses.

    Returns the atomic glosses plus a transformation log of
    (record id, action) pairs suitable for a line-oriented audit file.
    Records whose gloss vanishes entirely are dropped with a warning.
    """
    atomics: list[AtomicGloss] = []
    actions: list[tuple[str, str]] = []
    for rec in records:
        stripped = strip_label(rec.gloss, rec.language)
        if stripped != rec.gloss:
            actions.append((rec.id, "label_stripped"))
        pieces = split_atomic(stripped)
        if len(pieces) > 1:
            actions.append((rec.id, f"split:{len(pieces)}"))
        kept = 0
        for piece in pieces:
            text = normalize(piece)
            if not text:
                actions.append((rec.id, "dropped_empty_piece"))
                continue
            atomics.append(
                AtomicGloss(
                    parent_id=rec.id,
                    text=text,
                    language=rec.language,
                    sgns=rec.sgns,
                    char=rec.char,
                    electra=rec.electra,
                )
            )
            kept += 1
        if kept == 0:
            actions.append((rec.id, "dropped_record"))
            log.warning("record %s reduced to zero atomic glosses; skipped", rec.id)
    return atomics, actions


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

def gloss_stats(glosses: Sequence[str]) -> CorpusStats:
    """Whitespace-token statistics over a collection of gloss strings.

    Standard deviation uses the population formula; quartiles interpolate
    linearly between closest ranks, so results are deterministic.
    """
    if not glosses:
        raise ValidationError("gloss_stats requires a non-empty input")
    sizes = np.array([len(g.split()) for g in glosses], dtype=np.float64)
    vocab = set()
    for g in glosses:
        vocab.update(g.split())
    q25, median, q75 = np.percentile(sizes, [25, 50, 75], method="linear")
    return CorpusStats(
        dict_size=len(vocab),
        n_tokens=int(sizes.sum()),
        n_glosses=len(glosses),
        gloss_size={
            "mean": float(sizes.mean()),
            "st_dev": float(sizes.std(ddof=0)),
            "min": float(sizes.min()),
            "q25": float(q25),
            "median": float(median),
            "q75": float(q75),
            "max": float(sizes.max()),
        },
    )


def vector_stats(records: Sequence, embedding_type: str) -> VectorStats:
    """Element-level statistics across all vectors of one embedding type."""
    mats = [rec.embedding(embedding_type) for rec in records]
    mats = [m for m in mats if m is not None]
    if not mats:
        raise ValidationError(f"no record carries embedding type {embedding_type!r}")
    flat = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in mats])
    absflat = np.abs(flat)
    return VectorStats(
        min=float(flat.min()),
        mean=float(flat.mean()),
        max=float(flat.max()),
        abs_min=float(absflat.min()),
        abs_mean=float(absflat.mean()),
        abs_max=float(absflat.max()),
    )


def stats_row(stats: CorpusStats) -> str:
    """One aligned table row in the layout used by the stats report."""
    gs = stats.gloss_size
    return (
        f"{stats.dict_size:>9d} {stats.n_tokens:>9d} {stats.n_glosses:>9d} "
        f"{gs['mean']:>7.2f} {gs['st_dev']:>7.2f} {gs['min']:>4.0f} "
        f"{gs['q25']:>5.1f} {gs['median']:>6.1f} {gs['q75']:>5.1f} {gs['max']:>5.0f}"
    )


def texts(records: Sequence) -> list[str]:
    """Gloss strings of records or atomic glosses, in order."""
    out = []
    for rec in records:
        out.append(rec.text if isinstance(rec, AtomicGloss) else rec.gloss)
    return out


def check_gloss_size_sanity(stats: CorpusStats) -> None:
    gs = stats.gloss_size
    if not (gs["min"] <= gs["q25"] <= gs["median"] <= gs["q75"] <= gs["max"]):
        raise ValidationError("gloss size quantiles out of order")
    if not math.isfinite(gs["mean"]):
        raise ValidationError("gloss size mean is not finite")
