"""Unigram language-model subword tokenizer.

Training follows the classic recipe: seed a large candidate vocabulary
from frequent substrings, refine piece probabilities with EM over the
segmentation lattice (forward-backward, so all segmentations contribute),
then repeatedly prune the pieces whose removal costs the least corpus
likelihood until the requested vocabulary size is reached. Encoding is
maximum-likelihood Viterbi segmentation.

Whitespace handling: spaces are mapped to the meta-symbol "▁", which
ends up prefixed to word-initial pieces, so decoding is an exact inverse
(`decode(encode(x)) == x` for any text over covered characters).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

BOUNDARY = "▁"
UNK_SURFACE = "⁇"

SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

MAX_PIECE_LEN = 8

_MAGIC = "glosslab-unigram v1"


@dataclass
class TokenizerModel:
    """Trained unigram vocabulary: piece -> natural-log probability."""

    pieces: dict[str, float]
    char_coverage: float = 1.0
    piece_ids: dict[str, int] = field(default_factory=dict)
    id_pieces: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.piece_ids:
            ordered = sorted(self.pieces, key=lambda p: (-self.pieces[p], p))
            self.id_pieces = list(SPECIALS) + ordered
            self.piece_ids = {p: i for i, p in enumerate(self.id_pieces)}

    @property
    def vocab_size(self) -> int:
        return len(self.id_pieces)

    @classmethod
    def from_probs(cls, probs: dict[str, float], char_coverage: float = 1.0) -> "TokenizerModel":
        """Build a model directly from piece probabilities (mostly for tests)."""
        total = sum(probs.values())
        return cls(
            pieces={p: math.log(v / total) for p, v in probs.items()},
            char_coverage=char_coverage,
        )

    def save(self, path) -> None:
        lines = [
            _MAGIC,
            f"vocab_size={self.vocab_size}",
            f"char_coverage={self.char_coverage!r}",
            "specials=" + "\t".join(SPECIALS),
            f"pieces={len(self.pieces)}",
        ]
        for piece in self.id_pieces[len(SPECIALS):]:
            lines.append(f"{json.dumps(piece, ensure_ascii=False)}\t{self.pieces[piece]!r}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != _MAGIC:
            raise ValidationError(f"{path}: not a {_MAGIC} model file")
        header = {}
        i = 1
        while "=" in lines[i]:
            key, val = lines[i].split("=", 1)
            header[key] = val
            i += 1
            if key == "pieces":
                break
        n = int(header["pieces"])
        pieces = {}
        for line in lines[i:i + n]:
            raw_piece, raw_lp = line.split("\t")
            pieces[json.loads(raw_piece)] = float(raw_lp)
        model = cls(pieces=pieces, char_coverage=float(header["char_coverage"]))
        if model.vocab_size != int(header["vocab_size"]):
            raise ValidationError(f"{path}: vocab_size header does not match piece count")
        return model


# ---------------------------------------------------------------------------
# Text normalization
# ---------------------------------------------------------------------------

def normalize_text(text: str) -> str:
    return text.replace(" ", BOUNDARY)


def denormalize_text(text: str) -> str:
    return text.replace(BOUNDARY, " ")


def _chunks(norm: str) -> list[str]:
    """Split normalized text into word chunks, each starting at a boundary mark."""
    out = []
    start = 0
    for i, ch in enumerate(norm):
        if ch == BOUNDARY and i != start:
            out.append(norm[start:i])
            start = i
    if start < len(norm):
        out.append(norm[start:])
    return out


# ---------------------------------------------------------------------------
# Lattice routines (shared by EM, pruning, and encoding)
# ---------------------------------------------------------------------------

def _viterbi(word: str, logp: dict[str, float], max_len: int = MAX_PIECE_LEN,
             banned: Optional[str] = None) -> tuple[Optional[list[str]], float]:
    """Max-likelihood segmentation of one chunk.

    Ties break toward fewer tokens, then the lexicographically smallest
    first piece; the DP runs right to left so both rules apply greedily at
    every suffix. Returns (None, -inf) if the chunk cannot be segmented.
    """
    n = len(word)
    INF = float("inf")
    # best[i]: (score, ntok, piece, next position) for suffix word[i:]
    best: list[Optional[tuple]] = [None] * (n + 1)
    best[n] = (0.0, 0, "", n)
    for i in range(n - 1, -1, -1):
        choice = None
        for j in range(i + 1, min(n, i + max_len) + 1):
            sub = word[i:j]
            if sub == banned:
                continue
            lp = logp.get(sub)
            if lp is None or best[j] is None:
                continue
            score = lp + best[j][0]
            ntok = 1 + best[j][1]
            if (choice is None or score > choice[0]
                    or (score == choice[0] and (ntok, sub) < (choice[1], choice[2]))):
                choice = (score, ntok, sub, j)
        best[i] = choice
    if best[0] is None:
        return None, -INF
    tokens = []
    i = 0
    while i < n:
        _, _, piece, nxt = best[i]
        tokens.append(piece)
        i = nxt
    return tokens, best[0][0]


def _forward_backward(word: str, logp: dict[str, float], max_len: int = MAX_PIECE_LEN):
    """Marginal log-likelihood and per-edge posteriors for one chunk."""
    n = len(word)
    NEG = -math.inf
    alpha = [NEG] * (n + 1)
    alpha[0] = 0.0
    edges = []  # (i, j, piece, lp)
    for i in range(n):
        if alpha[i] == NEG:
            continue
        for j in range(i + 1, min(n, i + max_len) + 1):
            lp = logp.get(word[i:j])
            if lp is None:
                continue
            edges.append((i, j, word[i:j], lp))
            val = alpha[i] + lp
            alpha[j] = val if alpha[j] == NEG else _logaddexp(alpha[j], val)
    total = alpha[n]
    if total == NEG:
        return NEG, []
    beta = [NEG] * (n + 1)
    beta[n] = 0.0
    for i, j, piece, lp in reversed(edges):
        val = lp + beta[j]
        beta[i] = val if beta[i] == NEG else _logaddexp(beta[i], val)
    posts = []
    for i, j, piece, lp in edges:
        posts.append((piece, math.exp(alpha[i] + lp + beta[j] - total)))
    return total, posts


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _char_frequencies(word_counts: Counter) -> Counter:
    freq = Counter()
    for word, cnt in word_counts.items():
        for ch in word:
            freq[ch] += cnt
    return freq


def _required_chars(char_freq: Counter, coverage: float) -> set[str]:
    ordered = sorted(char_freq.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(char_freq.values())
    kept, acc = set(), 0
    for ch, cnt in ordered:
        if acc >= coverage * total and kept:
            break
        kept.add(ch)
        acc += cnt
    return kept


def _seed_candidates(word_counts: Counter, required: set[str], seed_size: int) -> dict[str, float]:
    """Most promising substrings (frequency x length) plus all required chars."""
    sub_freq = Counter()
    for word, cnt in word_counts.items():
        n = len(word)
        if any(ch not in required for ch in word):
            continue
        for i in range(n):
            for j in range(i + 2, min(n, i + MAX_PIECE_LEN) + 1):
                sub_freq[word[i:j]] += cnt
    ranked = sorted(sub_freq.items(), key=lambda kv: (-kv[1] * len(kv[0]), kv[0]))
    char_freq = _char_frequencies(word_counts)
    seeds = {ch: float(char_freq[ch]) for ch in required}
    for piece, cnt in ranked[:seed_size]:
        seeds[piece] = float(cnt)
    return seeds


def _em_round(word_counts: Counter, logp: dict[str, float]) -> tuple[dict[str, float], float]:
    """One EM iteration. Returns new log-probs and the data log-likelihood
    under the *current* parameters (the quantity EM never decreases)."""
    expected = defaultdict(float)
    total_ll = 0.0
    for word, cnt in word_counts.items():
        ll, posts = _forward_backward(word, logp)
        if ll == -math.inf:
            continue
        total_ll += cnt * ll
        for piece, post in posts:
            expected[piece] += cnt * post
    total = sum(expected.values())
    new_logp = {}
    for piece in logp:
        c = expected.get(piece, 0.0)
        new_logp[piece] = math.log(max(c, 1e-300) / total)
    return new_logp, total_ll


def _prune(word_counts: Counter, logp: dict[str, float], keep: int) -> dict[str, float]:
    """Drop the pieces whose removal least decreases corpus likelihood.

    Single characters are never dropped, so segmentation stays total.
    The cost of removing a piece is its Viterbi usage times the score gap
    to the best alternative segmentation of its own surface.
    """
    usage = defaultdict(float)
    for word, cnt in word_counts.items():
        tokens, _ = _viterbi(word, logp)
        if tokens is None:
            continue
        for t in tokens:
            usage[t] += cnt
    losses = []
    protected = []
    for piece, lp in logp.items():
        if len(piece) == 1:
            protected.append(piece)
            continue
        alt_tokens, alt_score = _viterbi(piece, logp, banned=piece)
        if alt_tokens is None:
            protected.append(piece)
            continue
        losses.append((usage.get(piece, 0.0) * (lp - alt_score), piece))
    n_free = keep - len(protected)
    if n_free < 0:
        raise ConfigError("vocab_size smaller than the required character set")
    losses.sort(key=lambda kv: (-kv[0], kv[1]))
    kept = set(protected) | {piece for _, piece in losses[:n_free]}
    pruned = {p: lp for p, lp in logp.items() if p in kept}
    # renormalize over the survivors
    total = _logsumexp(list(pruned.values()))
    return {p: lp - total for p, lp in pruned.items()}


def _logsumexp(vals: Sequence[float]) -> float:
    m = max(vals)
    return m + math.log(sum(math.exp(v - m) for v in vals))


def corpus_loglik(model_or_logp, corpus: Iterable[str]) -> float:
    """Marginal log-likelihood of a corpus under a piece distribution."""
    logp = model_or_logp.pieces if isinstance(model_or_logp, TokenizerModel) else model_or_logp
    total = 0.0
    for text in corpus:
        for chunk in _chunks(normalize_text(text)):
            ll, _ = _forward_backward(chunk, logp)
            if ll != -math.inf:
                total += ll
    return total


def train(
    corpus: Sequence[str],
    vocab_size: int,
    seed_size: Optional[int] = None,
    char_coverage: float = 1.0,
    em_iters_per_round: int = 2,
    shrink_ratio: float = 0.75,
    ll_trace: Optional[list] = None,
) -> TokenizerModel:
    """Train a unigram vocabulary of `vocab_size` entries (specials included).

    `ll_trace`, when given, collects the corpus log-likelihood at every EM
    iteration; it is non-decreasing within each pruning round.
    """
    if not corpus or not any(t for t in corpus):
        raise ValidationError("tokenizer training corpus is empty")
    word_counts = Counter()
    for text in corpus:
        for chunk in _chunks(normalize_text(text)):
            word_counts[chunk] += 1
    char_freq = _char_frequencies(word_counts)
    required = _required_chars(char_freq, char_coverage)
    target_pieces = vocab_size - len(SPECIALS)
    if target_pieces < len(required):
        raise ConfigError(
            f"vocab_size {vocab_size} cannot hold {len(required)} required "
            f"characters plus {len(SPECIALS)} specials"
        )
    if char_coverage < 1.0:
        # drop chunks containing out-of-coverage characters from training
        word_counts = Counter(
            {w: c for w, c in word_counts.items() if all(ch in required for ch in w)}
        )

    seed_size = seed_size if seed_size is not None else 20 * vocab_size
    seeds = _seed_candidates(word_counts, required, seed_size)
    total = sum(seeds.values())
    logp = {p: math.log(v / total) for p, v in seeds.items()}

    while True:
        for _ in range(em_iters_per_round):
            logp, ll = _em_round(word_counts, logp)
            if ll_trace is not None:
                ll_trace.append(ll)
        if len(logp) <= target_pieces:
            break
        keep = max(target_pieces, int(math.ceil(shrink_ratio * len(logp))))
        logp = _prune(word_counts, logp, keep)
        if len(logp) <= target_pieces:
            for _ in range(em_iters_per_round):
                logp, ll = _em_round(word_counts, logp)
                if ll_trace is not None:
                    ll_trace.append(ll)
            break

    if len(logp) < target_pieces:
        log.warning(
            "corpus supports only %d pieces; vocabulary smaller than requested %d",
            len(logp) + len(SPECIALS), vocab_size,
        )
    return TokenizerModel(pieces=logp, char_coverage=char_coverage)


# ---------------------------------------------------------------------------
# Encoding / decoding
# ---------------------------------------------------------------------------

# Score of covering one character with <unk>: worse than any real path, so
# unk edges appear only where no piece segmentation exists.
UNK_EDGE_LP = -1e6


def _viterbi_with_unk(word: str, logp: dict[str, float],
                      max_len: int = MAX_PIECE_LEN) -> list[Optional[str]]:
    """Segmentation that always succeeds: positions no piece can cover are
    taken by single-character unk edges (returned as None)."""
    n = len(word)
    # best[i]: (score, ntok, piece_or_None, next) for suffix word[i:]
    best: list[Optional[tuple]] = [None] * (n + 1)
    best[n] = (0.0, 0, "", n)
    for i in range(n - 1, -1, -1):
        nxt = best[i + 1]
        choice = (UNK_EDGE_LP + nxt[0], 1 + nxt[1], None, i + 1)
        for j in range(i + 1, min(n, i + max_len) + 1):
            lp = logp.get(word[i:j])
            if lp is None or best[j] is None:
                continue
            sub = word[i:j]
            score = lp + best[j][0]
            ntok = 1 + best[j][1]
            if (score > choice[0]
                    or (score == choice[0]
                        and (ntok, sub) < (choice[1], choice[2] or ""))):
                choice = (score, ntok, sub, j)
        best[i] = choice
    pieces = []
    i = 0
    while i < n:
        _, _, piece, nxt = best[i]
        pieces.append(piece)
        i = nxt
    return pieces


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Viterbi-optimal token ids; unknown characters map to <unk>."""
    if not text:
        return []
    ids = []
    for chunk in _chunks(normalize_text(text)):
        for piece in _viterbi_with_unk(chunk, model.pieces):
            ids.append(UNK_ID if piece is None else model.piece_ids[piece])
    return ids


def decode(model: TokenizerModel, ids: Sequence[int]) -> str:
    """Invert encode. Specials other than <unk> vanish; <unk> prints as ⁇."""
    out = []
    for i in ids:
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        if i == UNK_ID:
            out.append(UNK_SURFACE)
            continue
        if not 0 <= i < model.vocab_size:
            raise ValidationError(f"token id {i} outside vocabulary of {model.vocab_size}")
        out.append(model.id_pieces[i])
    return denormalize_text("".join(out))


def sample_encode(model: TokenizerModel, text: str, rng: np.random.Generator,
                  alpha: float = 1.0) -> list[int]:
    """Sample a segmentation proportional to its probability^alpha.

    Off by default everywhere; deterministic Viterbi `encode` is the
    standard path.
    """
    if not text:
        return []
    ids = []
    powered = {p: lp * alpha for p, lp in model.pieces.items()}
    for chunk in _chunks(normalize_text(text)):
        ids.extend(_sample_chunk(model, powered, chunk, rng))
    return ids


def _sample_chunk(model, powered, chunk, rng) -> list[int]:
    n = len(chunk)
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    incoming: list[list] = [[] for _ in range(n + 1)]
    for i in range(n):
        if alpha[i] == -math.inf:
            continue
        for j in range(i + 1, min(n, i + MAX_PIECE_LEN) + 1):
            lp = powered.get(chunk[i:j])
            if lp is None:
                continue
            incoming[j].append((i, chunk[i:j], lp))
            val = alpha[i] + lp
            alpha[j] = val if alpha[j] == -math.inf else _logaddexp(alpha[j], val)
    if alpha[n] == -math.inf:
        # characters outside the vocabulary: fall back to the deterministic path
        return [UNK_ID if p is None else model.piece_ids[p]
                for p in _viterbi_with_unk(chunk, model.pieces)]
    pieces = []
    pos = n
    while pos > 0:
        opts = incoming[pos]
        weights = np.array([alpha[i] + lp for i, _, lp in opts])
        weights = np.exp(weights - weights.max())
        weights /= weights.sum()
        pick = rng.choice(len(opts), p=weights)
        i, piece, _ = opts[pick]
        pieces.append(piece)
        pos = i
    return [model.piece_ids[p] for p in reversed(pieces)]
