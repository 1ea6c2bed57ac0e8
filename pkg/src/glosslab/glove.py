"""GloVe embeddings for subword tokens, trained on tokenized atomic glosses.

Co-occurrence counts are windowed within a gloss (never across glosses)
with 1/distance weighting. Training minimizes the weighted least-squares
objective over log counts with per-parameter AdaGrad in a fixed data
order, so runs are deterministic. The exported embedding of a token is
the sum of its main and context vectors.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ValidationError


@dataclass
class CoocMatrix:
    counts: dict[tuple[int, int], float]
    window: int
    symmetric: bool = True

    def __len__(self):
        return len(self.counts)


@dataclass
class GloveModel:
    w: np.ndarray        # main vectors, V x dim
    w_ctx: np.ndarray    # context vectors
    b: np.ndarray        # biases, V
    b_ctx: np.ndarray
    x_max: float = 10.0
    alpha: float = 0.75
    iterations: int = 50

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def embedding(self, token: int) -> np.ndarray:
        return self.w[token] + self.w_ctx[token]

    def embeddings(self) -> np.ndarray:
        return self.w + self.w_ctx


def weight_fn(x: float, x_max: float = 10.0, alpha: float = 0.75) -> float:
    """Down-weight rare pairs: (x/x_max)^alpha below the cutoff, 1 above."""
    return 1.0 if x >= x_max else (x / x_max) ** alpha


def build_cooc(token_sequences: Iterable[Sequence[int]], window: int = 10) -> CoocMatrix:
    """Accumulate 1/distance for every pair at distance <= window.

    Each unordered pair feeds both (i, j) and (j, i); a token co-occurring
    with itself feeds the diagonal once.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    counts: dict[tuple[int, int], float] = {}
    for seq in token_sequences:
        n = len(seq)
        for i in range(n):
            a = seq[i]
            for j in range(i + 1, min(n, i + window + 1)):
                b = seq[j]
                inc = 1.0 / (j - i)
                counts[(a, b)] = counts.get((a, b), 0.0) + inc
                if a != b:
                    counts[(b, a)] = counts.get((b, a), 0.0) + inc
    return CoocMatrix(counts=counts, window=window)


def total_loss(model: GloveModel, cooc: CoocMatrix) -> float:
    """The full weighted least-squares objective, recomputed from scratch."""
    loss = 0.0
    for (i, j), x in cooc.counts.items():
        inner = float(model.w[i] @ model.w_ctx[j]) + model.b[i] + model.b_ctx[j] - math.log(x)
        loss += weight_fn(x, model.x_max, model.alpha) * inner * inner
    return loss


def train_glove(
    cooc: CoocMatrix,
    dim: int = 256,
    x_max: float = 10.0,
    alpha: float = 0.75,
    iters: int = 50,
    lr: float = 0.05,
    vocab_size: Optional[int] = None,
    seed: int = 0,
    parallel_threads: int = 1,
) -> GloveModel:
    """Fit GloVe vectors by AdaGrad over the non-zero co-occurrence entries.

    The default single-threaded path visits entries in a fixed sorted order
    every epoch, so training is bit-reproducible. `parallel_threads > 1`
    opts into lock-free concurrent updates, which are faster on large
    corpora but give up determinism.
    """
    if not cooc.counts:
        raise ValidationError("co-occurrence matrix is empty")
    V = vocab_size if vocab_size is not None else 1 + max(max(i, j) for i, j in cooc.counts)
    rng = np.random.default_rng(seed)
    span = 0.5 / dim
    model = GloveModel(
        w=rng.uniform(-span, span, size=(V, dim)),
        w_ctx=rng.uniform(-span, span, size=(V, dim)),
        b=rng.uniform(-span, span, size=V),
        b_ctx=rng.uniform(-span, span, size=V),
        x_max=x_max,
        alpha=alpha,
        iterations=iters,
    )
    acc_w = np.ones((V, dim))
    acc_wc = np.ones((V, dim))
    acc_b = np.ones(V)
    acc_bc = np.ones(V)
    entries = sorted(cooc.counts.items())

    def sweep(chunk):
        for (i, j), x in chunk:
            inner = float(model.w[i] @ model.w_ctx[j]) + model.b[i] + model.b_ctx[j] - math.log(x)
            fdiff = weight_fn(x, x_max, alpha) * inner
            fdiff = min(max(fdiff, -1e4), 1e4)  # overflow guard
            gw = fdiff * model.w_ctx[j]
            gwc = fdiff * model.w[i]
            model.w[i] -= lr * gw / np.sqrt(acc_w[i])
            model.w_ctx[j] -= lr * gwc / np.sqrt(acc_wc[j])
            acc_w[i] += gw * gw
            acc_wc[j] += gwc * gwc
            model.b[i] -= lr * fdiff / math.sqrt(acc_b[i])
            model.b_ctx[j] -= lr * fdiff / math.sqrt(acc_bc[j])
            acc_b[i] += fdiff * fdiff
            acc_bc[j] += fdiff * fdiff

    for _ in range(iters):
        if parallel_threads > 1:
            import threading

            shards = [entries[k::parallel_threads] for k in range(parallel_threads)]
            threads = [threading.Thread(target=sweep, args=(s,)) for s in shards]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        else:
            sweep(entries)
    return model


# ---------------------------------------------------------------------------
# tf-idf gloss vectors (the similarity sanity inspection)
# ---------------------------------------------------------------------------

def build_idf(token_sequences: Sequence[Sequence[int]]) -> dict[int, float]:
    """idf(token) = ln(N / document frequency) over glosses."""
    if not token_sequences:
        raise ValidationError("cannot build idf from an empty corpus")
    df = Counter()
    for seq in token_sequences:
        df.update(set(seq))
    n = len(token_sequences)
    return {tok: math.log(n / d) for tok, d in df.items()}


def gloss_vector_tfidf(
    gloss_tokens: Sequence[int],
    glove: GloveModel,
    idf_table: Mapping[int, float],
) -> np.ndarray:
    """Unit-normalized tf-idf-weighted average of token vectors.

    Returns the zero vector when every weight is zero (all tokens unknown
    to the idf table, or idf exactly zero throughout).
    """
    tf = Counter(gloss_tokens)
    vec = np.zeros(glove.dim)
    wsum = 0.0
    for tok, count in tf.items():
        wt = count * idf_table.get(tok, 0.0)
        if wt == 0.0:
            continue
        vec += wt * glove.embedding(tok)
        wsum += wt
    if wsum == 0.0:
        return np.zeros(glove.dim)
    vec /= wsum
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.zeros(glove.dim)


# ---------------------------------------------------------------------------
# embedding file (text, one token per line)
# ---------------------------------------------------------------------------

def save_embeddings(path, model: GloveModel, id_pieces: Sequence[str]) -> None:
    """`piece v1 .. v_dim` per line; pieces are JSON-escaped so embedded
    spaces cannot break the column format."""
    import json

    emb = model.embeddings()
    if len(id_pieces) < emb.shape[0]:
        raise ValidationError("piece table smaller than embedding matrix")
    lines = []
    for i in range(emb.shape[0]):
        vals = " ".join("%.6g" % v for v in emb[i])
        lines.append(f"{json.dumps(id_pieces[i], ensure_ascii=False)} {vals}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_embeddings(path) -> dict[str, np.ndarray]:
    import json

    decoder = json.JSONDecoder()
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            piece, end = decoder.raw_decode(line)
            out[piece] = np.array([float(x) for x in line[end:].split()])
    return out
