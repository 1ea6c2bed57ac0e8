"""Evaluation metrics: MSE, cosine, cosine-based ranking, linear CKA, BLEU,
Spearman correlation, and the train-similarity probe.

Everything here is a pure function over numpy arrays (float64 internally).
The ranking metric RNK is the retrieval-oriented score: for each sample,
the fraction of reference embeddings whose cosine to the prediction
strictly exceeds the cosine to the sample's own reference; 0 is perfect,
0.5 is what random predictions get.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special as sps

from .errors import ValidationError

log = logging.getLogger(__name__)

_RANGES = {
    "rnk": (0.0, 1.0),
    "cos": (-1.0, 1.0),
    "cka": (0.0, 1.0),
    "bleu": (0.0, 1.0),
    "mse": (0.0, math.inf),
}


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D array of vectors, got shape {arr.shape}")
    return arr


def mse(pred, gt) -> float:
    """Mean over samples of the mean squared component error."""
    p, g = _as_matrix(pred, "pred"), _as_matrix(gt, "gt")
    if p.shape != g.shape:
        raise ValidationError(f"mse: shapes differ, {p.shape} vs {g.shape}")
    return float(((p - g) ** 2).mean())


def cos(pred, gt) -> float:
    """Mean cosine similarity; zero-norm vectors contribute 0 with a warning."""
    p, g = _as_matrix(pred, "pred"), _as_matrix(gt, "gt")
    if p.shape != g.shape:
        raise ValidationError(f"cos: shapes differ, {p.shape} vs {g.shape}")
    np_norm = np.linalg.norm(p, axis=1)
    ng_norm = np.linalg.norm(g, axis=1)
    ok = (np_norm > 0) & (ng_norm > 0)
    if not ok.all():
        log.warning("cos: %d zero-norm vectors contribute 0", int((~ok).sum()))
    sims = np.zeros(len(p))
    sims[ok] = (p[ok] * g[ok]).sum(axis=1) / (np_norm[ok] * ng_norm[ok])
    return float(sims.mean())


def cka_linear(X, Y) -> float:
    """Linear centered kernel alignment between two representations.

    Invariant to orthogonal transforms and isotropic scaling of either
    argument; 0 when either representation is constant.
    """
    X, Y = _as_matrix(X, "X"), _as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0] or X.shape[0] < 2:
        raise ValidationError(f"cka: need matching sample counts >= 2, got {X.shape} vs {Y.shape}")
    Xc = X - X.mean(axis=0, keepdims=True)
    Yc = Y - Y.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(Xc.T @ Yc, "fro") ** 2
    nx = np.linalg.norm(Xc.T @ Xc, "fro")
    ny = np.linalg.norm(Yc.T @ Yc, "fro")
    if nx == 0 or ny == 0:
        return 0.0
    return float(cross / (nx * ny))


def rnk(preds, gts) -> float:
    """Cosine-based ranking: mean fraction of references that beat the own
    reference in cosine to the prediction (strict inequality, ties do not
    count, denominator N). Lower is better."""
    p, g = _as_matrix(preds, "preds"), _as_matrix(gts, "gts")
    if p.shape[0] != g.shape[0] or p.shape[0] == 0:
        raise ValidationError(f"rnk: need equal non-zero sample counts, got {p.shape} vs {g.shape}")
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn == 0):
        raise ValidationError("rnk: ground-truth embeddings must be non-zero")
    pn = np.linalg.norm(p, axis=1)
    pn[pn == 0] = 1.0
    sims = (p / pn[:, None]) @ (g / gn[:, None]).T
    own = np.diag(sims)
    beaten = (sims > own[:, None]).sum(axis=1)
    return float((beaten / p.shape[0]).mean())


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Corpus-style BLEU for one pair: geometric mean of clipped n-gram
    precisions (add-1 smoothing on numerator and denominator for n >= 2)
    times the brevity penalty."""
    cand = list(candidate)
    ref = list(reference)
    if not cand:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        cand_ngrams = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
        ref_ngrams = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        clipped = sum(min(c, ref_ngrams[gram]) for gram, c in cand_ngrams.items())
        total = sum(cand_ngrams.values())
        if n == 1:
            if clipped == 0:
                return 0.0
            logs.append(math.log(clipped / total))
        else:
            if total == 0:
                continue  # candidate shorter than n: no evidence either way
            logs.append(math.log((clipped + 1) / (total + 1)))
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return bp * math.exp(sum(logs) / len(logs))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _rank_corr(rx: np.ndarray, ry: np.ndarray) -> float:
    rxc = rx - rx.mean()
    ryc = ry - ry.mean()
    denom = math.sqrt((rxc ** 2).sum() * (ryc ** 2).sum())
    if denom == 0:
        raise ValidationError("spearman: an input is constant")
    return float((rxc * ryc).sum() / denom)


def spearman(xs, ys) -> tuple[float, float]:
    """Spearman rank correlation with a two-sided p-value.

    Exact permutation p-value for n <= 10, the t-distribution
    approximation above that.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValidationError("spearman: need two equal-length 1-D inputs of length >= 3")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rho = _rank_corr(rx, ry)
    n = len(x)
    if n <= 10:
        target = abs(rho) - 1e-12
        hits = total = 0
        for perm in itertools.permutations(range(n)):
            total += 1
            if abs(_rank_corr(rx, ry[list(perm)])) >= target:
                hits += 1
        return rho, hits / total
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * sps.stdtr(n - 2, -abs(t))
    return rho, float(p)


def train_similarity(test_embedding, train_embeddings, k: int = 10) -> float:
    """Mean of the k largest cosines between one vector and a reference set."""
    v = np.asarray(test_embedding, dtype=np.float64)
    M = _as_matrix(train_embeddings, "train_embeddings")
    sims = (M @ v) / (np.linalg.norm(M, axis=1) * np.linalg.norm(v))
    k = min(k, len(sims))
    top = np.sort(sims)[-k:]
    return float(top.mean())


@dataclass
class MetricReport:
    """Named scalar scores keyed by (language, embedding type or 'text', metric)."""

    entries: dict[tuple[str, str, str], float] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, language: str, target: str, metric: str, value: float) -> None:
        lo, hi = _RANGES.get(metric, (-math.inf, math.inf))
        if not lo - 1e-9 <= value <= hi + 1e-9:
            raise ValidationError(f"{metric} value {value} outside [{lo}, {hi}]")
        self.entries[(language, target, metric)] = float(value)

    def get(self, language: str, target: str, metric: str) -> float:
        return self.entries[(language, target, metric)]

    def to_json_dict(self) -> dict[str, float]:
        flat = {f"{l}/{t}/{m}": v for (l, t, m), v in sorted(self.entries.items())}
        if self.metadata:
            flat["_metadata"] = dict(self.metadata)
        return flat

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MetricReport":
        report = cls()
        for key, val in obj.items():
            if key == "_metadata":
                report.metadata = dict(val)
                continue
            lang, target, metric = key.split("/")
            report.entries[(lang, target, metric)] = float(val)
        return report

    def save(self, path) -> None:
        from .serialize import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))

    def to_table(self) -> str:
        """Aligned text table: one row per (language, target), metric columns."""
        metrics = sorted({m for (_, _, m) in self.entries})
        rows = sorted({(l, t) for (l, t, _) in self.entries})
        head = f"{'lang':<6}{'target':<10}" + "".join(f"{m:>10}" for m in metrics)
        lines = [head, "-" * len(head)]
        for lang, target in rows:
            cells = []
            for m in metrics:
                v = self.entries.get((lang, target, m))
                cells.append(f"{v:>10.3f}" if v is not None else f"{'-':>10}")
            lines.append(f"{lang:<6}{target:<10}" + "".join(cells))
        return "\n".join(lines)
