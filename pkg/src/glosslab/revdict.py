"""Reverse dictionary: transformer encoder over subword tokens, pooled into
one vector, regressed onto word-embedding targets.

The encoder is a small post-norm transformer (two layers, two heads by
default) with fixed sinusoidal positions and pad-masked attention. The
pooled representation feeds one regression head per target embedding type
(rectifier, then a single affine map); with several heads the model trains
multi-task, while predictions come from the designated primary head. A
cosine retrieval index over reference embeddings supports interactive
lookup of the word behind a definition.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ValidationError
from .metrics import cka_linear, cos as cos_metric, mse as mse_metric
from .optim import AdamW, CosineWarmupSchedule, PlateauSchedule
from .rng import stream
from .serialize import atomic_write_json, load_tensors, save_tensors
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, TokenizerModel, encode

log = logging.getLogger(__name__)

AGGREGATIONS = ("sum", "average", "eos")


@dataclass(frozen=True)
class RevdictPreset:
    batch_size: int
    max_epochs: int
    hp_points: int
    scheduler: str          # "cosine" or "plateau"
    multitask: bool
    loss: str = "mse"


# The six production configurations, numbered v1..v6.
PRESETS: dict[str, RevdictPreset] = {
    "v1": RevdictPreset(1024, 20, 30, "cosine", False),
    "v2": RevdictPreset(2048, 20, 30, "cosine", False),
    "v3": RevdictPreset(4096, 20, 30, "cosine", False),
    "v4": RevdictPreset(8192, 20, 30, "cosine", False),
    "v5": RevdictPreset(2048, 150, 10, "plateau", False),
    "v6": RevdictPreset(2048, 150, 10, "plateau", True),
}


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2 * i / dim)
    enc = np.zeros((max_len, dim), dtype=np.float32)
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def aggregate(hidden: T.Tensor, mask: np.ndarray, mode: str) -> T.Tensor:
    """Pool encoder outputs over time. `mask` is 1 at real positions.

    sum/average run over non-pad positions; eos picks the representation at
    the last real position (the forced <eos>).
    """
    if mode not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {mode!r}")
    if mask.sum() == 0:
        raise ValidationError("cannot aggregate an empty token sequence")
    m = T.Tensor(mask[:, :, None].astype(np.float32))
    if mode == "sum":
        return T.tsum(T.mul(hidden, m), axis=1)
    if mode == "average":
        summed = T.tsum(T.mul(hidden, m), axis=1)
        counts = mask.sum(axis=1, keepdims=True).astype(np.float32)
        return T.mul(summed, T.Tensor(1.0 / counts))
    last = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    return hidden[np.arange(mask.shape[0]), last]


class RevdictModel:
    def __init__(
        self,
        vocab_size: int,
        head_types: Sequence[str] = ("sgns",),
        primary_head: Optional[str] = None,
        dim: int = 256,
        num_layers: int = 2,
        num_heads: int = 2,
        ff_dim: Optional[int] = None,
        out_dim: int = 256,
        dropout: float = 0.1,
        aggregation: str = "average",
        max_len: int = 256,
        relu_after_affine: bool = False,
        seed: int = 0,
        glove_table: Optional[np.ndarray] = None,
    ):
        if dim % num_heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {num_heads} heads")
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {aggregation!r}")
        if not head_types:
            raise ConfigError("need at least one regression head")
        self.vocab_size = vocab_size
        self.head_types = tuple(head_types)
        self.primary_head = primary_head or self.head_types[0]
        if self.primary_head not in self.head_types:
            raise ConfigError(f"primary head {self.primary_head!r} not among {self.head_types}")
        self.dim = dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ff_dim = ff_dim if ff_dim is not None else 4 * dim
        self.out_dim = out_dim
        self.dropout = dropout
        self.aggregation = aggregation
        self.max_len = max_len
        self.relu_after_affine = relu_after_affine
        self.positions = sinusoidal_positions(max_len + 2, dim)

        rngs = iter(stream(seed, 0, i) for i in range(16 + 16 * num_layers))
        d, ff = dim, self.ff_dim
        p: dict[str, T.Tensor] = {}
        if glove_table is not None:
            if glove_table.shape != (vocab_size, d):
                raise ValidationError(
                    f"token-vector table {glove_table.shape} does not match ({vocab_size}, {d})"
                )
            p["embed"] = T.Tensor(glove_table, requires_grad=True)
        else:
            p["embed"] = T.parameter((vocab_size, d), next(rngs))
        for l in range(num_layers):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"l{l}_{name}"] = T.parameter((d, d), next(rngs))
                p[f"l{l}_{name}_b"] = T.Tensor(np.zeros(d), requires_grad=True)
            p[f"l{l}_ln1_g"] = T.Tensor(np.ones(d), requires_grad=True)
            p[f"l{l}_ln1_b"] = T.Tensor(np.zeros(d), requires_grad=True)
            p[f"l{l}_ln2_g"] = T.Tensor(np.ones(d), requires_grad=True)
            p[f"l{l}_ln2_b"] = T.Tensor(np.zeros(d), requires_grad=True)
            p[f"l{l}_ff_w1"] = T.parameter((d, ff), next(rngs))
            p[f"l{l}_ff_b1"] = T.Tensor(np.zeros(ff), requires_grad=True)
            p[f"l{l}_ff_w2"] = T.parameter((ff, d), next(rngs))
            p[f"l{l}_ff_b2"] = T.Tensor(np.zeros(d), requires_grad=True)
        for t in self.head_types:
            p[f"head_{t}_w"] = T.parameter((d, out_dim), next(rngs))
            p[f"head_{t}_b"] = T.Tensor(np.zeros(out_dim), requires_grad=True)
        self.params = p

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    def encoder_param_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("head_")]

    # ------------------------------------------------------------------

    def _attention(self, x: T.Tensor, mask: np.ndarray, layer: int) -> T.Tensor:
        B, L, d = x.shape
        H = self.num_heads
        dh = d // H
        p = self.params

        def split_heads(t):
            return T.transpose(T.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

        q = split_heads(T.add(T.matmul(x, p[f"l{layer}_wq"]), p[f"l{layer}_wq_b"]))
        k = split_heads(T.add(T.matmul(x, p[f"l{layer}_wk"]), p[f"l{layer}_wk_b"]))
        v = split_heads(T.add(T.matmul(x, p[f"l{layer}_wv"]), p[f"l{layer}_wv_b"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        bias = np.where(mask[:, None, None, :] > 0, 0.0, -1e9).astype(np.float32)
        attn = T.softmax(T.add(scores, T.Tensor(bias)), axis=-1)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
        return T.add(T.matmul(merged, p[f"l{layer}_wo"]), p[f"l{layer}_wo_b"])

    def encode_batch(self, ids: np.ndarray, train: bool = False,
                     rng: Optional[np.random.Generator] = None,
                     use_positions: bool = True) -> T.Tensor:
        """Aggregated definition vectors for a padded id batch (B, L)."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = (ids != PAD_ID).astype(np.float32)
        keep = 1.0 - self.dropout
        p = self.params
        x = T.embedding_lookup(p["embed"], ids)
        if use_positions:
            x = T.add(x, T.Tensor(self.positions[None, : ids.shape[1], :]))
        x = T.dropout(x, keep, train, rng)
        for l in range(self.num_layers):
            attn = T.dropout(self._attention(x, mask, l), keep, train, rng)
            x = T.layer_norm(T.add(x, attn), p[f"l{l}_ln1_g"], p[f"l{l}_ln1_b"])
            ff = T.matmul(x, p[f"l{l}_ff_w1"])
            ff = T.relu(T.add(ff, p[f"l{l}_ff_b1"]))
            ff = T.add(T.matmul(ff, p[f"l{l}_ff_w2"]), p[f"l{l}_ff_b2"])
            ff = T.dropout(ff, keep, train, rng)
            x = T.layer_norm(T.add(x, ff), p[f"l{l}_ln2_g"], p[f"l{l}_ln2_b"])
        return aggregate(x, mask, self.aggregation)

    def head(self, pooled: T.Tensor, head_type: str) -> T.Tensor:
        if head_type not in self.head_types:
            raise ValidationError(f"no head for embedding type {head_type!r}")
        w = self.params[f"head_{head_type}_w"]
        b = self.params[f"head_{head_type}_b"]
        if self.relu_after_affine:
            return T.relu(T.add(T.matmul(pooled, w), b))
        return T.add(T.matmul(T.relu(pooled), w), b)

    def tokenize(self, tok: TokenizerModel, gloss: str) -> list[int]:
        """Lowercase, encode, truncate to max_len content tokens keeping
        <bos> and forcing a final <eos>."""
        content = encode(tok, gloss.lower())
        if len(content) > self.max_len - 1:
            log.warning("gloss truncated from %d to %d tokens", len(content), self.max_len - 1)
            content = content[: self.max_len - 1]
        return [BOS_ID] + content + [EOS_ID]

    def predict(self, tok: TokenizerModel, gloss: str) -> dict[str, np.ndarray]:
        """Per-head output vectors for one definition string (dropout off)."""
        ids = np.array([self.tokenize(tok, gloss)], dtype=np.int64)
        pooled = self.encode_batch(ids, train=False)
        return {t: self.head(pooled, t).data[0].copy() for t in self.head_types}


def encode_gloss(model: RevdictModel, token_ids: Sequence[int]) -> np.ndarray:
    """Aggregated encoder vector for one already-tokenized gloss."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValidationError("cannot encode an empty token sequence")
    return model.encode_batch(ids[None, :], train=False).data[0].copy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class RevdictExample:
    ids: list[int]
    targets: dict[str, np.ndarray]


@dataclass
class RevdictReport:
    epochs: list[dict] = field(default_factory=list)
    best_dev_mse: float = float("inf")
    wall_time: float = 0.0

    def to_json_dict(self):
        # wall time stays out: serialized reports must be bit-reproducible
        return {
            "epochs": self.epochs,
            "best_dev_mse": self.best_dev_mse,
        }


def prepare_revdict_examples(records: Sequence, tok: TokenizerModel,
                             model: RevdictModel) -> list[RevdictExample]:
    out = []
    for rec in records:
        text = rec.text if hasattr(rec, "text") else rec.gloss
        targets = {}
        for t in model.head_types:
            vec = rec.embedding(t)
            if vec is None:
                rid = getattr(rec, "id", None) or rec.parent_id
                raise ValidationError(f"record {rid!r} lacks target embedding {t!r}")
            targets[t] = np.asarray(vec, dtype=np.float32)
        out.append(RevdictExample(ids=model.tokenize(tok, text), targets=targets))
    return out


def _pad_batch(batch: Sequence[RevdictExample]):
    L = max(len(ex.ids) for ex in batch)
    ids = np.full((len(batch), L), PAD_ID, dtype=np.int64)
    for k, ex in enumerate(batch):
        ids[k, : len(ex.ids)] = ex.ids
    return ids


def batch_loss(model: RevdictModel, batch: Sequence[RevdictExample], train: bool,
               rng=None, cosine_weight: float = 0.0) -> T.Tensor:
    ids = _pad_batch(batch)
    pooled = model.encode_batch(ids, train=train, rng=rng)
    loss = None
    for t in model.head_types:
        pred = model.head(pooled, t)
        tgt = T.Tensor(np.stack([ex.targets[t] for ex in batch]))
        term = T.mse(pred, tgt)
        if cosine_weight:
            cos_term = T.tmean(T.cosine_similarity(pred, tgt))
            term = T.add(term, T.mul(T.add(T.mul(cos_term, -1.0), 1.0), cosine_weight))
        loss = term if loss is None else T.add(loss, term)
    return loss


def evaluate_revdict(model: RevdictModel, examples: Sequence[RevdictExample],
                     batch_size: int = 256) -> dict[str, float]:
    """Dev-set MSE / COS / CKA for the primary head."""
    preds, gts = [], []
    for lo in range(0, len(examples), batch_size):
        batch = examples[lo:lo + batch_size]
        pooled = model.encode_batch(_pad_batch(batch), train=False)
        preds.append(model.head(pooled, model.primary_head).data.copy())
        gts.append(np.stack([ex.targets[model.primary_head] for ex in batch]))
    p = np.concatenate(preds)
    g = np.concatenate(gts)
    out = {"mse": mse_metric(p, g), "cos": cos_metric(p, g)}
    out["cka"] = cka_linear(p, g) if len(p) >= 2 else 0.0
    return out


def train_revdict(
    model: RevdictModel,
    train_examples: Sequence[RevdictExample],
    dev_examples: Sequence[RevdictExample],
    batch_size: int = 2048,
    max_epochs: int = 20,
    lr: float = 1e-3,
    weight_decay: float = 0.01,
    scheduler: str = "cosine",
    warmup_fraction: float = 0.1,
    cosine_weight: float = 0.0,
    seed: int = 0,
) -> RevdictReport:
    if not train_examples:
        raise ValidationError("empty training set")
    t0 = time.time()
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    steps_per_epoch = (len(train_examples) + batch_size - 1) // batch_size
    total_steps = max_epochs * steps_per_epoch
    if scheduler == "cosine":
        sched = CosineWarmupSchedule(
            lr_max=lr,
            warmup_steps=max(1, int(warmup_fraction * total_steps)),
            total_steps=total_steps,
        )
    elif scheduler == "plateau":
        sched = PlateauSchedule(lr=lr, factor=0.1, patience=5)
    else:
        raise ConfigError(f"unknown scheduler {scheduler!r}")
    order_rng = stream(seed, 11)
    drop_rng = stream(seed, 12)
    report = RevdictReport()
    idx = np.arange(len(train_examples))
    for epoch in range(1, max_epochs + 1):
        order_rng.shuffle(idx)
        total = 0.0
        for lo in range(0, len(idx), batch_size):
            batch = [train_examples[i] for i in idx[lo:lo + batch_size]]
            if scheduler == "cosine":
                opt.lr = sched.step()
            opt.zero_grad()
            loss = batch_loss(model, batch, train=True, rng=drop_rng,
                              cosine_weight=cosine_weight)
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
        train_loss = total / len(idx)
        scores = evaluate_revdict(model, dev_examples) if dev_examples else {
            "mse": train_loss, "cos": 0.0, "cka": 0.0,
        }
        if scheduler == "plateau":
            opt.lr = sched.step(scores["mse"])
        report.epochs.append({"epoch": epoch, "train_loss": train_loss,
                              "lr": opt.lr, **{f"dev_{k}": v for k, v in scores.items()}})
        report.best_dev_mse = min(report.best_dev_mse, scores["mse"])
    report.wall_time = time.time() - t0
    return report


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

@dataclass
class RetrievalIndex:
    matrix: np.ndarray          # unit-normalized rows
    ids: list[str]
    glosses: list[str]


def build_index(records: Sequence, embedding_type: str) -> RetrievalIndex:
    rows, ids, glosses = [], [], []
    seen = set()
    for rec in records:
        vec = rec.embedding(embedding_type)
        if vec is None:
            continue
        rid = getattr(rec, "id", None) or rec.parent_id
        if rid in seen:
            raise ValidationError(f"duplicate record id {rid!r} in index")
        seen.add(rid)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValidationError(f"record {rid!r}: zero embedding cannot be normalized")
        rows.append(np.asarray(vec, dtype=np.float64) / norm)
        ids.append(rid)
        glosses.append(rec.text if hasattr(rec, "text") else rec.gloss)
    if not rows:
        raise ValidationError(f"no record carries embedding type {embedding_type!r}")
    return RetrievalIndex(matrix=np.stack(rows), ids=ids, glosses=glosses)


def query(model: RevdictModel, tok: TokenizerModel, index: RetrievalIndex,
          definition: str, k: int = 10) -> list[tuple[str, str, float]]:
    """Top-k (id, gloss, cosine) for a definition, ties broken by id."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    vec = model.predict(tok, definition)[model.primary_head].astype(np.float64)
    norm = np.linalg.norm(vec)
    sims = index.matrix @ (vec / norm if norm > 0 else vec)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], index.ids[i]))
    return [(index.ids[i], index.glosses[i], float(sims[i])) for i in order[:k]]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(directory, model: RevdictModel, tok: TokenizerModel) -> None:
    from .defmod import vocab_hash

    os.makedirs(directory, exist_ok=True)
    save_tensors(directory, {k: v.data for k, v in model.params.items()})
    atomic_write_json(
        os.path.join(directory, "descriptor.json"),
        {
            "family": "revdict",
            "vocab_size": model.vocab_size,
            "head_types": list(model.head_types),
            "primary_head": model.primary_head,
            "dim": model.dim,
            "num_layers": model.num_layers,
            "num_heads": model.num_heads,
            "ff_dim": model.ff_dim,
            "out_dim": model.out_dim,
            "dropout": model.dropout,
            "aggregation": model.aggregation,
            "max_len": model.max_len,
            "relu_after_affine": model.relu_after_affine,
            "vocab_hash": vocab_hash(tok),
        },
    )


def load_checkpoint(directory, tok: Optional[TokenizerModel] = None) -> RevdictModel:
    from .defmod import vocab_hash

    with open(os.path.join(directory, "descriptor.json"), encoding="utf-8") as f:
        d = json.load(f)
    if d.get("family") != "revdict":
        raise ValidationError(f"{directory}: not a revdict checkpoint")
    if tok is not None and d["vocab_hash"] != vocab_hash(tok):
        raise ValidationError(f"{directory}: checkpoint was built with a different vocabulary")
    model = RevdictModel(
        vocab_size=d["vocab_size"],
        head_types=d["head_types"],
        primary_head=d["primary_head"],
        dim=d["dim"],
        num_layers=d["num_layers"],
        num_heads=d["num_heads"],
        ff_dim=d["ff_dim"],
        out_dim=d["out_dim"],
        dropout=d["dropout"],
        aggregation=d["aggregation"],
        max_len=d["max_len"],
        relu_after_affine=d["relu_after_affine"],
    )
    weights = load_tensors(directory)
    for name, tensor in model.params.items():
        if name not in weights or weights[name].shape != tensor.data.shape:
            raise ValidationError(f"{directory}: checkpoint tensor {name!r} missing or mis-shaped")
        tensor.data = weights[name]
    return model
