"""Gloss generator: an RNN decoder conditioned on word embeddings.

Two conditioning vectors are formed from a record's embeddings: the seed,
which initializes the recurrent state, and the context, which is blended
into every step's output by a GRU-like gating cell before the vocabulary
projection. Either vector can be a single embedding type, the
concatenation of all available types, or a learned MLP of the
concatenation.

Decoding is length-synchronous beam search over token log-probabilities
with no length normalization; a fallback model can stand in when the main
model emits a deformed (very short or non-alphabetic) string.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .corpus import EMBEDDING_TYPES
from .errors import ConfigError, ValidationError
from .optim import AdamW, PlateauSchedule
from .rng import stream
from .serialize import atomic_write_json, load_tensors, save_tensors
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, TokenizerModel, decode, encode

log = logging.getLogger(__name__)

SOURCES = set(EMBEDDING_TYPES) | {"concat", "mlp"}


@dataclass
class SeedContextSpec:
    """How to build the seed (RNN init) and context (gate input) vectors."""

    seed_source: str = "sgns"
    context_source: str = "concat"
    mlp_hidden: int = 512
    mlp_out: int = 256

    def __post_init__(self):
        for src in (self.seed_source, self.context_source):
            if src not in SOURCES:
                raise ConfigError(f"unknown seed/context source {src!r}")


def dataset_embedding_types(records: Sequence) -> tuple[str, ...]:
    """Embedding types present on every record of a dataset."""
    types = set(EMBEDDING_TYPES)
    for rec in records:
        types &= set(rec.embedding_types())
    return tuple(t for t in EMBEDDING_TYPES if t in types)


def _source_dim(source: str, types: Sequence[str], spec: SeedContextSpec, vec_dim: int) -> int:
    if source == "concat":
        return vec_dim * len(types)
    if source == "mlp":
        return spec.mlp_out
    if source not in types:
        raise ValidationError(f"embedding type {source!r} not present in the dataset")
    return vec_dim


class DefmodModel:
    """Token-embedding table + RNN + gated context cell + output projection."""

    def __init__(
        self,
        vocab_size: int,
        types: Sequence[str],
        spec: Optional[SeedContextSpec] = None,
        rnn_type: str = "gru",
        hidden: int = 512,
        emb_dim: int = 256,
        vec_dim: int = 256,
        dropout_in: float = 0.1,
        dropout_net: float = 0.3,
        max_len: int = 64,
        seed: int = 0,
        glove_table: Optional[np.ndarray] = None,
    ):
        if rnn_type not in ("gru", "lstm"):
            raise ConfigError(f"rnn_type must be gru or lstm, got {rnn_type!r}")
        if not (0 <= dropout_in < 1 and 0 <= dropout_net < 1):
            raise ConfigError("dropout rates must be in [0, 1)")
        self.spec = spec or SeedContextSpec()
        self.types = tuple(types)
        self.rnn_type = rnn_type
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.vec_dim = vec_dim
        self.dropout_in = dropout_in
        self.dropout_net = dropout_net
        self.max_len = max_len
        self.seed_dim = _source_dim(self.spec.seed_source, types, self.spec, vec_dim)
        self.context_dim = _source_dim(self.spec.context_source, types, self.spec, vec_dim)

        rngs = iter(stream(seed, 0, i) for i in range(64))
        H, C, V, E = hidden, self.context_dim, vocab_size, emb_dim
        gates = 3 if rnn_type == "gru" else 4
        p: dict[str, T.Tensor] = {}
        if glove_table is not None:
            if glove_table.shape != (V, E):
                raise ValidationError(
                    f"token-vector table {glove_table.shape} does not match ({V}, {E})"
                )
            p["embed"] = T.Tensor(glove_table, requires_grad=True)
        else:
            p["embed"] = T.parameter((V, E), next(rngs))
        p["seed_w"] = T.parameter((self.seed_dim, H), next(rngs))
        p["seed_b"] = T.Tensor(np.zeros(H), requires_grad=True)
        p["rnn_wx"] = T.parameter((E, gates * H), next(rngs))
        p["rnn_wh"] = T.parameter((H, gates * H), next(rngs))
        p["rnn_b"] = T.Tensor(np.zeros(gates * H), requires_grad=True)
        p["gate_wz"] = T.parameter((C + H, H), next(rngs))
        p["gate_bz"] = T.Tensor(np.zeros(H), requires_grad=True)
        p["gate_wr"] = T.parameter((C + H, C), next(rngs))
        p["gate_br"] = T.Tensor(np.zeros(C), requires_grad=True)
        p["gate_wh"] = T.parameter((C + H, H), next(rngs))
        p["gate_bh"] = T.Tensor(np.zeros(H), requires_grad=True)
        p["out_w"] = T.parameter((H, V), next(rngs))
        p["out_b"] = T.Tensor(np.zeros(V), requires_grad=True)
        for src, name in ((self.spec.seed_source, "seedmlp"), (self.spec.context_source, "ctxmlp")):
            if src == "mlp":
                cat = vec_dim * len(types)
                p[f"{name}_w1"] = T.parameter((cat, self.spec.mlp_hidden), next(rngs))
                p[f"{name}_b1"] = T.Tensor(np.zeros(self.spec.mlp_hidden), requires_grad=True)
                p[f"{name}_w2"] = T.parameter((self.spec.mlp_hidden, self.spec.mlp_out), next(rngs))
                p[f"{name}_b2"] = T.Tensor(np.zeros(self.spec.mlp_out), requires_grad=True)
        self.params = p

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    # ------------------------------------------------------------------
    # conditioning vectors
    # ------------------------------------------------------------------

    def _source_vector(self, source: str, name: str, embs: dict[str, np.ndarray]) -> T.Tensor:
        if source == "concat":
            return T.Tensor(np.concatenate([embs[t] for t in self.types], axis=1))
        if source == "mlp":
            cat = T.Tensor(np.concatenate([embs[t] for t in self.types], axis=1))
            h = T.tanh(T.add(T.matmul(cat, self.params[f"{name}_w1"]), self.params[f"{name}_b1"]))
            return T.add(T.matmul(h, self.params[f"{name}_w2"]), self.params[f"{name}_b2"])
        return T.Tensor(embs[source])

    def seed_context(self, embs: dict[str, np.ndarray], train: bool = False,
                     rng: Optional[np.random.Generator] = None) -> tuple[T.Tensor, T.Tensor]:
        """Batched seed and context vectors; input dropout covers both in
        training, matching its use on token embeddings."""
        seed = self._source_vector(self.spec.seed_source, "seedmlp", embs)
        ctx = self._source_vector(self.spec.context_source, "ctxmlp", embs)
        if train:
            seed = T.dropout(seed, 1.0 - self.dropout_in, True, rng)
            ctx = T.dropout(ctx, 1.0 - self.dropout_in, True, rng)
        return seed, ctx

    def init_state(self, seed_vec: T.Tensor):
        h0 = T.tanh(T.add(T.matmul(seed_vec, self.params["seed_w"]), self.params["seed_b"]))
        if self.rnn_type == "lstm":
            return (h0, T.Tensor(np.zeros_like(h0.data)))
        return h0

    # ------------------------------------------------------------------
    # one decoding step
    # ------------------------------------------------------------------

    def rnn_step(self, x: T.Tensor, state):
        H = self.hidden
        p = self.params
        if self.rnn_type == "gru":
            h = state
            xg = T.add(T.matmul(x, p["rnn_wx"]), p["rnn_b"])
            hg = T.matmul(h, p["rnn_wh"])
            z = T.sigmoid(T.add(xg[:, 0:H], hg[:, 0:H]))
            r = T.sigmoid(T.add(xg[:, H:2 * H], hg[:, H:2 * H]))
            n = T.tanh(T.add(xg[:, 2 * H:3 * H], T.mul(r, hg[:, 2 * H:3 * H])))
            one_minus_z = T.add(T.mul(z, -1.0), 1.0)
            h_new = T.add(T.mul(one_minus_z, n), T.mul(z, h))
            return h_new, h_new
        h, c = state
        g = T.add(T.add(T.matmul(x, p["rnn_wx"]), T.matmul(h, p["rnn_wh"])), p["rnn_b"])
        i = T.sigmoid(g[:, 0:H])
        f = T.sigmoid(g[:, H:2 * H])
        gg = T.tanh(g[:, 2 * H:3 * H])
        o = T.sigmoid(g[:, 3 * H:4 * H])
        c_new = T.add(T.mul(f, c), T.mul(i, gg))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, (h_new, c_new)

    def gate_step(self, h: T.Tensor, context: T.Tensor) -> T.Tensor:
        """Blend the recurrent output with the semantic context."""
        p = self.params
        ch = T.concat([context, h], axis=1)
        z = T.sigmoid(T.add(T.matmul(ch, p["gate_wz"]), p["gate_bz"]))
        r = T.sigmoid(T.add(T.matmul(ch, p["gate_wr"]), p["gate_br"]))
        gated_ctx = T.mul(r, context)
        h_cand = T.tanh(T.add(T.matmul(T.concat([gated_ctx, h], axis=1), p["gate_wh"]), p["gate_bh"]))
        one_minus_z = T.add(T.mul(z, -1.0), 1.0)
        return T.add(T.mul(one_minus_z, h), T.mul(z, h_cand))

    def forward_step(self, prev_ids, state, context: T.Tensor, train: bool = False,
                     rng: Optional[np.random.Generator] = None):
        """(token log-probabilities, new state) for one step of decoding."""
        if context.shape[-1] != self.context_dim:
            raise ValidationError(
                f"context dim {context.shape[-1]} does not match gate weights ({self.context_dim})"
            )
        x = T.embedding_lookup(self.params["embed"], np.asarray(prev_ids))
        x = T.dropout(x, 1.0 - self.dropout_in, train, rng)
        h, new_state = self.rnn_step(x, state)
        out = self.gate_step(h, context)
        out = T.dropout(out, 1.0 - self.dropout_net, train, rng)
        logits = T.add(T.matmul(out, self.params["out_w"]), self.params["out_b"])
        return T.log_softmax(logits), new_state


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class Example:
    ids: list[int]
    embs: dict[str, np.ndarray]


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    stopped_early: bool = False
    best_dev: float = float("inf")
    wall_time: float = 0.0

    def to_json_dict(self) -> dict:
        # wall time stays out: serialized reports must be bit-reproducible
        return {
            "epochs": self.epochs,
            "stopped_early": self.stopped_early,
            "best_dev": self.best_dev,
        }


def prepare_examples(atomics: Sequence, tok: TokenizerModel, types: Sequence[str],
                     max_len: int = 64) -> list[Example]:
    out = []
    for a in atomics:
        embs = {}
        for t in types:
            vec = a.embedding(t)
            if vec is None:
                raise ValidationError(f"record {a.parent_id!r} lacks embedding type {t!r}")
            embs[t] = np.asarray(vec, dtype=np.float32)
        ids = [BOS_ID] + encode(tok, a.text)[:max_len] + [EOS_ID]
        out.append(Example(ids=ids, embs=embs))
    return out


def _batch_arrays(batch: Sequence[Example], types: Sequence[str]):
    L = max(len(ex.ids) for ex in batch)
    ids = np.full((len(batch), L), PAD_ID, dtype=np.int64)
    for k, ex in enumerate(batch):
        ids[k, : len(ex.ids)] = ex.ids
    embs = {t: np.stack([ex.embs[t] for ex in batch]) for t in types}
    return ids, embs


def sequence_loss(model: DefmodModel, batch: Sequence[Example], train: bool,
                  rng: Optional[np.random.Generator] = None) -> tuple[T.Tensor, int]:
    """Teacher-forced cross-entropy over one batch; pads are masked out.

    Returns (loss tensor, number of predicted tokens)."""
    ids, embs = _batch_arrays(batch, model.types)
    seed, ctx = model.seed_context(embs, train, rng)
    state = model.init_state(seed)
    steps = ids.shape[1] - 1
    all_logits = []
    for t in range(steps):
        logp, state = model.forward_step(ids[:, t], state, ctx, train, rng)
        all_logits.append(logp)
    stacked = T.concat(all_logits, axis=0)  # (steps*B, V), step-major
    targets = ids[:, 1:].T.reshape(-1)
    mask = (targets != PAD_ID).astype(np.float32)
    loss = T.cross_entropy(stacked, targets, mask)
    return loss, int(mask.sum())


def evaluate_loss(model: DefmodModel, examples: Sequence[Example], batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(examples), batch_size):
        batch = examples[lo:lo + batch_size]
        loss, n = sequence_loss(model, batch, train=False)
        total += loss.item() * n
        count += n
    return total / max(count, 1)


def train_defmod(
    model: DefmodModel,
    train_examples: Sequence[Example],
    dev_examples: Sequence[Example],
    epochs: int = 300,
    lr: float = 1e-3,
    batch_size: int = 32,
    weight_decay: float = 0.01,
    plateau_factor: float = 0.1,
    plateau_patience: int = 5,
    stop_rel_improvement: float = 1e-3,
    stop_patience: int = 10,
    seed: int = 0,
) -> TrainReport:
    """AdamW + plateau schedule + relative-improvement early stopping."""
    if not train_examples:
        raise ValidationError("empty training set")
    t0 = time.time()
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    sched = PlateauSchedule(lr=lr, factor=plateau_factor, patience=plateau_patience)
    order_rng = stream(seed, 1)
    drop_rng = stream(seed, 2)
    report = TrainReport()
    best = float("inf")
    since_improve = 0
    idx = np.arange(len(train_examples))
    for epoch in range(1, epochs + 1):
        order_rng.shuffle(idx)
        total, count = 0.0, 0
        for lo in range(0, len(idx), batch_size):
            batch = [train_examples[i] for i in idx[lo:lo + batch_size]]
            opt.zero_grad()
            loss, n = sequence_loss(model, batch, train=True, rng=drop_rng)
            loss.backward()
            opt.step()
            total += loss.item() * n
            count += n
        train_loss = total / max(count, 1)
        dev_loss = evaluate_loss(model, dev_examples) if dev_examples else train_loss
        opt.lr = sched.step(dev_loss)
        report.epochs.append(
            {"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss, "lr": opt.lr}
        )
        if dev_loss < best * (1.0 - stop_rel_improvement):
            best = dev_loss
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= stop_patience:
                report.stopped_early = True
                break
    report.best_dev = min(best, dev_loss)
    report.wall_time = time.time() - t0
    return report


def should_stop(dev_losses: Sequence[float], rel_improvement: float = 1e-3,
                patience: int = 10) -> bool:
    """The early-stopping rule on its own: no relative improvement of the
    best loss for `patience` consecutive epochs."""
    best = float("inf")
    since = 0
    for loss in dev_losses:
        if loss < best * (1.0 - rel_improvement):
            best = loss
            since = 0
        else:
            since += 1
            if since >= patience:
                return True
    return False


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def beam_search(model: DefmodModel, embs: dict[str, np.ndarray], beam_width: int = 4,
                max_len: Optional[int] = None) -> list[int]:
    """Highest-probability gloss for one record's embeddings.

    Length-synchronous, no length normalization. Hypotheses reaching <eos>
    retire into a pool; the best pooled total log-probability wins, with
    ties broken toward the lower token-id sequence.
    """
    if beam_width < 1:
        raise ValidationError(f"beam_width must be >= 1, got {beam_width}")
    max_len = max_len if max_len is not None else model.max_len
    batched = {t: np.asarray(v, dtype=np.float32)[None, :] for t, v in embs.items()}
    seed, ctx0 = model.seed_context(batched, train=False)
    state0 = model.init_state(seed)
    ctx_row = ctx0.data[0]
    live = [([BOS_ID], 0.0, state0)]
    pool: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        prev = np.array([h[0][-1] for h in live])
        states = _stack_states(model, [h[2] for h in live])
        ctx = T.Tensor(np.repeat(ctx_row[None, :], len(live), axis=0))
        logp, new_states = model.forward_step(prev, states, ctx, train=False)
        cands = []
        for k, (seq, score, _) in enumerate(live):
            row = logp.data[k]
            for tok in range(model.vocab_size):
                cands.append((score + float(row[tok]), seq + [tok], k))
        cands.sort(key=lambda c: (-c[0], c[1]))
        cands = cands[:beam_width]
        next_live = []
        for score, seq, k in cands:
            if seq[-1] == EOS_ID:
                pool.append((score, seq))
            else:
                next_live.append((seq, score, _slice_state(model, new_states, k)))
        live = next_live
        if not live:
            break
    if live:
        # budget exhausted: close every live hypothesis with <eos>
        prev = np.array([h[0][-1] for h in live])
        states = _stack_states(model, [h[2] for h in live])
        ctx = T.Tensor(np.repeat(ctx_row[None, :], len(live), axis=0))
        logp, _ = model.forward_step(prev, states, ctx, train=False)
        for k, (seq, score, _) in enumerate(live):
            pool.append((score + float(logp.data[k, EOS_ID]), seq + [EOS_ID]))
    pool.sort(key=lambda c: (-c[0], c[1]))
    return pool[0][1]


def _stack_states(model: DefmodModel, states):
    if model.rnn_type == "lstm":
        return (
            T.Tensor(np.concatenate([s[0].data for s in states], axis=0)),
            T.Tensor(np.concatenate([s[1].data for s in states], axis=0)),
        )
    return T.Tensor(np.concatenate([s.data for s in states], axis=0))


def _slice_state(model: DefmodModel, states, k: int):
    if model.rnn_type == "lstm":
        return (T.Tensor(states[0].data[k:k + 1]), T.Tensor(states[1].data[k:k + 1]))
    return T.Tensor(states.data[k:k + 1])


def is_deformed(text: str) -> bool:
    """Very short or non-alphabetic output."""
    return len(text) < 2 or not any(ch.isalpha() for ch in text)


@dataclass
class FallbackResult:
    text: str
    source: str          # "main" or "fallback"
    deformed: bool       # both candidates deformed


def generate_with_fallback(
    main_model: DefmodModel,
    fallback_model: Optional[DefmodModel],
    tok: TokenizerModel,
    embs: dict[str, np.ndarray],
    beam_width: int = 4,
) -> FallbackResult:
    main_text = decode(tok, beam_search(main_model, _subset(embs, main_model), beam_width))
    if not is_deformed(main_text) or fallback_model is None:
        return FallbackResult(main_text, "main", is_deformed(main_text))
    fb_text = decode(tok, beam_search(fallback_model, _subset(embs, fallback_model), beam_width))
    if not is_deformed(fb_text):
        return FallbackResult(fb_text, "fallback", False)
    return FallbackResult(main_text, "main", True)


def _subset(embs: dict[str, np.ndarray], model: DefmodModel) -> dict[str, np.ndarray]:
    return {t: embs[t] for t in model.types}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def vocab_hash(tok: TokenizerModel) -> str:
    h = hashlib.sha256("\n".join(tok.id_pieces).encode("utf-8")).hexdigest()
    return h[:16]


def save_checkpoint(directory, model: DefmodModel, tok: TokenizerModel) -> None:
    os.makedirs(directory, exist_ok=True)
    save_tensors(directory, {k: v.data for k, v in model.params.items()})
    atomic_write_json(
        os.path.join(directory, "descriptor.json"),
        {
            "family": "defmod",
            "vocab_size": model.vocab_size,
            "types": list(model.types),
            "seed_source": model.spec.seed_source,
            "context_source": model.spec.context_source,
            "mlp_hidden": model.spec.mlp_hidden,
            "mlp_out": model.spec.mlp_out,
            "rnn_type": model.rnn_type,
            "hidden": model.hidden,
            "emb_dim": model.emb_dim,
            "vec_dim": model.vec_dim,
            "dropout_in": model.dropout_in,
            "dropout_net": model.dropout_net,
            "max_len": model.max_len,
            "vocab_hash": vocab_hash(tok),
        },
    )


def load_checkpoint(directory, tok: Optional[TokenizerModel] = None) -> DefmodModel:
    with open(os.path.join(directory, "descriptor.json"), encoding="utf-8") as f:
        d = json.load(f)
    if d.get("family") != "defmod":
        raise ValidationError(f"{directory}: not a defmod checkpoint")
    if tok is not None and d["vocab_hash"] != vocab_hash(tok):
        raise ValidationError(f"{directory}: checkpoint was built with a different vocabulary")
    model = DefmodModel(
        vocab_size=d["vocab_size"],
        types=d["types"],
        spec=SeedContextSpec(d["seed_source"], d["context_source"], d["mlp_hidden"], d["mlp_out"]),
        rnn_type=d["rnn_type"],
        hidden=d["hidden"],
        emb_dim=d["emb_dim"],
        vec_dim=d.get("vec_dim", 256),
        dropout_in=d["dropout_in"],
        dropout_net=d["dropout_net"],
        max_len=d["max_len"],
    )
    weights = load_tensors(directory)
    for name, tensor in model.params.items():
        if name not in weights:
            raise ValidationError(f"{directory}: checkpoint missing tensor {name!r}")
        if weights[name].shape != tensor.data.shape:
            raise ValidationError(
                f"{directory}: tensor {name!r} has shape {weights[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = weights[name]
    return model
