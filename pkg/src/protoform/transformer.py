"""Encoder-decoder transformer for protoform reconstruction.

The encoder consumes all attested daughter forms concatenated into one
sequence; sinusoidal positional encoding restarts at every daughter
boundary and an additive per-language embedding marks which daughter each
token belongs to.  The decoder autoregressively emits the protoform.
Training uses teacher forcing with early stopping on validation phoneme
edit distance; inference is greedy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine as E
from .corpus import (
    BOS_ID, EOS_ID, PAD_ID, UNK_ID,
    Dataset, EncodedExample, LanguageId, Vocabulary, Word,
    encode_cognate_set, encode_dataset,
)
from .engine.rng import DetRng, mix64, philox
from .engine.optim import AdamState, ScheduleCfg, adam_step, lr_at
from .metrics import edit_distance

MAX_SOURCE_LEN = 1024


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 128
    n_heads: int = 8
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_feedforward: int = 256
    dropout_p: float = 0.1
    lr: float = 1e-3
    warmup_epochs: int = 10
    total_epochs: int = 100
    weight_decay: float = 0.0
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p {self.dropout_p} outside [0, 1)")

    def with_seed(self, seed: int) -> "TransformerConfig":
        return replace(self, seed=seed)


ROMANCE = TransformerConfig(
    d_model=128, n_heads=8, n_encoder_layers=3, n_decoder_layers=3,
    d_feedforward=128, dropout_p=0.202, lr=0.00013, warmup_epochs=50,
    total_epochs=200, weight_decay=0.0, batch_size=1, seed=0,
)

SINITIC = TransformerConfig(
    d_model=128, n_heads=8, n_encoder_layers=2, n_decoder_layers=5,
    d_feedforward=647, dropout_p=0.1708861, lr=0.0007487, warmup_epochs=32,
    total_epochs=200, weight_decay=1e-7, batch_size=32, seed=0,
)

PRESETS = {"romance": ROMANCE, "sinitic": SINITIC}


def sinusoid_table(n_positions: int, d_model: int) -> np.ndarray:
    """PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same angle)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((n_positions, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def positional_encoding(daughter_lengths, d_model: int) -> np.ndarray:
    """Sinusoidal encoding whose position index restarts at each daughter."""
    if any(l <= 0 for l in daughter_lengths):
        raise ValueError("daughter lengths must be positive")
    positions = np.concatenate([np.arange(l) for l in daughter_lengths])
    return sinusoid_table(int(positions.max()) + 1, d_model)[positions]


@dataclass
class Batch:
    src: np.ndarray       # (B, S) source token ids, PAD-padded
    pos: np.ndarray       # (B, S) daughter-local positions
    lang: np.ndarray      # (B, S) daughter language indices
    src_pad: np.ndarray   # (B, S) True at padding
    tgt: np.ndarray       # (B, T) BOS + proto + EOS, PAD-padded
    set_ids: list

    @property
    def tgt_in(self):
        return self.tgt[:, :-1]

    @property
    def tgt_out(self):
        return self.tgt[:, 1:]


def collate(examples) -> Batch:
    B = len(examples)
    S = max(len(e.source) for e in examples)
    T = max(len(e.target) for e in examples)
    src = np.full((B, S), PAD_ID, dtype=np.int64)
    pos = np.zeros((B, S), dtype=np.int64)
    lang = np.zeros((B, S), dtype=np.int64)
    pad = np.ones((B, S), dtype=bool)
    tgt = np.full((B, T), PAD_ID, dtype=np.int64)
    for b, e in enumerate(examples):
        n = len(e.source)
        src[b, :n] = e.source
        pos[b, :n] = e.positions
        lang[b, :n] = e.languages
        pad[b, :n] = False
        tgt[b, :len(e.target)] = e.target
    return Batch(src, pos, lang, pad, tgt, [e.set_id for e in examples])


@dataclass
class _DropCtx:
    """Keys every dropout site by (run seed, site id, step)."""
    seed: int
    step: int
    p: float
    training: bool

    def __call__(self, t, site: int):
        return E.dropout(t, self.p, (self.seed, site, self.step), self.training)


_EVAL = _DropCtx(seed=0, step=0, p=0.0, training=False)


class Model:
    """Parameter container plus the forward passes."""

    def __init__(self, cfg: TransformerConfig, vocab: Vocabulary, languages,
                 max_source_len: int = MAX_SOURCE_LEN):
        self.cfg = cfg
        self.vocab = vocab
        self.languages = list(languages)
        self.max_source_len = max_source_len
        self.pe = sinusoid_table(max_source_len, cfg.d_model).astype(E.default_dtype())
        self.params: dict[str, E.Tensor] = {}
        self._init_params()

    # -- construction ---------------------------------------------------

    def _init_params(self):
        cfg = self.cfg
        d, dff = cfg.d_model, cfg.d_feedforward
        rng = philox(0x1217, cfg.seed)
        bound = 1.0 / np.sqrt(d)

        def weight(name, *shape):
            self.params[name] = E.Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

        def bias(name, n):
            self.params[name] = E.Tensor(np.zeros(n), requires_grad=True)

        def norm(name, n):
            self.params[f"{name}.g"] = E.Tensor(np.ones(n), requires_grad=True)
            self.params[f"{name}.b"] = E.Tensor(np.zeros(n), requires_grad=True)

        def attention(prefix):
            for part in ("wq", "wk", "wv", "wo"):
                weight(f"{prefix}.{part}", d, d)
            for part in ("bq", "bk", "bv", "bo"):
                bias(f"{prefix}.{part}", d)

        weight("src_emb", self.vocab.n_source, d)
        weight("tgt_emb", self.vocab.n_target, d)
        weight("lang_emb", len(self.languages), d)
        for i in range(cfg.n_encoder_layers):
            attention(f"enc{i}.attn")
            norm(f"enc{i}.ln1", d)
            weight(f"enc{i}.ff.w1", d, dff)
            bias(f"enc{i}.ff.b1", dff)
            weight(f"enc{i}.ff.w2", dff, d)
            bias(f"enc{i}.ff.b2", d)
            norm(f"enc{i}.ln2", d)
        for i in range(cfg.n_decoder_layers):
            attention(f"dec{i}.self")
            norm(f"dec{i}.ln1", d)
            attention(f"dec{i}.cross")
            norm(f"dec{i}.ln2", d)
            weight(f"dec{i}.ff.w1", d, dff)
            bias(f"dec{i}.ff.b1", dff)
            weight(f"dec{i}.ff.w2", dff, d)
            bias(f"dec{i}.ff.b2", d)
            norm(f"dec{i}.ln3", d)
        weight("out.w", d, self.vocab.n_target)
        bias("out.b", self.vocab.n_target)

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict) -> None:
        for name, t in self.params.items():
            t.data = np.asarray(state[name], dtype=t.data.dtype).reshape(t.data.shape)

    # -- layers -----------------------------------------------------------

    def _linear(self, x, w, b):
        return E.add(E.matmul(x, self.params[w]), self.params[b])

    def _ln(self, x, name):
        return E.add(E.mul(E.layer_norm(x, axis=-1), self.params[f"{name}.g"]),
                     self.params[f"{name}.b"])

    def _attention(self, q_in, kv_in, fill_mask, prefix, drop, site, trace=None, tag=""):
        H = self.cfg.n_heads
        B, Tq, d = q_in.data.shape
        Tk = kv_in.data.shape[1]
        dh = d // H
        q = self._linear(q_in, f"{prefix}.wq", f"{prefix}.bq")
        k = self._linear(kv_in, f"{prefix}.wk", f"{prefix}.bk")
        v = self._linear(kv_in, f"{prefix}.wv", f"{prefix}.bv")
        q = E.transpose(E.reshape(q, (B, Tq, H, dh)), (0, 2, 1, 3))
        k = E.transpose(E.reshape(k, (B, Tk, H, dh)), (0, 2, 3, 1))
        v = E.transpose(E.reshape(v, (B, Tk, H, dh)), (0, 2, 1, 3))
        scores = E.scale(E.matmul(q, k), 1.0 / np.sqrt(dh))
        if fill_mask is not None:
            scores = E.masked_fill(scores, fill_mask, -np.inf)
        attn = E.softmax(scores, axis=-1)
        if trace is not None:
            trace[tag] = attn.data
        attn = drop(attn, site)
        out = E.matmul(attn, v)
        out = E.reshape(E.transpose(out, (0, 2, 1, 3)), (B, Tq, d))
        return self._linear(out, f"{prefix}.wo", f"{prefix}.bo")

    def _feedforward(self, x, prefix, drop, site):
        h = E.relu(self._linear(x, f"{prefix}.w1", f"{prefix}.b1"))
        h = drop(h, site)
        return self._linear(h, f"{prefix}.w2", f"{prefix}.b2")

    # -- forward ----------------------------------------------------------

    def encode_batch(self, batch: Batch, drop=_EVAL, trace=None):
        """Memory over the concatenated daughter sequence, (B, S, d_model)."""
        if batch.src.shape[1] > self.max_source_len:
            raise E.EngineError(
                f"source length {batch.src.shape[1]} exceeds maximum {self.max_source_len}"
            )
        x = E.embedding_lookup(self.params["src_emb"], batch.src)
        x = E.add(x, E.Tensor(self.pe[batch.pos]))
        x = E.add(x, E.embedding_lookup(self.params["lang_emb"], batch.lang))
        x = drop(x, 1)
        key_mask = batch.src_pad[:, None, None, :]
        for i in range(self.cfg.n_encoder_layers):
            base = 10 + 8 * i
            h = self._attention(x, x, key_mask, f"enc{i}.attn", drop, base,
                                trace, f"enc{i}.attn")
            x = self._ln(E.add(x, drop(h, base + 1)), f"enc{i}.ln1")
            f = self._feedforward(x, f"enc{i}.ff", drop, base + 2)
            x = self._ln(E.add(x, drop(f, base + 3)), f"enc{i}.ln2")
        return x

    def decode_batch(self, memory, tgt_in: np.ndarray, src_pad: np.ndarray,
                     drop=_EVAL, trace=None):
        """Teacher-forced decoder logits, (B, T, n_target)."""
        B, T = tgt_in.shape
        x = E.embedding_lookup(self.params["tgt_emb"], tgt_in)
        x = E.add(x, E.Tensor(self.pe[:T]))
        x = drop(x, 2)
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        self_mask = causal[None, None] | (tgt_in == PAD_ID)[:, None, None, :]
        cross_mask = src_pad[:, None, None, :]
        for i in range(self.cfg.n_decoder_layers):
            base = 1000 + 8 * i
            h = self._attention(x, x, self_mask, f"dec{i}.self", drop, base,
                                trace, f"dec{i}.self")
            x = self._ln(E.add(x, drop(h, base + 1)), f"dec{i}.ln1")
            c = self._attention(x, memory, cross_mask, f"dec{i}.cross", drop, base + 2,
                                trace, f"dec{i}.cross")
            x = self._ln(E.add(x, drop(c, base + 3)), f"dec{i}.ln2")
            f = self._feedforward(x, f"dec{i}.ff", drop, base + 4)
            x = self._ln(E.add(x, drop(f, base + 5)), f"dec{i}.ln3")
        return self._linear(x, "out.w", "out.b")

    def loss_batch(self, batch: Batch, drop=_EVAL, trace=None):
        memory = self.encode_batch(batch, drop, trace)
        logits = self.decode_batch(memory, batch.tgt_in, batch.src_pad, drop, trace)
        return E.cross_entropy(logits, batch.tgt_out, ignore_index=PAD_ID)


def encode(model: Model, example: EncodedExample):
    """Run the encoder on a single example; returns (source length, d_model)."""
    with E.no_grad():
        memory = model.encode_batch(collate([example]))
    return E.Tensor(memory.data[0])


def forward_teacher_forced(model: Model, example: EncodedExample):
    """Teacher-forced logits for one example, (len(target)-1, n_target);
    row t conditions only on target tokens at positions <= t."""
    if example.target[0] != BOS_ID:
        raise E.EngineError("target must begin with BOS")
    batch = collate([example])
    with E.no_grad():
        memory = model.encode_batch(batch)
        logits = model.decode_batch(memory, batch.tgt_in, batch.src_pad)
    return E.Tensor(logits.data[0])


def greedy_decode(model: Model, examples, max_len: int, chunk: int = 128):
    """Greedy autoregressive decoding; PAD/BOS/UNK are never emitted.

    Stops each row at EOS or after max_len tokens; an immediate EOS yields
    an empty word (callers flag those).
    """
    words = []
    banned = [PAD_ID, BOS_ID, UNK_ID]
    for start in range(0, len(examples), chunk):
        group = examples[start:start + chunk]
        batch = collate(group)
        B = len(group)
        with E.no_grad():
            memory = model.encode_batch(batch)
            ys = np.full((B, 1), BOS_ID, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            for _ in range(max_len):
                logits = model.decode_batch(memory, ys, batch.src_pad)
                last = logits.data[:, -1, :].copy()
                last[:, banned] = -np.inf
                nxt = np.argmax(last, axis=-1)
                nxt[done] = EOS_ID
                ys = np.concatenate([ys, nxt[:, None]], axis=1)
                done |= nxt == EOS_ID
                if done.all():
                    break
        for row in ys:
            toks = []
            for idx in row[1:]:
                if idx == EOS_ID:
                    break
                toks.append(model.vocab.tgt_token(int(idx)))
            words.append(tuple(toks))
    return words


def extract_language_embeddings(model: Model) -> dict:
    """Copies of the language embedding table rows, keyed by LanguageId."""
    table = model.params["lang_emb"].data
    return {lang: table[lang.index].copy() for lang in model.languages}


@dataclass
class TrainedModel:
    model: Model
    config: TransformerConfig
    vocab: Vocabulary
    history: list          # per-epoch dicts: epoch, lr, train_loss, val_ped
    best_epoch: int
    best_val_ped: float
    max_decode_len: int
    proto_name: str = ""

    def save(self, prefix: str) -> None:
        E.save_checkpoint(prefix + ".ckpt", self.model.state())
        sidecar = {
            "config": asdict(self.config),
            "source_tokens": list(self.vocab.source_tokens),
            "target_tokens": list(self.vocab.target_tokens),
            "languages": [l.name for l in self.model.languages],
            "proto_name": self.proto_name,
            "best_epoch": self.best_epoch,
            "best_val_ped": self.best_val_ped,
            "max_decode_len": self.max_decode_len,
            "history": self.history,
        }
        with open(prefix + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def load(cls, prefix: str) -> "TrainedModel":
        with open(prefix + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        cfg = TransformerConfig(**sidecar["config"])
        src, tgt = sidecar["source_tokens"], sidecar["target_tokens"]
        vocab = Vocabulary(src, tgt,
                           {t: i for i, t in enumerate(src)},
                           {t: i for i, t in enumerate(tgt)})
        languages = [LanguageId(name, i) for i, name in enumerate(sidecar["languages"])]
        model = Model(cfg, vocab, languages)
        model.load_state(E.load_checkpoint(prefix + ".ckpt"))
        return cls(model, cfg, vocab, sidecar["history"], sidecar["best_epoch"],
                   sidecar["best_val_ped"], sidecar["max_decode_len"],
                   sidecar.get("proto_name", ""))


def train(model: Model, train_split: Dataset, val_split: Dataset,
          cfg: TransformerConfig, log=None) -> TrainedModel:
    """Teacher-forced minibatch training with early stopping.

    After every epoch the validation split is greedy-decoded and scored by
    mean phoneme edit distance; the returned parameters are those of the
    epoch with the lowest validation distance.
    """
    if not train_split.sets or not val_split.sets:
        raise E.EngineError("train and validation splits must be nonempty")
    vocab = model.vocab
    train_enc = encode_dataset(train_split, vocab)
    val_enc = encode_dataset(val_split, vocab)
    val_gold = [cs.proto for cs in val_split.sets]
    max_decode = max(20, 2 * max(len(cs.proto) for cs in train_split.sets))
    schedule = ScheduleCfg(cfg.lr, cfg.warmup_epochs, cfg.total_epochs)
    adam = AdamState(weight_decay=cfg.weight_decay)
    step = 0
    best_ped, best_epoch, best_state = np.inf, -1, None
    history = []
    n = len(train_enc)

    for epoch in range(cfg.total_epochs):
        lr = lr_at(epoch, schedule)
        order = DetRng(mix64(cfg.seed, 0xE70C, epoch)).permutation(n)
        loss_sum, loss_batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            batch = collate([train_enc[i] for i in order[lo:lo + cfg.batch_size]])
            drop = _DropCtx(cfg.seed, step, cfg.dropout_p, training=True)
            E.zero_grads(model.params.values())
            loss = model.loss_batch(batch, drop)
            if not np.isfinite(loss.data):
                raise E.EngineError(f"training diverged (loss={loss.data}) at epoch {epoch}")
            E.backward(loss)
            grads = {name: t.grad for name, t in model.params.items() if t.grad is not None}
            adam_step(model.params, grads, adam, lr)
            step += 1
            loss_sum += float(loss.data)
            loss_batches += 1
        preds = greedy_decode(model, val_enc, max_decode)
        val_ped = sum(edit_distance(p, g) for p, g in zip(preds, val_gold)) / len(val_gold)
        history.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / loss_batches,
            "val_ped": val_ped,
        })
        if log is not None:
            log(history[-1])
        if val_ped < best_ped:
            best_ped, best_epoch, best_state = val_ped, epoch, model.state()

    model.load_state(best_state)
    return TrainedModel(model, cfg, vocab, history, best_epoch, best_ped, max_decode,
                        train_split.proto_name)
