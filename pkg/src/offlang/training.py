"""Gradient dispatch, AdamW optimization, the fit loop with best-validation-epoch
selection, and binary checkpoint persistence."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import objectives
from .encoder import EncoderConfig, ParameterSet, init_params
from .objectives import ClassificationBatch, MlmBatch, PlmBatch
from .tokenizer import TokenSequence, Vocabulary, serialize_vocab, vocab_hash

CHECKPOINT_MAGIC = b"OFLCKPT\x00"
CHECKPOINT_VERSION = 1

OBJECTIVES = ("classification", "mlm", "plm")
POOLINGS = ("cls", "mean")


class NonFiniteGradientError(FloatingPointError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class VocabHashMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters.

    ``max_epochs`` is validated as >= 1 only; the documented tuning range is
    1..10 but sanity fixtures legitimately run longer.
    """

    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    max_epochs: int = 3
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    objective: str = "classification"
    pooling: str = "cls"

    def __post_init__(self):
        # 0 is admitted so the documented no-op law is expressible in tests.
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be non-negative and finite")
        if not (np.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise ValueError("weight_decay must be >= 0 and finite")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")


@dataclass
class OptimizerState:
    """AdamW first/second moment accumulators mirroring ParameterSet shapes."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    valid_loss: float


@dataclass(eq=False)
class Checkpoint:
    """Trained model bundle; parameter tensors are stored as float32, so a
    save/load round trip is bit-exact."""

    encoder_config: EncoderConfig
    train_config: TrainConfig
    vocab: Vocabulary
    params: ParameterSet
    class_labels: list[str] | None
    best_epoch: int
    valid_loss: float
    format_version: int = CHECKPOINT_VERSION

    @property
    def vocab_hash(self) -> str:
        return vocab_hash(self.vocab)


def gradients(
    params: ParameterSet,
    config: EncoderConfig,
    batch,
    *,
    pooling: str = "cls",
    vocab: Vocabulary | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients for every trainable scalar, flat-indexed
    like the ParameterSet; parameters off the loss path get exact zeros."""
    if isinstance(batch, ClassificationBatch):
        loss, grads = objectives.classification_grads(params, config, batch, pooling, dropout_rng)
    elif isinstance(batch, MlmBatch):
        loss, grads = objectives.mlm_grads(params, config, batch, dropout_rng)
    elif isinstance(batch, PlmBatch):
        if vocab is None:
            raise ValueError("PLM gradients require the vocabulary")
        loss, grads = objectives.plm_grads(params, config, batch, vocab, dropout_rng)
    else:
        raise TypeError(f"unsupported batch type {type(batch).__name__}")
    for name, g in grads.items():
        finite = np.isfinite(g)
        if not finite.all():
            bad = int(np.flatnonzero(~finite.ravel())[0])
            raise NonFiniteGradientError(
                f"non-finite gradient in {name} at flat index {params.flat_index(name, bad)}"
            )
    return loss, grads


def adamw_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> tuple[ParameterSet, OptimizerState]:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta, with
    decay applied only to tensors flagged for it (weights, not biases/norms).
    """
    b1, b2 = config.betas
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
        if params.decay[name] and config.weight_decay > 0.0:
            update = update + config.learning_rate * config.weight_decay * theta
        if not np.isfinite(update).all():
            raise NonFiniteGradientError(f"non-finite AdamW update for {name}")
        theta -= update
    state.step = t
    return params, state


@dataclass(eq=False)
class EncodedSet:
    """Token id/mask arrays (plus class indices for classification) ready to batch."""

    ids: np.ndarray  # (N, T)
    mask: np.ndarray  # (N, T)
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


def _trim(ids: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop all-PAD tail columns; masked positions cannot influence outputs."""
    width = max(1, int(mask.sum(axis=1).max()))
    return ids[:, :width], mask[:, :width]


def _make_batch(
    data: EncodedSet,
    rows: np.ndarray,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    seed: int,
):
    ids, mask = _trim(data.ids[rows], data.mask[rows])
    if train_cfg.objective == "classification":
        return ClassificationBatch(ids, mask, data.labels[rows])
    if train_cfg.objective == "mlm":
        seqs = _rows_to_sequences(ids, mask)
        return objectives.mlm_corrupt_batch(seqs, vocab, seed)
    return PlmBatch(ids, mask, seed=seed)


def _rows_to_sequences(ids: np.ndarray, mask: np.ndarray):
    return [TokenSequence(ids[i], mask[i], int(mask[i].sum())) for i in range(len(ids))]


def _dataset_loss(
    params: ParameterSet,
    enc_cfg: EncoderConfig,
    data: EncodedSet,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    seed: int,
) -> float:
    """Objective loss over a dataset without dropout, averaged per example."""
    total, count = 0.0, 0
    for start in range(0, len(data), train_cfg.batch_size):
        rows = np.arange(start, min(start + train_cfg.batch_size, len(data)))
        batch = _make_batch(data, rows, train_cfg, vocab, mix_seed(seed, start))
        if train_cfg.objective == "classification":
            loss = objectives.classification_loss(params, enc_cfg, batch, train_cfg.pooling)
        elif train_cfg.objective == "mlm":
            loss = objectives.mlm_loss(params, enc_cfg, batch)
        else:
            loss = objectives.plm_loss(params, enc_cfg, batch, vocab)
        total += loss * len(rows)
        count += len(rows)
    return total / count


def mix_seed(seed: int, salt: int) -> int:
    """Derive an independent deterministic stream seed from (seed, salt)."""
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, salt]).generate_state(1)[0])


def fit(
    fit_set: EncodedSet,
    valid_set: EncodedSet,
    vocab: Vocabulary,
    enc_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    class_labels: Sequence[str] | None = None,
) -> tuple[Checkpoint, list[EpochStats]]:
    """Train with AdamW and return the epoch with the lowest validation loss
    (ties resolve to the earlier epoch), plus the per-epoch loss trace."""
    if len(fit_set) == 0 or len(valid_set) == 0:
        raise ValueError("fit and validation sets must be non-empty")
    if train_cfg.objective == "classification":
        if class_labels is None or fit_set.labels is None or valid_set.labels is None:
            raise ValueError("classification training requires labels and class names")
    if train_cfg.objective == "mlm" and not vocab.has_mask:
        raise ValueError("MLM training requires a vocabulary built with include_mask=True")

    num_classes = len(class_labels) if class_labels is not None else 2
    params = init_params(enc_cfg, num_classes=num_classes)
    state = OptimizerState.zeros(params)
    # One fixed corruption/permutation stream for validation so epoch losses compare.
    valid_seed = mix_seed(train_cfg.seed, 760561)

    history: list[EpochStats] = []
    best_epoch = 0
    best_loss = np.inf
    best_params: ParameterSet | None = None

    for epoch in range(1, train_cfg.max_epochs + 1):
        shuffle_rng = np.random.Generator(np.random.PCG64(mix_seed(train_cfg.seed, epoch)))
        order = shuffle_rng.permutation(len(fit_set))
        epoch_loss, n_batches = 0.0, 0
        for b_idx, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            rows = order[start : start + train_cfg.batch_size]
            batch_seed = mix_seed(train_cfg.seed, epoch * 1_000_003 + b_idx)
            batch = _make_batch(fit_set, rows, train_cfg, vocab, batch_seed)
            dropout_rng = (
                np.random.Generator(np.random.PCG64(mix_seed(batch_seed, 1)))
                if enc_cfg.dropout_rate > 0
                else None
            )
            loss, grads = gradients(
                params, enc_cfg, batch,
                pooling=train_cfg.pooling, vocab=vocab, dropout_rng=dropout_rng,
            )
            adamw_step(params, grads, state, train_cfg)
            epoch_loss += loss
            n_batches += 1
        train_loss = epoch_loss / n_batches
        valid_loss = _dataset_loss(params, enc_cfg, valid_set, train_cfg, vocab, valid_seed)
        if not np.isfinite(valid_loss):
            raise NonFiniteLossError(
                f"validation loss is {valid_loss} at epoch {epoch}; aborting"
            )
        history.append(EpochStats(epoch, train_loss, valid_loss))
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_epoch = epoch
            best_params = params.copy()

    checkpoint = Checkpoint(
        encoder_config=enc_cfg,
        train_config=train_cfg,
        vocab=vocab,
        params=best_params.astype(np.float32),
        class_labels=list(class_labels) if class_labels is not None else None,
        best_epoch=best_epoch,
        valid_loss=float(best_loss),
    )
    return checkpoint, history


def format_train_log(history: Sequence[EpochStats]) -> str:
    lines = ["epoch\ttrain_loss\tvalid_loss"]
    lines += [f"{h.epoch}\t{h.train_loss:.12g}\t{h.valid_loss:.12g}" for h in history]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def _config_dicts(ckpt: Checkpoint) -> dict:
    enc = ckpt.encoder_config
    tr = ckpt.train_config
    return {
        "format_version": ckpt.format_version,
        "encoder": {
            "vocab_size": enc.vocab_size, "layers": enc.layers, "hidden": enc.hidden,
            "heads": enc.heads, "ffn_mult": enc.ffn_mult, "max_len": enc.max_len,
            "position_scheme": enc.position_scheme, "dropout_rate": enc.dropout_rate,
            "seed": enc.seed, "head_hidden": enc.head_hidden,
        },
        "train": {
            "learning_rate": tr.learning_rate, "weight_decay": tr.weight_decay,
            "batch_size": tr.batch_size, "max_epochs": tr.max_epochs,
            "betas": list(tr.betas), "epsilon": tr.epsilon, "seed": tr.seed,
            "objective": tr.objective, "pooling": tr.pooling,
        },
        "class_labels": ckpt.class_labels,
        "best_epoch": ckpt.best_epoch,
        "valid_loss": ckpt.valid_loss,
        "vocab_lines": serialize_vocab(ckpt.vocab),
        "vocab_hash": ckpt.vocab_hash,
        "tensors": [
            [name, list(t.shape), bool(ckpt.params.decay[name])]
            for name, t in ckpt.params.items()
        ],
    }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Fixed layout: magic, version, canonical JSON header, little-endian
    float32 payload in flat order, trailing 64-bit truncated-SHA256 checksum."""
    meta = json.dumps(_config_dicts(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", ckpt.format_version)
    body += struct.pack("<Q", len(meta))
    body += meta
    for _, tensor in ckpt.params.items():
        body += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    body += hashlib.sha256(bytes(body)).digest()[:8]
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path: str | Path, expected_vocab_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 + 8:
        raise CorruptCheckpointError("checkpoint file is truncated")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise VersionMismatchError("bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, offset)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    offset += 4
    body, checksum = raw[:-8], raw[-8:]
    if hashlib.sha256(body).digest()[:8] != checksum:
        raise CorruptCheckpointError("checkpoint checksum mismatch")
    (meta_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if offset + meta_len > len(body):
        raise CorruptCheckpointError("checkpoint header is truncated")
    try:
        meta = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint header: {exc}") from None
    offset += meta_len

    enc_cfg = EncoderConfig(**meta["encoder"])
    tr_meta = dict(meta["train"])
    tr_meta["betas"] = tuple(tr_meta["betas"])
    train_cfg = TrainConfig(**tr_meta)
    vocab = _vocab_from_lines(meta["vocab_lines"])
    if vocab_hash(vocab) != meta["vocab_hash"]:
        raise VocabHashMismatchError("embedded vocabulary does not match its recorded hash")
    if expected_vocab_hash is not None and expected_vocab_hash != meta["vocab_hash"]:
        raise VocabHashMismatchError(
            "checkpoint was trained with a different vocabulary than the one supplied"
        )

    tensors: dict[str, np.ndarray] = {}
    decay: dict[str, bool] = {}
    for name, shape, decayed in meta["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        nbytes = size * 4
        if offset + nbytes > len(body):
            raise CorruptCheckpointError(f"payload truncated at tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        decay[name] = bool(decayed)
        offset += nbytes
    if offset != len(body):
        raise CorruptCheckpointError("trailing bytes after tensor payload")

    return Checkpoint(
        encoder_config=enc_cfg,
        train_config=train_cfg,
        vocab=vocab,
        params=ParameterSet(tensors, decay),
        class_labels=meta["class_labels"],
        best_epoch=meta["best_epoch"],
        valid_loss=meta["valid_loss"],
        format_version=version,
    )


def _vocab_from_lines(lines: str) -> Vocabulary:
    from .tokenizer import MASK_ID, MASK_TOKEN

    tokens = []
    for row in lines.split("\n"):
        if row:
            tokens.append(row.split("\t")[0])
    has_mask = len(tokens) > MASK_ID and tokens[MASK_ID] == MASK_TOKEN
    return Vocabulary(tuple(tokens), has_mask)
