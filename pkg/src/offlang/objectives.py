"""Training objectives and heads: MLM corruption, permutation-LM likelihoods,
classification with softmax/cross-entropy, and the hierarchical prediction cascade.

The permutation objective is single-stream: one forward pass under a
permutation attention mask, predicting the last k tokens of the sampled order
from each predicted position's own hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import encoder
from .corpus import CLASS_ORDER, LabelA, LabelB, LabelC
from .encoder import EncoderConfig, ParameterSet, softmax_last
from .preprocess import preprocess
from .tokenizer import CLS_ID, MASK_ID, PAD_ID, SEP_ID, TokenSequence, Vocabulary, encode

if TYPE_CHECKING:  # pragma: no cover
    from .training import Checkpoint


class StageCompatError(ValueError):
    """Cascade checkpoints disagree with the expected stage layout."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_k_predict(n: int) -> int:
    """Partial-prediction default: about one sixth of the content tokens."""
    return min(n, max(1, _round_half_up(n / 6.0)))


def content_positions(ids: np.ndarray, mask: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Positions carrying corpus tokens: unmasked and not PAD/CLS/SEP/MASK.

    Unknown-token placeholders stand in for real words and count as content.
    """
    structural = [PAD_ID, CLS_ID, SEP_ID]
    if vocab.has_mask:
        structural.append(MASK_ID)
    keep = (mask == 1) & ~np.isin(ids, structural)
    return np.flatnonzero(keep)


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ClassificationBatch:
    ids: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T)
    labels: np.ndarray  # (B,) class indices in canonical order


@dataclass(eq=False)
class MlmBatch:
    """Corrupted ids with recovery targets at the masked positions."""

    ids: np.ndarray  # (B, T) corrupted
    mask: np.ndarray  # (B, T) attention mask
    targets: np.ndarray  # (B, T) original ids where masked, -1 elsewhere
    is_masked: np.ndarray  # (B, T) bool


@dataclass(eq=False)
class PlmBatch:
    ids: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T)
    seed: int
    k_predict: int | None = None  # None applies the per-sequence default rule


def mlm_corrupt(seq: TokenSequence, vocab: Vocabulary, seed: int) -> MlmBatch:
    """Mask max(1, round(0.15 n)) of the n content positions, chosen uniformly
    without replacement, deterministically in ``seed``."""
    if not vocab.has_mask:
        raise ValueError("vocabulary was built without a [MASK] token")
    positions = content_positions(seq.ids, seq.mask, vocab)
    n = len(positions)
    if n == 0:
        raise ValueError("sequence has no content tokens to mask")
    n_mask = max(1, _round_half_up(0.15 * n))
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(positions, size=n_mask, replace=False)
    ids = seq.ids.copy()
    targets = np.full_like(seq.ids, -1)
    is_masked = np.zeros(len(seq.ids), dtype=bool)
    targets[chosen] = seq.ids[chosen]
    ids[chosen] = MASK_ID
    is_masked[chosen] = True
    return MlmBatch(ids[None, :], seq.mask[None, :], targets[None, :], is_masked[None, :])


def mlm_corrupt_batch(seqs: Sequence[TokenSequence], vocab: Vocabulary, seed: int) -> MlmBatch:
    """Corrupt each sequence with a child seed derived from (seed, row index)."""
    rows = [mlm_corrupt(s, vocab, _child_seed(seed, i)) for i, s in enumerate(seqs)]
    return MlmBatch(
        np.concatenate([r.ids for r in rows]),
        np.concatenate([r.mask for r in rows]),
        np.concatenate([r.targets for r in rows]),
        np.concatenate([r.is_masked for r in rows]),
    )


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# softmax, cross-entropy, classification head
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stochastic probabilities over the last axis."""
    return softmax_last(np.asarray(logits, dtype=np.float64))


def cross_entropy(probabilities: np.ndarray, gold) -> float:
    """-log p(gold); mean over the batch when given a probability matrix."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim == 1:
        return float(-np.log(p[int(gold)]))
    gold = np.asarray(gold, dtype=np.int64)
    return float(-np.log(p[np.arange(len(gold)), gold]).mean())


def classify(pooled: np.ndarray, params: ParameterSet) -> np.ndarray:
    """Classifier head logits: affine, with one optional GELU hidden layer."""
    x = pooled
    if "head.hidden_w" in params:
        x = encoder.gelu(x @ params["head.hidden_w"] + params["head.hidden_b"])
    return x @ params["head.w"] + params["head.b"]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _classifier_backward(pooled, params, d_logits, grads):
    """Head gradients; returns d(loss)/d(pooled)."""
    if "head.hidden_w" in params:
        pre = pooled @ params["head.hidden_w"] + params["head.hidden_b"]
        hid = encoder.gelu(pre)
        grads["head.w"] += hid.T @ d_logits
        grads["head.b"] += d_logits.sum(axis=0)
        d_hid = (d_logits @ params["head.w"].T) * encoder.gelu_grad(pre)
        grads["head.hidden_w"] += pooled.T @ d_hid
        grads["head.hidden_b"] += d_hid.sum(axis=0)
        return d_hid @ params["head.hidden_w"].T
    grads["head.w"] += pooled.T @ d_logits
    grads["head.b"] += d_logits.sum(axis=0)
    return d_logits @ params["head.w"].T


# ---------------------------------------------------------------------------
# classification objective
# ---------------------------------------------------------------------------


def classification_logits(
    params: ParameterSet,
    config: EncoderConfig,
    ids: np.ndarray,
    mask: np.ndarray,
    pooling: str,
    dropout_rng: np.random.Generator | None = None,
    want_cache: bool = False,
):
    out = encoder.forward(params, config, ids, mask, dropout_rng=dropout_rng,
                          want_cache=want_cache)
    hidden, cache = out if want_cache else (out, None)
    pooled = encoder.pool(hidden, mask, pooling)
    logits = classify(pooled, params)
    return (logits, pooled, cache) if want_cache else logits


def classification_loss(
    params, config, batch: ClassificationBatch, pooling: str, dropout_rng=None
) -> float:
    logits = classification_logits(params, config, batch.ids, batch.mask, pooling, dropout_rng)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(batch.labels)), batch.labels].mean())


def classification_grads(
    params, config, batch: ClassificationBatch, pooling: str, dropout_rng=None
) -> tuple[float, dict[str, np.ndarray]]:
    logits, pooled, cache = classification_logits(
        params, config, batch.ids, batch.mask, pooling, dropout_rng, want_cache=True
    )
    B = len(batch.labels)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(B), batch.labels].mean())
    d_logits = np.exp(logp)
    d_logits[np.arange(B), batch.labels] -= 1.0
    d_logits /= B
    grads = params.zeros_like()
    d_pooled = _classifier_backward(pooled, params, d_logits, grads)
    d_hidden = encoder.pool_backward(d_pooled, batch.mask, pooling)
    encoder.backward(params, config, cache, d_hidden, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# masked language modeling
# ---------------------------------------------------------------------------


def _lm_logits_at(params, hidden, rows, cols):
    return hidden[rows, cols] @ params["lm.w"] + params["lm.b"]


def mlm_loss(params, config, batch: MlmBatch, dropout_rng=None) -> float:
    if not batch.is_masked.any():
        raise ValueError("MLM batch has no masked positions")
    hidden = encoder.forward(params, config, batch.ids, batch.mask, dropout_rng=dropout_rng)
    rows, cols = np.nonzero(batch.is_masked)
    logits = _lm_logits_at(params, hidden, rows, cols)
    logp = _log_softmax(logits)
    targets = batch.targets[rows, cols]
    return float(-logp[np.arange(len(rows)), targets].mean())


def mlm_grads(params, config, batch: MlmBatch, dropout_rng=None):
    if not batch.is_masked.any():
        raise ValueError("MLM batch has no masked positions")
    hidden, cache = encoder.forward(
        params, config, batch.ids, batch.mask, dropout_rng=dropout_rng, want_cache=True
    )
    rows, cols = np.nonzero(batch.is_masked)
    m = len(rows)
    states = hidden[rows, cols]
    logits = states @ params["lm.w"] + params["lm.b"]
    logp = _log_softmax(logits)
    targets = batch.targets[rows, cols]
    loss = float(-logp[np.arange(m), targets].mean())

    d_logits = np.exp(logp)
    d_logits[np.arange(m), targets] -= 1.0
    d_logits /= m
    grads = params.zeros_like()
    grads["lm.w"] += states.T @ d_logits
    grads["lm.b"] += d_logits.sum(axis=0)
    d_hidden = np.zeros_like(hidden)
    d_hidden[rows, cols] = d_logits @ params["lm.w"].T
    encoder.backward(params, config, cache, d_hidden, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# permutation language modeling
# ---------------------------------------------------------------------------


def build_permutation_mask(perm: Sequence[int], max_len: int, cls_pos: int = 0) -> np.ndarray:
    """Additive (max_len, max_len) mask realizing an autoregressive factorization:
    position perm[i] sees exactly CLS and perm[0..i-1]; CLS sees only itself;
    positions outside the permutation fall back to CLS so their rows stay defined.
    """
    perm = [int(p) for p in perm]
    if len(set(perm)) != len(perm):
        raise ValueError("permutation contains duplicate positions")
    if any(p == cls_pos or not 0 <= p < max_len for p in perm):
        raise ValueError("permutation positions must be in range and exclude CLS")
    m = np.full((max_len, max_len), -np.inf)
    m[:, cls_pos] = 0.0  # every row may rest on CLS
    for i, p in enumerate(perm):
        m[p, perm[:i]] = 0.0
    return m


def sequence_log_likelihood(
    params, config, seq: TokenSequence, perm: Sequence[int]
) -> float:
    """Sum of log P(x_perm[i] | CLS, x_perm[0..i-1]) from one masked forward pass."""
    perm = [int(p) for p in perm]
    T = len(seq.ids)
    extra = build_permutation_mask(perm, T)
    hidden = encoder.forward(params, config, seq.ids[None, :], seq.mask[None, :], extra_mask=extra)
    cols = np.asarray(perm, dtype=np.int64)
    logits = _lm_logits_at(params, hidden, np.zeros(len(cols), dtype=np.int64), cols)
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite language-model logits")
    logp = _log_softmax(logits)
    return float(logp[np.arange(len(cols)), seq.ids[cols]].sum())


def sample_permutations(
    batch_ids: np.ndarray, batch_mask: np.ndarray, vocab: Vocabulary, seed: int
) -> list[np.ndarray]:
    """One uniform permutation of each row's content positions, deterministic in seed."""
    perms = []
    for i in range(len(batch_ids)):
        positions = content_positions(batch_ids[i], batch_mask[i], vocab)
        rng = np.random.Generator(np.random.PCG64(_child_seed(seed, i)))
        perms.append(rng.permutation(positions))
    return perms


def _plm_predicted(perms: list[np.ndarray], k_predict: int | None):
    rows, cols = [], []
    ks = []
    for i, perm in enumerate(perms):
        n = len(perm)
        if n == 0:
            raise ValueError(f"sequence {i} has no content tokens to predict")
        k = default_k_predict(n) if k_predict is None else int(k_predict)
        if k < 1:
            raise ValueError("k_predict must be >= 1")
        if k > n:
            raise ValueError(f"k_predict {k} exceeds content token count {n}")
        ks.append(k)
        rows.extend([i] * k)
        cols.extend(int(p) for p in perm[n - k :])
    return np.asarray(rows), np.asarray(cols), np.asarray(ks)


def _plm_forward(params, config, ids, mask, perms, dropout_rng=None, want_cache=False):
    B, T = ids.shape
    extra = np.stack([build_permutation_mask(perm, T) for perm in perms])
    return encoder.forward(params, config, ids, mask, extra_mask=extra,
                           dropout_rng=dropout_rng, want_cache=want_cache)


def plm_loss_for_perms(
    params, config, ids, mask, perms, k_predict: int | None = None, dropout_rng=None
) -> float:
    """Mean over sequences of the mean NLL of each sequence's last-k predicted tokens."""
    rows, cols, ks = _plm_predicted(perms, k_predict)
    hidden = _plm_forward(params, config, ids, mask, perms, dropout_rng)
    logits = _lm_logits_at(params, hidden, rows, cols)
    logp = _log_softmax(logits)
    nll = -logp[np.arange(len(rows)), ids[rows, cols]]
    weights = 1.0 / (ks[rows] * len(perms))
    return float((nll * weights).sum())


def plm_loss(params, config, batch: PlmBatch, vocab: Vocabulary, dropout_rng=None) -> float:
    perms = sample_permutations(batch.ids, batch.mask, vocab, batch.seed)
    return plm_loss_for_perms(params, config, batch.ids, batch.mask, perms,
                              batch.k_predict, dropout_rng)


def plm_grads(params, config, batch: PlmBatch, vocab: Vocabulary, dropout_rng=None):
    perms = sample_permutations(batch.ids, batch.mask, vocab, batch.seed)
    rows, cols, ks = _plm_predicted(perms, batch.k_predict)
    hidden, cache = _plm_forward(
        params, config, batch.ids, batch.mask, perms, dropout_rng, want_cache=True
    )
    states = hidden[rows, cols]
    logits = states @ params["lm.w"] + params["lm.b"]
    logp = _log_softmax(logits)
    targets = batch.ids[rows, cols]
    weights = 1.0 / (ks[rows] * len(perms))
    loss = float((-logp[np.arange(len(rows)), targets] * weights).sum())

    d_logits = np.exp(logp)
    d_logits[np.arange(len(rows)), targets] -= 1.0
    d_logits *= weights[:, None]
    grads = params.zeros_like()
    grads["lm.w"] += states.T @ d_logits
    grads["lm.b"] += d_logits.sum(axis=0)
    d_hidden = np.zeros_like(hidden)
    np.add.at(d_hidden, (rows, cols), d_logits @ params["lm.w"].T)
    encoder.backward(params, config, cache, d_hidden, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# prediction and the hierarchical cascade
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HierarchicalPrediction:
    """Cascade output; obeys the same hierarchy law as gold records."""

    a: LabelA
    b: LabelB | None
    c: LabelC | None
    p_a: float
    p_b: float | None
    p_c: float | None

    def __post_init__(self):
        if (self.b is not None) != (self.a == LabelA.OFF):
            raise ValueError("prediction violates hierarchy: b present iff a=OFF")
        if (self.c is not None) != (self.b == LabelB.TIN):
            raise ValueError("prediction violates hierarchy: c present iff b=TIN")


def predict_labels(
    checkpoint: "Checkpoint", texts: Sequence[str], batch_size: int = 128
) -> tuple[np.ndarray, np.ndarray]:
    """Classify raw texts with a stage checkpoint.

    Returns (argmax class indices, probability matrix); ties resolve to the
    lower class index.
    """
    if checkpoint.class_labels is None:
        raise StageCompatError("checkpoint was not trained for classification")
    params = checkpoint.params.astype(np.float64)
    config = checkpoint.encoder_config
    pooling = checkpoint.train_config.pooling
    probs = np.zeros((len(texts), len(checkpoint.class_labels)))
    for start in range(0, len(texts), batch_size):
        chunk = texts[start : start + batch_size]
        seqs = [encode(preprocess(t).text, checkpoint.vocab, config.max_len) for t in chunk]
        ids = np.stack([s.ids for s in seqs])
        mask = np.stack([s.mask for s in seqs])
        width = max(1, int(mask.sum(axis=1).max()))
        logits = classification_logits(
            params, config, ids[:, :width], mask[:, :width], pooling
        )
        probs[start : start + len(chunk)] = softmax(logits)
    return probs.argmax(axis=1), probs


def _check_stage(checkpoint: "Checkpoint", level: str) -> None:
    expected = list(CLASS_ORDER[level])
    if checkpoint.class_labels != expected:
        raise StageCompatError(
            f"stage {level} checkpoint has classes {checkpoint.class_labels}, expected {expected}"
        )


def predict_hierarchy(
    texts: Sequence[str],
    checkpoint_a: "Checkpoint",
    checkpoint_b: "Checkpoint",
    checkpoint_c: "Checkpoint",
    batch_size: int = 128,
) -> list[HierarchicalPrediction]:
    """Stage A on every text, B only where A=OFF, C only where B=TIN."""
    _check_stage(checkpoint_a, "A")
    _check_stage(checkpoint_b, "B")
    _check_stage(checkpoint_c, "C")
    n = len(texts)
    idx_a, probs_a = predict_labels(checkpoint_a, texts, batch_size)

    b_rows = [i for i in range(n) if CLASS_ORDER["A"][idx_a[i]] == "OFF"]
    idx_b = {}
    probs_b = {}
    if b_rows:
        bi, bp = predict_labels(checkpoint_b, [texts[i] for i in b_rows], batch_size)
        idx_b = dict(zip(b_rows, bi))
        probs_b = dict(zip(b_rows, bp))

    c_rows = [i for i in b_rows if CLASS_ORDER["B"][idx_b[i]] == "TIN"]
    idx_c = {}
    probs_c = {}
    if c_rows:
        ci, cp = predict_labels(checkpoint_c, [texts[i] for i in c_rows], batch_size)
        idx_c = dict(zip(c_rows, ci))
        probs_c = dict(zip(c_rows, cp))

    out = []
    for i in range(n):
        a = LabelA(CLASS_ORDER["A"][idx_a[i]])
        b = c = None
        p_b = p_c = None
        if i in idx_b:
            b = LabelB(CLASS_ORDER["B"][idx_b[i]])
            p_b = float(probs_b[i][idx_b[i]])
        if i in idx_c:
            c = LabelC(CLASS_ORDER["C"][idx_c[i]])
            p_c = float(probs_c[i][idx_c[i]])
        out.append(HierarchicalPrediction(a, b, c, float(probs_a[i][idx_a[i]]), p_b, p_c))
    return out
