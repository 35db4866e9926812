import numpy as np
import pytest

from offlang.corpus import LabelA, LabelB, LabelC, TweetRecord, read_olid
from offlang.encoder import EncoderConfig
from offlang.tokenizer import Vocabulary

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"

FIXTURE = DATA_DIR + "/fixture_200.tsv"

# Table-derived OLID distribution constants used across tests.
OLID_TRAIN_A = {"NOT": 8840, "OFF": 4400}
OLID_TRAIN_B = {"UNT": 524, "TIN": 3876}
OLID_TRAIN_C = {"IND": 2407, "GRP": 1074, "OTH": 395}
OLID_TEST_A = {"NOT": 620, "OFF": 240}
OLID_TEST_C = {"IND": 100, "GRP": 78, "OTH": 35}

FIXTURE_A = {"NOT": 120, "OFF": 80}
FIXTURE_B = {"UNT": 20, "TIN": 60}
FIXTURE_C = {"IND": 25, "GRP": 20, "OTH": 15}


def tiny_vocab(with_mask: bool = False, extra: int = 8) -> Vocabulary:
    specials = ("[PAD]", "[UNK]", "[CLS]", "[SEP]") + (("[MASK]",) if with_mask else ())
    words = tuple(f"w{i}" for i in range(extra))
    return Vocabulary(specials + words, with_mask)


def tiny_config(**overrides) -> EncoderConfig:
    base = dict(
        vocab_size=12, layers=1, hidden=8, heads=2, ffn_mult=2,
        max_len=8, position_scheme="absolute", dropout_rate=0.0, seed=7,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def make_record(i: int, a: str, b: str | None = None, c: str | None = None,
                text: str = "some tweet text") -> TweetRecord:
    return TweetRecord(
        str(i), text, LabelA(a),
        LabelB(b) if b else None, LabelC(c) if c else None,
    )


@pytest.fixture(scope="session")
def fixture_records():
    return read_olid(FIXTURE)


def finite_difference(loss_fn, params, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient over every flat parameter scalar."""
    flat = params.to_flat()
    out = np.zeros_like(flat)
    for i in range(len(flat)):
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        out[i] = (loss_fn(params.from_flat(up)) - loss_fn(params.from_flat(down))) / (2 * h)
    return out


def gradcheck_max_err(loss_fn, grad_fn, params, h: float = 1e-4) -> float:
    """Max guarded relative error between analytic and central-difference gradients."""
    _, grads = grad_fn(params)
    analytic = np.concatenate([grads[name].ravel() for name in params.names()])
    numeric = finite_difference(loss_fn, params, h)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    return float((np.abs(analytic - numeric) / denom).max())
