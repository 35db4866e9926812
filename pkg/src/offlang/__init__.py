"""Hierarchical offensive-language detection on OLID-format tweets.

Desk-scale pipeline: TSV corpus handling, tweet cleaning, a word-level
vocabulary, a miniature transformer encoder with hand-rolled backpropagation,
classification/MLM/PLM objectives, AdamW training, and macro-F1 evaluation.
"""

from .corpus import (
    ClassDistribution,
    LabelA,
    LabelB,
    LabelC,
    SplitSpec,
    TweetRecord,
    class_counts,
    holdout_validation,
    parse_olid,
    read_olid,
    resample,
    split,
    write_olid,
)
from .encoder import EncoderConfig, ParameterSet, attention, forward, init_params, pool
from .evaluation import ConfusionMatrix, MetricsReport, class_metrics, confusion, evaluate, macro_f1
from .objectives import (
    HierarchicalPrediction,
    build_permutation_mask,
    classify,
    cross_entropy,
    mlm_corrupt,
    mlm_loss,
    plm_loss,
    predict_hierarchy,
    sequence_log_likelihood,
    softmax,
)
from .preprocess import CleanText, normalize, preprocess, segment_hashtags, strip_entities, substitute_emoji
from .tokenizer import TokenSequence, Vocabulary, build_vocab, decode, encode
from .training import (
    Checkpoint,
    EncodedSet,
    OptimizerState,
    TrainConfig,
    adamw_step,
    fit,
    gradients,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"
