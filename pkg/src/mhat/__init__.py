"""Desk-scale hybrid autoregressive transducers with adaptable internal LMs."""

from .adapt import AdaptReport, IlmaConfig, ilm_snapshot, ilma_loss, run_ilma
from .data import (
    CheckpointError,
    Corpus,
    DomainSpec,
    Utterance,
    confusable_pair_domains,
    gen_corpus,
    load_checkpoint,
    read_corpus,
    read_text_corpus,
    read_vocab,
    save_checkpoint,
    write_corpus,
    write_text_corpus,
    write_vocab,
)
from .decode import (
    BeamHypothesis,
    DecodeResult,
    FusionConfig,
    NO_FUSION,
    beam_search,
    greedy_decode,
    score_sequence,
)
from .extlm import ExternalLm, LmTrainConfig, lm_perplexity, train_lm
from .lattice import (
    AlignmentLattice,
    StructureError,
    backward_log_betas,
    brute_force_log_prob,
    build_lattice,
    forward_log_prob,
    hat_loss,
)
from .losses import LossConfig, ilm_loss, mhat_loss, perplexity
from .model import (
    ConfigError,
    EncoderConfig,
    EmbeddingDecoderConfig,
    HatModel,
    MhatModel,
    VocabError,
    Vocabulary,
    alignment_arc_log_probs,
    label_posterior,
)
from .numerics import (
    EvaluationError,
    ParameterSet,
    ShapeError,
    Tensor,
    affine,
    gradient_check,
    log_softmax,
    log_sum_exp,
    no_grad,
    sigmoid,
)
from .training import TrainConfig, train_asr

__version__ = "0.1.0"
