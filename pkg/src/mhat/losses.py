"""Internal-LM loss, the combined MHAT objective, and perplexity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .lattice import hat_loss
from .model import ConfigError, MhatModel
from .numerics import Tensor


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    # reduction is fixed to sum

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")


def _ilm_sequence_nll(model: MhatModel, tokens: Sequence[int]) -> Tensor:
    if len(tokens) == 0:
        raise ConfigError("ilm_loss requires non-empty transcripts")
    rows = model.ilm_log_prob_rows(tokens)  # (U+1, |V|)
    u = len(tokens)
    picked = rows[np.arange(u), np.asarray(tokens, dtype=np.int64)]
    return nm.neg(nm.total(picked))


def ilm_loss(model: MhatModel, transcripts: Sequence[Sequence[int]]) -> Tensor:
    """Summed next-token cross-entropy of the internal LM on transcripts.

    Takes no acoustic input and touches only group-"ilm" parameters.
    There is no end-of-sentence event: the transducer's blank head owns
    termination.  Terms are added value-sorted for permutation-stable sums.
    """
    terms = [_ilm_sequence_nll(model, y) for y in transcripts]
    if not terms:
        return Tensor(0.0)
    order = sorted(range(len(terms)), key=lambda i: float(terms[i].data))
    out = terms[order[0]]
    for i in order[1:]:
        out = nm.add(out, terms[i])
    return out


def mhat_loss(
    model: MhatModel,
    batch: Sequence[tuple[np.ndarray, Sequence[int]]],
    cfg: LossConfig = LossConfig(),
) -> Tensor:
    """Transducer loss plus alpha times the internal-LM loss on the transcripts.

    With alpha = 0 this returns the transducer loss itself (bit-exact).
    Empty transcripts contribute nothing to the internal-LM term.
    """
    base = hat_loss(model, batch)
    if cfg.alpha == 0.0:
        return base
    transcripts = [y for _, y in batch if len(y) > 0]
    if not transcripts:
        return base
    return nm.add(base, nm.mul(cfg.alpha, ilm_loss(model, transcripts)))


def perplexity(model_or_lm, transcripts: Sequence[Sequence[int]]) -> float:
    """exp(mean per-token negative log-probability); SOS never counted.

    For an MHAT model this scores the internal LM; for an external LM it
    scores token events under the full token+EOS distribution without
    counting EOS events, keeping the two comparable.
    """
    with nm.no_grad():
        terms = []
        count = 0
        for y in transcripts:
            if len(y) == 0:
                continue
            if isinstance(model_or_lm, MhatModel):
                rows = model_or_lm.ilm_log_prob_rows(y).data
                terms.append(-float(rows[np.arange(len(y)), np.asarray(y, dtype=np.int64)].sum()))
            else:
                terms.append(-float(np.sum(model_or_lm.token_log_probs(y))))
            count += len(y)
    if count == 0:
        raise ConfigError("perplexity requires at least one token")
    # fsum: exactly rounded, so corpus order cannot change the result
    with np.errstate(over="ignore"):  # an untrained model may overflow to inf
        return float(np.exp(math.fsum(terms) / count))
