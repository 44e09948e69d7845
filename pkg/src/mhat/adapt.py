"""Text-only internal-LM adaptation with KLD regularization.

Only the group-"ilm" parameters (label decoder plus its output projection)
are ever touched; the blank and acoustic branches stay bit-identical, so
adaptation cannot distort segmentation or acoustic scores.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .losses import ilm_loss, perplexity
from .model import ConfigError, MhatModel
from .numerics import Tensor
from .training import make_optimizer


@dataclass
class IlmaConfig:
    # lr is calibrated against the sum-reduction loss (gradients scale
    # with the token count of a batch)
    rho: float = 0.5
    steps: int = 600
    lr: float = 1e-3
    batch_size: int = 32
    optimizer: str = "sgd"  # plain fixed-step by default; momentum/adam behind config
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")


@dataclass
class AdaptReport:
    rho: float
    steps: int
    source_ppl_before: float | None = None
    source_ppl_after: float | None = None
    target_ppl_before: float | None = None
    target_ppl_after: float | None = None
    loss_curve: list[float] = field(default_factory=list)

    def kv_lines(self) -> list[str]:
        lines = [f"rho {self.rho!r}", f"steps {self.steps}"]
        for key in ("source_ppl_before", "source_ppl_after", "target_ppl_before", "target_ppl_after"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} {val!r}")
        return lines

    def render_text(self) -> str:
        rows = [("metric", "before", "after")]
        if self.source_ppl_before is not None:
            rows.append(("source ppl", f"{self.source_ppl_before:.3f}", f"{self.source_ppl_after:.3f}"))
        if self.target_ppl_before is not None:
            rows.append(("target ppl", f"{self.target_ppl_before:.3f}", f"{self.target_ppl_after:.3f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        out = [f"adaptation: rho={self.rho} steps={self.steps}"]
        for r in rows:
            out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        return "\n".join(out)


def ilm_snapshot(model: MhatModel) -> MhatModel:
    """Frozen copy of the model to serve as the pre-adaptation teacher."""
    return copy.deepcopy(model)


def _kl_sequence_term(model: MhatModel, teacher: MhatModel, tokens: Sequence[int]) -> Tensor:
    """Cross-entropy of the student against the teacher's full distribution."""
    with nm.no_grad():
        t_rows = np.exp(teacher.ilm_log_prob_rows(tokens).data[: len(tokens)])
    s_rows = model.ilm_log_prob_rows(tokens)[: len(tokens)]
    return nm.neg(nm.total(nm.mul(t_rows, s_rows)))


def ilma_loss(
    model: MhatModel,
    teacher: MhatModel,
    transcripts: Sequence[Sequence[int]],
    rho: float,
) -> Tensor:
    """(1-rho) data cross-entropy plus rho teacher cross-entropy.

    The teacher term uses the full vocabulary distribution (an exact
    expectation, not samples), which makes rho=1 exactly stationary at
    the snapshot parameters.
    """
    if not (0.0 <= rho <= 1.0):
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    if rho == 0.0:
        return ilm_loss(model, transcripts)
    terms = [_kl_sequence_term(model, teacher, y) for y in transcripts]
    if not terms:
        return Tensor(0.0)
    order = sorted(range(len(terms)), key=lambda i: float(terms[i].data))
    kl = terms[order[0]]
    for i in order[1:]:
        kl = nm.add(kl, terms[i])
    if rho == 1.0:
        return nm.mul(rho, kl)
    return nm.add(nm.mul(1.0 - rho, ilm_loss(model, transcripts)), nm.mul(rho, kl))


def run_ilma(
    model: MhatModel,
    corpus,
    cfg: IlmaConfig,
    heldout_source: Sequence[Sequence[int]] | None = None,
    heldout_target: Sequence[Sequence[int]] | None = None,
) -> AdaptReport:
    """Adapt the internal LM on text; mutates only group-"ilm" tensors.

    `corpus` may be a data.Corpus or a plain list of token sequences.
    """
    transcripts = [it.tokens for it in corpus.items] if hasattr(corpus, "items") else list(corpus)
    transcripts = [y for y in transcripts if len(y) > 0]
    if not transcripts:
        raise ConfigError("adaptation corpus is empty")
    if model.trained_alpha is None or model.trained_alpha == 0.0:
        warnings.warn(
            "adapting a model trained without an internal-LM loss; "
            "its internal LM may not be a usable standalone LM",
            stacklevel=2,
        )

    report = AdaptReport(rho=cfg.rho, steps=cfg.steps)
    if heldout_source:
        report.source_ppl_before = perplexity(model, heldout_source)
    if heldout_target:
        report.target_ppl_before = perplexity(model, heldout_target)

    teacher = ilm_snapshot(model)
    ilm_tensors = [(n, model.params[n]) for n in model.params.group_names("ilm")]
    opt = make_optimizer(ilm_tensors, cfg)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.steps):
        picks = rng.choice(len(transcripts), size=min(cfg.batch_size, len(transcripts)), replace=False)
        batch = [transcripts[i] for i in picks]
        loss = ilma_loss(model, teacher, batch, cfg.rho)
        model.params.zero_grads()
        loss.backward()
        opt.step()
        report.loss_curve.append(float(loss.data))

    if heldout_source:
        report.source_ppl_after = perplexity(model, heldout_source)
    if heldout_target:
        report.target_ppl_after = perplexity(model, heldout_target)
    return report
