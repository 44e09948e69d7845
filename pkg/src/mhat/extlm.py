"""Standalone external neural LM for fusion and perplexity reference.

Same bigram-context embedding-decoder architecture as the MHAT label
decoder, with one extra output column for the end-of-sentence event, so
the LM defines a proper distribution over finite sequences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .model import (
    ConfigError,
    EmbeddingDecoder,
    EmbeddingDecoderConfig,
    Vocabulary,
    bigram_contexts,
    context_of,
)
from .numerics import ParameterSet, Tensor
from .training import make_optimizer


class ExternalLm:
    """Embedding-decoder LM over the ASR vocabulary plus EOS."""

    kind = "lm"

    def __init__(self, vocab: Vocabulary, embed_dim: int = 64, tied_tables: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.cfg = EmbeddingDecoderConfig(embed_dim=embed_dim, tied_tables=tied_tables)
        self.eos_id = vocab.size  # output index; contexts use sos_id = vocab.size
        p = ParameterSet()
        self.params = p
        self.decoder = EmbeddingDecoder(p, "decoder", vocab, self.cfg, "ilm", rng)
        self.out_w = p.add(
            "out_proj.weight",
            rng.standard_normal((vocab.size + 1, embed_dim)) / np.sqrt(embed_dim),
            "ilm",
        )
        self.out_b = p.add("out_proj.bias", np.zeros(vocab.size + 1), "ilm")

    def next_log_prob_rows(self, tokens: Sequence[int]) -> Tensor:
        """Log-prob rows over tokens+EOS for every step, incl. the EOS step: (U+1, |V|+1)."""
        self.vocab.check_ids(tokens)
        ctx = bigram_contexts(tokens, self.vocab.sos_id)
        return nm.log_softmax(nm.affine(self.decoder.outputs(ctx), self.out_w, self.out_b))

    def next_log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        """Distribution over the next event (tokens + EOS) after a prefix."""
        self.vocab.check_ids(prefix)
        ctx = context_of(prefix, self.vocab.sos_id)
        g = self.decoder.output_np(ctx)
        z = self.out_w.data @ g + self.out_b.data
        return z - nm.log_sum_exp(z)

    def lm_log_prob(self, prefix: Sequence[int], next_id: int) -> float:
        """log P(next | prefix); `next_id` may be a token or the EOS id."""
        if not 0 <= int(next_id) <= self.vocab.size:
            raise ConfigError(f"next id {next_id} outside tokens+EOS range")
        return float(self.next_log_probs(prefix)[int(next_id)])

    def token_log_probs(self, tokens: Sequence[int]) -> np.ndarray:
        """Per-token event log-probs (EOS events excluded), no graph."""
        with nm.no_grad():
            rows = self.next_log_prob_rows(tokens).data
        u = len(tokens)
        return rows[np.arange(u), np.asarray(tokens, dtype=np.int64)]

    def sentence_log_prob(self, tokens: Sequence[int]) -> float:
        """Full sentence log-prob including the terminating EOS event."""
        with nm.no_grad():
            rows = self.next_log_prob_rows(tokens).data
        u = len(tokens)
        targets = np.append(np.asarray(tokens, dtype=np.int64), self.eos_id)
        return float(rows[np.arange(u + 1), targets].sum())

    def scorer(self) -> "LmScorer":
        return LmScorer(self)

    def config_items(self) -> dict[str, str]:
        return {
            "embed_dim": str(self.cfg.embed_dim),
            "tied_tables": str(int(self.cfg.tied_tables)),
        }

    @staticmethod
    def from_config(vocab: Vocabulary, cfg: dict[str, str]) -> "ExternalLm":
        return ExternalLm(
            vocab,
            embed_dim=int(cfg["embed_dim"]),
            tied_tables=bool(int(cfg["tied_tables"])),
        )


class LmScorer:
    """Context-cached next-event distributions for beam search."""

    def __init__(self, lm: ExternalLm):
        self.lm = lm
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def next_log_probs(self, ctx: tuple[int, int]) -> np.ndarray:
        hit = self._cache.get(ctx)
        if hit is None:
            g = self.lm.decoder.output_np(ctx)
            z = self.lm.out_w.data @ g + self.lm.out_b.data
            hit = z - nm.log_sum_exp(z)
            self._cache[ctx] = hit
        return hit


@dataclass
class LmTrainConfig:
    embed_dim: int = 64
    tied_tables: bool = False
    epochs: int = 30
    batch_size: int = 64
    lr: float = 5e-3
    optimizer: str = "adam"
    seed: int = 0


def _sentence_nll(lm: ExternalLm, tokens: Sequence[int]) -> Tensor:
    rows = lm.next_log_prob_rows(tokens)
    u = len(tokens)
    targets = np.append(np.asarray(tokens, dtype=np.int64), lm.eos_id)
    return nm.neg(nm.total(rows[np.arange(u + 1), targets]))


def lm_loss(lm: ExternalLm, transcripts: Sequence[Sequence[int]]) -> Tensor:
    """Summed sentence NLL with EOS appended; value-sorted reduction."""
    terms = [_sentence_nll(lm, y) for y in transcripts]
    if not terms:
        return Tensor(0.0)
    order = sorted(range(len(terms)), key=lambda i: float(terms[i].data))
    out = terms[order[0]]
    for i in order[1:]:
        out = nm.add(out, terms[i])
    return out


def lm_perplexity(lm: ExternalLm, transcripts: Sequence[Sequence[int]]) -> float:
    """exp(mean NLL per event), the EOS event included."""
    nll = 0.0
    events = 0
    for y in transcripts:
        nll -= lm.sentence_log_prob(y)
        events += len(y) + 1
    if events == 0:
        raise ConfigError("perplexity requires at least one sentence")
    return float(np.exp(nll / events))


def train_lm(corpus, cfg: LmTrainConfig = LmTrainConfig()) -> tuple[ExternalLm, float]:
    """Train an external LM on a text corpus; returns (lm, final perplexity)."""
    transcripts = [it.tokens for it in corpus.items if len(it.tokens) > 0]
    if not transcripts:
        raise ConfigError("LM training corpus is empty")
    lm = ExternalLm(corpus.vocab, embed_dim=cfg.embed_dim, tied_tables=cfg.tied_tables, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(list(lm.params.entries.items()), cfg)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(transcripts))
        for start in range(0, len(transcripts), cfg.batch_size):
            chunk = [transcripts[i] for i in order[start : start + cfg.batch_size]]
            loss = lm_loss(lm, chunk)
            lm.params.zero_grads()
            loss.backward()
            opt.step()
    return lm, lm_perplexity(lm, transcripts)
