"""HAT and MHAT network components.

Both models share a windowed tanh encoder and bigram-context embedding
decoders.  The MHAT variant keeps label and blank prediction structurally
separate: the encoder projects to acoustic label scores, the label decoder
projects to internal-LM label scores, and the two meet only at the output
softmax; the blank head reads the encoder and a separate (tiny) blank
decoder.  The baseline HAT runs one decoder into a shared joint network.

Parameter groups:
  encoder       encoder stack + acoustic projection
  blank_branch  blank decoder + joint combiner (HAT: joint only)
  ilm           label decoder + internal-LM projection (HAT: decoder + label head)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .numerics import ParameterSet, Tensor


class VocabError(ValueError):
    """A token id or name outside the vocabulary."""


class ConfigError(ValueError):
    """Inconsistent model or run configuration."""


@dataclass(frozen=True)
class Vocabulary:
    """Fixed label inventory; blank is not an entry (it has its own head).

    The start-of-sentence id equals `size` and is used only as decoder
    context padding, never emitted or scored.
    """

    names: tuple[str, ...]

    @staticmethod
    def default(size: int) -> "Vocabulary":
        if size < 1:
            raise ConfigError("vocabulary size must be >= 1")
        width = len(str(size - 1))
        return Vocabulary(tuple(f"w{i:0{width}d}" for i in range(size)))

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def sos_id(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise VocabError(f"unknown token name: {name!r}") from None

    def text(self, ids: Sequence[int]) -> str:
        self.check_ids(ids)
        return " ".join(self.names[i] for i in ids)

    def check_ids(self, ids: Sequence[int]) -> None:
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise VocabError(f"token id {i} out of range for |V|={self.size}")

    def digest(self) -> str:
        h = hashlib.sha1()
        for n in self.names:
            h.update(n.encode())
            h.update(b"\0")
        return h.hexdigest()


@dataclass(frozen=True)
class EncoderConfig:
    d_x: int
    context: int = 1
    layers: int = 2
    d_f: int = 64
    # activation is fixed to tanh


@dataclass(frozen=True)
class EmbeddingDecoderConfig:
    embed_dim: int
    tied_tables: bool
    # context order is fixed to 2 (the last two labels)


def bigram_contexts(tokens: Sequence[int], sos_id: int) -> np.ndarray:
    """Decoder context ids for every step of a label sequence.

    Row j holds the last two labels after j emissions, with missing
    history filled by the start-of-sentence id; row 0 is (sos, sos).
    """
    toks = np.asarray(tokens, dtype=np.int64)
    u = len(toks)
    ctx = np.full((u + 1, 2), sos_id, dtype=np.int64)
    if u >= 1:
        ctx[1:, 1] = toks
    if u >= 2:
        ctx[2:, 0] = toks[:-1]
    return ctx


def context_of(prefix: Sequence[int], sos_id: int) -> tuple[int, int]:
    """The (second-last, last) label pair for a prefix, SOS-padded."""
    p1 = int(prefix[-1]) if len(prefix) >= 1 else sos_id
    p2 = int(prefix[-2]) if len(prefix) >= 2 else sos_id
    return (p2, p1)


class EmbeddingDecoder:
    """Bigram-context embedding decoder.

    Looks up the last two labels in per-position tables (shared when
    tied), concatenates, and projects back down to the embedding dim with
    a plain affine map.
    """

    def __init__(
        self,
        params: ParameterSet,
        name: str,
        vocab: Vocabulary,
        cfg: EmbeddingDecoderConfig,
        group: str,
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.vocab = vocab
        d = cfg.embed_dim
        rows = vocab.size + 1  # +1 row for SOS context
        if cfg.tied_tables:
            self.table0 = params.add(f"{name}.table", 0.5 * rng.standard_normal((rows, d)), group)
            self.table1 = self.table0
        else:
            self.table0 = params.add(f"{name}.table0", 0.5 * rng.standard_normal((rows, d)), group)
            self.table1 = params.add(f"{name}.table1", 0.5 * rng.standard_normal((rows, d)), group)
        self.proj_w = params.add(
            f"{name}.proj.weight", rng.standard_normal((d, 2 * d)) / np.sqrt(2 * d), group
        )
        self.proj_b = params.add(f"{name}.proj.bias", np.zeros(d), group)

    def outputs(self, ctx: np.ndarray) -> Tensor:
        """Decoder outputs for a batch of (prev2, prev1) context rows."""
        e = nm.concat(nm.embedding(self.table0, ctx[..., 0]), nm.embedding(self.table1, ctx[..., 1]))
        return nm.affine(e, self.proj_w, self.proj_b)

    def output_np(self, ctx: tuple[int, int]) -> np.ndarray:
        e = np.concatenate([self.table0.data[ctx[0]], self.table1.data[ctx[1]]])
        return self.proj_w.data @ e + self.proj_b.data


class Encoder:
    """Stack of affine+tanh layers over a (2c+1)-frame zero-padded window."""

    def __init__(self, params: ParameterSet, cfg: EncoderConfig, rng: np.random.Generator):
        if cfg.d_f < 1 or cfg.layers < 1 or cfg.context < 0:
            raise ConfigError(f"bad encoder config: {cfg}")
        self.cfg = cfg
        self.weights: list[tuple[Tensor, Tensor]] = []
        d_in = (2 * cfg.context + 1) * cfg.d_x
        for i in range(cfg.layers):
            w = params.add(
                f"encoder.layer{i}.weight",
                rng.standard_normal((cfg.d_f, d_in)) / np.sqrt(d_in),
                "encoder",
            )
            b = params.add(f"encoder.layer{i}.bias", np.zeros(cfg.d_f), "encoder")
            self.weights.append((w, b))
            d_in = cfg.d_f

    def windows(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.cfg.d_x:
            raise ConfigError(
                f"feature dim mismatch: got {X.shape}, encoder expects (T, {self.cfg.d_x})"
            )
        t, c = X.shape[0], self.cfg.context
        padded = np.vstack([np.zeros((c, self.cfg.d_x)), X, np.zeros((c, self.cfg.d_x))])
        idx = np.arange(t)[:, None] + np.arange(2 * c + 1)[None, :]
        return padded[idx].reshape(t, (2 * c + 1) * self.cfg.d_x)

    def forward(self, X: np.ndarray) -> Tensor:
        h: Tensor = Tensor(self.windows(X))
        for w, b in self.weights:
            h = nm.tanh(nm.affine(h, w, b))
        return h


class _JointCombiner:
    """tanh(W1 f + W2 g + b) followed by a scalar blank logit head."""

    def __init__(self, params: ParameterSet, d_f: int, d_g: int, d_h: int, rng):
        self.w1 = params.add("joint.w1", rng.standard_normal((d_h, d_f)) / np.sqrt(d_f), "blank_branch")
        self.w2 = params.add("joint.w2", rng.standard_normal((d_h, d_g)) / np.sqrt(d_g), "blank_branch")
        self.hidden_bias = params.add("joint.hidden_bias", np.zeros(d_h), "blank_branch")
        self.v = params.add("joint.v", rng.standard_normal(d_h) / np.sqrt(d_h), "blank_branch")
        self.v_bias = params.add("joint.v_bias", np.zeros(()), "blank_branch")

    def hidden(self, f: Tensor | np.ndarray, g: Tensor | np.ndarray) -> Tensor:
        return nm.tanh(nm.add(nm.affine(f, self.w1, self.hidden_bias), nm.affine(g, self.w2)))

    def hidden_grid(self, F: Tensor, G: Tensor) -> Tensor:
        t, u = F.shape[0], G.shape[0]
        d_h = self.v.shape[0]
        zf = nm.reshape(nm.affine(F, self.w1, self.hidden_bias), (t, 1, d_h))
        zg = nm.reshape(nm.affine(G, self.w2), (1, u, d_h))
        return nm.tanh(nm.add(zf, zg))

    def blank_logit(self, h: Tensor) -> Tensor:
        return nm.dot(h, self.v, self.v_bias)


def label_posterior(a: Tensor | np.ndarray, l: Tensor | np.ndarray) -> Tensor:
    """Combined label log-posterior: softmax over summed AM and LM log scores."""
    return nm.log_softmax(nm.add(a, l))


def alignment_arc_log_probs(b: float, label_log_posteriors: np.ndarray) -> np.ndarray:
    """Per-arc log probabilities at one lattice node: blank first, then labels.

    The blank arc carries probability b; each label arc carries
    (1 - b) times its label posterior, so the arcs sum to one.
    """
    lab = np.asarray(label_log_posteriors, dtype=np.float64)
    out = np.empty(lab.shape[0] + 1)
    with np.errstate(divide="ignore"):
        out[0] = np.log(b)
        out[1:] = np.log1p(-b) + lab
    return out


class MhatModel:
    """Modular HAT: separate blank/label decoders, additive label scores."""

    kind = "mhat"

    def __init__(
        self,
        vocab: Vocabulary,
        encoder: EncoderConfig,
        label_dim: int = 64,
        blank_dim: int = 16,
        joint_dim: int = 32,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.enc_cfg = encoder
        self.label_cfg = EmbeddingDecoderConfig(embed_dim=label_dim, tied_tables=False)
        self.blank_cfg = EmbeddingDecoderConfig(embed_dim=blank_dim, tied_tables=True)
        self.joint_dim = joint_dim
        self.trained_alpha: float | None = None

        p = ParameterSet()
        self.params = p
        self.encoder = Encoder(p, encoder, rng)
        self.am_w = p.add(
            "am_proj.weight", rng.standard_normal((vocab.size, encoder.d_f)) / np.sqrt(encoder.d_f), "encoder"
        )
        self.am_b = p.add("am_proj.bias", np.zeros(vocab.size), "encoder")
        self.blank_decoder = EmbeddingDecoder(p, "blank_decoder", vocab, self.blank_cfg, "blank_branch", rng)
        self.joint = _JointCombiner(p, encoder.d_f, blank_dim, joint_dim, rng)
        self.label_decoder = EmbeddingDecoder(p, "label_decoder", vocab, self.label_cfg, "ilm", rng)
        self.ilm_w = p.add(
            "ilm_proj.weight", rng.standard_normal((vocab.size, label_dim)) / np.sqrt(label_dim), "ilm"
        )
        self.ilm_b = p.add("ilm_proj.bias", np.zeros(vocab.size), "ilm")

    # -- single-step heads ------------------------------------------------
    def encode(self, X: np.ndarray) -> Tensor:
        return self.encoder.forward(X)

    def decode_blank(self, prefix: Sequence[int]) -> Tensor:
        self.vocab.check_ids(prefix)
        return self.blank_decoder.outputs(np.array(context_of(prefix, self.vocab.sos_id)))

    def decode_label(self, prefix: Sequence[int]) -> Tensor:
        self.vocab.check_ids(prefix)
        return self.label_decoder.outputs(np.array(context_of(prefix, self.vocab.sos_id)))

    def blank_logit(self, f_t: Tensor | np.ndarray, g_b: Tensor | np.ndarray) -> Tensor:
        return self.joint.blank_logit(self.joint.hidden(f_t, g_b))

    def blank_posterior(self, f_t: Tensor | np.ndarray, g_b: Tensor | np.ndarray) -> float:
        return nm.sigmoid(self.blank_logit(f_t, g_b).item())

    def am_log_probs(self, f_t: Tensor | np.ndarray) -> Tensor:
        return nm.log_softmax(nm.affine(f_t, self.am_w, self.am_b))

    def ilm_log_probs(self, g_l: Tensor | np.ndarray) -> Tensor:
        return nm.log_softmax(nm.affine(g_l, self.ilm_w, self.ilm_b))

    # -- sequence-level helpers --------------------------------------------
    def ilm_log_prob_rows(self, tokens: Sequence[int]) -> Tensor:
        """Internal-LM log-prob vectors for every step of a transcript: (U+1, |V|)."""
        self.vocab.check_ids(tokens)
        ctx = bigram_contexts(tokens, self.vocab.sos_id)
        return nm.log_softmax(nm.affine(self.label_decoder.outputs(ctx), self.ilm_w, self.ilm_b))

    def arc_log_scores(self, X: np.ndarray, tokens: Sequence[int]) -> tuple[Tensor, Tensor]:
        """Blank and label arc log-scores for one utterance.

        Returns (log_blank, log_label): log_blank[t, u] is the log blank
        probability at frame t+1 after u emissions; log_label[t, u] the
        log of (1 - blank) times the posterior of token u+1.
        """
        self.vocab.check_ids(tokens)
        t_len = np.asarray(X).shape[0]
        u_len = len(tokens)
        ctx = bigram_contexts(tokens, self.vocab.sos_id)
        F = self.encode(X)
        GB = self.blank_decoder.outputs(ctx)
        s = self.joint.blank_logit(self.joint.hidden_grid(F, GB))
        log_blank = nm.log_sigmoid(s)
        log_keep = nm.log_sigmoid(nm.neg(s))
        if u_len == 0:
            return log_blank, Tensor(np.zeros((t_len, 0)))
        A = self.am_log_probs(F)
        L = self.ilm_log_prob_rows(tokens)
        v = self.vocab.size
        combined = nm.log_softmax(
            nm.add(
                nm.reshape(A, (t_len, 1, v)),
                nm.reshape(L[: u_len], (1, u_len, v)),
            )
        )
        t_ix = np.arange(t_len)[:, None]
        u_ix = np.arange(u_len)[None, :]
        y_ix = np.asarray(tokens, dtype=np.int64)[None, :]
        picked = combined[t_ix, u_ix, y_ix]
        return log_blank, nm.add(log_keep[:, :u_len], picked)

    def scorer(self, X: np.ndarray) -> "MhatScorer":
        return MhatScorer(self, X)

    # -- bookkeeping -------------------------------------------------------
    def param_counts(self) -> dict[str, int]:
        counts = self.params.group_sizes()
        counts["total"] = self.params.size()
        return counts

    def config_items(self) -> dict[str, str]:
        return {
            "encoder.d_x": str(self.enc_cfg.d_x),
            "encoder.context": str(self.enc_cfg.context),
            "encoder.layers": str(self.enc_cfg.layers),
            "encoder.d_f": str(self.enc_cfg.d_f),
            "label_dim": str(self.label_cfg.embed_dim),
            "blank_dim": str(self.blank_cfg.embed_dim),
            "joint_dim": str(self.joint_dim),
            "trained_alpha": "" if self.trained_alpha is None else repr(self.trained_alpha),
        }

    @staticmethod
    def from_config(vocab: Vocabulary, cfg: dict[str, str]) -> "MhatModel":
        enc = EncoderConfig(
            d_x=int(cfg["encoder.d_x"]),
            context=int(cfg["encoder.context"]),
            layers=int(cfg["encoder.layers"]),
            d_f=int(cfg["encoder.d_f"]),
        )
        m = MhatModel(
            vocab,
            enc,
            label_dim=int(cfg["label_dim"]),
            blank_dim=int(cfg["blank_dim"]),
            joint_dim=int(cfg["joint_dim"]),
        )
        if cfg.get("trained_alpha"):
            m.trained_alpha = float(cfg["trained_alpha"])
        return m


class HatModel:
    """Baseline HAT: one decoder feeding a shared joint network."""

    kind = "hat"

    def __init__(
        self,
        vocab: Vocabulary,
        encoder: EncoderConfig,
        decoder_dim: int = 64,
        joint_dim: int = 32,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.enc_cfg = encoder
        self.dec_cfg = EmbeddingDecoderConfig(embed_dim=decoder_dim, tied_tables=False)
        self.joint_dim = joint_dim
        self.trained_alpha: float | None = None

        p = ParameterSet()
        self.params = p
        self.encoder = Encoder(p, encoder, rng)
        self.decoder = EmbeddingDecoder(p, "decoder", vocab, self.dec_cfg, "ilm", rng)
        self.joint = _JointCombiner(p, encoder.d_f, decoder_dim, joint_dim, rng)
        self.label_w = p.add(
            "label_head.weight", rng.standard_normal((vocab.size, joint_dim)) / np.sqrt(joint_dim), "ilm"
        )
        self.label_b = p.add("label_head.bias", np.zeros(vocab.size), "ilm")

    def encode(self, X: np.ndarray) -> Tensor:
        return self.encoder.forward(X)

    def decode_state(self, prefix: Sequence[int]) -> Tensor:
        self.vocab.check_ids(prefix)
        return self.decoder.outputs(np.array(context_of(prefix, self.vocab.sos_id)))

    def hat_joint(self, f_t: Tensor | np.ndarray, g_u: Tensor | np.ndarray) -> tuple[float, Tensor]:
        """Blank posterior and label log-posteriors at one (frame, step) pair."""
        h = self.joint.hidden(f_t, g_u)
        b = nm.sigmoid(self.joint.blank_logit(h).item())
        labels = nm.log_softmax(nm.affine(h, self.label_w, self.label_b))
        return b, labels

    def hat_ilm_log_probs(self, g_u: Tensor | np.ndarray) -> Tensor:
        """Internal-LM estimate: the label head with the acoustic embedding zeroed."""
        f0 = np.zeros(self.enc_cfg.d_f)
        h = self.joint.hidden(f0, g_u)
        return nm.log_softmax(nm.affine(h, self.label_w, self.label_b))

    def arc_log_scores(self, X: np.ndarray, tokens: Sequence[int]) -> tuple[Tensor, Tensor]:
        self.vocab.check_ids(tokens)
        t_len = np.asarray(X).shape[0]
        u_len = len(tokens)
        ctx = bigram_contexts(tokens, self.vocab.sos_id)
        F = self.encode(X)
        G = self.decoder.outputs(ctx)
        H = self.joint.hidden_grid(F, G)
        s = self.joint.blank_logit(H)
        log_blank = nm.log_sigmoid(s)
        log_keep = nm.log_sigmoid(nm.neg(s))
        if u_len == 0:
            return log_blank, Tensor(np.zeros((t_len, 0)))
        labels = nm.log_softmax(nm.affine(H, self.label_w, self.label_b))
        t_ix = np.arange(t_len)[:, None]
        u_ix = np.arange(u_len)[None, :]
        y_ix = np.asarray(tokens, dtype=np.int64)[None, :]
        picked = labels[t_ix, u_ix, y_ix]
        return log_blank, nm.add(log_keep[:, :u_len], picked)

    def scorer(self, X: np.ndarray) -> "HatScorer":
        return HatScorer(self, X)

    def param_counts(self) -> dict[str, int]:
        counts = self.params.group_sizes()
        counts["total"] = self.params.size()
        return counts

    def config_items(self) -> dict[str, str]:
        return {
            "encoder.d_x": str(self.enc_cfg.d_x),
            "encoder.context": str(self.enc_cfg.context),
            "encoder.layers": str(self.enc_cfg.layers),
            "encoder.d_f": str(self.enc_cfg.d_f),
            "decoder_dim": str(self.dec_cfg.embed_dim),
            "joint_dim": str(self.joint_dim),
            "trained_alpha": "" if self.trained_alpha is None else repr(self.trained_alpha),
        }

    @staticmethod
    def from_config(vocab: Vocabulary, cfg: dict[str, str]) -> "HatModel":
        enc = EncoderConfig(
            d_x=int(cfg["encoder.d_x"]),
            context=int(cfg["encoder.context"]),
            layers=int(cfg["encoder.layers"]),
            d_f=int(cfg["encoder.d_f"]),
        )
        m = HatModel(
            vocab, enc, decoder_dim=int(cfg["decoder_dim"]), joint_dim=int(cfg["joint_dim"])
        )
        if cfg.get("trained_alpha"):
            m.trained_alpha = float(cfg["trained_alpha"])
        return m


class MhatScorer:
    """Per-utterance incremental scorer for decoding (no gradient graphs).

    Caches the encoder pass, the acoustic log-prob rows, and per-context
    decoder quantities keyed by the (prev2, prev1) label pair.
    """

    def __init__(self, model: MhatModel, X: np.ndarray):
        self.model = model
        with nm.no_grad():
            F = model.encode(X).data
            self.A = model.am_log_probs(F).data  # (T, |V|)
        j = model.joint
        self._w1f = F @ j.w1.data.T + j.hidden_bias.data  # (T, d_h)
        self._blank_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._ilm_cache: dict[tuple[int, int], np.ndarray] = {}
        self.t_len = F.shape[0]

    def context(self, prefix: Sequence[int]) -> tuple[int, int]:
        return context_of(prefix, self.model.vocab.sos_id)

    def _blank(self, ctx: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        hit = self._blank_cache.get(ctx)
        if hit is None:
            j = self.model.joint
            g = self.model.blank_decoder.output_np(ctx)
            s = np.tanh(self._w1f + j.w2.data @ g) @ j.v.data + float(j.v_bias.data)
            hit = (-_softplus_np(-s), -_softplus_np(s))  # (log b, log(1-b)) per frame
            self._blank_cache[ctx] = hit
        return hit

    def log_blank(self, t: int, ctx: tuple[int, int]) -> float:
        return float(self._blank(ctx)[0][t])

    def log_keep(self, t: int, ctx: tuple[int, int]) -> float:
        return float(self._blank(ctx)[1][t])

    def ilm_log_probs(self, ctx: tuple[int, int]) -> np.ndarray:
        hit = self._ilm_cache.get(ctx)
        if hit is None:
            m = self.model
            g = m.label_decoder.output_np(ctx)
            z = m.ilm_w.data @ g + m.ilm_b.data
            hit = z - nm.log_sum_exp(z)
            self._ilm_cache[ctx] = hit
        return hit

    def label_log_posteriors(self, t: int, ctx: tuple[int, int]) -> np.ndarray:
        z = self.A[t] + self.ilm_log_probs(ctx)
        return z - nm.log_sum_exp(z)


class HatScorer:
    """Per-utterance incremental scorer for the baseline HAT."""

    def __init__(self, model: HatModel, X: np.ndarray):
        self.model = model
        with nm.no_grad():
            F = model.encode(X).data
        j = model.joint
        self._w1f = F @ j.w1.data.T + j.hidden_bias.data
        self._ctx_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._ilm_cache: dict[tuple[int, int], np.ndarray] = {}
        self.t_len = F.shape[0]

    def context(self, prefix: Sequence[int]) -> tuple[int, int]:
        return context_of(prefix, self.model.vocab.sos_id)

    def _per_ctx(self, ctx: tuple[int, int]):
        hit = self._ctx_cache.get(ctx)
        if hit is None:
            m = self.model
            j = m.joint
            g = m.decoder.output_np(ctx)
            h = np.tanh(self._w1f + j.w2.data @ g)  # (T, d_h)
            s = h @ j.v.data + float(j.v_bias.data)
            z = h @ m.label_w.data.T + m.label_b.data
            labels = z - nm.log_sum_exp(z, axis=1)[:, None]
            hit = (-_softplus_np(-s), -_softplus_np(s), labels)
            self._ctx_cache[ctx] = hit
        return hit

    def log_blank(self, t: int, ctx: tuple[int, int]) -> float:
        return float(self._per_ctx(ctx)[0][t])

    def log_keep(self, t: int, ctx: tuple[int, int]) -> float:
        return float(self._per_ctx(ctx)[1][t])

    def label_log_posteriors(self, t: int, ctx: tuple[int, int]) -> np.ndarray:
        return self._per_ctx(ctx)[2][t]

    def ilm_log_probs(self, ctx: tuple[int, int]) -> np.ndarray:
        hit = self._ilm_cache.get(ctx)
        if hit is None:
            m = self.model
            with nm.no_grad():
                hit = m.hat_ilm_log_probs(m.decoder.output_np(ctx)).data
            self._ilm_cache[ctx] = hit
        return hit


def _softplus_np(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
