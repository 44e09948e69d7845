"""Synthetic domain-shift corpora and all file I/O, including checkpoints.

A domain is a bigram chain over the vocabulary (plus EOS, with a start
row) and a bank of per-token prototype feature vectors.  The standard
shifted pair shares prototypes and noise so the shift is purely
linguistic: confusable token pairs whose within-pair preference differs
between domains, which only a better label prior can fix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .extlm import ExternalLm
from .model import ConfigError, HatModel, MhatModel, VocabError, Vocabulary

MAX_SENTENCE_LEN = 40
_SPLIT_CODE = {"train": 0, "dev": 1, "test": 2}


class CheckpointError(RuntimeError):
    """A checkpoint file failed validation on load."""


@dataclass(frozen=True)
class DomainSpec:
    """Generator for one domain: bigram chain plus acoustic prototypes.

    `bigram` is (|V|+1) x (|V|+1): rows are contexts (tokens, then the
    start row), columns are next events (tokens, then EOS).
    """

    vocab: Vocabulary
    bigram: np.ndarray
    prototypes: np.ndarray
    noise_sigma: float
    frames_min: int = 1
    frames_max: int = 3

    def __post_init__(self):
        v = self.vocab.size
        if self.bigram.shape != (v + 1, v + 1):
            raise ConfigError(f"bigram table must be ({v + 1}, {v + 1}), got {self.bigram.shape}")
        sums = self.bigram.sum(axis=1)
        if np.any(self.bigram < 0) or np.any(np.abs(sums - 1.0) > 1e-9):
            raise ConfigError("bigram rows must be non-negative and sum to 1 within 1e-9")
        if self.prototypes.shape[0] != v:
            raise ConfigError("one prototype row per token required")
        if self.frames_min < 1 or self.frames_max < self.frames_min:
            raise ConfigError("frames-per-token range must satisfy 1 <= min <= max")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        for i in range(v):
            for j in range(i + 1, v):
                if np.array_equal(self.prototypes[i], self.prototypes[j]):
                    raise ConfigError(f"prototypes {i} and {j} are identical")

    @property
    def d_x(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class Utterance:
    uid: str
    features: np.ndarray | None
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class Corpus:
    split: str
    seed: int
    vocab: Vocabulary
    items: tuple[Utterance, ...]

    def transcripts(self) -> list[tuple[int, ...]]:
        return [it.tokens for it in self.items]

    def paired(self) -> list[tuple[np.ndarray, tuple[int, ...]]]:
        return [(it.features, it.tokens) for it in self.items if it.features is not None]


def _sample_tokens(spec: DomainSpec, rng: np.random.Generator) -> tuple[int, ...]:
    v = spec.vocab.size
    for _ in range(1000):
        out: list[int] = []
        ctx = v  # start row
        while len(out) < MAX_SENTENCE_LEN:
            nxt = int(rng.choice(v + 1, p=spec.bigram[ctx]))
            if nxt == v:  # EOS column
                break
            out.append(nxt)
            ctx = nxt
        if out:
            return tuple(out)
    raise ConfigError("bigram table produced 1000 empty sentences in a row")


def _emit_features(spec: DomainSpec, tokens: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    frames = []
    for tok in tokens:
        k = int(rng.integers(spec.frames_min, spec.frames_max + 1))
        noise = rng.standard_normal((k, spec.d_x))
        frames.append(spec.prototypes[tok] + spec.noise_sigma * noise)
    return np.vstack(frames)


def gen_corpus(
    spec: DomainSpec,
    seed: int,
    n_utts: int,
    split: str = "train",
    text_only: bool = False,
) -> Corpus:
    """Sample a corpus; each utterance is deterministic in (seed, split, index).

    Empty bigram draws are redrawn, so every sequence is non-empty.
    """
    if split not in _SPLIT_CODE:
        raise ConfigError(f"split must be one of {sorted(_SPLIT_CODE)}, got {split!r}")
    items = []
    for i in range(n_utts):
        rng = np.random.default_rng((seed, _SPLIT_CODE[split], int(text_only), i))
        tokens = _sample_tokens(spec, rng)
        feats = None if text_only else _emit_features(spec, tokens, rng)
        items.append(Utterance(uid=f"{split}-{i:05d}", features=feats, tokens=tokens))
    return Corpus(split=split, seed=seed, vocab=spec.vocab, items=tuple(items))


def chain_entropy_rate(spec: DomainSpec) -> float:
    """Expected per-event negative log-probability of the chain, EOS included.

    Ignores the sentence-length cap; keep the expected length well under
    the cap when using this as an oracle.
    """
    v = spec.vocab.size
    p = spec.bigram
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log(p), 0.0)
    row_h = -(p * logs).sum(axis=1)  # entropy of each context row
    q = p[:v, :v]  # token-context to token-context transitions
    start = p[v, :v]
    visits = np.linalg.solve(np.eye(v) - q.T, start)  # expected visits per token context
    total_h = row_h[v] + float(visits @ row_h[:v])
    total_events = 1.0 + float(visits.sum())
    return total_h / total_events


def corpus_log_loss(spec: DomainSpec, corpus: Corpus) -> float:
    """Mean per-event NLL of the true table on generated text.

    Sentences at the length cap contribute no EOS event (they were
    truncated, not terminated).
    """
    v = spec.vocab.size
    nll = 0.0
    events = 0
    for it in corpus.items:
        ctx = v
        for tok in it.tokens:
            nll -= float(np.log(spec.bigram[ctx, tok]))
            ctx = tok
            events += 1
        if len(it.tokens) < MAX_SENTENCE_LEN:
            nll -= float(np.log(spec.bigram[ctx, v]))
            events += 1
    return nll / events


def confusable_pair_domains(
    vocab: Vocabulary,
    d_x: int,
    seed: int,
    noise_sigma: float = 0.3,
    pair_separation: float = 0.65,
    center_scale: float = 1.0,
    source_member_bias: float = 0.5,
    target_member_bias: float = 0.92,
    eos_prob: float = 0.12,
    concentration: float = 0.1,
    target_prototype_jitter: float = 0.0,
) -> tuple[DomainSpec, DomainSpec]:
    """Source/target DomainSpecs sharing prototypes and noise.

    Tokens come in confusable pairs (close prototypes); cluster-level
    transition structure is shared, and only the within-pair member
    preference differs between the domains, so the shift lives entirely
    in the label prior.  The source default is a balanced 0.5 (no prior
    signal within a pair), the target a biased 0.9: adapting the prior
    toward the target then helps target decisions first-order while
    costing the balanced source only second-order.
    `target_prototype_jitter` adds an acoustic shift and stays 0 in
    every standard run.
    """
    v = vocab.size
    if v % 2 != 0:
        raise ConfigError("confusable-pair construction needs an even vocabulary size")
    n_pairs = v // 2
    rng = np.random.default_rng(seed)

    centers = center_scale * rng.standard_normal((n_pairs, d_x))
    offsets = rng.standard_normal((n_pairs, d_x))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    prototypes = np.empty((v, d_x))
    prototypes[0::2] = centers - 0.5 * pair_separation * offsets
    prototypes[1::2] = centers + 0.5 * pair_separation * offsets

    # shared cluster-level chain: rows = clusters + start, cols = clusters + EOS
    cluster = np.zeros((n_pairs + 1, n_pairs + 1))
    for row in range(n_pairs + 1):
        w = rng.dirichlet(np.full(n_pairs, concentration))
        if row == n_pairs:  # start row: never empty sentences
            cluster[row, :n_pairs] = w
        else:
            cluster[row, :n_pairs] = (1.0 - eos_prob) * w
            cluster[row, n_pairs] = eos_prob

    def expand(bias_second: float) -> np.ndarray:
        table = np.zeros((v + 1, v + 1))
        for row in range(v + 1):
            crow = cluster[row // 2] if row < v else cluster[n_pairs]
            for d in range(n_pairs):
                table[row, 2 * d] = crow[d] * (1.0 - bias_second)
                table[row, 2 * d + 1] = crow[d] * bias_second
            table[row, v] = crow[n_pairs]
        table /= table.sum(axis=1, keepdims=True)
        return table

    source = DomainSpec(vocab, expand(source_member_bias), prototypes, noise_sigma)
    target_protos = prototypes
    if target_prototype_jitter > 0:
        target_protos = prototypes + target_prototype_jitter * rng.standard_normal(prototypes.shape)
    target = DomainSpec(vocab, expand(target_member_bias), target_protos, noise_sigma)
    return source, target


# -- text and paired corpus files -----------------------------------------


def write_vocab(vocab: Vocabulary, path: str) -> None:
    with open(path, "w") as f:
        for name in vocab.names:
            f.write(name + "\n")


def read_vocab(path: str) -> Vocabulary:
    with open(path) as f:
        names = [line.strip() for line in f if line.strip()]
    return Vocabulary(tuple(names))


def write_text_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w") as f:
        for it in corpus.items:
            f.write(corpus.vocab.text(it.tokens) + "\n")


def read_text_corpus(path: str, vocab: Vocabulary, split: str = "train", seed: int = 0) -> Corpus:
    items = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            names = line.split()
            if not names:
                continue
            try:
                tokens = tuple(vocab.id_of(n) for n in names)
            except VocabError as e:
                raise VocabError(f"{path}:{lineno}: {e}") from None
            items.append(Utterance(uid=f"{split}-{lineno:05d}", features=None, tokens=tokens))
    return Corpus(split=split, seed=seed, vocab=vocab, items=tuple(items))


def write_corpus(corpus: Corpus, path: str) -> None:
    """Paired corpora: text manifest at `path` plus binary features at `path.feats`."""
    if all(it.features is None for it in corpus.items):
        write_text_corpus(corpus, path)
        return
    with open(path, "w") as mf, open(path + ".feats", "wb") as bf:
        mf.write("format mhat-corpus-v1\n")
        mf.write(f"split {corpus.split}\n")
        mf.write(f"seed {corpus.seed}\n")
        mf.write(f"vocab.hash {corpus.vocab.digest()}\n")
        mf.write(f"count {len(corpus.items)}\n")
        for it in corpus.items:
            t_len = 0 if it.features is None else it.features.shape[0]
            mf.write(f"utt {it.uid} {t_len} {corpus.vocab.text(it.tokens)}\n")
            if it.features is not None:
                feats = np.ascontiguousarray(it.features, dtype="<f4")
                header = np.array(feats.shape, dtype="<u4")
                bf.write(header.tobytes())
                bf.write(feats.tobytes())


def read_corpus(path: str, vocab: Vocabulary) -> Corpus:
    with open(path) as mf:
        lines = mf.read().splitlines()
    if not lines or lines[0] != "format mhat-corpus-v1":
        raise ConfigError(f"{path}: not a corpus manifest")
    header: dict[str, str] = {}
    utt_lines: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("utt "):
            utt_lines.append((lineno, line))
        elif line:
            k, _, rest = line.partition(" ")
            header[k] = rest
    if header.get("vocab.hash") != vocab.digest():
        raise ConfigError(f"{path}: vocabulary hash mismatch")
    items = []
    with open(path + ".feats", "rb") as bf:
        for lineno, line in utt_lines:
            parts = line.split()
            uid, t_len = parts[1], int(parts[2])
            try:
                tokens = tuple(vocab.id_of(n) for n in parts[3:])
            except VocabError as e:
                raise VocabError(f"{path}:{lineno}: {e}") from None
            shape = np.frombuffer(bf.read(8), dtype="<u4")
            if shape.shape != (2,) or int(shape[0]) != t_len:
                raise ConfigError(f"{path}: feature record for {uid} does not match manifest")
            raw = bf.read(int(shape[0]) * int(shape[1]) * 4)
            feats = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(t_len, int(shape[1]))
            items.append(Utterance(uid=uid, features=feats, tokens=tokens))
    return Corpus(
        split=header.get("split", "train"),
        seed=int(header.get("seed", "0")),
        vocab=vocab,
        items=tuple(items),
    )


# -- checkpoints -----------------------------------------------------------

_CKPT_FORMAT = "mhat-checkpoint-v1"
_KINDS = {"mhat": MhatModel, "hat": HatModel, "lm": ExternalLm}


def save_checkpoint(model_or_lm, path: str) -> None:
    """Text manifest at `path` plus little-endian float32 blob at `path.bin`."""
    m = model_or_lm
    names = sorted(m.params.entries)
    with open(path, "w") as f:
        f.write(f"format {_CKPT_FORMAT}\n")
        f.write(f"kind {m.kind}\n")
        f.write("dtype float32\n")
        f.write(f"vocab.size {m.vocab.size}\n")
        f.write(f"vocab.hash {m.vocab.digest()}\n")
        for i, name in enumerate(m.vocab.names):
            f.write(f"token.{i} {name}\n")
        for key, value in sorted(m.config_items().items()):
            f.write(f"config.{key} {value}\n")
        for i, name in enumerate(names):
            t = m.params[name]
            shape = ",".join(str(d) for d in t.data.shape)
            f.write(f"tensor.{i} {name} {m.params.group[name]} {shape}\n")
    with open(path + ".bin", "wb") as bf:
        for name in names:
            bf.write(np.ascontiguousarray(m.params[name].data, dtype="<f4").tobytes())


def _parse_manifest(path: str):
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint manifest {path}: {e}") from None
    if not lines or lines[0] != f"format {_CKPT_FORMAT}":
        raise CheckpointError(f"{path}: not a {_CKPT_FORMAT} manifest")
    kind = None
    tokens: dict[int, str] = {}
    config: dict[str, str] = {}
    tensors: list[tuple[str, str, tuple[int, ...]]] = []
    header: dict[str, str] = {}
    for line in lines[1:]:
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "kind":
            kind = rest
        elif key.startswith("token."):
            tokens[int(key[6:])] = rest
        elif key.startswith("config."):
            config[key[7:]] = rest
        elif key.startswith("tensor."):
            name, group, shape_s = rest.split(" ")
            shape = tuple(int(d) for d in shape_s.split(",") if d != "")
            tensors.append((name, group, shape))
        else:
            header[key] = rest
    if kind not in _KINDS:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    vocab = Vocabulary(tuple(tokens[i] for i in range(len(tokens))))
    if header.get("vocab.hash") != vocab.digest() or int(header.get("vocab.size", -1)) != vocab.size:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    return kind, vocab, config, tensors


def load_checkpoint(path: str, expect: str | None = None):
    """Rebuild a model or LM from a checkpoint; validates kind, shapes, hash.

    `expect` may be a kind ("mhat", "hat", "lm") or the family "asr".
    """
    kind, vocab, config, tensors = _parse_manifest(path)
    if expect is not None:
        ok = kind == expect or (expect == "asr" and kind in ("mhat", "hat"))
        if not ok:
            raise CheckpointError(f"{path}: kind mismatch: checkpoint is {kind!r}, expected {expect!r}")
    m = _KINDS[kind].from_config(vocab, config)
    try:
        blob = np.fromfile(path + ".bin", dtype="<f4")
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint blob {path}.bin: {e}") from None
    offset = 0
    for name, group, shape in tensors:
        size = int(np.prod(shape)) if shape else 1
        if name not in m.params:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        t = m.params[name]
        if t.data.shape != shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: manifest {shape}, model {t.data.shape}"
            )
        if m.params.group[name] != group:
            raise CheckpointError(f"{path}: group mismatch for {name!r}")
        if offset + size > blob.size:
            raise CheckpointError(f"{path}: blob truncated at tensor {name!r}")
        t.data = blob[offset : offset + size].astype(np.float64).reshape(shape)
        offset += size
    if offset != blob.size:
        raise CheckpointError(f"{path}: blob has {blob.size - offset} trailing values")
    if len(tensors) != len(m.params.entries):
        missing = sorted(set(m.params.entries) - {n for n, _, _ in tensors})
        raise CheckpointError(f"{path}: missing tensor {missing[0]!r}")
    return m
